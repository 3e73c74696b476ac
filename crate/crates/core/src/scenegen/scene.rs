use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::camera::{CameraPose, Ray};
use crate::geom::{self, Vec3};
use crate::image::Image;
use crate::{seed, Error, Result, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape<T> {
    Sphere { radius: T },
    Box { half_extents: Vec3<T> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive<T> {
    pub shape: Shape<T>,
    pub center: Vec3<T>,
    /// Constant diffuse RGB in `[0, 1]`.
    pub albedo: Vec3<T>,
}

/// Constant-albedo spheres and axis-aligned boxes in front of a uniform background.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneModel<T> {
    pub primitives: Vec<Primitive<T>>,
    pub background: Vec3<T>,
}

/// Rendered ground truth: colour, ray distance to the first hit, and which pixels hit anything.
/// Missed pixels carry depth 0 and `mask = false`.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth<T> {
    pub rgb: Image<T>,
    pub depth: Image<T>,
    pub mask: Vec<bool>,
}

const HIT_EPS: f64 = 1e-9;

impl<T: Scalar> Primitive<T> {
    pub fn validate(&self) -> Result<()> {
        let ok_size = match &self.shape {
            Shape::Sphere { radius } => *radius > T::zero(),
            Shape::Box { half_extents } => half_extents.iter().all(|&h| h > T::zero()),
        };
        if !ok_size {
            return Err(Error::InvalidArgument("primitive sizes must be positive".into()));
        }
        if !self
            .albedo
            .iter()
            .all(|&a| a >= T::zero() && a <= T::one())
        {
            return Err(Error::InvalidArgument("albedo must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Distance along `ray` to the first intersection in front of the origin.
    pub fn intersect(&self, origin: Vec3<T>, dir: Vec3<T>) -> Option<T> {
        let eps = T::lit(HIT_EPS);
        match &self.shape {
            Shape::Sphere { radius } => {
                let oc = geom::sub(origin, self.center);
                let b = geom::dot(oc, dir);
                let c = geom::dot(oc, oc) - *radius * *radius;
                let disc = b * b - c;
                if disc < T::zero() {
                    return None;
                }
                let s = disc.sqrt();
                let t0 = -b - s;
                let t1 = -b + s;
                if t0 > eps {
                    Some(t0)
                } else if t1 > eps {
                    Some(t1)
                } else {
                    None
                }
            }
            Shape::Box { half_extents } => {
                let mut t_enter = T::neg_infinity();
                let mut t_exit = T::infinity();
                for a in 0..3 {
                    let lo = self.center[a] - half_extents[a];
                    let hi = self.center[a] + half_extents[a];
                    if dir[a].abs() < T::lit(1e-15) {
                        if origin[a] < lo || origin[a] > hi {
                            return None;
                        }
                        continue;
                    }
                    let inv = T::one() / dir[a];
                    let (mut t0, mut t1) = ((lo - origin[a]) * inv, (hi - origin[a]) * inv);
                    if t0 > t1 {
                        std::mem::swap(&mut t0, &mut t1);
                    }
                    t_enter = t_enter.max(t0);
                    t_exit = t_exit.min(t1);
                }
                if t_enter > t_exit {
                    None
                } else if t_enter > eps {
                    Some(t_enter)
                } else if t_exit > eps {
                    Some(t_exit)
                } else {
                    None
                }
            }
        }
    }
}

impl<T: Scalar> SceneModel<T> {
    pub fn new(primitives: Vec<Primitive<T>>, background: Vec3<T>) -> Result<Self> {
        let scene = SceneModel {
            primitives,
            background,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        self.primitives.iter().try_for_each(Primitive::validate)?;
        if !self
            .background
            .iter()
            .all(|&a| a >= T::zero() && a <= T::one())
        {
            return Err(Error::InvalidArgument("background must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Nearest hit `(t, primitive index)`.
    pub fn nearest_hit(&self, ray: &Ray<T>) -> Option<(T, usize)> {
        let mut best: Option<(T, usize)> = None;
        for (i, p) in self.primitives.iter().enumerate() {
            if let Some(t) = p.intersect(ray.origin, ray.direction) {
                if best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, i));
                }
            }
        }
        best
    }

    /// Radius of a sphere around the origin containing every primitive.
    pub fn extent(&self) -> T {
        self.primitives
            .iter()
            .map(|p| {
                let size = match &p.shape {
                    Shape::Sphere { radius } => *radius,
                    Shape::Box { half_extents } => geom::norm(*half_extents),
                };
                geom::norm(p.center) + size
            })
            .fold(T::zero(), T::max)
    }

    /// One sphere at the origin.
    pub fn single_sphere(radius: T, albedo: Vec3<T>, background: Vec3<T>) -> Self {
        SceneModel {
            primitives: vec![Primitive {
                shape: Shape::Sphere { radius },
                center: [T::zero(); 3],
                albedo,
            }],
            background,
        }
    }

    /// A small fixed arrangement of three coloured objects: a red sphere, a green box and a
    /// blue sphere around the origin, on a white background.
    pub fn tabletop() -> Self {
        let l = T::lit;
        SceneModel {
            primitives: vec![
                Primitive {
                    shape: Shape::Sphere { radius: l(0.45) },
                    center: [l(0.35), l(0.1), l(0.0)],
                    albedo: [l(0.85), l(0.2), l(0.15)],
                },
                Primitive {
                    shape: Shape::Box {
                        half_extents: [l(0.3), l(0.3), l(0.3)],
                    },
                    center: [l(-0.4), l(-0.3), l(-0.1)],
                    albedo: [l(0.2), l(0.7), l(0.3)],
                },
                Primitive {
                    shape: Shape::Sphere { radius: l(0.3) },
                    center: [l(-0.15), l(0.5), l(0.2)],
                    albedo: [l(0.15), l(0.3), l(0.85)],
                },
            ],
            background: [T::one(); 3],
        }
    }

    /// `n` random primitives inside the unit ball with random albedos.
    pub fn random(n: usize, seed_value: u64) -> Self {
        let mut rng = seed::rng(seed_value);
        let mut u = |lo: f64, hi: f64| T::lit(rng.random_range(lo..hi));
        let primitives = (0..n)
            .map(|_| {
                let center = [u(-0.6, 0.6), u(-0.6, 0.6), u(-0.4, 0.4)];
                let albedo = [u(0.05, 0.95), u(0.05, 0.95), u(0.05, 0.95)];
                let shape = if u(0.0, 1.0) < T::lit(0.5) {
                    Shape::Sphere { radius: u(0.15, 0.4) }
                } else {
                    Shape::Box {
                        half_extents: [u(0.1, 0.3), u(0.1, 0.3), u(0.1, 0.3)],
                    }
                };
                Primitive {
                    shape,
                    center,
                    albedo,
                }
            })
            .collect();
        SceneModel {
            primitives,
            background: [T::one(); 3],
        }
    }
}

/// Renders the scene analytically: each pixel takes the albedo of the nearest primitive hit
/// by its centre ray, or the background.
pub fn trace_ground_truth<T: Scalar>(scene: &SceneModel<T>, camera: &CameraPose<T>) -> GroundTruth<T> {
    let (w, h) = (camera.width, camera.height);
    let mut rgb = Image::zeros(w, h, 3);
    let mut depth = Image::zeros(w, h, 1);
    let mut mask = vec![false; w * h];
    for v in 0..h {
        for u in 0..w {
            let ray = camera.pixel_ray(u, v, T::lit(HIT_EPS), T::infinity());
            let px = rgb.pixel_mut(u, v);
            match scene.nearest_hit(&ray) {
                Some((t, i)) => {
                    px.copy_from_slice(&scene.primitives[i].albedo);
                    depth.set(u, v, 0, t);
                    mask[v * w + u] = true;
                }
                None => px.copy_from_slice(&scene.background),
            }
        }
    }
    GroundTruth { rgb, depth, mask }
}

/// Converts ray distances to camera z-depth (distance along the optical axis).
pub fn distance_to_z_depth<T: Scalar>(camera: &CameraPose<T>, depth: &Image<T>) -> Image<T> {
    let fwd = camera.forward();
    Image::from_fn(depth.width(), depth.height(), 1, |u, v, px| {
        let ray = camera.pixel_ray(u, v, T::one(), T::lit(2.0));
        px[0] = depth.get(u, v, 0) * geom::dot(ray.direction, fwd);
    })
}
