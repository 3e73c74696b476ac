use serde::{Deserialize, Serialize};

use crate::geom::{self, Mat3, Vec3};
use crate::{Error, Result, Scalar};

/// Pinhole camera with a world→camera rigid transform.
///
/// Camera frame: x right, y up, the camera looks down −z. Pixel `(u, v)` has its centre at
/// `(u + 0.5, v + 0.5)` with `v` growing upwards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + for<'a> Deserialize<'a>")]
pub struct CameraPose<T> {
    /// World→camera rotation, row-major.
    pub rotation: Mat3<T>,
    /// World→camera translation.
    pub translation: Vec3<T>,
    pub focal: T,
    pub principal_point: [T; 2],
    pub width: usize,
    pub height: usize,
}

/// Focal length and resolution shared by a camera rig; principal point at the image centre.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics<T> {
    pub focal: T,
    pub width: usize,
    pub height: usize,
}

impl<T: Scalar> Intrinsics<T> {
    /// Intrinsics from a horizontal field of view in radians.
    pub fn from_fov(fov_x: T, width: usize, height: usize) -> Self {
        let focal = T::lit(0.5) * T::from_usize_lossy(width) / (T::lit(0.5) * fov_x).tan();
        Intrinsics {
            focal,
            width,
            height,
        }
    }
}

/// Tolerance for unit-norm and orthonormality checks: 1e-9, widened to a few ulps for `f32`.
pub(crate) fn unit_tolerance<T: Scalar>() -> T {
    T::lit(1e-9).max(T::epsilon() * T::lit(16.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray<T> {
    pub origin: Vec3<T>,
    pub direction: Vec3<T>,
    pub t_near: T,
    pub t_far: T,
}

impl<T: Scalar> Ray<T> {
    pub fn new(origin: Vec3<T>, direction: Vec3<T>, t_near: T, t_far: T) -> Result<Self> {
        let n = geom::norm(direction);
        if (n - T::one()).abs() > unit_tolerance::<T>() {
            return Err(Error::InvalidArgument(format!(
                "ray direction must be unit length, got norm {n}"
            )));
        }
        if !(t_near > T::zero() && t_near < t_far) {
            return Err(Error::InvalidArgument(format!(
                "ray bounds must satisfy 0 < t_near < t_far, got [{t_near}, {t_far}]"
            )));
        }
        Ok(Ray {
            origin,
            direction,
            t_near,
            t_far,
        })
    }

    pub fn at(&self, t: T) -> Vec3<T> {
        geom::add(self.origin, geom::scale(self.direction, t))
    }
}

impl<T: Scalar> CameraPose<T> {
    pub fn new(
        rotation: Mat3<T>,
        translation: Vec3<T>,
        focal: T,
        principal_point: [T; 2],
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let cam = CameraPose {
            rotation,
            translation,
            focal,
            principal_point,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        let err = geom::orthonormality_error(&self.rotation);
        if !(err <= unit_tolerance::<T>()) {
            return Err(Error::InvalidCamera(format!(
                "rotation is not orthonormal (max |RᵀR − I| = {err})"
            )));
        }
        if !(self.focal > T::zero()) {
            return Err(Error::InvalidCamera(format!(
                "focal length must be positive, got {}",
                self.focal
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera(format!(
                "resolution must be at least 1x1, got {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`, with `up` giving the image's upward direction.
    pub fn look_at(eye: Vec3<T>, target: Vec3<T>, up: Vec3<T>, intr: Intrinsics<T>) -> Result<Self> {
        let forward = geom::sub(target, eye);
        if geom::norm(forward) <= T::epsilon() {
            return Err(Error::InvalidCamera("eye coincides with target".into()));
        }
        let forward = geom::normalize(forward);
        let mut right = geom::cross(forward, up);
        if geom::norm(right) < T::lit(1e-9) {
            // looking straight along `up`; any perpendicular will do
            let alt = if forward[0].abs() < T::lit(0.9) {
                [T::one(), T::zero(), T::zero()]
            } else {
                [T::zero(), T::one(), T::zero()]
            };
            right = geom::cross(forward, alt);
        }
        let right = geom::normalize(right);
        let cam_up = geom::cross(right, forward);
        let back = geom::scale(forward, -T::one());
        let rotation = [right, cam_up, back];
        let translation = geom::scale(geom::mat_vec(&rotation, eye), -T::one());
        let half = T::lit(0.5);
        Self::new(
            rotation,
            translation,
            intr.focal,
            [
                half * T::from_usize_lossy(intr.width),
                half * T::from_usize_lossy(intr.height),
            ],
            intr.width,
            intr.height,
        )
    }

    /// Camera centre in world coordinates, `−Rᵀt`.
    pub fn center(&self) -> Vec3<T> {
        geom::scale(geom::mat_t_vec(&self.rotation, self.translation), -T::one())
    }

    /// Unit viewing direction (optical axis) in world coordinates.
    pub fn forward(&self) -> Vec3<T> {
        geom::scale(self.rotation[2], -T::one())
    }

    pub fn world_to_camera(&self, p: Vec3<T>) -> Vec3<T> {
        geom::add(geom::mat_vec(&self.rotation, p), self.translation)
    }

    /// Un-normalized camera-frame direction through the centre of pixel `(u, v)`.
    pub fn pixel_direction_camera(&self, u: usize, v: usize) -> Vec3<T> {
        let half = T::lit(0.5);
        [
            (T::from_usize_lossy(u) + half - self.principal_point[0]) / self.focal,
            (T::from_usize_lossy(v) + half - self.principal_point[1]) / self.focal,
            -T::one(),
        ]
    }

    /// World-space ray through the centre of pixel `(u, v)`.
    pub fn pixel_ray(&self, u: usize, v: usize, t_near: T, t_far: T) -> Ray<T> {
        let d = geom::mat_t_vec(&self.rotation, self.pixel_direction_camera(u, v));
        Ray {
            origin: self.center(),
            direction: geom::normalize(d),
            t_near,
            t_far,
        }
    }

    /// 4×4 camera→world matrix (row-major), the layout used by `transforms.json`.
    pub fn camera_to_world(&self) -> [[T; 4]; 4] {
        let rt = geom::transpose(&self.rotation);
        let c = self.center();
        let (z, o) = (T::zero(), T::one());
        [
            [rt[0][0], rt[0][1], rt[0][2], c[0]],
            [rt[1][0], rt[1][1], rt[1][2], c[1]],
            [rt[2][0], rt[2][1], rt[2][2], c[2]],
            [z, z, z, o],
        ]
    }

    /// Pose entries in the order used for pose gradients: `R` row-major, then `t`.
    pub fn pose_params(&self) -> [T; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2], t[0],
            t[1], t[2],
        ]
    }

    /// Copy with the 12 pose entries replaced, without re-validating orthonormality.
    pub fn with_pose_params(&self, p: &[T; 12]) -> Self {
        let mut cam = self.clone();
        cam.rotation = [[p[0], p[1], p[2]], [p[3], p[4], p[5]], [p[6], p[7], p[8]]];
        cam.translation = [p[9], p[10], p[11]];
        cam
    }

    pub fn convert<U: Scalar>(&self) -> CameraPose<U> {
        let c = |x: T| U::lit(x.as_f64());
        CameraPose {
            rotation: self.rotation.map(|row| row.map(c)),
            translation: self.translation.map(c),
            focal: c(self.focal),
            principal_point: self.principal_point.map(c),
            width: self.width,
            height: self.height,
        }
    }
}

/// Shifts the camera centre by `delta` along its own optical axis; positive values move it
/// backwards (zoom-out). Rotation and intrinsics are unchanged.
pub fn perturb_pose_z<T: Scalar>(pose: &CameraPose<T>, delta: T) -> CameraPose<T> {
    // centre' = centre + delta * backward, so t' = -R centre' = t - delta * e_z
    let mut out = pose.clone();
    out.translation[2] -= delta;
    out
}

/// `n` cameras evenly spaced in azimuth on a circle of `radius` around `look_at`, at the given
/// elevation (radians) above the world xy-plane, all looking at `look_at` with +z up.
pub fn make_pose_ring<T: Scalar>(
    n: usize,
    radius: T,
    elevation: T,
    look_at: Vec3<T>,
    intr: Intrinsics<T>,
) -> Result<Vec<CameraPose<T>>> {
    if n == 0 {
        return Err(Error::InvalidArgument("pose ring needs at least one camera".into()));
    }
    if !(radius > T::zero()) {
        return Err(Error::InvalidArgument(format!("ring radius must be positive, got {radius}")));
    }
    let up = [T::zero(), T::zero(), T::one()];
    (0..n)
        .map(|k| {
            let az = T::lit(2.0 * std::f64::consts::PI) * T::from_usize_lossy(k) / T::from_usize_lossy(n);
            let dir = [
                elevation.cos() * az.cos(),
                elevation.cos() * az.sin(),
                elevation.sin(),
            ];
            let eye = geom::add(look_at, geom::scale(dir, radius));
            CameraPose::look_at(eye, look_at, up, intr)
        })
        .collect()
}
