use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::geom::{self, Mat3, Vec3};
use crate::scenegen::{CameraPose, SplitTag, ViewDataset};
use crate::{seed, Error, Result, Scalar};

/// Near-plane depth below which Gaussians are culled.
pub const Z_MIN: f64 = 0.01;
/// Isotropic floor added to every projected covariance, in px².
pub const COV_EPS: f64 = 0.3;
pub const ALPHA_MAX: f64 = 0.999;

/// One anisotropic Gaussian; scales are stored as logs and opacity/β as raw pre-activations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + for<'a> Deserialize<'a>")]
pub struct Gaussian3D<T> {
    pub mean: Vec3<T>,
    pub log_scale: Vec3<T>,
    /// Quaternion `(w, x, y, z)`; normalized wherever it is used.
    pub rotation: [T; 4],
    pub opacity_raw: T,
    pub color: [T; 3],
    pub beta_raw: T,
}

impl<T: Scalar> Gaussian3D<T> {
    pub fn zeros() -> Self {
        Gaussian3D {
            mean: [T::zero(); 3],
            log_scale: [T::zero(); 3],
            rotation: [T::zero(); 4],
            opacity_raw: T::zero(),
            color: [T::zero(); 3],
            beta_raw: T::zero(),
        }
    }

    pub fn isotropic(mean: Vec3<T>, scale: T, opacity: T, color: [T; 3], beta_raw: T) -> Self {
        Gaussian3D {
            mean,
            log_scale: [scale.ln(); 3],
            rotation: [T::one(), T::zero(), T::zero(), T::zero()],
            opacity_raw: opacity.logit(),
            color,
            beta_raw,
        }
    }

    pub fn scale(&self) -> Vec3<T> {
        self.log_scale.map(T::exp)
    }

    pub fn max_scale(&self) -> T {
        self.scale().into_iter().fold(T::zero(), T::max)
    }

    pub fn opacity(&self) -> T {
        self.opacity_raw.sigmoid()
    }

    pub fn beta(&self, floor: T) -> T {
        self.beta_raw.softplus() + floor
    }

    /// `Σ = R diag(s²) Rᵀ`.
    pub fn covariance(&self) -> Mat3<T> {
        let r = geom::quat_to_mat(self.rotation);
        let s2 = self.scale().map(|s| s * s);
        std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| r[i][k] * s2[k] * r[j][k]).sum()))
    }

    /// The 15 trainable scalars in a fixed order, for optimizers and gradient checks.
    pub fn param_array(&self) -> [T; 15] {
        let g = self;
        [
            g.mean[0], g.mean[1], g.mean[2], g.log_scale[0], g.log_scale[1], g.log_scale[2], g.rotation[0],
            g.rotation[1], g.rotation[2], g.rotation[3], g.opacity_raw, g.color[0], g.color[1], g.color[2],
            g.beta_raw,
        ]
    }

    pub fn from_param_array(p: &[T; 15]) -> Self {
        Gaussian3D {
            mean: [p[0], p[1], p[2]],
            log_scale: [p[3], p[4], p[5]],
            rotation: [p[6], p[7], p[8], p[9]],
            opacity_raw: p[10],
            color: [p[11], p[12], p[13]],
            beta_raw: p[14],
        }
    }
}

/// A Gaussian after projection into one camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectedGaussian<T> {
    /// Pixel coordinates (same convention as ray generation: pixel `(u, v)` spans
    /// `[u, u+1) × [v, v+1)`).
    pub mean2d: [T; 2],
    /// `J W Σ Wᵀ Jᵀ`, without the anti-aliasing floor.
    pub cov2d: [[T; 2]; 2],
    pub z_depth: T,
    pub index: usize,
}

/// Camera-frame point, camera depth `z = −p_z`, and the projection Jacobian `J` (2×3).
pub(crate) fn project_point<T: Scalar>(camera: &CameraPose<T>, mean: Vec3<T>) -> (Vec3<T>, T, [[T; 3]; 2]) {
    let p = camera.world_to_camera(mean);
    let z = -p[2];
    let f = camera.focal;
    let j = [
        [f / z, T::zero(), f * p[0] / (z * z)],
        [T::zero(), f / z, f * p[1] / (z * z)],
    ];
    (p, z, j)
}

/// Perspective projection of one Gaussian; `None` when its centre is closer than [`Z_MIN`].
pub fn project_gaussian<T: Scalar>(g: &Gaussian3D<T>, index: usize, camera: &CameraPose<T>) -> Option<ProjectedGaussian<T>> {
    let (p, z, j) = project_point(camera, g.mean);
    if !(z > T::lit(Z_MIN)) {
        return None;
    }
    let w = &camera.rotation;
    let sigma = g.covariance();
    // M = W Σ Wᵀ, then Σ′ = J M Jᵀ
    let ws = geom::mat_mul(w, &sigma);
    let m = geom::mat_mul(&ws, &geom::transpose(w));
    let jm: [[T; 3]; 2] = std::array::from_fn(|a| std::array::from_fn(|c| (0..3).map(|b| j[a][b] * m[b][c]).sum()));
    let cov2d = std::array::from_fn(|a| std::array::from_fn(|c| (0..3).map(|b| jm[a][b] * j[c][b]).sum()));
    Some(ProjectedGaussian {
        mean2d: [
            camera.principal_point[0] + camera.focal * p[0] / z,
            camera.principal_point[1] + camera.focal * p[1] / z,
        ],
        cov2d,
        z_depth: z,
        index,
    })
}

/// `(Σ′ + εI)⁻¹` as `[a, b, c]` for the symmetric matrix `[[a, b], [b, c]]`.
pub(crate) fn conic<T: Scalar>(cov2d: &[[T; 2]; 2]) -> [T; 3] {
    let eps = T::lit(COV_EPS);
    let (a, b, c) = (cov2d[0][0] + eps, cov2d[0][1], cov2d[1][1] + eps);
    let det = a * c - b * b;
    [c / det, -b / det, a / det]
}

/// `o · exp(−½ (p−μ′)ᵀ (Σ′+εI)⁻¹ (p−μ′))`, clamped to at most 0.999.
pub fn splat_alpha<T: Scalar>(pg: &ProjectedGaussian<T>, opacity: T, pixel: [T; 2]) -> T {
    let q = conic(&pg.cov2d);
    let dx = pixel[0] - pg.mean2d[0];
    let dy = pixel[1] - pg.mean2d[1];
    let power = -T::lit(0.5) * (q[0] * dx * dx + T::lit(2.0) * q[1] * dx * dy + q[2] * dy * dy);
    (opacity * power.exp()).min(T::lit(ALPHA_MAX))
}

/// A set of Gaussians plus the positional-gradient statistics used by density control.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianCloud<T> {
    pub gaussians: Vec<Gaussian3D<T>>,
    pub beta_floor: T,
    /// Sum of per-view screen-space gradient norms since the last densification.
    pub grad_accum: Vec<T>,
    /// Number of views in which each Gaussian was visible since the last densification.
    pub grad_count: Vec<u32>,
}

impl<T: Scalar> GaussianCloud<T> {
    pub fn new(gaussians: Vec<Gaussian3D<T>>, beta_floor: T) -> Self {
        let n = gaussians.len();
        GaussianCloud {
            gaussians,
            beta_floor,
            grad_accum: vec![T::zero(); n],
            grad_count: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn reset_stats(&mut self) {
        self.grad_accum = vec![T::zero(); self.len()];
        self.grad_count = vec![0; self.len()];
    }

    /// Adds one view's screen-space gradient norms for the Gaussians visible in it.
    pub fn accumulate_stats(&mut self, norms: &[T], visible: &[bool]) {
        for i in 0..self.len() {
            if visible[i] {
                self.grad_accum[i] += norms[i];
                self.grad_count[i] += 1;
            }
        }
    }

    /// Isotropic Gaussians at `points` with scale equal to the mean nearest-neighbour distance.
    pub fn from_points(points: &[Vec3<T>], colors: &[[T; 3]], opacity: T, beta_init: T, beta_floor: T) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if colors.len() != points.len() {
            return Err(Error::ShapeMismatch("one colour per point required".into()));
        }
        let mut total = T::zero();
        for (i, p) in points.iter().enumerate() {
            let mut best = T::infinity();
            for (j, q) in points.iter().enumerate() {
                if i != j {
                    best = best.min(geom::norm(geom::sub(*p, *q)));
                }
            }
            if best.is_finite() {
                total += best;
            }
        }
        let mut scale = total / T::from_usize_lossy(points.len());
        if !(scale > T::zero()) {
            scale = T::lit(0.01);
        }
        let beta_raw = (beta_init - beta_floor).softplus_inv();
        let gaussians = points
            .iter()
            .zip(colors)
            .map(|(&p, &c)| Gaussian3D::isotropic(p, scale, opacity, c, beta_raw))
            .collect();
        Ok(GaussianCloud::new(gaussians, beta_floor))
    }

    /// Samples `count` surface points from the depth maps of the train views (colour from the
    /// view's own image) and builds a cloud from them.
    pub fn init_from_views(
        dataset: &ViewDataset<T>,
        count: usize,
        opacity: T,
        beta_init: T,
        beta_floor: T,
        seed_value: u64,
    ) -> Result<Self> {
        let mut candidates = Vec::new();
        for (vi, view) in dataset.views.iter().enumerate() {
            if view.split != SplitTag::Train {
                continue;
            }
            let (Some(depth), Some(mask)) = (&view.depth, &view.depth_mask) else {
                continue;
            };
            for v in 0..view.camera.height {
                for u in 0..view.camera.width {
                    if mask[v * view.camera.width + u] && depth.get(u, v, 0).is_finite() {
                        candidates.push((vi, u, v));
                    }
                }
            }
        }
        if candidates.is_empty() {
            return Err(Error::EmptyDataset("no train view has surface depth to initialise from".into()));
        }
        let mut rng = seed::rng(seed_value);
        candidates.shuffle(&mut rng);
        candidates.truncate(count.max(1));
        candidates.sort_unstable();
        let mut points = Vec::with_capacity(candidates.len());
        let mut colors = Vec::with_capacity(candidates.len());
        for (vi, u, v) in candidates {
            let view = &dataset.views[vi];
            let ray = view.camera.pixel_ray(u, v, T::lit(1e-6), T::one());
            let depth = view.depth.as_ref().expect("checked").get(u, v, 0);
            points.push(ray.at(depth));
            let px = view.rgb.pixel(u, v);
            colors.push([px[0], px[1], px[2]]);
        }
        Self::from_points(&points, &colors, opacity, beta_init, beta_floor)
    }

    pub fn convert<U: Scalar>(&self) -> GaussianCloud<U> {
        let c = |x: T| U::lit(x.as_f64());
        GaussianCloud {
            gaussians: self
                .gaussians
                .iter()
                .map(|g| Gaussian3D {
                    mean: g.mean.map(c),
                    log_scale: g.log_scale.map(c),
                    rotation: g.rotation.map(c),
                    opacity_raw: c(g.opacity_raw),
                    color: g.color.map(c),
                    beta_raw: c(g.beta_raw),
                })
                .collect(),
            beta_floor: c(self.beta_floor),
            grad_accum: self.grad_accum.iter().map(|&v| c(v)).collect(),
            grad_count: self.grad_count.clone(),
        }
    }
}

pub const CLOUD_FORMAT: &str = "radunc-cloud";
pub const CLOUD_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CloudRecord {
    format: String,
    version: u32,
    beta_floor: f64,
    gaussians: Vec<Gaussian3D<f64>>,
}

impl<T: Scalar> GaussianCloud<T> {
    pub fn to_json(&self) -> String {
        let c = self.convert::<f64>();
        let rec = CloudRecord {
            format: CLOUD_FORMAT.into(),
            version: CLOUD_VERSION,
            beta_floor: c.beta_floor,
            gaussians: c.gaussians,
        };
        serde_json::to_string(&rec).expect("cloud serializes")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let rec: CloudRecord = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if rec.format != CLOUD_FORMAT || rec.version != CLOUD_VERSION {
            return Err(format!("unsupported checkpoint {} v{}", rec.format, rec.version));
        }
        if rec.gaussians.is_empty() {
            return Err("cloud has no gaussians".into());
        }
        Ok(GaussianCloud::new(rec.gaussians, rec.beta_floor).convert())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|reason| Error::malformed(path, reason))
    }

    /// ASCII PLY with positions and 8-bit colours.
    pub fn save_ply(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut s = String::new();
        let _ = write!(
            s,
            "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n\
             property uchar red\nproperty uchar green\nproperty uchar blue\nproperty float opacity\nend_header\n",
            self.len()
        );
        for g in &self.gaussians {
            let c = g.color.map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8);
            let _ = writeln!(
                s,
                "{} {} {} {} {} {} {}",
                g.mean[0].as_f64(),
                g.mean[1].as_f64(),
                g.mean[2].as_f64(),
                c[0],
                c[1],
                c[2],
                g.opacity().as_f64()
            );
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}
