use rand::Rng as _;

use crate::geom::{self, Vec3};
use crate::scenegen::{CameraPose, Ray};
use crate::{seed, Error, Result, Scalar};

/// Sample positions along one ray.
#[derive(Clone, Debug, PartialEq)]
pub struct RaySamples<T> {
    pub t: Vec<T>,
    /// `δ_i = t_{i+1} − t_i`, the last one `t_far − t_N`.
    pub delta: Vec<T>,
    pub points: Vec<Vec3<T>>,
}

/// Sample distances in `n` equal bins over `[t_near, t_far]`: bin midpoints, or one uniform
/// draw per bin when `jitter` is given. Returns `(t, δ)`.
pub fn sample_depths<T: Scalar>(t_near: T, t_far: T, n: usize, jitter: Option<&mut seed::Rng>) -> (Vec<T>, Vec<T>) {
    let width = (t_far - t_near) / T::from_usize_lossy(n);
    let t: Vec<T> = match jitter {
        None => (0..n)
            .map(|i| t_near + (T::from_usize_lossy(i) + T::lit(0.5)) * width)
            .collect(),
        Some(rng) => (0..n)
            .map(|i| t_near + (T::from_usize_lossy(i) + T::lit(rng.random::<f64>())) * width)
            .collect(),
    };
    let mut delta: Vec<T> = t.windows(2).map(|w| w[1] - w[0]).collect();
    delta.push(t_far - t[n - 1]);
    (t, delta)
}

pub fn sample_ray<T: Scalar>(ray: &Ray<T>, n: usize, stratified: bool, seed_value: u64) -> Result<RaySamples<T>> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one sample per ray".into()));
    }
    let mut rng = seed::rng(seed_value);
    let (t, delta) = sample_depths(ray.t_near, ray.t_far, n, stratified.then_some(&mut rng));
    let points = t.iter().map(|&ti| ray.at(ti)).collect();
    Ok(RaySamples { t, delta, points })
}

/// Derivatives of a generated ray's origin and direction with respect to the 12 pose entries
/// (`R` row-major, then `t`).
#[derive(Clone, Debug)]
pub struct RayJacobian<T> {
    rotation: [[T; 3]; 3],
    translation: Vec3<T>,
    /// Camera-frame back-projection `k`; the world direction is `Rᵀk / ‖Rᵀk‖`.
    k: Vec3<T>,
    u_norm: T,
    direction: Vec3<T>,
}

impl<T: Scalar> RayJacobian<T> {
    /// Vector–Jacobian product: pose gradient from gradients on the origin and direction.
    pub fn vjp(&self, g_origin: Vec3<T>, g_direction: Vec3<T>) -> [T; 12] {
        // d = u/|u| with u = Rᵀk: g_u = (I − d dᵀ) g_d / |u|
        let proj = geom::dot(self.direction, g_direction);
        let g_u: Vec3<T> =
            std::array::from_fn(|a| (g_direction[a] - self.direction[a] * proj) / self.u_norm);
        let mut out = [T::zero(); 12];
        // o = −Rᵀt:  ∂o_c/∂R_bc = −t_b,  ∂o/∂t = −R ᵀ
        // u = Rᵀk:   ∂u_c/∂R_bc = k_b
        for b in 0..3 {
            for c in 0..3 {
                out[3 * b + c] = -self.translation[b] * g_origin[c] + self.k[b] * g_u[c];
            }
        }
        let rg = geom::mat_vec(&self.rotation, g_origin);
        for b in 0..3 {
            out[9 + b] = -rg[b];
        }
        out
    }

    /// Dense `6 × 12` Jacobian; rows are origin xyz then direction xyz.
    pub fn matrix(&self) -> [[T; 12]; 6] {
        let mut m = [[T::zero(); 12]; 6];
        for (row, out) in m.iter_mut().enumerate() {
            let mut go = [T::zero(); 3];
            let mut gd = [T::zero(); 3];
            if row < 3 {
                go[row] = T::one();
            } else {
                gd[row - 3] = T::one();
            }
            *out = self.vjp(go, gd);
        }
        m
    }
}

/// Ray from the camera centre through the centre of pixel `(u, v)`, with its pose Jacobian.
pub fn generate_ray<T: Scalar>(
    camera: &CameraPose<T>,
    u: usize,
    v: usize,
    t_near: T,
    t_far: T,
) -> Result<(Ray<T>, RayJacobian<T>)> {
    if u >= camera.width || v >= camera.height {
        return Err(Error::InvalidArgument(format!(
            "pixel ({u}, {v}) outside {}x{}",
            camera.width, camera.height
        )));
    }
    let k = camera.pixel_direction_camera(u, v);
    let dir_raw = geom::mat_t_vec(&camera.rotation, k);
    let u_norm = geom::norm(dir_raw);
    let direction = geom::scale(dir_raw, T::one() / u_norm);
    let origin = geom::scale(geom::mat_t_vec(&camera.rotation, camera.translation), -T::one());
    let ray = Ray {
        origin,
        direction,
        t_near,
        t_far,
    };
    let jac = RayJacobian {
        rotation: camera.rotation,
        translation: camera.translation,
        k,
        u_norm,
        direction,
    };
    Ok((ray, jac))
}
