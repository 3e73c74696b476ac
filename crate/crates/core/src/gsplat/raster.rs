use serde::{Deserialize, Serialize};

use super::gaussian::{conic, project_point, project_gaussian, Gaussian3D, GaussianCloud, ProjectedGaussian, ALPHA_MAX, COV_EPS};
use crate::geom::{self, Mat3};
use crate::scenegen::CameraPose;
use crate::volrend::{composite_backward, composite_forward, PixelGrad, RenderOutput, RenderedPixel, SampleGradsMut, VarianceWeighting};
use crate::{Error, Result, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RasterConfig {
    pub background: [f64; 3],
    pub weighting: VarianceWeighting,
    /// Contributions with smaller α are skipped.
    pub alpha_min: f64,
    /// Footprint half-width in standard deviations of the regularized 2-D covariance.
    pub extent_sigmas: f64,
}

impl Default for RasterConfig {
    fn default() -> Self {
        RasterConfig {
            background: [1.0; 3],
            weighting: VarianceWeighting::Linear,
            alpha_min: 1.0 / 255.0,
            extent_sigmas: 3.5,
        }
    }
}

/// Forward state of one rasterization, kept for the reverse pass.
#[derive(Clone, Debug)]
pub struct Raster<T> {
    pub output: RenderOutput<T>,
    pub pixels: Vec<RenderedPixel<T>>,
    projected: Vec<Option<ProjectedGaussian<T>>>,
    /// Per pixel, the contributing Gaussians front to back.
    lists: Vec<Vec<u32>>,
}

impl<T: Scalar> Raster<T> {
    /// Number of Gaussians blended into pixel `i` (row-major, `v * width + u`).
    pub fn contributors(&self, i: usize) -> &[u32] {
        &self.lists[i]
    }
}

/// Gradients of a rasterization with respect to every Gaussian's parameters, plus the
/// screen-space statistics used by density control.
#[derive(Clone, Debug)]
pub struct CloudGradients<T> {
    pub gaussians: Vec<Gaussian3D<T>>,
    /// `‖∂L/∂μ′‖` in normalized device coordinates.
    pub mean2d_ndc_norm: Vec<T>,
    /// Whether the Gaussian contributed to at least one pixel.
    pub visible: Vec<bool>,
}

fn pixel_center<T: Scalar>(u: usize, v: usize) -> [T; 2] {
    [T::from_usize_lossy(u) + T::lit(0.5), T::from_usize_lossy(v) + T::lit(0.5)]
}

/// Depth-sorted alpha blending of the cloud into `camera` (global sort by depth, ties by index).
pub fn rasterize<T: Scalar>(cloud: &GaussianCloud<T>, camera: &CameraPose<T>, cfg: &RasterConfig) -> Result<Raster<T>> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let (w, h) = (camera.width, camera.height);
    let projected: Vec<Option<ProjectedGaussian<T>>> = cloud
        .gaussians
        .iter()
        .enumerate()
        .map(|(i, g)| project_gaussian(g, i, camera))
        .collect();
    let mut order: Vec<usize> = (0..cloud.len()).filter(|&i| projected[i].is_some()).collect();
    order.sort_by(|&a, &b| {
        let (za, zb) = (projected[a].unwrap().z_depth, projected[b].unwrap().z_depth);
        za.partial_cmp(&zb).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });

    let alpha_min = T::lit(cfg.alpha_min);
    let mut lists: Vec<Vec<u32>> = vec![Vec::new(); w * h];
    for &gi in &order {
        let pg = projected[gi].as_ref().expect("filtered");
        let opacity = cloud.gaussians[gi].opacity();
        let Some((u0, u1, v0, v1)) = footprint(pg, w, h, cfg.extent_sigmas) else {
            continue;
        };
        for v in v0..v1 {
            for u in u0..u1 {
                let a = super::gaussian::splat_alpha(pg, opacity, pixel_center(u, v));
                if a >= alpha_min && a > T::zero() {
                    lists[v * w + u].push(gi as u32);
                }
            }
        }
    }

    let bg = cfg.background.map(T::lit);
    let mut pixels = Vec::with_capacity(w * h);
    let mut buf = SampleBuf::default();
    for v in 0..h {
        for u in 0..w {
            buf.fill(cloud, &projected, &lists[v * w + u], pixel_center(u, v));
            pixels.push(composite_forward(&buf.alpha, &buf.color, Some(&buf.beta), &buf.z, bg, cfg.weighting));
        }
    }
    Ok(Raster {
        output: RenderOutput::from_pixels(w, h, &pixels),
        pixels,
        projected,
        lists,
    })
}

/// Pixel bounds `[u0, u1) × [v0, v1)` of a projected Gaussian's footprint.
fn footprint<T: Scalar>(pg: &ProjectedGaussian<T>, w: usize, h: usize, sigmas: f64) -> Option<(usize, usize, usize, usize)> {
    let eps = T::lit(COV_EPS);
    let (a, b, c) = (pg.cov2d[0][0] + eps, pg.cov2d[0][1], pg.cov2d[1][1] + eps);
    let mid = T::lit(0.5) * (a + c);
    let lambda = mid + (mid * mid - (a * c - b * b)).max(T::zero()).sqrt();
    let r = T::lit(sigmas) * lambda.sqrt();
    let lo = |m: T| (m - r - T::lit(0.5)).floor().max(T::zero()).to_f64().unwrap_or(0.0) as usize;
    let hi = |m: T, n: usize| ((m + r - T::lit(0.5)).ceil().to_f64().unwrap_or(-1.0) + 1.0).clamp(0.0, n as f64) as usize;
    let (u0, u1) = (lo(pg.mean2d[0]), hi(pg.mean2d[0], w));
    let (v0, v1) = (lo(pg.mean2d[1]), hi(pg.mean2d[1], h));
    (u0 < u1 && v0 < v1).then_some((u0, u1, v0, v1))
}

#[derive(Default)]
struct SampleBuf<T> {
    alpha: Vec<T>,
    color: Vec<T>,
    beta: Vec<T>,
    z: Vec<T>,
}

impl<T: Scalar> SampleBuf<T> {
    fn fill(&mut self, cloud: &GaussianCloud<T>, projected: &[Option<ProjectedGaussian<T>>], list: &[u32], px: [T; 2]) {
        self.alpha.clear();
        self.color.clear();
        self.beta.clear();
        self.z.clear();
        for &gi in list {
            let g = &cloud.gaussians[gi as usize];
            let pg = projected[gi as usize].as_ref().expect("listed gaussians are projected");
            self.alpha.push(super::gaussian::splat_alpha(pg, g.opacity(), px));
            self.color.extend_from_slice(&g.color);
            self.beta.push(g.beta(cloud.beta_floor));
            self.z.push(pg.z_depth);
        }
    }
}

/// Per-Gaussian accumulators in screen space.
#[derive(Clone, Copy, Default)]
struct ScreenGrad<T> {
    mean2d: [T; 2],
    conic: [T; 3],
    opacity: T,
    color: [T; 3],
    beta: T,
    z: T,
}

/// Exact reverse pass of [`rasterize`] for per-pixel upstream gradients (row-major).
pub fn rasterize_backward<T: Scalar>(
    cloud: &GaussianCloud<T>,
    camera: &CameraPose<T>,
    cfg: &RasterConfig,
    raster: &Raster<T>,
    upstream: &[PixelGrad<T>],
) -> Result<CloudGradients<T>> {
    let (w, h) = (camera.width, camera.height);
    if upstream.len() != w * h || raster.pixels.len() != w * h || raster.projected.len() != cloud.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} upstream gradients for a {w}x{h} render of {} gaussians",
            upstream.len(),
            cloud.len()
        )));
    }
    let n = cloud.len();
    let mut acc = vec![ScreenGrad::<T>::default(); n];
    let mut visible = vec![false; n];
    let bg = cfg.background.map(T::lit);
    let mut buf = SampleBuf::default();
    let (mut ga, mut gc, mut gb, mut gz) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let half = T::lit(0.5);

    for v in 0..h {
        for u in 0..w {
            let pix = v * w + u;
            let list = &raster.lists[pix];
            if list.is_empty() {
                continue;
            }
            let px = pixel_center::<T>(u, v);
            buf.fill(cloud, &raster.projected, list, px);
            let m = list.len();
            ga.resize(m, T::zero());
            gc.resize(3 * m, T::zero());
            gb.resize(m, T::zero());
            gz.resize(m, T::zero());
            composite_backward(
                &buf.alpha,
                &buf.color,
                Some(&buf.beta),
                &buf.z,
                bg,
                cfg.weighting,
                &raster.pixels[pix],
                &upstream[pix],
                SampleGradsMut {
                    alpha: &mut ga,
                    color: &mut gc,
                    beta: Some(&mut gb),
                    t: Some(&mut gz),
                },
            );
            for (k, &gi) in list.iter().enumerate() {
                let gi = gi as usize;
                visible[gi] = true;
                let a = &mut acc[gi];
                for c in 0..3 {
                    a.color[c] += gc[3 * k + c];
                }
                a.beta += gb[k];
                a.z += gz[k];

                let g = &cloud.gaussians[gi];
                let pg = raster.projected[gi].as_ref().expect("listed");
                let q = conic(&pg.cov2d);
                let dx = px[0] - pg.mean2d[0];
                let dy = px[1] - pg.mean2d[1];
                let power = -half * (q[0] * dx * dx + T::lit(2.0) * q[1] * dx * dy + q[2] * dy * dy);
                let falloff = power.exp();
                let opacity = g.opacity();
                if opacity * falloff > T::lit(ALPHA_MAX) {
                    continue; // clamped: α does not depend on the parameters here
                }
                let alpha = opacity * falloff;
                a.opacity += ga[k] * falloff;
                let g_power = ga[k] * alpha;
                a.mean2d[0] += g_power * (q[0] * dx + q[1] * dy);
                a.mean2d[1] += g_power * (q[1] * dx + q[2] * dy);
                a.conic[0] -= g_power * half * dx * dx;
                a.conic[1] -= g_power * dx * dy;
                a.conic[2] -= g_power * half * dy * dy;
            }
        }
    }

    let mut grads = vec![Gaussian3D::zeros(); n];
    let mut ndc = vec![T::zero(); n];
    for i in 0..n {
        if !visible[i] {
            continue;
        }
        grads[i] = gaussian_grad(&cloud.gaussians[i], camera, &acc[i], cloud.beta_floor);
        let sx = acc[i].mean2d[0] * T::from_usize_lossy(w) * half;
        let sy = acc[i].mean2d[1] * T::from_usize_lossy(h) * half;
        ndc[i] = (sx * sx + sy * sy).sqrt();
    }
    Ok(CloudGradients {
        gaussians: grads,
        mean2d_ndc_norm: ndc,
        visible,
    })
}

fn sym2<T: Scalar>(m: [[T; 2]; 2]) -> [[T; 2]; 2] {
    m
}

/// Chains screen-space gradients back to one Gaussian's parameters.
fn gaussian_grad<T: Scalar>(g: &Gaussian3D<T>, camera: &CameraPose<T>, sg: &ScreenGrad<T>, beta_floor: T) -> Gaussian3D<T> {
    let _ = beta_floor;
    let two = T::lit(2.0);
    let (p, z, j) = project_point(camera, g.mean);
    let f = camera.focal;
    let wr = &camera.rotation;

    // conic A = C⁻¹ with C = Σ′ + εI:  ∂L/∂C = −A Ḡ A, Ḡ the symmetric gradient on A
    let pg = project_gaussian(g, 0, camera).expect("visible gaussians are in front");
    let q = conic(&pg.cov2d);
    let amat = [[q[0], q[1]], [q[1], q[2]]];
    let gbar = sym2([[sg.conic[0], sg.conic[1] * T::lit(0.5)], [sg.conic[1] * T::lit(0.5), sg.conic[2]]]);
    let ag: [[T; 2]; 2] = std::array::from_fn(|r| std::array::from_fn(|c| amat[r][0] * gbar[0][c] + amat[r][1] * gbar[1][c]));
    let g_cov2d: [[T; 2]; 2] = std::array::from_fn(|r| std::array::from_fn(|c| -(ag[r][0] * amat[0][c] + ag[r][1] * amat[1][c])));

    // Σ′ = J M Jᵀ with M = W Σ Wᵀ
    let sigma = g.covariance();
    let m = geom::mat_mul(&geom::mat_mul(wr, &sigma), &geom::transpose(wr));
    // ∂L/∂J = 2 G J M,  ∂L/∂M = Jᵀ G J
    let gj_m: [[T; 3]; 2] = std::array::from_fn(|a| std::array::from_fn(|c| (0..2).map(|b| g_cov2d[a][b] * j[b][c]).sum()));
    let g_j: [[T; 3]; 2] = std::array::from_fn(|a| std::array::from_fn(|c| two * (0..3).map(|b| gj_m[a][b] * m[b][c]).sum::<T>()));
    let g_m: Mat3<T> = std::array::from_fn(|r| {
        std::array::from_fn(|c| (0..2).map(|a| (0..2).map(|b| j[a][r] * g_cov2d[a][b] * j[b][c]).sum::<T>()).sum())
    });
    // Σ = Wᵀ M W  ⇒  ∂L/∂Σ = Wᵀ (∂L/∂M) W
    let g_sigma = geom::mat_mul(&geom::mat_mul(&geom::transpose(wr), &g_m), wr);

    // Σ = B Bᵀ, B = R S  ⇒  ∂L/∂B = (G + Gᵀ) B
    let r = geom::quat_to_mat(g.rotation);
    let s = g.scale();
    let b: Mat3<T> = std::array::from_fn(|i| std::array::from_fn(|k| r[i][k] * s[k]));
    let g_b: Mat3<T> = std::array::from_fn(|i| {
        std::array::from_fn(|k| (0..3).map(|l| (g_sigma[i][l] + g_sigma[l][i]) * b[l][k]).sum())
    });
    let g_r: Mat3<T> = std::array::from_fn(|i| std::array::from_fn(|k| g_b[i][k] * s[k]));
    let g_log_scale: [T; 3] = std::array::from_fn(|k| (0..3).map(|i| g_b[i][k] * r[i][k]).sum::<T>() * s[k]);
    let g_rotation = quat_backward(g.rotation, &g_r);

    // camera-frame point p: μ′ and J depend on it, z = −p_z
    let (z2, z3) = (z * z, z * z * z);
    let mut g_p = [T::zero(); 3];
    for a in 0..2 {
        for c in 0..3 {
            g_p[c] += j[a][c] * sg.mean2d[a];
        }
    }
    g_p[0] += g_j[0][2] * f / z2;
    g_p[1] += g_j[1][2] * f / z2;
    g_p[2] += (g_j[0][0] + g_j[1][1]) * f / z2 + g_j[0][2] * two * f * p[0] / z3 + g_j[1][2] * two * f * p[1] / z3;
    g_p[2] -= sg.z;
    let g_mean = geom::mat_t_vec(wr, g_p);

    let o = g.opacity();
    Gaussian3D {
        mean: g_mean,
        log_scale: g_log_scale,
        rotation: g_rotation,
        opacity_raw: sg.opacity * o * (T::one() - o),
        color: sg.color,
        beta_raw: sg.beta * g.beta_raw.sigmoid(),
    }
}

/// Gradient with respect to a raw quaternion given `∂L/∂R` for `R = quat_to_mat(q/‖q‖)`.
fn quat_backward<T: Scalar>(q: [T; 4], g_r: &Mat3<T>) -> [T; 4] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    let two = T::lit(2.0);
    let four = T::lit(4.0);
    let zero = T::zero();
    let d_w = [[zero, -two * z, two * y], [two * z, zero, -two * x], [-two * y, two * x, zero]];
    let d_x = [[zero, two * y, two * z], [two * y, -four * x, -two * w], [two * z, two * w, -four * x]];
    let d_y = [[-four * y, two * x, two * w], [two * x, zero, two * z], [-two * w, two * z, -four * y]];
    let d_z = [[-four * z, -two * w, two * x], [two * w, -four * z, two * y], [two * x, two * y, zero]];
    let contract = |d: &Mat3<T>| (0..3).map(|i| (0..3).map(|k| d[i][k] * g_r[i][k]).sum::<T>()).sum::<T>();
    let g_hat = [contract(&d_w), contract(&d_x), contract(&d_y), contract(&d_z)];
    let qh = [w, x, y, z];
    let proj: T = (0..4).map(|i| qh[i] * g_hat[i]).sum();
    std::array::from_fn(|i| (g_hat[i] - qh[i] * proj) / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom;

    fn cam(w: usize, h: usize, focal: f64) -> CameraPose<f64> {
        CameraPose::new(geom::identity(), [0.0; 3], focal, [w as f64 / 2.0, h as f64 / 2.0], w, h).unwrap()
    }

    /// A Gaussian at the image centre that is effectively flat across a 1×1 image.
    fn flat(z: f64, opacity: f64, color: [f64; 3], beta: f64) -> Gaussian3D<f64> {
        Gaussian3D::isotropic([0.0, 0.0, -z], 100.0, opacity, color, (beta - 1e-9f64).softplus_inv())
    }

    #[test]
    fn opaque_singleton() {
        let cloud = GaussianCloud::new(vec![flat(2.0, 0.9999, [0.2, 0.4, 0.6], 0.01)], 1e-9);
        let r = rasterize(&cloud, &cam(1, 1, 1.0), &RasterConfig::default()).unwrap();
        let px = r.pixels[0];
        // α clamps at 0.999, so the white background leaks 0.1 %
        for (c, e) in px.color.iter().zip([0.2, 0.4, 0.6]) {
            assert!((c - (0.999 * e + 0.001)).abs() < 1e-12);
        }
        assert!((px.depth - 0.999 * 2.0).abs() < 1e-9);
        assert!(rasterize(&GaussianCloud::<f64>::new(vec![], 1e-9), &cam(1, 1, 1.0), &RasterConfig::default()).is_err());
    }

    #[test]
    fn hand_evaluated_two_gaussians() {
        // α = (0.5, ≈1): front gaussian half-transparent, back one at the clamp
        let front = flat(1.0, 0.5, [1.0, 0.0, 0.0], 0.04);
        let back = flat(2.0, 0.9999, [0.0, 1.0, 0.0], 0.02);
        let cloud = GaussianCloud::new(vec![back, front], 1e-9);
        let r = rasterize(&cloud, &cam(1, 1, 1.0), &RasterConfig { background: [0.0; 3], ..Default::default() }).unwrap();
        assert_eq!(r.contributors(0), &[1, 0]);
        let px = r.pixels[0];
        // the pixel centre sits on both means
        let a0 = 0.5;
        let w1 = (1.0 - a0) * 0.999;
        assert!((px.color[0] - a0).abs() < 1e-12);
        assert!((px.color[1] - w1).abs() < 1e-12);
        // Linear weighting: 0.5·0.04 + 0.5·0.02 in the exact limit
        let expect = a0 * 0.04 + w1 * 0.02;
        assert!((px.color_variance[0] - expect).abs() < 1e-9);
        assert!((expect - 0.03).abs() < 2e-4);
    }

    #[test]
    fn sort_is_deterministic_with_ties() {
        let a = flat(2.0, 0.5, [1.0, 0.0, 0.0], 0.01);
        let b = flat(2.0, 0.5, [0.0, 0.0, 1.0], 0.01);
        let cloud = GaussianCloud::new(vec![a, b], 1e-9);
        let r = rasterize(&cloud, &cam(1, 1, 1.0), &RasterConfig::default()).unwrap();
        assert_eq!(r.contributors(0), &[0, 1]);
    }

    #[test]
    fn single_gaussian_color_gradient_is_its_weight() {
        let g = Gaussian3D::isotropic([0.05, -0.02, -3.0], 0.2, 0.7, [0.3, 0.5, 0.2], 0.0);
        let cloud = GaussianCloud::new(vec![g], 1e-6);
        let camera = cam(4, 4, 6.0);
        let cfg = RasterConfig::default();
        let r = rasterize(&cloud, &camera, &cfg).unwrap();
        let mut up = vec![PixelGrad::default(); 16];
        up[5].color = [1.0, 0.0, 0.0];
        let grads = rasterize_backward(&cloud, &camera, &cfg, &r, &up).unwrap();
        assert!((grads.gaussians[0].color[0] - r.pixels[5].accumulation).abs() < 1e-15);
        assert_eq!(grads.gaussians[0].color[1], 0.0);

        let zero = rasterize_backward(&cloud, &camera, &cfg, &r, &vec![PixelGrad::default(); 16]).unwrap();
        assert!(zero.gaussians[0].param_array().iter().all(|&v| v == 0.0));
        assert!(rasterize_backward(&cloud, &camera, &cfg, &r, &up[..3]).is_err());
    }

    #[test]
    fn weights_bounded_and_variances_nonnegative() {
        let mut gs = Vec::new();
        for i in 0..12 {
            let t = i as f64;
            gs.push(Gaussian3D {
                mean: [0.3 * (t * 0.7).sin(), 0.3 * (t * 1.3).cos(), -2.0 - 0.1 * t],
                log_scale: [(-2.0 + 0.1 * t).min(-1.0), -2.2, -1.8],
                rotation: [1.0, 0.1 * t, -0.2, 0.05],
                opacity_raw: 0.5 * t - 2.0,
                color: [0.1 * (t % 7.0), 0.5, 0.9 - 0.05 * t],
                beta_raw: t - 6.0,
            });
        }
        let cloud = GaussianCloud::new(gs, 1e-4);
        let r = rasterize(&cloud, &cam(10, 8, 12.0), &RasterConfig::default()).unwrap();
        for px in &r.pixels {
            assert!(px.accumulation >= 0.0 && px.accumulation <= 1.0 + 1e-12);
            assert!(px.color_variance[0] >= 0.0 && px.depth_variance >= 0.0);
        }
        let again = rasterize(&cloud, &cam(10, 8, 12.0), &RasterConfig::default()).unwrap();
        assert_eq!(r.output, again.output);
    }
}
