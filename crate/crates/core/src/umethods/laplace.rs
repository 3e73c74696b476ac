use ndarray::{linalg::general_mat_mul, s, Array1, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::predict::UncertainPrediction;
use super::train_field::PixelSampler;
use crate::adfield::MlpField;
use crate::scenegen::{CameraPose, ViewDataset};
use crate::volrend::{
    alpha_from_density, field_rays_output_grad, render_field_rays, FieldRays, PixelGrad, RenderConfig, RenderOutput,
    RenderedPixel, VarianceWeighting,
};
use crate::{seed, Error, Result, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LaplaceConfig {
    pub n_batches: usize,
    pub rays_per_batch: usize,
    pub prior_precision: f64,
    /// Colour-head weight samples per prediction.
    pub samples: usize,
    /// Density-head weight samples per prediction (for the averaged rendering weights).
    pub density_samples: usize,
    pub seed: u64,
}

impl Default for LaplaceConfig {
    fn default() -> Self {
        LaplaceConfig {
            n_batches: 100,
            rays_per_batch: 4096,
            prior_precision: 1.0,
            samples: 100,
            density_samples: 100,
            seed: 0,
        }
    }
}

/// Diagonal Gaussian posterior over the σ column of the last density layer and the colour
/// columns of the last colour layer.
///
/// Parameter order: σ weights, σ bias, colour weights (row-major, `hidden × 3`), colour biases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaplacePosterior<T> {
    pub density_hidden: usize,
    pub color_hidden: usize,
    pub prior_precision: f64,
    pub mode: Vec<T>,
    pub ggn: Vec<T>,
}

impl<T: Scalar> LaplacePosterior<T> {
    /// Posterior from a mode and an accumulated GGN diagonal.
    pub fn from_ggn(density_hidden: usize, color_hidden: usize, mode: Vec<T>, ggn: Vec<T>, prior_precision: f64) -> Result<Self> {
        if !(prior_precision > 0.0) {
            return Err(Error::InvalidArgument(format!("prior precision must be positive, got {prior_precision}")));
        }
        let n = density_hidden + 1 + 3 * (color_hidden + 1);
        if mode.len() != n || ggn.len() != n {
            return Err(Error::ShapeMismatch(format!("expected {n} parameters, got {} and {}", mode.len(), ggn.len())));
        }
        Ok(LaplacePosterior {
            density_hidden,
            color_hidden,
            prior_precision,
            mode,
            ggn,
        })
    }

    pub fn precision(&self) -> Vec<T> {
        posterior_precision(&self.ggn, self.prior_precision)
    }

    pub fn variance(&self) -> Vec<T> {
        self.precision().into_iter().map(|p| T::one() / p).collect()
    }

    fn sigma_slice<'a>(&self, v: &'a [T]) -> &'a [T] {
        &v[..self.density_hidden + 1]
    }

    /// `(hidden + 1) × 3` colour block, biases in the last row.
    fn color_block(&self, v: &[T]) -> Array2<T> {
        let h = self.color_hidden + 1;
        Array2::from_shape_vec((h, 3), v[self.density_hidden + 1..].to_vec()).expect("sized")
    }
}

/// Adds the outer-product diagonal of one Jacobian row (unit-variance Gaussian likelihood).
pub fn accumulate_diag_ggn<T: Scalar>(ggn: &mut [T], row: &[T]) {
    for (g, &j) in ggn.iter_mut().zip(row) {
        *g += j * j;
    }
}

/// `GGN_jj + γ`.
pub fn posterior_precision<T: Scalar>(ggn: &[T], prior_precision: f64) -> Vec<T> {
    ggn.iter().map(|&g| g + T::lit(prior_precision)).collect()
}

/// Last-layer parameters of `field` in posterior order.
pub fn laplace_mode<T: Scalar>(field: &MlpField<T>) -> Vec<T> {
    let d = field.density_net.layers.last().expect("non-empty");
    let c = field.color_net.layers.last().expect("non-empty");
    let mut v: Vec<T> = d.weight.column(0).to_vec();
    v.push(d.bias[0]);
    for row in c.weight.rows() {
        v.extend(row.iter().take(3));
    }
    v.extend(c.bias.iter().take(3));
    v
}

fn with_bias<T: Scalar>(h: ArrayView2<T>) -> Array2<T> {
    let mut out = Array2::ones((h.nrows(), h.ncols() + 1));
    out.slice_mut(s![.., ..h.ncols()]).assign(&h);
    out
}

/// Accumulates the diagonal GGN of the rendered colour over randomly drawn train rays.
pub fn fit_laplace<T: Scalar>(
    field: &MlpField<T>,
    dataset: &ViewDataset<T>,
    render: &RenderConfig,
    cfg: &LaplaceConfig,
) -> Result<LaplacePosterior<T>> {
    if !(cfg.prior_precision > 0.0) {
        return Err(Error::InvalidArgument(format!("prior precision must be positive, got {}", cfg.prior_precision)));
    }
    render.validate()?;
    let hd = field.density_net.head_width();
    let hc = field.color_net.head_width();
    let n_params = hd + 1 + 3 * (hc + 1);
    let sampler = PixelSampler::new(dataset, render.near, render.far)?;
    let mut rng = seed::rng(seed::derive_str(cfg.seed, "laplace-fit"));
    let bg = render.background::<T>();
    let mut ggn = vec![T::zero(); n_params];
    let mut row = vec![T::zero(); n_params];
    let ns = render.samples;

    for _ in 0..cfg.n_batches {
        let batch = sampler.sample(cfg.rays_per_batch, &mut rng);
        let rays = FieldRays::new(&batch.rays, ns, None);
        let out = render_field_rays(field, &rays, bg, VarianceWeighting::Squared, None)?;
        let h_d = with_bias(out.tape.density_head_input());
        let h_c = with_bias(out.tape.color_head_input());
        let dsig: Array1<T> = out.tape.sigma_raw().mapv(T::sigmoid);
        for ch in 0..3 {
            let mut unit = PixelGrad::default();
            unit.color[ch] = T::one();
            let og = field_rays_output_grad(&rays, &out, &vec![unit; rays.len()])?;
            // per point: ∂C/∂σ · softplus′ and ∂C/∂c · sigmoid′
            let s_sigma: Array1<T> = &og.sigma * &dsig;
            let s_color: Array1<T> = Array1::from_iter(
                (0..rays.num_points()).map(|i| {
                    let c = out.outputs.color[[i, ch]];
                    og.color[[i, ch]] * c * (T::one() - c)
                }),
            );
            for r in 0..rays.len() {
                let span = r * ns..(r + 1) * ns;
                let jd = h_d.slice(s![span.clone(), ..]).t().dot(&s_sigma.slice(s![span.clone()]));
                let jc = h_c.slice(s![span.clone(), ..]).t().dot(&s_color.slice(s![span]));
                row.iter_mut().for_each(|x| *x = T::zero());
                row[..hd + 1].copy_from_slice(jd.as_slice().expect("contiguous"));
                for (a, &j) in jc.iter().enumerate() {
                    row[hd + 1 + 3 * a + ch] = j;
                }
                accumulate_diag_ggn(&mut ggn, &row);
            }
        }
    }
    LaplacePosterior::from_ggn(hd, hc, laplace_mode(field), ggn, cfg.prior_precision)
}

/// `m` draws of a weight block from `N(mode, diag(var))`.
pub(crate) fn draw_blocks<T: Scalar>(mode: &Array2<T>, std: &Array2<T>, m: usize, rng: &mut seed::Rng) -> Vec<Array2<T>> {
    (0..m)
        .map(|_| {
            let mut w = mode.clone();
            for (x, &s) in w.iter_mut().zip(std) {
                let z: f64 = StandardNormal.sample(rng);
                *x += s * T::lit(z);
            }
            w
        })
        .collect()
}

/// Renders with last-layer weights sampled from the posterior: per-point empirical colour mean
/// and variance composited with squared weights, depth from rendering weights averaged over
/// density samples.
pub fn predict_laplace<T: Scalar>(
    field: &MlpField<T>,
    posterior: &LaplacePosterior<T>,
    camera: &CameraPose<T>,
    render: &RenderConfig,
    cfg: &LaplaceConfig,
) -> Result<UncertainPrediction<T>> {
    if cfg.samples < 2 || cfg.density_samples < 2 {
        return Err(Error::InvalidArgument("Laplace prediction needs at least 2 samples of each kind".into()));
    }
    if posterior.density_hidden != field.density_net.head_width() || posterior.color_hidden != field.color_net.head_width() {
        return Err(Error::ShapeMismatch("posterior does not belong to this field".into()));
    }
    render.validate()?;
    let render = RenderConfig { stratified: false, ..render.clone() };
    let mode = laplace_mode(field);
    let std: Vec<T> = posterior.variance().into_iter().map(T::sqrt).collect();
    let mut rng = seed::rng(seed::derive_str(cfg.seed, "laplace-predict"));
    let color_sets = draw_blocks(&posterior.color_block(&mode), &posterior.color_block(&std), cfg.samples, &mut rng);
    let hd1 = posterior.density_hidden + 1;
    let sigma_mode = Array2::from_shape_vec((hd1, 1), posterior.sigma_slice(&mode).to_vec()).expect("sized");
    let sigma_std = Array2::from_shape_vec((hd1, 1), posterior.sigma_slice(&std).to_vec()).expect("sized");
    let sigma_sets = draw_blocks(&sigma_mode, &sigma_std, cfg.density_samples, &mut rng);

    let total = camera.width * camera.height;
    let chunk = render.chunk.max(1);
    let ranges: Vec<_> = (0..total.div_ceil(chunk)).map(|c| c * chunk..((c + 1) * chunk).min(total)).collect();
    let parts: Vec<Vec<RenderedPixel<T>>> = ranges
        .into_par_iter()
        .map(|ids| {
            let rays: Vec<_> = ids
                .map(|i| camera.pixel_ray(i % camera.width, i / camera.width, T::lit(render.near), T::lit(render.far)))
                .collect();
            let batch = FieldRays::new(&rays, render.samples, None);
            let (x, d) = batch.points();
            let (out, tape) = field.forward(x.view(), d.view(), None)?;
            Ok(laplace_chunk(&batch, &out.color, tape.density_head_input(), tape.color_head_input(), &color_sets, &sigma_sets, render.background()))
        })
        .collect::<Result<_>>()?;
    let out = RenderOutput::from_pixels(camera.width, camera.height, &parts.concat());
    Ok(UncertainPrediction::from_render(out, true))
}

fn laplace_chunk<T: Scalar>(
    rays: &FieldRays<T>,
    map_color: &Array2<T>,
    h_density: ArrayView2<T>,
    h_color: ArrayView2<T>,
    color_sets: &[Array2<T>],
    sigma_sets: &[Array2<T>],
    bg: [T; 3],
) -> Vec<RenderedPixel<T>> {
    let p = rays.num_points();
    let ns = rays.samples;
    // shifted moments about the MAP colour so a point posterior gives exactly zero variance
    let mut s1 = Array2::<T>::zeros((p, 3));
    let mut s2 = Array2::<T>::zeros((p, 3));
    let mut raw = Array2::<T>::zeros((p, 3));
    let hc = h_color.ncols();
    for w in color_sets {
        raw.assign(&w.row(hc).insert_axis(Axis(0)));
        general_mat_mul(T::one(), &h_color, &w.slice(s![..hc, ..]), T::one(), &mut raw);
        for ((r, m), (a, b)) in raw.iter().zip(map_color.iter()).zip(s1.iter_mut().zip(s2.iter_mut())) {
            let diff = r.sigmoid() - *m;
            *a += diff;
            *b += diff * diff;
        }
    }
    let inv_m = T::one() / T::from_usize_lossy(color_sets.len());
    let mean_c: Array2<T> = map_color + &(&s1 * inv_m);
    let var_c: Array2<T> = Array2::from_shape_fn((p, 3), |(i, c)| {
        let m1 = s1[[i, c]] * inv_m;
        (s2[[i, c]] * inv_m - m1 * m1).max(T::zero())
    });

    let hd = h_density.ncols();
    let mut w_hat = vec![T::zero(); p];
    let mut sig_raw = Array2::<T>::zeros((p, 1));
    let inv_l = T::one() / T::from_usize_lossy(sigma_sets.len());
    for w in sigma_sets {
        sig_raw.fill(w[[hd, 0]]);
        general_mat_mul(T::one(), &h_density, &w.slice(s![..hd, ..]), T::one(), &mut sig_raw);
        for r in 0..rays.len() {
            let mut trans = T::one();
            for i in r * ns..(r + 1) * ns {
                let a = alpha_from_density(sig_raw[[i, 0]].softplus(), rays.delta[i]);
                w_hat[i] += trans * a * inv_l;
                trans *= T::one() - a;
            }
        }
    }

    (0..rays.len())
        .map(|r| {
            let span = r * ns..(r + 1) * ns;
            let acc: T = w_hat[span.clone()].iter().copied().sum();
            let mut color = bg.map(|b| (T::one() - acc) * b);
            let mut var = [T::zero(); 3];
            let mut depth = T::zero();
            for i in span.clone() {
                let w = w_hat[i];
                for c in 0..3 {
                    color[c] += w * mean_c[[i, c]];
                    var[c] += w * w * var_c[[i, c]];
                }
                depth += w * rays.t[i];
            }
            let depth_variance = span.map(|i| w_hat[i] * (rays.t[i] - depth).powi(2)).sum();
            RenderedPixel {
                color,
                color_variance: var,
                depth,
                depth_variance,
                accumulation: acc,
            }
        })
        .collect()
}
