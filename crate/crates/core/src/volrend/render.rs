use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::composite::{
    alpha_from_density, composite_backward, composite_forward, PixelGrad, RenderedPixel, SampleGradsMut,
    VarianceWeighting,
};
use crate::adfield::{
    field_backward, field_forward, generate_ray, sample_depths, DropoutMask, FieldGradients, FieldOutput,
    FieldOutputGrad, FieldTape, MlpField, RayJacobian,
};
use crate::geom::Vec3;
use crate::gsplat::{rasterize, GaussianCloud, RasterConfig};
use crate::scenegen::{CameraPose, Ray};
use crate::{seed, Error, Image, Result, Scalar};

/// Rendering settings shared by fields and clouds (clouds ignore the sampling fields).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub samples: usize,
    pub near: f64,
    pub far: f64,
    pub stratified: bool,
    pub seed: u64,
    pub background: [f64; 3],
    /// Rays per batched field evaluation.
    pub chunk: usize,
    /// Overrides the representation's default variance weighting.
    pub weighting: Option<VarianceWeighting>,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            samples: 64,
            near: 1.0,
            far: 6.0,
            stratified: false,
            seed: 0,
            background: [1.0; 3],
            chunk: 1024,
            weighting: None,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 || self.chunk == 0 {
            return Err(Error::InvalidArgument("samples and chunk must be positive".into()));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < near < far, got [{}, {}]",
                self.near, self.far
            )));
        }
        Ok(())
    }

    pub fn background<T: Scalar>(&self) -> [T; 3] {
        self.background.map(T::lit)
    }
}

/// Dropout applied at render time: rate and mask seed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutSpec {
    pub p: f64,
    pub seed: u64,
}

/// Either scene representation, for entry points that accept both.
#[derive(Clone, Copy, Debug)]
pub enum Model<'a, T> {
    Field(&'a MlpField<T>),
    Cloud(&'a GaussianCloud<T>),
}

/// A rendered view: colour, per-channel colour variance, depth, depth variance, accumulation.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput<T> {
    pub color: Image<T>,
    pub color_variance: Image<T>,
    pub depth: Image<T>,
    pub depth_variance: Image<T>,
    pub accumulation: Image<T>,
}

impl<T: Scalar> RenderOutput<T> {
    pub fn from_pixels(width: usize, height: usize, pixels: &[RenderedPixel<T>]) -> Self {
        assert_eq!(pixels.len(), width * height);
        let rgb = |f: &dyn Fn(&RenderedPixel<T>) -> [T; 3]| {
            Image::from_vec(width, height, 3, pixels.iter().flat_map(f).collect()).expect("sized")
        };
        let mono = |f: &dyn Fn(&RenderedPixel<T>) -> T| {
            Image::from_vec(width, height, 1, pixels.iter().map(f).collect()).expect("sized")
        };
        RenderOutput {
            color: rgb(&|p| p.color),
            color_variance: rgb(&|p| p.color_variance),
            depth: mono(&|p| p.depth),
            depth_variance: mono(&|p| p.depth_variance),
            accumulation: mono(&|p| p.accumulation),
        }
    }

    pub fn width(&self) -> usize {
        self.color.width()
    }

    pub fn height(&self) -> usize {
        self.color.height()
    }

    pub fn pixel(&self, u: usize, v: usize) -> RenderedPixel<T> {
        let c = self.color.pixel(u, v);
        let cv = self.color_variance.pixel(u, v);
        RenderedPixel {
            color: [c[0], c[1], c[2]],
            color_variance: [cv[0], cv[1], cv[2]],
            depth: self.depth.get(u, v, 0),
            depth_variance: self.depth_variance.get(u, v, 0),
            accumulation: self.accumulation.get(u, v, 0),
        }
    }
}

/// A batch of rays with `samples` sample distances each, stored flat (ray-major).
#[derive(Clone, Debug)]
pub struct FieldRays<T> {
    pub origins: Vec<Vec3<T>>,
    pub directions: Vec<Vec3<T>>,
    pub t: Vec<T>,
    pub delta: Vec<T>,
    pub samples: usize,
}

impl<T: Scalar> FieldRays<T> {
    /// Samples every ray; with `jitter`, one stratified draw per bin.
    pub fn new(rays: &[Ray<T>], samples: usize, mut jitter: Option<&mut seed::Rng>) -> Self {
        let mut out = FieldRays {
            origins: Vec::with_capacity(rays.len()),
            directions: Vec::with_capacity(rays.len()),
            t: Vec::with_capacity(rays.len() * samples),
            delta: Vec::with_capacity(rays.len() * samples),
            samples,
        };
        for ray in rays {
            let (t, d) = sample_depths(ray.t_near, ray.t_far, samples, jitter.as_deref_mut());
            out.origins.push(ray.origin);
            out.directions.push(ray.direction);
            out.t.extend(t);
            out.delta.extend(d);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn num_points(&self) -> usize {
        self.t.len()
    }

    /// Sample positions and per-point directions, both `points × 3`.
    pub fn points(&self) -> (Array2<T>, Array2<T>) {
        let n = self.samples;
        let m = self.num_points();
        let mut x = Array2::zeros((m, 3));
        let mut d = Array2::zeros((m, 3));
        for (r, (o, dir)) in self.origins.iter().zip(&self.directions).enumerate() {
            for i in 0..n {
                let t = self.t[r * n + i];
                for a in 0..3 {
                    x[[r * n + i, a]] = o[a] + t * dir[a];
                    d[[r * n + i, a]] = dir[a];
                }
            }
        }
        (x, d)
    }
}

/// Forward state of a batched field render, kept for the reverse pass.
#[derive(Clone, Debug)]
pub struct FieldRender<T> {
    pub pixels: Vec<RenderedPixel<T>>,
    pub outputs: FieldOutput<T>,
    pub alpha: Vec<T>,
    pub tape: FieldTape<T>,
    background: [T; 3],
    weighting: VarianceWeighting,
}

pub fn render_field_rays<T: Scalar>(
    field: &MlpField<T>,
    rays: &FieldRays<T>,
    background: [T; 3],
    weighting: VarianceWeighting,
    mask: Option<&DropoutMask<T>>,
) -> Result<FieldRender<T>> {
    let (x, d) = rays.points();
    let (outputs, tape) = field_forward(field, x.view(), d.view(), mask)?;
    let alpha: Vec<T> = outputs
        .sigma
        .iter()
        .zip(&rays.delta)
        .map(|(&s, &dt)| alpha_from_density(s, dt))
        .collect();
    let n = rays.samples;
    let color = outputs.color.as_slice().expect("standard layout");
    let beta = outputs.beta.as_ref().map(|b| b.as_slice().expect("standard layout"));
    let pixels = (0..rays.len())
        .map(|r| {
            let s = r * n..(r + 1) * n;
            composite_forward(
                &alpha[s.clone()],
                &color[3 * r * n..3 * (r + 1) * n],
                beta.map(|b| &b[s.clone()]),
                &rays.t[s],
                background,
                weighting,
            )
        })
        .collect();
    Ok(FieldRender {
        pixels,
        outputs,
        alpha,
        tape,
        background,
        weighting,
    })
}

/// Per-point upstream gradients of the field outputs from per-ray pixel gradients.
pub fn field_rays_output_grad<T: Scalar>(
    rays: &FieldRays<T>,
    render: &FieldRender<T>,
    grads: &[PixelGrad<T>],
) -> Result<FieldOutputGrad<T>> {
    if grads.len() != rays.len() {
        return Err(Error::ShapeMismatch(format!("{} pixel gradients for {} rays", grads.len(), rays.len())));
    }
    let n = rays.samples;
    let m = rays.num_points();
    let has_beta = render.outputs.beta.is_some();
    let color = render.outputs.color.as_slice().expect("standard layout");
    let beta = render.outputs.beta.as_ref().map(|b| b.as_slice().expect("standard layout"));
    let mut g_alpha = vec![T::zero(); m];
    let mut g_color = Array2::zeros((m, 3));
    let mut g_beta = has_beta.then(|| Array1::zeros(m));
    {
        let gc = g_color.as_slice_mut().expect("standard layout");
        let mut gb = g_beta.as_mut().map(|b| b.as_slice_mut().expect("standard layout"));
        for (r, g) in grads.iter().enumerate() {
            let s = r * n..(r + 1) * n;
            composite_backward(
                &render.alpha[s.clone()],
                &color[3 * r * n..3 * (r + 1) * n],
                beta.map(|b| &b[s.clone()]),
                &rays.t[s.clone()],
                render.background,
                render.weighting,
                &render.pixels[r],
                g,
                SampleGradsMut {
                    alpha: &mut g_alpha[s.clone()],
                    color: &mut gc[3 * r * n..3 * (r + 1) * n],
                    beta: gb.as_deref_mut().map(|b| &mut b[s]),
                    t: None,
                },
            );
        }
    }
    // α = 1 − exp(−σδ)  ⇒  ∂α/∂σ = δ (1 − α)
    let g_sigma = Array1::from_iter(
        (0..m).map(|i| g_alpha[i] * rays.delta[i] * (T::one() - render.alpha[i])),
    );
    Ok(FieldOutputGrad {
        sigma: g_sigma,
        color: g_color,
        beta: g_beta,
    })
}

/// Reverse pass of [`render_field_rays`]. `extra` is added to the per-point output gradients
/// (used for regularizers on σ or β).
pub fn render_field_rays_backward<T: Scalar>(
    field: &MlpField<T>,
    rays: &FieldRays<T>,
    render: &FieldRender<T>,
    grads: &[PixelGrad<T>],
    extra: Option<&FieldOutputGrad<T>>,
    with_params: bool,
) -> Result<FieldGradients<T>> {
    let mut up = field_rays_output_grad(rays, render, grads)?;
    if let Some(e) = extra {
        up.sigma += &e.sigma;
        up.color += &e.color;
        if let (Some(b), Some(eb)) = (up.beta.as_mut(), e.beta.as_ref()) {
            *b += eb;
        }
    }
    field_backward(field, &render.tape, &up, with_params)
}

fn dropout_for_rays<T: Scalar>(
    field: &MlpField<T>,
    ray_ids: std::ops::Range<usize>,
    samples: usize,
    spec: DropoutSpec,
) -> Result<DropoutMask<T>> {
    let rows = ray_ids.len() * samples;
    let mut mask = DropoutMask::ones(field, rows);
    for (k, id) in ray_ids.enumerate() {
        let mut rng = seed::rng(seed::derive(spec.seed, id as u64));
        let m = DropoutMask::sample(field, samples, spec.p, &mut rng)?;
        let rs = k * samples..(k + 1) * samples;
        mask.density.slice_mut(ndarray::s![rs.clone(), ..]).assign(&m.density);
        mask.color.slice_mut(ndarray::s![rs, ..]).assign(&m.color);
    }
    Ok(mask)
}

fn camera_rays<T: Scalar>(camera: &CameraPose<T>, ids: std::ops::Range<usize>, cfg: &RenderConfig) -> Result<Vec<(Ray<T>, RayJacobian<T>)>> {
    ids.map(|i| generate_ray(camera, i % camera.width, i / camera.width, T::lit(cfg.near), T::lit(cfg.far)))
        .collect()
}

fn chunks(total: usize, chunk: usize) -> Vec<std::ops::Range<usize>> {
    (0..total.div_ceil(chunk)).map(|c| c * chunk..((c + 1) * chunk).min(total)).collect()
}

/// Sample distances for the given rays: midpoints, or stratified with one stream per pixel.
fn sample_rays<T: Scalar>(rays: &[Ray<T>], ids: std::ops::Range<usize>, cfg: &RenderConfig) -> FieldRays<T> {
    if !cfg.stratified {
        return FieldRays::new(rays, cfg.samples, None);
    }
    let mut out = FieldRays::new(&[], cfg.samples, None);
    for (ray, id) in rays.iter().zip(ids) {
        let mut rng = seed::rng(seed::derive(cfg.seed, id as u64));
        let one = FieldRays::new(std::slice::from_ref(ray), cfg.samples, Some(&mut rng));
        out.origins.extend(one.origins);
        out.directions.extend(one.directions);
        out.t.extend(one.t);
        out.delta.extend(one.delta);
    }
    out
}

/// Renders every pixel of `camera` through the field; `dropout` masks the last layers.
pub fn render_field_image<T: Scalar>(
    field: &MlpField<T>,
    camera: &CameraPose<T>,
    cfg: &RenderConfig,
    dropout: Option<DropoutSpec>,
) -> Result<RenderOutput<T>> {
    cfg.validate()?;
    let weighting = cfg.weighting.unwrap_or(VarianceWeighting::Squared);
    let total = camera.width * camera.height;
    let parts: Vec<Vec<RenderedPixel<T>>> = chunks(total, cfg.chunk)
        .into_par_iter()
        .map(|ids| {
            let rays: Vec<Ray<T>> = camera_rays(camera, ids.clone(), cfg)?.into_iter().map(|(r, _)| r).collect();
            let batch = sample_rays(&rays, ids.clone(), cfg);
            let mask = dropout.map(|d| dropout_for_rays(field, ids, cfg.samples, d)).transpose()?;
            Ok(render_field_rays(field, &batch, cfg.background(), weighting, mask.as_ref())?.pixels)
        })
        .collect::<Result<_>>()?;
    Ok(RenderOutput::from_pixels(camera.width, camera.height, &parts.concat()))
}

/// Deterministic render of either representation.
pub fn render_image<T: Scalar>(model: Model<'_, T>, camera: &CameraPose<T>, cfg: &RenderConfig) -> Result<RenderOutput<T>> {
    match model {
        Model::Field(f) => render_field_image(f, camera, cfg, None),
        Model::Cloud(c) => {
            let rc = RasterConfig {
                background: cfg.background,
                weighting: cfg.weighting.unwrap_or(VarianceWeighting::Linear),
                ..RasterConfig::default()
            };
            Ok(rasterize(c, camera, &rc)?.output)
        }
    }
}

/// How the per-pixel `3 × 12` colour/pose Jacobian is reduced to one number.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientNorm {
    /// Frobenius norm over all 36 partials.
    #[default]
    Stacked,
    /// 2-norm of each channel's 12 partials, averaged over channels.
    PerChannelMean,
}

/// Per-pixel Jacobian of the rendered colour with respect to the 12 pose entries
/// (`R` row-major, then `t`), rows indexed by channel. Sampling is always at bin midpoints.
pub fn pose_jacobians<T: Scalar>(
    field: &MlpField<T>,
    camera: &CameraPose<T>,
    cfg: &RenderConfig,
) -> Result<Vec<[[T; 12]; 3]>> {
    cfg.validate()?;
    let weighting = cfg.weighting.unwrap_or(VarianceWeighting::Squared);
    let total = camera.width * camera.height;
    let n = cfg.samples;
    let parts: Vec<Vec<[[T; 12]; 3]>> = chunks(total, cfg.chunk)
        .into_par_iter()
        .map(|ids| {
            let generated = camera_rays(camera, ids, cfg)?;
            let rays: Vec<Ray<T>> = generated.iter().map(|(r, _)| *r).collect();
            let batch = FieldRays::new(&rays, n, None);
            let render = render_field_rays(field, &batch, cfg.background(), weighting, None)?;
            let mut out = vec![[[T::zero(); 12]; 3]; rays.len()];
            for ch in 0..3 {
                let mut g = PixelGrad::default();
                g.color[ch] = T::one();
                let grads = vec![g; rays.len()];
                let fg = render_field_rays_backward(field, &batch, &render, &grads, None, false)?;
                for (r, (_, jac)) in generated.iter().enumerate() {
                    let mut g_o = [T::zero(); 3];
                    let mut g_d = [T::zero(); 3];
                    for i in 0..n {
                        let p = r * n + i;
                        let t = batch.t[p];
                        for a in 0..3 {
                            g_o[a] += fg.x[[p, a]];
                            g_d[a] += t * fg.x[[p, a]] + fg.d[[p, a]];
                        }
                    }
                    out[r][ch] = jac.vjp(g_o, g_d);
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(parts.concat())
}

/// Per-pixel norm of `∂c/∂P`. Only fields have a differentiable render path here.
pub fn pose_gradient_map<T: Scalar>(
    model: Model<'_, T>,
    camera: &CameraPose<T>,
    cfg: &RenderConfig,
    norm: GradientNorm,
) -> Result<Image<T>> {
    let Model::Field(field) = model else {
        return Err(Error::Unsupported("pose gradients of splat renders".into()));
    };
    let jac = pose_jacobians(field, camera, cfg)?;
    let values = jac
        .iter()
        .map(|j| match norm {
            GradientNorm::Stacked => j.iter().flatten().map(|&v| v * v).sum::<T>().sqrt(),
            GradientNorm::PerChannelMean => {
                j.iter().map(|row| row.iter().map(|&v| v * v).sum::<T>().sqrt()).sum::<T>() / T::lit(3.0)
            }
        })
        .collect();
    Image::from_vec(camera.width, camera.height, 1, values)
}

/// `|a − b|` with every value below the map's own `percentile` (nearest rank: the sorted value
/// at 0-based index `⌊p·N/100⌋`) set to zero.
pub fn gradient_norm_difference<T: Scalar>(a: &Image<T>, b: &Image<T>, percentile: f64) -> Result<Image<T>> {
    a.check_same_shape(b, "gradient maps")?;
    if !(0.0..=100.0).contains(&percentile) {
        return Err(Error::InvalidArgument(format!("percentile must be in [0, 100], got {percentile}")));
    }
    let diff: Vec<T> = a.data().iter().zip(b.data()).map(|(&x, &y)| (x - y).abs()).collect();
    let mut sorted = diff.clone();
    sorted.sort_by(|x, y| x.partial_cmp(y).expect("finite gradient norms"));
    let n = sorted.len();
    let rank = ((percentile * n as f64 / 100.0).floor() as usize).min(n - 1);
    let threshold = sorted[rank];
    let kept = diff.into_iter().map(|v| if v >= threshold { v } else { T::zero() }).collect();
    Image::from_vec(a.width(), a.height(), a.channels(), kept)
}

/// Jet colormap on `[0, 1]`.
pub fn jet(x: f64) -> [f64; 3] {
    let x = x.clamp(0.0, 1.0);
    let f = |c: f64| (1.5 - (4.0 * x - c).abs()).clamp(0.0, 1.0);
    [f(3.0), f(2.0), f(1.0)]
}

/// Writes a single-channel map as a jet-coloured PNG over `[0, v_max]`.
pub fn save_heatmap_png<T: Scalar>(map: &Image<T>, v_max: f64, path: impl AsRef<std::path::Path>) -> Result<()> {
    if map.channels() != 1 {
        return Err(Error::ShapeMismatch("heatmaps take single-channel images".into()));
    }
    if !(v_max > 0.0) {
        return Err(Error::InvalidArgument(format!("heatmap range must be positive, got {v_max}")));
    }
    let rgb: Vec<f64> = map.data().iter().flat_map(|&v| jet(v.as_f64() / v_max)).collect();
    Image::from_vec(map.width(), map.height(), 3, rgb)?.save_png(path)
}
