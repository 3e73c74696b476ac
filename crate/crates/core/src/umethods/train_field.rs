use ndarray::Array1;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adam::{exp_decay, Adam};
use super::config::TrainConfig;
use crate::adfield::{DropoutMask, FieldOutputGrad, MlpField};
use crate::scenegen::{Ray, ViewDataset};
use crate::volrend::{render_field_rays, render_field_rays_backward, FieldRays, PixelGrad, VarianceWeighting};
use crate::{seed, Error, Result, Scalar};

/// Which training loss to use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Photometric loss only (MSE for fields, L1 + D-SSIM for clouds).
    #[default]
    Vanilla,
    /// Gaussian likelihood with a learned, rendered variance plus a sparsity regularizer.
    Active,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Loss of every step, in order.
    pub losses: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.losses.last().copied().unwrap_or(f64::NAN)
    }
}

/// A batch of training rays with their target colours.
pub(crate) struct RayBatch<T> {
    pub rays: Vec<Ray<T>>,
    pub targets: Vec<[T; 3]>,
}

/// Uniform sampler over all pixels of the train views.
pub(crate) struct PixelSampler<'a, T> {
    views: Vec<&'a crate::scenegen::View<T>>,
    near: T,
    far: T,
}

impl<'a, T: Scalar> PixelSampler<'a, T> {
    pub fn new(dataset: &'a ViewDataset<T>, near: f64, far: f64) -> Result<Self> {
        let views: Vec<_> = dataset.train_views().collect();
        if views.is_empty() {
            return Err(Error::EmptySplit("no train views".into()));
        }
        Ok(PixelSampler {
            views,
            near: T::lit(near),
            far: T::lit(far),
        })
    }

    pub fn sample(&self, n: usize, rng: &mut seed::Rng) -> RayBatch<T> {
        let mut rays = Vec::with_capacity(n);
        let mut targets = Vec::with_capacity(n);
        for _ in 0..n {
            let view = self.views[rng.random_range(0..self.views.len())];
            let u = rng.random_range(0..view.camera.width);
            let v = rng.random_range(0..view.camera.height);
            rays.push(view.camera.pixel_ray(u, v, self.near, self.far));
            let px = view.rgb.pixel(u, v);
            targets.push([px[0], px[1], px[2]]);
        }
        RayBatch { rays, targets }
    }
}

/// Per-ray loss and upstream gradient (not yet divided by the batch size).
pub(crate) fn ray_loss<T: Scalar>(
    objective: Objective,
    color: [T; 3],
    variance: T,
    target: [T; 3],
    floor: T,
) -> (T, PixelGrad<T>) {
    let r: [T; 3] = std::array::from_fn(|c| color[c] - target[c]);
    let rr = r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
    let two = T::lit(2.0);
    match objective {
        Objective::Vanilla => {
            let three = T::lit(3.0);
            (
                rr / three,
                PixelGrad {
                    color: r.map(|x| two * x / three),
                    ..PixelGrad::default()
                },
            )
        }
        Objective::Active => {
            let v = variance + floor;
            (
                rr / (two * v) + T::lit(0.5) * v.ln(),
                PixelGrad {
                    color: r.map(|x| x / v),
                    color_variance: -rr / (two * v * v) + T::one() / (two * v),
                    ..PixelGrad::default()
                },
            )
        }
    }
}

/// Trains a field from scratch. The β head is enabled for [`Objective::Active`].
pub fn train_field<T: Scalar>(dataset: &ViewDataset<T>, cfg: &TrainConfig, objective: Objective) -> Result<(MlpField<T>, TrainReport)> {
    cfg.validate()?;
    let mut fc = cfg.field.clone();
    fc.beta_head = objective == Objective::Active;
    let mut field = MlpField::new(fc, seed::derive_str(cfg.seed, "field-init"))?;
    let report = fit_field(&mut field, dataset, cfg, objective)?;
    Ok((field, report))
}

/// Continues optimizing `field` for `cfg.steps` steps.
pub fn fit_field<T: Scalar>(field: &mut MlpField<T>, dataset: &ViewDataset<T>, cfg: &TrainConfig, objective: Objective) -> Result<TrainReport> {
    cfg.validate()?;
    if objective == Objective::Active && !field.has_beta() {
        return Err(Error::InvalidArgument("the active objective needs a field with a β head".into()));
    }
    let sampler = PixelSampler::new(dataset, cfg.render.near, cfg.render.far)?;
    let mut rng = seed::rng(seed::derive_str(cfg.seed, "field-train"));
    let mut opt = Adam::new(1e-8);
    let bg = cfg.render.background::<T>();
    let floor = T::lit(cfg.variance_floor);
    let b = cfg.rays_per_batch;
    let inv_b = T::one() / T::from_usize_lossy(b);
    let mut losses = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let batch = sampler.sample(b, &mut rng);
        let rays = FieldRays::new(&batch.rays, cfg.render.samples, cfg.render.stratified.then_some(&mut rng));
        let mask = if cfg.dropout > 0.0 {
            Some(DropoutMask::sample(field, rays.num_points(), cfg.dropout, &mut rng)?)
        } else {
            None
        };
        let render = match render_field_rays(field, &rays, bg, VarianceWeighting::Squared, mask.as_ref()) {
            Ok(r) => r,
            Err(Error::NonFiniteActivation { .. }) => return Err(Error::Diverged { step, loss: f64::NAN }),
            Err(e) => return Err(e),
        };
        let step_objective = if step < cfg.warmup_steps { Objective::Vanilla } else { objective };
        let mut loss = T::zero();
        let grads: Vec<PixelGrad<T>> = render
            .pixels
            .iter()
            .zip(&batch.targets)
            .map(|(px, &y)| {
                let (l, mut g) = ray_loss(step_objective, px.color, px.color_variance[0], y, floor);
                loss += l * inv_b;
                g.color = g.color.map(|x| x * inv_b);
                g.color_variance *= inv_b;
                g
            })
            .collect();
        let extra = (objective == Objective::Active && cfg.lambda_density > 0.0).then(|| {
            let per_point = T::lit(cfg.lambda_density) / T::from_usize_lossy(cfg.render.samples);
            loss += per_point * render.outputs.sigma.sum() * inv_b;
            let mut e = FieldOutputGrad::zeros(rays.num_points(), field.has_beta());
            e.sigma = Array1::from_elem(rays.num_points(), per_point * inv_b);
            e
        });
        let loss = loss.as_f64();
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        losses.push(loss);
        let g = render_field_rays_backward(field, &rays, &render, &grads, extra.as_ref(), true)?
            .params
            .expect("requested parameter gradients");
        let lr = exp_decay(cfg.lr, cfg.lr_final, step, cfg.steps);
        opt.begin();
        for (k, (p, gk)) in field.param_slices_mut().into_iter().zip(g.param_slices()).enumerate() {
            opt.update(k, p, gk, |_| lr);
        }
    }
    Ok(TrainReport { losses })
}
