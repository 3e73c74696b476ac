use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::train_cloud::{raster_config, train_cloud};
use super::train_field::{train_field, Objective, TrainReport};
use crate::adfield::MlpField;
use crate::gsplat::{rasterize, GaussianCloud};
use crate::scenegen::{CameraPose, ViewDataset};
use crate::volrend::{render_field_image, DropoutSpec, Model, RenderConfig, RenderOutput};
use crate::{geom, seed, Error, Image, Result, Scalar};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    #[default]
    Field,
    Cloud,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrainedModel<T> {
    Field(MlpField<T>),
    Cloud(GaussianCloud<T>),
}

impl<T: Scalar> TrainedModel<T> {
    pub fn as_model(&self) -> Model<'_, T> {
        match self {
            TrainedModel::Field(f) => Model::Field(f),
            TrainedModel::Cloud(c) => Model::Cloud(c),
        }
    }

    pub fn representation(&self) -> Representation {
        match self {
            TrainedModel::Field(_) => Representation::Field,
            TrainedModel::Cloud(_) => Representation::Cloud,
        }
    }
}

/// Per-pixel predictive mean and variance of colour and depth. Depth is the distance along
/// the pixel's unit ray for both representations.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertainPrediction<T> {
    pub mean: Image<T>,
    /// Per-channel colour variance.
    pub variance: Image<T>,
    pub depth: Image<T>,
    pub depth_variance: Image<T>,
    pub accumulation: Image<T>,
}

impl<T: Scalar> UncertainPrediction<T> {
    /// A single render; its composited variances are kept only when `with_variance` is set.
    pub fn from_render(out: RenderOutput<T>, with_variance: bool) -> Self {
        let (w, h) = (out.width(), out.height());
        UncertainPrediction {
            mean: out.color,
            variance: if with_variance { out.color_variance } else { Image::zeros(w, h, 3) },
            depth: out.depth,
            depth_variance: if with_variance { out.depth_variance } else { Image::zeros(w, h, 1) },
            accumulation: out.accumulation,
        }
    }

    /// Sample mean and biased sample variance `E[x²] − E[x]²` over renders (at least two).
    pub fn from_samples(samples: &[RenderOutput<T>]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 samples, got {}", samples.len())));
        }
        let (mean, variance) = moments(samples.iter().map(|s| &s.color))?;
        let (depth, depth_variance) = moments(samples.iter().map(|s| &s.depth))?;
        let (accumulation, _) = moments(samples.iter().map(|s| &s.accumulation))?;
        Ok(UncertainPrediction {
            mean,
            variance,
            depth,
            depth_variance,
            accumulation,
        })
    }

    pub fn width(&self) -> usize {
        self.mean.width()
    }

    pub fn height(&self) -> usize {
        self.mean.height()
    }

    /// Average colour variance over pixels and channels.
    pub fn mean_variance(&self) -> f64 {
        self.variance.mean().as_f64()
    }

    /// Per-pixel colour variance averaged over channels.
    pub fn pixel_variance(&self) -> Vec<f64> {
        self.variance.data().chunks(3).map(|c| c.iter().map(|x| x.as_f64()).sum::<f64>() / 3.0).collect()
    }
}

fn moments<'a, T: Scalar>(images: impl Iterator<Item = &'a Image<T>>) -> Result<(Image<T>, Image<T>)> {
    let images: Vec<&Image<T>> = images.collect();
    let first = images[0];
    for img in &images[1..] {
        first.check_same_shape(img, "sample")?;
    }
    let m = T::from_usize_lossy(images.len());
    // moments of x − x₀, so identical samples give exactly zero variance
    let mut shift = Image::zeros(first.width(), first.height(), first.channels());
    let mut second = shift.clone();
    for img in &images {
        for ((a, b), (&x, &x0)) in shift.data_mut().iter_mut().zip(second.data_mut().iter_mut()).zip(img.data().iter().zip(first.data())) {
            let d = x - x0;
            *a += d;
            *b += d * d;
        }
    }
    shift.data_mut().iter_mut().for_each(|x| *x /= m);
    let var = Image::from_vec(
        first.width(),
        first.height(),
        first.channels(),
        second.data().iter().zip(shift.data()).map(|(&s, &mu): (&T, &T)| (s / m - mu * mu).max(T::zero())).collect(),
    )?;
    let mean = Image::from_vec(
        first.width(),
        first.height(),
        first.channels(),
        shift.data().iter().zip(first.data()).map(|(&d, &x0)| x0 + d).collect(),
    )?;
    Ok((mean, var))
}

/// Rescales a z-depth render to distances along unit rays.
fn z_to_distance<T: Scalar>(camera: &CameraPose<T>, out: &mut RenderOutput<T>) {
    for v in 0..camera.height {
        for u in 0..camera.width {
            let s = geom::norm(camera.pixel_direction_camera(u, v));
            let d = out.depth.get(u, v, 0);
            out.depth.set(u, v, 0, d * s);
            let dv = out.depth_variance.get(u, v, 0);
            out.depth_variance.set(u, v, 0, dv * s * s);
        }
    }
}

/// Deterministic render of a trained model, depth as distance along unit rays.
pub fn render_model<T: Scalar>(model: &TrainedModel<T>, camera: &CameraPose<T>, cfg: &RenderConfig) -> Result<RenderOutput<T>> {
    match model {
        TrainedModel::Field(f) => render_field_image(f, camera, &RenderConfig { stratified: false, ..cfg.clone() }, None),
        TrainedModel::Cloud(c) => {
            let rc = raster_config(&TrainConfig {
                render: cfg.clone(),
                ..TrainConfig::default()
            });
            let mut out = rasterize(c, camera, &rc)?.output;
            z_to_distance(camera, &mut out);
            Ok(out)
        }
    }
}

/// Single-render prediction; rendered variances are kept when `with_variance` is set.
pub fn predict_model<T: Scalar>(
    model: &TrainedModel<T>,
    camera: &CameraPose<T>,
    cfg: &RenderConfig,
    with_variance: bool,
) -> Result<UncertainPrediction<T>> {
    Ok(UncertainPrediction::from_render(render_model(model, camera, cfg)?, with_variance))
}

/// Trains with the photometric loss only.
pub fn train_vanilla<T: Scalar>(
    dataset: &ViewDataset<T>,
    cfg: &TrainConfig,
    representation: Representation,
) -> Result<(TrainedModel<T>, TrainReport)> {
    train(dataset, cfg, representation, Objective::Vanilla)
}

pub fn train<T: Scalar>(
    dataset: &ViewDataset<T>,
    cfg: &TrainConfig,
    representation: Representation,
    objective: Objective,
) -> Result<(TrainedModel<T>, TrainReport)> {
    Ok(match representation {
        Representation::Field => {
            let (f, r) = train_field(dataset, cfg, objective)?;
            (TrainedModel::Field(f), r)
        }
        Representation::Cloud => {
            let (c, r) = train_cloud(dataset, cfg, objective)?;
            (TrainedModel::Cloud(c), r)
        }
    })
}

pub fn train_active_field<T: Scalar>(dataset: &ViewDataset<T>, cfg: &TrainConfig) -> Result<(MlpField<T>, TrainReport)> {
    train_field(dataset, cfg, Objective::Active)
}

pub fn train_active_cloud<T: Scalar>(dataset: &ViewDataset<T>, cfg: &TrainConfig) -> Result<(GaussianCloud<T>, TrainReport)> {
    train_cloud(dataset, cfg, Objective::Active)
}

pub const DEFAULT_DROPOUT_PASSES: usize = 5;
pub const DEFAULT_DROPOUT_RATE: f64 = 0.2;

/// `m` renders with independent dropout masks on the last-layer inputs.
pub fn predict_mc_dropout<T: Scalar>(
    field: &MlpField<T>,
    camera: &CameraPose<T>,
    cfg: &RenderConfig,
    m: usize,
    p: f64,
    seed_value: u64,
) -> Result<UncertainPrediction<T>> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!("MC-Dropout needs at least 2 passes, got {m}")));
    }
    let cfg = RenderConfig { stratified: false, ..cfg.clone() };
    let renders = (0..m)
        .map(|k| {
            render_field_image(
                field,
                camera,
                &cfg,
                Some(DropoutSpec {
                    p,
                    seed: seed::derive(seed_value, k as u64),
                }),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    UncertainPrediction::from_samples(&renders)
}

/// Independently initialized models of one representation.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble<T> {
    pub members: Vec<TrainedModel<T>>,
    pub seeds: Vec<u64>,
}

pub const DEFAULT_ENSEMBLE_SIZE: usize = 5;

/// Member `k` trains with seed `derive(cfg.seed, k)`.
pub fn train_ensemble<T: Scalar>(
    dataset: &ViewDataset<T>,
    cfg: &TrainConfig,
    representation: Representation,
    m: usize,
) -> Result<(Ensemble<T>, Vec<TrainReport>)> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!("an ensemble needs at least 2 members, got {m}")));
    }
    let mut members = Vec::with_capacity(m);
    let mut seeds = Vec::with_capacity(m);
    let mut reports = Vec::with_capacity(m);
    for k in 0..m {
        let s = seed::derive(cfg.seed, k as u64);
        let member_cfg = TrainConfig { seed: s, ..cfg.clone() };
        let (model, report) = train_vanilla(dataset, &member_cfg, representation).map_err(|e| Error::MemberFailed {
            member: k,
            source: Box::new(e),
        })?;
        members.push(model);
        seeds.push(s);
        reports.push(report);
    }
    Ok((Ensemble { members, seeds }, reports))
}

pub fn predict_ensemble<T: Scalar>(ensemble: &Ensemble<T>, camera: &CameraPose<T>, cfg: &RenderConfig) -> Result<UncertainPrediction<T>> {
    let renders = ensemble
        .members
        .iter()
        .map(|m| render_model(m, camera, cfg))
        .collect::<Result<Vec<_>>>()?;
    UncertainPrediction::from_samples(&renders)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn out(c: f64, d: f64) -> RenderOutput<f64> {
        RenderOutput {
            color: Image::filled(2, 2, 3, c),
            color_variance: Image::zeros(2, 2, 3),
            depth: Image::filled(2, 2, 1, d),
            depth_variance: Image::zeros(2, 2, 1),
            accumulation: Image::filled(2, 2, 1, 1.0),
        }
    }

    #[test]
    fn two_sample_moments() {
        let p = UncertainPrediction::from_samples(&[out(0.2, 1.0), out(0.4, 3.0)]).unwrap();
        assert!((p.mean.get(0, 0, 0) - 0.3).abs() < 1e-15);
        assert!((p.variance.get(1, 1, 2) - 0.01).abs() < 1e-15);
        assert!((p.depth.get(0, 1, 0) - 2.0).abs() < 1e-15);
        assert!((p.depth_variance.get(0, 1, 0) - 1.0).abs() < 1e-15);
        assert!(UncertainPrediction::from_samples(&[out(0.2, 1.0)]).is_err());
    }

    #[test]
    fn identical_samples_have_zero_variance_and_order_does_not_matter() {
        let p = UncertainPrediction::from_samples(&[out(0.7, 2.0), out(0.7, 2.0), out(0.7, 2.0)]).unwrap();
        assert!(p.variance.data().iter().all(|&v| v == 0.0));
        let a = UncertainPrediction::from_samples(&[out(0.1, 1.0), out(0.5, 2.0), out(0.3, 4.0)]).unwrap();
        let b = UncertainPrediction::from_samples(&[out(0.3, 4.0), out(0.1, 1.0), out(0.5, 2.0)]).unwrap();
        for (x, y) in a.variance.data().iter().zip(b.variance.data()) {
            assert!((x - y).abs() < 1e-15);
        }
    }
}
