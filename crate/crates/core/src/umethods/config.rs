use serde::{Deserialize, Serialize};

use crate::adfield::FieldConfig;
use crate::gsplat::DensifyConfig;
use crate::volrend::RenderConfig;
use crate::{Error, Result};

/// Optimization settings shared by every method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    /// Rays per step for fields. Clouds render one whole train view per step.
    pub rays_per_batch: usize,
    pub lr: f64,
    /// Field learning rate at the last step (log-linear decay from `lr`).
    pub lr_final: f64,
    /// L1 weight on sample densities (active field).
    pub lambda_density: f64,
    /// L1 weight on opacities (active cloud).
    pub lambda_opacity: f64,
    pub lambda_ssim: f64,
    /// Added to the rendered variance inside the training likelihood.
    pub variance_floor: f64,
    /// Dropout rate on the last-layer inputs during training (0 disables it).
    pub dropout: f64,
    /// Active fields train on the plain squared error for this many initial steps.
    pub warmup_steps: usize,
    pub seed: u64,
    pub field: FieldConfig,
    pub render: RenderConfig,
    pub cloud: CloudConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            rays_per_batch: 1024,
            lr: 1e-3,
            lr_final: 1e-3,
            lambda_density: 0.01,
            lambda_opacity: 0.01,
            lambda_ssim: 0.2,
            variance_floor: 1e-4,
            dropout: 0.0,
            warmup_steps: 200,
            seed: 0,
            field: FieldConfig::default(),
            render: RenderConfig {
                stratified: true,
                ..RenderConfig::default()
            },
            cloud: CloudConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.rays_per_batch == 0 {
            return bad("rays_per_batch must be positive");
        }
        if !(self.lr > 0.0 && self.lr_final > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.lambda_density >= 0.0 && self.lambda_opacity >= 0.0 && self.variance_floor >= 0.0) {
            return bad("regularizer strengths must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.lambda_ssim) {
            return bad("lambda_ssim must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        self.render.validate()
    }
}

/// Gaussian-cloud initialization, parameter-group learning rates, and density control.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CloudConfig {
    pub init_points: usize,
    pub init_opacity: f64,
    pub beta_init: f64,
    pub beta_floor: f64,
    /// Mean learning rates are multiplied by the scene extent.
    pub lr_mean: f64,
    pub lr_mean_final: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,
    pub lr_opacity: f64,
    pub lr_color: f64,
    pub lr_beta: f64,
    pub densify_from: usize,
    /// Last step (exclusive) at which density control runs; 0 disables it.
    pub densify_until: usize,
    pub densify_every: usize,
    /// Absolute thresholds; derived from the scene extent when absent.
    pub densify: Option<DensifyConfig>,
    pub max_gaussians: usize,
}

impl Default for CloudConfig {
    fn default() -> Self {
        CloudConfig {
            init_points: 2000,
            init_opacity: 0.1,
            beta_init: 0.01,
            beta_floor: 1e-4,
            lr_mean: 1.6e-4,
            lr_mean_final: 1.6e-6,
            lr_scale: 5e-3,
            lr_rotation: 1e-3,
            lr_opacity: 5e-2,
            lr_color: 2.5e-3,
            lr_beta: 5e-3,
            densify_from: 100,
            densify_until: 1000,
            densify_every: 100,
            densify: None,
            max_gaussians: 20_000,
        }
    }
}
