use std::path::{Path, PathBuf};

use radunc_core::scenegen::{make_pose_ring, CameraPose, Intrinsics, SceneModel};
use radunc_core::umethods::{LaplaceConfig, Representation, TrainConfig, DEFAULT_DROPOUT_PASSES, DEFAULT_DROPOUT_RATE, DEFAULT_ENSEMBLE_SIZE};
use radunc_core::Scalar;
use serde::{Deserialize, Serialize};

use crate::{HarnessError, Result};

/// Where the ground truth comes from when no dataset path is given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SceneSpec {
    Tabletop,
    SingleSphere {
        radius: f64,
        albedo: [f64; 3],
        background: [f64; 3],
    },
    Random {
        n: usize,
        seed: u64,
    },
    /// No primitives: every pixel shows `color`.
    Constant {
        color: [f64; 3],
    },
    Custom {
        scene: SceneModel<f64>,
    },
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec::Tabletop
    }
}

impl SceneSpec {
    pub fn build<T: Scalar>(&self) -> Result<SceneModel<T>> {
        let l = |v: [f64; 3]| v.map(T::lit);
        let scene = match self {
            SceneSpec::Tabletop => SceneModel::tabletop(),
            SceneSpec::SingleSphere {
                radius,
                albedo,
                background,
            } => SceneModel::single_sphere(T::lit(*radius), l(*albedo), l(*background)),
            SceneSpec::Random { n, seed } => SceneModel::random(*n, *seed),
            SceneSpec::Constant { color } => SceneModel::new(vec![], l(*color))?,
            SceneSpec::Custom { scene } => {
                let s: SceneModel<T> = serde_json::from_value(serde_json::to_value(scene)?)?;
                s.validate()?;
                s
            }
        };
        scene.validate()?;
        Ok(scene)
    }
}

/// Ring of cameras around the origin used for procedural scenes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraRig {
    pub views: usize,
    pub radius: f64,
    /// Radians above the xy-plane.
    pub elevation: f64,
    /// Horizontal field of view in radians.
    pub fov_x: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for CameraRig {
    fn default() -> Self {
        CameraRig {
            views: 20,
            radius: 3.0,
            elevation: 0.4,
            fov_x: 0.8,
            width: 64,
            height: 64,
        }
    }
}

impl CameraRig {
    pub fn cameras<T: Scalar>(&self) -> Result<Vec<CameraPose<T>>> {
        Ok(make_pose_ring(
            self.views,
            T::lit(self.radius),
            T::lit(self.elevation),
            [T::zero(); 3],
            Intrinsics::from_fov(T::lit(self.fov_x), self.width, self.height),
        )?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Vanilla,
    Active,
    McDropout,
    Laplace,
    Ensemble,
}

impl MethodName {
    pub fn as_str(self) -> &'static str {
        match self {
            MethodName::Vanilla => "vanilla",
            MethodName::Active => "active",
            MethodName::McDropout => "mc_dropout",
            MethodName::Laplace => "laplace",
            MethodName::Ensemble => "ensemble",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ViewsSplit {
    /// Every 10th view is test; each fraction of the remaining views is a train set.
    Fractions { fractions: Vec<f64> },
    /// Train on cameras with positive x, evaluate on the other half.
    Ood,
    /// The `n` views nearest view 0 in azimuth train, the next `n` test.
    FewView { n: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProtocolSpec {
    /// A single clean train/evaluate point.
    Clean,
    Aleatoric {
        #[serde(default = "default_noise")]
        noise: Vec<f64>,
        #[serde(default = "default_blur")]
        blur: Vec<usize>,
    },
    Views {
        #[serde(flatten)]
        split: ViewsSplit,
    },
    Clutter {
        #[serde(default = "default_proportions")]
        proportions: Vec<f64>,
    },
    Pose {
        #[serde(default = "default_shifts")]
        shifts: Vec<f64>,
        #[serde(default = "default_percentile")]
        percentile: f64,
        /// Index of the test view whose camera is perturbed.
        #[serde(default)]
        view: usize,
    },
}

impl Default for ProtocolSpec {
    fn default() -> Self {
        ProtocolSpec::Clean
    }
}

fn default_noise() -> Vec<f64> {
    vec![0.0, 0.1, 0.2]
}

fn default_blur() -> Vec<usize> {
    vec![1, 7, 15]
}

fn default_proportions() -> Vec<f64> {
    vec![0.0, 0.25, 0.5, 0.75, 1.0]
}

fn default_shifts() -> Vec<f64> {
    vec![0.0, 1e-6, 1e-4]
}

fn default_percentile() -> f64 {
    95.0
}

impl ProtocolSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ProtocolSpec::Clean => "clean",
            ProtocolSpec::Aleatoric { .. } => "aleatoric",
            ProtocolSpec::Views { .. } => "views",
            ProtocolSpec::Clutter { .. } => "clutter",
            ProtocolSpec::Pose { .. } => "pose",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DropoutSettings {
    pub passes: usize,
    pub rate: f64,
}

impl Default for DropoutSettings {
    fn default() -> Self {
        DropoutSettings {
            passes: DEFAULT_DROPOUT_PASSES,
            rate: DEFAULT_DROPOUT_RATE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub ause_steps: usize,
    pub auce_levels: usize,
    /// Write per-view render, uncertainty and depth PNGs.
    pub images: bool,
    /// Upper end of the uncertainty heatmap colour range (standard deviation).
    pub heatmap_max_std: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            ause_steps: 100,
            auce_levels: 100,
            images: true,
            heatmap_max_std: 0.5,
        }
    }
}

/// Everything that defines one experiment run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scene: SceneSpec,
    /// A `transforms.json` dataset to use instead of a procedural scene.
    pub dataset: Option<PathBuf>,
    pub rig: CameraRig,
    pub representation: Representation,
    pub methods: Vec<MethodName>,
    pub protocol: ProtocolSpec,
    pub train: TrainConfig,
    pub mc_dropout: DropoutSettings,
    pub laplace: LaplaceConfig,
    pub ensemble_size: usize,
    pub eval: EvalSettings,
    pub precision: Precision,
    /// Master seed; every random stream of the run is derived from it.
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scene: SceneSpec::default(),
            dataset: None,
            rig: CameraRig::default(),
            representation: Representation::Field,
            methods: vec![MethodName::Active],
            protocol: ProtocolSpec::default(),
            train: TrainConfig::default(),
            mc_dropout: DropoutSettings::default(),
            laplace: LaplaceConfig::default(),
            ensemble_size: DEFAULT_ENSEMBLE_SIZE,
            eval: EvalSettings::default(),
            precision: Precision::default(),
            seed: 0,
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.methods.is_empty() {
            return bad("at least one method is required".into());
        }
        for m in &self.methods {
            if matches!(m, MethodName::McDropout | MethodName::Laplace) && self.representation != Representation::Field {
                return bad(format!("{} needs representation = field", m.as_str()));
            }
        }
        if self.dataset.is_none() && (self.rig.views == 0 || self.rig.width == 0 || self.rig.height == 0) {
            return bad("camera rig needs views and a positive resolution".into());
        }
        if !(self.rig.radius > 0.0 && self.rig.fov_x > 0.0 && self.rig.fov_x < std::f64::consts::PI) {
            return bad("camera rig needs radius > 0 and fov_x in (0, π)".into());
        }
        if self.methods.contains(&MethodName::Ensemble) && self.ensemble_size < 2 {
            return bad("ensemble_size must be at least 2".into());
        }
        if self.methods.contains(&MethodName::McDropout) && (self.mc_dropout.passes < 2 || !(0.0..1.0).contains(&self.mc_dropout.rate)) {
            return bad("mc_dropout needs passes >= 2 and rate in [0, 1)".into());
        }
        if self.methods.contains(&MethodName::Laplace) && !(self.laplace.prior_precision > 0.0) {
            return bad("laplace prior_precision must be positive".into());
        }
        if self.eval.ause_steps == 0 || self.eval.auce_levels == 0 {
            return bad("ause_steps and auce_levels must be positive".into());
        }
        match &self.protocol {
            ProtocolSpec::Clean => {}
            ProtocolSpec::Aleatoric { noise, blur } => {
                if noise.is_empty() && blur.is_empty() {
                    return bad("aleatoric protocol needs noise or blur levels".into());
                }
                if noise.iter().any(|&n| !(n >= 0.0 && n.is_finite())) {
                    return bad("noise scales must be finite and >= 0".into());
                }
                if blur.iter().any(|&k| k == 0 || k % 2 == 0) {
                    return bad("blur kernel sizes must be odd and positive".into());
                }
            }
            ProtocolSpec::Views { split } => match split {
                ViewsSplit::Fractions { fractions } => {
                    if fractions.is_empty() || fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
                        return bad("view fractions must lie in (0, 1]".into());
                    }
                }
                ViewsSplit::Ood => {}
                ViewsSplit::FewView { n } => {
                    if *n == 0 {
                        return bad("few_view needs n >= 1".into());
                    }
                }
            },
            ProtocolSpec::Clutter { proportions } => {
                if self.dataset.is_some() {
                    return bad("the clutter protocol needs a procedural scene".into());
                }
                if proportions.is_empty() || proportions.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return bad("clutter proportions must lie in [0, 1]".into());
                }
            }
            ProtocolSpec::Pose { shifts, percentile, .. } => {
                if self.representation != Representation::Field {
                    return bad("the pose protocol needs representation = field".into());
                }
                if shifts.is_empty() || shifts.iter().any(|s| !s.is_finite()) {
                    return bad("pose shifts must be finite".into());
                }
                if !(0.0..=100.0).contains(percentile) {
                    return bad("percentile must lie in [0, 100]".into());
                }
            }
        }
        self.train.validate().map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Training settings with the master seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }
}
