use std::fs;
use std::path::Path;

use radunc_core::adfield::MlpField;
use radunc_core::gsplat::GaussianCloud;
use radunc_core::scenegen::{CameraPose, ViewDataset};
use radunc_core::umethods::{
    fit_laplace, predict_ensemble, predict_laplace, predict_mc_dropout, predict_model, train, train_ensemble, Ensemble,
    LaplaceConfig, LaplacePosterior, Objective, Representation, TrainReport, TrainedModel, UncertainPrediction,
};
use radunc_core::volrend::RenderConfig;
use radunc_core::{seed, Scalar};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, MethodName};
use crate::{HarnessError, Result};

/// A trained model together with what its method needs at prediction time.
#[derive(Clone, Debug, PartialEq)]
pub enum FittedMethod<T> {
    /// Vanilla (no variance) or Active (rendered variance).
    Single { model: TrainedModel<T>, with_variance: bool },
    McDropout { field: MlpField<T>, passes: usize, rate: f64, seed: u64 },
    Laplace { field: MlpField<T>, posterior: LaplacePosterior<T>, config: LaplaceConfig },
    Ensemble(Ensemble<T>),
}

/// Trains `method` on the train views of `dataset`.
pub fn fit_method<T: Scalar>(
    method: MethodName,
    dataset: &ViewDataset<T>,
    cfg: &ExperimentConfig,
) -> Result<(FittedMethod<T>, Vec<TrainReport>)> {
    let tc = cfg.train_config();
    let repr = cfg.representation;
    Ok(match method {
        MethodName::Vanilla | MethodName::Active => {
            let objective = if method == MethodName::Active { Objective::Active } else { Objective::Vanilla };
            let (model, report) = train(dataset, &tc, repr, objective)?;
            (
                FittedMethod::Single {
                    model,
                    with_variance: objective == Objective::Active,
                },
                vec![report],
            )
        }
        MethodName::McDropout => {
            let tc = radunc_core::umethods::TrainConfig {
                dropout: cfg.mc_dropout.rate,
                ..tc
            };
            let (field, report) = train_field_only(dataset, &tc)?;
            (
                FittedMethod::McDropout {
                    field,
                    passes: cfg.mc_dropout.passes,
                    rate: cfg.mc_dropout.rate,
                    seed: seed::derive_str(cfg.seed, "mc-dropout"),
                },
                vec![report],
            )
        }
        MethodName::Laplace => {
            let (field, report) = train_field_only(dataset, &tc)?;
            let config = LaplaceConfig {
                seed: seed::derive_str(cfg.seed, "laplace"),
                ..cfg.laplace.clone()
            };
            let posterior = fit_laplace(&field, dataset, &tc.render, &config)?;
            (FittedMethod::Laplace { field, posterior, config }, vec![report])
        }
        MethodName::Ensemble => {
            let (ens, reports) = train_ensemble(dataset, &tc, repr, cfg.ensemble_size)?;
            (FittedMethod::Ensemble(ens), reports)
        }
    })
}

fn train_field_only<T: Scalar>(dataset: &ViewDataset<T>, tc: &radunc_core::umethods::TrainConfig) -> Result<(MlpField<T>, TrainReport)> {
    match train(dataset, tc, Representation::Field, Objective::Vanilla)? {
        (TrainedModel::Field(f), r) => Ok((f, r)),
        _ => unreachable!("field training returns a field"),
    }
}

impl<T: Scalar> FittedMethod<T> {
    pub fn predict(&self, camera: &CameraPose<T>, render: &RenderConfig) -> Result<UncertainPrediction<T>> {
        Ok(match self {
            FittedMethod::Single { model, with_variance } => predict_model(model, camera, render, *with_variance)?,
            FittedMethod::McDropout { field, passes, rate, seed } => predict_mc_dropout(field, camera, render, *passes, *rate, *seed)?,
            FittedMethod::Laplace { field, posterior, config } => predict_laplace(field, posterior, camera, render, config)?,
            FittedMethod::Ensemble(ens) => predict_ensemble(ens, camera, render)?,
        })
    }

    /// The field whose pose sensitivity is measured (the first member for ensembles).
    pub fn field(&self) -> Option<&MlpField<T>> {
        match self {
            FittedMethod::Single {
                model: TrainedModel::Field(f),
                ..
            } => Some(f),
            FittedMethod::Single { .. } => None,
            FittedMethod::McDropout { field, .. } | FittedMethod::Laplace { field, .. } => Some(field),
            FittedMethod::Ensemble(ens) => match ens.members.first() {
                Some(TrainedModel::Field(f)) => Some(f),
                _ => None,
            },
        }
    }

    /// Writes the model files into `dir` (created if needed).
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let manifest = match self {
            FittedMethod::Single { model, with_variance } => {
                save_model(model, &dir.join("model.json"))?;
                SavedMethod::Single {
                    representation: model.representation(),
                    with_variance: *with_variance,
                }
            }
            FittedMethod::McDropout { field, passes, rate, seed } => {
                field.save(dir.join("model.json"))?;
                SavedMethod::McDropout {
                    passes: *passes,
                    rate: *rate,
                    seed: *seed,
                }
            }
            FittedMethod::Laplace { field, posterior, config } => {
                field.save(dir.join("model.json"))?;
                write(&dir.join("posterior.json"), &serde_json::to_string(posterior)?)?;
                SavedMethod::Laplace { config: config.clone() }
            }
            FittedMethod::Ensemble(ens) => {
                for (k, m) in ens.members.iter().enumerate() {
                    save_model(m, &dir.join(format!("member_{k}.json")))?;
                }
                SavedMethod::Ensemble {
                    representation: ens.members[0].representation(),
                    seeds: ens.seeds.clone(),
                }
            }
        };
        write(&dir.join("method.json"), &serde_json::to_string_pretty(&manifest)?)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("method.json");
        let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
        Ok(match serde_json::from_str::<SavedMethod>(&text)? {
            SavedMethod::Single {
                representation,
                with_variance,
            } => FittedMethod::Single {
                model: load_model(representation, &dir.join("model.json"))?,
                with_variance,
            },
            SavedMethod::McDropout { passes, rate, seed } => FittedMethod::McDropout {
                field: MlpField::load(dir.join("model.json"))?,
                passes,
                rate,
                seed,
            },
            SavedMethod::Laplace { config } => {
                let p = dir.join("posterior.json");
                let text = fs::read_to_string(&p).map_err(|e| HarnessError::io(&p, e))?;
                FittedMethod::Laplace {
                    field: MlpField::load(dir.join("model.json"))?,
                    posterior: serde_json::from_str(&text)?,
                    config,
                }
            }
            SavedMethod::Ensemble { representation, seeds } => {
                let members = (0..seeds.len())
                    .map(|k| load_model(representation, &dir.join(format!("member_{k}.json"))))
                    .collect::<Result<Vec<_>>>()?;
                FittedMethod::Ensemble(Ensemble { members, seeds })
            }
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
enum SavedMethod {
    Single { representation: Representation, with_variance: bool },
    McDropout { passes: usize, rate: f64, seed: u64 },
    Laplace { config: LaplaceConfig },
    Ensemble { representation: Representation, seeds: Vec<u64> },
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

fn save_model<T: Scalar>(model: &TrainedModel<T>, path: &Path) -> Result<()> {
    match model {
        TrainedModel::Field(f) => f.save(path)?,
        TrainedModel::Cloud(c) => c.save(path)?,
    }
    Ok(())
}

fn load_model<T: Scalar>(representation: Representation, path: &Path) -> Result<TrainedModel<T>> {
    Ok(match representation {
        Representation::Field => TrainedModel::Field(MlpField::load(path)?),
        Representation::Cloud => TrainedModel::Cloud(GaussianCloud::load(path)?),
    })
}
