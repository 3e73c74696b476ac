//! Uncertainty pipelines: vanilla and active training, MC-Dropout, Laplace, ensembles.

mod adam;
mod config;
mod laplace;
mod predict;
mod train_cloud;
mod train_field;

pub use adam::{exp_decay, Adam};
pub use config::{CloudConfig, TrainConfig};
pub use laplace::{
    accumulate_diag_ggn, fit_laplace, laplace_mode, posterior_precision, predict_laplace, LaplaceConfig, LaplacePosterior,
};
pub use predict::{
    predict_ensemble, predict_mc_dropout, predict_model, render_model, train, train_active_cloud, train_active_field,
    train_ensemble, train_vanilla, Ensemble, Representation, TrainedModel, UncertainPrediction, DEFAULT_DROPOUT_PASSES,
    DEFAULT_DROPOUT_RATE, DEFAULT_ENSEMBLE_SIZE,
};
pub use train_cloud::{fit_cloud, scene_extent, train_cloud};
pub use train_field::{fit_field, train_field, Objective, TrainReport};
