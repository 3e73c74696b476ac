//! Experiment protocols, evaluation, reports and the `radunc` command line.

pub mod cli;
pub mod config;
mod data;
pub mod eval;
pub mod methods;
pub mod protocols;
pub mod report;

pub use config::{CameraRig, ExperimentConfig, MethodName, Precision, ProtocolSpec, SceneSpec, ViewsSplit};
pub use data::{base_dataset, clean_dataset};
pub use eval::{evaluate_view, ViewScores};
pub use methods::{fit_method, FittedMethod};
pub use protocols::{
    run_experiment, run_protocol, run_protocol_aleatoric, run_protocol_clutter, run_protocol_pose, run_protocol_views,
};
pub use report::{emit_report, write_artifacts, Artifact, ResultRow, ResultsTable, CSV_COLUMNS};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Bad configuration or arguments; the command line exits with status 1.
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] radunc_core::Error),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<std::path::PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
