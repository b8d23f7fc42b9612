//! Experiment plumbing: dataset generation and import, walk simulation,
//! evaluation reports and file-based configuration.

pub mod config;
pub mod dataset;
pub mod eval;
pub mod import;
pub mod train;
pub mod walk;

use thiserror::Error;

use crate::channel::ChannelError;
use crate::cirproc::CirProcError;
use crate::imusim::ImuError;
use crate::models::ModelError;
use crate::ranging::RangingError;

pub use config::{Config, TrainOverrides};
pub use dataset::{generate_datasets, split_cir_rows, split_imu_windows, stream_rng, DatasetCounts, DatasetManifest};
pub use eval::{evaluate, evaluate_walks, EvalParams, EvalReport};
pub use import::{import_cir_corpus, ImportStats, SchemaConfig};
pub use walk::{measure_transition_delay, run_walk, Classifiers, ExperimentParams, PoseEstimate, WalkEnv, WalkScenario};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Invalid(String),
    #[error("column {0:?} not found")]
    UnmappedColumn(String),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    CirProc(#[from] CirProcError),
    #[error(transparent)]
    Imu(#[from] ImuError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ranging(#[from] RangingError),
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config: {0}")]
    Toml(#[from] toml::de::Error),
}

impl HarnessError {
    /// True for failures of the file system rather than of the inputs.
    pub fn is_io(&self) -> bool {
        match self {
            HarnessError::Io(_) => true,
            HarnessError::Csv(e) => e.is_io_error(),
            HarnessError::Channel(ChannelError::Io(_)) | HarnessError::Imu(ImuError::Io(_)) => true,
            HarnessError::CirProc(CirProcError::Io(_)) | HarnessError::Ranging(RangingError::Io(_)) => true,
            HarnessError::Model(ModelError::Neural(utgpose_neural::NeuralError::Io(_))) => true,
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
