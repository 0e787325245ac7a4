//! Experiment configuration, generation entry point and orchestration.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::conditioning::ConditioningError;
use crate::corrfit::FitError;
use crate::data::DataError;
use crate::eval::EvalError;
use crate::flow::FlowError;
use crate::moments::MomentError;
use crate::progan::ProGanError;
use crate::training::TrainError;
use crate::volume::VolumeError;

pub mod config;
pub mod experiment;
pub mod generate;
pub mod templates;

pub use config::{
    DataConfig, EvaluateConfig, ExperimentConfig, GenerateConfig, LabelSource, PlanPreset, SourceConfig, SweepConfig,
    TargetConfig, TrainConfig,
};
pub use experiment::{prepare_dataset, run_experiment, ExperimentArtifacts, ExperimentReport, PreparedSummary, RunStatus};
pub use generate::{generate, generate_with, noise_edge_for, valid_edges, GenerateRequest, GeneratedBatch, GenerationManifest};
pub use templates::{template, TEMPLATE_NAMES};

/// Broad failure class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Training,
    Evaluation,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Config => 2,
            ErrorCategory::Data => 3,
            ErrorCategory::Training => 4,
            ErrorCategory::Evaluation => 5,
        }
    }
}

#[derive(Debug, Error)]
pub enum WorkbenchError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unsupported edge {edge}; valid edges are {valid:?}")]
    UnsupportedEdge { edge: usize, valid: Vec<usize> },
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{stage} stage failed: {source}")]
    Stage { stage: String, source: Box<WorkbenchError> },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Moment(#[from] MomentError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Conditioning(#[from] ConditioningError),
    #[error(transparent)]
    Network(#[from] ProGanError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

impl WorkbenchError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        WorkbenchError::Io { path: path.to_path_buf(), source }
    }

    pub fn category(&self) -> ErrorCategory {
        use ErrorCategory::*;
        match self {
            WorkbenchError::Config(_) | WorkbenchError::UnsupportedEdge { .. } => Config,
            WorkbenchError::Stage { source, .. } => source.category(),
            WorkbenchError::Conditioning(
                ConditioningError::SchemaMismatch(_) | ConditioningError::RockTypeOutOfRange { .. } | ConditioningError::KeepTooLarge { .. },
            ) => Config,
            WorkbenchError::Train(TrainError::InvalidPlan(_)) => Config,
            WorkbenchError::Flow(FlowError::InvalidTau(_) | FlowError::InvalidForce(_)) => Config,
            WorkbenchError::Eval(EvalError::UnknownMetric(_)) => Config,
            WorkbenchError::Train(TrainError::Data(_) | TrainError::Checkpoint { .. }) => Data,
            WorkbenchError::Train(TrainError::Eval(_)) => Evaluation,
            WorkbenchError::Train(_) | WorkbenchError::Network(_) => Training,
            WorkbenchError::Eval(_) | WorkbenchError::Flow(_) | WorkbenchError::Fit(_) => Evaluation,
            WorkbenchError::Io { .. }
            | WorkbenchError::Data(_)
            | WorkbenchError::Volume(_)
            | WorkbenchError::Moment(_)
            | WorkbenchError::Conditioning(_) => Data,
        }
    }
}
