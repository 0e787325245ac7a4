//! Conditional progressive-growing GAN for 3D binary rock volumes, with
//! geostatistical descriptors, multi-scale SWD and a D3Q19 permeability solver.

pub mod conditioning;
pub mod corrfit;
pub mod data;
pub mod eval;
pub mod flow;
pub mod moments;
pub mod progan;
pub mod stats;
pub mod training;
pub mod volume;
pub mod workbench;

pub use conditioning::{ConditionLabel, ConditionSchema, Conditioner, CorrLengthMode, LabelEncoding, LambdaLabel};
pub use data::{SubvolumeDataset, SyntheticCohort};
pub use eval::{CohortReport, SwdReport};
pub use flow::{FlowConfig, FlowResult};
pub use moments::{CorrelationCurve, CurveAxis, MomentSummary};
pub use progan::{Discriminator, Generator, GeneratorSpec, StagePhase};
pub use training::{TrainPlan, Trainer};
pub use volume::{Axis, VoxelVolume};
pub use workbench::{ErrorCategory, ExperimentConfig, WorkbenchError};
