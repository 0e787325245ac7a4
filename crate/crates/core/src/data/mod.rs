//! Source ingestion, subvolume datasets, resolution pyramids and REV analysis.

use std::path::PathBuf;

use thiserror::Error;

use crate::moments::MomentError;
use crate::volume::VolumeError;

pub mod dataset;
pub mod resample;
pub mod rev;
pub mod rocks;
pub mod synthetic;

pub use dataset::{
    augment_rotations, crops_per_axis, extract_subvolumes, read_dataset, write_dataset, Provenance,
    SampleEntry, SampleLabel, SubvolumeDataset,
};
pub use resample::{build_pyramid, downsample_half, downsample_to, resample_volume, ResolutionPyramid};
pub use rev::{rev_curve, RevRow};
pub use rocks::RockSource;
pub use synthetic::{synthetic_dataset, GaussianFieldSpec, SyntheticCohort, SyntheticParams, TruncatedGaussian};

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Moment(#[from] MomentError),
    #[error("crop edge {edge} exceeds source extent {extent}")]
    EdgeTooLarge { edge: usize, extent: usize },
    #[error("expected a cubic volume, got {0:?}")]
    NotCubic([usize; 3]),
    #[error("pyramid requires a 64-voxel (or power-of-two >= 4) cubic edge, got {0}")]
    PyramidEdge(usize),
    #[error("dataset manifest not found at {0}")]
    MissingManifest(PathBuf),
    #[error("corrupt dataset manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    InvalidArgument(String),
}
