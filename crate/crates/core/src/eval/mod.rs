//! Cohort statistics, multi-scale SWD and report plots.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corrfit::{axial_correlation_lengths, correlation_length};
use crate::flow::{permeability_all_axes, FlowConfig};
use crate::moments::{porosity, specific_surface_area, CurveAxis};
use crate::stats::BoxSummary;
use crate::volume::{VolumeError, VoxelVolume};

pub mod plot;
pub mod swd;

pub use swd::{
    extract_slice_patches, laplacian_levels, multiscale_swd, reconstruct_from_levels, sliced_wasserstein,
    DescriptorSet, SwdConfig, SwdLevel, SwdReport,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("edge {0} is not 16 times a power of two")]
    LevelEdge(usize),
    #[error("edge mismatch: {0} vs {1}")]
    EdgeMismatch(usize, usize),
    #[error("descriptor dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("unknown metric '{0}'")]
    UnknownMetric(String),
    #[error("plot error: {0}")]
    Plot(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("serialization error: {0}")]
    Serialize(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

impl EvalError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        EvalError::Io { path: path.to_path_buf(), source }
    }
}

/// Which per-sample measurements a cohort comparison computes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSelection {
    pub swd: bool,
    pub porosity: bool,
    pub lambda: bool,
    pub sa: bool,
    /// Permeability is computed only when a flow configuration is given.
    pub permeability: Option<FlowConfig>,
}

impl Default for MetricSelection {
    fn default() -> Self {
        Self { swd: true, porosity: true, lambda: true, sa: true, permeability: None }
    }
}

impl FromStr for MetricSelection {
    type Err = EvalError;

    /// Comma-separated subset of `swd,phi,lambda,sa,perm`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut m = MetricSelection { swd: false, porosity: false, lambda: false, sa: false, permeability: None };
        for item in s.split(',').map(str::trim).filter(|x| !x.is_empty()) {
            match item {
                "swd" => m.swd = true,
                "phi" | "porosity" => m.porosity = true,
                "lambda" => m.lambda = true,
                "sa" => m.sa = true,
                "perm" | "permeability" => m.permeability = Some(FlowConfig::default()),
                other => return Err(EvalError::UnknownMetric(other.to_string())),
            }
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFailure {
    pub index: usize,
    pub reason: String,
}

/// Raw per-sample values of one metric with their box-plot summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricColumn {
    pub name: String,
    pub values: Vec<Option<f64>>,
    pub failures: Vec<SampleFailure>,
    pub summary: Option<BoxSummary>,
}

impl MetricColumn {
    fn from_results(name: &str, results: Vec<Result<f64, String>>) -> Self {
        let mut values = Vec::with_capacity(results.len());
        let mut failures = Vec::new();
        for (index, r) in results.into_iter().enumerate() {
            match r {
                Ok(x) => values.push(Some(x)),
                Err(reason) => {
                    values.push(None);
                    failures.push(SampleFailure { index, reason });
                }
            }
        }
        let present: Vec<f64> = values.iter().flatten().copied().collect();
        let summary = (!present.is_empty()).then(|| BoxSummary::of(&present));
        Self { name: name.to_string(), values, failures, summary }
    }

    pub fn present(&self) -> Vec<f64> {
        self.values.iter().flatten().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortStats {
    pub name: String,
    pub count: usize,
    /// Voxel edge in micrometres, used for unit conversions.
    pub voxel_size: f64,
    pub metrics: Vec<MetricColumn>,
}

impl CohortStats {
    pub fn metric(&self, name: &str) -> Option<&MetricColumn> {
        self.metrics.iter().find(|m| m.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSwd {
    pub reference: String,
    pub cohort: String,
    pub report: SwdReport,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CohortReport {
    pub cohorts: Vec<CohortStats>,
    #[serde(default)]
    pub swd: Vec<CohortSwd>,
}

impl CohortReport {
    pub fn cohort(&self, name: &str) -> Option<&CohortStats> {
        self.cohorts.iter().find(|c| c.name == name)
    }

    pub fn write_json(&self, path: &Path) -> Result<(), EvalError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| EvalError::Serialize(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| EvalError::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|e| EvalError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| EvalError::Serialize(e.to_string()))
    }
}

/// A named set of volumes.
#[derive(Debug, Clone)]
pub struct Cohort {
    pub name: String,
    pub volumes: Vec<VoxelVolume>,
}

impl Cohort {
    pub fn new(name: impl Into<String>, volumes: Vec<VoxelVolume>) -> Self {
        Self { name: name.into(), volumes }
    }
}

fn per_sample(volumes: &[VoxelVolume], f: impl Fn(&VoxelVolume) -> Result<f64, String> + Sync) -> Vec<Result<f64, String>> {
    volumes.par_iter().map(|v| f(v)).collect()
}

/// Per-sample metrics of one cohort.
pub fn cohort_stats(cohort: &Cohort, metrics: &MetricSelection) -> Result<CohortStats, EvalError> {
    let vols = &cohort.volumes;
    if vols.is_empty() {
        return Err(EvalError::Empty("cohort"));
    }
    let mut columns = Vec::new();
    if metrics.porosity {
        columns.push(MetricColumn::from_results("porosity", per_sample(vols, |v| porosity(v).map_err(|e| e.to_string()))));
    }
    if metrics.lambda {
        let axial: Vec<Result<[f64; 3], String>> =
            vols.par_iter().map(|v| axial_correlation_lengths(v).map_err(|e| e.to_string())).collect();
        for (a, name) in ["lambda_x", "lambda_y", "lambda_z"].iter().enumerate() {
            columns.push(MetricColumn::from_results(name, axial.iter().map(|r| r.clone().map(|l| l[a])).collect()));
        }
        columns.push(MetricColumn::from_results(
            "lambda_iso",
            per_sample(vols, |v| correlation_length(v, CurveAxis::Isotropic).map_err(|e| e.to_string())),
        ));
    }
    if metrics.sa {
        columns.push(MetricColumn::from_results("sa", per_sample(vols, |v| specific_surface_area(v).map_err(|e| e.to_string()))));
    }
    if let Some(cfg) = &metrics.permeability {
        columns.push(MetricColumn::from_results(
            "permeability_darcy",
            per_sample(vols, |v| permeability_all_axes(v, cfg).map(|(_, k)| k).map_err(|e| e.to_string())),
        ));
    }
    Ok(CohortStats {
        name: cohort.name.clone(),
        count: vols.len(),
        voxel_size: vols[0].voxel_size(),
        metrics: columns,
    })
}

/// Statistics of every cohort; with SWD enabled, every cohort after the first
/// is compared against the first when their edges match.
pub fn cohort_compare(cohorts: &[Cohort], metrics: &MetricSelection, swd: &SwdConfig, seed: u64) -> Result<CohortReport, EvalError> {
    let mut report = CohortReport::default();
    for c in cohorts {
        report.cohorts.push(cohort_stats(c, metrics)?);
    }
    if metrics.swd {
        if let Some((reference, rest)) = cohorts.split_first() {
            for c in rest {
                if c.volumes[0].dims() != reference.volumes[0].dims() {
                    log::info!("skipping SWD for {}: edge differs from {}", c.name, reference.name);
                    continue;
                }
                report.swd.push(CohortSwd {
                    reference: reference.name.clone(),
                    cohort: c.name.clone(),
                    report: multiscale_swd(&reference.volumes, &c.volumes, swd, seed)?,
                });
            }
        }
    }
    Ok(report)
}
