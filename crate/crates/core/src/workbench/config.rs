//! Experiment configuration files (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::WorkbenchError;
use crate::conditioning::{ConditionLabel, ConditionSchema, CorrLengthMode, LabelEncoding};
use crate::data::SyntheticCohort;
use crate::eval::{MetricSelection, SwdConfig};
use crate::flow::FlowConfig;
use crate::progan::{MAX_STAGES, MIN_NOISE_EDGE};
use crate::training::{StagePlan, TrainPlan};

/// One binary source image on disk (raw bytes plus `.meta` sidecar).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub name: String,
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rock_type: Option<usize>,
}

/// Where training labels come from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelSource {
    /// Computed from each sample.
    #[default]
    Measured,
    /// Construction parameters of synthetic samples.
    Construction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sources: Vec<SourceConfig>,
    /// A dataset directory written by `prepare-data`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticCohort>,
    /// Edge every source is resampled to before extraction (none keeps it).
    #[serde(default = "default_resample_edge")]
    pub resample_edge: Option<usize>,
    #[serde(default = "default_edge")]
    pub edge: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
    /// Extra quarter-turn copies per sample: 0 or 2.
    #[serde(default = "default_rotations")]
    pub rotations: u8,
    /// Keep this many of the most anisotropic samples before rotating.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub select_anisotropic: Option<usize>,
    #[serde(default)]
    pub labels: LabelSource,
}

fn default_resample_edge() -> Option<usize> {
    Some(crate::data::rocks::RESAMPLED_EDGE)
}
fn default_edge() -> usize {
    64
}
fn default_stride() -> usize {
    12
}
fn default_rotations() -> u8 {
    2
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            sources: Vec::new(),
            dataset: None,
            synthetic: None,
            resample_edge: default_resample_edge(),
            edge: default_edge(),
            stride: default_stride(),
            rotations: default_rotations(),
            select_anisotropic: None,
            labels: LabelSource::Measured,
        }
    }
}

impl DataConfig {
    /// Edge of the prepared training samples, when known without reading data.
    pub fn sample_edge(&self) -> Option<usize> {
        if let Some(s) = &self.synthetic {
            Some(s.edge)
        } else if !self.sources.is_empty() {
            Some(self.edge)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanPreset {
    #[default]
    Desk,
    FullScale,
}

/// A preset schedule with optional overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub preset: PlanPreset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub widths: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    /// Per-stage budgets; the length sets the number of stages.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rates: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fade_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gp_weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub swd_every: Option<usize>,
    #[serde(default)]
    pub double_precision: bool,
}

impl TrainConfig {
    pub fn kind(&self) -> tch::Kind {
        if self.double_precision {
            tch::Kind::Double
        } else {
            tch::Kind::Float
        }
    }

    pub fn plan(&self, seed: u64) -> Result<TrainPlan, WorkbenchError> {
        let mut plan = match self.preset {
            PlanPreset::Desk => TrainPlan::desk(),
            PlanPreset::FullScale => TrainPlan::full_scale(),
        };
        plan.seed = seed;
        if let Some(its) = &self.iterations {
            if its.is_empty() || its.len() > MAX_STAGES {
                return Err(WorkbenchError::Config(format!("iterations must list 1 to {MAX_STAGES} stages")));
            }
            plan.stages = its.iter().enumerate().map(|(i, &n)| StagePlan::for_stage(i + 1, n)).collect();
        }
        if let Some(lrs) = &self.learning_rates {
            if lrs.len() != plan.stages.len() {
                return Err(WorkbenchError::Config(format!(
                    "{} learning rates for {} stages",
                    lrs.len(),
                    plan.stages.len()
                )));
            }
            for (s, &lr) in plan.stages.iter_mut().zip(lrs) {
                s.learning_rate = lr;
            }
        }
        if let Some(f) = self.fade_fraction {
            for s in plan.stages.iter_mut() {
                s.fade_fraction = f;
            }
        }
        if let Some(w) = &self.widths {
            plan.widths = w.clone();
        }
        if let Some(b) = self.batch_size {
            plan.batch_size = b;
        }
        if let Some(g) = self.gp_weight {
            plan.gp_weight = g;
        }
        if let Some(c) = self.checkpoint_every {
            plan.checkpoint_every = c;
        }
        if let Some(s) = self.swd_every {
            plan.swd_every = s;
        }
        plan.validate().map_err(|e| WorkbenchError::Config(e.to_string()))?;
        Ok(plan)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub name: String,
    pub label: ConditionLabel,
}

/// Fixed-noise generation across a list of labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub name: String,
    pub labels: Vec<ConditionLabel>,
    pub noise_edge: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    #[serde(default)]
    pub targets: Vec<TargetConfig>,
    /// Samples per target and size.
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_noise_edges")]
    pub noise_edges: Vec<usize>,
    #[serde(default)]
    pub save_volumes: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

fn default_count() -> usize {
    200
}
fn default_noise_edges() -> Vec<usize> {
    vec![MIN_NOISE_EDGE]
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self { targets: Vec::new(), count: default_count(), noise_edges: default_noise_edges(), save_volumes: false, sweep: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Comma-separated subset of `swd,phi,lambda,sa,perm`.
    #[serde(default = "default_metrics")]
    pub metrics: String,
    #[serde(default)]
    pub swd: SwdConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<FlowConfig>,
    #[serde(default = "default_true")]
    pub plots: bool,
}

fn default_metrics() -> String {
    "swd,phi,lambda,sa".into()
}
fn default_true() -> bool {
    true
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self { metrics: default_metrics(), swd: SwdConfig::default(), flow: None, plots: true }
    }
}

impl EvaluateConfig {
    pub fn selection(&self) -> Result<MetricSelection, WorkbenchError> {
        let mut m: MetricSelection = self.metrics.parse().map_err(|e: crate::eval::EvalError| WorkbenchError::Config(e.to_string()))?;
        if m.permeability.is_some() {
            m.permeability = Some(self.flow.unwrap_or_default());
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub data: DataConfig,
    #[serde(default)]
    pub schema: ConditionSchema,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub generate: GenerateConfig,
    #[serde(default)]
    pub evaluate: EvaluateConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, WorkbenchError> {
        toml::from_str(text).map_err(|e| WorkbenchError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, WorkbenchError> {
        toml::to_string(self).map_err(|e| WorkbenchError::Config(e.to_string()))
    }

    /// Reads and validates a config file; relative data paths are resolved
    /// against the file's directory. Also returns the file text verbatim.
    pub fn load(path: &Path) -> Result<(Self, String), WorkbenchError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| WorkbenchError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| WorkbenchError::Config(format!("{}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        cfg.validate()?;
        Ok((cfg, text))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for s in &mut self.data.sources {
            fix(&mut s.path);
        }
        if let Some(d) = &mut self.data.dataset {
            fix(d);
        }
    }

    pub fn plan(&self) -> Result<TrainPlan, WorkbenchError> {
        self.train.plan(self.seed)
    }

    /// Cross-checks data, schema, plan, targets and metrics.
    pub fn validate(&self) -> Result<(), WorkbenchError> {
        let bad = |m: String| Err(WorkbenchError::Config(m));
        if self.name.trim().is_empty() {
            return bad("experiment name is empty".into());
        }
        let d = &self.data;
        let kinds = usize::from(!d.sources.is_empty()) + usize::from(d.dataset.is_some()) + usize::from(d.synthetic.is_some());
        if kinds != 1 {
            return bad("exactly one of data.sources, data.dataset or data.synthetic must be set".into());
        }
        if d.rotations != 0 && d.rotations != 2 {
            return bad(format!("data.rotations must be 0 or 2, got {}", d.rotations));
        }
        if d.stride == 0 || d.edge == 0 {
            return bad("data.edge and data.stride must be positive".into());
        }
        if d.labels == LabelSource::Construction && d.synthetic.is_none() {
            return bad("construction labels need synthetic data".into());
        }
        if d.select_anisotropic == Some(0) {
            return bad("data.select_anisotropic must keep at least one sample".into());
        }
        if d.select_anisotropic.is_some() && d.synthetic.is_some() && d.labels == LabelSource::Construction {
            return bad("anisotropic selection uses measured lengths".into());
        }

        let schema = &self.schema;
        if schema.dim() == 0 {
            log::warn!("schema has no label channels; training is unconditional");
        }
        if schema.encoding == LabelEncoding::MinMax && schema.rock_types > 0 && schema.dim() == schema.rock_types {
            log::info!("min-max encoding has no effect on one-hot labels");
        }
        if schema.rock_types > 0 {
            if d.synthetic.is_some() {
                return bad("synthetic data carries no rock type; set schema.rock_types = 0".into());
            }
            for s in &d.sources {
                match s.rock_type {
                    Some(k) if k < schema.rock_types => {}
                    Some(k) => return bad(format!("source {} has rock type {k} but the schema has {}", s.name, schema.rock_types)),
                    None => return bad(format!("source {} needs a rock_type", s.name)),
                }
            }
        }

        let plan = self.plan()?;
        if let Some(edge) = d.sample_edge() {
            let fin = plan.final_edge();
            if edge < fin || edge % fin != 0 || !(edge / fin).is_power_of_two() {
                return bad(format!("sample edge {edge} does not reduce to the plan's final edge {fin} by halving"));
            }
        }

        let g = &self.generate;
        if let Some(e) = g.noise_edges.iter().find(|&&e| e < MIN_NOISE_EDGE) {
            return bad(format!("noise edge {e} is below {MIN_NOISE_EDGE}"));
        }
        let mut names = std::collections::BTreeSet::new();
        for t in &g.targets {
            if !names.insert(t.name.as_str()) {
                return bad(format!("duplicate target name '{}'", t.name));
            }
            check_label(&t.label, schema).map_err(|m| WorkbenchError::Config(format!("target '{}': {m}", t.name)))?;
        }
        if let Some(s) = &g.sweep {
            if s.noise_edge < MIN_NOISE_EDGE {
                return bad(format!("sweep noise edge {} is below {MIN_NOISE_EDGE}", s.noise_edge));
            }
            for l in &s.labels {
                check_label(l, schema).map_err(|m| WorkbenchError::Config(format!("sweep '{}': {m}", s.name)))?;
            }
        }
        self.evaluate.selection()?;
        Ok(())
    }
}

fn check_label(label: &ConditionLabel, schema: &ConditionSchema) -> Result<(), String> {
    label.to_vector(schema).map_err(|e| e.to_string())?;
    let extra = (schema.rock_types == 0 && label.rock_type.is_some())
        || (!schema.porosity && label.porosity.is_some())
        || (schema.corr_length == CorrLengthMode::Off && label.lambda.is_some());
    if extra {
        return Err("label sets a field the schema does not condition on".into());
    }
    Ok(())
}
