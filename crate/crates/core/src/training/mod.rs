//! Progressive conditional WGAN-GP training.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};
use tch::{Kind, Tensor};
use thiserror::Error;

use crate::conditioning::{make_latent, ConditionLabel, Conditioner, ConditioningError};
use crate::data::DataError;
use crate::eval::EvalError;
use crate::moments::{binarize, SIGNED_RANGE_THRESHOLD};
use crate::progan::{standard_normal, tensor_to_volumes, Generator, ProGanError};
use crate::volume::VoxelVolume;

pub mod checkpoint;
pub mod loss;
pub mod trainer;

pub use checkpoint::{CheckpointMeta, DataConvention, LossStats, CHECKPOINT_VERSION};
pub use loss::{discriminator_loss, generator_loss, gradient_penalty, Critic, ConstantCritic, LinearCritic, PhasedCritic};
pub use trainer::{continue_schedule, run_schedule, LossRecord, StepRecord, SwdPoint, SwdProbe, TrainHistory, Trainer};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train plan: {0}")]
    InvalidPlan(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite {which} loss at stage {stage}, iteration {iteration}")]
    NonFinite { which: &'static str, stage: usize, iteration: usize },
    #[error("checkpoint error in {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error(transparent)]
    Network(#[from] ProGanError),
    #[error(transparent)]
    Conditioning(#[from] ConditioningError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Tch(#[from] tch::TchError),
}

/// Learning rate for a stage resolution.
pub fn learning_rate_for_edge(edge: usize) -> f64 {
    match edge {
        0..=16 => 5e-3,
        17..=32 => 3.5e-3,
        _ => 2.5e-3,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub iterations: usize,
    pub learning_rate: f64,
    /// Leading fraction of the stage over which the new block fades in.
    pub fade_fraction: f64,
}

impl StagePlan {
    pub fn for_stage(stage: usize, iterations: usize) -> Self {
        Self { iterations, learning_rate: learning_rate_for_edge(4 << (stage - 1)), fade_fraction: 0.5 }
    }

    pub fn fade_iterations(&self) -> usize {
        (self.fade_fraction * self.iterations as f64).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.0, beta2: 0.99, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainPlan {
    /// Stage 1 first; stages are contiguous by construction.
    pub stages: Vec<StagePlan>,
    pub widths: Vec<usize>,
    pub batch_size: usize,
    pub gp_weight: f64,
    #[serde(default)]
    pub adam: AdamConfig,
    pub seed: u64,
    /// Iterations between checkpoints (0 = stage ends only).
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Iterations between SWD probes (0 = never).
    #[serde(default)]
    pub swd_every: usize,
}

impl TrainPlan {
    /// Full-scale schedule: 320k iterations for stages 1-3, 640k
    /// for stage 4 and 1.28M with a quarter-length fade-in for stage 5
    /// (2.88M in total).
    pub fn full_scale() -> Self {
        let mut stages: Vec<StagePlan> = (1..=5)
            .map(|s| StagePlan::for_stage(s, if s <= 3 { 320_000 } else { 640_000 }))
            .collect();
        stages[4].iterations = 1_280_000;
        stages[4].fade_fraction = 0.25;
        Self {
            stages,
            widths: crate::progan::GeneratorSpec::default_widths(),
            batch_size: 32,
            gp_weight: 10.0,
            adam: AdamConfig::default(),
            seed: 0,
            checkpoint_every: 10_000,
            swd_every: 0,
        }
    }

    /// Desk-scale schedule: stages 1-4, halved widths, short budgets.
    pub fn desk() -> Self {
        Self {
            stages: (1..=4).map(|s| StagePlan::for_stage(s, if s <= 3 { 2_000 } else { 4_000 })).collect(),
            widths: vec![64, 64, 32, 16, 8],
            batch_size: 16,
            gp_weight: 10.0,
            adam: AdamConfig::default(),
            seed: 0,
            checkpoint_every: 1_000,
            swd_every: 0,
        }
    }

    pub fn final_stage(&self) -> usize {
        self.stages.len()
    }

    pub fn final_edge(&self) -> usize {
        4 << (self.final_stage() - 1)
    }

    pub fn total_iterations(&self) -> usize {
        self.stages.iter().map(|s| s.iterations).sum()
    }

    pub fn stage(&self, stage: usize) -> &StagePlan {
        &self.stages[stage - 1]
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidPlan(m));
        if self.stages.is_empty() {
            return bad("no stages".into());
        }
        if self.stages.len() > self.widths.len() {
            return bad(format!("{} stages but only {} widths", self.stages.len(), self.widths.len()));
        }
        if self.batch_size == 0 {
            return bad("batch size 0".into());
        }
        if !(self.gp_weight >= 0.0) {
            return bad(format!("penalty weight {}", self.gp_weight));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.iterations == 0 || !(s.learning_rate > 0.0) || !(0.0..=1.0).contains(&s.fade_fraction) {
                return bad(format!("stage {} has invalid settings {s:?}", i + 1));
            }
        }
        Ok(())
    }
}

#[derive(Debug)]
struct AdamSlot {
    m: Tensor,
    v: Tensor,
    step: u64,
}

/// Adam with per-parameter state keyed by parameter name, so parameters
/// added by growth start with fresh moments.
#[derive(Debug, Default)]
pub struct Adam {
    pub config: AdamConfig,
    slots: BTreeMap<String, AdamSlot>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, slots: BTreeMap::new() }
    }

    pub fn step(&mut self, params: &[(String, &Tensor)], grads: &[Tensor], lr: f64) {
        let AdamConfig { beta1, beta2, eps } = self.config;
        tch::no_grad(|| {
            for ((name, p), g) in params.iter().zip(grads) {
                if !g.defined() {
                    continue;
                }
                let slot = self.slots.entry(name.clone()).or_insert_with(|| AdamSlot {
                    m: p.zeros_like(),
                    v: p.zeros_like(),
                    step: 0,
                });
                slot.step += 1;
                slot.m = &slot.m * beta1 + g * (1.0 - beta1);
                slot.v = &slot.v * beta2 + g.square() * (1.0 - beta2);
                let mhat = &slot.m / (1.0 - beta1.powi(slot.step as i32));
                let vhat = &slot.v / (1.0 - beta2.powi(slot.step as i32));
                let update = mhat / (vhat.sqrt() + eps) * lr;
                let mut p = p.shallow_clone();
                let _ = p.g_sub_(&update);
            }
        });
    }

    pub fn steps(&self) -> BTreeMap<String, u64> {
        self.slots.iter().map(|(k, s)| (k.clone(), s.step)).collect()
    }

    pub fn moments(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::with_capacity(self.slots.len() * 2);
        for (k, s) in &self.slots {
            out.push((format!("m.{k}"), s.m.shallow_clone()));
            out.push((format!("v.{k}"), s.v.shallow_clone()));
        }
        out
    }

    pub fn restore(config: AdamConfig, steps: &BTreeMap<String, u64>, moments: &[(String, Tensor)]) -> Result<Self, String> {
        let find = |key: String| {
            moments
                .iter()
                .find(|(n, _)| *n == key)
                .map(|(_, t)| t.shallow_clone())
                .ok_or_else(|| format!("missing optimizer tensor {key}"))
        };
        let mut slots = BTreeMap::new();
        for (name, &step) in steps {
            slots.insert(name.clone(), AdamSlot { m: find(format!("m.{name}"))?, v: find(format!("v.{name}"))?, step });
        }
        Ok(Self { config, slots })
    }
}

/// Unit normal noise `[n, 1, e, e, e]`.
pub fn sample_noise<R: Rng + ?Sized>(n: usize, edge: usize, kind: Kind, rng: &mut R) -> Tensor {
    let e = edge as i64;
    standard_normal(&[n as i64, 1, e, e, e], kind, rng)
}

/// Raw generator output for given labels and noise, without gradients.
pub fn generate_raw(g: &Generator, conditioner: &Conditioner, labels: &[ConditionLabel], noise: &Tensor, alpha: f64) -> Result<Tensor, TrainError> {
    let c = conditioner.label_matrix(labels)?;
    let latent = make_latent(&noise.to_kind(g.kind()), &c)?;
    Ok(tch::no_grad(|| g.forward(&latent, alpha))?)
}

/// Binary volumes (pore where the output is `>= 0`) from raw output.
pub fn binarize_output(raw: &Tensor, voxel_size: f64) -> Result<Vec<VoxelVolume>, TrainError> {
    Ok(tensor_to_volumes(raw, voxel_size)?
        .iter()
        .map(|v| binarize(v, SIGNED_RANGE_THRESHOLD))
        .collect())
}

/// Binary samples for each label, drawing fresh noise per sample in order,
/// evaluated in chunks of at most `chunk` samples.
pub fn generate_volumes<R: Rng + ?Sized>(
    g: &Generator,
    conditioner: &Conditioner,
    labels: &[ConditionLabel],
    noise_edge: usize,
    voxel_size: f64,
    chunk: usize,
    rng: &mut R,
) -> Result<Vec<VoxelVolume>, TrainError> {
    let mut out = Vec::with_capacity(labels.len());
    for part in labels.chunks(chunk.max(1)) {
        let noise = sample_noise(part.len(), noise_edge, g.kind(), rng);
        let raw = generate_raw(g, conditioner, part, &noise, 1.0)?;
        out.extend(binarize_output(&raw, voxel_size)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learning_rate_mapping() {
        assert_eq!(learning_rate_for_edge(4), 5e-3);
        assert_eq!(learning_rate_for_edge(16), 5e-3);
        assert_eq!(learning_rate_for_edge(32), 3.5e-3);
        assert_eq!(learning_rate_for_edge(64), 2.5e-3);
    }

    #[test]
    fn full_scale_budget() {
        let p = TrainPlan::full_scale();
        assert_eq!(p.total_iterations(), 2_880_000);
        assert_eq!(p.batch_size, 32);
        assert_eq!(p.gp_weight, 10.0);
        assert_eq!(p.stages[2].iterations, 320_000);
        assert_eq!(p.stages[3].iterations, 640_000);
        assert_eq!(p.stages[4].fade_iterations(), 320_000);
        p.validate().unwrap();
    }

    #[test]
    fn desk_plan_shape() {
        let p = TrainPlan::desk();
        assert_eq!(p.final_edge(), 32);
        assert_eq!(p.stages.iter().map(|s| s.iterations).collect::<Vec<_>>(), vec![2000, 2000, 2000, 4000]);
        assert_eq!(p.stages[3].learning_rate, 3.5e-3);
        assert_eq!(p.stages[0].fade_iterations(), 1000);
    }

    #[test]
    fn invalid_plans_are_rejected() {
        let mut p = TrainPlan::desk();
        p.batch_size = 0;
        assert!(p.validate().is_err());
        let mut p = TrainPlan::desk();
        p.widths.truncate(2);
        assert!(p.validate().is_err());
        let mut p = TrainPlan::desk();
        p.stages.clear();
        assert!(p.validate().is_err());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let p = Tensor::from_slice(&[1.0f64, -2.0]).set_requires_grad(true);
        let g = Tensor::from_slice(&[0.5f64, -3.0]);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&[("p".into(), &p)], &[g], 0.1);
        let v: Vec<f64> = Vec::try_from(p.detach()).unwrap();
        assert!((v[0] - 0.9).abs() < 1e-6 && (v[1] + 1.9).abs() < 1e-6, "{v:?}");
        assert_eq!(adam.steps()["p"], 1);
    }
}
