//! Self-describing checkpoint directories.
//!
//! Layout: `checkpoint.toml` (metadata), `generator.safetensors`,
//! `discriminator.safetensors`, `adam_g.safetensors`, `adam_d.safetensors`
//! and `history.json`.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tch::{Kind, Tensor};

use super::{TrainError, TrainHistory, TrainPlan};
use crate::conditioning::Conditioner;
use crate::progan::{Discriminator, DiscriminatorSpec, Generator, GeneratorSpec, Parameterized, StagePhase};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const CHECKPOINT_FORMAT: &str = "rockgan-checkpoint";
pub const META_FILE: &str = "checkpoint.toml";
const GENERATOR_FILE: &str = "generator.safetensors";
const DISCRIMINATOR_FILE: &str = "discriminator.safetensors";
const ADAM_G_FILE: &str = "adam_g.safetensors";
const ADAM_D_FILE: &str = "adam_d.safetensors";
const HISTORY_FILE: &str = "history.json";

/// How network values relate to voxel phases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataConvention {
    pub pore_value: f64,
    pub solid_value: f64,
    /// Generated values `>= threshold` are pore.
    pub threshold: f64,
    /// Voxel edge (micrometres) of samples at the final training edge.
    pub voxel_size: f64,
    /// Edge of the training samples before downsampling.
    pub data_edge: usize,
}

impl DataConvention {
    pub fn signed(voxel_size: f64, data_edge: usize) -> Self {
        Self { pore_value: 1.0, solid_value: -1.0, threshold: 0.0, voxel_size, data_edge }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub count: usize,
    pub mean_d: f64,
    pub mean_g: f64,
    pub ema_d: f64,
    pub ema_g: f64,
    pub last_d: f64,
    pub last_g: f64,
}

impl LossStats {
    pub fn push(&mut self, d: f64, g: f64) {
        self.count += 1;
        let n = self.count as f64;
        self.mean_d += (d - self.mean_d) / n;
        self.mean_g += (g - self.mean_g) / n;
        if self.count == 1 {
            self.ema_d = d;
            self.ema_g = g;
        } else {
            self.ema_d = 0.99 * self.ema_d + 0.01 * d;
            self.ema_g = 0.99 * self.ema_g + 0.01 * g;
        }
        self.last_d = d;
        self.last_g = g;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub version: u32,
    pub phase: StagePhase,
    /// Completed iterations within the current stage.
    pub stage_iteration: usize,
    pub global_iteration: usize,
    /// Tensor element type name of the stored parameters.
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
    pub data: DataConvention,
    pub loss_stats: LossStats,
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
    pub conditioner: Conditioner,
    pub plan: TrainPlan,
    #[serde(default)]
    pub adam_steps_g: BTreeMap<String, u64>,
    #[serde(default)]
    pub adam_steps_d: BTreeMap<String, u64>,
}

pub(crate) fn kind_name(kind: Kind) -> &'static str {
    match kind {
        Kind::Double => "f64",
        _ => "f32",
    }
}

pub(crate) fn kind_from_name(name: &str) -> Kind {
    if name == "f64" {
        Kind::Double
    } else {
        Kind::Float
    }
}

fn ckpt_err(path: &Path, message: impl ToString) -> TrainError {
    TrainError::Checkpoint { path: path.to_path_buf(), message: message.to_string() }
}

fn write_tensors(path: &Path, named: &[(String, Tensor)]) -> Result<(), TrainError> {
    let refs: Vec<(&str, &Tensor)> = named.iter().map(|(n, t)| (n.as_str(), t)).collect();
    Tensor::write_safetensors(&refs, path).map_err(|e| ckpt_err(path, e))
}

fn read_tensors(path: &Path) -> Result<Vec<(String, Tensor)>, TrainError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    Tensor::read_safetensors(path).map_err(|e| ckpt_err(path, e))
}

/// Everything needed to write one checkpoint.
pub struct CheckpointParts<'a> {
    pub meta: &'a CheckpointMeta,
    pub generator: &'a Generator,
    pub discriminator: &'a Discriminator,
    pub adam_g: Vec<(String, Tensor)>,
    pub adam_d: Vec<(String, Tensor)>,
    pub history: &'a TrainHistory,
}

pub fn save_checkpoint(dir: &Path, parts: CheckpointParts<'_>) -> Result<(), TrainError> {
    std::fs::create_dir_all(dir).map_err(|e| ckpt_err(dir, e))?;
    let text = toml::to_string(parts.meta).map_err(|e| ckpt_err(dir, e))?;
    let meta_path = dir.join(META_FILE);
    std::fs::write(&meta_path, format!("# rockgan training checkpoint\n{text}")).map_err(|e| ckpt_err(&meta_path, e))?;
    write_tensors(&dir.join(GENERATOR_FILE), &parts.generator.snapshot())?;
    write_tensors(&dir.join(DISCRIMINATOR_FILE), &parts.discriminator.snapshot())?;
    for (file, moments) in [(ADAM_G_FILE, &parts.adam_g), (ADAM_D_FILE, &parts.adam_d)] {
        let path = dir.join(file);
        if moments.is_empty() {
            let _ = std::fs::remove_file(&path);
        } else {
            write_tensors(&path, moments)?;
        }
    }
    let history_path = dir.join(HISTORY_FILE);
    let json = serde_json::to_string(parts.history).map_err(|e| ckpt_err(&history_path, e))?;
    std::fs::write(&history_path, json).map_err(|e| ckpt_err(&history_path, e))
}

pub fn load_meta(dir: &Path) -> Result<CheckpointMeta, TrainError> {
    let path = dir.join(META_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| ckpt_err(&path, e))?;
    let meta: CheckpointMeta = toml::from_str(&text).map_err(|e| ckpt_err(&path, e))?;
    if meta.format != CHECKPOINT_FORMAT {
        return Err(ckpt_err(&path, format!("unknown format '{}'", meta.format)));
    }
    if meta.version > CHECKPOINT_VERSION {
        return Err(ckpt_err(&path, format!("version {} is newer than supported {CHECKPOINT_VERSION}", meta.version)));
    }
    Ok(meta)
}

pub fn load_history(dir: &Path) -> Result<TrainHistory, TrainError> {
    let path = dir.join(HISTORY_FILE);
    if !path.exists() {
        return Ok(TrainHistory::default());
    }
    let text = std::fs::read_to_string(&path).map_err(|e| ckpt_err(&path, e))?;
    serde_json::from_str(&text).map_err(|e| ckpt_err(&path, e))
}

pub(crate) fn load_networks(dir: &Path, meta: &CheckpointMeta) -> Result<(Generator, Discriminator), TrainError> {
    let kind = kind_from_name(&meta.kind);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let g = Generator::new(meta.generator.clone(), meta.phase.stage, kind, &mut rng)?;
    let d = Discriminator::new(meta.discriminator.clone(), meta.phase.stage, kind, &mut rng)?;
    g.load_parameters(&read_tensors(&dir.join(GENERATOR_FILE))?)?;
    d.load_parameters(&read_tensors(&dir.join(DISCRIMINATOR_FILE))?)?;
    Ok((g, d))
}

pub(crate) fn load_adam(dir: &Path) -> Result<(Vec<(String, Tensor)>, Vec<(String, Tensor)>), TrainError> {
    Ok((read_tensors(&dir.join(ADAM_G_FILE))?, read_tensors(&dir.join(ADAM_D_FILE))?))
}

/// Generator and metadata of a checkpoint, for inference.
pub fn load_generator(dir: &Path) -> Result<(Generator, CheckpointMeta), TrainError> {
    let meta = load_meta(dir)?;
    let kind = kind_from_name(&meta.kind);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let g = Generator::new(meta.generator.clone(), meta.phase.stage, kind, &mut rng)?;
    g.load_parameters(&read_tensors(&dir.join(GENERATOR_FILE))?)?;
    Ok((g, meta))
}
