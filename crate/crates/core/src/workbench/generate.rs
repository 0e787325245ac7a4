//! Sample generation from a trained checkpoint.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::WorkbenchError;
use crate::conditioning::{ConditionLabel, Conditioner};
use crate::moments::porosity;
use crate::progan::Generator;
use crate::training::checkpoint::{load_generator, CheckpointMeta};
use crate::training::{binarize_output, generate_raw, generate_volumes, sample_noise};
use crate::volume::VoxelVolume;

/// Noise edges accepted by [`generate`].
pub const NOISE_EDGES: [usize; 4] = [4, 6, 8, 10];
const CHUNK: usize = 16;

/// Output edges a generator at `stage` can produce.
pub fn valid_edges(stage: usize) -> Vec<usize> {
    NOISE_EDGES.iter().map(|e| e << (stage - 1)).collect()
}

/// Noise edge that yields `edge` at `stage`.
pub fn noise_edge_for(edge: usize, stage: usize) -> Result<usize, WorkbenchError> {
    let valid = valid_edges(stage);
    match valid.iter().position(|&e| e == edge) {
        Some(i) => Ok(NOISE_EDGES[i]),
        None => Err(WorkbenchError::UnsupportedEdge { edge, valid }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    /// One label for the whole batch, or one per sample.
    pub labels: Vec<ConditionLabel>,
    pub edge: usize,
    pub count: usize,
    pub seed: u64,
    /// Share a single noise draw across all samples.
    #[serde(default)]
    pub fixed_noise: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelVersion {
    pub format: String,
    pub version: u32,
    pub stage: usize,
    pub global_iteration: usize,
}

impl From<&CheckpointMeta> for ModelVersion {
    fn from(m: &CheckpointMeta) -> Self {
        Self { format: m.format.clone(), version: m.version, stage: m.phase.stage, global_iteration: m.global_iteration }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationManifest {
    pub checkpoint: String,
    pub model: ModelVersion,
    pub tool_version: String,
    pub edge: usize,
    pub noise_edge: usize,
    pub count: usize,
    pub seed: u64,
    pub fixed_noise: bool,
    pub voxel_size_um: f64,
    pub labels: Vec<ConditionLabel>,
    pub porosity: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GeneratedBatch {
    pub volumes: Vec<VoxelVolume>,
    pub manifest: GenerationManifest,
}

impl GeneratedBatch {
    /// Writes `manifest.json` and, if asked, `sample_{i:05}.raw` files.
    pub fn write(&self, dir: &Path, volumes: bool) -> Result<(), WorkbenchError> {
        std::fs::create_dir_all(dir).map_err(|e| WorkbenchError::io(dir, e))?;
        if volumes {
            for (i, v) in self.volumes.iter().enumerate() {
                v.write_raw(&dir.join(format!("sample_{i:05}.raw")))?;
            }
        }
        write_json(&dir.join("manifest.json"), &self.manifest)
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), WorkbenchError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| WorkbenchError::Config(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| WorkbenchError::io(path, e))
}

fn expand_labels(labels: &[ConditionLabel], count: usize) -> Result<Vec<ConditionLabel>, WorkbenchError> {
    match labels.len() {
        _ if count == 0 => Ok(Vec::new()),
        1 => Ok(vec![labels[0].clone(); count]),
        n if n == count => Ok(labels.to_vec()),
        n => Err(WorkbenchError::Config(format!("{n} labels for {count} samples; give one label or one per sample"))),
    }
}

/// Generates from an in-memory generator.
pub fn generate_with(
    generator: &Generator,
    meta: &CheckpointMeta,
    checkpoint: &str,
    req: &GenerateRequest,
) -> Result<GeneratedBatch, WorkbenchError> {
    let stage = generator.stage();
    let noise_edge = noise_edge_for(req.edge, stage)?;
    let labels = expand_labels(&req.labels, req.count)?;
    let conditioner: &Conditioner = &meta.conditioner;
    for l in &labels {
        l.to_vector(&conditioner.schema).map_err(|e| WorkbenchError::Config(e.to_string()))?;
    }
    let voxel_size = meta.data.voxel_size;
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let volumes = if labels.is_empty() {
        Vec::new()
    } else if req.fixed_noise {
        let noise = sample_noise(1, noise_edge, generator.kind(), &mut rng);
        let mut out = Vec::with_capacity(labels.len());
        for part in labels.chunks(CHUNK) {
            let batch = noise.expand([part.len() as i64, -1, -1, -1, -1], false).contiguous();
            let raw = generate_raw(generator, conditioner, part, &batch, 1.0)?;
            out.extend(binarize_output(&raw, voxel_size)?);
        }
        out
    } else {
        generate_volumes(generator, conditioner, &labels, noise_edge, voxel_size, CHUNK, &mut rng)?
    };
    let porosity = volumes.iter().map(porosity).collect::<Result<Vec<_>, _>>().map_err(crate::data::DataError::from)?;
    Ok(GeneratedBatch {
        manifest: GenerationManifest {
            checkpoint: checkpoint.to_string(),
            model: meta.into(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            edge: req.edge,
            noise_edge,
            count: req.count,
            seed: req.seed,
            fixed_noise: req.fixed_noise,
            voxel_size_um: voxel_size,
            labels,
            porosity,
        },
        volumes,
    })
}

/// Loads the generator in `checkpoint` and produces `count` binary volumes of
/// edge `edge`.
pub fn generate(checkpoint: &Path, req: &GenerateRequest) -> Result<GeneratedBatch, WorkbenchError> {
    let (g, meta) = load_generator(checkpoint)?;
    generate_with(&g, &meta, &checkpoint.display().to_string(), req)
}

/// Default output directory name for a generation run.
pub fn batch_dir(root: &Path, name: &str, edge: usize) -> PathBuf {
    root.join(name).join(format!("edge{edge}"))
}
