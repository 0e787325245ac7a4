//! End-to-end experiment runs: prepare, train, generate, evaluate, report.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, LabelSource};
use super::generate::{generate_with, write_json, GenerateRequest};
use super::WorkbenchError;
use crate::conditioning::{
    compute_labels, select_anisotropic, ConditionLabel, ConditionSchema, Conditioner, CorrLengthMode, ExcludedSample,
    LabelRange,
};
use crate::data::{augment_rotations, extract_subvolumes, read_dataset, resample_volume, synthetic_dataset, SubvolumeDataset};
use crate::eval::plot::{line_plot, section_plot, write_report_plots};
use crate::eval::{cohort_compare, Cohort, CohortReport};
use crate::training::checkpoint::{load_generator, load_meta};
use crate::training::{continue_schedule, SwdProbe, TrainHistory, Trainer};
use crate::volume::VoxelVolume;

const SEED_DATA: u64 = 1;
const SEED_GENERATE: u64 = 2;
const SEED_REFERENCE: u64 = 3;
const SEED_SWD: u64 = 4;
const PROBE_SAMPLES: usize = 64;

fn sub_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream)
}

/// Outcome of labelling a dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreparedSummary {
    pub samples: usize,
    pub edge: usize,
    pub voxel_size_um: f64,
    pub excluded: Vec<ExcludedSample>,
}

fn label_dataset(ds: SubvolumeDataset, schema: &ConditionSchema) -> Result<(SubvolumeDataset, Vec<ExcludedSample>), WorkbenchError> {
    let (ds, excluded) = compute_labels(&ds, schema)?;
    if !excluded.is_empty() {
        log::warn!("{} samples excluded while labelling", excluded.len());
    }
    Ok((ds, excluded))
}

/// Builds the labelled training dataset described by `config.data`.
pub fn prepare_dataset(config: &ExperimentConfig) -> Result<(SubvolumeDataset, PreparedSummary), WorkbenchError> {
    let d = &config.data;
    let schema = &config.schema;
    let mut excluded = Vec::new();
    let mut ds = if let Some(cohort) = &d.synthetic {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, SEED_DATA));
        synthetic_dataset(&config.name, cohort.generate(&mut rng)?)?
    } else if let Some(dir) = &d.dataset {
        read_dataset(dir)?
    } else {
        let mut all: Option<SubvolumeDataset> = None;
        for s in &d.sources {
            let mut v = VoxelVolume::read_raw(&s.path)?;
            if let Some(target) = d.resample_edge {
                if v.cubic_edge() != Some(target) {
                    log::info!("resampling {} to {target}^3", s.name);
                    v = resample_volume(&v, target)?;
                }
            }
            let part = extract_subvolumes(Arc::new(v), &s.name, d.edge, d.stride, s.rock_type)?;
            log::info!("{}: {} crops", s.name, part.len());
            match &mut all {
                Some(a) => a.extend(part)?,
                None => all = Some(part),
            }
        }
        all.ok_or_else(|| WorkbenchError::Config("no data sources".into()))?
    };
    if let Some(keep) = d.select_anisotropic {
        let (labelled, ex) = label_dataset(ds, &ConditionSchema::corr_length(CorrLengthMode::Anisotropic))?;
        excluded.extend(ex);
        ds = select_anisotropic(&labelled, keep)?;
    }
    if d.rotations == 2 {
        ds = augment_rotations(&ds);
    }
    if d.labels == LabelSource::Measured {
        let (labelled, ex) = label_dataset(ds, schema)?;
        excluded.extend(ex);
        ds = labelled;
    }
    let summary = PreparedSummary { samples: ds.len(), edge: ds.edge(), voxel_size_um: ds.voxel_size(), excluded };
    Ok((ds, summary))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageName {
    Prepare,
    Train,
    Generate,
    Evaluate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageStatus {
    pub stage: StageName,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// `status.json` of an experiment directory.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunStatus {
    pub experiment: String,
    pub seed: u64,
    pub tool_version: String,
    pub stages: Vec<StageStatus>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetReport {
    pub name: String,
    pub label: ConditionLabel,
    pub report: CohortReport,
}

/// `report.json` of an experiment directory.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub seed: u64,
    pub training_samples: usize,
    pub targets: Vec<TargetReport>,
}

impl ExperimentReport {
    pub fn target(&self, name: &str) -> Option<&TargetReport> {
        self.targets.iter().find(|t| t.name == name)
    }
}

/// Paths of the main artifacts.
#[derive(Debug, Clone)]
pub struct ExperimentArtifacts {
    pub root: PathBuf,
    pub model: PathBuf,
    pub report: PathBuf,
    pub status: PathBuf,
}

impl ExperimentArtifacts {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
            model: root.join("train").join("model"),
            report: root.join("report.json"),
            status: root.join("status.json"),
        }
    }
}

struct Recorder {
    path: PathBuf,
    status: RunStatus,
}

impl Recorder {
    fn run<T>(&mut self, stage: StageName, f: impl FnOnce() -> Result<T, WorkbenchError>) -> Result<T, WorkbenchError> {
        log::info!("stage {stage:?}");
        let result = f();
        let entry = match &result {
            Ok(_) => StageStatus { stage, ok: true, error: None },
            Err(e) => StageStatus { stage, ok: false, error: Some(e.to_string()) },
        };
        self.status.stages.retain(|s| s.stage != stage);
        self.status.stages.push(entry);
        write_json(&self.path, &self.status)?;
        result.map_err(|e| WorkbenchError::Stage { stage: format!("{stage:?}").to_lowercase(), source: Box::new(e) })
    }
}

/// Runs the whole experiment into `out`. The config is written verbatim
/// (`text` when given, else re-serialized). A finished model already in
/// `out` with the same plan and conditioner is reused.
pub fn run_experiment(config: &ExperimentConfig, text: Option<&str>, out: &Path) -> Result<ExperimentArtifacts, WorkbenchError> {
    config.validate()?;
    std::fs::create_dir_all(out).map_err(|e| WorkbenchError::io(out, e))?;
    let cfg_path = out.join("config.toml");
    let body = match text {
        Some(t) => t.to_string(),
        None => config.to_toml()?,
    };
    std::fs::write(&cfg_path, body).map_err(|e| WorkbenchError::io(&cfg_path, e))?;
    let art = ExperimentArtifacts::new(out);
    let mut rec = Recorder {
        path: art.status.clone(),
        status: RunStatus {
            experiment: config.name.clone(),
            seed: config.seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            stages: Vec::new(),
        },
    };

    let (dataset, conditioner) = rec.run(StageName::Prepare, || {
        let (ds, summary) = prepare_dataset(config)?;
        let dir = out.join("data");
        std::fs::create_dir_all(&dir).map_err(|e| WorkbenchError::io(&dir, e))?;
        write_json(&dir.join("summary.json"), &summary)?;
        let ranges = LabelRange::from_dataset(&ds, &config.schema)?;
        let conditioner = Conditioner::new(config.schema.clone(), ranges)?;
        Ok((ds, conditioner))
    })?;

    let plan = config.plan()?;
    let train_dir = out.join("train");
    let history = rec.run(StageName::Train, || {
        if let Ok(meta) = load_meta(&art.model) {
            if meta.plan == plan && meta.conditioner == conditioner && meta.global_iteration == plan.total_iterations() {
                log::info!("reusing trained model in {}", art.model.display());
                return Ok(crate::training::checkpoint::load_history(&art.model)?);
            }
        }
        let probe = (plan.swd_every > 0).then(|| swd_probe(config, &dataset)).transpose()?;
        let mut trainer = Trainer::new(plan.clone(), conditioner.clone(), &dataset, config.train.kind())?.with_output(&train_dir);
        continue_schedule(&mut trainer, Some(&train_dir), probe.as_ref())?;
        Ok(trainer.history().clone())
    })?;

    let cohorts = rec.run(StageName::Generate, || generate_cohorts(config, &art.model, out))?;

    rec.run(StageName::Evaluate, || {
        let report = evaluate_cohorts(config, &dataset, &cohorts)?;
        write_json(&art.report, &report)?;
        if config.evaluate.plots {
            let plots = out.join("plots");
            for t in &report.targets {
                write_report_plots(&t.report, &plots.join(&t.name))?;
            }
            training_plots(&history, &plots)?;
        }
        Ok(())
    })?;
    Ok(art)
}

fn swd_probe(config: &ExperimentConfig, dataset: &SubvolumeDataset) -> Result<SwdProbe, WorkbenchError> {
    let n = dataset.len().min(PROBE_SAMPLES);
    let mut idx: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, SEED_SWD));
    idx.shuffle(&mut rng);
    idx.truncate(n);
    let sub = dataset.select(&idx);
    let labels = sub.labels().map(|l| ConditionLabel::from_sample(l, &config.schema)).collect::<Result<Vec<_>, _>>()?;
    Ok(SwdProbe {
        real: sub.samples().collect(),
        labels,
        config: config.evaluate.swd,
        seed: sub_seed(config.seed, SEED_SWD),
    })
}

/// Generated cohorts per target, in target order, one per noise edge.
pub struct TargetCohorts {
    pub name: String,
    pub label: ConditionLabel,
    pub cohorts: Vec<Cohort>,
}

fn generate_cohorts(config: &ExperimentConfig, model: &Path, out: &Path) -> Result<Vec<TargetCohorts>, WorkbenchError> {
    let (g, meta) = load_generator(model)?;
    let checkpoint = model.strip_prefix(out).unwrap_or(model).display().to_string();
    let stage = g.stage();
    let root = out.join("cohorts");
    let gen = &config.generate;
    let mut all = Vec::new();
    for (t_index, t) in gen.targets.iter().enumerate() {
        let mut cohorts = Vec::new();
        for (e_index, &noise_edge) in gen.noise_edges.iter().enumerate() {
            let edge = noise_edge << (stage - 1);
            let req = GenerateRequest {
                labels: vec![t.label.clone()],
                edge,
                count: gen.count,
                seed: sub_seed(config.seed, SEED_GENERATE + 16 * (t_index as u64 * 8 + e_index as u64)),
                fixed_noise: false,
            };
            let batch = generate_with(&g, &meta, &checkpoint, &req)?;
            batch.write(&root.join(&t.name).join(format!("edge{edge}")), gen.save_volumes)?;
            cohorts.push(Cohort::new(format!("generated-{edge}"), batch.volumes));
        }
        all.push(TargetCohorts { name: t.name.clone(), label: t.label.clone(), cohorts });
    }
    if let Some(sweep) = &gen.sweep {
        let edge = sweep.noise_edge << (stage - 1);
        let req = GenerateRequest {
            labels: sweep.labels.clone(),
            edge,
            count: sweep.labels.len(),
            seed: sub_seed(config.seed, SEED_GENERATE + 15),
            fixed_noise: true,
        };
        let batch = generate_with(&g, &meta, &checkpoint, &req)?;
        let dir = root.join(&sweep.name);
        batch.write(&dir, true)?;
        if config.evaluate.plots && !batch.volumes.is_empty() {
            let titles: Vec<String> = sweep.labels.iter().map(label_title).collect();
            section_plot(&dir.join("sections.svg"), &titles, &batch.volumes, edge / 2)?;
        }
    }
    Ok(all)
}

fn label_title(l: &ConditionLabel) -> String {
    let mut parts = Vec::new();
    if let Some(k) = l.rock_type {
        parts.push(format!("rock {k}"));
    }
    if let Some(p) = l.porosity {
        parts.push(format!("phi {p:.2}"));
    }
    match l.lambda {
        Some(crate::conditioning::LambdaLabel::Isotropic(x)) => parts.push(format!("lambda {x:.2}")),
        Some(crate::conditioning::LambdaLabel::Anisotropic(a)) => {
            parts.push(format!("lambda ({:.2}, {:.2}, {:.2})", a[0], a[1], a[2]))
        }
        None => {}
    }
    parts.join(", ")
}

/// Training samples matching a target's rock type, at most `count`.
fn reference_cohort(dataset: &SubvolumeDataset, label: &ConditionLabel, count: usize, seed: u64) -> Cohort {
    let mut idx: Vec<usize> = dataset
        .labels()
        .enumerate()
        .filter(|(_, l)| label.rock_type.is_none() || l.rock_type == label.rock_type)
        .map(|(i, _)| i)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    idx.truncate(count);
    idx.sort_unstable();
    Cohort::new("training", idx.iter().map(|&i| dataset.sample(i)).collect())
}

fn evaluate_cohorts(
    config: &ExperimentConfig,
    dataset: &SubvolumeDataset,
    generated: &[TargetCohorts],
) -> Result<ExperimentReport, WorkbenchError> {
    let metrics = config.evaluate.selection()?;
    let mut report = ExperimentReport {
        experiment: config.name.clone(),
        seed: config.seed,
        training_samples: dataset.len(),
        targets: Vec::new(),
    };
    for (i, t) in generated.iter().enumerate() {
        let reference = reference_cohort(dataset, &t.label, config.generate.count, sub_seed(config.seed, SEED_REFERENCE + i as u64));
        let mut cohorts = Vec::with_capacity(1 + t.cohorts.len());
        if !reference.volumes.is_empty() {
            cohorts.push(reference);
        }
        cohorts.extend(t.cohorts.iter().filter(|c| !c.volumes.is_empty()).cloned());
        if cohorts.is_empty() {
            continue;
        }
        let r = cohort_compare(&cohorts, &metrics, &config.evaluate.swd, sub_seed(config.seed, SEED_SWD))?;
        report.targets.push(TargetReport { name: t.name.clone(), label: t.label.clone(), report: r });
    }
    Ok(report)
}

fn training_plots(history: &TrainHistory, dir: &Path) -> Result<(), WorkbenchError> {
    std::fs::create_dir_all(dir).map_err(|e| WorkbenchError::io(dir, e))?;
    if !history.losses.is_empty() {
        let step = (history.losses.len() / 2000).max(1);
        let pick = |f: fn(&crate::training::LossRecord) -> f64| -> Vec<(f64, f64)> {
            history.losses.iter().step_by(step).map(|r| (r.global_iteration as f64, f(r))).collect()
        };
        line_plot(
            &dir.join("losses.svg"),
            "training losses",
            "iteration",
            "loss",
            &[("discriminator".into(), pick(|r| r.loss_d)), ("generator".into(), pick(|r| r.loss_g))],
        )?;
    }
    if !history.swd.is_empty() {
        let pts = history.swd.iter().map(|p| (p.global_iteration as f64, p.swd)).collect();
        line_plot(&dir.join("swd_training.svg"), "SWD during training", "iteration", "SWD (x1e3)", &[("swd".into(), pts)])?;
    }
    Ok(())
}
