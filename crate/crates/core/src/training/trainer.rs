use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tch::{Kind, Tensor};

use super::checkpoint::{
    kind_from_name, kind_name, load_adam, load_history, load_meta, load_networks, save_checkpoint, CheckpointMeta,
    CheckpointParts, DataConvention, LossStats, CHECKPOINT_FORMAT, CHECKPOINT_VERSION,
};
use super::loss::{discriminator_loss, generator_loss, PhasedCritic};
use super::{binarize_output, generate_raw, sample_noise, Adam, TrainError, TrainPlan};
use crate::conditioning::{make_latent, ConditionLabel, Conditioner};
use crate::data::{downsample_to, SubvolumeDataset};
use crate::eval::{multiscale_swd, SwdConfig};
use crate::progan::{
    Discriminator, DiscriminatorSpec, Generator, GeneratorSpec, Parameterized, StagePhase, BASE_EDGE, MIN_NOISE_EDGE,
};
use crate::volume::VoxelVolume;

/// Random-stream offsets; iteration `i` uses stream `i`.
const STREAM_INIT: u64 = 1 << 40;
const STREAM_GROW: u64 = (1 << 40) + 16;
const STREAM_PROBE: u64 = (1 << 40) + 64;
/// Stage datasets above this many voxels are assembled lazily per batch.
const CACHE_LIMIT: usize = 1 << 27;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub global_iteration: usize,
    pub stage: usize,
    pub alpha: f64,
    pub loss_d: f64,
    pub loss_g: f64,
    pub penalty: f64,
    pub real_score: f64,
    pub fake_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwdPoint {
    pub global_iteration: usize,
    pub stage: usize,
    pub alpha: f64,
    pub swd: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub losses: Vec<LossRecord>,
    pub swd: Vec<SwdPoint>,
}

pub type StepRecord = LossRecord;

/// Held-out real samples used to track SWD during training.
#[derive(Debug, Clone)]
pub struct SwdProbe {
    pub real: Vec<VoxelVolume>,
    pub labels: Vec<ConditionLabel>,
    pub config: SwdConfig,
    pub seed: u64,
}

enum StageData {
    Cached(Tensor),
    Lazy,
}

pub struct Trainer {
    plan: TrainPlan,
    conditioner: Conditioner,
    kind: Kind,
    generator: Generator,
    discriminator: Discriminator,
    opt_g: Adam,
    opt_d: Adam,
    stage: usize,
    stage_iteration: usize,
    global_iteration: usize,
    history: TrainHistory,
    stats: LossStats,
    dataset: SubvolumeDataset,
    labels: Tensor,
    data: StageData,
    output: Option<PathBuf>,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn stage_edge(stage: usize) -> usize {
    BASE_EDGE << (stage - 1)
}

impl Trainer {
    /// Fresh networks at stage 1. `dataset` must carry the labels the
    /// conditioner expects and have an edge reachable from the final stage
    /// edge by doubling.
    pub fn new(plan: TrainPlan, conditioner: Conditioner, dataset: &SubvolumeDataset, kind: Kind) -> Result<Self, TrainError> {
        plan.validate()?;
        check_dataset(&plan, dataset)?;
        let labels = dataset_labels(&conditioner, dataset)?;
        let gspec = GeneratorSpec::new(plan.widths.clone(), conditioner.dim());
        let dspec = DiscriminatorSpec::mirror(&gspec);
        let mut rng = stream_rng(plan.seed, STREAM_INIT);
        let generator = Generator::new(gspec, 1, kind, &mut rng)?;
        let discriminator = Discriminator::new(dspec, 1, kind, &mut rng)?;
        let mut t = Self {
            opt_g: Adam::new(plan.adam),
            opt_d: Adam::new(plan.adam),
            plan,
            conditioner,
            kind,
            generator,
            discriminator,
            stage: 1,
            stage_iteration: 0,
            global_iteration: 0,
            history: TrainHistory::default(),
            stats: LossStats::default(),
            dataset: dataset.clone(),
            labels,
            data: StageData::Lazy,
            output: None,
        };
        t.data = t.build_stage_data()?;
        Ok(t)
    }

    /// Continues from a checkpoint directory with the same dataset.
    pub fn resume(dir: &Path, dataset: &SubvolumeDataset) -> Result<Self, TrainError> {
        let meta = load_meta(dir)?;
        check_dataset(&meta.plan, dataset)?;
        let (generator, discriminator) = load_networks(dir, &meta)?;
        let (mg, md) = load_adam(dir)?;
        let adam = |steps, moments: &[(String, Tensor)]| {
            Adam::restore(meta.plan.adam, steps, moments).map_err(|m| TrainError::Checkpoint { path: dir.to_path_buf(), message: m })
        };
        let labels = dataset_labels(&meta.conditioner, dataset)?;
        let mut t = Self {
            opt_g: adam(&meta.adam_steps_g, &mg)?,
            opt_d: adam(&meta.adam_steps_d, &md)?,
            kind: kind_from_name(&meta.kind),
            generator,
            discriminator,
            stage: meta.phase.stage,
            stage_iteration: meta.stage_iteration,
            global_iteration: meta.global_iteration,
            history: load_history(dir)?,
            stats: meta.loss_stats,
            dataset: dataset.clone(),
            labels,
            data: StageData::Lazy,
            output: None,
            plan: meta.plan,
            conditioner: meta.conditioner,
        };
        t.data = t.build_stage_data()?;
        Ok(t)
    }

    /// Directory for diagnostic checkpoints written when a loss goes non-finite.
    pub fn with_output(mut self, dir: &Path) -> Self {
        self.output = Some(dir.to_path_buf());
        self
    }

    pub fn plan(&self) -> &TrainPlan {
        &self.plan
    }

    pub fn conditioner(&self) -> &Conditioner {
        &self.conditioner
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn discriminator(&self) -> &Discriminator {
        &self.discriminator
    }

    pub fn history(&self) -> &TrainHistory {
        &self.history
    }

    pub fn global_iteration(&self) -> usize {
        self.global_iteration
    }

    pub fn stage_iteration(&self) -> usize {
        self.stage_iteration
    }

    pub fn phase(&self) -> StagePhase {
        StagePhase::new(self.stage, self.alpha_at(self.stage, self.stage_iteration))
    }

    /// Fade-in weight at a stage iteration: linear from 0 over the fade
    /// window, then 1. Stage 1 has nothing to fade.
    pub fn alpha_at(&self, stage: usize, iteration: usize) -> f64 {
        let fade = self.plan.stage(stage).fade_iterations();
        if stage == 1 || fade == 0 {
            1.0
        } else {
            (iteration as f64 / fade as f64).min(1.0)
        }
    }

    pub fn is_finished(&self) -> bool {
        self.stage == self.plan.final_stage() && self.stage_iteration >= self.plan.stage(self.stage).iterations
    }

    /// Voxel edge of generated samples at the current stage.
    pub fn voxel_size(&self) -> f64 {
        self.dataset.voxel_size() * self.dataset.edge() as f64 / stage_edge(self.stage) as f64
    }

    fn build_stage_data(&self) -> Result<StageData, TrainError> {
        let edge = stage_edge(self.stage);
        let n = self.dataset.len();
        if n * edge.pow(3) > CACHE_LIMIT {
            return Ok(StageData::Lazy);
        }
        let ds = &self.dataset;
        let vols: Vec<Vec<f32>> = (0..n)
            .into_par_iter()
            .map(|i| Ok(downsample_to(&ds.sample(i), edge)?.into_data()))
            .collect::<Result<_, TrainError>>()?;
        let flat: Vec<f32> = vols.concat().into_iter().map(|x| 2.0 * x - 1.0).collect();
        let e = edge as i64;
        Ok(StageData::Cached(Tensor::from_slice(&flat).view([n as i64, 1, e, e, e]).to_kind(self.kind)))
    }

    fn real_batch(&self, idx: &[i64]) -> Result<Tensor, TrainError> {
        match &self.data {
            StageData::Cached(t) => Ok(t.index_select(0, &Tensor::from_slice(idx))),
            StageData::Lazy => {
                let edge = stage_edge(self.stage);
                let vols = idx
                    .iter()
                    .map(|&i| downsample_to(&self.dataset.sample(i as usize), edge))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(crate::progan::volumes_to_tensor(&vols, self.kind)?)
            }
        }
    }

    fn grow(&mut self) -> Result<(), TrainError> {
        let next = self.stage + 1;
        let mut rng = stream_rng(self.plan.seed, STREAM_GROW + next as u64);
        self.generator.grow(&mut rng)?;
        self.discriminator.grow(&mut rng)?;
        self.stage = next;
        self.stage_iteration = 0;
        self.data = self.build_stage_data()?;
        log::info!("grew to stage {next} (edge {})", stage_edge(next));
        Ok(())
    }

    fn abort(&self, which: &'static str) -> TrainError {
        let err = TrainError::NonFinite { which, stage: self.stage, iteration: self.stage_iteration };
        if let Some(out) = &self.output {
            let dir = out.join("diagnostic");
            match self.save_with(&dir, Some(err.to_string())) {
                Ok(()) => log::error!("{err}; diagnostic checkpoint in {}", dir.display()),
                Err(e) => log::error!("{err}; diagnostic checkpoint failed: {e}"),
            }
        }
        err
    }

    /// One discriminator update followed by one generator update.
    pub fn step(&mut self) -> Result<StepRecord, TrainError> {
        if self.is_finished() {
            return Err(TrainError::InvalidPlan("training already finished".into()));
        }
        if self.stage_iteration >= self.plan.stage(self.stage).iterations {
            self.grow()?;
        }
        let alpha = self.alpha_at(self.stage, self.stage_iteration);
        let stage_plan = *self.plan.stage(self.stage);
        let b = self.plan.batch_size;
        let mut rng = stream_rng(self.plan.seed, self.global_iteration as u64);
        let n = self.dataset.len() as i64;
        let idx: Vec<i64> = (0..b).map(|_| rng.random_range(0..n)).collect();
        let real = self.real_batch(&idx)?;
        let labels = self.labels.index_select(0, &Tensor::from_slice(&idx)).to_kind(self.kind);
        let z = sample_noise(b, MIN_NOISE_EDGE, self.kind, &mut rng);
        let t_values: Vec<f64> = (0..b).map(|_| rng.random::<f64>()).collect();
        let t = Tensor::from_slice(&t_values).to_kind(self.kind);

        // discriminator update; fakes carry the real samples' labels
        let fake = tch::no_grad(|| self.generator.forward(&make_latent(&z, &labels)?, alpha).map_err(TrainError::from))?;
        let d_loss = {
            let critic = PhasedCritic { discriminator: &self.discriminator, alpha };
            discriminator_loss(&critic, &real, &fake, &labels, &t, self.plan.gp_weight)?
        };
        let loss_d = d_loss.total.double_value(&[]);
        if !loss_d.is_finite() {
            return Err(self.abort("discriminator"));
        }
        let d_params = self.discriminator.named_parameters();
        let inputs: Vec<&Tensor> = d_params.iter().map(|(_, t)| *t).collect();
        let grads = Tensor::f_run_backward(&[&d_loss.total], &inputs, false, false)?;
        self.opt_d.step(&d_params, &grads, stage_plan.learning_rate);

        // generator update with labels drawn over the training range
        let gen_labels = self.conditioner.sample_labels(b, &mut rng);
        let c = self.conditioner.label_matrix(&gen_labels)?.to_kind(self.kind);
        let z = sample_noise(b, MIN_NOISE_EDGE, self.kind, &mut rng);
        let fake = self.generator.forward(&make_latent(&z, &c)?, alpha)?;
        let g_loss = {
            let critic = PhasedCritic { discriminator: &self.discriminator, alpha };
            generator_loss(&critic, &fake, &c)?
        };
        let loss_g = g_loss.double_value(&[]);
        if !loss_g.is_finite() {
            return Err(self.abort("generator"));
        }
        let g_params = self.generator.named_parameters();
        let inputs: Vec<&Tensor> = g_params.iter().map(|(_, t)| *t).collect();
        let grads = Tensor::f_run_backward(&[&g_loss], &inputs, false, false)?;
        self.opt_g.step(&g_params, &grads, stage_plan.learning_rate);

        let record = LossRecord {
            global_iteration: self.global_iteration,
            stage: self.stage,
            alpha,
            loss_d,
            loss_g,
            penalty: d_loss.penalty,
            real_score: d_loss.real_score,
            fake_score: d_loss.fake_score,
        };
        self.stats.push(loss_d, loss_g);
        self.history.losses.push(record.clone());
        self.stage_iteration += 1;
        self.global_iteration += 1;
        Ok(record)
    }

    pub fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            phase: self.phase(),
            stage_iteration: self.stage_iteration,
            global_iteration: self.global_iteration,
            kind: kind_name(self.kind).into(),
            diagnostic: None,
            data: DataConvention::signed(self.voxel_size(), self.dataset.edge()),
            loss_stats: self.stats,
            generator: self.generator.spec().clone(),
            discriminator: self.discriminator.spec().clone(),
            conditioner: self.conditioner.clone(),
            plan: self.plan.clone(),
            adam_steps_g: self.opt_g.steps(),
            adam_steps_d: self.opt_d.steps(),
        }
    }

    fn save_with(&self, dir: &Path, diagnostic: Option<String>) -> Result<(), TrainError> {
        let mut meta = self.meta();
        meta.diagnostic = diagnostic;
        save_checkpoint(
            dir,
            CheckpointParts {
                meta: &meta,
                generator: &self.generator,
                discriminator: &self.discriminator,
                adam_g: self.opt_g.moments(),
                adam_d: self.opt_d.moments(),
                history: &self.history,
            },
        )
    }

    pub fn save(&self, dir: &Path) -> Result<(), TrainError> {
        self.save_with(dir, None)
    }

    /// Measures SWD of freshly generated samples against the probe set at
    /// the current stage edge (skipped below the coarsest SWD level).
    pub fn probe_swd(&mut self, probe: &SwdProbe) -> Result<Option<f64>, TrainError> {
        let edge = stage_edge(self.stage);
        if edge < crate::eval::swd::COARSEST_LEVEL_EDGE {
            return Ok(None);
        }
        let real = probe.real.iter().map(|v| downsample_to(v, edge)).collect::<Result<Vec<_>, _>>()?;
        let mut rng = stream_rng(probe.seed, STREAM_PROBE);
        let noise = sample_noise(probe.labels.len(), MIN_NOISE_EDGE, self.kind, &mut rng);
        let alpha = self.alpha_at(self.stage, self.stage_iteration);
        let raw = generate_raw(&self.generator, &self.conditioner, &probe.labels, &noise, alpha)?;
        let fake = binarize_output(&raw, self.voxel_size())?;
        let report = multiscale_swd(&real, &fake, &probe.config, probe.seed)?;
        self.history.swd.push(SwdPoint { global_iteration: self.global_iteration, stage: self.stage, alpha, swd: report.average });
        Ok(Some(report.average))
    }
}

fn check_dataset(plan: &TrainPlan, dataset: &SubvolumeDataset) -> Result<(), TrainError> {
    let edge = dataset.edge();
    let fin = plan.final_edge();
    if dataset.is_empty() {
        return Err(TrainError::InvalidPlan("empty training dataset".into()));
    }
    if edge < fin || edge % fin != 0 || !(edge / fin).is_power_of_two() {
        return Err(TrainError::InvalidPlan(format!("sample edge {edge} cannot be reduced to final edge {fin} by halving")));
    }
    Ok(())
}

fn dataset_labels(conditioner: &Conditioner, dataset: &SubvolumeDataset) -> Result<Tensor, TrainError> {
    let labels = dataset
        .labels()
        .map(|l| ConditionLabel::from_sample(l, &conditioner.schema))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(conditioner.label_matrix(&labels)?)
}

/// Runs every stage of the plan. With an output directory, writes a rolling
/// `checkpoint/` at the plan cadence, `stage{s}/` at each stage end and
/// `model/` at the end.
pub fn run_schedule(
    plan: TrainPlan,
    conditioner: Conditioner,
    dataset: &SubvolumeDataset,
    output: Option<&Path>,
    probe: Option<&SwdProbe>,
) -> Result<Trainer, TrainError> {
    let mut trainer = Trainer::new(plan, conditioner, dataset, Kind::Float)?;
    if let Some(out) = output {
        trainer = trainer.with_output(out);
    }
    continue_schedule(&mut trainer, output, probe)?;
    Ok(trainer)
}

/// Drives an existing trainer (fresh or resumed) to the end of its plan.
pub fn continue_schedule(trainer: &mut Trainer, output: Option<&Path>, probe: Option<&SwdProbe>) -> Result<(), TrainError> {
    let total = trainer.plan().total_iterations();
    let every = trainer.plan().checkpoint_every;
    let swd_every = trainer.plan().swd_every;
    while !trainer.is_finished() {
        let r = trainer.step()?;
        let done = trainer.global_iteration();
        if done % 100 == 0 || done == total {
            log::info!(
                "iter {done}/{total} stage {} alpha {:.3} loss_d {:.4} loss_g {:.4}",
                r.stage,
                r.alpha,
                r.loss_d,
                r.loss_g
            );
        }
        if let (Some(probe), true) = (probe, swd_every > 0 && done % swd_every == 0) {
            if let Some(swd) = trainer.probe_swd(probe)? {
                log::info!("iter {done} swd {swd:.2}");
            }
        }
        if let Some(out) = output {
            if every > 0 && done % every == 0 {
                trainer.save(&out.join("checkpoint"))?;
            }
            if trainer.stage_iteration() == trainer.plan().stage(trainer.phase().stage).iterations {
                trainer.save(&out.join(format!("stage{}", trainer.phase().stage)))?;
            }
        }
    }
    if let Some(out) = output {
        trainer.save(&out.join("model"))?;
    }
    Ok(())
}
