use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rockgan::conditioning::{ConditionLabel, LambdaLabel};
use rockgan::corrfit::{axial_correlation_lengths, correlation_length};
use rockgan::data::{augment_rotations, extract_subvolumes, resample_volume, rev_curve, write_dataset, SubvolumeDataset};
use rockgan::eval::plot::{line_plot, write_report_plots};
use rockgan::eval::{cohort_compare, Cohort, MetricSelection};
use rockgan::flow::{lbm_permeability, permeability_all_axes, FlowConfig};
use rockgan::moments::{porosity, specific_surface_area, CurveAxis};
use rockgan::training::{continue_schedule, Trainer};
use rockgan::volume::{Axis, VoxelVolume};
use rockgan::workbench::experiment::prepare_dataset;
use rockgan::workbench::{generate, run_experiment, template, ExperimentConfig, GenerateRequest, WorkbenchError, TEMPLATE_NAMES};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "rockgan", version, about = "Conditional progressive GAN for 3D digital rocks")]
struct Cli {
    /// Experiment configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Resample, crop and rotate source volumes into a labelled dataset.
    PrepareData(PrepareArgs),
    /// Porosity spread of random crops against crop size.
    Rev(RevArgs),
    /// Train the configured experiment's model.
    Train(TrainArgs),
    /// Generate binary volumes from a checkpoint.
    Generate(GenerateArgs),
    /// Compare cohorts of volumes.
    Evaluate(EvaluateArgs),
    /// Single-phase lattice Boltzmann permeability of a volume.
    Permeability(PermeabilityArgs),
    /// Porosity, surface area and correlation lengths of a volume.
    Fit(FitArgs),
    /// Prepare, train, generate and evaluate in one run.
    RunExperiment(ExperimentArgs),
}

#[derive(Args)]
struct PrepareArgs {
    /// Source volume as `path` or `name=path`; repeat for several rocks.
    #[arg(long)]
    source: Vec<String>,
    /// Rock type index for each source, in order.
    #[arg(long, value_delimiter = ',')]
    rock_types: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    edge: usize,
    #[arg(long, default_value_t = 12)]
    stride: usize,
    /// Extra quarter-turn copies (0 or 2).
    #[arg(long, default_value_t = 2)]
    rotations: u8,
    /// Edge sources are resampled to first; 0 keeps them as they are.
    #[arg(long, default_value_t = 250)]
    resample: usize,
}

#[derive(Args)]
struct RevArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [16, 32, 64, 96])]
    edges: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    crops: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Continue from a checkpoint directory.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct LabelArgs {
    #[arg(long)]
    rock_type: Option<usize>,
    #[arg(long)]
    porosity: Option<f64>,
    /// One value (isotropic) or three comma-separated values (x,y,z).
    #[arg(long, value_delimiter = ',')]
    lambda: Vec<f64>,
}

impl LabelArgs {
    fn label(&self) -> Result<ConditionLabel, WorkbenchError> {
        let lambda = match self.lambda.as_slice() {
            [] => None,
            [l] => Some(LambdaLabel::Isotropic(*l)),
            [x, y, z] => Some(LambdaLabel::Anisotropic([*x, *y, *z])),
            other => return Err(WorkbenchError::Config(format!("--lambda takes 1 or 3 values, got {}", other.len()))),
        };
        Ok(ConditionLabel { rock_type: self.rock_type, porosity: self.porosity, lambda })
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output edge; must be one the model supports.
    #[arg(long)]
    edge: usize,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[command(flatten)]
    label: LabelArgs,
    /// Porosity values generated from one shared noise draw.
    #[arg(long, value_delimiter = ',', conflicts_with = "porosity")]
    sweep_porosity: Vec<f64>,
    /// Share one noise draw across all samples.
    #[arg(long)]
    fixed_noise: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Cohort as `name=dir`; the first is the reference for SWD.
    #[arg(long, required = true)]
    cohort: Vec<String>,
    /// Comma-separated subset of swd,phi,lambda,sa,perm.
    #[arg(long)]
    metrics: Option<String>,
}

#[derive(Args)]
struct PermeabilityArgs {
    #[arg(long)]
    volume: PathBuf,
    /// x, y, z or all.
    #[arg(long, default_value = "all")]
    axis: String,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long, default_value_t = 1e-5)]
    force: f64,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 50_000)]
    max_steps: usize,
    /// Disable the mirrored inlet/outlet padding.
    #[arg(long)]
    no_mirror: bool,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    volume: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Start from a built-in template instead of --config.
    #[arg(long, conflicts_with = "list_templates")]
    template: Option<String>,
    #[arg(long)]
    list_templates: bool,
    /// Write the resolved config to the output directory and stop.
    #[arg(long)]
    dump_config: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.category().exit_code() as u8)
        }
    }
}

struct Ctx {
    config: Option<(ExperimentConfig, String)>,
    seed: Option<u64>,
    out: Option<PathBuf>,
}

impl Ctx {
    fn out(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| self.config.as_ref().and_then(|(c, _)| c.output.clone()))
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    fn seed(&self) -> u64 {
        self.seed.or(self.config.as_ref().map(|(c, _)| c.seed)).unwrap_or(0)
    }

    fn require_config(&self, command: &str) -> Result<ExperimentConfig, WorkbenchError> {
        let (cfg, _) = self
            .config
            .as_ref()
            .ok_or_else(|| WorkbenchError::Config(format!("{command} needs --config")))?;
        let mut cfg = cfg.clone();
        cfg.seed = self.seed();
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), WorkbenchError> {
    let config = cli.config.as_deref().map(ExperimentConfig::load).transpose()?;
    let ctx = Ctx { config, seed: cli.seed, out: cli.out };
    match cli.command {
        Command::PrepareData(a) => prepare_data(&ctx, a),
        Command::Rev(a) => rev(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Generate(a) => generate_cmd(&ctx, a),
        Command::Evaluate(a) => evaluate(&ctx, a),
        Command::Permeability(a) => permeability(&ctx, a),
        Command::Fit(a) => fit(&ctx, a),
        Command::RunExperiment(a) => experiment(&ctx, a),
    }
}

fn create_dir(dir: &Path) -> Result<(), WorkbenchError> {
    std::fs::create_dir_all(dir).map_err(|e| WorkbenchError::Io { path: dir.to_path_buf(), source: e })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), WorkbenchError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| WorkbenchError::Config(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| WorkbenchError::Io { path: path.to_path_buf(), source: e })
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn split_named(spec: &str) -> (String, PathBuf) {
    match spec.split_once('=') {
        Some((name, path)) => (name.to_string(), PathBuf::from(path)),
        None => {
            let p = PathBuf::from(spec);
            let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| spec.to_string());
            (name, p)
        }
    }
}

fn prepare_data(ctx: &Ctx, a: PrepareArgs) -> Result<(), WorkbenchError> {
    let out = ctx.out();
    let ds = if a.source.is_empty() {
        let cfg = ctx.require_config("prepare-data without --source")?;
        let (ds, summary) = prepare_dataset(&cfg)?;
        create_dir(&out)?;
        write_json(&out.join("summary.json"), &summary)?;
        ds
    } else {
        if a.rotations != 0 && a.rotations != 2 {
            return Err(WorkbenchError::Config(format!("--rotations must be 0 or 2, got {}", a.rotations)));
        }
        if !a.rock_types.is_empty() && a.rock_types.len() != a.source.len() {
            return Err(WorkbenchError::Config("give one --rock-types entry per --source".into()));
        }
        let mut all: Option<SubvolumeDataset> = None;
        for (i, spec) in a.source.iter().enumerate() {
            let (name, path) = split_named(spec);
            let mut v = VoxelVolume::read_raw(&path)?;
            if a.resample > 0 && v.cubic_edge() != Some(a.resample) {
                v = resample_volume(&v, a.resample)?;
            }
            let part = extract_subvolumes(Arc::new(v), &name, a.edge, a.stride, a.rock_types.get(i).copied())?;
            match &mut all {
                Some(d) => d.extend(part)?,
                None => all = Some(part),
            }
        }
        let ds = all.expect("at least one source");
        if a.rotations == 2 {
            augment_rotations(&ds)
        } else {
            ds
        }
    };
    write_dataset(&ds, &out)?;
    println!("wrote {} samples of edge {} to {}", ds.len(), ds.edge(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct RevOut {
    edge: usize,
    mean: f64,
    cv: f64,
    porosity: Vec<f64>,
}

fn rev(ctx: &Ctx, a: RevArgs) -> Result<(), WorkbenchError> {
    let v = VoxelVolume::read_raw(&a.source)?;
    let rows = rev_curve(&v, &a.edges, a.crops, ctx.seed())?;
    let out = ctx.out();
    create_dir(&out)?;
    let table: Vec<RevOut> = rows
        .iter()
        .map(|r| RevOut { edge: r.edge, mean: r.mean(), cv: r.cv(), porosity: r.porosities.clone() })
        .collect();
    for r in &table {
        println!("edge {:>4}  mean {:.4}  cv {:.4}", r.edge, r.mean, r.cv);
    }
    write_json(&out.join("rev.json"), &table)?;
    let cv: Vec<(f64, f64)> = table.iter().map(|r| (r.edge as f64, r.cv)).collect();
    line_plot(&out.join("rev.svg"), "porosity spread of crops", "crop edge (voxels)", "coefficient of variation", &[("cv".into(), cv)])?;
    Ok(())
}

fn train(ctx: &Ctx, a: TrainArgs) -> Result<(), WorkbenchError> {
    let cfg = ctx.require_config("train")?;
    cfg.validate()?;
    let out = ctx.out();
    create_dir(&out)?;
    let (_, text) = ctx.config.as_ref().expect("checked");
    std::fs::write(out.join("config.toml"), text).map_err(|e| WorkbenchError::Io { path: out.join("config.toml"), source: e })?;
    let (ds, summary) = prepare_dataset(&cfg)?;
    write_json(&out.join("data_summary.json"), &summary)?;
    let mut trainer = match &a.resume {
        Some(dir) => Trainer::resume(dir, &ds)?,
        None => {
            let ranges = rockgan::conditioning::LabelRange::from_dataset(&ds, &cfg.schema)?;
            let conditioner = rockgan::Conditioner::new(cfg.schema.clone(), ranges)?;
            Trainer::new(cfg.plan()?, conditioner, &ds, cfg.train.kind())?
        }
    }
    .with_output(&out);
    continue_schedule(&mut trainer, Some(&out), None)?;
    println!("model written to {}", out.join("model").display());
    Ok(())
}

fn generate_cmd(ctx: &Ctx, a: GenerateArgs) -> Result<(), WorkbenchError> {
    let base = a.label.label()?;
    let (labels, count, fixed) = if a.sweep_porosity.is_empty() {
        (vec![base], a.count, a.fixed_noise)
    } else {
        let labels: Vec<ConditionLabel> = a.sweep_porosity.iter().map(|&p| base.clone().with_porosity(p)).collect();
        let n = labels.len();
        (labels, n, true)
    };
    let req = GenerateRequest { labels, edge: a.edge, count, seed: ctx.seed(), fixed_noise: fixed };
    let batch = generate(&a.checkpoint, &req)?;
    let out = ctx.out();
    batch.write(&out, true)?;
    println!("wrote {} volumes of edge {} to {}", batch.volumes.len(), a.edge, out.display());
    Ok(())
}

fn read_cohort(name: &str, path: &Path) -> Result<Cohort, WorkbenchError> {
    if path.is_file() {
        return Ok(Cohort::new(name, vec![VoxelVolume::read_raw(path)?]));
    }
    if path.join("manifest.toml").exists() {
        let ds = rockgan::data::read_dataset(path)?;
        return Ok(Cohort::new(name, ds.samples().collect()));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| WorkbenchError::Io { path: path.to_path_buf(), source: e })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "raw"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(WorkbenchError::Config(format!("{} holds no .raw volumes or dataset", path.display())));
    }
    let volumes = files.iter().map(|f| VoxelVolume::read_raw(f)).collect::<Result<Vec<_>, _>>()?;
    Ok(Cohort::new(name, volumes))
}

fn evaluate(ctx: &Ctx, a: EvaluateArgs) -> Result<(), WorkbenchError> {
    let evaluate_cfg = ctx.config.as_ref().map(|(c, _)| c.evaluate.clone()).unwrap_or_default();
    let metrics: MetricSelection = match &a.metrics {
        Some(m) => m.parse()?,
        None => evaluate_cfg.selection()?,
    };
    let cohorts = a
        .cohort
        .iter()
        .map(|spec| {
            let (name, path) = split_named(spec);
            read_cohort(&name, &path)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let report = cohort_compare(&cohorts, &metrics, &evaluate_cfg.swd, ctx.seed())?;
    let out = ctx.out();
    create_dir(&out)?;
    report.write_json(&out.join("report.json"))?;
    write_report_plots(&report, &out.join("plots"))?;
    for c in &report.cohorts {
        for m in &c.metrics {
            if let Some(s) = &m.summary {
                println!("{:<16} {:<18} median {:>12.5}  iqr {:>10.5}  failures {}", c.name, m.name, s.median, s.iqr(), m.failures.len());
            }
        }
    }
    for s in &report.swd {
        println!("swd {} vs {}: {:.3} (x1e3)", s.cohort, s.reference, s.report.average);
    }
    Ok(())
}

fn parse_axis(s: &str) -> Result<Option<Axis>, WorkbenchError> {
    match s {
        "all" => Ok(None),
        "x" => Ok(Some(Axis::X)),
        "y" => Ok(Some(Axis::Y)),
        "z" => Ok(Some(Axis::Z)),
        other => Err(WorkbenchError::Config(format!("axis must be x, y, z or all, got '{other}'"))),
    }
}

#[derive(Serialize)]
struct PermeabilityOut {
    results: Vec<rockgan::FlowResult>,
    mean_darcy: Option<f64>,
}

fn permeability(ctx: &Ctx, a: PermeabilityArgs) -> Result<(), WorkbenchError> {
    let v = VoxelVolume::read_raw(&a.volume)?;
    let cfg = FlowConfig { tau: a.tau, force: a.force, tol: a.tol, max_steps: a.max_steps, mirror: !a.no_mirror };
    cfg.validate()?;
    let out = match parse_axis(&a.axis)? {
        Some(axis) => PermeabilityOut { results: vec![lbm_permeability(&v, axis, &cfg)?], mean_darcy: None },
        None => {
            let (results, mean) = permeability_all_axes(&v, &cfg)?;
            PermeabilityOut { results, mean_darcy: Some(mean) }
        }
    };
    print_json(&out);
    if let Some(dir) = &ctx.out {
        create_dir(dir)?;
        write_json(&dir.join("permeability.json"), &out)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct FitOut {
    porosity: f64,
    specific_surface_area: f64,
    lambda_iso: Option<f64>,
    lambda_xyz: Option<[f64; 3]>,
    notes: Vec<String>,
}

fn fit(ctx: &Ctx, a: FitArgs) -> Result<(), WorkbenchError> {
    let v = VoxelVolume::read_raw(&a.volume)?;
    let mut notes = Vec::new();
    let lambda_iso = correlation_length(&v, CurveAxis::Isotropic).map_err(|e| notes.push(e.to_string())).ok();
    let lambda_xyz = axial_correlation_lengths(&v).map_err(|e| notes.push(e.to_string())).ok();
    let out = FitOut { porosity: porosity(&v)?, specific_surface_area: specific_surface_area(&v)?, lambda_iso, lambda_xyz, notes };
    print_json(&out);
    if let Some(dir) = &ctx.out {
        create_dir(dir)?;
        write_json(&dir.join("fit.json"), &out)?;
    }
    Ok(())
}

fn experiment(ctx: &Ctx, a: ExperimentArgs) -> Result<(), WorkbenchError> {
    if a.list_templates {
        for t in TEMPLATE_NAMES {
            println!("{t}");
        }
        return Ok(());
    }
    let (mut cfg, text) = match &a.template {
        Some(name) => {
            let cfg = template(name).ok_or_else(|| {
                WorkbenchError::Config(format!("unknown template '{name}'; available: {}", TEMPLATE_NAMES.join(", ")))
            })?;
            (cfg, None)
        }
        None => {
            let (_, text) = ctx.config.as_ref().ok_or_else(|| WorkbenchError::Config("run-experiment needs --config or --template".into()))?;
            (ctx.require_config("run-experiment")?, Some(text.clone()))
        }
    };
    cfg.seed = ctx.seed.unwrap_or(cfg.seed);
    let text = if ctx.seed.is_some() { None } else { text };
    let out = ctx.out.clone().or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out").join(&cfg.name));
    if a.dump_config {
        create_dir(&out)?;
        let path = out.join("config.toml");
        std::fs::write(&path, cfg.to_toml()?).map_err(|e| WorkbenchError::Io { path: path.clone(), source: e })?;
        println!("{}", path.display());
        return Ok(());
    }
    let art = run_experiment(&cfg, text.as_deref(), &out)?;
    println!("report written to {}", art.report.display());
    Ok(())
}
