//! Canned experiment configurations.

use std::path::PathBuf;

use super::config::*;
use crate::conditioning::{ConditionLabel, ConditionSchema, CorrLengthMode, LabelEncoding, LambdaLabel};
use crate::data::{RockSource, SyntheticCohort};

pub const TEMPLATE_NAMES: [&str; 6] = [
    "type-conditioning",
    "porosity-conditioning",
    "correlation-length",
    "anisotropic-lambda",
    "desk-porosity",
    "desk-correlation-length",
];

/// λx values of the fixed-noise anisotropic sweep (λy = 3.5, λz = 3.8).
pub const SWEEP_LAMBDA_X: [f64; 5] = [3.50, 4.13, 4.75, 5.38, 6.00];

pub fn template(name: &str) -> Option<ExperimentConfig> {
    Some(match name {
        "type-conditioning" => type_conditioning(),
        "porosity-conditioning" => porosity_conditioning(),
        "correlation-length" => correlation_length(),
        "anisotropic-lambda" => anisotropic_lambda(),
        "desk-porosity" => desk_porosity(),
        "desk-correlation-length" => desk_correlation_length(),
        _ => return None,
    })
}

fn rock_sources() -> Vec<SourceConfig> {
    RockSource::reference_set()
        .into_iter()
        .enumerate()
        .map(|(k, r)| SourceConfig { path: PathBuf::from(format!("rocks/{}.raw", r.name.to_lowercase())), name: r.name, rock_type: Some(k) })
        .collect()
}

fn rock_index(name: &str) -> usize {
    RockSource::reference_index(name).expect("reference rock")
}

fn full_scale_generation(targets: Vec<TargetConfig>) -> GenerateConfig {
    GenerateConfig { targets, count: 200, noise_edges: vec![4, 6, 8, 10], save_volumes: false, sweep: None }
}

fn full_scale_train() -> TrainConfig {
    TrainConfig { preset: PlanPreset::FullScale, ..Default::default() }
}

fn full_metrics() -> EvaluateConfig {
    EvaluateConfig { metrics: "swd,phi,lambda,sa,perm".into(), ..Default::default() }
}

/// Five rocks, one-hot labels only.
pub fn type_conditioning() -> ExperimentConfig {
    let targets = RockSource::reference_set()
        .into_iter()
        .enumerate()
        .map(|(k, r)| TargetConfig { name: r.name, label: ConditionLabel::rock(k) })
        .collect();
    ExperimentConfig {
        name: "type-conditioning".into(),
        seed: 0,
        output: None,
        data: DataConfig { sources: rock_sources(), ..Default::default() },
        schema: ConditionSchema::rock_type(5),
        train: full_scale_train(),
        generate: full_scale_generation(targets),
        evaluate: full_metrics(),
    }
}

/// Rock type plus porosity; per-rock porosity targets and a fixed-noise sweep.
pub fn porosity_conditioning() -> ExperimentConfig {
    let targets = [("Doddington", 0.21), ("Estaillades", 0.10), ("Sandy", 0.22)]
        .into_iter()
        .map(|(n, phi)| TargetConfig { name: n.into(), label: ConditionLabel::rock(rock_index(n)).with_porosity(phi) })
        .collect();
    let mut generate = full_scale_generation(targets);
    generate.sweep = Some(SweepConfig {
        name: "porosity-sweep".into(),
        labels: [0.10, 0.15, 0.20, 0.25, 0.30]
            .into_iter()
            .map(|phi| ConditionLabel::rock(rock_index("Doddington")).with_porosity(phi))
            .collect(),
        noise_edge: 10,
    });
    ExperimentConfig {
        name: "porosity-conditioning".into(),
        seed: 0,
        output: None,
        data: DataConfig { sources: rock_sources(), ..Default::default() },
        schema: ConditionSchema { rock_types: 5, porosity: true, ..Default::default() },
        train: full_scale_train(),
        generate,
        evaluate: full_metrics(),
    }
}

/// Rock type plus isotropic correlation length.
pub fn correlation_length() -> ExperimentConfig {
    let targets = [("Berea", 2.4), ("Ketton", 7.0), ("Sandy", 3.5)]
        .into_iter()
        .map(|(n, l)| TargetConfig {
            name: n.into(),
            label: ConditionLabel::rock(rock_index(n)).with_lambda(LambdaLabel::Isotropic(l)),
        })
        .collect();
    ExperimentConfig {
        name: "correlation-length".into(),
        seed: 0,
        output: None,
        data: DataConfig { sources: rock_sources(), ..Default::default() },
        schema: ConditionSchema { rock_types: 5, corr_length: CorrLengthMode::Isotropic, ..Default::default() },
        train: full_scale_train(),
        generate: full_scale_generation(targets),
        evaluate: full_metrics(),
    }
}

/// Labels of the fixed-noise λx sweep.
pub fn anisotropic_sweep_labels() -> Vec<ConditionLabel> {
    SWEEP_LAMBDA_X
        .iter()
        .map(|&lx| ConditionLabel::default().with_lambda(LambdaLabel::Anisotropic([lx, 3.5, 3.8])))
        .collect()
}

/// One rock, three-component correlation length, most anisotropic samples.
pub fn anisotropic_lambda() -> ExperimentConfig {
    let source = rock_sources().into_iter().find(|s| s.name == "Doddington").expect("reference rock");
    let mut generate = full_scale_generation(vec![TargetConfig {
        name: "Doddington".into(),
        label: ConditionLabel::default().with_lambda(LambdaLabel::Anisotropic([5.0, 3.5, 3.8])),
    }]);
    generate.sweep = Some(SweepConfig { name: "lambda-x-sweep".into(), labels: anisotropic_sweep_labels(), noise_edge: 10 });
    ExperimentConfig {
        name: "anisotropic-lambda".into(),
        seed: 0,
        output: None,
        data: DataConfig {
            sources: vec![SourceConfig { rock_type: None, ..source }],
            select_anisotropic: Some(2500),
            ..Default::default()
        },
        schema: ConditionSchema::corr_length(CorrLengthMode::Anisotropic),
        train: full_scale_train(),
        generate,
        evaluate: full_metrics(),
    }
}

fn desk_train() -> TrainConfig {
    TrainConfig {
        preset: PlanPreset::Desk,
        widths: Some(vec![16, 16, 8, 4]),
        batch_size: Some(8),
        iterations: Some(vec![2000, 2000, 2000, 4000]),
        checkpoint_every: Some(500),
        swd_every: Some(50),
        ..Default::default()
    }
}

fn desk_data(porosity: (f64, f64), correlation_length: (f64, f64)) -> DataConfig {
    DataConfig {
        synthetic: Some(SyntheticCohort { count: 256, edge: 32, porosity, correlation_length, anisotropy: [1.0; 3], voxel_size: 1.0 }),
        rotations: 0,
        labels: LabelSource::Construction,
        ..Default::default()
    }
}

/// Synthetic 32³ porosity conditioning that trains on one CPU core.
pub fn desk_porosity() -> ExperimentConfig {
    let targets = [0.15, 0.20, 0.25, 0.30, 0.35]
        .into_iter()
        .map(|phi| TargetConfig { name: format!("phi{phi:.2}"), label: ConditionLabel::default().with_porosity(phi) })
        .collect();
    ExperimentConfig {
        name: "desk-porosity".into(),
        seed: 0,
        output: None,
        data: desk_data((0.15, 0.35), (3.0, 3.0)),
        schema: ConditionSchema { porosity: true, encoding: LabelEncoding::MinMax, ..Default::default() },
        train: desk_train(),
        generate: GenerateConfig { targets, count: 200, noise_edges: vec![4], save_volumes: false, sweep: None },
        evaluate: EvaluateConfig::default(),
    }
}

/// Synthetic 32³ correlation-length conditioning at fixed porosity.
pub fn desk_correlation_length() -> ExperimentConfig {
    let targets = [2.0, 3.0, 4.0, 5.0, 6.0]
        .into_iter()
        .map(|l| TargetConfig { name: format!("lambda{l:.1}"), label: ConditionLabel::default().with_lambda(LambdaLabel::Isotropic(l)) })
        .collect();
    ExperimentConfig {
        name: "desk-correlation-length".into(),
        seed: 0,
        output: None,
        data: desk_data((0.3, 0.3), (2.0, 6.0)),
        schema: ConditionSchema { corr_length: CorrLengthMode::Isotropic, encoding: LabelEncoding::MinMax, ..Default::default() },
        train: desk_train(),
        generate: GenerateConfig { targets, count: 200, noise_edges: vec![4], save_volumes: false, sweep: None },
        evaluate: EvaluateConfig::default(),
    }
}
