//! Training loop behaviour on a tiny synthetic problem.

use rockgan::conditioning::LabelRange;
use rockgan::progan::Parameterized;
use rockgan::training::checkpoint::load_generator;
use rockgan::training::{continue_schedule, TrainPlan};
use rockgan::workbench::{prepare_dataset, template, ExperimentConfig};
use rockgan::{Conditioner, SubvolumeDataset, Trainer, VoxelVolume};
use tch::Kind;

fn tiny() -> (ExperimentConfig, SubvolumeDataset, Conditioner, TrainPlan) {
    let mut cfg = template("desk-porosity").unwrap();
    cfg.seed = 3;
    let synth = cfg.data.synthetic.as_mut().unwrap();
    synth.count = 12;
    synth.edge = 8;
    cfg.train.widths = Some(vec![4, 4]);
    cfg.train.batch_size = Some(3);
    cfg.train.iterations = Some(vec![6, 8]);
    cfg.train.checkpoint_every = Some(0);
    cfg.train.swd_every = Some(0);
    let (ds, _) = prepare_dataset(&cfg).unwrap();
    let conditioner = Conditioner::new(cfg.schema.clone(), LabelRange::from_dataset(&ds, &cfg.schema).unwrap()).unwrap();
    let plan = cfg.plan().unwrap();
    (cfg, ds, conditioner, plan)
}

fn snapshot(t: &Trainer) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for (_, p) in t.generator().snapshot().into_iter().chain(t.discriminator().snapshot()) {
        out.push(Vec::<f64>::try_from(p.to_kind(Kind::Double).flatten(0, -1)).unwrap());
    }
    out
}

#[test]
fn schedule_grows_through_every_stage() {
    let (_, ds, cond, plan) = tiny();
    let mut t = Trainer::new(plan.clone(), cond, &ds, Kind::Float).unwrap();
    let mut stages = Vec::new();
    while !t.is_finished() {
        let r = t.step().unwrap();
        assert!(r.loss_d.is_finite() && r.loss_g.is_finite());
        assert!((0.0..=1.0).contains(&r.alpha));
        stages.push(r.stage);
    }
    assert_eq!(stages.len(), plan.total_iterations());
    assert_eq!(stages.iter().filter(|&&s| s == 1).count(), 6);
    assert_eq!(t.generator().stage(), 2);
    assert_eq!(t.history().losses.len(), 14);
    let fading: Vec<f64> = t.history().losses.iter().filter(|r| r.stage == 2).map(|r| r.alpha).collect();
    assert!(fading.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(*fading.last().unwrap(), 1.0);
}

#[test]
fn resumed_training_replays_bit_exactly() {
    let (_, ds, cond, plan) = tiny();
    let dir = tempfile::tempdir().unwrap();

    let mut straight = Trainer::new(plan.clone(), cond.clone(), &ds, Kind::Float).unwrap();
    continue_schedule(&mut straight, None, None).unwrap();

    let mut first = Trainer::new(plan, cond, &ds, Kind::Float).unwrap();
    for _ in 0..9 {
        first.step().unwrap();
    }
    first.save(dir.path()).unwrap();
    drop(first);
    let mut resumed = Trainer::resume(dir.path(), &ds).unwrap();
    assert_eq!(resumed.global_iteration(), 9);
    continue_schedule(&mut resumed, None, None).unwrap();

    assert_eq!(snapshot(&straight), snapshot(&resumed));
    assert_eq!(straight.history().losses, resumed.history().losses);
}

#[test]
fn saved_model_loads_with_the_same_generator() {
    let (_, ds, cond, plan) = tiny();
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(plan, cond, &ds, Kind::Float).unwrap();
    continue_schedule(&mut t, Some(dir.path()), None).unwrap();
    let (g, meta) = load_generator(&dir.path().join("model")).unwrap();
    assert_eq!(meta.global_iteration, 14);
    let a: Vec<_> = g.snapshot().into_iter().map(|(n, p)| (n, Vec::<f32>::try_from(p.flatten(0, -1)).unwrap())).collect();
    let b: Vec<_> = t.generator().snapshot().into_iter().map(|(n, p)| (n, Vec::<f32>::try_from(p.flatten(0, -1)).unwrap())).collect();
    assert_eq!(a, b);
    assert!(dir.path().join("stage1").exists());
}

#[test]
fn mismatched_dataset_edge_is_rejected() {
    let (_, _, cond, plan) = tiny();
    let v = VoxelVolume::from_pore_fn([12; 3], 1.0, |x, _, _| x % 2 == 0).unwrap();
    let mut odd = SubvolumeDataset::from_volumes("odd", vec![v], None).unwrap();
    odd.label_mut(0).porosity = Some(0.5);
    assert!(Trainer::new(plan, cond, &odd, Kind::Float).is_err());
}
