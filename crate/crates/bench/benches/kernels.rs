use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rockgan::data::TruncatedGaussian;
use rockgan::eval::swd::{multiscale_swd, SwdConfig};
use rockgan::flow::{FlowConfig, LbmSolver};
use rockgan::moments::two_point_correlation;
use rockgan::progan::standard_normal;
use rockgan::{Axis, CurveAxis, Generator, GeneratorSpec, VoxelVolume};
use tch::Kind;

fn media(n: usize, edge: usize, seed: u64) -> Vec<VoxelVolume> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gen = TruncatedGaussian::isotropic(edge, 3.0, 0.3);
    (0..n).map(|_| gen.sample(&mut rng).unwrap()).collect()
}

fn correlation(c: &mut Criterion) {
    let v = media(1, 64, 1).remove(0);
    c.bench_function("two_point_correlation 64^3 r<=16", |b| {
        b.iter(|| two_point_correlation(black_box(&v), 16, CurveAxis::Isotropic).unwrap())
    });
}

fn lbm(c: &mut Criterion) {
    let v = media(1, 32, 2).remove(0);
    let mut solver = LbmSolver::new(&v, Axis::X, &FlowConfig::default()).unwrap();
    c.bench_function("lbm step 32^3", |b| b.iter(|| solver.step()));
}

fn swd(c: &mut Criterion) {
    let real = media(16, 32, 3);
    let fake = media(16, 32, 4);
    let cfg = SwdConfig { projections: 128, repeats: 1, ..Default::default() };
    c.bench_function("multiscale swd 16x32^3", |b| b.iter(|| multiscale_swd(black_box(&real), black_box(&fake), &cfg, 0).unwrap()));
}

fn generator(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = Generator::new(GeneratorSpec::new(vec![16, 16, 8, 4], 1), 4, Kind::Float, &mut rng).unwrap();
    let z = standard_normal(&[8, 2, 4, 4, 4], Kind::Float, &mut rng);
    c.bench_function("generator forward 8x32^3", |b| b.iter(|| tch::no_grad(|| g.forward(black_box(&z), 1.0).unwrap())));
}

criterion_group! {
    name = kernels;
    config = Criterion::default().sample_size(10);
    targets = correlation, lbm, swd, generator
}
criterion_main!(kernels);
