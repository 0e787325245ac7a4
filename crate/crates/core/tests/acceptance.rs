//! Acceptance suite. Runs every criterion in sequence and prints one
//! PASS/FAIL line each; exits non-zero if any criterion fails.
//!
//! Positional arguments select criteria by number or by a substring of their
//! name, e.g. `cargo test -p rockgan-core --test acceptance -- 1 lbm`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tch::{Kind, Tensor};

use rockgan::corrfit::{correlation_length, fit_correlation_length, FitWindow};
use rockgan::data::{augment_rotations, extract_subvolumes, rev_curve, TruncatedGaussian};
use rockgan::eval::swd::{extract_slice_patches, multiscale_swd, projected_distance, sliced_wasserstein, SwdConfig};
use rockgan::flow::{lbm_permeability, plate_channel, FlowConfig, LbmSolver};
use rockgan::moments::{porosity, specific_surface_area, two_point_correlation};
use rockgan::progan::{standard_normal, DiscriminatorSpec, Parameterized};
use rockgan::stats::{linear_trend, median, spearman};
use rockgan::training::checkpoint::load_history;
use rockgan::training::{discriminator_loss, gradient_penalty, LinearCritic, PhasedCritic, TrainHistory};
use rockgan::workbench::{run_experiment, template, ExperimentArtifacts, ExperimentConfig, ExperimentReport};
use rockgan::{Axis, CorrelationCurve, CurveAxis, Discriminator, Generator, GeneratorSpec, VoxelVolume};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit_s: u64) -> (bool, String) {
    (elapsed <= Duration::from_secs(limit_s), format!("{:.1}s of {limit_s}s", elapsed.as_secs_f64()))
}

fn random_volume(rng: &mut ChaCha8Rng, max_edge: usize) -> VoxelVolume {
    loop {
        let dims = [0; 3].map(|_| rng.random_range(2..=max_edge));
        let p = rng.random_range(0.1..0.9);
        let v = VoxelVolume::from_pore_fn(dims, 1.0, |_, _, _| rng.random_bool(p)).unwrap();
        let n = v.pore_count();
        if n > 0 && n < v.len() {
            return v;
        }
    }
}

fn coords(v: &VoxelVolume) -> Vec<([usize; 3], f64)> {
    let [nx, ny, nz] = v.dims();
    let mut out = Vec::with_capacity(v.len());
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                out.push(([x, y, z], v.get(x, y, z) as f64));
            }
        }
    }
    out
}

/// Correlation at lag `r` along `axis` from an all-pairs scan.
fn brute_correlation(points: &[([usize; 3], f64)], phi: f64, axis: usize, r: usize) -> f64 {
    let (mut sum, mut pairs) = (0.0, 0usize);
    for (p, fp) in points {
        for (q, fq) in points {
            let hit = (0..3).all(|d| if d == axis { q[d] == p[d] + r } else { q[d] == p[d] });
            if hit {
                sum += (fp - phi) * (fq - phi);
                pairs += 1;
            }
        }
    }
    sum / pairs as f64 / (phi * (1.0 - phi))
}

/// Interface faces per voxel from an all-pairs adjacency scan.
fn brute_surface(points: &[([usize; 3], f64)]) -> f64 {
    let mut faces = 0usize;
    for (i, (p, fp)) in points.iter().enumerate() {
        for (q, fq) in &points[i + 1..] {
            let dist: usize = (0..3).map(|d| p[d].abs_diff(q[d])).sum();
            if dist == 1 && fp != fq {
                faces += 1;
            }
        }
    }
    faces as f64 / points.len() as f64
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let v = random_volume(&mut rng, 12);
        let points = coords(&v);
        let phi = points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;
        let min_extent = v.dims().into_iter().min().unwrap();
        for (a, axis) in [CurveAxis::X, CurveAxis::Y, CurveAxis::Z].into_iter().enumerate() {
            let r_max = v.dims()[a] - 1;
            let curve = two_point_correlation(&v, r_max, axis).map_err(|e| e.to_string())?;
            for r in 0..=r_max {
                worst = worst.max((curve.values[r] - brute_correlation(&points, phi, a, r)).abs());
            }
        }
        let iso = two_point_correlation(&v, min_extent - 1, CurveAxis::Isotropic).map_err(|e| e.to_string())?;
        for r in 0..min_extent {
            let expected = (0..3).map(|a| brute_correlation(&points, phi, a, r)).sum::<f64>() / 3.0;
            worst = worst.max((iso.values[r] - expected).abs());
        }
        let sa = specific_surface_area(&v).map_err(|e| e.to_string())?;
        worst = worst.max((sa - brute_surface(&points)).abs());
    }
    let (fast, time) = within(start.elapsed(), 60);
    check(worst <= 1e-10 && fast, format!("max deviation {worst:.2e}, {time}"))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for lambda in [1.0, 3.0, 7.0, 15.0] {
        let values = (0..=60).map(|r| (-(r as f64) / lambda).exp()).collect();
        let curve = CorrelationCurve { axis: CurveAxis::Isotropic, values, phi: 0.5 };
        let fit = fit_correlation_length(&curve, FitWindow::full(&curve)).map_err(|e| e.to_string())?;
        worst = worst.max((fit.lambda - lambda).abs() / lambda);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut built, mut fitted) = (Vec::new(), Vec::new());
    for lambda in [2.0, 3.0, 4.0, 5.0, 6.0] {
        let gen = TruncatedGaussian::isotropic(64, lambda, 0.3);
        let spectrum = rockgan::data::GaussianFieldSpec { dims: gen.dims, correlation_length: gen.correlation_length }
            .spectrum()
            .map_err(|e| e.to_string())?;
        for _ in 0..20 {
            let v = gen.sample_with(&spectrum, &mut rng).map_err(|e| e.to_string())?;
            built.push(lambda);
            fitted.push(correlation_length(&v, CurveAxis::Isotropic).map_err(|e| e.to_string())?);
        }
    }
    let rho = spearman(&built, &fitted);
    let (fast, time) = within(start.elapsed(), 300);
    check(
        worst <= 1e-6 && rho >= 0.95 && fast,
        format!("exact-curve rel. error {worst:.1e}, field rank correlation {rho:.3}, {time}"),
    )
}

fn criterion_3() -> Outcome {
    let source = VoxelVolume::from_pore_fn([250; 3], 1.0, |x, y, z| (x + y + z) % 3 == 0).map_err(|e| e.to_string())?;
    let ds = extract_subvolumes(Arc::new(source), "lattice", 64, 12, None).map_err(|e| e.to_string())?;
    let rotated = augment_rotations(&ds);
    check(
        ds.len() == 4096 && rotated.len() == 12288,
        format!("{} crops, {} after rotation", ds.len(), rotated.len()),
    )
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    (a - b).abs().max().double_value(&[])
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut shapes = Vec::new();
    let shape_ok = tch::no_grad(|| -> Result<bool, String> {
        let g = Generator::new(GeneratorSpec::new(GeneratorSpec::default_widths(), 0), 5, Kind::Float, &mut rng)
            .map_err(|e| e.to_string())?;
        let mut ok = true;
        for (noise, out) in [(4i64, 64i64), (6, 96), (8, 128), (10, 160)] {
            let z = standard_normal(&[1, 1, noise, noise, noise], Kind::Float, &mut rng);
            let y = g.forward(&z, 1.0).map_err(|e| e.to_string())?.size();
            ok &= y == vec![1, 1, out, out, out];
            shapes.push(y[2]);
        }
        Ok(ok)
    })?;

    let mut worst: f64 = 0.0;
    tch::no_grad(|| -> Result<(), String> {
        let spec = GeneratorSpec::new(vec![8, 8, 4], 2);
        let mut g = Generator::new(spec.clone(), 2, Kind::Double, &mut rng).map_err(|e| e.to_string())?;
        let mut d = Discriminator::new(DiscriminatorSpec::mirror(&spec), 2, Kind::Double, &mut rng).map_err(|e| e.to_string())?;
        let z = standard_normal(&[3, 3, 4, 4, 4], Kind::Double, &mut rng);
        let x = standard_normal(&[3, 3, 16, 16, 16], Kind::Double, &mut rng);
        let before_g = g.forward(&z, 1.0).map_err(|e| e.to_string())?;
        let pooled = x.avg_pool3d([2; 3], [2; 3], [0; 3], false, true, None::<i64>);
        let before_d = d.forward(&pooled, 1.0).map_err(|e| e.to_string())?;
        g.grow(&mut rng).map_err(|e| e.to_string())?;
        d.grow(&mut rng).map_err(|e| e.to_string())?;
        let s = before_g.size();
        let upsampled = before_g.upsample_nearest3d([s[2] * 2, s[3] * 2, s[4] * 2], None, None, None);
        let g0 = g.forward(&z, 0.0).map_err(|e| e.to_string())?;
        let g1 = g.forward(&z, 1.0).map_err(|e| e.to_string())?;
        worst = worst.max(max_abs_diff(&g0, &upsampled));
        worst = worst.max(max_abs_diff(&d.forward(&x, 0.0).map_err(|e| e.to_string())?, &before_d));
        for alpha in [0.25, 0.7] {
            let mixed = g.forward(&z, alpha).map_err(|e| e.to_string())?;
            worst = worst.max(max_abs_diff(&mixed, &(&g1 * alpha + &g0 * (1.0 - alpha))));
        }
        Ok(())
    })?;
    check(shape_ok && worst <= 1e-6, format!("output edges {shapes:?}, fade endpoint deviation {worst:.1e}"))
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let opts = (Kind::Double, tch::Device::Cpu);
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let real = standard_normal(&[4, 1, 4, 4, 4], Kind::Double, &mut rng);
    let fake = standard_normal(&[4, 1, 4, 4, 4], Kind::Double, &mut rng);
    let labels = Tensor::zeros([4, 0], opts);
    let t = Tensor::from_slice(&[0.1, 0.4, 0.6, 0.95]);
    let gp_weight = 10.0;
    let mut closed: f64 = 0.0;
    for norm in [0.2, 1.0, 2.5] {
        let a = standard_normal(&[64], Kind::Double, &mut rng);
        let a = &a / a.norm() * norm;
        let gp = gradient_penalty(&LinearCritic { a, b: None }, &real, &fake, &labels, &t).map_err(|e| e.to_string())?;
        closed = closed.max((gp_weight * gp.double_value(&[]) - gp_weight * (norm - 1.0) * (norm - 1.0)).abs());
    }

    let spec = GeneratorSpec::new(vec![4], 1);
    let d = Discriminator::new(DiscriminatorSpec::mirror(&spec), 1, Kind::Double, &mut rng).map_err(|e| e.to_string())?;
    let cond = Tensor::from_slice(&[0.3, -0.5, 0.9, 0.0]).view([4, 1]);
    let loss = || -> Result<Tensor, String> {
        let critic = PhasedCritic { discriminator: &d, alpha: 1.0 };
        Ok(discriminator_loss(&critic, &real, &fake, &cond, &t, gp_weight).map_err(|e| e.to_string())?.total)
    };
    let params = d.named_parameters();
    let tensors: Vec<&Tensor> = params.iter().map(|(_, p)| *p).collect();
    let grads = Tensor::f_run_backward(&[loss()?], &tensors, false, false).map_err(|e| e.to_string())?;
    let (mut diff, mut scale) = (0.0f64, 0.0f64);
    let eps = 1e-6;
    for ((_, p), g) in params.iter().zip(&grads) {
        let flat = g.contiguous().view([-1]);
        for i in 0..p.numel() as i64 {
            let nudge = |delta: f64| tch::no_grad(|| {
                let _ = p.view([-1]).narrow(0, i, 1).f_add_scalar_(delta).expect("in-place add");
            });
            nudge(eps);
            let up = tch::no_grad(loss)?.double_value(&[]);
            nudge(-2.0 * eps);
            let down = tch::no_grad(loss)?.double_value(&[]);
            nudge(eps);
            let fd = (up - down) / (2.0 * eps);
            diff += (flat.double_value(&[i]) - fd).powi(2);
            scale += fd * fd;
        }
    }
    let rel = (diff / scale).sqrt();
    let (fast, time) = within(start.elapsed(), 120);
    check(
        closed <= 1e-6 && rel <= 1e-3 && fast,
        format!("closed-form deviation {closed:.1e}, gradient rel. error {rel:.1e} over {} parameters, {time}", d.parameter_count()),
    )
}

fn acceptance_dir(name: &str) -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name)
}

/// Trains a template from scratch and returns its report and history.
fn fresh_run(config: &ExperimentConfig) -> Result<(ExperimentReport, TrainHistory), String> {
    let dir = acceptance_dir(&config.name);
    let _ = std::fs::remove_dir_all(&dir);
    let art = run_experiment(config, None, &dir).map_err(|e| e.to_string())?;
    let text = std::fs::read_to_string(&art.report).map_err(|e| e.to_string())?;
    let report: ExperimentReport = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let history = load_history(&art.model).map_err(|e| e.to_string())?;
    Ok((report, history))
}

fn desk_porosity_run() -> &'static Result<(ExperimentReport, TrainHistory), String> {
    static RUN: OnceLock<Result<(ExperimentReport, TrainHistory), String>> = OnceLock::new();
    RUN.get_or_init(|| fresh_run(&template("desk-porosity").expect("template")))
}

/// Median of `metric` in the generated cohort of every target.
fn target_medians(config: &ExperimentConfig, report: &ExperimentReport, metric: &str) -> Result<Vec<(f64, f64)>, String> {
    let mut out = Vec::new();
    for t in &config.generate.targets {
        let target = match (t.label.porosity, &t.label.lambda) {
            (Some(phi), _) => phi,
            (None, Some(rockgan::LambdaLabel::Isotropic(l))) => *l,
            _ => return Err(format!("target {} has no scalar label", t.name)),
        };
        let tr = report.target(&t.name).ok_or(format!("no report for {}", t.name))?;
        let cohort = tr.report.cohorts.iter().find(|c| c.name.starts_with("generated")).ok_or("no generated cohort")?;
        let values = cohort.metric(metric).ok_or(format!("no {metric} column"))?.present();
        if values.is_empty() {
            return Err(format!("no {metric} values for {}", t.name));
        }
        out.push((target, median(&values)));
    }
    Ok(out)
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let config = template("desk-porosity").expect("template");
    let (report, _) = desk_porosity_run().as_ref().map_err(Clone::clone)?;
    let pairs = target_medians(&config, report, "porosity")?;
    let (targets, medians): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    let rho = spearman(&targets, &medians);
    let worst = pairs.iter().map(|(t, m)| (t - m).abs()).fold(0.0, f64::max);
    let listing: Vec<String> = pairs.iter().map(|(t, m)| format!("{t:.2}->{m:.3}")).collect();
    check(
        rho >= 0.9 && worst <= 0.05,
        format!("medians [{}], rank correlation {rho:.2}, max offset {worst:.3}, {:.0}s", listing.join(" "), start.elapsed().as_secs_f64()),
    )
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let config = template("desk-correlation-length").expect("template");
    let (report, _) = fresh_run(&config)?;
    let pairs = target_medians(&config, &report, "lambda_iso")?;
    let (targets, medians): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    let rho = spearman(&targets, &medians);
    let listing: Vec<String> = pairs.iter().map(|(t, m)| format!("{t:.1}->{m:.2}")).collect();
    check(
        rho >= 0.9,
        format!("fitted medians [{}], rank correlation {rho:.2}, {:.0}s", listing.join(" "), start.elapsed().as_secs_f64()),
    )
}

/// Minimum mean absolute difference over every pairing of `a` with `b`.
fn brute_transport(a: &[f64], b: &[f64]) -> f64 {
    fn search(a: &[f64], b: &[f64], used: &mut Vec<bool>, i: usize, acc: f64, best: &mut f64) {
        if acc >= *best {
            return;
        }
        if i == a.len() {
            *best = acc;
            return;
        }
        for j in 0..b.len() {
            if !used[j] {
                used[j] = true;
                search(a, b, used, i + 1, acc + (a[i] - b[j]).abs(), best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    search(a, b, &mut vec![false; b.len()], 0, 0.0, &mut best);
    best / a.len() as f64
}

fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    xs.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let cohort = |n: usize, rng: &mut ChaCha8Rng| -> Result<Vec<VoxelVolume>, String> {
        let gen = TruncatedGaussian::isotropic(16, 2.5, 0.3);
        (0..n).map(|_| gen.sample(rng).map_err(|e| e.to_string())).collect()
    };
    let real = cohort(256, &mut rng)?;
    let held_out = cohort(256, &mut rng)?;
    let noise: Vec<VoxelVolume> = (0..256)
        .map(|_| VoxelVolume::from_pore_fn([16; 3], 1.0, |_, _, _| rng.random_bool(0.3)).unwrap())
        .collect();

    let patches = extract_slice_patches(&real, 32, &mut rng).map_err(|e| e.to_string())?;
    let self_distance = sliced_wasserstein(&patches, &patches, 512, 4, &mut rng).map_err(|e| e.to_string())?;

    let cfg = SwdConfig::default();
    let to_noise = multiscale_swd(&real, &noise, &cfg, 7).map_err(|e| e.to_string())?.average;
    let to_real = multiscale_swd(&real, &held_out, &cfg, 7).map_err(|e| e.to_string())?.average;

    let mut transport_ok = true;
    for n in 1..=10 {
        for _ in 0..10 {
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(-50..50) as f64).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-50..50) as f64).collect();
            let fast = projected_distance(&mut a.clone(), &mut b.clone()).map_err(|e| e.to_string())?;
            transport_ok &= fast == brute_transport(&a, &b);
        }
    }

    let (_, history) = desk_porosity_run().as_ref().map_err(Clone::clone)?;
    let last = history.swd.iter().map(|p| p.stage).max().ok_or("no SWD history")?;
    let points: Vec<_> = history.swd.iter().filter(|p| p.stage == last).collect();
    if points.len() < 10 {
        return Err(format!("only {} SWD points in the final stage", points.len()));
    }
    let window = 5;
    let smooth = moving_average(&points.iter().map(|p| p.swd).collect::<Vec<_>>(), window);
    let xs: Vec<f64> = points[window / 2..].iter().take(smooth.len()).map(|p| p.global_iteration as f64).collect();
    let trend = linear_trend(&xs, &smooth);
    let trend_ok = trend.slope <= 3.0 * trend.slope_se;

    check(
        self_distance == 0.0 && to_noise >= 2.0 * to_real && transport_ok && trend_ok,
        format!(
            "self {self_distance}, noise {to_noise:.1} vs held-out {to_real:.1}, transport oracle {}, final-stage slope {:.2e} (se {:.1e})",
            if transport_ok { "exact" } else { "mismatch" },
            trend.slope,
            trend.slope_se
        ),
    )
}

fn criterion_9() -> Outcome {
    let start = Instant::now();
    let base = FlowConfig { mirror: false, ..Default::default() };
    let mut worst: f64 = 0.0;
    for h in [8, 16, 32] {
        let r = lbm_permeability(&plate_channel(h, 2), Axis::X, &base).map_err(|e| e.to_string())?;
        let exact = (h * h) as f64 / 12.0;
        worst = worst.max((r.permeability_lattice - exact).abs() / exact);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let medium = TruncatedGaussian::isotropic(16, 3.0, 0.4).sample(&mut rng).map_err(|e| e.to_string())?;
    let mut solver = LbmSolver::new(&medium, Axis::X, &FlowConfig { force: 1e-4, ..base }).map_err(|e| e.to_string())?;
    let mut drift: f64 = 0.0;
    let mut mass = solver.total_mass();
    for _ in 0..500 {
        solver.step();
        let m = solver.total_mass();
        drift = drift.max((m - mass).abs() / mass);
        mass = m;
    }

    let mut spreads = Vec::new();
    for h in [8, 16, 32] {
        let ks: Vec<f64> = [0.8, 1.0, 1.2]
            .into_iter()
            .map(|tau| lbm_permeability(&plate_channel(h, 2), Axis::X, &FlowConfig { tau, ..base }).map(|r| r.permeability_lattice))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        let lo = ks.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ks.iter().copied().fold(0.0, f64::max);
        spreads.push((h, (hi - lo) / lo));
    }
    let spread = spreads.last().expect("three widths").1;
    let listing: Vec<String> = spreads.iter().map(|(h, s)| format!("h={h}: {:.2}%", s * 100.0)).collect();

    let (fast, time) = within(start.elapsed(), 600);
    check(
        worst <= 0.05 && drift <= 1e-10 && spread <= 0.01 && fast,
        format!(
            "Poiseuille error {:.2}%, relative mass drift {drift:.1e}/step, relaxation spread {}, {time}",
            worst * 100.0,
            listing.join(", ")
        ),
    )
}

fn criterion_10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let medium = TruncatedGaussian::isotropic(128, 4.0, 0.25).sample(&mut rng).map_err(|e| e.to_string())?;
    let rows = rev_curve(&medium, &[16, 32, 64], 50, 11).map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut listing = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let cv = row.cv();
        listing.push(format!("{}:{cv:.4}", row.edge));
        if let Some(next) = rows.get(i + 1) {
            let se = |r: &rockgan::data::RevRow| r.cv() / (2.0 * (r.porosities.len() as f64 - 1.0)).sqrt();
            let gap = cv - next.cv();
            ok &= gap > 3.0 * (se(row).powi(2) + se(next).powi(2)).sqrt();
        }
    }
    check(ok, format!("crop porosity CV by edge [{}]", listing.join(" ")))
}

fn tiny_config(name: &str) -> ExperimentConfig {
    let mut cfg = template("desk-porosity").expect("template");
    cfg.name = name.into();
    cfg.seed = 11;
    let synth = cfg.data.synthetic.as_mut().expect("synthetic data");
    synth.count = 24;
    synth.edge = 16;
    cfg.train.widths = Some(vec![4, 4, 4]);
    cfg.train.batch_size = Some(4);
    cfg.train.iterations = Some(vec![20, 20, 20]);
    cfg.train.checkpoint_every = Some(25);
    cfg.train.swd_every = Some(20);
    cfg.generate.targets.truncate(2);
    cfg.generate.count = 6;
    cfg.generate.save_volumes = true;
    cfg
}

fn artifact_bytes(root: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else if matches!(path.extension().and_then(|e| e.to_str()), Some("raw" | "json")) {
                let rel = path.strip_prefix(root).expect("inside root").to_path_buf();
                out.insert(rel, std::fs::read(&path).map_err(|e| e.to_string())?);
            }
        }
    }
    Ok(out)
}

fn criterion_11() -> Outcome {
    let mut runs = Vec::new();
    for attempt in ["first", "second"] {
        let cfg = tiny_config("determinism");
        let dir = acceptance_dir(&format!("determinism-{attempt}"));
        let _ = std::fs::remove_dir_all(&dir);
        let art: ExperimentArtifacts = run_experiment(&cfg, None, &dir).map_err(|e| e.to_string())?;
        runs.push(artifact_bytes(&art.root)?);
    }
    let volumes = runs[0].keys().filter(|p| p.extension().is_some_and(|e| e == "raw")).count();
    let differing: Vec<String> = runs[0]
        .iter()
        .filter(|(k, v)| runs[1].get(*k) != Some(v))
        .map(|(k, _)| k.display().to_string())
        .collect();
    let porosities: Vec<f64> = runs[0]
        .iter()
        .filter(|(k, _)| k.extension().is_some_and(|e| e == "raw"))
        .filter_map(|(k, _)| VoxelVolume::read_raw(&acceptance_dir("determinism-first").join(k)).ok())
        .filter_map(|v| porosity(&v).ok())
        .collect();
    check(
        differing.is_empty() && runs[0].len() == runs[1].len() && volumes > 0 && porosities.len() == volumes,
        format!("{} artifacts ({volumes} volumes) compared, {} differ {:?}", runs[0].len(), differing.len(), differing),
    )
}

fn main() {
    let criteria: [(usize, &str, fn() -> Outcome); 11] = [
        (1, "metric oracle equivalence", criterion_1),
        (2, "correlation-fit recovery", criterion_2),
        (3, "subvolume accounting", criterion_3),
        (4, "generator shape law and fade-in", criterion_4),
        (5, "gradient penalty and gradients", criterion_5),
        (6, "desk porosity conditioning", criterion_6),
        (7, "desk correlation-length conditioning", criterion_7),
        (8, "sliced Wasserstein sanity", criterion_8),
        (9, "lbm validation", criterion_9),
        (10, "rev behavior", criterion_10),
        (11, "determinism", criterion_11),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected = |n: usize, name: &str| {
        filters.is_empty() || filters.iter().any(|f| f.parse::<usize>().ok() == Some(n) || name.contains(f.as_str()))
    };
    tch::set_num_threads(1);
    let mut failed = Vec::new();
    for (n, name, run) in criteria {
        if !selected(n, name) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n:>2} {name}: PASS ({detail}) [{secs:.1}s]"),
            Err(detail) => {
                println!("criterion {n:>2} {name}: FAIL ({detail}) [{secs:.1}s]");
                failed.push(n);
            }
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
