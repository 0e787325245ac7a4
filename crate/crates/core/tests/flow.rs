//! Lattice Boltzmann invariants on small media.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rockgan::data::TruncatedGaussian;
use rockgan::flow::{lbm_permeability, permeability_all_axes, FlowConfig, FlowError, LbmSolver};
use rockgan::{Axis, VoxelVolume};

fn medium(seed: u64) -> VoxelVolume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TruncatedGaussian::isotropic(12, 2.5, 0.45).sample(&mut rng).unwrap()
}

fn config() -> FlowConfig {
    FlowConfig { mirror: false, tol: 1e-8, ..Default::default() }
}

#[test]
fn mass_is_conserved_with_forcing() {
    let v = medium(1);
    let mut s = LbmSolver::new(&v, Axis::Y, &FlowConfig { force: 1e-3, ..config() }).unwrap();
    let m0 = s.total_mass();
    assert!((m0 - s.fluid_nodes() as f64).abs() < 1e-9);
    for _ in 0..200 {
        s.step();
    }
    assert!((s.total_mass() - m0).abs() / m0 < 1e-12);
    assert!(s.mean_velocity(Axis::Y) > 0.0);
}

#[test]
fn permeability_does_not_depend_on_the_force() {
    let v = medium(2);
    let k = |force| lbm_permeability(&v, Axis::X, &FlowConfig { force, ..config() }).unwrap().permeability_lattice;
    let (a, b) = (k(1e-5), k(5e-6));
    assert!((a - b).abs() / a < 1e-3, "{a} vs {b}");
}

#[test]
fn rotation_permutes_axis_permeabilities() {
    let v = medium(3);
    let r = v.rotate_quarter(Axis::Z, 1);
    let kx = lbm_permeability(&v, Axis::X, &config()).unwrap().permeability_lattice;
    let ky_rot = lbm_permeability(&r, Axis::Y, &config()).unwrap().permeability_lattice;
    assert!((kx - ky_rot).abs() / kx < 1e-6, "{kx} vs {ky_rot}");
    let kz = lbm_permeability(&v, Axis::Z, &config()).unwrap().permeability_lattice;
    let kz_rot = lbm_permeability(&r, Axis::Z, &config()).unwrap().permeability_lattice;
    assert!((kz - kz_rot).abs() / kz < 1e-6);
}

#[test]
fn mirrored_domain_reports_darcy_units() {
    let v = medium(4).with_voxel_size(2.0).unwrap();
    let (rows, mean) = permeability_all_axes(&v, &FlowConfig::default()).unwrap();
    assert_eq!(rows.len(), 3);
    for r in &rows {
        assert!(r.converged);
        assert!(r.permeability_darcy > 0.0);
        assert!((r.superficial_permeability_darcy - r.permeability_darcy * r.porosity).abs() <= 1e-12 * r.permeability_darcy);
    }
    assert!((mean - rows.iter().map(|r| r.permeability_darcy).sum::<f64>() / 3.0).abs() < 1e-15);
}

#[test]
fn sealed_medium_is_rejected() {
    let v = VoxelVolume::from_pore_fn([8; 3], 1.0, |x, _, _| x % 4 != 0).unwrap();
    assert!(matches!(lbm_permeability(&v, Axis::X, &config()), Err(FlowError::NonPercolating(Axis::X))));
    assert!(lbm_permeability(&v, Axis::Y, &config()).is_ok());
}
