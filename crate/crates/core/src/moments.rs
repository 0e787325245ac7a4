//! First and second moments of the indicator field, plus specific surface area.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::{Axis, VolumeError, VoxelVolume};

#[derive(Debug, Error)]
pub enum MomentError {
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error("porosity {0} makes the correlation normalization phi - phi^2 vanish")]
    DegeneratePorosity(f64),
    #[error("r_max {r_max} must be smaller than the extent {extent} along the correlation axis")]
    LagOutOfRange { r_max: usize, extent: usize },
}

/// Direction of a correlation curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveAxis {
    X,
    Y,
    Z,
    /// Mean of the three axial curves.
    Isotropic,
}

impl From<Axis> for CurveAxis {
    fn from(a: Axis) -> Self {
        match a {
            Axis::X => CurveAxis::X,
            Axis::Y => CurveAxis::Y,
            Axis::Z => CurveAxis::Z,
        }
    }
}

/// Normalized two-point correlation sampled at integer lags `0..=r_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCurve {
    pub axis: CurveAxis,
    /// `values[r]` is the correlation at lag `r` voxels.
    pub values: Vec<f64>,
    /// Porosity used for the normalization.
    pub phi: f64,
}

impl CorrelationCurve {
    pub fn r_max(&self) -> usize {
        self.values.len().saturating_sub(1)
    }

    pub fn lags(&self) -> impl Iterator<Item = usize> + '_ {
        0..self.values.len()
    }
}

/// Porosity, correlation lengths and specific surface area of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub phi: f64,
    /// Correlation length along x, y, z in voxels.
    pub lambda: [f64; 3],
    /// Correlation length fitted to the axis-averaged curve.
    pub lambda_iso: f64,
    /// Interface area per bulk volume, in inverse voxel lengths.
    pub sa: f64,
}

impl MomentSummary {
    /// Specific surface area in inverse micrometres.
    pub fn sa_per_um(&self, voxel_size_um: f64) -> f64 {
        self.sa / voxel_size_um
    }
}

/// Pore fraction of a binary volume.
pub fn porosity(v: &VoxelVolume) -> Result<f64, MomentError> {
    v.require_binary()?;
    Ok(v.pore_count() as f64 / v.len() as f64)
}

/// Normalized two-point correlation along one axis or averaged over all three.
///
/// Every lag averages over all non-periodic pairs that fit inside the volume.
pub fn two_point_correlation(
    v: &VoxelVolume,
    r_max: usize,
    axis: CurveAxis,
) -> Result<CorrelationCurve, MomentError> {
    let phi = porosity(v)?;
    let norm = phi - phi * phi;
    if norm <= 0.0 {
        return Err(MomentError::DegeneratePorosity(phi));
    }
    let deviations: Vec<f64> = v.data().iter().map(|&f| phi - f as f64).collect();
    let values = match axis {
        CurveAxis::X => axial_curve(v, &deviations, r_max, Axis::X, norm)?,
        CurveAxis::Y => axial_curve(v, &deviations, r_max, Axis::Y, norm)?,
        CurveAxis::Z => axial_curve(v, &deviations, r_max, Axis::Z, norm)?,
        CurveAxis::Isotropic => {
            let mut sum = vec![0.0; r_max + 1];
            for a in Axis::ALL {
                let c = axial_curve(v, &deviations, r_max, a, norm)?;
                sum.iter_mut().zip(c).for_each(|(s, x)| *s += x);
            }
            sum.into_iter().map(|s| s / 3.0).collect()
        }
    };
    Ok(CorrelationCurve { axis, values, phi })
}

fn axial_curve(
    v: &VoxelVolume,
    d: &[f64],
    r_max: usize,
    axis: Axis,
    norm: f64,
) -> Result<Vec<f64>, MomentError> {
    let extent = v.extent(axis);
    if r_max >= extent {
        return Err(MomentError::LagOutOfRange { r_max, extent });
    }
    let [nx, ny, nz] = v.dims();
    let stride = v.stride(axis);
    let mut out = Vec::with_capacity(r_max + 1);
    for r in 0..=r_max {
        // Pairs (p, p + r * stride) with the first point's axial coordinate < extent - r.
        let mut lim = [nx, ny, nz];
        lim[axis.index()] = extent - r;
        let shift = r * stride;
        let mut sum = 0.0;
        for z in 0..lim[2] {
            for y in 0..lim[1] {
                let row = v.index(0, y, z);
                let a = &d[row..row + lim[0]];
                let b = &d[row + shift..row + shift + lim[0]];
                sum += a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
            }
        }
        let pairs = (lim[0] * lim[1] * lim[2]) as f64;
        out.push(sum / pairs / norm);
    }
    Ok(out)
}

/// Pore-solid interface faces per voxel of bulk volume.
///
/// Faces on the domain boundary are not interface.
pub fn specific_surface_area(v: &VoxelVolume) -> Result<f64, MomentError> {
    v.require_binary()?;
    let data = v.data();
    let [nx, ny, nz] = v.dims();
    let mut faces = 0usize;
    for axis in Axis::ALL {
        let stride = v.stride(axis);
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let c = [x, y, z][axis.index()];
                    if c + 1 < v.extent(axis) {
                        let i = v.index(x, y, z);
                        if data[i] != data[i + stride] {
                            faces += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(faces as f64 / v.len() as f64)
}

/// Conventional threshold for `[0, 1]`-range data.
pub const UNIT_RANGE_THRESHOLD: f32 = 0.5;
/// Conventional threshold for `[-1, 1]` generator output.
pub const SIGNED_RANGE_THRESHOLD: f32 = 0.0;

/// Maps `value >= threshold` to pore (1) and everything else to solid (0).
pub fn binarize(v: &VoxelVolume, threshold: f32) -> VoxelVolume {
    let data = v
        .data()
        .iter()
        .map(|&x| if x >= threshold { 1.0 } else { 0.0 })
        .collect();
    VoxelVolume::binary(v.dims(), data, v.voxel_size()).expect("shape is unchanged")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bernoulli(dims: [usize; 3], p: f64, seed: u64) -> VoxelVolume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        VoxelVolume::from_pore_fn(dims, 1.0, |_, _, _| rng.random_bool(p)).unwrap()
    }

    fn checkerboard(n: usize) -> VoxelVolume {
        VoxelVolume::from_pore_fn([n; 3], 1.0, |x, y, z| (x + y + z) % 2 == 0).unwrap()
    }

    #[test]
    fn porosity_identity_and_symmetry_cases() {
        let all_pore = VoxelVolume::filled([8; 3], 1.0, 1.0).unwrap();
        assert_eq!(porosity(&all_pore).unwrap(), 1.0);
        assert_eq!(porosity(&checkerboard(8)).unwrap(), 0.5);
    }

    #[test]
    fn porosity_matches_explicit_count() {
        let v = bernoulli([16; 3], 0.3, 11);
        let mut count = 0;
        for z in 0..16 {
            for y in 0..16 {
                for x in 0..16 {
                    if v.get(x, y, z) == 1.0 {
                        count += 1;
                    }
                }
            }
        }
        assert_eq!(porosity(&v).unwrap(), count as f64 / 4096.0);
    }

    #[test]
    fn porosity_rejects_continuous_input() {
        let v = VoxelVolume::continuous([2; 3], vec![0.3; 8], 1.0).unwrap();
        assert!(porosity(&v).is_err());
    }

    #[test]
    fn correlation_is_one_at_zero_lag() {
        for seed in 0..5 {
            let v = bernoulli([9, 10, 11], 0.4, seed);
            for axis in [CurveAxis::X, CurveAxis::Y, CurveAxis::Z, CurveAxis::Isotropic] {
                let c = two_point_correlation(&v, 4, axis).unwrap();
                assert!((c.values[0] - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn correlation_rejects_degenerate_porosity() {
        let v = VoxelVolume::filled([6; 3], 0.0, 1.0).unwrap();
        assert!(matches!(
            two_point_correlation(&v, 2, CurveAxis::X),
            Err(MomentError::DegeneratePorosity(_))
        ));
    }

    #[test]
    fn correlation_rejects_lags_beyond_extent() {
        let v = checkerboard(6);
        assert!(matches!(
            two_point_correlation(&v, 6, CurveAxis::Z),
            Err(MomentError::LagOutOfRange { r_max: 6, extent: 6 })
        ));
    }

    #[test]
    fn checkerboard_alternates_sign() {
        let c = two_point_correlation(&checkerboard(8), 3, CurveAxis::Y).unwrap();
        assert_eq!(c.values, vec![1.0, -1.0, 1.0, -1.0]);
    }

    #[test]
    fn independent_voxels_decorrelate() {
        // Each lag-1 estimate averages ~60^3 products with variance 1 under
        // independence, so its standard error is about 1/sqrt(N).
        let v = bernoulli([60; 3], 0.5, 3);
        let c = two_point_correlation(&v, 5, CurveAxis::Isotropic).unwrap();
        let se = 1.0 / ((59.0 * 60.0 * 60.0) as f64).sqrt();
        for r in 1..=5 {
            assert!(c.values[r].abs() < 4.0 * se, "lag {r}: {}", c.values[r]);
        }
    }

    #[test]
    fn surface_area_simple_cases() {
        let single = VoxelVolume::from_pore_fn([3; 3], 1.0, |x, y, z| (x, y, z) == (1, 1, 1)).unwrap();
        assert!((specific_surface_area(&single).unwrap() - 6.0 / 27.0).abs() < 1e-15);
        let all_pore = VoxelVolume::filled([5; 3], 1.0, 1.0).unwrap();
        assert_eq!(specific_surface_area(&all_pore).unwrap(), 0.0);
    }

    #[test]
    fn relabeling_symmetries() {
        let v = bernoulli([10; 3], 0.35, 8);
        let c = v.complement().unwrap();
        assert!((porosity(&c).unwrap() - (1.0 - porosity(&v).unwrap())).abs() < 1e-15);
        assert_eq!(specific_surface_area(&c).unwrap(), specific_surface_area(&v).unwrap());
    }

    #[test]
    fn binarize_threshold_rules() {
        let v = VoxelVolume::continuous([2; 3], vec![0.9; 8], 2.0).unwrap();
        assert_eq!(porosity(&binarize(&v, 0.5)).unwrap(), 1.0);
        let tie = VoxelVolume::continuous([2; 3], vec![0.5; 8], 2.0).unwrap();
        assert_eq!(porosity(&binarize(&tie, 0.5)).unwrap(), 1.0);
        let signed = VoxelVolume::continuous([2, 2, 1], vec![-1.0, -0.2, 0.0, 0.7], 2.0).unwrap();
        let b = binarize(&signed, SIGNED_RANGE_THRESHOLD);
        assert_eq!(b.data(), &[0.0, 0.0, 1.0, 1.0]);
        assert_eq!(b.voxel_size(), 2.0);
        assert!(b.is_binary());
    }
}
