//! Multi-scale sliced Wasserstein distance between volume cohorts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::volume::VoxelVolume;

/// Edge of the coarsest pyramid level.
pub const COARSEST_LEVEL_EDGE: usize = 16;
/// Side of the square slice patches.
pub const PATCH_SIDE: usize = 7;
pub const PATCHES_PER_VOLUME: usize = 32;
pub const DEFAULT_PROJECTIONS: usize = 512;
pub const DEFAULT_REPEATS: usize = 4;
/// Reporting scale applied to raw distances.
pub const SWD_SCALE: f64 = 1e3;
const STD_FLOOR: f64 = 1e-8;

/// Band-pass decomposition of a cubic volume, coarsest (16³ low-pass) first.
pub fn laplacian_levels(v: &VoxelVolume) -> Result<Vec<VoxelVolume>, EvalError> {
    let edge = v.cubic_edge().ok_or(EvalError::LevelEdge(v.dims()[0]))?;
    if edge < COARSEST_LEVEL_EDGE || edge % COARSEST_LEVEL_EDGE != 0 || !(edge / COARSEST_LEVEL_EDGE).is_power_of_two() {
        return Err(EvalError::LevelEdge(edge));
    }
    let mut lowpass = vec![v.data().to_vec()];
    let mut e = edge;
    while e > COARSEST_LEVEL_EDGE {
        lowpass.push(mean_halve(lowpass.last().expect("non-empty"), e));
        e /= 2;
    }
    lowpass.reverse();
    let vs = v.voxel_size();
    let mut out = Vec::with_capacity(lowpass.len());
    out.push(VoxelVolume::continuous([COARSEST_LEVEL_EDGE; 3], lowpass[0].clone(), vs * (edge / COARSEST_LEVEL_EDGE) as f64)?);
    let mut e = COARSEST_LEVEL_EDGE;
    for k in 1..lowpass.len() {
        let up = nearest_double(&lowpass[k - 1], e);
        e *= 2;
        let band: Vec<f32> = lowpass[k].iter().zip(&up).map(|(a, b)| a - b).collect();
        out.push(VoxelVolume::continuous([e; 3], band, vs * (edge / e) as f64)?);
    }
    Ok(out)
}

/// Inverse of [`laplacian_levels`].
pub fn reconstruct_from_levels(levels: &[VoxelVolume]) -> Result<VoxelVolume, EvalError> {
    let first = levels.first().ok_or(EvalError::Empty("pyramid"))?;
    let mut cur = first.data().to_vec();
    let mut e = first.dims()[0];
    for band in &levels[1..] {
        let up = nearest_double(&cur, e);
        e *= 2;
        cur = up.iter().zip(band.data()).map(|(a, b)| a + b).collect();
    }
    Ok(VoxelVolume::continuous([e; 3], cur, levels.last().expect("non-empty").voxel_size())?)
}

fn mean_halve(src: &[f32], edge: usize) -> Vec<f32> {
    let h = edge / 2;
    let mut out = vec![0f32; h * h * h];
    for z in 0..h {
        for y in 0..h {
            for x in 0..h {
                let mut s = 0f32;
                for dz in 0..2 {
                    for dy in 0..2 {
                        let row = (2 * y + dy + edge * (2 * z + dz)) * edge + 2 * x;
                        s += src[row] + src[row + 1];
                    }
                }
                out[x + h * (y + h * z)] = s / 8.0;
            }
        }
    }
    out
}

fn nearest_double(src: &[f32], edge: usize) -> Vec<f32> {
    let d = edge * 2;
    let mut out = vec![0f32; d * d * d];
    for z in 0..d {
        for y in 0..d {
            let srow = (y / 2 + edge * (z / 2)) * edge;
            let drow = (y + d * z) * d;
            for x in 0..d {
                out[drow + x] = src[srow + x / 2];
            }
        }
    }
    out
}

/// Standardized descriptors of equal dimension, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    pub dim: usize,
    /// Edge of the level the patches came from (0 for hand-built sets).
    pub level_edge: usize,
    pub values: Vec<f64>,
    /// Volumes the descriptors were drawn from.
    pub source_volumes: usize,
}

impl DescriptorSet {
    pub fn from_rows(dim: usize, rows: &[Vec<f64>]) -> Result<Self, EvalError> {
        if rows.iter().any(|r| r.len() != dim) {
            return Err(EvalError::DimensionMismatch(dim, rows.iter().map(Vec::len).find(|&l| l != dim).unwrap_or(0)));
        }
        Ok(Self { dim, level_edge: 0, values: rows.concat(), source_volumes: 0 })
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.values.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

/// Random 7×7 axis-aligned slice patches, standardized per patch.
pub fn extract_slice_patches<R: Rng + ?Sized>(
    volumes: &[VoxelVolume],
    per_volume: usize,
    rng: &mut R,
) -> Result<DescriptorSet, EvalError> {
    let dim = PATCH_SIDE * PATCH_SIDE;
    let mut values = Vec::with_capacity(volumes.len() * per_volume * dim);
    let mut level_edge = 0;
    for v in volumes {
        let edge = v.cubic_edge().ok_or(EvalError::LevelEdge(v.dims()[0]))?;
        if edge < PATCH_SIDE {
            return Err(EvalError::LevelEdge(edge));
        }
        level_edge = edge;
        for _ in 0..per_volume {
            let axis = rng.random_range(0..3usize);
            let slice = rng.random_range(0..edge);
            let u0 = rng.random_range(0..=edge - PATCH_SIDE);
            let v0 = rng.random_range(0..=edge - PATCH_SIDE);
            let start = values.len();
            for j in 0..PATCH_SIDE {
                for i in 0..PATCH_SIDE {
                    let (u, w) = (u0 + i, v0 + j);
                    let value = match axis {
                        0 => v.get(slice, u, w),
                        1 => v.get(u, slice, w),
                        _ => v.get(u, w, slice),
                    };
                    values.push(value as f64);
                }
            }
            standardize(&mut values[start..]);
        }
    }
    Ok(DescriptorSet { dim, level_edge, values, source_volumes: volumes.len() })
}

fn standardize(p: &mut [f64]) {
    let n = p.len() as f64;
    let mean = p.iter().sum::<f64>() / n;
    let var = p.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let sd = var.sqrt().max(STD_FLOOR);
    for x in p.iter_mut() {
        *x = (*x - mean) / sd;
    }
}

/// Unit-norm random directions in `dim` dimensions.
pub fn random_directions<R: Rng + ?Sized>(dim: usize, count: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| loop {
            let d: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let n = d.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-12 {
                break d.into_iter().map(|x| x / n).collect();
            }
        })
        .collect()
}

/// Optimal 1-D transport cost (mean absolute difference of sorted values).
/// Unequal sizes compare interpolated quantiles at `max(n, m)` levels.
pub fn projected_distance(a: &mut [f64], b: &mut [f64]) -> Result<f64, EvalError> {
    if a.is_empty() || b.is_empty() {
        return Err(EvalError::Empty("descriptor set"));
    }
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    if a.len() == b.len() {
        return Ok(a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64);
    }
    let k = a.len().max(b.len());
    let q = |s: &[f64], i: usize| {
        let pos = ((i as f64 + 0.5) / k as f64 * s.len() as f64 - 0.5).clamp(0.0, (s.len() - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(s.len() - 1);
        s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
    };
    Ok((0..k).map(|i| (q(a, i) - q(b, i)).abs()).sum::<f64>() / k as f64)
}

fn project(set: &DescriptorSet, dir: &[f64]) -> Vec<f64> {
    (0..set.len()).map(|i| set.row(i).iter().zip(dir).map(|(x, d)| x * d).sum()).collect()
}

/// Unscaled sliced distance over explicit directions.
pub fn sliced_distance_with(a: &DescriptorSet, b: &DescriptorSet, directions: &[Vec<f64>]) -> Result<f64, EvalError> {
    if a.dim != b.dim {
        return Err(EvalError::DimensionMismatch(a.dim, b.dim));
    }
    if a.is_empty() || b.is_empty() {
        return Err(EvalError::Empty("descriptor set"));
    }
    if directions.is_empty() {
        return Err(EvalError::Empty("projection set"));
    }
    let per: Vec<f64> = directions
        .par_iter()
        .map(|d| {
            let mut pa = project(a, d);
            let mut pb = project(b, d);
            projected_distance(&mut pa, &mut pb)
        })
        .collect::<Result<_, _>>()?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwdConfig {
    pub projections: usize,
    pub repeats: usize,
    pub patches_per_volume: usize,
}

impl Default for SwdConfig {
    fn default() -> Self {
        Self { projections: DEFAULT_PROJECTIONS, repeats: DEFAULT_REPEATS, patches_per_volume: PATCHES_PER_VOLUME }
    }
}

/// Scaled sliced Wasserstein distance; projections are shared between sets.
pub fn sliced_wasserstein<R: Rng + ?Sized>(
    a: &DescriptorSet,
    b: &DescriptorSet,
    projections: usize,
    repeats: usize,
    rng: &mut R,
) -> Result<f64, EvalError> {
    let mut total = 0.0;
    for _ in 0..repeats.max(1) {
        let dirs = random_directions(a.dim, projections.max(1), rng);
        total += sliced_distance_with(a, b, &dirs)?;
    }
    Ok(total / repeats.max(1) as f64 * SWD_SCALE)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwdLevel {
    pub edge: usize,
    pub swd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwdReport {
    pub levels: Vec<SwdLevel>,
    pub average: f64,
    pub projections: usize,
    pub repeats: usize,
    pub scale: f64,
    pub patches_per_volume: usize,
}

fn level_descriptors(volumes: &[VoxelVolume], cfg: &SwdConfig, seed: u64, stream: u64) -> Result<Vec<DescriptorSet>, EvalError> {
    let per_volume: Vec<Vec<VoxelVolume>> = volumes.par_iter().map(laplacian_levels).collect::<Result<_, _>>()?;
    let n_levels = per_volume.first().map_or(0, Vec::len);
    (0..n_levels)
        .map(|k| {
            let level: Vec<VoxelVolume> = per_volume.iter().map(|l| l[k].clone()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream * 64 + k as u64);
            extract_slice_patches(&level, cfg.patches_per_volume, &mut rng)
        })
        .collect()
}

/// Per-level and averaged SWD between two cohorts of equal edge.
pub fn multiscale_swd(real: &[VoxelVolume], fake: &[VoxelVolume], cfg: &SwdConfig, seed: u64) -> Result<SwdReport, EvalError> {
    if real.is_empty() || fake.is_empty() {
        return Err(EvalError::Empty("cohort"));
    }
    let edge = real[0].dims();
    if let Some(bad) = real.iter().chain(fake).find(|v| v.dims() != edge) {
        return Err(EvalError::EdgeMismatch(edge[0], bad.dims()[0]));
    }
    let ra = level_descriptors(real, cfg, seed, 1)?;
    let fa = level_descriptors(fake, cfg, seed, 2)?;
    let mut levels = Vec::with_capacity(ra.len());
    for (k, (a, b)) in ra.iter().zip(&fa).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1000 + k as u64);
        let swd = sliced_wasserstein(a, b, cfg.projections, cfg.repeats, &mut rng)?;
        levels.push(SwdLevel { edge: a.level_edge, swd });
    }
    let average = levels.iter().map(|l| l.swd).sum::<f64>() / levels.len() as f64;
    Ok(SwdReport {
        levels,
        average,
        projections: cfg.projections,
        repeats: cfg.repeats,
        scale: SWD_SCALE,
        patches_per_volume: cfg.patches_per_volume,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_one_dimensional_transport() {
        let a = DescriptorSet::from_rows(1, &[vec![0.0], vec![1.0]]).unwrap();
        let b = DescriptorSet::from_rows(1, &[vec![0.0], vec![2.0]]).unwrap();
        let d = sliced_distance_with(&a, &b, &[vec![1.0]]).unwrap();
        assert_eq!(d * SWD_SCALE, 500.0);
    }

    #[test]
    fn self_distance_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = VoxelVolume::from_pore_fn([16; 3], 1.0, |x, y, z| (x * 3 + y * 5 + z) % 7 < 3).unwrap();
        let set = extract_slice_patches(&[v], 32, &mut rng).unwrap();
        assert_eq!(set.len(), 32);
        assert_eq!(sliced_wasserstein(&set, &set, 64, 2, &mut rng).unwrap(), 0.0);
    }

    #[test]
    fn constant_patches_standardize_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = VoxelVolume::filled([8; 3], 1.0, 1.0).unwrap();
        let set = extract_slice_patches(&[v], 5, &mut rng).unwrap();
        assert!(set.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn levels_of_64_are_16_32_64() {
        let v = VoxelVolume::from_pore_fn([64; 3], 1.0, |x, y, _| (x / 3 + y / 5) % 2 == 0).unwrap();
        let levels = laplacian_levels(&v).unwrap();
        assert_eq!(levels.iter().map(|l| l.dims()[0]).collect::<Vec<_>>(), vec![16, 32, 64]);
        let back = reconstruct_from_levels(&levels).unwrap();
        let err = back.data().iter().zip(v.data()).map(|(a, b)| (a - b).abs()).fold(0f32, f32::max);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn constant_volume_bands_vanish() {
        let v = VoxelVolume::filled([32; 3], 1.0, 1.0).unwrap();
        let levels = laplacian_levels(&v).unwrap();
        assert!(levels[0].data().iter().all(|&x| x == 1.0));
        assert!(levels[1].data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn nonconforming_edges_are_rejected() {
        for e in [8, 24, 48] {
            let v = VoxelVolume::filled([e; 3], 0.0, 1.0).unwrap();
            assert!(matches!(laplacian_levels(&v), Err(EvalError::LevelEdge(_))));
        }
    }

    #[test]
    fn unequal_sizes_use_quantiles() {
        let mut a = vec![0.0, 1.0];
        let mut b = vec![0.0, 0.5, 1.0, 1.5];
        let d = projected_distance(&mut a, &mut b).unwrap();
        assert!(d > 0.0 && d.is_finite());
        assert!(projected_distance(&mut [], &mut [1.0]).is_err());
    }
}
