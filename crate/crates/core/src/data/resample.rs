//! Grid resampling and the resolution pyramid used by progressive training.

use super::DataError;
use crate::moments::UNIT_RANGE_THRESHOLD;
use crate::volume::VoxelVolume;

/// Sample position and weight pairs for 1-D linear interpolation on a
/// cell-centred grid: target voxel `i` sits at source coordinate
/// `(i + 0.5) * n_src / n_dst - 0.5`.
fn linear_taps(n_src: usize, n_dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_src as f64 / n_dst as f64;
    (0..n_dst)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_src - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(n_src - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

/// Separable trilinear interpolation onto a `target` grid; values stay continuous.
pub fn trilinear(v: &VoxelVolume, target: [usize; 3]) -> Vec<f64> {
    let [nx, ny, nz] = v.dims();
    let [tx, ty, tz] = target;
    let src: Vec<f64> = v.data().iter().map(|&x| x as f64).collect();

    let taps = linear_taps(nx, tx);
    let mut a = vec![0.0; tx * ny * nz];
    for row in 0..ny * nz {
        let s = &src[row * nx..(row + 1) * nx];
        for (i, &(lo, hi, w)) in taps.iter().enumerate() {
            a[row * tx + i] = s[lo] * (1.0 - w) + s[hi] * w;
        }
    }

    let taps = linear_taps(ny, ty);
    let mut b = vec![0.0; tx * ty * nz];
    for z in 0..nz {
        for (j, &(lo, hi, w)) in taps.iter().enumerate() {
            let l = &a[(lo + ny * z) * tx..][..tx];
            let h = &a[(hi + ny * z) * tx..][..tx];
            let out = &mut b[(j + ty * z) * tx..][..tx];
            for x in 0..tx {
                out[x] = l[x] * (1.0 - w) + h[x] * w;
            }
        }
    }

    let taps = linear_taps(nz, tz);
    let plane = tx * ty;
    let mut c = vec![0.0; plane * tz];
    for (k, &(lo, hi, w)) in taps.iter().enumerate() {
        let l = &b[lo * plane..][..plane];
        let h = &b[hi * plane..][..plane];
        let out = &mut c[k * plane..][..plane];
        for p in 0..plane {
            out[p] = l[p] * (1.0 - w) + h[p] * w;
        }
    }
    c
}

/// Resamples a binary volume so its longest edge becomes `target_edge`,
/// re-binarizing at 0.5 (ties go to pore). The voxel size scales by
/// `original_edge / target_edge`.
pub fn resample_volume(v: &VoxelVolume, target_edge: usize) -> Result<VoxelVolume, DataError> {
    v.require_binary()?;
    if target_edge == 0 {
        return Err(DataError::InvalidArgument("target edge must be >= 1".into()));
    }
    let dims = v.dims();
    let longest = *dims.iter().max().expect("three axes");
    let factor = target_edge as f64 / longest as f64;
    let target = dims.map(|n| ((n as f64 * factor).round() as usize).max(1));
    if target == dims {
        return Ok(v.clone());
    }
    let values = trilinear(v, target);
    let threshold = UNIT_RANGE_THRESHOLD as f64;
    let data = values.iter().map(|&x| if x >= threshold { 1.0 } else { 0.0 }).collect();
    let voxel_size = v.voxel_size() * longest as f64 / target_edge as f64;
    Ok(VoxelVolume::binary(target, data, voxel_size)?)
}

/// Halves every edge of a binary volume (block mean, threshold 0.5).
pub fn downsample_half(v: &VoxelVolume) -> Result<VoxelVolume, DataError> {
    let edge = v.cubic_edge().ok_or(DataError::NotCubic(v.dims()))?;
    if edge < 2 || edge % 2 != 0 {
        return Err(DataError::InvalidArgument(format!("cannot halve edge {edge}")));
    }
    resample_volume(v, edge / 2)
}

/// Downsamples a cubic binary volume to `edge` through repeated halving.
pub fn downsample_to(v: &VoxelVolume, edge: usize) -> Result<VoxelVolume, DataError> {
    let mut cur = v.clone();
    while cur.cubic_edge().ok_or(DataError::NotCubic(cur.dims()))? > edge {
        cur = downsample_half(&cur)?;
    }
    if cur.cubic_edge() != Some(edge) {
        return Err(DataError::InvalidArgument(format!(
            "edge {edge} is not reachable by halving {:?}",
            v.dims()
        )));
    }
    Ok(cur)
}

/// Coarsest pyramid level edge.
pub const BASE_EDGE: usize = 4;
/// Training sample edge at full scale.
pub const FULL_EDGE: usize = 64;

/// Multi-resolution copies of one sample, coarsest first.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolutionPyramid {
    pub levels: Vec<VoxelVolume>,
}

impl ResolutionPyramid {
    /// Pyramid `4, 8, ..., edge` for any cubic power-of-two edge >= 4.
    pub fn from_volume(v: &VoxelVolume) -> Result<Self, DataError> {
        let edge = v.cubic_edge().ok_or(DataError::NotCubic(v.dims()))?;
        if edge < BASE_EDGE || !edge.is_power_of_two() {
            return Err(DataError::PyramidEdge(edge));
        }
        let mut levels = vec![v.clone()];
        while levels.last().and_then(VoxelVolume::cubic_edge) != Some(BASE_EDGE) {
            let next = downsample_half(levels.last().expect("non-empty"))?;
            levels.push(next);
        }
        levels.reverse();
        Ok(Self { levels })
    }

    pub fn edges(&self) -> Vec<usize> {
        self.levels.iter().filter_map(VoxelVolume::cubic_edge).collect()
    }

    /// Level for training stage `stage` (1-based).
    pub fn stage(&self, stage: usize) -> Option<&VoxelVolume> {
        stage.checked_sub(1).and_then(|i| self.levels.get(i))
    }
}

/// The full-scale pyramid: requires a 64-voxel cubic sample.
pub fn build_pyramid(v: &VoxelVolume) -> Result<ResolutionPyramid, DataError> {
    match v.cubic_edge() {
        Some(FULL_EDGE) => ResolutionPyramid::from_volume(v),
        Some(edge) => Err(DataError::PyramidEdge(edge)),
        None => Err(DataError::NotCubic(v.dims())),
    }
}
