//! Voxel volumes: the pore/solid indicator field and its on-disk format.
//!
//! Values use the convention `1 = pore`, `0 = solid`. Storage is x-fastest:
//! the linear index of `(x, y, z)` is `x + nx * (y + ny * z)`, which matches
//! the `[.., D, H, W] = [.., z, y, x]` layout used for network tensors.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("volume dimensions must all be >= 1, got {0:?}")]
    EmptyDimension([usize; 3]),
    #[error("voxel size must be positive and finite, got {0}")]
    InvalidVoxelSize(f64),
    #[error("data length {len} does not match dimensions {dims:?}")]
    ShapeMismatch { dims: [usize; 3], len: usize },
    #[error("volume is not binary: value {value} at linear index {index}")]
    NotBinary { index: usize, value: f32 },
    #[error("operation requires a binary volume")]
    RequiresBinary,
    #[error("crop at {offset:?} with edge {edge} exceeds volume dimensions {dims:?}")]
    CropOutOfBounds { offset: [usize; 3], edge: usize, dims: [usize; 3] },
    #[error("volume sidecar {path}: {message}")]
    Sidecar { path: PathBuf, message: String },
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Coordinate axis of a volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Axis> {
        Axis::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            other => Err(format!("unknown axis '{other}', expected x, y or z")),
        }
    }
}

/// A 3D grid of pore/solid (or continuous, pre-threshold) values.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelVolume {
    dims: [usize; 3],
    data: Vec<f32>,
    binary: bool,
    voxel_size: f64,
}

fn check_shape(dims: [usize; 3], len: usize, voxel_size: f64) -> Result<(), VolumeError> {
    if dims.iter().any(|&n| n == 0) {
        return Err(VolumeError::EmptyDimension(dims));
    }
    if !(voxel_size.is_finite() && voxel_size > 0.0) {
        return Err(VolumeError::InvalidVoxelSize(voxel_size));
    }
    if dims[0] * dims[1] * dims[2] != len {
        return Err(VolumeError::ShapeMismatch { dims, len });
    }
    Ok(())
}

impl VoxelVolume {
    /// Builds a binary volume, rejecting any value outside `{0, 1}`.
    pub fn binary(dims: [usize; 3], data: Vec<f32>, voxel_size: f64) -> Result<Self, VolumeError> {
        check_shape(dims, data.len(), voxel_size)?;
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, &v)| v != 0.0 && v != 1.0)
        {
            return Err(VolumeError::NotBinary { index, value });
        }
        Ok(Self { dims, data, binary: true, voxel_size })
    }

    pub fn continuous(dims: [usize; 3], data: Vec<f32>, voxel_size: f64) -> Result<Self, VolumeError> {
        check_shape(dims, data.len(), voxel_size)?;
        Ok(Self { dims, data, binary: false, voxel_size })
    }

    /// Constant-valued volume; binary when the value is 0 or 1.
    pub fn filled(dims: [usize; 3], value: f32, voxel_size: f64) -> Result<Self, VolumeError> {
        let len = dims.iter().product();
        check_shape(dims, len, voxel_size)?;
        let binary = value == 0.0 || value == 1.0;
        Ok(Self { dims, data: vec![value; len], binary, voxel_size })
    }

    /// Binary volume from a predicate that marks pore voxels.
    pub fn from_pore_fn(
        dims: [usize; 3],
        voxel_size: f64,
        mut is_pore: impl FnMut(usize, usize, usize) -> bool,
    ) -> Result<Self, VolumeError> {
        let len = dims.iter().product();
        check_shape(dims, len, voxel_size)?;
        let mut data = Vec::with_capacity(len);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(if is_pore(x, y, z) { 1.0 } else { 0.0 });
                }
            }
        }
        Ok(Self { dims, data, binary: true, voxel_size })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn extent(&self, axis: Axis) -> usize {
        self.dims[axis.index()]
    }

    /// Edge length when the volume is cubic.
    pub fn cubic_edge(&self) -> Option<usize> {
        let [nx, ny, nz] = self.dims;
        (nx == ny && ny == nz).then_some(nx)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn is_binary(&self) -> bool {
        self.binary
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn with_voxel_size(mut self, voxel_size: f64) -> Result<Self, VolumeError> {
        if !(voxel_size.is_finite() && voxel_size > 0.0) {
            return Err(VolumeError::InvalidVoxelSize(voxel_size));
        }
        self.voxel_size = voxel_size;
        Ok(self)
    }

    pub fn require_binary(&self) -> Result<(), VolumeError> {
        if self.binary {
            Ok(())
        } else {
            Err(VolumeError::RequiresBinary)
        }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    /// Linear stride between neighbours along `axis`.
    pub fn stride(&self, axis: Axis) -> usize {
        match axis {
            Axis::X => 1,
            Axis::Y => self.dims[0],
            Axis::Z => self.dims[0] * self.dims[1],
        }
    }

    pub fn pore_count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1.0).count()
    }

    /// Pore/solid relabeling `1 - F`.
    pub fn complement(&self) -> Result<Self, VolumeError> {
        self.require_binary()?;
        Ok(Self {
            dims: self.dims,
            data: self.data.iter().map(|v| 1.0 - v).collect(),
            binary: true,
            voxel_size: self.voxel_size,
        })
    }

    /// Cubic crop with its minimum corner at `offset`; values are copied verbatim.
    pub fn crop(&self, offset: [usize; 3], edge: usize) -> Result<Self, VolumeError> {
        self.crop_box(offset, [edge; 3])
    }

    pub fn crop_box(&self, offset: [usize; 3], size: [usize; 3]) -> Result<Self, VolumeError> {
        if size.iter().any(|&n| n == 0)
            || (0..3).any(|a| offset[a] + size[a] > self.dims[a])
        {
            return Err(VolumeError::CropOutOfBounds { offset, edge: size[0], dims: self.dims });
        }
        let mut data = Vec::with_capacity(size.iter().product());
        for z in offset[2]..offset[2] + size[2] {
            for y in offset[1]..offset[1] + size[1] {
                let row = self.index(offset[0], y, z);
                data.extend_from_slice(&self.data[row..row + size[0]]);
            }
        }
        Ok(Self { dims: size, data, binary: self.binary, voxel_size: self.voxel_size })
    }

    /// Rotates by `quarter_turns` × 90° about `axis` (right-handed).
    ///
    /// For a rotation about z, the new x axis is the old y axis reversed, so
    /// axial statistics along x and y swap.
    pub fn rotate_quarter(&self, axis: Axis, quarter_turns: u8) -> Self {
        let mut out = self.clone();
        for _ in 0..quarter_turns % 4 {
            out = out.rotate_once(axis);
        }
        out
    }

    fn rotate_once(&self, axis: Axis) -> Self {
        // (a, b, c) is a cyclic permutation of (x, y, z) with a the rotation axis.
        let a = axis.index();
        let b = (a + 1) % 3;
        let c = (a + 2) % 3;
        let mut new_dims = self.dims;
        new_dims.swap(b, c);
        let mut data = vec![0.0f32; self.data.len()];
        let mut p = [0usize; 3];
        for z in 0..new_dims[2] {
            for y in 0..new_dims[1] {
                for x in 0..new_dims[0] {
                    let q = [x, y, z];
                    // new(b = i, c = j) = old(b = j, c = n_c - 1 - i)
                    p[a] = q[a];
                    p[b] = q[c];
                    p[c] = self.dims[c] - 1 - q[b];
                    let dst = x + new_dims[0] * (y + new_dims[1] * z);
                    data[dst] = self.get(p[0], p[1], p[2]);
                }
            }
        }
        Self { dims: new_dims, data, binary: self.binary, voxel_size: self.voxel_size }
    }

    /// Writes the raw byte stream to `path` and the key-value sidecar next to it.
    pub fn write_raw(&self, path: &Path) -> Result<(), VolumeError> {
        self.require_binary()?;
        let io_err = |source| VolumeError::Io { path: path.to_path_buf(), source };
        let file = fs::File::create(path).map_err(io_err)?;
        let mut w = BufWriter::new(file);
        let bytes: Vec<u8> = self.data.iter().map(|&v| v as u8).collect();
        w.write_all(&bytes).map_err(io_err)?;
        w.flush().map_err(io_err)?;
        let meta = VolumeSidecar::describe(self);
        let sidecar = sidecar_path(path);
        let text = toml::to_string(&meta).map_err(|e| VolumeError::Sidecar {
            path: sidecar.clone(),
            message: e.to_string(),
        })?;
        fs::write(&sidecar, format!("# voxel volume sidecar\n{text}"))
            .map_err(|source| VolumeError::Io { path: sidecar, source })
    }

    /// Reads a raw volume written by [`VoxelVolume::write_raw`] (or any u8
    /// stream with a matching sidecar).
    pub fn read_raw(path: &Path) -> Result<Self, VolumeError> {
        let sidecar = sidecar_path(path);
        let text = fs::read_to_string(&sidecar)
            .map_err(|source| VolumeError::Io { path: sidecar.clone(), source })?;
        let meta: VolumeSidecar = toml::from_str(&text).map_err(|e| VolumeError::Sidecar {
            path: sidecar.clone(),
            message: e.to_string(),
        })?;
        meta.validate(&sidecar)?;
        let bytes = fs::read(path).map_err(|source| VolumeError::Io { path: path.to_path_buf(), source })?;
        let data: Vec<f32> = bytes.iter().map(|&b| b as f32).collect();
        let dims = [meta.nx, meta.ny, meta.nz];
        if meta.binary {
            Self::binary(dims, data, meta.voxel_size_um)
        } else {
            Self::continuous(dims, data, meta.voxel_size_um)
        }
    }
}

/// Sidecar location for a raw volume: the same path with a `.meta` extension.
pub fn sidecar_path(raw: &Path) -> PathBuf {
    raw.with_extension("meta")
}

const PHASE_CONVENTION: &str = "pore=1,solid=0";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VolumeSidecar {
    format: String,
    order: String,
    nx: usize,
    ny: usize,
    nz: usize,
    voxel_size_um: f64,
    phase: String,
    binary: bool,
}

impl VolumeSidecar {
    fn describe(v: &VoxelVolume) -> Self {
        Self {
            format: "u8".into(),
            order: "x-fastest".into(),
            nx: v.dims[0],
            ny: v.dims[1],
            nz: v.dims[2],
            voxel_size_um: v.voxel_size,
            phase: PHASE_CONVENTION.into(),
            binary: v.binary,
        }
    }

    fn validate(&self, path: &Path) -> Result<(), VolumeError> {
        let bad = |message: String| VolumeError::Sidecar { path: path.to_path_buf(), message };
        if self.format != "u8" {
            return Err(bad(format!("unsupported format '{}'", self.format)));
        }
        if self.order != "x-fastest" {
            return Err(bad(format!("unsupported order '{}'", self.order)));
        }
        if self.phase != PHASE_CONVENTION {
            return Err(bad(format!("unsupported phase convention '{}'", self.phase)));
        }
        Ok(())
    }
}
