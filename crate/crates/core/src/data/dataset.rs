//! Training datasets of cubic binary subvolumes.
//!
//! Samples are stored as references into shared source volumes (offset plus a
//! rotation about z) and materialized on demand, so a 250^3 source and its
//! 12,288 augmented crops cost one source volume of memory.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::volume::{Axis, VoxelVolume};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const SAMPLES_FILE: &str = "samples.bin";
pub const DATASET_VERSION: u32 = 1;

/// Rotation axis used for augmentation.
pub const AUGMENT_AXIS: Axis = Axis::Z;

/// Where a sample came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    /// Minimum corner of the crop within the source volume.
    pub offset: [usize; 3],
    /// Quarter turns about z applied after cropping.
    pub quarter_turns: u8,
}

/// Per-sample labels; fields stay `None` until computed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleLabel {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rock_type: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub porosity: Option<f64>,
    /// Axial correlation lengths `[x, y, z]`, voxels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<[f64; 3]>,
    /// Correlation length of the axis-averaged curve, voxels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_iso: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sa: Option<f64>,
}

impl SampleLabel {
    /// Labels of the same sample after `turns` quarter turns about z: axial
    /// lengths along x and y swap on odd turns, everything else is invariant.
    pub fn rotated(&self, turns: u8) -> Self {
        let mut out = self.clone();
        if turns % 2 == 1 {
            if let Some([x, y, z]) = self.lambda {
                out.lambda = Some([y, x, z]);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Storage {
    source: usize,
    offset: [usize; 3],
    quarter_turns: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleEntry {
    pub provenance: Provenance,
    pub label: SampleLabel,
    storage: Storage,
}

/// Cubic binary samples of one edge length with labels and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SubvolumeDataset {
    edge: usize,
    voxel_size: f64,
    sources: Vec<Arc<VoxelVolume>>,
    entries: Vec<SampleEntry>,
}

impl SubvolumeDataset {
    pub fn empty(edge: usize, voxel_size: f64) -> Self {
        Self { edge, voxel_size, sources: Vec::new(), entries: Vec::new() }
    }

    /// Dataset where every volume is its own sample.
    pub fn from_volumes(
        name: &str,
        volumes: Vec<VoxelVolume>,
        rock_type: Option<usize>,
    ) -> Result<Self, DataError> {
        let first = volumes.first().ok_or_else(|| DataError::InvalidArgument("no volumes".into()))?;
        let edge = first.cubic_edge().ok_or(DataError::NotCubic(first.dims()))?;
        let mut ds = Self::empty(edge, first.voxel_size());
        for (i, v) in volumes.into_iter().enumerate() {
            v.require_binary()?;
            if v.cubic_edge() != Some(edge) {
                return Err(DataError::NotCubic(v.dims()));
            }
            ds.sources.push(Arc::new(v));
            ds.entries.push(SampleEntry {
                provenance: Provenance { source: format!("{name}#{i}"), offset: [0; 3], quarter_turns: 0 },
                label: SampleLabel { rock_type, ..Default::default() },
                storage: Storage { source: i, offset: [0; 3], quarter_turns: 0 },
            });
        }
        Ok(ds)
    }

    pub fn edge(&self) -> usize {
        self.edge
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[SampleEntry] {
        &self.entries
    }

    pub fn labels(&self) -> impl Iterator<Item = &SampleLabel> {
        self.entries.iter().map(|e| &e.label)
    }

    pub fn label_mut(&mut self, i: usize) -> &mut SampleLabel {
        &mut self.entries[i].label
    }

    /// Materializes sample `i`.
    pub fn sample(&self, i: usize) -> VoxelVolume {
        let s = self.entries[i].storage;
        let crop = self.sources[s.source]
            .crop(s.offset, self.edge)
            .expect("storage offsets are validated on insertion");
        crop.rotate_quarter(AUGMENT_AXIS, s.quarter_turns)
    }

    pub fn samples(&self) -> impl Iterator<Item = VoxelVolume> + '_ {
        (0..self.len()).map(|i| self.sample(i))
    }

    /// Keeps the samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            edge: self.edge,
            voxel_size: self.voxel_size,
            sources: self.sources.clone(),
            entries: indices.iter().map(|&i| self.entries[i].clone()).collect(),
        }
    }

    /// Appends another dataset of the same edge length.
    pub fn extend(&mut self, other: SubvolumeDataset) -> Result<(), DataError> {
        if other.is_empty() {
            return Ok(());
        }
        if self.is_empty() && self.sources.is_empty() {
            *self = other;
            return Ok(());
        }
        if other.edge != self.edge {
            return Err(DataError::InvalidArgument(format!(
                "cannot merge edge {} into edge {}",
                other.edge, self.edge
            )));
        }
        let base = self.sources.len();
        self.sources.extend(other.sources);
        self.entries.extend(other.entries.into_iter().map(|mut e| {
            e.storage.source += base;
            e
        }));
        Ok(())
    }
}

/// Number of crop positions along an axis of `extent` voxels.
pub fn crops_per_axis(extent: usize, edge: usize, stride: usize) -> usize {
    if edge > extent || stride == 0 {
        0
    } else {
        (extent - edge) / stride + 1
    }
}

/// Regular grid of cubic crops at offsets `0, stride, 2 * stride, ...` along
/// every axis. Samples are ordered x-fastest over the offset grid.
pub fn extract_subvolumes(
    source: Arc<VoxelVolume>,
    name: &str,
    edge: usize,
    stride: usize,
    rock_type: Option<usize>,
) -> Result<SubvolumeDataset, DataError> {
    source.require_binary()?;
    if stride == 0 {
        return Err(DataError::InvalidArgument("stride must be >= 1".into()));
    }
    let dims = source.dims();
    if let Some(&extent) = dims.iter().find(|&&n| edge > n) {
        return Err(DataError::EdgeTooLarge { edge, extent });
    }
    if edge == 0 {
        return Err(DataError::InvalidArgument("edge must be >= 1".into()));
    }
    let counts = dims.map(|n| crops_per_axis(n, edge, stride));
    let mut entries = Vec::with_capacity(counts.iter().product());
    for k in 0..counts[2] {
        for j in 0..counts[1] {
            for i in 0..counts[0] {
                let offset = [i * stride, j * stride, k * stride];
                entries.push(SampleEntry {
                    provenance: Provenance { source: name.to_string(), offset, quarter_turns: 0 },
                    label: SampleLabel { rock_type, ..Default::default() },
                    storage: Storage { source: 0, offset, quarter_turns: 0 },
                });
            }
        }
    }
    Ok(SubvolumeDataset { edge, voxel_size: source.voxel_size(), sources: vec![source], entries })
}

/// Adds the 90° and 180° rotations about z of every sample: output is three
/// times the input, ordered `[s0, s0 + 90°, s0 + 180°, s1, ...]`.
pub fn augment_rotations(d: &SubvolumeDataset) -> SubvolumeDataset {
    let mut entries = Vec::with_capacity(d.entries.len() * 3);
    for e in &d.entries {
        for turns in 0..3u8 {
            let mut r = e.clone();
            r.storage.quarter_turns = (e.storage.quarter_turns + turns) % 4;
            r.provenance.quarter_turns = (e.provenance.quarter_turns + turns) % 4;
            r.label = e.label.rotated(turns);
            entries.push(r);
        }
    }
    SubvolumeDataset { edge: d.edge, voxel_size: d.voxel_size, sources: d.sources.clone(), entries }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    edge: usize,
    voxel_size_um: f64,
    count: usize,
    sample_file: String,
    bytes_per_sample: usize,
    order: String,
    phase: String,
    #[serde(default)]
    samples: Vec<ManifestRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestRecord {
    source: String,
    offset: [usize; 3],
    quarter_turns: u8,
    #[serde(flatten)]
    label: SampleLabel,
}

/// Writes `manifest.toml` and the packed `samples.bin` (one byte per voxel,
/// x-fastest, samples back to back) into `dir`.
pub fn write_dataset(d: &SubvolumeDataset, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    let bin = dir.join(SAMPLES_FILE);
    let file = fs::File::create(&bin).map_err(|e| DataError::io(&bin, e))?;
    let mut w = BufWriter::new(file);
    let mut buf = Vec::with_capacity(d.edge.pow(3));
    for v in d.samples() {
        buf.clear();
        buf.extend(v.data().iter().map(|&x| x as u8));
        w.write_all(&buf).map_err(|e| DataError::io(&bin, e))?;
    }
    w.flush().map_err(|e| DataError::io(&bin, e))?;

    let manifest = Manifest {
        version: DATASET_VERSION,
        edge: d.edge,
        voxel_size_um: d.voxel_size,
        count: d.len(),
        sample_file: SAMPLES_FILE.into(),
        bytes_per_sample: d.edge.pow(3),
        order: "x-fastest".into(),
        phase: "pore=1,solid=0".into(),
        samples: d
            .entries
            .iter()
            .map(|e| ManifestRecord {
                source: e.provenance.source.clone(),
                offset: e.provenance.offset,
                quarter_turns: e.provenance.quarter_turns,
                label: e.label.clone(),
            })
            .collect(),
    };
    let text = toml::to_string(&manifest).map_err(|e| DataError::Manifest {
        path: dir.join(MANIFEST_FILE),
        message: e.to_string(),
    })?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, text).map_err(|e| DataError::io(&path, e))
}

/// Reads a dataset directory written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<SubvolumeDataset, DataError> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(DataError::MissingManifest(path));
    }
    let text = fs::read_to_string(&path).map_err(|e| DataError::io(&path, e))?;
    let bad = |message: String| DataError::Manifest { path: path.clone(), message };
    let m: Manifest = toml::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if m.version != DATASET_VERSION {
        return Err(bad(format!("unsupported version {}", m.version)));
    }
    if m.samples.len() != m.count {
        return Err(bad(format!("count {} but {} sample records", m.count, m.samples.len())));
    }
    if m.bytes_per_sample != m.edge.pow(3) {
        return Err(bad(format!("bytes_per_sample {} inconsistent with edge {}", m.bytes_per_sample, m.edge)));
    }
    let bin = dir.join(&m.sample_file);
    let bytes = fs::read(&bin).map_err(|e| DataError::io(&bin, e))?;
    if bytes.len() != m.count * m.bytes_per_sample {
        return Err(bad(format!(
            "sample file holds {} bytes, expected {}",
            bytes.len(),
            m.count * m.bytes_per_sample
        )));
    }
    let mut ds = SubvolumeDataset::empty(m.edge, m.voxel_size_um);
    if m.count == 0 {
        return Ok(ds);
    }
    // Samples are stacked along z into one source volume.
    let data: Vec<f32> = bytes.iter().map(|&b| b as f32).collect();
    let stack = VoxelVolume::binary([m.edge, m.edge, m.edge * m.count], data, m.voxel_size_um)?;
    ds.sources.push(Arc::new(stack));
    ds.entries = m
        .samples
        .into_iter()
        .enumerate()
        .map(|(i, r)| SampleEntry {
            provenance: Provenance { source: r.source, offset: r.offset, quarter_turns: r.quarter_turns },
            label: r.label,
            storage: Storage { source: 0, offset: [0, 0, i * m.edge], quarter_turns: 0 },
        })
        .collect();
    Ok(ds)
}

/// Size in bytes of the packed sample file for a dataset.
pub fn packed_size(count: usize, edge: usize) -> u64 {
    (count * edge.pow(3)) as u64
}

impl DataError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io { path: PathBuf::from(path), source }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::porosity;

    fn source(n: usize) -> Arc<VoxelVolume> {
        Arc::new(VoxelVolume::from_pore_fn([n; 3], 3.0, |x, y, z| (x * 7 + y * 3 + z * 5) % 4 == 0).unwrap())
    }

    #[test]
    fn crop_counts_follow_the_formula() {
        assert_eq!(crops_per_axis(250, 64, 12), 16);
        assert_eq!(crops_per_axis(64, 64, 5), 1);
        assert_eq!(crops_per_axis(128, 64, 32), 3);
        let d = extract_subvolumes(source(20), "s", 8, 4, None).unwrap();
        assert_eq!(d.len(), 4 * 4 * 4);
    }

    #[test]
    fn extraction_errors() {
        assert!(matches!(
            extract_subvolumes(source(10), "s", 11, 1, None),
            Err(DataError::EdgeTooLarge { edge: 11, extent: 10 })
        ));
        assert!(extract_subvolumes(source(10), "s", 4, 0, None).is_err());
    }

    #[test]
    fn samples_are_verbatim_crops() {
        let src = source(16);
        let d = extract_subvolumes(src.clone(), "s", 6, 5, Some(2)).unwrap();
        for (i, e) in d.entries().iter().enumerate() {
            assert_eq!(d.sample(i), src.crop(e.provenance.offset, 6).unwrap());
            assert_eq!(e.label.rock_type, Some(2));
        }
    }

    #[test]
    fn augmentation_triples_and_rotates() {
        let d = extract_subvolumes(source(12), "s", 6, 6, None).unwrap();
        let a = augment_rotations(&d);
        assert_eq!(a.len(), 3 * d.len());
        assert_eq!(augment_rotations(&a).len(), 9 * d.len());
        for i in 0..d.len() {
            let base = d.sample(i);
            assert_eq!(a.sample(3 * i), base);
            assert_eq!(a.sample(3 * i + 1), base.rotate_quarter(Axis::Z, 1));
            assert_eq!(a.sample(3 * i + 2), base.rotate_quarter(Axis::Z, 2));
            for k in 0..3 {
                assert_eq!(porosity(&a.sample(3 * i + k)).unwrap(), porosity(&base).unwrap());
            }
        }
    }

    #[test]
    fn rotated_labels_swap_horizontal_lengths() {
        let l = SampleLabel { lambda: Some([1.0, 2.0, 3.0]), ..Default::default() };
        assert_eq!(l.rotated(1).lambda, Some([2.0, 1.0, 3.0]));
        assert_eq!(l.rotated(2).lambda, Some([1.0, 2.0, 3.0]));
    }

    #[test]
    fn round_trip_preserves_samples_labels_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut d = augment_rotations(&extract_subvolumes(source(12), "rock", 6, 3, Some(1)).unwrap());
        for i in 0..d.len() {
            d.label_mut(i).porosity = Some(i as f64 / 100.0);
        }
        write_dataset(&d, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), d.len());
        for i in 0..d.len() {
            assert_eq!(back.sample(i), d.sample(i));
            assert_eq!(back.entries()[i].label, d.entries()[i].label);
            assert_eq!(back.entries()[i].provenance, d.entries()[i].provenance);
        }
    }

    #[test]
    fn empty_dataset_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&SubvolumeDataset::empty(8, 1.0), dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.edge(), 8);
    }

    #[test]
    fn corrupt_or_missing_manifest_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(DataError::MissingManifest(_))));
        fs::write(dir.path().join(MANIFEST_FILE), "version = 1\nedge = ").unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(DataError::Manifest { .. })));
    }

    #[test]
    fn truncated_sample_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let d = extract_subvolumes(source(8), "s", 4, 4, None).unwrap();
        write_dataset(&d, dir.path()).unwrap();
        let bin = dir.path().join(SAMPLES_FILE);
        let bytes = fs::read(&bin).unwrap();
        fs::write(&bin, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(DataError::Manifest { .. })));
    }
}
