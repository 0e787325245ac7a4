//! Conditioning labels: schema, per-sample measurement, generator-side
//! sampling, and the image-like channel encoding shared by both networks.
//!
//! Channel order is fixed: rock-type one-hot channels first (reference table
//! order), then porosity, then correlation length (one isotropic component or
//! `x, y, z`).

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tch::{Kind, Tensor};
use thiserror::Error;

use crate::corrfit::{correlation_length, FitError};
use crate::data::{SampleLabel, SubvolumeDataset};
use crate::moments::{porosity, CurveAxis, MomentError};
use crate::stats::population_std;

#[derive(Debug, Error)]
pub enum ConditioningError {
    #[error("label does not match the schema: {0}")]
    SchemaMismatch(String),
    #[error("rock type {index} out of range for {count} categories")]
    RockTypeOutOfRange { index: usize, count: usize },
    #[error("cannot keep {keep} samples out of {len}")]
    KeepTooLarge { keep: usize, len: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("label range for {field} is empty or invalid: ({min}, {max})")]
    BadRange { field: String, min: f64, max: f64 },
    #[error(transparent)]
    Moment(#[from] MomentError),
    #[error(transparent)]
    Tch(#[from] tch::TchError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrLengthMode {
    #[default]
    Off,
    Isotropic,
    /// Three axial lengths `x, y, z`.
    Anisotropic,
}

impl CorrLengthMode {
    pub fn components(self) -> usize {
        match self {
            CorrLengthMode::Off => 0,
            CorrLengthMode::Isotropic => 1,
            CorrLengthMode::Anisotropic => 3,
        }
    }
}

/// How scalar labels are presented to the networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelEncoding {
    /// Measured values as-is.
    #[default]
    Raw,
    /// Affine map of the training range onto `[-1, 1]`.
    MinMax,
}

/// Which conditioning fields a model uses. Fixed for the lifetime of a model.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConditionSchema {
    /// Number of one-hot rock categories; 0 disables rock-type conditioning.
    #[serde(default)]
    pub rock_types: usize,
    #[serde(default)]
    pub porosity: bool,
    #[serde(default)]
    pub corr_length: CorrLengthMode,
    #[serde(default)]
    pub encoding: LabelEncoding,
}

impl ConditionSchema {
    pub fn rock_type(count: usize) -> Self {
        Self { rock_types: count, ..Default::default() }
    }

    pub fn porosity() -> Self {
        Self { porosity: true, ..Default::default() }
    }

    pub fn corr_length(mode: CorrLengthMode) -> Self {
        Self { corr_length: mode, ..Default::default() }
    }

    /// Label dimension `d`: one channel per label scalar.
    pub fn dim(&self) -> usize {
        self.rock_types + usize::from(self.porosity) + self.corr_length.components()
    }

    /// Channel count of the generator input (noise plus labels).
    pub fn latent_channels(&self) -> usize {
        1 + self.dim()
    }

    pub fn channel_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.rock_types).map(|k| format!("rock{k}")).collect();
        if self.porosity {
            names.push("porosity".into());
        }
        match self.corr_length {
            CorrLengthMode::Off => {}
            CorrLengthMode::Isotropic => names.push("lambda".into()),
            CorrLengthMode::Anisotropic => names.extend(["lambda_x", "lambda_y", "lambda_z"].map(String::from)),
        }
        names
    }
}

/// Correlation-length label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaLabel {
    Isotropic(f64),
    Anisotropic([f64; 3]),
}

/// Conditioning values for one sample.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConditionLabel {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rock_type: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub porosity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<LambdaLabel>,
}

impl ConditionLabel {
    pub fn rock(index: usize) -> Self {
        Self { rock_type: Some(index), ..Default::default() }
    }

    pub fn with_porosity(mut self, phi: f64) -> Self {
        self.porosity = Some(phi);
        self
    }

    pub fn with_lambda(mut self, lambda: LambdaLabel) -> Self {
        self.lambda = Some(lambda);
        self
    }

    /// Raw label vector in channel order.
    pub fn to_vector(&self, schema: &ConditionSchema) -> Result<Vec<f64>, ConditioningError> {
        let mut out = Vec::with_capacity(schema.dim());
        if schema.rock_types > 0 {
            let k = self
                .rock_type
                .ok_or_else(|| ConditioningError::SchemaMismatch("missing rock type".into()))?;
            if k >= schema.rock_types {
                return Err(ConditioningError::RockTypeOutOfRange { index: k, count: schema.rock_types });
            }
            out.extend((0..schema.rock_types).map(|i| if i == k { 1.0 } else { 0.0 }));
        }
        if schema.porosity {
            out.push(
                self.porosity
                    .ok_or_else(|| ConditioningError::SchemaMismatch("missing porosity".into()))?,
            );
        }
        match (schema.corr_length, self.lambda) {
            (CorrLengthMode::Off, _) => {}
            (CorrLengthMode::Isotropic, Some(LambdaLabel::Isotropic(l))) => out.push(l),
            (CorrLengthMode::Anisotropic, Some(LambdaLabel::Anisotropic(l))) => out.extend(l),
            (mode, other) => {
                return Err(ConditioningError::SchemaMismatch(format!(
                    "correlation-length mode {mode:?} with label {other:?}"
                )))
            }
        }
        Ok(out)
    }

    /// Conditioning label of a measured dataset sample.
    pub fn from_sample(l: &SampleLabel, schema: &ConditionSchema) -> Result<Self, ConditioningError> {
        let missing = |what: &str| ConditioningError::SchemaMismatch(format!("sample label lacks {what}"));
        let mut out = ConditionLabel::default();
        if schema.rock_types > 0 {
            out.rock_type = Some(l.rock_type.ok_or_else(|| missing("rock type"))?);
        }
        if schema.porosity {
            out.porosity = Some(l.porosity.ok_or_else(|| missing("porosity"))?);
        }
        out.lambda = match schema.corr_length {
            CorrLengthMode::Off => None,
            CorrLengthMode::Isotropic => Some(LambdaLabel::Isotropic(l.lambda_iso.ok_or_else(|| missing("lambda"))?)),
            CorrLengthMode::Anisotropic => Some(LambdaLabel::Anisotropic(l.lambda.ok_or_else(|| missing("axial lambda"))?)),
        };
        Ok(out)
    }
}

/// Observed `(min, max)` of every scalar label over a training dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelRange {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub porosity: Option<(f64, f64)>,
    /// One entry per correlation-length component.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lambda: Vec<(f64, f64)>,
}

impl LabelRange {
    /// Ranges over the measured labels of a dataset.
    pub fn from_dataset(ds: &SubvolumeDataset, schema: &ConditionSchema) -> Result<Self, ConditioningError> {
        let labels: Vec<ConditionLabel> = ds
            .labels()
            .map(|l| ConditionLabel::from_sample(l, schema))
            .collect::<Result<_, _>>()?;
        Self::from_labels(&labels, schema)
    }

    pub fn from_labels(labels: &[ConditionLabel], schema: &ConditionSchema) -> Result<Self, ConditioningError> {
        let extent = |xs: &mut dyn Iterator<Item = f64>| {
            xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
        };
        let mut out = LabelRange::default();
        if schema.porosity {
            out.porosity = Some(extent(&mut labels.iter().filter_map(|l| l.porosity)));
        }
        for c in 0..schema.corr_length.components() {
            out.lambda.push(extent(&mut labels.iter().filter_map(|l| match l.lambda {
                Some(LambdaLabel::Isotropic(x)) => Some(x),
                Some(LambdaLabel::Anisotropic(v)) => Some(v[c]),
                None => None,
            })));
        }
        out.validate(schema)?;
        Ok(out)
    }

    pub fn validate(&self, schema: &ConditionSchema) -> Result<(), ConditioningError> {
        let check = |field: &str, (min, max): (f64, f64)| {
            if min.is_finite() && max.is_finite() && min <= max {
                Ok(())
            } else {
                Err(ConditioningError::BadRange { field: field.into(), min, max })
            }
        };
        if schema.porosity {
            check("porosity", self.porosity.unwrap_or((f64::NAN, f64::NAN)))?;
        }
        if self.lambda.len() != schema.corr_length.components() {
            return Err(ConditioningError::SchemaMismatch(format!(
                "{} lambda ranges for mode {:?}",
                self.lambda.len(),
                schema.corr_length
            )));
        }
        for &r in &self.lambda {
            check("lambda", r)?;
        }
        Ok(())
    }

    /// Scalar ranges in channel order (porosity, then lambda components).
    fn scalars(&self) -> Vec<(f64, f64)> {
        self.porosity.iter().copied().chain(self.lambda.iter().copied()).collect()
    }
}

/// Schema plus training ranges: everything needed to turn labels into network input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conditioner {
    pub schema: ConditionSchema,
    pub ranges: LabelRange,
}

impl Conditioner {
    pub fn new(schema: ConditionSchema, ranges: LabelRange) -> Result<Self, ConditioningError> {
        ranges.validate(&schema)?;
        Ok(Self { schema, ranges })
    }

    pub fn dim(&self) -> usize {
        self.schema.dim()
    }

    /// Encoded label vector (applies the schema's scalar encoding).
    pub fn vector(&self, label: &ConditionLabel) -> Result<Vec<f32>, ConditioningError> {
        let mut v = label.to_vector(&self.schema)?;
        if self.schema.encoding == LabelEncoding::MinMax {
            let k = self.schema.rock_types;
            for (slot, (min, max)) in v[k..].iter_mut().zip(self.ranges.scalars()) {
                *slot = if max > min { 2.0 * (*slot - min) / (max - min) - 1.0 } else { 0.0 };
            }
        }
        Ok(v.into_iter().map(|x| x as f32).collect())
    }

    /// `[N, d]` float tensor of encoded label vectors.
    pub fn label_matrix(&self, labels: &[ConditionLabel]) -> Result<Tensor, ConditioningError> {
        let d = self.dim();
        let mut flat = Vec::with_capacity(labels.len() * d);
        for l in labels {
            flat.extend(self.vector(l)?);
        }
        Ok(Tensor::from_slice(&flat).view([labels.len() as i64, d as i64]))
    }

    /// Generator-side labels: scalars uniform on the training range, rock
    /// types uniform over the categories.
    pub fn sample_labels<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<ConditionLabel> {
        sample_generator_labels(&self.schema, &self.ranges, batch, rng)
    }
}

pub fn sample_generator_labels<R: Rng + ?Sized>(
    schema: &ConditionSchema,
    ranges: &LabelRange,
    batch: usize,
    rng: &mut R,
) -> Vec<ConditionLabel> {
    fn draw<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
        if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        }
    }
    for &(lo, hi) in ranges.porosity.iter().chain(&ranges.lambda) {
        if lo == hi {
            log::warn!("label range collapsed to {lo}; generator labels are constant");
        }
    }
    (0..batch)
        .map(|_| {
            let mut l = ConditionLabel::default();
            if schema.rock_types > 0 {
                l.rock_type = Some(rng.random_range(0..schema.rock_types));
            }
            if schema.porosity {
                l.porosity = Some(draw(rng, ranges.porosity.unwrap_or((0.0, 0.0))));
            }
            l.lambda = match schema.corr_length {
                CorrLengthMode::Off => None,
                CorrLengthMode::Isotropic => Some(LambdaLabel::Isotropic(draw(rng, ranges.lambda[0]))),
                CorrLengthMode::Anisotropic => Some(LambdaLabel::Anisotropic([
                    draw(rng, ranges.lambda[0]),
                    draw(rng, ranges.lambda[1]),
                    draw(rng, ranges.lambda[2]),
                ])),
            };
            l
        })
        .collect()
}

/// Broadcasts `[N, d]` label vectors to constant `[N, d, e, e, e]` channels.
pub fn encode_label_grid(labels: &Tensor, edge: i64) -> Result<Tensor, ConditioningError> {
    let size = labels.size();
    if size.len() != 2 {
        return Err(ConditioningError::Shape(format!("labels must be [N, d], got {size:?}")));
    }
    let (n, d) = (size[0], size[1]);
    Ok(labels.view([n, d, 1, 1, 1]).expand([n, d, edge, edge, edge], false))
}

/// Concatenates a single-channel image-like batch with its broadcast labels
/// along the channel axis. Used for the generator input (`z ⊕ c`) and the
/// discriminator input (`Y ⊕ c`).
pub fn make_latent(noise: &Tensor, labels: &Tensor) -> Result<Tensor, ConditioningError> {
    let ns = noise.size();
    let ls = labels.size();
    if ns.len() != 5 || ns[1] != 1 || ns[2] != ns[3] || ns[3] != ns[4] {
        return Err(ConditioningError::Shape(format!("noise must be [N, 1, e, e, e], got {ns:?}")));
    }
    if ls.len() != 2 || ls[0] != ns[0] {
        return Err(ConditioningError::Shape(format!(
            "labels {ls:?} incompatible with batch of {}",
            ns[0]
        )));
    }
    if ls[1] == 0 {
        return Ok(noise.shallow_clone());
    }
    let grid = encode_label_grid(&labels.to_kind(noise.kind()), ns[2])?;
    Ok(Tensor::cat(&[noise, &grid], 1))
}

/// A sample that could not be labeled.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExcludedSample {
    pub index: usize,
    pub reason: String,
}

/// Measures porosity (always) and correlation lengths (per schema) of every
/// sample; samples whose fit fails are dropped and reported.
pub fn compute_labels(
    ds: &SubvolumeDataset,
    schema: &ConditionSchema,
) -> Result<(SubvolumeDataset, Vec<ExcludedSample>), ConditioningError> {
    let results: Vec<Result<SampleLabel, String>> = (0..ds.len())
        .into_par_iter()
        .map(|i| {
            let v = ds.sample(i);
            let mut l = ds.entries()[i].label.clone();
            l.porosity = Some(porosity(&v).map_err(|e| e.to_string())?);
            let fit = |axis| correlation_length(&v, axis).map_err(|e: FitError| e.to_string());
            match schema.corr_length {
                CorrLengthMode::Off => {}
                CorrLengthMode::Isotropic => l.lambda_iso = Some(fit(CurveAxis::Isotropic)?),
                CorrLengthMode::Anisotropic => {
                    l.lambda = Some([fit(CurveAxis::X)?, fit(CurveAxis::Y)?, fit(CurveAxis::Z)?]);
                }
            }
            Ok(l)
        })
        .collect();

    let mut kept = Vec::with_capacity(ds.len());
    let mut labels = Vec::with_capacity(ds.len());
    let mut excluded = Vec::new();
    for (index, r) in results.into_iter().enumerate() {
        match r {
            Ok(l) => {
                kept.push(index);
                labels.push(l);
            }
            Err(reason) => {
                log::warn!("sample {index} excluded from labeling: {reason}");
                excluded.push(ExcludedSample { index, reason });
            }
        }
    }
    let mut out = ds.select(&kept);
    for (i, l) in labels.into_iter().enumerate() {
        *out.label_mut(i) = l;
    }
    Ok((out, excluded))
}

/// Standard deviation of a sample's three axial correlation lengths.
pub fn anisotropy_spread(lambda: [f64; 3]) -> f64 {
    population_std(&lambda)
}

/// Keeps the `keep` samples whose axial correlation lengths differ most,
/// ranked by descending standard deviation (ties keep dataset order).
pub fn select_anisotropic(ds: &SubvolumeDataset, keep: usize) -> Result<SubvolumeDataset, ConditioningError> {
    if keep > ds.len() {
        return Err(ConditioningError::KeepTooLarge { keep, len: ds.len() });
    }
    let spreads: Vec<f64> = ds
        .labels()
        .map(|l| {
            l.lambda
                .map(anisotropy_spread)
                .ok_or_else(|| ConditioningError::SchemaMismatch("sample lacks axial lambda".into()))
        })
        .collect::<Result<_, _>>()?;
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.sort_by(|&a, &b| spreads[b].total_cmp(&spreads[a]));
    order.truncate(keep);
    Ok(ds.select(&order))
}

/// Spatial mean of each channel of a `[N, C, e, e, e]` grid, in f64.
pub fn channel_means(grid: &Tensor) -> Tensor {
    grid.to_kind(Kind::Double).mean_dim([2i64, 3, 4].as_slice(), false, Kind::Double)
}
