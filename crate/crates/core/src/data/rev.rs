//! Representative-elementary-volume analysis: porosity spread of random
//! cubic crops as a function of crop edge.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::moments::porosity;
use crate::stats::{coefficient_of_variation, mean};
use crate::volume::VoxelVolume;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevRow {
    pub edge: usize,
    pub porosities: Vec<f64>,
}

impl RevRow {
    pub fn mean(&self) -> f64 {
        mean(&self.porosities)
    }

    pub fn cv(&self) -> f64 {
        coefficient_of_variation(&self.porosities)
    }
}

/// Porosity of `samples_per_edge` uniformly positioned crops per edge length.
pub fn rev_curve(
    v: &VoxelVolume,
    edge_lengths: &[usize],
    samples_per_edge: usize,
    seed: u64,
) -> Result<Vec<RevRow>, DataError> {
    v.require_binary()?;
    let dims = v.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(edge_lengths.len());
    for &edge in edge_lengths {
        if edge == 0 {
            return Err(DataError::InvalidArgument("crop edge must be >= 1".into()));
        }
        if let Some(&extent) = dims.iter().find(|&&n| edge > n) {
            return Err(DataError::EdgeTooLarge { edge, extent });
        }
        let mut porosities = Vec::with_capacity(samples_per_edge);
        for _ in 0..samples_per_edge {
            let offset = dims.map(|n| rng.random_range(0..=n - edge));
            porosities.push(porosity(&v.crop(offset, edge)?)?);
        }
        rows.push(RevRow { edge, porosities });
    }
    Ok(rows)
}
