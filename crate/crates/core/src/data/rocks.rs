use serde::{Deserialize, Serialize};

/// Edge length every source image is resampled to before extraction.
pub const RESAMPLED_EDGE: usize = 250;

/// Provenance of one source rock image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RockSource {
    pub name: String,
    /// Voxels per axis of the original scan.
    pub original_size: usize,
    /// Original voxel edge in micrometres.
    pub original_resolution: f64,
    /// Voxel edge after resampling to [`RESAMPLED_EDGE`].
    pub sample_resolution: f64,
    #[serde(default)]
    pub path: Option<String>,
}

impl RockSource {
    pub fn new(name: &str, original_size: usize, original_resolution: f64) -> Self {
        Self {
            name: name.to_string(),
            original_size,
            original_resolution,
            sample_resolution: resampled_resolution(original_resolution, original_size, RESAMPLED_EDGE),
            path: None,
        }
    }

    /// The five rocks of the reference study, in one-hot order.
    pub fn reference_set() -> Vec<RockSource> {
        vec![
            RockSource::new("Berea", 1000, 2.25),
            RockSource::new("Doddington", 700, 5.40),
            RockSource::new("Estaillades", 650, 3.31),
            RockSource::new("Ketton", 1000, 3.00),
            RockSource::new("Sandy", 512, 3.00),
        ]
    }

    pub fn reference_index(name: &str) -> Option<usize> {
        Self::reference_set()
            .iter()
            .position(|r| r.name.eq_ignore_ascii_case(name))
    }
}

/// Voxel size after resampling an edge of `from_edge` voxels to `to_edge`.
pub fn resampled_resolution(resolution: f64, from_edge: usize, to_edge: usize) -> f64 {
    resolution * from_edge as f64 / to_edge as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_resolutions_match_the_rock_table() {
        let expected = [9.00, 15.12, 8.60, 12.00, 6.14];
        for (rock, want) in RockSource::reference_set().iter().zip(expected) {
            assert!(
                (rock.sample_resolution - want).abs() < 0.01,
                "{}: {} vs {want}",
                rock.name,
                rock.sample_resolution
            );
        }
    }

    #[test]
    fn one_hot_order_is_stable() {
        assert_eq!(RockSource::reference_index("berea"), Some(0));
        assert_eq!(RockSource::reference_index("Sandy"), Some(4));
        assert_eq!(RockSource::reference_index("granite"), None);
    }
}
