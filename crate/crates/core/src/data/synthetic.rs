//! Truncated Gaussian random media with prescribed porosity and exponential
//! covariance. Used as ground-truth training data: porosity and correlation
//! length are known by construction.

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{DataError, SubvolumeDataset};
use crate::volume::VoxelVolume;

/// In-place 3-D FFT over an x-fastest complex grid (unnormalized in both directions).
fn fft3d(data: &mut [Complex<f64>], dims: [usize; 3], inverse: bool) {
    let mut planner = FftPlanner::new();
    let [nx, ny, nz] = dims;
    let plan = |n: usize, planner: &mut FftPlanner<f64>| {
        if inverse {
            planner.plan_fft_inverse(n)
        } else {
            planner.plan_fft_forward(n)
        }
    };

    let fx = plan(nx, &mut planner);
    for row in data.chunks_exact_mut(nx) {
        fx.process(row);
    }

    let fy = plan(ny, &mut planner);
    let mut line = vec![Complex::new(0.0, 0.0); ny];
    for z in 0..nz {
        for x in 0..nx {
            for y in 0..ny {
                line[y] = data[x + nx * (y + ny * z)];
            }
            fy.process(&mut line);
            for y in 0..ny {
                data[x + nx * (y + ny * z)] = line[y];
            }
        }
    }

    let fz = plan(nz, &mut planner);
    let mut line = vec![Complex::new(0.0, 0.0); nz];
    let plane = nx * ny;
    for p in 0..plane {
        for z in 0..nz {
            line[z] = data[p + plane * z];
        }
        fz.process(&mut line);
        for z in 0..nz {
            data[p + plane * z] = line[z];
        }
    }
}

/// Stationary Gaussian field with covariance
/// `exp(-sqrt((dx/lx)^2 + (dy/ly)^2 + (dz/lz)^2))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianFieldSpec {
    pub dims: [usize; 3],
    /// Covariance range per axis, voxels.
    pub correlation_length: [f64; 3],
}

impl GaussianFieldSpec {
    /// Periodic grid large enough that wrap-around covariance is below `exp(-5)`.
    fn padded_dims(&self) -> [usize; 3] {
        let mut out = self.dims;
        for a in 0..3 {
            out[a] += (5.0 * self.correlation_length[a]).ceil() as usize;
        }
        out
    }

    /// Square root of the covariance spectrum on the padded grid.
    pub fn spectrum(&self) -> Result<FieldSpectrum, DataError> {
        if self.correlation_length.iter().any(|&l| !(l.is_finite() && l > 0.0)) {
            return Err(DataError::InvalidArgument(format!(
                "correlation length must be positive, got {:?}",
                self.correlation_length
            )));
        }
        let dims = self.padded_dims();
        let [px, py, pz] = dims;
        let mut cov = Vec::with_capacity(px * py * pz);
        let wrap = |i: usize, n: usize| i.min(n - i) as f64;
        let [lx, ly, lz] = self.correlation_length;
        for z in 0..pz {
            for y in 0..py {
                for x in 0..px {
                    let d = ((wrap(x, px) / lx).powi(2) + (wrap(y, py) / ly).powi(2) + (wrap(z, pz) / lz).powi(2)).sqrt();
                    cov.push(Complex::new((-d).exp(), 0.0));
                }
            }
        }
        fft3d(&mut cov, dims, false);
        let amplitude = cov.iter().map(|c| c.re.max(0.0).sqrt()).collect();
        Ok(FieldSpectrum { spec: self.clone(), padded: dims, amplitude })
    }
}

/// Precomputed spectral filter for repeated draws with the same covariance.
#[derive(Debug, Clone)]
pub struct FieldSpectrum {
    spec: GaussianFieldSpec,
    padded: [usize; 3],
    amplitude: Vec<f64>,
}

impl FieldSpectrum {
    /// One realization on `spec.dims`, x-fastest, standardized to zero mean
    /// and unit variance.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut grid: Vec<Complex<f64>> = (0..self.amplitude.len())
            .map(|_| Complex::new(rng.sample(StandardNormal), 0.0))
            .collect();
        fft3d(&mut grid, self.padded, false);
        for (g, a) in grid.iter_mut().zip(&self.amplitude) {
            *g *= a;
        }
        fft3d(&mut grid, self.padded, true);

        let [px, py, _] = self.padded;
        let [nx, ny, nz] = self.spec.dims;
        let mut out = Vec::with_capacity(nx * ny * nz);
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    out.push(grid[x + px * (y + py * z)].re);
                }
            }
        }
        let n = out.len() as f64;
        let mean = out.iter().sum::<f64>() / n;
        let sd = (out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-300);
        out.iter_mut().for_each(|v| *v = (*v - mean) / sd);
        out
    }
}

/// Marks the `round(porosity * N)` lowest field values as pore, so the
/// porosity of the result is exact up to that rounding.
pub fn truncate_by_rank(field: &[f64], dims: [usize; 3], porosity: f64, voxel_size: f64) -> Result<VoxelVolume, DataError> {
    if !(0.0..=1.0).contains(&porosity) {
        return Err(DataError::InvalidArgument(format!("porosity {porosity} outside [0, 1]")));
    }
    let n = field.len();
    let pores = (porosity * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| field[a].total_cmp(&field[b]));
    let mut data = vec![0.0f32; n];
    for &i in &order[..pores] {
        data[i] = 1.0;
    }
    Ok(VoxelVolume::binary(dims, data, voxel_size)?)
}

/// Truncated Gaussian medium generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedGaussian {
    pub dims: [usize; 3],
    pub correlation_length: [f64; 3],
    pub porosity: f64,
    #[serde(default = "default_voxel_size")]
    pub voxel_size: f64,
}

fn default_voxel_size() -> f64 {
    1.0
}

impl TruncatedGaussian {
    pub fn isotropic(edge: usize, correlation_length: f64, porosity: f64) -> Self {
        Self { dims: [edge; 3], correlation_length: [correlation_length; 3], porosity, voxel_size: 1.0 }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<VoxelVolume, DataError> {
        let spectrum = GaussianFieldSpec { dims: self.dims, correlation_length: self.correlation_length }.spectrum()?;
        self.sample_with(&spectrum, rng)
    }

    /// Draw reusing a spectrum built for the same dims and correlation length.
    pub fn sample_with<R: Rng + ?Sized>(&self, spectrum: &FieldSpectrum, rng: &mut R) -> Result<VoxelVolume, DataError> {
        let field = spectrum.sample(rng);
        truncate_by_rank(&field, self.dims, self.porosity, self.voxel_size)
    }
}

/// A family of independent synthetic samples whose porosity and correlation
/// length are drawn uniformly from the given ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCohort {
    pub count: usize,
    pub edge: usize,
    pub porosity: (f64, f64),
    pub correlation_length: (f64, f64),
    /// Per-axis multipliers on the drawn correlation length.
    #[serde(default = "isotropic_factors")]
    pub anisotropy: [f64; 3],
    #[serde(default = "default_voxel_size")]
    pub voxel_size: f64,
}

fn isotropic_factors() -> [f64; 3] {
    [1.0; 3]
}

/// Construction parameters of one synthetic sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub porosity: f64,
    pub correlation_length: [f64; 3],
}

impl SyntheticCohort {
    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<(VoxelVolume, SyntheticParams)>, DataError> {
        let uniform = |rng: &mut R, (lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let fixed_length = self.correlation_length.0 == self.correlation_length.1;
        let mut cached: Option<FieldSpectrum> = None;
        let mut out = Vec::with_capacity(self.count);
        for _ in 0..self.count {
            let phi = uniform(rng, self.porosity);
            let ell = uniform(rng, self.correlation_length);
            let correlation_length = self.anisotropy.map(|f| f * ell);
            let gen = TruncatedGaussian { dims: [self.edge; 3], correlation_length, porosity: phi, voxel_size: self.voxel_size };
            let volume = if fixed_length {
                if cached.is_none() {
                    cached = Some(GaussianFieldSpec { dims: gen.dims, correlation_length }.spectrum()?);
                }
                gen.sample_with(cached.as_ref().expect("just set"), rng)?
            } else {
                gen.sample(rng)?
            };
            out.push((volume, SyntheticParams { porosity: phi, correlation_length }));
        }
        Ok(out)
    }
}

/// Dataset of synthetic samples labelled with their construction porosity and
/// correlation lengths (isotropic length is the axial mean).
pub fn synthetic_dataset(name: &str, samples: Vec<(VoxelVolume, SyntheticParams)>) -> Result<SubvolumeDataset, DataError> {
    let (volumes, params): (Vec<_>, Vec<_>) = samples.into_iter().unzip();
    let mut ds = SubvolumeDataset::from_volumes(name, volumes, None)?;
    for (i, p) in params.iter().enumerate() {
        let label = ds.label_mut(i);
        label.porosity = Some(p.porosity);
        label.lambda = Some(p.correlation_length);
        label.lambda_iso = Some(p.correlation_length.iter().sum::<f64>() / 3.0);
    }
    Ok(ds)
}
