//! Exponential correlation-length fitting, `R(r) = exp(-r / lambda)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::moments::{two_point_correlation, CorrelationCurve, CurveAxis, MomentError};
use crate::volume::{Axis, VoxelVolume};

#[derive(Debug, Error)]
pub enum FitError {
    #[error("fit window {first}..={last} holds fewer than 3 lags of a curve with {len} lags")]
    TooFewLags { first: usize, last: usize, len: usize },
    #[error("correlation curve is identically zero")]
    ZeroCurve,
    #[error("correlation curve is not normalized: R(0) = {0}")]
    NotNormalized(f64),
    #[error("least squares did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error(transparent)]
    Moment(#[from] MomentError),
}

/// Inclusive lag window used by the fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitWindow {
    pub first: usize,
    pub last: usize,
}

/// Correlations below this value are treated as noise floor when choosing a window.
pub const TAIL_CUTOFF: f64 = 0.05;
pub const MAX_ITERATIONS: usize = 200;

impl FitWindow {
    pub fn new(first: usize, last: usize) -> Self {
        Self { first, last }
    }

    /// Every lag of the curve.
    pub fn full(curve: &CorrelationCurve) -> Self {
        Self { first: 0, last: curve.r_max() }
    }

    /// Lags `0..=min(edge / 4, first lag with R < 0.05)`, clipped to the curve.
    pub fn auto(curve: &CorrelationCurve, edge: usize) -> Self {
        let tail = curve
            .values
            .iter()
            .position(|&r| r < TAIL_CUTOFF)
            .unwrap_or(curve.r_max());
        let last = (edge / 4).min(tail).min(curve.r_max());
        Self { first: 0, last }
    }
}

/// Result of a correlation-length fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationFit {
    pub lambda: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// Initial guess: the lag where the curve first falls below `1/e`, linearly
/// interpolated between neighbouring lags.
fn initial_lambda(values: &[f64]) -> f64 {
    let target = (-1.0f64).exp();
    for r in 1..values.len() {
        if values[r] < target {
            let (a, b) = (values[r - 1], values[r]);
            let frac = if a > b { (a - target) / (a - b) } else { 0.0 };
            return ((r - 1) as f64 + frac).max(0.1);
        }
    }
    // Slow decay: invert the model at the last informative lag.
    for r in (1..values.len()).rev() {
        if values[r] > 0.0 && values[r] < 1.0 {
            return -(r as f64) / values[r].ln();
        }
    }
    values.len() as f64
}

/// Least-squares fit of `exp(-r / lambda)` to the curve over `window`.
///
/// Levenberg-Marquardt on `theta = ln(lambda)`, which keeps `lambda > 0`.
pub fn fit_correlation_length(
    curve: &CorrelationCurve,
    window: FitWindow,
) -> Result<CorrelationFit, FitError> {
    let values = &curve.values;
    if values.iter().all(|&v| v == 0.0) {
        return Err(FitError::ZeroCurve);
    }
    if (values[0] - 1.0).abs() > 1e-9 {
        return Err(FitError::NotNormalized(values[0]));
    }
    let last = window.last.min(curve.r_max());
    if window.first > last || last - window.first + 1 < 3 {
        return Err(FitError::TooFewLags { first: window.first, last: window.last, len: values.len() });
    }
    let pts: Vec<(f64, f64)> = (window.first..=last).map(|r| (r as f64, values[r])).collect();

    let cost = |theta: f64| -> f64 {
        let lambda = theta.exp();
        pts.iter().map(|&(r, y)| ((-r / lambda).exp() - y).powi(2)).sum()
    };

    let mut theta = initial_lambda(&values[..=last]).ln();
    let mut current = cost(theta);
    let mut damping = 1e-3;
    for iteration in 1..=MAX_ITERATIONS {
        let lambda = theta.exp();
        let (mut jtj, mut jtr) = (0.0, 0.0);
        for &(r, y) in &pts {
            let m = (-r / lambda).exp();
            let j = m * r / lambda;
            jtj += j * j;
            jtr += j * (m - y);
        }
        if jtj == 0.0 {
            break;
        }
        let mut accepted = false;
        for _ in 0..50 {
            let step = -jtr / (jtj * (1.0 + damping));
            let trial = theta + step;
            let trial_cost = cost(trial);
            if trial_cost <= current {
                let converged = step.abs() < 1e-12 || (current - trial_cost) <= 1e-15 * current.max(1e-300);
                theta = trial;
                current = trial_cost;
                damping = (damping * 0.3).max(1e-12);
                accepted = true;
                if converged {
                    return Ok(CorrelationFit { lambda: theta.exp(), residual: current, iterations: iteration });
                }
                break;
            }
            damping *= 10.0;
        }
        if !accepted {
            // No descent direction left: the gradient vanished to working precision.
            return Ok(CorrelationFit { lambda: theta.exp(), residual: current, iterations: iteration });
        }
    }
    Err(FitError::NonConvergence { iterations: MAX_ITERATIONS, residual: current })
}

/// Default lag range for measuring curves on a volume: a quarter of the
/// shortest edge (the automatic fit window never looks further), at least 2.
pub fn default_r_max(v: &VoxelVolume) -> usize {
    let min_extent = v.dims().into_iter().min().unwrap_or(1);
    (min_extent / 4).max(2).min(min_extent.saturating_sub(1))
}

/// Correlation length along one axis (or of the axis-averaged curve), using
/// the automatic fit window.
pub fn correlation_length(v: &VoxelVolume, axis: CurveAxis) -> Result<f64, FitError> {
    let r_max = default_r_max(v);
    let curve = two_point_correlation(v, r_max, axis)?;
    let edge = match axis {
        CurveAxis::X => v.extent(Axis::X),
        CurveAxis::Y => v.extent(Axis::Y),
        CurveAxis::Z => v.extent(Axis::Z),
        CurveAxis::Isotropic => v.dims().into_iter().min().unwrap_or(1),
    };
    let window = FitWindow::auto(&curve, edge);
    Ok(fit_correlation_length(&curve, window)?.lambda)
}

/// `[lambda_x, lambda_y, lambda_z]` for a volume.
pub fn axial_correlation_lengths(v: &VoxelVolume) -> Result<[f64; 3], FitError> {
    Ok([
        correlation_length(v, CurveAxis::X)?,
        correlation_length(v, CurveAxis::Y)?,
        correlation_length(v, CurveAxis::Z)?,
    ])
}
