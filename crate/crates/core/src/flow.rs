//! Single-phase D3Q19 lattice Boltzmann permeability and pore percolation.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::{Axis, VolumeError, VoxelVolume};

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("pore space does not percolate along {0}")]
    NonPercolating(Axis),
    #[error("relaxation time {0} must exceed 0.5")]
    InvalidTau(f64),
    #[error("body force must be positive and finite, got {0}")]
    InvalidForce(f64),
    #[error("solver diverged at step {0}")]
    Diverged(usize),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Square metres per darcy.
pub const DARCY_M2: f64 = 9.869233e-13;
/// Steps between convergence checks.
pub const CHECK_INTERVAL: usize = 100;

const Q: usize = 19;
const C: [[i32; 3]; Q] = [
    [0, 0, 0],
    [1, 0, 0],
    [-1, 0, 0],
    [0, 1, 0],
    [0, -1, 0],
    [0, 0, 1],
    [0, 0, -1],
    [1, 1, 0],
    [-1, -1, 0],
    [1, -1, 0],
    [-1, 1, 0],
    [1, 0, 1],
    [-1, 0, -1],
    [1, 0, -1],
    [-1, 0, 1],
    [0, 1, 1],
    [0, -1, -1],
    [0, 1, -1],
    [0, -1, 1],
];
const OPP: [usize; Q] = [0, 2, 1, 4, 3, 6, 5, 8, 7, 10, 9, 12, 11, 14, 13, 16, 15, 18, 17];
const W: [f64; Q] = [
    1.0 / 3.0,
    1.0 / 18.0,
    1.0 / 18.0,
    1.0 / 18.0,
    1.0 / 18.0,
    1.0 / 18.0,
    1.0 / 18.0,
    1.0 / 36.0,
    1.0 / 36.0,
    1.0 / 36.0,
    1.0 / 36.0,
    1.0 / 36.0,
    1.0 / 36.0,
    1.0 / 36.0,
    1.0 / 36.0,
    1.0 / 36.0,
    1.0 / 36.0,
    1.0 / 36.0,
    1.0 / 36.0,
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub tau: f64,
    /// Body-force magnitude along the flow axis (lattice units).
    pub force: f64,
    pub tol: f64,
    pub max_steps: usize,
    /// Mirror the sample along the flow axis before solving.
    pub mirror: bool,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self { tau: 1.0, force: 1e-5, tol: 1e-6, max_steps: 50_000, mirror: true }
    }
}

impl FlowConfig {
    pub fn viscosity(&self) -> f64 {
        (self.tau - 0.5) / 3.0
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        if !(self.tau > 0.5) || !self.tau.is_finite() {
            return Err(FlowError::InvalidTau(self.tau));
        }
        if !(self.force > 0.0) || !self.force.is_finite() {
            return Err(FlowError::InvalidForce(self.force));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowResult {
    pub axis: Axis,
    /// Mean velocity over pore nodes, lattice units.
    pub mean_pore_velocity: f64,
    /// Flux per total cross-section (pore velocity times porosity).
    pub superficial_velocity: f64,
    /// `mean_pore_velocity * nu / g`.
    pub permeability_lattice: f64,
    pub permeability_darcy: f64,
    /// Darcy value from the superficial velocity.
    pub superficial_permeability_darcy: f64,
    pub porosity: f64,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Converts a lattice permeability to darcy for a voxel edge in micrometres.
pub fn lattice_to_darcy(k_lattice: f64, voxel_size_um: f64) -> f64 {
    let dx = voxel_size_um * 1e-6;
    k_lattice * dx * dx / DARCY_M2
}

/// True when pore voxels connect the inlet face to the outlet face along
/// `axis` (6-connectivity, non-periodic).
pub fn percolates(v: &VoxelVolume, axis: Axis) -> Result<bool, VolumeError> {
    v.require_binary()?;
    let dims = v.dims();
    let a = axis.index();
    let n = dims[a];
    let data = v.data();
    let mut seen = vec![false; data.len()];
    let mut queue = VecDeque::new();
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let p = [x, y, z];
                let i = v.index(x, y, z);
                if p[a] == 0 && data[i] == 1.0 {
                    seen[i] = true;
                    queue.push_back(p);
                }
            }
        }
    }
    while let Some(p) = queue.pop_front() {
        if p[a] == n - 1 {
            return Ok(true);
        }
        for d in 0..3 {
            for step in [-1i64, 1] {
                let c = p[d] as i64 + step;
                if c < 0 || c >= dims[d] as i64 {
                    continue;
                }
                let mut q = p;
                q[d] = c as usize;
                let i = v.index(q[0], q[1], q[2]);
                if !seen[i] && data[i] == 1.0 {
                    seen[i] = true;
                    queue.push_back(q);
                }
            }
        }
    }
    Ok(false)
}

/// Sample followed by its mirror image along `axis`.
pub fn mirror_pad(v: &VoxelVolume, axis: Axis) -> VoxelVolume {
    let mut dims = v.dims();
    let a = axis.index();
    let n = dims[a];
    dims[a] *= 2;
    VoxelVolume::from_pore_fn(dims, v.voxel_size(), |x, y, z| {
        let mut p = [x, y, z];
        if p[a] >= n {
            p[a] = 2 * n - 1 - p[a];
        }
        v.get(p[0], p[1], p[2]) == 1.0
    })
    .expect("non-empty dims")
}

/// Lattice state on the pore nodes of a periodic domain.
pub struct LbmSolver {
    tau: f64,
    force: [f64; 3],
    nodes: usize,
    /// Destination slot of each post-collision population (bounce-back folded in).
    target: Vec<u32>,
    f: Vec<f64>,
    next: Vec<f64>,
}

impl LbmSolver {
    /// Solver at rest (unit density) on the pore voxels of `v`.
    pub fn new(v: &VoxelVolume, axis: Axis, cfg: &FlowConfig) -> Result<Self, FlowError> {
        cfg.validate()?;
        v.require_binary()?;
        let dims = v.dims();
        let data = v.data();
        let mut node_of = vec![u32::MAX; data.len()];
        let mut coords = Vec::new();
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let i = v.index(x, y, z);
                    if data[i] == 1.0 {
                        node_of[i] = coords.len() as u32;
                        coords.push([x, y, z]);
                    }
                }
            }
        }
        let nodes = coords.len();
        let mut target = vec![0u32; nodes * Q];
        for (n, p) in coords.iter().enumerate() {
            for q in 0..Q {
                let mut t = [0usize; 3];
                for d in 0..3 {
                    t[d] = (p[d] as i64 + C[q][d] as i64).rem_euclid(dims[d] as i64) as usize;
                }
                let nb = node_of[v.index(t[0], t[1], t[2])];
                target[n * Q + q] = if nb == u32::MAX { (n * Q + OPP[q]) as u32 } else { nb * Q as u32 + q as u32 };
            }
        }
        let f: Vec<f64> = (0..nodes * Q).map(|k| W[k % Q]).collect();
        let mut force = [0.0; 3];
        force[axis.index()] = cfg.force;
        Ok(Self { tau: cfg.tau, force, nodes, target, next: f.clone(), f })
    }

    pub fn fluid_nodes(&self) -> usize {
        self.nodes
    }

    /// Sum of all populations (compensated summation).
    pub fn total_mass(&self) -> f64 {
        let (mut sum, mut carry) = (0.0f64, 0.0f64);
        for &x in &self.f {
            let t = sum + x;
            carry += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
            sum = t;
        }
        sum + carry
    }

    /// Velocity of node `n` including the half-force correction.
    fn velocity(&self, n: usize) -> ([f64; 3], f64) {
        let fs = &self.f[n * Q..(n + 1) * Q];
        let rho: f64 = fs.iter().sum();
        let mut m = [0.0; 3];
        for q in 1..Q {
            for d in 0..3 {
                m[d] += fs[q] * C[q][d] as f64;
            }
        }
        (std::array::from_fn(|d| (m[d] + 0.5 * self.force[d]) / rho), rho)
    }

    /// One collide-and-stream update.
    pub fn step(&mut self) {
        let omega = 1.0 / self.tau;
        let pref = 1.0 - 0.5 * omega;
        let g = self.force;
        for n in 0..self.nodes {
            let (u, rho) = self.velocity(n);
            let uu = u[0] * u[0] + u[1] * u[1] + u[2] * u[2];
            let ug = u[0] * g[0] + u[1] * g[1] + u[2] * g[2];
            let base = n * Q;
            for q in 0..Q {
                let c = C[q];
                let cu = c[0] as f64 * u[0] + c[1] as f64 * u[1] + c[2] as f64 * u[2];
                let cg = c[0] as f64 * g[0] + c[1] as f64 * g[1] + c[2] as f64 * g[2];
                let feq = W[q] * rho * (1.0 + 3.0 * cu + 4.5 * cu * cu - 1.5 * uu);
                let source = pref * W[q] * (3.0 * (cg - ug) + 9.0 * cu * cg);
                let fq = self.f[base + q];
                self.next[self.target[base + q] as usize] = fq - omega * (fq - feq) + source;
            }
        }
        std::mem::swap(&mut self.f, &mut self.next);
    }

    /// Mean velocity component along `axis` over pore nodes.
    pub fn mean_velocity(&self, axis: Axis) -> f64 {
        let a = axis.index();
        (0..self.nodes).map(|n| self.velocity(n).0[a]).sum::<f64>() / self.nodes as f64
    }
}

/// Steady-state permeability along one axis.
pub fn lbm_permeability(v: &VoxelVolume, axis: Axis, cfg: &FlowConfig) -> Result<FlowResult, FlowError> {
    cfg.validate()?;
    if !percolates(v, axis)? {
        return Err(FlowError::NonPercolating(axis));
    }
    let domain = if cfg.mirror { mirror_pad(v, axis) } else { v.clone() };
    let mut solver = LbmSolver::new(&domain, axis, cfg)?;
    let mut previous = 0.0;
    let mut residual = f64::INFINITY;
    let mut steps = 0;
    let mut converged = false;
    while steps < cfg.max_steps {
        let chunk = CHECK_INTERVAL.min(cfg.max_steps - steps);
        for _ in 0..chunk {
            solver.step();
        }
        steps += chunk;
        let u = solver.mean_velocity(axis);
        if !u.is_finite() {
            return Err(FlowError::Diverged(steps));
        }
        residual = if u != 0.0 { ((u - previous) / u).abs() } else { f64::INFINITY };
        previous = u;
        if residual < cfg.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("flow along {axis} not converged after {steps} steps (residual {residual:.3e})");
    }
    let phi = solver.fluid_nodes() as f64 / domain.len() as f64;
    let k = previous * cfg.viscosity() / cfg.force;
    Ok(FlowResult {
        axis,
        mean_pore_velocity: previous,
        superficial_velocity: previous * phi,
        permeability_lattice: k,
        permeability_darcy: lattice_to_darcy(k, v.voxel_size()),
        superficial_permeability_darcy: lattice_to_darcy(k * phi, v.voxel_size()),
        porosity: phi,
        iterations: steps,
        residual,
        converged,
    })
}

/// Per-axis results and their mean lattice permeability.
pub fn permeability_all_axes(v: &VoxelVolume, cfg: &FlowConfig) -> Result<(Vec<FlowResult>, f64), FlowError> {
    let results = Axis::ALL.iter().map(|&a| lbm_permeability(v, a, cfg)).collect::<Result<Vec<_>, _>>()?;
    let mean = results.iter().map(|r| r.permeability_darcy).sum::<f64>() / 3.0;
    Ok((results, mean))
}

/// Parallel-plate channel: flow along x, walls normal to y, aperture `h`.
pub fn plate_channel(h: usize, length: usize) -> VoxelVolume {
    VoxelVolume::from_pore_fn([length, h + 2, 1], 1.0, |_, y, _| y >= 1 && y <= h).expect("non-empty dims")
}
