//! Progressively growing generator and critic networks.
//!
//! Layers use equalized learning rate: weights are stored as unit normal
//! draws and scaled at run time by `gain / sqrt(fan_in)`. Biases start at 0.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use tch::{Device, Kind, Tensor};
use thiserror::Error;

use crate::volume::VoxelVolume;

/// Number of resolution stages of the full architecture.
pub const MAX_STAGES: usize = 5;
/// Edge of the critic input at stage 1.
pub const BASE_EDGE: usize = 4;
/// Smallest noise-grid edge the generator accepts.
pub const MIN_NOISE_EDGE: usize = 4;
const PN_EPSILON: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum ProGanError {
    #[error("stage {stage} outside 1..={max}")]
    StageOutOfRange { stage: usize, max: usize },
    #[error("network already at its final stage {0}")]
    CannotGrow(usize),
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("input shape {got:?} does not match expected {expected}")]
    Shape { got: Vec<i64>, expected: String },
    #[error("missing parameter {0}")]
    MissingParameter(String),
    #[error(transparent)]
    Tch(#[from] tch::TchError),
}

/// Generator architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    /// Feature width of blocks 1..; its length is the stage count.
    pub widths: Vec<usize>,
    pub leaky_slope: f64,
    pub noise_edge: usize,
    /// Label channels `d` appended to the single noise channel.
    pub label_channels: usize,
}

impl GeneratorSpec {
    pub fn new(widths: Vec<usize>, label_channels: usize) -> Self {
        Self { widths, leaky_slope: 0.2, noise_edge: MIN_NOISE_EDGE, label_channels }
    }

    pub fn default_widths() -> Vec<usize> {
        vec![128, 128, 64, 32, 16]
    }

    pub fn stage_count(&self) -> usize {
        self.widths.len()
    }

    pub fn input_channels(&self) -> usize {
        1 + self.label_channels
    }

    pub fn validate(&self) -> Result<(), ProGanError> {
        validate_widths(&self.widths)?;
        if self.noise_edge < MIN_NOISE_EDGE {
            return Err(ProGanError::InvalidSpec(format!("noise edge {} < {MIN_NOISE_EDGE}", self.noise_edge)));
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return Err(ProGanError::InvalidSpec(format!("leaky slope {}", self.leaky_slope)));
        }
        Ok(())
    }

    /// Output edge for a noise edge at a stage.
    pub fn output_edge(noise_edge: usize, stage: usize) -> usize {
        noise_edge << (stage - 1)
    }

    /// Parameters of block `k` (1-based) including its bias.
    pub fn block_parameters(&self, k: usize) -> usize {
        let w = self.widths[k - 1];
        let c_in = if k == 1 { self.input_channels() } else { self.widths[k - 2] };
        let kernel = if k == 1 { 1 } else { 27 };
        c_in * w * kernel + w
    }

    /// Parameters of the 1-voxel output projection after block `k`.
    pub fn to_data_parameters(&self, k: usize) -> usize {
        self.widths[k - 1] + 1
    }

    /// Total parameters of a generator grown to `stage`.
    pub fn count_parameters(&self, stage: usize) -> Result<usize, ProGanError> {
        self.validate()?;
        check_stage(stage, self.stage_count())?;
        Ok((1..=stage).map(|k| self.block_parameters(k) + self.to_data_parameters(k)).sum())
    }
}

/// Critic architecture; mirrors the generator widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub widths: Vec<usize>,
    pub leaky_slope: f64,
    pub label_channels: usize,
}

impl DiscriminatorSpec {
    pub fn mirror(g: &GeneratorSpec) -> Self {
        Self { widths: g.widths.clone(), leaky_slope: g.leaky_slope, label_channels: g.label_channels }
    }

    pub fn stage_count(&self) -> usize {
        self.widths.len()
    }

    pub fn input_channels(&self) -> usize {
        1 + self.label_channels
    }

    pub fn validate(&self) -> Result<(), ProGanError> {
        validate_widths(&self.widths)
    }

    /// Input edge at `stage`.
    pub fn input_edge(stage: usize) -> usize {
        BASE_EDGE << (stage - 1)
    }

    fn block_out(&self, k: usize) -> usize {
        self.widths[k.saturating_sub(2)]
    }

    pub fn from_data_parameters(&self, k: usize) -> usize {
        self.input_channels() * self.widths[k - 1] + self.widths[k - 1]
    }

    pub fn block_parameters(&self, k: usize) -> usize {
        self.widths[k - 1] * self.block_out(k) * 27 + self.block_out(k)
    }

    pub fn head_parameters(&self) -> usize {
        self.widths[0] * 8 + 1
    }

    pub fn count_parameters(&self, stage: usize) -> Result<usize, ProGanError> {
        self.validate()?;
        check_stage(stage, self.stage_count())?;
        let body: usize = (1..=stage).map(|k| self.from_data_parameters(k) + self.block_parameters(k)).sum();
        Ok(body + self.head_parameters())
    }
}

fn validate_widths(widths: &[usize]) -> Result<(), ProGanError> {
    if widths.is_empty() || widths.len() > MAX_STAGES {
        return Err(ProGanError::InvalidSpec(format!("{} stages; expected 1..={MAX_STAGES}", widths.len())));
    }
    if widths.contains(&0) {
        return Err(ProGanError::InvalidSpec("zero block width".into()));
    }
    Ok(())
}

fn check_stage(stage: usize, max: usize) -> Result<(), ProGanError> {
    if stage == 0 || stage > max {
        Err(ProGanError::StageOutOfRange { stage, max })
    } else {
        Ok(())
    }
}

/// Training stage and fade-in weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StagePhase {
    pub stage: usize,
    pub alpha: f64,
}

impl StagePhase {
    pub fn new(stage: usize, alpha: f64) -> Self {
        Self { stage, alpha: alpha.clamp(0.0, 1.0) }
    }

    pub fn settled(stage: usize) -> Self {
        Self { stage, alpha: 1.0 }
    }

    /// Next stage with the fade-in restarted.
    pub fn grow(self, max: usize) -> Result<Self, ProGanError> {
        if self.stage >= max {
            return Err(ProGanError::CannotGrow(self.stage));
        }
        Ok(Self { stage: self.stage + 1, alpha: 0.0 })
    }

    pub fn is_fading(&self) -> bool {
        self.stage > 1 && self.alpha < 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Conv { stride: i64, padding: i64 },
    Deconv,
    Linear,
}

#[derive(Debug)]
struct EqLayer {
    name: String,
    op: Op,
    weight: Tensor,
    bias: Tensor,
    scale: f64,
}

impl EqLayer {
    fn new<R: Rng + ?Sized>(name: String, op: Op, shape: &[i64], fan_in: usize, gain: f64, kind: Kind, rng: &mut R) -> Self {
        let out = match op {
            Op::Deconv => shape[1],
            _ => shape[0],
        };
        Self {
            name,
            op,
            weight: normal_tensor(shape, kind, rng).set_requires_grad(true),
            bias: Tensor::zeros([out], (kind, Device::Cpu)).set_requires_grad(true),
            scale: gain / (fan_in as f64).sqrt(),
        }
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        let w = &self.weight * self.scale;
        match self.op {
            Op::Conv { stride, padding } => x.conv3d(&w, Some(&self.bias), [stride; 3], [padding; 3], [1; 3], 1),
            Op::Deconv => x.conv_transpose3d(&w, Some(&self.bias), [2; 3], [1; 3], [1; 3], 1, [1; 3]),
            Op::Linear => x.linear(&w, Some(&self.bias)),
        }
    }

    fn push_named<'a>(&'a self, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{}.weight", self.name), &self.weight));
        out.push((format!("{}.bias", self.name), &self.bias));
    }
}

fn normal_tensor<R: Rng + ?Sized>(shape: &[i64], kind: Kind, rng: &mut R) -> Tensor {
    let n: i64 = shape.iter().product();
    let values: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::from_slice(&values).view(shape).to_kind(kind)
}

/// Unit normal tensor from a seeded generator, so draws are reproducible
/// independently of the torch global state.
pub fn standard_normal<R: Rng + ?Sized>(shape: &[i64], kind: Kind, rng: &mut R) -> Tensor {
    normal_tensor(shape, kind, rng)
}

fn pixel_norm(x: &Tensor) -> Tensor {
    x / (x.square().mean_dim(1, true, x.kind()) + PN_EPSILON).sqrt()
}

fn upsample_nearest(x: &Tensor) -> Tensor {
    let s = x.size();
    x.upsample_nearest3d([s[2] * 2, s[3] * 2, s[4] * 2], None, None, None)
}

fn blend(alpha: f64, new: Tensor, old: impl FnOnce() -> Tensor) -> Tensor {
    if alpha >= 1.0 {
        new
    } else if alpha <= 0.0 {
        old()
    } else {
        new * alpha + old() * (1.0 - alpha)
    }
}

/// Named parameter enumeration shared by both networks.
pub trait Parameterized {
    fn named_parameters(&self) -> Vec<(String, &Tensor)>;

    fn parameter_count(&self) -> usize {
        self.named_parameters().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Overwrites parameter values from a name-to-tensor list.
    fn load_parameters(&self, values: &[(String, Tensor)]) -> Result<(), ProGanError> {
        for (name, p) in self.named_parameters() {
            let (_, v) = values
                .iter()
                .find(|(n, _)| *n == name)
                .ok_or_else(|| ProGanError::MissingParameter(name.clone()))?;
            if v.size() != p.size() {
                return Err(ProGanError::Shape { got: v.size(), expected: format!("{name}: {:?}", p.size()) });
            }
            tch::no_grad(|| {
                let mut p = p.shallow_clone();
                p.copy_(v)
            });
        }
        Ok(())
    }

    /// Detached copies of every parameter.
    fn snapshot(&self) -> Vec<(String, Tensor)> {
        self.named_parameters().into_iter().map(|(n, t)| (n, t.detach().copy())).collect()
    }
}

#[derive(Debug)]
pub struct Generator {
    spec: GeneratorSpec,
    kind: Kind,
    blocks: Vec<EqLayer>,
    to_data: Vec<EqLayer>,
}

impl Generator {
    /// A generator grown to `stage` with freshly initialized parameters.
    pub fn new<R: Rng + ?Sized>(spec: GeneratorSpec, stage: usize, kind: Kind, rng: &mut R) -> Result<Self, ProGanError> {
        spec.validate()?;
        check_stage(stage, spec.stage_count())?;
        let mut g = Self { spec, kind, blocks: Vec::new(), to_data: Vec::new() };
        for _ in 0..stage {
            g.add_stage(rng);
        }
        Ok(g)
    }

    fn add_stage<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let k = self.blocks.len() + 1;
        let w = self.spec.widths[k - 1] as i64;
        let sqrt2 = std::f64::consts::SQRT_2;
        let block = if k == 1 {
            let c_in = self.spec.input_channels();
            EqLayer::new(format!("g.block{k}"), Op::Conv { stride: 1, padding: 0 }, &[w, c_in as i64, 1, 1, 1], c_in, sqrt2, self.kind, rng)
        } else {
            let c_in = self.spec.widths[k - 2];
            EqLayer::new(format!("g.block{k}"), Op::Deconv, &[c_in as i64, w, 3, 3, 3], c_in * 27, sqrt2, self.kind, rng)
        };
        let to_data = EqLayer::new(format!("g.to_data{k}"), Op::Conv { stride: 1, padding: 0 }, &[1, w, 1, 1, 1], w as usize, 1.0, self.kind, rng);
        self.blocks.push(block);
        self.to_data.push(to_data);
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    pub fn stage(&self) -> usize {
        self.blocks.len()
    }

    /// Adds the next block; existing parameters are untouched.
    pub fn grow<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<(), ProGanError> {
        if self.stage() >= self.spec.stage_count() {
            return Err(ProGanError::CannotGrow(self.stage()));
        }
        self.add_stage(rng);
        Ok(())
    }

    /// Maps `[N, 1 + d, e, e, e]` latents to `[N, 1, e·2^(s-1), ...]` volumes in `[-1, 1]`.
    pub fn forward(&self, latent: &Tensor, alpha: f64) -> Result<Tensor, ProGanError> {
        let s = latent.size();
        let c = self.spec.input_channels() as i64;
        if s.len() != 5 || s[1] != c || s[2] < MIN_NOISE_EDGE as i64 || s[2] != s[3] || s[3] != s[4] {
            return Err(ProGanError::Shape { got: s, expected: format!("[N, {c}, e, e, e] with e >= {MIN_NOISE_EDGE}") });
        }
        let slope = self.spec.leaky_slope;
        let act = |x: Tensor| pixel_norm(&leaky_relu(&x, slope));
        let stage = self.stage();
        let mut x = act(self.blocks[0].forward(&latent.to_kind(self.kind)));
        let mut prev = None;
        for k in 1..stage {
            if k == stage - 1 {
                prev = Some(x.shallow_clone());
            }
            x = act(self.blocks[k].forward(&x));
        }
        let new = self.to_data[stage - 1].forward(&x).tanh();
        Ok(match prev {
            Some(prev) => blend(alpha, new, || upsample_nearest(&self.to_data[stage - 2].forward(&prev).tanh())),
            None => new,
        })
    }
}

impl Parameterized for Generator {
    fn named_parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (b, t) in self.blocks.iter().zip(&self.to_data) {
            b.push_named(&mut out);
            t.push_named(&mut out);
        }
        out
    }
}

#[derive(Debug)]
pub struct Discriminator {
    spec: DiscriminatorSpec,
    kind: Kind,
    from_data: Vec<EqLayer>,
    blocks: Vec<EqLayer>,
    head: EqLayer,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(spec: DiscriminatorSpec, stage: usize, kind: Kind, rng: &mut R) -> Result<Self, ProGanError> {
        spec.validate()?;
        check_stage(stage, spec.stage_count())?;
        let w1 = spec.widths[0];
        let head = EqLayer::new("d.head".into(), Op::Linear, &[1, (w1 * 8) as i64], w1 * 8, 1.0, kind, rng);
        let mut d = Self { spec, kind, from_data: Vec::new(), blocks: Vec::new(), head };
        for _ in 0..stage {
            d.add_stage(rng);
        }
        Ok(d)
    }

    fn add_stage<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let k = self.blocks.len() + 1;
        let sqrt2 = std::f64::consts::SQRT_2;
        let c_in = self.spec.input_channels();
        let w = self.spec.widths[k - 1];
        let out = self.spec.block_out(k);
        self.from_data.push(EqLayer::new(
            format!("d.from_data{k}"),
            Op::Conv { stride: 1, padding: 0 },
            &[w as i64, c_in as i64, 1, 1, 1],
            c_in,
            sqrt2,
            self.kind,
            rng,
        ));
        self.blocks.push(EqLayer::new(
            format!("d.block{k}"),
            Op::Conv { stride: 2, padding: 1 },
            &[out as i64, w as i64, 3, 3, 3],
            w * 27,
            sqrt2,
            self.kind,
            rng,
        ));
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    pub fn stage(&self) -> usize {
        self.blocks.len()
    }

    pub fn grow<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<(), ProGanError> {
        if self.stage() >= self.spec.stage_count() {
            return Err(ProGanError::CannotGrow(self.stage()));
        }
        self.add_stage(rng);
        Ok(())
    }

    /// Scores `[N, 1 + d, E, E, E]` inputs (volume channel first, then
    /// labels) with `E = 4·2^(s-1)`; returns `[N]` unbounded scores.
    pub fn forward(&self, input: &Tensor, alpha: f64) -> Result<Tensor, ProGanError> {
        let stage = self.stage();
        let edge = DiscriminatorSpec::input_edge(stage) as i64;
        let c = self.spec.input_channels() as i64;
        let s = input.size();
        if s.len() != 5 || s[1] != c || s[2..] != [edge; 3] {
            return Err(ProGanError::Shape { got: s, expected: format!("[N, {c}, {edge}, {edge}, {edge}]") });
        }
        let slope = self.spec.leaky_slope;
        let input = input.to_kind(self.kind);
        let mut h = leaky_relu(&self.from_data[stage - 1].forward(&input), slope);
        h = leaky_relu(&self.blocks[stage - 1].forward(&h), slope);
        if stage > 1 {
            h = blend(alpha, h, || {
                let pooled = input.avg_pool3d([2; 3], [2; 3], [0; 3], false, true, None::<i64>);
                leaky_relu(&self.from_data[stage - 2].forward(&pooled), slope)
            });
        }
        for k in (0..stage - 1).rev() {
            h = leaky_relu(&self.blocks[k].forward(&h), slope);
        }
        Ok(self.head.forward(&h.flatten(1, -1)).view([-1]))
    }
}

impl Parameterized for Discriminator {
    fn named_parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (f, b) in self.from_data.iter().zip(&self.blocks) {
            f.push_named(&mut out);
            b.push_named(&mut out);
        }
        self.head.push_named(&mut out);
        out
    }
}

fn leaky_relu(x: &Tensor, slope: f64) -> Tensor {
    x.maximum(&(x * slope))
}

/// Maps binary volumes `{0, 1}` to network range `{-1, 1}` as `[N, 1, z, y, x]`.
pub fn volumes_to_tensor(volumes: &[VoxelVolume], kind: Kind) -> Result<Tensor, ProGanError> {
    let first = volumes.first().ok_or_else(|| ProGanError::Shape { got: vec![0], expected: "non-empty batch".into() })?;
    let [nx, ny, nz] = first.dims();
    let mut flat = Vec::with_capacity(volumes.len() * first.len());
    for v in volumes {
        if v.dims() != first.dims() {
            return Err(ProGanError::Shape { got: v.dims().map(|d| d as i64).to_vec(), expected: format!("{:?}", first.dims()) });
        }
        flat.extend(v.data().iter().map(|&x| 2.0 * x - 1.0));
    }
    Ok(Tensor::from_slice(&flat).view([volumes.len() as i64, 1, nz as i64, ny as i64, nx as i64]).to_kind(kind))
}

/// Splits a `[N, 1, z, y, x]` batch into continuous volumes (values unchanged).
pub fn tensor_to_volumes(t: &Tensor, voxel_size: f64) -> Result<Vec<VoxelVolume>, ProGanError> {
    let s = t.size();
    if s.len() != 5 || s[1] != 1 {
        return Err(ProGanError::Shape { got: s, expected: "[N, 1, z, y, x]".into() });
    }
    let dims = [s[4] as usize, s[3] as usize, s[2] as usize];
    let flat: Vec<f32> = Vec::try_from(t.detach().to_kind(Kind::Float).contiguous().view([-1]))?;
    let per = dims.iter().product::<usize>();
    flat.chunks(per.max(1))
        .take(s[0] as usize)
        .map(|c| {
            VoxelVolume::continuous(dims, c.to_vec(), voxel_size)
                .map_err(|e| ProGanError::InvalidSpec(e.to_string()))
        })
        .collect()
}
