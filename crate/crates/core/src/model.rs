//! The detector graph: stem convolution, depthwise refinement, 21 inverted
//! residual bottlenecks, two private bottlenecks in front of the finest head,
//! and five 1x1 output heads.

use std::collections::HashMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::maps::{head_channels, ScaleMaps};
use crate::tensor::{add, batchnorm_fold, conv2d, relu6, BatchNorm, ConvParams, Tensor4};

pub const DEFAULT_EXPANSION: u32 = 6;
pub const DEFAULT_BN_EPS: f32 = 1e-3;
pub const RECEPTIVE_FIELDS: [usize; 5] = [8, 16, 32, 64, 128];
/// Smallest accepted input side.
pub const MIN_INPUT_SIDE: usize = 128;

const STEM_CHANNELS: usize = 32;
const REFINE_CHANNELS: usize = 16;
/// Bottleneck table: (output channels before scaling, stride, head fed).
const BOTTLENECKS: [(usize, usize, Option<usize>); 21] = [
    (24, 2, None),
    (24, 1, None),
    (32, 2, None),
    (32, 1, None),
    (32, 1, Some(8)),
    (64, 2, None),
    (64, 1, None),
    (64, 1, None),
    (64, 1, None),
    (96, 1, None),
    (96, 1, None),
    (96, 1, Some(16)),
    (140, 2, None),
    (140, 1, None),
    (140, 1, None),
    (140, 1, Some(32)),
    (140, 2, None),
    (140, 1, None),
    (140, 1, Some(64)),
    (140, 2, None),
    (140, 1, Some(128)),
];
const FIRST_HEAD_EXTRA_BLOCKS: usize = 2;

/// Scales a channel count by `alpha`, rounding to the nearest multiple of 8
/// (never below 8, and never more than 10% under the exact product).
pub fn scaled_channels(channels: usize, alpha: f32) -> usize {
    const DIVISOR: usize = 8;
    let v = channels as f64 * f64::from(alpha);
    let mut rounded = (((v + DIVISOR as f64 / 2.0) as usize) / DIVISOR * DIVISOR).max(DIVISOR);
    if (rounded as f64) < 0.9 * v {
        rounded += DIVISOR;
    }
    rounded
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaleSpec {
    /// Anchor size `a_l` in input pixels.
    pub receptive_field: usize,
    /// Cumulative downsampling at this head.
    pub stride: usize,
    pub head_channels: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub alpha: f32,
    pub expansion_factor: u32,
    pub input_channels: usize,
    pub bn_eps: f32,
    pub scales: Vec<ScaleSpec>,
}

impl NetworkConfig {
    pub fn new(alpha: f32) -> Self {
        let scales = RECEPTIVE_FIELDS
            .iter()
            .enumerate()
            .map(|(i, &rf)| ScaleSpec { receptive_field: rf, stride: rf, head_channels: head_channels(i > 0) })
            .collect();
        Self {
            alpha,
            expansion_factor: DEFAULT_EXPANSION,
            input_channels: 3,
            bn_eps: DEFAULT_BN_EPS,
            scales,
        }
    }

    pub fn with_expansion(mut self, t: u32) -> Self {
        self.expansion_factor = t;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::InvalidArgument(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.expansion_factor == 0 {
            return Err(Error::InvalidArgument("expansion factor must be >= 1".into()));
        }
        if !(self.bn_eps.is_finite() && self.bn_eps >= 0.0) {
            return Err(Error::InvalidArgument(format!("invalid batch-norm eps {}", self.bn_eps)));
        }
        let rfs: Vec<usize> = self.scales.iter().map(|s| s.receptive_field).collect();
        if rfs != RECEPTIVE_FIELDS {
            return Err(Error::InvalidArgument(format!("scales must be {RECEPTIVE_FIELDS:?}, got {rfs:?}")));
        }
        for (i, s) in self.scales.iter().enumerate() {
            if s.stride != s.receptive_field || s.head_channels != head_channels(i > 0) {
                return Err(Error::InvalidArgument(format!("inconsistent scale spec {s:?}")));
            }
        }
        Ok(())
    }

    pub fn receptive_fields(&self) -> Vec<usize> {
        self.scales.iter().map(|s| s.receptive_field).collect()
    }
}

#[derive(Clone, Debug)]
struct BlockPlan {
    name: String,
    in_ch: usize,
    out_ch: usize,
    stride: usize,
}

#[derive(Clone, Debug)]
struct HeadPlan {
    receptive_field: usize,
    in_ch: usize,
    out_ch: usize,
    /// Index of the backbone block feeding this head.
    source: usize,
}

#[derive(Clone, Debug)]
struct Plan {
    stem: usize,
    refine: usize,
    blocks: Vec<BlockPlan>,
    extras: Vec<BlockPlan>,
    heads: Vec<HeadPlan>,
    expansion: usize,
}

impl Plan {
    fn new(config: &NetworkConfig) -> Self {
        let a = config.alpha;
        let stem = scaled_channels(STEM_CHANNELS, a);
        let refine = scaled_channels(REFINE_CHANNELS, a);
        let mut blocks = Vec::new();
        let mut extras = Vec::new();
        let mut heads = Vec::new();
        let mut in_ch = refine;
        for (i, &(c, stride, head)) in BOTTLENECKS.iter().enumerate() {
            let out_ch = scaled_channels(c, a);
            blocks.push(BlockPlan { name: format!("bottleneck{}", i + 1), in_ch, out_ch, stride });
            if let Some(rf) = head {
                let first = heads.is_empty();
                if first {
                    for e in 0..FIRST_HEAD_EXTRA_BLOCKS {
                        extras.push(BlockPlan {
                            name: format!("extra{}", e + 1),
                            in_ch: out_ch,
                            out_ch,
                            stride: 1,
                        });
                    }
                }
                heads.push(HeadPlan {
                    receptive_field: rf,
                    in_ch: out_ch,
                    out_ch: head_channels(!first),
                    source: i,
                });
            }
            in_ch = out_ch;
        }
        Self { stem, refine, blocks, extras, heads, expansion: config.expansion_factor as usize }
    }

    /// Every stored tensor, in file order.
    fn layout(&self, input_channels: usize) -> Vec<TensorSpec> {
        let mut out = Vec::new();
        conv_bn_specs(&mut out, "stem.conv", [self.stem, input_channels, 3, 3]);
        conv_bn_specs(&mut out, "refine.dw", [self.stem, 1, 3, 3]);
        conv_bn_specs(&mut out, "refine.project", [self.refine, self.stem, 1, 1]);
        let mut heads = self.heads.iter().peekable();
        for (i, b) in self.blocks.iter().enumerate() {
            block_specs(&mut out, b, self.expansion);
            while let Some(h) = heads.next_if(|h| h.source == i) {
                if h.receptive_field == self.heads[0].receptive_field {
                    for e in &self.extras {
                        block_specs(&mut out, e, self.expansion);
                    }
                }
                out.push(TensorSpec::new(format!("head{}.kernel", h.receptive_field), vec![h.out_ch, h.in_ch, 1, 1], Role::Kernel));
                out.push(TensorSpec::new(format!("head{}.bias", h.receptive_field), vec![h.out_ch], Role::Bias));
            }
        }
        out
    }
}

fn conv_bn_specs(out: &mut Vec<TensorSpec>, layer: &str, shape: [usize; 4]) {
    out.push(TensorSpec::new(format!("{layer}.kernel"), shape.to_vec(), Role::Kernel));
    for (stat, role) in [
        ("gamma", Role::BnGamma),
        ("beta", Role::BnBeta),
        ("mean", Role::BnMean),
        ("var", Role::BnVar),
    ] {
        out.push(TensorSpec::new(format!("{layer}.bn.{stat}"), vec![shape[0]], role));
    }
}

fn block_specs(out: &mut Vec<TensorSpec>, b: &BlockPlan, t: usize) {
    let hidden = b.in_ch * t;
    if t != 1 {
        conv_bn_specs(out, &format!("{}.expand", b.name), [hidden, b.in_ch, 1, 1]);
    }
    conv_bn_specs(out, &format!("{}.dw", b.name), [hidden, 1, 3, 3]);
    conv_bn_specs(out, &format!("{}.project", b.name), [b.out_ch, hidden, 1, 1]);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Kernel,
    Bias,
    BnGamma,
    BnBeta,
    BnMean,
    BnVar,
}

/// Name and shape of one stored tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub dims: Vec<usize>,
    pub role: Role,
}

impl TensorSpec {
    fn new(name: String, dims: Vec<usize>, role: Role) -> Self {
        Self { name, dims, role }
    }

    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }
}

/// Names and shapes of every tensor the configured network stores, in the
/// order they appear in weight files.
pub fn weight_layout(config: &NetworkConfig) -> Vec<TensorSpec> {
    Plan::new(config).layout(config.input_channels)
}

/// Number of stored scalars: kernels, head biases and the four batch-norm
/// vectors of every normalised convolution.
pub fn count_parameters(config: &NetworkConfig) -> usize {
    weight_layout(config).iter().map(TensorSpec::numel).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        let numel: usize = dims.iter().product();
        if numel != data.len() {
            return Err(Error::shape(&name, numel, data.len()));
        }
        Ok(Self { name, dims, data })
    }
}

/// Learned parameters, keyed by the deterministic layer names.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightStore {
    alpha: f32,
    expansion_factor: u32,
    bn_eps: f32,
    tensors: Vec<NamedTensor>,
    index: HashMap<String, usize>,
}

impl WeightStore {
    pub fn new(alpha: f32, expansion_factor: u32, bn_eps: f32, tensors: Vec<NamedTensor>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tensors.len());
        for (i, t) in tensors.iter().enumerate() {
            if index.insert(t.name.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate tensor name `{}`", t.name)));
            }
        }
        Ok(Self { alpha, expansion_factor, bn_eps, tensors, index })
    }

    pub fn zeros(config: &NetworkConfig) -> Self {
        Self::filled(config, |_, n| vec![0.0; n])
    }

    /// Deterministic pseudo-random weights.
    ///
    /// A ChaCha8 stream seeded with `seed_from_u64(seed)` is consumed tensor
    /// by tensor in layout order; each value is `lo + (hi - lo) * u` with
    /// `u = (next_u32 >> 8) / 2^24`. Kernels use `+-sqrt(3 / fan_in)`, batch
    /// norm draws gamma in [0.8, 1.2], beta and mean in [-0.1, 0.1], var in
    /// [0.5, 1.5], and head biases in [-0.1, 0.1].
    pub fn seeded(config: &NetworkConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::filled(config, move |spec, n| {
            let (lo, hi) = match spec.role {
                Role::Kernel => {
                    let fan_in: usize = spec.dims[1..].iter().product();
                    let b = (3.0 / fan_in as f64).sqrt() as f32;
                    (-b, b)
                }
                Role::Bias | Role::BnBeta | Role::BnMean => (-0.1, 0.1),
                Role::BnGamma => (0.8, 1.2),
                Role::BnVar => (0.5, 1.5),
            };
            (0..n)
                .map(|_| {
                    let u = (rng.next_u32() >> 8) as f32 / (1u32 << 24) as f32;
                    lo + (hi - lo) * u
                })
                .collect()
        })
    }

    fn filled(config: &NetworkConfig, mut f: impl FnMut(&TensorSpec, usize) -> Vec<f32>) -> Self {
        let tensors = weight_layout(config)
            .into_iter()
            .map(|spec| {
                let data = f(&spec, spec.numel());
                NamedTensor { name: spec.name, dims: spec.dims, data }
            })
            .collect();
        Self::new(config.alpha, config.expansion_factor, config.bn_eps, tensors)
            .expect("layout names are unique")
    }

    pub fn alpha(&self) -> f32 {
        self.alpha
    }

    pub fn expansion_factor(&self) -> u32 {
        self.expansion_factor
    }

    pub fn bn_eps(&self) -> f32 {
        self.bn_eps
    }

    pub fn tensors(&self) -> &[NamedTensor] {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    /// Configuration described by the store's header fields.
    pub fn config(&self) -> NetworkConfig {
        let mut c = NetworkConfig::new(self.alpha).with_expansion(self.expansion_factor);
        c.bn_eps = self.bn_eps;
        c
    }

    fn tensor(&self, name: &str, dims: &[usize]) -> Result<&NamedTensor> {
        let t = self.get(name).ok_or_else(|| Error::MissingWeight(name.to_string()))?;
        if t.dims != dims {
            return Err(Error::shape(name, dims, &t.dims));
        }
        Ok(t)
    }
}

#[derive(Clone, Debug)]
struct Bottleneck {
    expand: Option<ConvParams>,
    depthwise: ConvParams,
    project: ConvParams,
    residual: bool,
}

impl Bottleneck {
    fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        let hidden = match &self.expand {
            Some(e) => relu6(&conv2d(x, e)?),
            None => x.clone(),
        };
        let hidden = relu6(&conv2d(&hidden, &self.depthwise)?);
        let y = conv2d(&hidden, &self.project)?;
        if self.residual {
            add(&y, x)
        } else {
            Ok(y)
        }
    }
}

#[derive(Clone, Debug)]
struct Head {
    spec: ScaleSpec,
    conv: ConvParams,
    source: usize,
}

/// An executable, immutable detector graph with batch norm folded away.
#[derive(Clone, Debug)]
pub struct Network {
    config: NetworkConfig,
    stem: ConvParams,
    refine_dw: ConvParams,
    refine_project: ConvParams,
    blocks: Vec<Bottleneck>,
    extras: Vec<Bottleneck>,
    heads: Vec<Head>,
}

struct Loader<'a> {
    weights: &'a WeightStore,
    eps: f32,
}

impl Loader<'_> {
    fn conv_bn(&self, layer: &str, shape: [usize; 4], stride: usize, groups: usize) -> Result<ConvParams> {
        let kernel = self.weights.tensor(&format!("{layer}.kernel"), &shape)?;
        let stat = |s: &str| -> Result<Vec<f32>> {
            Ok(self.weights.tensor(&format!("{layer}.bn.{s}"), &[shape[0]])?.data.clone())
        };
        let bn = BatchNorm { gamma: stat("gamma")?, beta: stat("beta")?, mean: stat("mean")?, var: stat("var")? };
        let conv = ConvParams::new(layer, kernel.data.clone(), shape, vec![0.0; shape[0]], stride, groups)?;
        batchnorm_fold(&conv, &bn, self.eps)
    }

    fn block(&self, b: &BlockPlan, t: usize) -> Result<Bottleneck> {
        let hidden = b.in_ch * t;
        let expand = if t != 1 {
            Some(self.conv_bn(&format!("{}.expand", b.name), [hidden, b.in_ch, 1, 1], 1, 1)?)
        } else {
            None
        };
        Ok(Bottleneck {
            expand,
            depthwise: self.conv_bn(&format!("{}.dw", b.name), [hidden, 1, 3, 3], b.stride, hidden)?,
            project: self.conv_bn(&format!("{}.project", b.name), [b.out_ch, hidden, 1, 1], 1, 1)?,
            residual: b.stride == 1 && b.in_ch == b.out_ch,
        })
    }
}

/// Builds an executable network, checking every tensor against the layout.
pub fn build_network(config: &NetworkConfig, weights: &WeightStore) -> Result<Network> {
    config.validate()?;
    let layout = weight_layout(config);
    if let Some(extra) = weights.tensors().iter().find(|t| !layout.iter().any(|s| s.name == t.name)) {
        return Err(Error::Format(format!("unexpected tensor `{}` for this configuration", extra.name)));
    }
    let plan = Plan::new(config);
    let loader = Loader { weights, eps: config.bn_eps };
    let t = plan.expansion;

    let stem = loader.conv_bn("stem.conv", [plan.stem, config.input_channels, 3, 3], 2, 1)?;
    let refine_dw = loader.conv_bn("refine.dw", [plan.stem, 1, 3, 3], 1, plan.stem)?;
    let refine_project = loader.conv_bn("refine.project", [plan.refine, plan.stem, 1, 1], 1, 1)?;
    let blocks = plan.blocks.iter().map(|b| loader.block(b, t)).collect::<Result<Vec<_>>>()?;
    let extras = plan.extras.iter().map(|b| loader.block(b, t)).collect::<Result<Vec<_>>>()?;

    let mut heads = Vec::with_capacity(plan.heads.len());
    for (h, spec) in plan.heads.iter().zip(&config.scales) {
        if spec.head_channels != h.out_ch {
            return Err(Error::shape(format!("head{}", h.receptive_field), h.out_ch, spec.head_channels));
        }
        let name = format!("head{}", h.receptive_field);
        let shape = [h.out_ch, h.in_ch, 1, 1];
        let kernel = weights.tensor(&format!("{name}.kernel"), &shape)?;
        let bias = weights.tensor(&format!("{name}.bias"), &[h.out_ch])?;
        heads.push(Head {
            spec: *spec,
            conv: ConvParams::new(name, kernel.data.clone(), shape, bias.data.clone(), 1, 1)?,
            source: h.source,
        });
    }

    Ok(Network { config: config.clone(), stem, refine_dw, refine_project, blocks, extras, heads })
}

impl Network {
    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// A copy without the private blocks in front of the finest head, which
    /// is then fed directly from its backbone block.
    pub fn without_first_head_extras(&self) -> Self {
        Self { extras: Vec::new(), ..self.clone() }
    }

    /// Raw head tensors, fine to coarse.
    pub fn forward_heads(&self, image: &Tensor4) -> Result<Vec<Tensor4>> {
        let [n, c, h, w] = image.shape();
        if n != 1 || c != self.config.input_channels {
            return Err(Error::shape("input", [1, self.config.input_channels], [n, c]));
        }
        if h < MIN_INPUT_SIDE || w < MIN_INPUT_SIDE {
            return Err(Error::InputTooSmall { height: h, width: w, min: MIN_INPUT_SIDE });
        }

        let mut x = relu6(&conv2d(image, &self.stem)?);
        x = relu6(&conv2d(&x, &self.refine_dw)?);
        x = conv2d(&x, &self.refine_project)?;

        let mut outputs = Vec::with_capacity(self.heads.len());
        let mut heads = self.heads.iter().peekable();
        for (i, block) in self.blocks.iter().enumerate() {
            x = block.forward(&x)?;
            while let Some(head) = heads.next_if(|h| h.source == i) {
                if outputs.is_empty() && !self.extras.is_empty() {
                    let mut f = self.extras[0].forward(&x)?;
                    for e in &self.extras[1..] {
                        f = e.forward(&f)?;
                    }
                    outputs.push(conv2d(&f, &head.conv)?);
                } else {
                    outputs.push(conv2d(&x, &head.conv)?);
                }
            }
        }
        Ok(outputs)
    }

    pub fn forward(&self, image: &Tensor4) -> Result<ScaleMaps> {
        let heads = self.forward_heads(image)?;
        let rfs: Vec<usize> = self.heads.iter().map(|h| h.spec.receptive_field).collect();
        ScaleMaps::from_heads(heads, &rfs)
    }
}
