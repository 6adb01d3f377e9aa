//! A small fixed-point reference network used to produce realistic traces.
//!
//! Supports conv2d, ReLU, max-pool and fully-connected layers on `NCHW`
//! tensors. Every ReLU carries a [`QuantSpec`]; its output is quantized and
//! recorded as one trace layer, so recorded activations are non-negative
//! fixed-point codes.

use super::{ActivationTrace, TraceLayer};
use crate::fixedpoint::{self, FixedPointError, FixedValue, QuantSpec, MAX_WIDTH};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Quant(#[from] FixedPointError),
    #[error("cannot parse network config")]
    Parse(#[from] toml::de::Error),
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerConfig {
    Conv2d {
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
        /// `[out][in][ky][kx]`, flattened. Drawn from the net seed when absent.
        weights: Option<Vec<f64>>,
        bias: Option<Vec<f64>>,
    },
    Relu {
        name: Option<String>,
        quant: QuantSpec,
    },
    Maxpool {
        size: usize,
        stride: Option<usize>,
    },
    Fc {
        out_features: usize,
        /// `[out][in]`, flattened.
        weights: Option<Vec<f64>>,
        bias: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "one_u64")]
    pub seed: u64,
    /// Inputs are drawn uniformly from `[0, max)`.
    #[serde(default = "default_max")]
    pub max: f64,
    /// Round drawn inputs down to integers.
    #[serde(default)]
    pub integer: bool,
    /// Explicit eval samples, each of `C*H*W` values; overrides random draws.
    pub inputs: Option<Vec<Vec<f64>>>,
}

fn default_batch() -> usize {
    8
}

fn one_u64() -> u64 {
    1
}

fn default_max() -> f64 {
    1.0
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            batch: default_batch(),
            seed: 1,
            max: default_max(),
            integer: false,
            inputs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub name: String,
    /// `(C, H, W)` of one sample.
    pub input: [usize; 3],
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub eval: EvalConfig,
    pub layers: Vec<LayerConfig>,
}

impl NetConfig {
    pub fn from_toml(text: &str) -> Result<Self, NetError> {
        Ok(toml::from_str(text)?)
    }
}

/// Dense `NCHW` tensor of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: [usize; 4],
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: [usize; 4], data: Vec<f64>) -> Result<Self, NetError> {
        if dims.iter().product::<usize>() != data.len() {
            return Err(NetError::ShapeMismatch(format!(
                "dims {dims:?} need {} values, got {}",
                dims.iter().product::<usize>(),
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.iter().product()],
        }
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        let [_, cs, hs, ws] = self.dims;
        self.data[((n * cs + c) * hs + y) * ws + x]
    }

    pub fn sample(&self, n: usize) -> &[f64] {
        let per = self.dims[1] * self.dims[2] * self.dims[3];
        &self.data[n * per..(n + 1) * per]
    }
}

/// Materialized layer with concrete weights.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    },
    Relu {
        name: String,
        quant: QuantSpec,
    },
    MaxPool {
        size: usize,
        stride: usize,
    },
    Fc {
        in_features: usize,
        out_features: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    },
}

/// Post-quantization transform applied to one recorded layer's codes: an
/// optional per-layer fixed-point window, then an optional budget of most
/// significant set bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Reduction {
    /// `(high, low)` bit window.
    pub window: Option<(u8, u8)>,
    pub msp2_budget: Option<u32>,
}

impl Reduction {
    pub const NONE: Reduction = Reduction {
        window: None,
        msp2_budget: None,
    };

    pub fn window(high: u8, low: u8) -> Self {
        Self {
            window: Some((high, low)),
            msp2_budget: None,
        }
    }

    pub fn msp2(budget: u32) -> Self {
        Self {
            window: None,
            msp2_budget: Some(budget),
        }
    }

    pub fn apply(self, v: FixedValue) -> FixedValue {
        let v = match self.window {
            Some((high, low)) => fixedpoint::reduce_to_window(v, high, low),
            None => v,
        };
        match self.msp2_budget {
            Some(n) => fixedpoint::msp2_truncate(v, n),
            None => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyNet {
    pub name: String,
    pub input: [usize; 3],
    pub layers: Vec<Layer>,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// One entry per ReLU, empty when quantization is disabled.
    pub recorded: Vec<TraceLayer>,
    /// Final layer output per sample.
    pub logits: Vec<Vec<f64>>,
}

impl TinyNet {
    pub fn from_config(cfg: &NetConfig) -> Result<Self, NetError> {
        let bad = |m: String| NetError::InvalidConfig(m);
        if cfg.input.contains(&0) {
            return Err(bad(format!("input dims {:?} contain zero", cfg.input)));
        }
        if cfg.layers.is_empty() {
            return Err(bad("network has no layers".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let [mut c, mut h, mut w] = cfg.input;
        let mut layers = Vec::with_capacity(cfg.layers.len());
        let mut names = HashSet::new();
        let mut relus = 0;

        for (i, lc) in cfg.layers.iter().enumerate() {
            match lc {
                LayerConfig::Conv2d {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    weights,
                    bias,
                } => {
                    if *out_channels == 0 || *kernel == 0 || *stride == 0 {
                        return Err(bad(format!("layer {i}: conv sizes must be non-zero")));
                    }
                    if h + 2 * padding < *kernel || w + 2 * padding < *kernel {
                        return Err(bad(format!(
                            "layer {i}: kernel {kernel} larger than padded input {h}x{w}"
                        )));
                    }
                    let fan_in = c * kernel * kernel;
                    let weights = materialize(weights, out_channels * fan_in, fan_in, &mut rng)
                        .map_err(|m| bad(format!("layer {i} weights: {m}")))?;
                    let bias = bias_or_zero(bias, *out_channels)
                        .map_err(|m| bad(format!("layer {i} bias: {m}")))?;
                    layers.push(Layer::Conv2d {
                        in_channels: c,
                        out_channels: *out_channels,
                        kernel: *kernel,
                        stride: *stride,
                        padding: *padding,
                        weights,
                        bias,
                    });
                    c = *out_channels;
                    h = (h + 2 * padding - kernel) / stride + 1;
                    w = (w + 2 * padding - kernel) / stride + 1;
                }
                LayerConfig::Relu { name, quant } => {
                    quant.validate()?;
                    if quant.width > MAX_WIDTH {
                        return Err(bad(format!("layer {i}: quant width too large")));
                    }
                    let name = name.clone().unwrap_or_else(|| format!("relu{relus}"));
                    if !names.insert(name.clone()) {
                        return Err(bad(format!("duplicate layer name `{name}`")));
                    }
                    relus += 1;
                    layers.push(Layer::Relu {
                        name,
                        quant: *quant,
                    });
                }
                LayerConfig::Maxpool { size, stride } => {
                    let stride = stride.unwrap_or(*size);
                    if *size == 0 || stride == 0 || *size > h || *size > w {
                        return Err(bad(format!(
                            "layer {i}: pool {size}/{stride} does not fit {h}x{w}"
                        )));
                    }
                    layers.push(Layer::MaxPool {
                        size: *size,
                        stride,
                    });
                    h = (h - size) / stride + 1;
                    w = (w - size) / stride + 1;
                }
                LayerConfig::Fc {
                    out_features,
                    weights,
                    bias,
                } => {
                    if *out_features == 0 {
                        return Err(bad(format!("layer {i}: fc needs outputs")));
                    }
                    let fan_in = c * h * w;
                    let weights = materialize(weights, out_features * fan_in, fan_in, &mut rng)
                        .map_err(|m| bad(format!("layer {i} weights: {m}")))?;
                    let bias = bias_or_zero(bias, *out_features)
                        .map_err(|m| bad(format!("layer {i} bias: {m}")))?;
                    layers.push(Layer::Fc {
                        in_features: fan_in,
                        out_features: *out_features,
                        weights,
                        bias,
                    });
                    (c, h, w) = (*out_features, 1, 1);
                }
            }
        }
        if let Some(inputs) = &cfg.eval.inputs {
            let per: usize = cfg.input.iter().product();
            if inputs.is_empty() || inputs.iter().any(|s| s.len() != per) {
                return Err(bad(format!(
                    "eval inputs must be non-empty samples of {per} values"
                )));
            }
        } else if cfg.eval.batch == 0 {
            return Err(bad("eval batch must be non-zero".into()));
        }
        Ok(Self {
            name: cfg.name.clone(),
            input: cfg.input,
            layers,
            eval: cfg.eval.clone(),
        })
    }

    pub fn from_toml(text: &str) -> Result<Self, NetError> {
        Self::from_config(&NetConfig::from_toml(text)?)
    }

    /// Names of the recorded (ReLU) layers in order.
    pub fn recorded_layers(&self) -> Vec<(&str, QuantSpec)> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Relu { name, quant } => Some((name.as_str(), *quant)),
                _ => None,
            })
            .collect()
    }

    /// The evaluation batch described by the net's `eval` section.
    pub fn eval_inputs(&self) -> Tensor {
        let [c, h, w] = self.input;
        if let Some(samples) = &self.eval.inputs {
            let data = samples.iter().flatten().copied().collect();
            return Tensor {
                dims: [samples.len(), c, h, w],
                data,
            };
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.eval.seed);
        let n = self.eval.batch * c * h * w;
        let data = (0..n)
            .map(|_| {
                let x = rng.random::<f64>() * self.eval.max;
                if self.eval.integer {
                    x.floor()
                } else {
                    x
                }
            })
            .collect();
        Tensor {
            dims: [self.eval.batch, c, h, w],
            data,
        }
    }

    /// Runs the network. With `quantize`, each ReLU output is quantized,
    /// passed through `reductions[k]` for the k-th ReLU (missing entries mean
    /// no reduction), recorded, and dequantized for the next layer.
    pub fn forward(
        &self,
        input: &Tensor,
        quantize: bool,
        reductions: &[Reduction],
    ) -> Result<ForwardOutput, NetError> {
        let [c, h, w] = self.input;
        if input.dims[1..] != [c, h, w] {
            return Err(NetError::ShapeMismatch(format!(
                "input sample dims {:?} do not match network input {:?}",
                &input.dims[1..],
                self.input
            )));
        }
        let mut x = input.clone();
        let mut recorded = Vec::new();
        for layer in &self.layers {
            x = match layer {
                Layer::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    weights,
                    bias,
                } => conv2d_im2col(
                    &x,
                    *in_channels,
                    *out_channels,
                    *kernel,
                    *stride,
                    *padding,
                    weights,
                    bias,
                ),
                Layer::Relu { name, quant } => {
                    if quantize {
                        let reduction = reductions.get(recorded.len()).copied().unwrap_or_default();
                        let (y, codes) = relu_quantized(&x, *quant, reduction)?;
                        let [n, c, h, w] = x.dims;
                        recorded.push(TraceLayer {
                            layer_id: recorded.len() as u32,
                            name: name.clone(),
                            dims: [n as u32, c as u32, h as u32, w as u32],
                            quant: *quant,
                            values: codes,
                        });
                        y
                    } else {
                        Tensor {
                            dims: x.dims,
                            data: x.data.iter().map(|v| v.max(0.0)).collect(),
                        }
                    }
                }
                Layer::MaxPool { size, stride } => maxpool(&x, *size, *stride),
                Layer::Fc {
                    in_features,
                    out_features,
                    weights,
                    bias,
                } => fully_connected(&x, *in_features, *out_features, weights, bias),
            };
        }
        let logits = (0..x.dims[0]).map(|n| x.sample(n).to_vec()).collect();
        Ok(ForwardOutput { recorded, logits })
    }
}

/// Runs the quantized network on `inputs` and returns the trace of every
/// ReLU output together with the logits.
pub fn run_reference(
    net: &TinyNet,
    inputs: &Tensor,
) -> Result<(ActivationTrace, Vec<Vec<f64>>), NetError> {
    let out = net.forward(inputs, true, &[])?;
    Ok((
        ActivationTrace {
            base_width: MAX_WIDTH,
            layers: out.recorded,
        },
        out.logits,
    ))
}

/// Index of the largest logit, first one on ties.
pub fn top1(logits: &[f64]) -> usize {
    logits
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}

fn materialize(
    given: &Option<Vec<f64>>,
    len: usize,
    fan_in: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, String> {
    match given {
        Some(w) if w.len() == len => Ok(w.clone()),
        Some(w) => Err(format!("expected {len} values, got {}", w.len())),
        None => {
            let he = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            Ok((0..len).map(|_| he.sample(rng)).collect())
        }
    }
}

fn bias_or_zero(given: &Option<Vec<f64>>, len: usize) -> Result<Vec<f64>, String> {
    match given {
        Some(b) if b.len() == len => Ok(b.clone()),
        Some(b) => Err(format!("expected {len} values, got {}", b.len())),
        None => Ok(vec![0.0; len]),
    }
}

fn relu_quantized(
    x: &Tensor,
    quant: QuantSpec,
    reduction: Reduction,
) -> Result<(Tensor, Vec<u16>), NetError> {
    let mut codes = Vec::with_capacity(x.data.len());
    let mut data = Vec::with_capacity(x.data.len());
    for &v in &x.data {
        let q = reduction.apply(fixedpoint::quantize(v.max(0.0), quant)?);
        codes.push(q.raw());
        data.push(quant.dequantize(q));
    }
    Ok((Tensor { dims: x.dims, data }, codes))
}

/// Convolution lowered to a matrix product over unfolded input patches.
#[allow(clippy::too_many_arguments)]
fn conv2d_im2col(
    x: &Tensor,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    weights: &[f64],
    bias: &[f64],
) -> Tensor {
    let [n, _, h, w] = x.dims;
    let oh = (h + 2 * padding - kernel) / stride + 1;
    let ow = (w + 2 * padding - kernel) / stride + 1;
    let patch = in_channels * kernel * kernel;
    let positions = oh * ow;
    let mut out = Tensor::zeros([n, out_channels, oh, ow]);
    let mut cols = vec![0.0; patch * positions];
    for b in 0..n {
        for c in 0..in_channels {
            for ky in 0..kernel {
                for kx in 0..kernel {
                    let row = (c * kernel + ky) * kernel + kx;
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            cols[row * positions + oy * ow + ox] =
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    x.at(b, c, iy as usize, ix as usize)
                                } else {
                                    0.0
                                };
                        }
                    }
                }
            }
        }
        let base = b * out_channels * positions;
        for o in 0..out_channels {
            let dst = &mut out.data[base + o * positions..base + (o + 1) * positions];
            dst.fill(bias[o]);
            for k in 0..patch {
                let wk = weights[o * patch + k];
                if wk == 0.0 {
                    continue;
                }
                let src = &cols[k * positions..(k + 1) * positions];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += wk * s;
                }
            }
        }
    }
    out
}

fn maxpool(x: &Tensor, size: usize, stride: usize) -> Tensor {
    let [n, c, h, w] = x.dims;
    let oh = (h - size) / stride + 1;
    let ow = (w - size) / stride + 1;
    let mut out = Tensor::zeros([n, c, oh, ow]);
    let mut i = 0;
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut m = f64::NEG_INFINITY;
                    for ky in 0..size {
                        for kx in 0..size {
                            m = m.max(x.at(b, ch, oy * stride + ky, ox * stride + kx));
                        }
                    }
                    out.data[i] = m;
                    i += 1;
                }
            }
        }
    }
    out
}

fn fully_connected(
    x: &Tensor,
    in_features: usize,
    out_features: usize,
    weights: &[f64],
    bias: &[f64],
) -> Tensor {
    let n = x.dims[0];
    let mut out = Tensor::zeros([n, out_features, 1, 1]);
    for b in 0..n {
        let input = x.sample(b);
        debug_assert_eq!(input.len(), in_features);
        for o in 0..out_features {
            let row = &weights[o * in_features..(o + 1) * in_features];
            out.data[b * out_features + o] =
                bias[o] + row.iter().zip(input).map(|(w, v)| w * v).sum::<f64>();
        }
    }
    out
}
