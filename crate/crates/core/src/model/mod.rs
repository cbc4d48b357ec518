//! Small networks with exact backpropagation.
//!
//! Two architectures are supported: a multilayer perceptron and a two-layer
//! convolutional net. Each hidden layer is `affine -> norm -> relu` (plus a
//! 2x2 max-pool for the conv net), where `norm` is batch norm, group norm or
//! nothing. All activations are `(batch, channels, spatial)` row-major
//! buffers; the MLP simply has `spatial = 1`.

mod layers;
mod optim;
mod state;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SsflError};
use crate::rng::{self, Purpose};
use layers::{ConvGeom, NormOut, Pooling};

pub use optim::{cosine_lr, sgd_step, LrSchedule, OptimizerConfig};
pub use state::{LayerSlot, LayerTensor, Layout, NormStats, ParameterState};

/// Seed used to initialize weights unless configured otherwise.
pub const DEFAULT_WEIGHT_SEED: u64 = 1;
/// Exponential moving-average factor for batch-norm running statistics.
pub const RUNNING_STAT_MOMENTUM: f64 = 0.1;
const DEFAULT_MAX_GROUPS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputShape {
    Vector { len: usize },
    Image { channels: usize, height: usize, width: usize },
}

impl InputShape {
    pub fn size(&self) -> usize {
        match *self {
            InputShape::Vector { len } => len,
            InputShape::Image { channels, height, width } => channels * height * width,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case")]
pub enum Architecture {
    /// Hidden layer widths; the input and output widths come from the spec.
    Mlp { hidden: Vec<usize> },
    /// Output channels of the two 3x3 conv layers.
    TinyCnn { channels: Vec<usize> },
}

impl Architecture {
    pub fn default_mlp() -> Self {
        Architecture::Mlp { hidden: vec![64, 64] }
    }

    pub fn default_cnn() -> Self {
        Architecture::TinyCnn { channels: vec![16, 32] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    None,
    BatchNorm,
    /// `None` means `min(8, channels)` groups per layer.
    GroupNorm(Option<usize>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub norm: NormKind,
    pub input: InputShape,
    pub classes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
enum Op {
    Linear { inp: usize, out: usize, weight: usize, bias: usize },
    Conv { cin: usize, cout: usize, h: usize, w: usize, weight: usize, bias: usize },
    Norm { channels: usize, spatial: usize, pooling: Pooling, stats: Option<usize>, gamma: usize, beta: usize },
    Relu,
    MaxPool { channels: usize, h: usize, w: usize },
}

enum OpCache {
    Input(Vec<f64>),
    Norm { xhat: Vec<f64>, inv_std: Vec<f64>, batch_stats: bool },
    Pool { argmax: Vec<usize>, in_len: usize },
}

/// Intermediate activations of one forward pass.
pub struct ActivationCache {
    fingerprint: u64,
    batch: usize,
    entries: Vec<OpCache>,
}

impl ActivationCache {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// A compiled network: the op sequence plus the parameter layout.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    ops: Vec<Op>,
    layout: Layout,
    stat_channels: Vec<usize>,
}

impl Model {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        if spec.classes < 2 {
            return Err(SsflError::invalid("a classifier needs at least two classes"));
        }
        if spec.input.size() == 0 {
            return Err(SsflError::invalid("input shape is empty"));
        }
        let mut b = Builder { ops: Vec::new(), layout: Layout::default(), stat_channels: Vec::new(), norm: spec.norm };
        match &spec.architecture {
            Architecture::Mlp { hidden } => {
                let mut width = spec.input.size();
                for (i, &h) in hidden.iter().enumerate() {
                    if h == 0 {
                        return Err(SsflError::invalid("hidden width must be positive"));
                    }
                    b.linear(&format!("fc{}", i + 1), width, h);
                    b.norm(&format!("norm{}", i + 1), h, 1)?;
                    b.ops.push(Op::Relu);
                    width = h;
                }
                b.linear(&format!("fc{}", hidden.len() + 1), width, spec.classes);
            }
            Architecture::TinyCnn { channels } => {
                let InputShape::Image { channels: mut cin, height: mut h, width: mut w } = spec.input else {
                    return Err(SsflError::invalid("tiny_cnn requires image input"));
                };
                if channels.len() != 2 || channels.contains(&0) {
                    return Err(SsflError::invalid("tiny_cnn takes exactly two positive channel counts"));
                }
                for (i, &cout) in channels.iter().enumerate() {
                    if h < 2 || w < 2 {
                        return Err(SsflError::invalid("image too small for two pooling stages"));
                    }
                    let weight = b.layout.push(format!("conv{}.weight", i + 1), vec![cout, cin, 3, 3]);
                    let bias = b.layout.push(format!("conv{}.bias", i + 1), vec![cout]);
                    b.ops.push(Op::Conv { cin, cout, h, w, weight, bias });
                    b.norm(&format!("norm{}", i + 1), cout, h * w)?;
                    b.ops.push(Op::Relu);
                    b.ops.push(Op::MaxPool { channels: cout, h, w });
                    cin = cout;
                    h /= 2;
                    w /= 2;
                }
                b.linear("head", cin * h * w, spec.classes);
            }
        }
        Ok(Self { spec, ops: b.ops, layout: b.layout, stat_channels: b.stat_channels })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.total()
    }

    pub fn classes(&self) -> usize {
        self.spec.classes
    }

    pub fn input_size(&self) -> usize {
        self.spec.input.size()
    }

    /// Uniform fan-in initialization; momentum zero; running stats (0, 1).
    pub fn init(&self, seed: u64) -> ParameterState {
        let mut stream = rng::stream(seed, Purpose::Init, &[]);
        let mut weights = vec![0.0; self.layout.total()];
        for op in &self.ops {
            match *op {
                Op::Linear { inp, weight, bias, .. } => {
                    self.fill_uniform(&mut weights, &mut stream, inp, &[weight, bias]);
                }
                Op::Conv { cin, weight, bias, .. } => {
                    self.fill_uniform(&mut weights, &mut stream, cin * 9, &[weight, bias]);
                }
                Op::Norm { gamma, .. } => {
                    let s = &self.layout.slots[gamma];
                    weights[s.offset..s.offset + s.len].iter_mut().for_each(|v| *v = 1.0);
                }
                Op::Relu | Op::MaxPool { .. } => {}
            }
        }
        ParameterState {
            momentum: vec![0.0; weights.len()],
            weights,
            norm_stats: self
                .stat_channels
                .iter()
                .map(|&c| NormStats { mean: vec![0.0; c], var: vec![1.0; c] })
                .collect(),
            layout: self.layout.clone(),
        }
    }

    fn fill_uniform(&self, weights: &mut [f64], stream: &mut rng::Stream, fan_in: usize, slots: &[usize]) {
        let bound = 1.0 / (fan_in as f64).sqrt();
        for &slot in slots {
            let s = &self.layout.slots[slot];
            for v in &mut weights[s.offset..s.offset + s.len] {
                *v = stream.random_range(-bound..bound);
            }
        }
    }

    fn check_state(&self, state: &ParameterState) -> Result<()> {
        if state.layout != self.layout || state.norm_stats.len() != self.stat_channels.len() {
            return Err(SsflError::invalid("parameter state does not belong to this model"));
        }
        Ok(())
    }

    /// Forward pass. In train mode batch norm normalizes with batch statistics
    /// and folds them into the running statistics of `state`.
    pub fn forward(
        &self,
        state: &mut ParameterState,
        input: &[f64],
        batch: usize,
        mode: Mode,
    ) -> Result<(Vec<f64>, ActivationCache)> {
        let (logits, cache, batch_stats) = self.forward_inner(state, input, batch, mode)?;
        if mode == Mode::Train {
            let m = RUNNING_STAT_MOMENTUM;
            for (stats, fresh) in state.norm_stats.iter_mut().zip(batch_stats) {
                // Running variance tracks the unbiased estimate.
                let unbias = if fresh.count > 1 { fresh.count as f64 / (fresh.count - 1) as f64 } else { 1.0 };
                for (r, b) in stats.mean.iter_mut().zip(&fresh.mean) {
                    *r = (1.0 - m) * *r + m * b;
                }
                for (r, b) in stats.var.iter_mut().zip(&fresh.var) {
                    *r = (1.0 - m) * *r + m * b * unbias;
                }
            }
        }
        Ok((logits, cache))
    }

    /// Forward pass that never touches running statistics.
    pub fn forward_frozen(
        &self,
        state: &ParameterState,
        input: &[f64],
        batch: usize,
        mode: Mode,
    ) -> Result<(Vec<f64>, ActivationCache)> {
        let (logits, cache, _) = self.forward_inner(state, input, batch, mode)?;
        Ok((logits, cache))
    }

    fn forward_inner(
        &self,
        state: &ParameterState,
        input: &[f64],
        n: usize,
        mode: Mode,
    ) -> Result<(Vec<f64>, ActivationCache, Vec<BatchStats>)> {
        self.check_state(state)?;
        if n == 0 || input.len() != n * self.input_size() {
            return Err(SsflError::invalid(format!(
                "input of length {} does not hold {n} samples of size {}",
                input.len(),
                self.input_size()
            )));
        }
        let w = &state.weights;
        let slot = |i: usize| {
            let s = &self.layout.slots[i];
            &w[s.offset..s.offset + s.len]
        };
        let mut x = input.to_vec();
        let mut entries = Vec::with_capacity(self.ops.len());
        let mut batch_stats = Vec::new();
        for op in &self.ops {
            let (y, entry) = match *op {
                Op::Linear { inp, out, weight, bias } => {
                    (layers::linear_forward(&x, n, inp, out, slot(weight), slot(bias)), OpCache::Input(x))
                }
                Op::Conv { cin, cout, h, w: width, weight, bias } => {
                    let g = ConvGeom { cin, cout, h, w: width };
                    (layers::conv_forward(&x, n, &g, slot(weight), slot(bias)), OpCache::Input(x))
                }
                Op::Norm { channels, spatial, pooling, stats, gamma, beta } => {
                    let use_running = matches!((mode, stats), (Mode::Eval, Some(_)));
                    let NormOut { y, xhat, inv_std, batch_mean, batch_var } = if use_running {
                        let st = &state.norm_stats[stats.unwrap()];
                        layers::norm_forward_fixed(&x, n, channels, spatial, &st.mean, &st.var, slot(gamma), slot(beta))
                    } else {
                        layers::norm_forward_batch(&x, n, channels, spatial, pooling, slot(gamma), slot(beta))
                    };
                    if stats.is_some() && !use_running {
                        batch_stats.push(BatchStats { mean: batch_mean, var: batch_var, count: n * spatial });
                    }
                    (y, OpCache::Norm { xhat, inv_std, batch_stats: !use_running })
                }
                Op::Relu => (layers::relu_forward(&x), OpCache::Input(x)),
                Op::MaxPool { channels, h, w: width } => {
                    let (y, argmax) = layers::maxpool_forward(&x, n, channels, h, width);
                    (y, OpCache::Pool { argmax, in_len: x.len() })
                }
            };
            entries.push(entry);
            x = y;
        }
        let cache = ActivationCache { fingerprint: state.fingerprint(), batch: n, entries };
        Ok((x, cache, batch_stats))
    }

    /// Gradient of the loss with respect to every weight, given the loss
    /// gradient at the logits.
    pub fn backward(&self, state: &ParameterState, cache: &ActivationCache, dlogits: &[f64]) -> Result<Vec<f64>> {
        self.check_state(state)?;
        if cache.fingerprint != state.fingerprint() || cache.entries.len() != self.ops.len() {
            return Err(SsflError::StaleCache("cache was produced with different weights".into()));
        }
        let n = cache.batch;
        if dlogits.len() != n * self.classes() {
            return Err(SsflError::invalid("logit gradient shape does not match the cached batch"));
        }
        let w = &state.weights;
        let mut grad = vec![0.0; w.len()];
        let mut dy = dlogits.to_vec();
        for (op, entry) in self.ops.iter().zip(&cache.entries).rev() {
            dy = match (op, entry) {
                (&Op::Linear { inp, out, weight, bias }, OpCache::Input(x)) => {
                    let (ws, bs) = (&self.layout.slots[weight], &self.layout.slots[bias]);
                    let (dw, db) = split_two(&mut grad, ws, bs);
                    layers::linear_backward(x, &dy, n, inp, out, &w[ws.offset..ws.offset + ws.len], dw, db)
                }
                (&Op::Conv { cin, cout, h, w: width, weight, bias }, OpCache::Input(x)) => {
                    let (ws, bs) = (&self.layout.slots[weight], &self.layout.slots[bias]);
                    let (dw, db) = split_two(&mut grad, ws, bs);
                    let g = ConvGeom { cin, cout, h, w: width };
                    layers::conv_backward(x, &dy, n, &g, &w[ws.offset..ws.offset + ws.len], dw, db)
                }
                (&Op::Norm { channels, spatial, pooling, gamma, beta, .. }, OpCache::Norm { xhat, inv_std, batch_stats }) => {
                    let (gs, bs) = (&self.layout.slots[gamma], &self.layout.slots[beta]);
                    let gamma_vals = &w[gs.offset..gs.offset + gs.len];
                    let (dg, db) = split_two(&mut grad, gs, bs);
                    layers::norm_backward(
                        &dy, xhat, inv_std, n, channels, spatial, pooling, *batch_stats, gamma_vals, dg, db,
                    )
                }
                (Op::Relu, OpCache::Input(x)) => layers::relu_backward(x, &dy),
                (Op::MaxPool { .. }, OpCache::Pool { argmax, in_len }) => layers::maxpool_backward(argmax, &dy, *in_len),
                _ => return Err(SsflError::StaleCache("cache entries do not match the op sequence".into())),
            };
        }
        Ok(grad)
    }

    /// Eval-mode logits in chunks, without building a backward cache.
    pub fn predict(&self, state: &ParameterState, input: &[f64], batch: usize) -> Result<Vec<f64>> {
        const CHUNK: usize = 512;
        let size = self.input_size();
        let mut out = Vec::with_capacity(batch * self.classes());
        let mut start = 0;
        while start < batch {
            let end = (start + CHUNK).min(batch);
            let (logits, _) = self.forward_frozen(state, &input[start * size..end * size], end - start, Mode::Eval)?;
            out.extend(logits);
            start = end;
        }
        Ok(out)
    }
}

struct BatchStats {
    mean: Vec<f64>,
    var: Vec<f64>,
    count: usize,
}

struct Builder {
    ops: Vec<Op>,
    layout: Layout,
    stat_channels: Vec<usize>,
    norm: NormKind,
}

impl Builder {
    fn linear(&mut self, name: &str, inp: usize, out: usize) {
        let weight = self.layout.push(format!("{name}.weight"), vec![out, inp]);
        let bias = self.layout.push(format!("{name}.bias"), vec![out]);
        self.ops.push(Op::Linear { inp, out, weight, bias });
    }

    fn norm(&mut self, name: &str, channels: usize, spatial: usize) -> Result<()> {
        let (pooling, stats) = match self.norm {
            NormKind::None => return Ok(()),
            NormKind::BatchNorm => {
                self.stat_channels.push(channels);
                (Pooling::PerChannel, Some(self.stat_channels.len() - 1))
            }
            NormKind::GroupNorm(groups) => {
                let groups = groups.unwrap_or(DEFAULT_MAX_GROUPS.min(channels));
                if groups == 0 || channels % groups != 0 {
                    return Err(SsflError::invalid(format!("{groups} groups do not divide {channels} channels")));
                }
                (Pooling::PerSampleGroup { groups }, None)
            }
        };
        let gamma = self.layout.push(format!("{name}.gamma"), vec![channels]);
        let beta = self.layout.push(format!("{name}.beta"), vec![channels]);
        self.ops.push(Op::Norm { channels, spatial, pooling, stats, gamma, beta });
        Ok(())
    }
}

/// Disjoint mutable views of two consecutive slots.
fn split_two<'a>(grad: &'a mut [f64], a: &LayerSlot, b: &LayerSlot) -> (&'a mut [f64], &'a mut [f64]) {
    debug_assert_eq!(a.offset + a.len, b.offset);
    let (head, tail) = grad[a.offset..b.offset + b.len].split_at_mut(a.len);
    (head, tail)
}
