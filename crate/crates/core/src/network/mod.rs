//! DeepCNet(l, k): alternating convolution and max-pooling layers evaluated
//! sparsely around per-layer ground states.
//!
//! The network is a chain of convolutions. Layers `1..=l` are spatial
//! (3x3 for the first, 2x2 afterwards, each followed by 2x2 max-pooling); the
//! fully-connected hidden layer is a 2x2 convolution over the final 2x2 field
//! and the classifier is a 1x1 convolution over the resulting single cell.
//! Treating every layer as a convolution lets the same sparse machinery carry
//! the input all the way to the class scores.

mod checkpoint;
mod dense;
mod dropout;
mod gradcheck;
mod pathcount;
mod sgd;
mod sparse;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use dense::DenseTensor;
pub use dropout::{apply_dropout, DropoutSchedule};
pub use gradcheck::{check_gradients, GradientReport, TensorGradientError};
pub use pathcount::{path_count_grid, PathCountGrid};
pub use sgd::SgdMomentum;
pub use sparse::{Gradients, SparseLayerState};

/// Floating-point element type of network parameters and activations.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + AddAssign + Sum + Default + Debug + Send + Sync + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("representable")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Whether a pass samples dropout masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Nonlinearity applied after every convolution except the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `max(x, x / 3)`.
    #[default]
    LeakyRelu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::LeakyRelu => {
                if x > T::zero() {
                    x
                } else {
                    x / T::of(3.0)
                }
            }
            Activation::Identity => x,
        }
    }

    #[inline]
    pub fn derivative<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::LeakyRelu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::one() / T::of(3.0)
                }
            }
            Activation::Identity => T::one(),
        }
    }
}

/// Shape and regularization parameters of a DeepCNet(l, k).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeepCNetConfig {
    /// `l`: number of convolution/max-pooling stages.
    pub depth: usize,
    /// `k`: filters in the first layer; layer `n` has `n * k`.
    pub filters: usize,
    /// `M`: feature channels per input cell.
    pub input_channels: usize,
    pub classes: usize,
    /// Dropout rate on the input of each parameterized layer: conv layers
    /// `1..=l`, the fully-connected layer, then the classifier. Empty means
    /// no dropout.
    #[serde(default)]
    pub dropout: Vec<f64>,
    #[serde(default)]
    pub activation: Activation,
}

impl DeepCNetConfig {
    pub fn new(depth: usize, filters: usize, input_channels: usize, classes: usize) -> Self {
        DeepCNetConfig {
            depth,
            filters,
            input_channels,
            classes,
            dropout: Vec::new(),
            activation: Activation::default(),
        }
    }

    /// Input side `N = 3 * 2^l`.
    pub fn input_side(&self) -> usize {
        3 << self.depth
    }

    /// Width of the fully-connected hidden layer, `(l + 1) k`.
    pub fn hidden_width(&self) -> usize {
        (self.depth + 1) * self.filters
    }

    /// Number of parameterized layers, `l + 2`.
    pub fn layer_count(&self) -> usize {
        self.depth + 2
    }

    pub fn dropout_rates(&self) -> Vec<f64> {
        if self.dropout.is_empty() {
            vec![0.0; self.layer_count()]
        } else {
            self.dropout.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.filters == 0 || self.input_channels == 0 {
            return Err(Error::Config(format!(
                "depth, filters and input channels must be positive (l={}, k={}, M={})",
                self.depth, self.filters, self.input_channels
            )));
        }
        if self.depth > 10 {
            return Err(Error::Config(format!("depth {} is too large", self.depth)));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        if !self.dropout.is_empty() && self.dropout.len() != self.layer_count() {
            return Err(Error::Config(format!(
                "dropout schedule needs {} rates (l + 2), got {}",
                self.layer_count(),
                self.dropout.len()
            )));
        }
        if let Some(r) = self.dropout.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(Error::Config(format!("dropout rate {r} not in [0, 1)")));
        }
        Ok(())
    }

    /// `(filter size, input channels, output channels)` for each layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize, usize)> {
        let k = self.filters;
        let mut shapes = vec![(3, self.input_channels, k)];
        for n in 2..=self.depth {
            shapes.push((2, (n - 1) * k, n * k));
        }
        shapes.push((2, self.depth * k, self.hidden_width()));
        shapes.push((1, self.hidden_width(), self.classes));
        shapes
    }

    /// Spatial side after each layer: conv1, pool1, ..., conv l, pool l,
    /// fully-connected, classifier.
    pub fn spatial_trace(&self) -> Vec<usize> {
        let mut side = self.input_side();
        let mut trace = Vec::new();
        for (i, (filter, _, _)) in self.layer_shapes().into_iter().enumerate() {
            side = side + 1 - filter;
            trace.push(side);
            if i < self.depth {
                side /= 2;
                trace.push(side);
            }
        }
        trace
    }

    /// Channel count after each layer, aligned with `spatial_trace`.
    pub fn channel_trace(&self) -> Vec<usize> {
        let mut trace = Vec::new();
        for (i, (_, _, out)) in self.layer_shapes().into_iter().enumerate() {
            trace.push(out);
            if i < self.depth {
                trace.push(out);
            }
        }
        trace
    }

    /// Renders e.g. `input-100C3-MP2-200C2-MP2-300N-output`.
    pub fn architecture_string(&self) -> String {
        let mut s = String::from("input");
        for n in 1..=self.depth {
            let filter = if n == 1 { 3 } else { 2 };
            s.push_str(&format!("-{}C{}-MP2", n * self.filters, filter));
        }
        s.push_str(&format!("-{}N-output", self.hidden_width()));
        s
    }
}

/// A convolution with weights laid out as `[position][input][output]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub filter: usize,
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<T>,
    pub biases: Vec<T>,
}

impl<T: Scalar> ConvLayer<T> {
    pub fn zeros(filter: usize, inputs: usize, outputs: usize) -> Self {
        ConvLayer {
            filter,
            inputs,
            outputs,
            weights: vec![T::zero(); filter * filter * inputs * outputs],
            biases: vec![T::zero(); outputs],
        }
    }

    /// Uniform weights in `+-sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn random<R: Rng + ?Sized>(filter: usize, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let mut layer = Self::zeros(filter, inputs, outputs);
        let area = (filter * filter) as f64;
        let bound = (6.0 / (area * (inputs + outputs) as f64)).sqrt();
        for w in &mut layer.weights {
            *w = T::of(rng.gen_range(-bound..bound));
        }
        layer
    }

    /// Input-by-output block for filter position `pos`.
    #[inline]
    pub fn position(&self, pos: usize) -> &[T] {
        let n = self.inputs * self.outputs;
        &self.weights[pos * n..(pos + 1) * n]
    }

    /// `acc += W_pos^T x`.
    #[inline]
    pub(crate) fn accumulate(&self, pos: usize, x: &[T], acc: &mut [T]) {
        let block = self.position(pos);
        for (i, &xi) in x.iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            let row = &block[i * self.outputs..(i + 1) * self.outputs];
            for (a, &w) in acc.iter_mut().zip(row) {
                *a += xi * w;
            }
        }
    }

    fn cast<U: Scalar>(&self) -> ConvLayer<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::of(x.to_f64().unwrap())).collect();
        ConvLayer {
            filter: self.filter,
            inputs: self.inputs,
            outputs: self.outputs,
            weights: conv(&self.weights),
            biases: conv(&self.biases),
        }
    }
}

/// Ground state of one convolution: the per-position contributions of its
/// ground-state input, its pre-activation and its output.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ConvGround<T> {
    pub contributions: Vec<T>,
    pub pre: Vec<T>,
    pub out: Vec<T>,
}

impl<T: Scalar> ConvGround<T> {
    pub fn compute(layer: &ConvLayer<T>, input: &[T], activation: Option<Activation>) -> Self {
        let positions = layer.filter * layer.filter;
        let mut contributions = vec![T::zero(); positions * layer.outputs];
        let mut pre = layer.biases.clone();
        for pos in 0..positions {
            let c = &mut contributions[pos * layer.outputs..(pos + 1) * layer.outputs];
            layer.accumulate(pos, input, c);
            for (p, &v) in pre.iter_mut().zip(c.iter()) {
                *p += v;
            }
        }
        let out = match activation {
            Some(a) => pre.iter().map(|&z| a.apply(z)).collect(),
            None => pre.clone(),
        };
        ConvGround {
            contributions,
            pre,
            out,
        }
    }
}

/// A DeepCNet with its parameters and memoized ground states.
#[derive(Debug, Clone)]
pub struct DeepCNet<T> {
    config: DeepCNetConfig,
    layers: Vec<ConvLayer<T>>,
    ground: Vec<ConvGround<T>>,
}

impl<T: Scalar> DeepCNet<T> {
    /// Builds the network with freshly initialized weights.
    pub fn new<R: Rng + ?Sized>(config: DeepCNetConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let layers = config
            .layer_shapes()
            .into_iter()
            .map(|(f, i, o)| ConvLayer::random(f, i, o, rng))
            .collect();
        Self::from_layers(config, layers)
    }

    /// Assembles a network from explicit parameters.
    pub fn from_layers(config: DeepCNetConfig, layers: Vec<ConvLayer<T>>) -> Result<Self> {
        config.validate()?;
        let shapes = config.layer_shapes();
        if layers.len() != shapes.len() {
            return Err(Error::Shape {
                expected: format!("{} layers", shapes.len()),
                actual: format!("{} layers", layers.len()),
            });
        }
        for (i, (layer, &(f, inp, out))) in layers.iter().zip(&shapes).enumerate() {
            let ok = layer.filter == f
                && layer.inputs == inp
                && layer.outputs == out
                && layer.weights.len() == f * f * inp * out
                && layer.biases.len() == out;
            if !ok {
                return Err(Error::Shape {
                    expected: format!("layer {} with {f}x{f} filters, {inp} -> {out}", i + 1),
                    actual: format!(
                        "{}x{} filters, {} -> {} ({} weights, {} biases)",
                        layer.filter,
                        layer.filter,
                        layer.inputs,
                        layer.outputs,
                        layer.weights.len(),
                        layer.biases.len()
                    ),
                });
            }
        }
        let trace = config.spatial_trace();
        debug_assert_eq!(trace[2 * config.depth - 1], 2);
        let mut net = DeepCNet {
            config,
            layers,
            ground: Vec::new(),
        };
        net.refresh_ground_states();
        Ok(net)
    }

    pub fn config(&self) -> &DeepCNetConfig {
        &self.config
    }

    pub fn layers(&self) -> &[ConvLayer<T>] {
        &self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Mutates parameters through `f`, then recomputes the ground states.
    pub fn update_layers(&mut self, f: impl FnOnce(&mut [ConvLayer<T>])) {
        f(&mut self.layers);
        self.refresh_ground_states();
    }

    pub(crate) fn activation_of(&self, layer: usize) -> Option<Activation> {
        (layer + 1 < self.layers.len()).then_some(self.config.activation)
    }

    pub(crate) fn ground(&self) -> &[ConvGround<T>] {
        &self.ground
    }

    /// Propagates an all-zero input through the layers.
    fn refresh_ground_states(&mut self) {
        self.ground = self.ground_chain(None);
    }

    /// Ground-state chain with optional per-layer input masks.
    pub(crate) fn ground_chain(&self, masks: Option<&[Option<Vec<T>>]>) -> Vec<ConvGround<T>> {
        let mut input = vec![T::zero(); self.config.input_channels];
        let mut chain = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            if let Some(Some(mask)) = masks.map(|m| &m[i]) {
                for (x, &s) in input.iter_mut().zip(mask) {
                    *x = *x * s;
                }
            }
            let g = ConvGround::compute(layer, &input, self.activation_of(i));
            input = g.out.clone();
            chain.push(g);
        }
        chain
    }

    /// Ground-state vector of every hidden layer in `spatial_trace` order:
    /// conv1, pool1, ..., conv l, pool l, fully-connected, classifier scores.
    /// Max-pooling leaves a ground state unchanged.
    pub fn compute_ground_states(&self) -> Vec<Vec<T>> {
        let mut out = Vec::new();
        for (i, g) in self.ground.iter().enumerate() {
            out.push(g.out.clone());
            if i < self.config.depth {
                out.push(g.out.clone());
            }
        }
        out
    }

    /// Same network with parameters converted to another precision.
    pub fn cast<U: Scalar>(&self) -> DeepCNet<U> {
        DeepCNet::from_layers(self.config.clone(), self.layers.iter().map(|l| l.cast()).collect())
            .expect("shapes already validated")
    }

    pub fn architecture_string(&self) -> String {
        self.config.architecture_string()
    }
}

/// Index of the largest score; the first one wins ties.
pub fn argmax<T: Scalar>(scores: &[T]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Softmax cross-entropy loss and its gradient with respect to the scores.
pub fn softmax_cross_entropy<T: Scalar>(scores: &[T], label: usize) -> (T, Vec<T>) {
    let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = scores.iter().map(|&s| (s - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    let loss = total.ln() - (scores[label] - max);
    let grad = exps
        .iter()
        .enumerate()
        .map(|(i, &e)| e / total - if i == label { T::one() } else { T::zero() })
        .collect();
    (loss, grad)
}
