//! Sparse evaluation: only cells that differ from the layer's ground state are
//! stored and computed. Each layer keeps two lists (where the active cells
//! are, and what their feature vectors are) plus the shared ground state.

use rand::Rng;

use super::dropout::channel_mask;
use super::{softmax_cross_entropy, ConvGround, ConvLayer, DeepCNet, Mode, Scalar};
use crate::error::{Error, Result};
use crate::raster::SparseFeatureGrid;

const INACTIVE: u32 = u32::MAX;

/// Active locations, their feature vectors and the ground state of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseLayerState<T> {
    side: usize,
    channels: usize,
    locations: Vec<(usize, usize)>,
    features: Vec<T>,
    ground: Vec<T>,
    index: Vec<u32>,
}

impl<T: Scalar> SparseLayerState<T> {
    fn with_locations(side: usize, channels: usize, locations: Vec<(usize, usize)>, ground: Vec<T>) -> Self {
        let mut index = vec![INACTIVE; side * side];
        for (i, &(r, c)) in locations.iter().enumerate() {
            index[r * side + c] = i as u32;
        }
        SparseLayerState {
            side,
            channels,
            features: vec![T::zero(); locations.len() * channels],
            locations,
            ground,
            index,
        }
    }

    /// Input layer built from a feature grid; its ground state is zero.
    pub fn from_grid(grid: &SparseFeatureGrid) -> Self {
        let mut state = Self::with_locations(
            grid.side(),
            grid.channels(),
            grid.locations().to_vec(),
            vec![T::zero(); grid.channels()],
        );
        for (dst, &src) in state.features.iter_mut().zip(grid.features()) {
            *dst = T::of(src as f64);
        }
        state
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn locations(&self) -> &[(usize, usize)] {
        &self.locations
    }

    pub fn active_count(&self) -> usize {
        self.locations.len()
    }

    pub fn ground_state(&self) -> &[T] {
        &self.ground
    }

    pub fn feature(&self, i: usize) -> &[T] {
        &self.features[i * self.channels..(i + 1) * self.channels]
    }

    #[inline]
    pub fn lookup(&self, row: usize, col: usize) -> Option<usize> {
        match self.index[row * self.side + col] {
            INACTIVE => None,
            i => Some(i as usize),
        }
    }

    /// Value at a cell: its feature vector if active, the ground state otherwise.
    pub fn value_at(&self, row: usize, col: usize) -> &[T] {
        match self.lookup(row, col) {
            Some(i) => self.feature(i),
            None => &self.ground,
        }
    }

    /// Dense `side x side x channels` rendering.
    pub fn to_dense(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.side * self.side * self.channels);
        for r in 0..self.side {
            for c in 0..self.side {
                out.extend_from_slice(self.value_at(r, c));
            }
        }
        out
    }

    fn scale_channels(&mut self, mask: &[T]) {
        for v in self.features.chunks_exact_mut(self.channels) {
            for (x, &s) in v.iter_mut().zip(mask) {
                *x = *x * s;
            }
        }
        for (x, &s) in self.ground.iter_mut().zip(mask) {
            *x = *x * s;
        }
    }
}

/// Output cells reached by at least one active input through a window of
/// `window` cells (a convolution filter, or a pooling region when
/// `stride == window`), in row-major order.
fn reached_cells<T: Scalar>(
    input: &SparseLayerState<T>,
    window: usize,
    stride: usize,
    out_side: usize,
) -> Vec<(usize, usize)> {
    let mut mark = vec![false; out_side * out_side];
    for &(r, c) in &input.locations {
        if stride == 1 {
            for dr in 0..window {
                for dc in 0..window {
                    if r >= dr && c >= dc && r - dr < out_side && c - dc < out_side {
                        mark[(r - dr) * out_side + (c - dc)] = true;
                    }
                }
            }
        } else if r / stride < out_side && c / stride < out_side {
            mark[(r / stride) * out_side + c / stride] = true;
        }
    }
    mark.iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| (i / out_side, i % out_side))
        .collect()
}

struct ConvTrace<T> {
    output: SparseLayerState<T>,
    pre: Vec<T>,
}

fn conv_forward<T: Scalar>(
    layer: &ConvLayer<T>,
    ground: &ConvGround<T>,
    input: &SparseLayerState<T>,
    activation: Option<super::Activation>,
) -> ConvTrace<T> {
    let f = layer.filter;
    let out_side = input.side + 1 - f;
    let locations = reached_cells(input, f, 1, out_side);
    let mut output = SparseLayerState::with_locations(out_side, layer.outputs, locations, ground.out.clone());
    let mut pre = vec![T::zero(); output.features.len()];
    for (i, &(r, c)) in output.locations.iter().enumerate() {
        let z = &mut pre[i * layer.outputs..(i + 1) * layer.outputs];
        z.copy_from_slice(&layer.biases);
        for dr in 0..f {
            for dc in 0..f {
                let pos = dr * f + dc;
                match input.lookup(r + dr, c + dc) {
                    Some(j) => layer.accumulate(pos, input.feature(j), z),
                    None => {
                        let g = &ground.contributions[pos * layer.outputs..(pos + 1) * layer.outputs];
                        for (a, &b) in z.iter_mut().zip(g) {
                            *a += b;
                        }
                    }
                }
            }
        }
    }
    match activation {
        Some(act) => {
            for (y, &z) in output.features.iter_mut().zip(&pre) {
                *y = act.apply(z);
            }
        }
        None => output.features.copy_from_slice(&pre),
    }
    ConvTrace { output, pre }
}

struct PoolTrace<T> {
    output: SparseLayerState<T>,
    /// Winning position (0..4, row-major in the 2x2 region) per output channel.
    argmax: Vec<u8>,
}

fn pool_forward<T: Scalar>(input: &SparseLayerState<T>) -> PoolTrace<T> {
    let out_side = input.side / 2;
    let ch = input.channels;
    let locations = reached_cells(input, 2, 2, out_side);
    let mut output = SparseLayerState::with_locations(out_side, ch, locations, input.ground.clone());
    let mut argmax = vec![0u8; output.features.len()];
    for i in 0..output.locations.len() {
        let (r, c) = output.locations[i];
        let cells = [
            input.value_at(2 * r, 2 * c),
            input.value_at(2 * r, 2 * c + 1),
            input.value_at(2 * r + 1, 2 * c),
            input.value_at(2 * r + 1, 2 * c + 1),
        ];
        let dst = &mut output.features[i * ch..(i + 1) * ch];
        let arg = &mut argmax[i * ch..(i + 1) * ch];
        for k in 0..ch {
            let mut best = 0;
            for p in 1..4 {
                if cells[p][k] > cells[best][k] {
                    best = p;
                }
            }
            dst[k] = cells[best][k];
            arg[k] = best as u8;
        }
    }
    PoolTrace { output, argmax }
}

struct StageTrace<T> {
    input: SparseLayerState<T>,
    mask: Option<Vec<T>>,
    conv: ConvTrace<T>,
    ground_pre: Vec<T>,
    pool: Option<PoolTrace<T>>,
}

/// Everything the backward pass needs from a forward pass.
pub(crate) struct ForwardTrace<T> {
    stages: Vec<StageTrace<T>>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn scores(&self) -> Vec<T> {
        let last = &self.stages.last().unwrap().conv.output;
        last.value_at(0, 0).to_vec()
    }

    /// States after every layer, in `spatial_trace` order.
    pub fn states(&self) -> Vec<&SparseLayerState<T>> {
        let mut out = Vec::new();
        for s in &self.stages {
            out.push(&s.conv.output);
            if let Some(p) = &s.pool {
                out.push(&p.output);
            }
        }
        out
    }
}

/// Parameter gradients, one `(weights, biases)` pair per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(net: &DeepCNet<T>) -> Self {
        Gradients {
            layers: net
                .layers()
                .iter()
                .map(|l| (vec![T::zero(); l.weights.len()], vec![T::zero(); l.biases.len()]))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            for (x, &y) in w.iter_mut().zip(ow) {
                *x += y;
            }
            for (x, &y) in b.iter_mut().zip(ob) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for (w, b) in &mut self.layers {
            for x in w.iter_mut().chain(b.iter_mut()) {
                *x = *x * s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.iter().chain(b).all(|x| x.is_finite()))
    }
}

/// Gradient of the loss with respect to one layer state.
struct StateGrad<T> {
    features: Vec<T>,
    ground: Vec<T>,
}

impl<T: Scalar> StateGrad<T> {
    fn zeros(state: &SparseLayerState<T>) -> Self {
        StateGrad {
            features: vec![T::zero(); state.features.len()],
            ground: vec![T::zero(); state.channels],
        }
    }
}

fn add_outer<T: Scalar>(dw: &mut [T], x: &[T], dz: &[T]) {
    let outputs = dz.len();
    for (i, &xi) in x.iter().enumerate() {
        if xi == T::zero() {
            continue;
        }
        for (w, &d) in dw[i * outputs..(i + 1) * outputs].iter_mut().zip(dz) {
            *w += xi * d;
        }
    }
}

fn add_transpose_product<T: Scalar>(block: &[T], dz: &[T], acc: &mut [T]) {
    let outputs = dz.len();
    for (i, a) in acc.iter_mut().enumerate() {
        let row = &block[i * outputs..(i + 1) * outputs];
        let mut s = T::zero();
        for (&w, &d) in row.iter().zip(dz) {
            s += w * d;
        }
        *a += s;
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Scalar>(
    layer: &ConvLayer<T>,
    input: &SparseLayerState<T>,
    trace: &ConvTrace<T>,
    ground_pre: &[T],
    activation: Option<super::Activation>,
    grad_out: &StateGrad<T>,
    dw: &mut [T],
    db: &mut [T],
    need_input_grad: bool,
) -> StateGrad<T> {
    let f = layer.filter;
    let outs = layer.outputs;
    let block = layer.inputs * outs;
    let deriv = |z: T| activation.map_or(T::one(), |a| a.derivative(z));
    let mut grad_in = StateGrad::zeros(input);
    // Output gradients summed per filter position over every use of the
    // input's ground state.
    let mut ground_acc = vec![T::zero(); f * f * outs];

    let mut dz = vec![T::zero(); outs];
    for (i, &(r, c)) in trace.output.locations.iter().enumerate() {
        let dy = &grad_out.features[i * outs..(i + 1) * outs];
        let z = &trace.pre[i * outs..(i + 1) * outs];
        for k in 0..outs {
            dz[k] = dy[k] * deriv(z[k]);
        }
        for (b, &d) in db.iter_mut().zip(&dz) {
            *b += d;
        }
        for dr in 0..f {
            for dc in 0..f {
                let pos = dr * f + dc;
                match input.lookup(r + dr, c + dc) {
                    Some(j) => {
                        add_outer(&mut dw[pos * block..(pos + 1) * block], input.feature(j), &dz);
                        if need_input_grad {
                            let g = &mut grad_in.features[j * layer.inputs..(j + 1) * layer.inputs];
                            add_transpose_product(layer.position(pos), &dz, g);
                        }
                    }
                    None => {
                        for (a, &d) in ground_acc[pos * outs..(pos + 1) * outs].iter_mut().zip(&dz) {
                            *a += d;
                        }
                    }
                }
            }
        }
    }

    // The output ground state itself is a function of the input ground state.
    for k in 0..outs {
        dz[k] = grad_out.ground[k] * deriv(ground_pre[k]);
    }
    for (b, &d) in db.iter_mut().zip(&dz) {
        *b += d;
    }
    for pos in 0..f * f {
        let acc = &mut ground_acc[pos * outs..(pos + 1) * outs];
        for (a, &d) in acc.iter_mut().zip(&dz) {
            *a += d;
        }
        add_outer(&mut dw[pos * block..(pos + 1) * block], &input.ground, acc);
        if need_input_grad {
            add_transpose_product(layer.position(pos), acc, &mut grad_in.ground);
        }
    }
    grad_in
}

fn pool_backward<T: Scalar>(
    input: &SparseLayerState<T>,
    trace: &PoolTrace<T>,
    grad_out: &StateGrad<T>,
) -> StateGrad<T> {
    let ch = input.channels;
    let mut grad_in = StateGrad::zeros(input);
    for (i, &(r, c)) in trace.output.locations.iter().enumerate() {
        for k in 0..ch {
            let p = trace.argmax[i * ch + k] as usize;
            let d = grad_out.features[i * ch + k];
            match input.lookup(2 * r + p / 2, 2 * c + p % 2) {
                Some(j) => grad_in.features[j * ch + k] += d,
                None => grad_in.ground[k] += d,
            }
        }
    }
    for (g, &d) in grad_in.ground.iter_mut().zip(&grad_out.ground) {
        *g += d;
    }
    grad_in
}

impl<T: Scalar> DeepCNet<T> {
    fn check_grid(&self, grid: &SparseFeatureGrid) -> Result<()> {
        let side = self.config().input_side();
        let ch = self.config().input_channels;
        if grid.side() != side || grid.channels() != ch {
            return Err(Error::Shape {
                expected: format!("{side}x{side}x{ch} input"),
                actual: format!("{}x{}x{} grid", grid.side(), grid.side(), grid.channels()),
            });
        }
        Ok(())
    }

    pub(crate) fn forward_trace<R: Rng + ?Sized>(
        &self,
        grid: &SparseFeatureGrid,
        mode: Mode,
        rng: &mut R,
    ) -> Result<ForwardTrace<T>> {
        self.check_grid(grid)?;
        let masks: Vec<Option<Vec<T>>> = match mode {
            Mode::Eval => vec![None; self.layers().len()],
            Mode::Train => self
                .config()
                .dropout_rates()
                .iter()
                .zip(self.layers())
                .map(|(&rate, layer)| channel_mask(layer.inputs, rate, rng))
                .collect(),
        };
        let fresh;
        let ground: &[ConvGround<T>] = if masks.iter().any(Option::is_some) {
            fresh = self.ground_chain(Some(&masks));
            &fresh
        } else {
            self.ground()
        };

        let mut state = SparseLayerState::from_grid(grid);
        let mut stages = Vec::with_capacity(self.layers().len());
        for (i, (layer, mask)) in self.layers().iter().zip(masks).enumerate() {
            if let Some(m) = &mask {
                state.scale_channels(m);
            }
            let conv = conv_forward(layer, &ground[i], &state, self.activation_of(i));
            let pool = (i < self.config().depth).then(|| pool_forward(&conv.output));
            let next = match &pool {
                Some(p) => p.output.clone(),
                None => conv.output.clone(),
            };
            stages.push(StageTrace {
                input: std::mem::replace(&mut state, next),
                mask,
                conv,
                ground_pre: ground[i].pre.clone(),
                pool,
            });
        }
        Ok(ForwardTrace { stages })
    }

    /// Class scores for a sparse input grid.
    pub fn forward_sparse<R: Rng + ?Sized>(&self, grid: &SparseFeatureGrid, mode: Mode, rng: &mut R) -> Result<Vec<T>> {
        Ok(self.forward_trace(grid, mode, rng)?.scores())
    }

    /// Eval-mode sparse states after every layer, in `spatial_trace` order.
    pub fn sparse_states(&self, grid: &SparseFeatureGrid) -> Result<Vec<SparseLayerState<T>>> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let trace = self.forward_trace(grid, Mode::Eval, &mut rng)?;
        Ok(trace.states().into_iter().cloned().collect())
    }

    /// Softmax cross-entropy loss of one sample and its parameter gradients.
    pub fn loss_and_gradients<R: Rng + ?Sized>(
        &self,
        grid: &SparseFeatureGrid,
        label: usize,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(T, Gradients<T>)> {
        if label >= self.config().classes {
            return Err(Error::Config(format!(
                "label {label} outside 0..{}",
                self.config().classes
            )));
        }
        let trace = self.forward_trace(grid, mode, rng)?;
        let (loss, dscores) = softmax_cross_entropy(&trace.scores(), label);
        let mut grads = Gradients::zeros_like(self);

        let last = &trace.stages.last().unwrap().conv.output;
        let mut grad = StateGrad::zeros(last);
        match last.lookup(0, 0) {
            Some(_) => grad.features.copy_from_slice(&dscores),
            None => grad.ground.copy_from_slice(&dscores),
        }

        for (i, stage) in trace.stages.iter().enumerate().rev() {
            if let Some(pool) = &stage.pool {
                grad = pool_backward(&stage.conv.output, pool, &grad);
            }
            let (dw, db) = &mut grads.layers[i];
            let mut grad_in = conv_backward(
                &self.layers()[i],
                &stage.input,
                &stage.conv,
                &stage.ground_pre,
                self.activation_of(i),
                &grad,
                dw,
                db,
                i > 0,
            );
            if let Some(mask) = &stage.mask {
                let ch = mask.len();
                for v in grad_in.features.chunks_exact_mut(ch) {
                    for (x, &s) in v.iter_mut().zip(mask) {
                        *x = *x * s;
                    }
                }
                for (x, &s) in grad_in.ground.iter_mut().zip(mask) {
                    *x = *x * s;
                }
            }
            grad = grad_in;
        }
        Ok((loss, grads))
    }
}
