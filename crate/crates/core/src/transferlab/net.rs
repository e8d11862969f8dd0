use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::TransferError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w }
    }

    pub fn vector(n: usize) -> Self {
        Self { c: n, h: 1, w: 1 }
    }

    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Channel-major activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Shape,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn from_data(shape: Shape, data: Vec<f64>) -> Result<Self, TransferError> {
        if data.len() != shape.len() {
            return Err(TransferError::ShapeMismatch(format!(
                "{} values for shape {shape:?}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// `[0, 1]`-scaled CHW tensor from interleaved 8-bit RGB.
    pub fn from_rgb8(width: usize, height: usize, rgb: &[u8]) -> Result<Self, TransferError> {
        if rgb.len() != 3 * width * height {
            return Err(TransferError::ShapeMismatch(format!(
                "{} bytes for a {width}x{height} RGB image",
                rgb.len()
            )));
        }
        let plane = width * height;
        let mut data = vec![0.0; 3 * plane];
        for (i, px) in rgb.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + i] = px[c] as f64 / 255.0;
            }
        }
        Ok(Self {
            shape: Shape::new(3, height, width),
            data,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv {
    pub kh: usize,
    pub kw: usize,
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
    /// `[cout][cin][kh][kw]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv {
    pub fn zeros(kh: usize, kw: usize, cin: usize, cout: usize, stride: usize) -> Self {
        Self {
            kh,
            kw,
            cin,
            cout,
            stride,
            weight: vec![0.0; cout * cin * kh * kw],
            bias: vec![0.0; cout],
        }
    }

    fn out_shape(&self, s: Shape) -> Option<Shape> {
        if s.c != self.cin || s.h < self.kh || s.w < self.kw || self.stride == 0 {
            return None;
        }
        Some(Shape::new(
            self.cout,
            (s.h - self.kh) / self.stride + 1,
            (s.w - self.kw) / self.stride + 1,
        ))
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        let o = self.out_shape(x.shape).expect("shape checked at construction");
        let (h, w) = (x.shape.h, x.shape.w);
        let s = self.stride;
        let mut out = vec![0.0; o.len()];
        for co in 0..self.cout {
            let plane = &mut out[co * o.h * o.w..(co + 1) * o.h * o.w];
            plane.fill(self.bias[co]);
            for ci in 0..self.cin {
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        let wv = self.weight[((co * self.cin + ci) * self.kh + ky) * self.kw + kx];
                        for oy in 0..o.h {
                            let row = &x.data[(ci * h + oy * s + ky) * w + kx..];
                            let dst = &mut plane[oy * o.w..(oy + 1) * o.w];
                            for (ox, d) in dst.iter_mut().enumerate() {
                                *d += wv * row[ox * s];
                            }
                        }
                    }
                }
            }
        }
        Tensor { shape: o, data: out }
    }

    /// Accumulates parameter gradients; returns the input gradient when asked.
    fn backward(&self, x: &Tensor, dout: &Tensor, dw: &mut [f64], db: &mut [f64], want_input: bool) -> Option<Tensor> {
        let o = dout.shape;
        let (h, w) = (x.shape.h, x.shape.w);
        let s = self.stride;
        let mut dx = want_input.then(|| Tensor::zeros(x.shape));
        for co in 0..self.cout {
            let g = &dout.data[co * o.h * o.w..(co + 1) * o.h * o.w];
            db[co] += g.iter().sum::<f64>();
            for ci in 0..self.cin {
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        let k = ((co * self.cin + ci) * self.kh + ky) * self.kw + kx;
                        let mut acc = 0.0;
                        for oy in 0..o.h {
                            let row = &x.data[(ci * h + oy * s + ky) * w + kx..];
                            let grow = &g[oy * o.w..(oy + 1) * o.w];
                            for (ox, gv) in grow.iter().enumerate() {
                                acc += gv * row[ox * s];
                            }
                        }
                        dw[k] += acc;
                        if let Some(dx) = dx.as_mut() {
                            let wv = self.weight[k];
                            for oy in 0..o.h {
                                let base = (ci * h + oy * s + ky) * w + kx;
                                let grow = &g[oy * o.w..(oy + 1) * o.w];
                                for (ox, gv) in grow.iter().enumerate() {
                                    dx.data[base + ox * s] += wv * gv;
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    /// `[outputs][inputs]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        let data = (0..self.outputs)
            .map(|o| {
                let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
                self.bias[o] + row.iter().zip(&x.data).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        Tensor {
            shape: Shape::vector(self.outputs),
            data,
        }
    }

    fn backward(&self, x: &Tensor, dout: &Tensor, dw: &mut [f64], db: &mut [f64], want_input: bool) -> Option<Tensor> {
        for (o, g) in dout.data.iter().enumerate() {
            db[o] += g;
            for (d, xi) in dw[o * self.inputs..(o + 1) * self.inputs].iter_mut().zip(&x.data) {
                *d += g * xi;
            }
        }
        want_input.then(|| {
            let mut dx = Tensor::zeros(x.shape);
            for (o, g) in dout.data.iter().enumerate() {
                for (d, wv) in dx.data.iter_mut().zip(&self.weight[o * self.inputs..(o + 1) * self.inputs]) {
                    *d += wv * g;
                }
            }
            dx
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    Conv(Conv),
    Relu,
    GlobalAvgPool,
    Linear(Linear),
}

impl Layer {
    fn out_shape(&self, s: Shape) -> Option<Shape> {
        match self {
            Layer::Conv(c) => c.out_shape(s),
            Layer::Relu => Some(s),
            Layer::GlobalAvgPool => Some(Shape::vector(s.c)),
            Layer::Linear(l) => (s.len() == l.inputs).then_some(Shape::vector(l.outputs)),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        match self {
            Layer::Conv(c) => c.forward(x),
            Layer::Relu => Tensor {
                shape: x.shape,
                data: x.data.iter().map(|v| v.max(0.0)).collect(),
            },
            Layer::GlobalAvgPool => {
                let plane = x.shape.h * x.shape.w;
                Tensor {
                    shape: Shape::vector(x.shape.c),
                    data: x.data.chunks_exact(plane).map(|p| p.iter().sum::<f64>() / plane as f64).collect(),
                }
            }
            Layer::Linear(l) => l.forward(x),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv(c) => c.weight.len() + c.bias.len(),
            Layer::Linear(l) => l.weight.len() + l.bias.len(),
            _ => 0,
        }
    }

    /// Weights followed by biases.
    pub fn params(&self) -> (&[f64], &[f64]) {
        match self {
            Layer::Conv(c) => (&c.weight, &c.bias),
            Layer::Linear(l) => (&l.weight, &l.bias),
            _ => (&[], &[]),
        }
    }

    pub fn params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        match self {
            Layer::Conv(c) => (&mut c.weight, &mut c.bias),
            Layer::Linear(l) => (&mut l.weight, &mut l.bias),
            _ => (&mut [], &mut []),
        }
    }
}

/// Layers before this index form the extractor of the default net.
pub const FEATURE_CUT: usize = 5;

/// Architecture of the default convolutional net.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchSpec {
    pub input_size: usize,
    pub conv1_kernel: usize,
    pub conv1_channels: usize,
    pub conv1_stride: usize,
    pub conv2_kernel: usize,
    pub conv2_channels: usize,
    pub conv2_stride: usize,
}

impl Default for ArchSpec {
    fn default() -> Self {
        Self {
            input_size: 64,
            conv1_kernel: 5,
            conv1_channels: 8,
            conv1_stride: 2,
            conv2_kernel: 3,
            conv2_channels: 16,
            conv2_stride: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyNet {
    pub input: Shape,
    pub layers: Vec<Layer>,
    /// Layers `[0, feature_cut)` form the feature extractor.
    pub feature_cut: usize,
}

/// Per-layer activations of one forward pass; `acts[0]` is the input.
pub struct Trace {
    pub acts: Vec<Tensor>,
}

impl Trace {
    pub fn logits(&self) -> &Tensor {
        self.acts.last().expect("trace holds the input at least")
    }
}

fn he_normal(rng: &mut ChaCha8Rng, fan_in: usize, out: &mut [f64]) {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    for w in out {
        *w = normal.sample(rng);
    }
}

impl TinyNet {
    pub fn new(input: Shape, layers: Vec<Layer>, feature_cut: usize) -> Result<Self, TransferError> {
        if feature_cut > layers.len() {
            return Err(TransferError::InvalidConfig(format!(
                "feature_cut {feature_cut} exceeds {} layers",
                layers.len()
            )));
        }
        let mut s = input;
        for (i, l) in layers.iter().enumerate() {
            s = l
                .out_shape(s)
                .ok_or_else(|| TransferError::ShapeMismatch(format!("layer {i} cannot take input {s:?}")))?;
        }
        Ok(Self {
            input,
            layers,
            feature_cut,
        })
    }

    /// conv-relu-conv-relu-gap-linear with zero parameters.
    pub fn zeros(arch: &ArchSpec, classes: usize) -> Result<Self, TransferError> {
        let layers = vec![
            Layer::Conv(Conv::zeros(arch.conv1_kernel, arch.conv1_kernel, 3, arch.conv1_channels, arch.conv1_stride)),
            Layer::Relu,
            Layer::Conv(Conv::zeros(
                arch.conv2_kernel,
                arch.conv2_kernel,
                arch.conv1_channels,
                arch.conv2_channels,
                arch.conv2_stride,
            )),
            Layer::Relu,
            Layer::GlobalAvgPool,
            Layer::Linear(Linear::zeros(arch.conv2_channels, classes)),
        ];
        Self::new(Shape::new(3, arch.input_size, arch.input_size), layers, FEATURE_CUT)
    }

    /// He-normal weights everywhere, small positive conv biases, zero
    /// linear biases.
    pub fn random(arch: &ArchSpec, classes: usize, seed: u64) -> Result<Self, TransferError> {
        let mut net = Self::zeros(arch, classes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut net.layers {
            match layer {
                Layer::Conv(c) => {
                    he_normal(&mut rng, c.cin * c.kh * c.kw, &mut c.weight);
                    c.bias.fill(0.01);
                }
                Layer::Linear(l) => he_normal(&mut rng, l.inputs, &mut l.weight),
                _ => {}
            }
        }
        Ok(net)
    }

    /// Redraws every layer at or after `feature_cut`: linear weights with
    /// standard deviation 0.01 and zero biases, so logits start near
    /// uniform. A confident random head drives training into the all-zero
    /// feature saddle.
    pub fn reinit_head(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.01).expect("valid deviation");
        for layer in &mut self.layers[self.feature_cut..] {
            match layer {
                Layer::Conv(c) => {
                    he_normal(&mut rng, c.cin * c.kh * c.kw, &mut c.weight);
                    c.bias.fill(0.01);
                }
                Layer::Linear(l) => {
                    l.weight.iter_mut().for_each(|w| *w = normal.sample(&mut rng));
                    l.bias.fill(0.0);
                }
                _ => {}
            }
        }
    }

    pub fn classes(&self) -> usize {
        self.shape_after(self.layers.len()).len()
    }

    /// Activation shape after the first `upto` layers.
    pub fn shape_after(&self, upto: usize) -> Shape {
        self.layers[..upto]
            .iter()
            .fold(self.input, |s, l| l.out_shape(s).expect("validated"))
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// `(layer, offset)` of flat parameter `k`; weights precede biases.
    pub fn locate_param(&self, mut k: usize) -> (usize, usize) {
        for (i, l) in self.layers.iter().enumerate() {
            if k < l.param_count() {
                return (i, k);
            }
            k -= l.param_count();
        }
        panic!("parameter index out of range");
    }

    pub fn param(&self, k: usize) -> f64 {
        let (i, off) = self.locate_param(k);
        let (w, b) = self.layers[i].params();
        if off < w.len() {
            w[off]
        } else {
            b[off - w.len()]
        }
    }

    pub fn set_param(&mut self, k: usize, v: f64) {
        let (i, off) = self.locate_param(k);
        let (w, b) = self.layers[i].params_mut();
        if off < w.len() {
            w[off] = v;
        } else {
            b[off - w.len()] = v;
        }
    }

    pub fn check_input(&self, x: &Tensor) -> Result<(), TransferError> {
        if x.shape != self.input || x.data.len() != x.shape.len() {
            return Err(TransferError::ShapeMismatch(format!(
                "expected input {:?}, got {:?}",
                self.input, x.shape
            )));
        }
        Ok(())
    }

    /// Runs layers `[from, to)` on an activation of the matching shape.
    pub fn run_range(&self, x: &Tensor, from: usize, to: usize) -> Result<Tensor, TransferError> {
        if to > self.layers.len() || from > to {
            return Err(TransferError::InvalidConfig(format!("bad layer range {from}..{to}")));
        }
        if x.shape != self.shape_after(from) {
            return Err(TransferError::ShapeMismatch(format!(
                "layer {from} expects {:?}, got {:?}",
                self.shape_after(from),
                x.shape
            )));
        }
        Ok(self.layers[from..to].iter().fold(x.clone(), |a, l| l.forward(&a)))
    }

    /// Activations from layers `[from, len)`, keeping every intermediate.
    pub fn trace_from(&self, x: Tensor, from: usize) -> Trace {
        let mut acts = vec![x];
        for l in &self.layers[from..] {
            let next = l.forward(acts.last().expect("nonempty"));
            acts.push(next);
        }
        Trace { acts }
    }
}

/// Applies the first `upto` layers (all when `None`).
pub fn forward(net: &TinyNet, image: &Tensor, upto: Option<usize>) -> Result<Tensor, TransferError> {
    net.check_input(image)?;
    net.run_range(image, 0, upto.unwrap_or(net.layers.len()))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `-log softmax(logits)[label]`, computed stably.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    lse - logits[label]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreezeSchedule {
    /// Layers `[0, frozen_prefix_layers)` receive no updates.
    pub frozen_prefix_layers: usize,
    /// From this step on, every layer trains.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unfreeze_at_step: Option<u64>,
}

impl FreezeSchedule {
    pub fn none() -> Self {
        Self {
            frozen_prefix_layers: 0,
            unfreeze_at_step: None,
        }
    }

    pub fn frozen(prefix: usize) -> Self {
        Self {
            frozen_prefix_layers: prefix,
            unfreeze_at_step: None,
        }
    }

    /// First layer that updates at `step`.
    pub fn first_trainable(&self, step: u64) -> usize {
        match self.unfreeze_at_step {
            Some(k) if step >= k => 0,
            _ => self.frozen_prefix_layers,
        }
    }

    pub fn label(&self) -> String {
        match self.unfreeze_at_step {
            Some(k) => format!("frozen {} until step {k}", self.frozen_prefix_layers),
            None => format!("frozen {}", self.frozen_prefix_layers),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub steps: u64,
    pub batch_size: usize,
    /// Batch shuffling seed. Experiments derive their own per run.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.02,
            momentum: 0.9,
            steps: 600,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TransferError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TransferError::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TransferError::InvalidConfig("momentum must lie in [0, 1)".into()));
        }
        if self.batch_size < 1 {
            return Err(TransferError::InvalidConfig("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// SGD state: one velocity buffer per parameterized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    velocity: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Optimizer {
    pub fn new(net: &TinyNet) -> Self {
        Self {
            velocity: net
                .layers
                .iter()
                .map(|l| {
                    let (w, b) = l.params();
                    (vec![0.0; w.len()], vec![0.0; b.len()])
                })
                .collect(),
        }
    }

    /// Zeroes the velocity of layers at or after `from`.
    pub fn reset_from(&mut self, from: usize) {
        for (w, b) in &mut self.velocity[from..] {
            w.fill(0.0);
            b.fill(0.0);
        }
    }
}

/// One training example, either an image or an activation at `start_layer`.
pub struct BatchItem<'a> {
    pub input: &'a Tensor,
    pub label: usize,
}

/// Parameter gradients of layers `[first, len)`.
pub struct Gradients {
    pub first: usize,
    pub grads: Vec<(Vec<f64>, Vec<f64>)>,
}

/// Mean cross-entropy over the batch and its gradient for layers at or
/// after `first`. Inputs are activations entering layer `start_layer`.
pub fn loss_and_gradients(
    net: &TinyNet,
    batch: &[BatchItem],
    start_layer: usize,
    first: usize,
) -> Result<(f64, Gradients), TransferError> {
    if batch.is_empty() {
        return Err(TransferError::EmptyInput);
    }
    let first = first.max(start_layer);
    let classes = net.classes();
    let expected = net.shape_after(start_layer);
    let mut grads: Vec<(Vec<f64>, Vec<f64>)> = net.layers[first..]
        .iter()
        .map(|l| {
            let (w, b) = l.params();
            (vec![0.0; w.len()], vec![0.0; b.len()])
        })
        .collect();
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for item in batch {
        if item.input.shape != expected {
            return Err(TransferError::ShapeMismatch(format!(
                "layer {start_layer} expects {expected:?}, got {:?}",
                item.input.shape
            )));
        }
        if item.label >= classes {
            return Err(TransferError::InvalidConfig(format!("label {} out of range", item.label)));
        }
        let trace = net.trace_from(item.input.clone(), start_layer);
        let logits = &trace.logits().data;
        loss += cross_entropy(logits, item.label) * scale;
        let mut delta = Tensor {
            shape: Shape::vector(classes),
            data: softmax(logits),
        };
        delta.data[item.label] -= 1.0;
        delta.data.iter_mut().for_each(|d| *d *= scale);
        for li in (first..net.layers.len()).rev() {
            let x = &trace.acts[li - start_layer];
            let want_input = li > first;
            let (dw, db) = &mut grads[li - first];
            let next = match &net.layers[li] {
                Layer::Conv(c) => c.backward(x, &delta, dw, db, want_input),
                Layer::Linear(l) => l.backward(x, &delta, dw, db, want_input),
                Layer::Relu => Some(Tensor {
                    shape: x.shape,
                    data: x.data.iter().zip(&delta.data).map(|(v, d)| if *v > 0.0 { *d } else { 0.0 }).collect(),
                }),
                Layer::GlobalAvgPool => {
                    let plane = x.shape.h * x.shape.w;
                    let mut dx = Tensor::zeros(x.shape);
                    for (c, d) in delta.data.iter().enumerate() {
                        dx.data[c * plane..(c + 1) * plane].fill(d / plane as f64);
                    }
                    Some(dx)
                }
            };
            match next {
                Some(n) if want_input => delta = n,
                _ => break,
            }
        }
    }
    Ok((loss, Gradients { first, grads }))
}

/// One momentum-SGD step under `schedule`. Layers below the first trainable
/// layer are neither differentiated nor touched. Returns the batch loss
/// before the update.
#[allow(clippy::too_many_arguments)]
pub fn backward_and_step(
    net: &mut TinyNet,
    optimizer: &mut Optimizer,
    batch: &[BatchItem],
    start_layer: usize,
    schedule: &FreezeSchedule,
    config: &TrainConfig,
    step_index: u64,
) -> Result<f64, TransferError> {
    let first = schedule.first_trainable(step_index);
    if first < start_layer && first < net.layers.len() {
        return Err(TransferError::InvalidConfig(format!(
            "layer {first} must train at step {step_index} but inputs start at layer {start_layer}"
        )));
    }
    let (loss, grads) = loss_and_gradients(net, batch, start_layer, first)?;
    if !loss.is_finite() {
        return Err(TransferError::NumericalOverflow { step: step_index });
    }
    for (k, (gw, gb)) in grads.grads.iter().enumerate() {
        let li = grads.first + k;
        let (vw, vb) = &mut optimizer.velocity[li];
        let (w, b) = net.layers[li].params_mut();
        for ((p, v), g) in w.iter_mut().zip(vw.iter_mut()).zip(gw) {
            *v = config.momentum * *v + g;
            *p -= config.learning_rate * *v;
        }
        for ((p, v), g) in b.iter_mut().zip(vb.iter_mut()).zip(gb) {
            *v = config.momentum * *v + g;
            *p -= config.learning_rate * *v;
        }
    }
    Ok(loss)
}

/// Loss of a single example, used by gradient checks.
pub fn example_loss(net: &TinyNet, image: &Tensor, label: usize) -> Result<f64, TransferError> {
    Ok(cross_entropy(&forward(net, image, None)?.data, label))
}

pub fn random_image<R: Rng>(shape: Shape, rng: &mut R) -> Tensor {
    Tensor {
        shape,
        data: (0..shape.len()).map(|_| rng.random::<f64>()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_arch() -> ArchSpec {
        ArchSpec {
            input_size: 16,
            ..Default::default()
        }
    }

    #[test]
    fn default_shapes_chain() {
        let net = TinyNet::zeros(&ArchSpec::default(), 10).unwrap();
        assert_eq!(net.shape_after(1), Shape::new(8, 30, 30));
        assert_eq!(net.shape_after(3), Shape::new(16, 14, 14));
        assert_eq!(net.shape_after(5), Shape::vector(16));
        assert_eq!(net.classes(), 10);
        assert_eq!(net.param_count(), 8 * 75 + 8 + 16 * 72 + 16 + 160 + 10);
        let bad = TinyNet::new(Shape::new(3, 8, 8), vec![Layer::Linear(Linear::zeros(5, 2))], 0);
        assert!(matches!(bad, Err(TransferError::ShapeMismatch(_))));
    }

    #[test]
    fn zero_network_is_uniform() {
        let net = TinyNet::zeros(&ArchSpec::default(), 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random_image(net.input, &mut rng);
        let logits = forward(&net, &x, None).unwrap();
        assert!(logits.data.iter().all(|v| *v == 0.0));
        for p in softmax(&logits.data) {
            assert!((p - 1.0 / 7.0).abs() < 1e-15);
        }
        assert!((cross_entropy(&logits.data, 3) - 7f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn zero_input_gives_bias() {
        let mut net = TinyNet::random(&small_arch(), 3, 1).unwrap();
        let Layer::Conv(c) = &mut net.layers[0] else { unreachable!() };
        c.bias = (0..8).map(|i| i as f64 * 0.3 - 1.0).collect();
        let bias = c.bias.clone();
        let out = forward(&net, &Tensor::zeros(net.input), Some(1)).unwrap();
        let plane = out.shape.h * out.shape.w;
        for (co, b) in bias.iter().enumerate() {
            assert!(out.data[co * plane..(co + 1) * plane].iter().all(|v| v == b));
        }
    }

    #[test]
    fn pooling_matches_direct_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = TinyNet::random(&ArchSpec::default(), 4, 9).unwrap();
        let x = random_image(net.input, &mut rng);
        let pre = forward(&net, &x, Some(4)).unwrap();
        let pooled = forward(&net, &x, Some(5)).unwrap();
        for c in 0..pre.shape.c {
            let mut s = 0.0;
            for y in 0..pre.shape.h {
                for xx in 0..pre.shape.w {
                    s += pre.data[(c * pre.shape.h + y) * pre.shape.w + xx];
                }
            }
            assert!((pooled.data[c] - s / (pre.shape.h * pre.shape.w) as f64).abs() <= 1e-12);
        }
    }

    #[test]
    fn conv_matches_direct_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = TinyNet::random(&small_arch(), 2, 3).unwrap();
        let x = random_image(net.input, &mut rng);
        let out = forward(&net, &x, Some(1)).unwrap();
        let Layer::Conv(c) = &net.layers[0] else { unreachable!() };
        for co in 0..c.cout {
            for oy in 0..out.shape.h {
                for ox in 0..out.shape.w {
                    let mut s = c.bias[co];
                    for ci in 0..3 {
                        for ky in 0..5 {
                            for kx in 0..5 {
                                s += c.weight[((co * 3 + ci) * 5 + ky) * 5 + kx]
                                    * x.data[(ci * 16 + oy * 2 + ky) * 16 + ox * 2 + kx];
                            }
                        }
                    }
                    let got = out.data[(co * out.shape.h + oy) * out.shape.w + ox];
                    assert!((got - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let z: Vec<f64> = (0..10).map(|_| rng.random_range(-30.0..30.0)).collect();
            assert!((softmax(&z).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    fn batch_of<'a>(xs: &'a [Tensor]) -> Vec<BatchItem<'a>> {
        xs.iter().enumerate().map(|(i, x)| BatchItem { input: x, label: i % 3 }).collect()
    }

    #[test]
    fn fully_frozen_changes_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = TinyNet::random(&small_arch(), 3, 4).unwrap();
        let xs: Vec<_> = (0..4).map(|_| random_image(net.input, &mut rng)).collect();
        let before = net.clone();
        let mut opt = Optimizer::new(&net);
        let sched = FreezeSchedule::frozen(net.layers.len());
        let loss = backward_and_step(&mut net, &mut opt, &batch_of(&xs), 0, &sched, &TrainConfig::default(), 0).unwrap();
        assert!(loss > 0.0);
        assert_eq!(net, before);
    }

    #[test]
    fn nothing_frozen_changes_all() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = TinyNet::random(&small_arch(), 3, 4).unwrap();
        let xs: Vec<_> = (0..4).map(|_| random_image(net.input, &mut rng)).collect();
        let before = net.clone();
        let mut opt = Optimizer::new(&net);
        backward_and_step(&mut net, &mut opt, &batch_of(&xs), 0, &FreezeSchedule::none(), &TrainConfig::default(), 0)
            .unwrap();
        for (a, b) in net.layers.iter().zip(&before.layers) {
            if a.param_count() > 0 {
                assert_ne!(a.params().0, b.params().0);
            }
        }
    }

    #[test]
    fn overflow_is_reported() {
        let mut net = TinyNet::random(&small_arch(), 3, 4).unwrap();
        let x = Tensor::zeros(net.input);
        let Layer::Linear(l) = &mut net.layers[5] else { unreachable!() };
        l.bias = vec![f64::INFINITY, 0.0, 0.0];
        let mut opt = Optimizer::new(&net);
        let r = backward_and_step(
            &mut net,
            &mut opt,
            &[BatchItem { input: &x, label: 1 }],
            0,
            &FreezeSchedule::none(),
            &TrainConfig::default(),
            3,
        );
        assert_eq!(r, Err(TransferError::NumericalOverflow { step: 3 }));
    }

    #[test]
    fn head_only_from_cached_features_matches_full_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = TinyNet::random(&small_arch(), 3, 4).unwrap();
        let xs: Vec<_> = (0..5).map(|_| random_image(net.input, &mut rng)).collect();
        let feats: Vec<_> = xs.iter().map(|x| forward(&net, x, Some(5)).unwrap()).collect();
        let sched = FreezeSchedule::frozen(5);
        let cfg = TrainConfig::default();
        let (mut a, mut b) = (net.clone(), net.clone());
        let (mut oa, mut ob) = (Optimizer::new(&a), Optimizer::new(&b));
        for step in 0..3 {
            let la = backward_and_step(&mut a, &mut oa, &batch_of(&xs), 0, &sched, &cfg, step).unwrap();
            let lb = backward_and_step(&mut b, &mut ob, &batch_of(&feats), 5, &sched, &cfg, step).unwrap();
            assert_eq!(la, lb);
        }
        assert_eq!(a, b);
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut net = TinyNet::random(&small_arch(), 3, 4).unwrap();
            let xs: Vec<_> = (0..6).map(|_| random_image(net.input, &mut rng)).collect();
            let mut opt = Optimizer::new(&net);
            (0..5)
                .map(|s| {
                    backward_and_step(&mut net, &mut opt, &batch_of(&xs), 0, &FreezeSchedule::none(), &TrainConfig::default(), s)
                        .unwrap()
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
