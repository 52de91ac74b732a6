//! Minimal dense/conv/transposed-conv network with exact backprop, Adam,
//! and the masked squared-error loss used by the learners.
//!
//! Everything is f64 and deterministic: parameters live in one flat vector
//! with per-layer offsets, initialized from a seeded fan-in-scaled uniform.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
}

impl Activation {
    fn apply(self, z: &mut [f64]) {
        match self {
            Activation::Linear => {}
            Activation::Relu => {
                for v in z.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            Activation::Sigmoid => {
                for v in z.iter_mut() {
                    *v = 1.0 / (1.0 + (-*v).exp());
                }
            }
        }
    }

    /// Multiplies `dy` by the activation derivative, expressed through the
    /// post-activation value `a`.
    fn backward(self, a: &[f64], dy: &mut [f64]) {
        match self {
            Activation::Linear => {}
            Activation::Relu => {
                for (d, &v) in dy.iter_mut().zip(a) {
                    if v <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            Activation::Sigmoid => {
                for (d, &v) in dy.iter_mut().zip(a) {
                    *d *= v * (1.0 - v);
                }
            }
        }
    }

    fn tag(self) -> &'static str {
        match self {
            Activation::Linear => "linear",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
        }
    }

    fn from_tag(tag: &str) -> Option<Activation> {
        match tag {
            "linear" => Some(Activation::Linear),
            "relu" => Some(Activation::Relu),
            "sigmoid" => Some(Activation::Sigmoid),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Dense {
        inputs: usize,
        outputs: usize,
        bias: bool,
    },
    Conv {
        in_h: usize,
        in_w: usize,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    TransposedConv {
        in_h: usize,
        in_w: usize,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
}

impl LayerKind {
    pub fn input_len(&self) -> usize {
        match *self {
            LayerKind::Dense { inputs, .. } => inputs,
            LayerKind::Conv {
                in_h, in_w, in_ch, ..
            }
            | LayerKind::TransposedConv {
                in_h, in_w, in_ch, ..
            } => in_h * in_w * in_ch,
        }
    }

    pub fn output_shape(&self) -> (usize, usize, usize) {
        match *self {
            LayerKind::Dense { outputs, .. } => (1, 1, outputs),
            LayerKind::Conv {
                in_h,
                in_w,
                out_ch,
                kernel,
                stride,
                pad,
                ..
            } => {
                let out_h = (in_h + 2 * pad - kernel) / stride + 1;
                let out_w = (in_w + 2 * pad - kernel) / stride + 1;
                (out_h, out_w, out_ch)
            }
            LayerKind::TransposedConv {
                in_h,
                in_w,
                out_ch,
                kernel,
                stride,
                pad,
                ..
            } => {
                let out_h = (in_h - 1) * stride + kernel - 2 * pad;
                let out_w = (in_w - 1) * stride + kernel - 2 * pad;
                (out_h, out_w, out_ch)
            }
        }
    }

    pub fn output_len(&self) -> usize {
        let (h, w, c) = self.output_shape();
        h * w * c
    }

    pub fn param_count(&self) -> usize {
        match *self {
            LayerKind::Dense {
                inputs,
                outputs,
                bias,
            } => inputs * outputs + if bias { outputs } else { 0 },
            LayerKind::Conv {
                in_ch,
                out_ch,
                kernel,
                ..
            }
            | LayerKind::TransposedConv {
                in_ch,
                out_ch,
                kernel,
                ..
            } => in_ch * out_ch * kernel * kernel + out_ch,
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerKind::Dense { inputs, .. } => inputs,
            LayerKind::Conv { in_ch, kernel, .. }
            | LayerKind::TransposedConv { in_ch, kernel, .. } => in_ch * kernel * kernel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layer {
    pub kind: LayerKind,
    pub activation: Activation,
}

/// Validated layer chain; the unit of architecture configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub layers: Vec<Layer>,
}

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("layer {index}: input length {got} does not chain (expected {expected})")]
    ShapeMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("network has no layers")]
    Empty,
    #[error("layer {layer}: non-finite activation")]
    NonFinite { layer: usize },
    #[error("input length {got}, network expects {expected}")]
    BadInput { expected: usize, got: usize },
    #[error("non-finite gradient; update aborted")]
    NonFiniteGrad,
    #[error("length mismatch between parameters and {what}")]
    LengthMismatch { what: &'static str },
    #[error("bad snapshot: {0}")]
    BadSnapshot(String),
}

impl NetworkSpec {
    pub fn new(layers: Vec<Layer>) -> Result<NetworkSpec, NnError> {
        if layers.is_empty() {
            return Err(NnError::Empty);
        }
        for i in 1..layers.len() {
            let expected = layers[i - 1].kind.output_len();
            let got = layers[i].kind.input_len();
            if expected != got {
                return Err(NnError::ShapeMismatch {
                    index: i,
                    expected,
                    got,
                });
            }
        }
        Ok(NetworkSpec { layers })
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].kind.input_len()
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().expect("non-empty").kind.output_len()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.kind.param_count()).sum()
    }

    /// Parameter offset of each layer in the flat vector.
    pub fn offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut acc = 0;
        for layer in &self.layers {
            offsets.push(acc);
            acc += layer.kind.param_count();
        }
        offsets
    }

    /// Compact textual encoding, stable across runs, used in snapshots.
    pub fn encode(&self) -> String {
        let mut s = String::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                s.push('|');
            }
            match layer.kind {
                LayerKind::Dense {
                    inputs,
                    outputs,
                    bias,
                } => {
                    let _ = write!(
                        s,
                        "dense({inputs},{outputs},{},{})",
                        if bias { "bias" } else { "nobias" },
                        layer.activation.tag()
                    );
                }
                LayerKind::Conv {
                    in_h,
                    in_w,
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                    pad,
                } => {
                    let _ = write!(
                        s,
                        "conv({in_h}x{in_w}x{in_ch},{out_ch},k{kernel},s{stride},p{pad},{})",
                        layer.activation.tag()
                    );
                }
                LayerKind::TransposedConv {
                    in_h,
                    in_w,
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                    pad,
                } => {
                    let _ = write!(
                        s,
                        "tconv({in_h}x{in_w}x{in_ch},{out_ch},k{kernel},s{stride},p{pad},{})",
                        layer.activation.tag()
                    );
                }
            }
        }
        s
    }

    pub fn decode(text: &str) -> Result<NetworkSpec, NnError> {
        let bad = |msg: &str| NnError::BadSnapshot(format!("spec: {msg}"));
        let mut layers = Vec::new();
        for part in text.split('|') {
            let (name, rest) = part
                .split_once('(')
                .ok_or_else(|| bad(&format!("missing `(` in {part:?}")))?;
            let args = rest
                .strip_suffix(')')
                .ok_or_else(|| bad(&format!("missing `)` in {part:?}")))?;
            let fields: Vec<&str> = args.split(',').collect();
            let layer = match name {
                "dense" => {
                    if fields.len() != 4 {
                        return Err(bad("dense expects 4 fields"));
                    }
                    Layer {
                        kind: LayerKind::Dense {
                            inputs: fields[0].parse().map_err(|_| bad("inputs"))?,
                            outputs: fields[1].parse().map_err(|_| bad("outputs"))?,
                            bias: match fields[2] {
                                "bias" => true,
                                "nobias" => false,
                                _ => return Err(bad("bias flag")),
                            },
                        },
                        activation: Activation::from_tag(fields[3]).ok_or_else(|| bad("act"))?,
                    }
                }
                "conv" | "tconv" => {
                    if fields.len() != 6 {
                        return Err(bad("conv expects 6 fields"));
                    }
                    let dims: Vec<&str> = fields[0].split('x').collect();
                    if dims.len() != 3 {
                        return Err(bad("conv dims"));
                    }
                    let in_h = dims[0].parse().map_err(|_| bad("in_h"))?;
                    let in_w = dims[1].parse().map_err(|_| bad("in_w"))?;
                    let in_ch = dims[2].parse().map_err(|_| bad("in_ch"))?;
                    let out_ch = fields[1].parse().map_err(|_| bad("out_ch"))?;
                    let kernel = fields[2]
                        .strip_prefix('k')
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| bad("kernel"))?;
                    let stride = fields[3]
                        .strip_prefix('s')
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| bad("stride"))?;
                    let pad = fields[4]
                        .strip_prefix('p')
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| bad("pad"))?;
                    let activation =
                        Activation::from_tag(fields[5]).ok_or_else(|| bad("act"))?;
                    let kind = if name == "conv" {
                        LayerKind::Conv {
                            in_h,
                            in_w,
                            in_ch,
                            out_ch,
                            kernel,
                            stride,
                            pad,
                        }
                    } else {
                        LayerKind::TransposedConv {
                            in_h,
                            in_w,
                            in_ch,
                            out_ch,
                            kernel,
                            stride,
                            pad,
                        }
                    };
                    Layer { kind, activation }
                }
                _ => return Err(bad(&format!("unknown layer {name:?}"))),
            };
            layers.push(layer);
        }
        NetworkSpec::new(layers)
    }
}

// ---------------------------------------------------------------------------
// Reference architectures
// ---------------------------------------------------------------------------

fn dense(inputs: usize, outputs: usize, activation: Activation) -> Layer {
    Layer {
        kind: LayerKind::Dense {
            inputs,
            outputs,
            bias: true,
        },
        activation,
    }
}

/// Full Q-network: two same-padded conv layers (32/64 kernels), a 1024-wide
/// dense layer, and one linear output per action.
pub fn q_network(height: usize, width: usize, actions: usize) -> NetworkSpec {
    q_network_sized(height, width, actions, 32, 64, 1024)
}

/// Q-network with configurable widths (reduced sizes for gradient checks).
pub fn q_network_sized(
    height: usize,
    width: usize,
    actions: usize,
    conv1: usize,
    conv2: usize,
    hidden: usize,
) -> NetworkSpec {
    NetworkSpec::new(vec![
        Layer {
            kind: LayerKind::Conv {
                in_h: height,
                in_w: width,
                in_ch: 1,
                out_ch: conv1,
                kernel: 3,
                stride: 1,
                pad: 1,
            },
            activation: Activation::Relu,
        },
        Layer {
            kind: LayerKind::Conv {
                in_h: height,
                in_w: width,
                in_ch: conv1,
                out_ch: conv2,
                kernel: 3,
                stride: 1,
                pad: 1,
            },
            activation: Activation::Relu,
        },
        dense(height * width * conv2, hidden, Activation::Relu),
        dense(hidden, actions, Activation::Linear),
    ])
    .expect("reference q-network chains")
}

/// Dense-only network for fast desk-scale runs.
pub fn tiny_q_network(height: usize, width: usize, actions: usize) -> NetworkSpec {
    NetworkSpec::new(vec![
        dense(height * width, 64, Activation::Relu),
        dense(64, 32, Activation::Relu),
        dense(32, actions, Activation::Linear),
    ])
    .expect("tiny q-network chains")
}

/// Bias-free linear layer over one-hot features: one parameter per Q-value.
/// Used by the tabular-equivalence oracle tests.
pub fn tabular_network(states: usize, actions: usize) -> NetworkSpec {
    NetworkSpec::new(vec![Layer {
        kind: LayerKind::Dense {
            inputs: states,
            outputs: actions,
            bias: false,
        },
        activation: Activation::Linear,
    }])
    .expect("single layer chains")
}

/// Convolutional autoencoder with a sigmoid code layer of `code` units.
///
/// Encoder: two stride-2 convs (32/64 kernels) and a dense layer; decoder
/// mirrors them with two transposed convs. Grid sides must be divisible
/// by 4.
pub fn autoencoder(height: usize, width: usize, code: usize) -> NetworkSpec {
    autoencoder_sized(height, width, code, 32, 64, 1024)
}

pub fn autoencoder_sized(
    height: usize,
    width: usize,
    code: usize,
    conv1: usize,
    conv2: usize,
    hidden: usize,
) -> NetworkSpec {
    assert!(
        height % 4 == 0 && width % 4 == 0,
        "autoencoder needs side lengths divisible by 4"
    );
    let (h4, w4) = (height / 4, width / 4);
    NetworkSpec::new(vec![
        Layer {
            kind: LayerKind::Conv {
                in_h: height,
                in_w: width,
                in_ch: 1,
                out_ch: conv1,
                kernel: 3,
                stride: 2,
                pad: 1,
            },
            activation: Activation::Relu,
        },
        Layer {
            kind: LayerKind::Conv {
                in_h: height / 2,
                in_w: width / 2,
                in_ch: conv1,
                out_ch: conv2,
                kernel: 3,
                stride: 2,
                pad: 1,
            },
            activation: Activation::Relu,
        },
        dense(h4 * w4 * conv2, hidden, Activation::Relu),
        dense(hidden, code, Activation::Sigmoid),
        dense(code, h4 * w4 * conv2, Activation::Relu),
        Layer {
            kind: LayerKind::TransposedConv {
                in_h: h4,
                in_w: w4,
                in_ch: conv2,
                out_ch: conv1,
                kernel: 4,
                stride: 2,
                pad: 1,
            },
            activation: Activation::Relu,
        },
        Layer {
            kind: LayerKind::TransposedConv {
                in_h: height / 2,
                in_w: width / 2,
                in_ch: conv1,
                out_ch: 1,
                kernel: 4,
                stride: 2,
                pad: 1,
            },
            activation: Activation::Linear,
        },
    ])
    .expect("autoencoder chains")
}

/// Index of the sigmoid code layer inside [`autoencoder`] specs.
pub const AUTOENCODER_CODE_LAYER: usize = 3;

// ---------------------------------------------------------------------------
// Parameters and optimizers
// ---------------------------------------------------------------------------

/// Online parameter vector plus the target copy updated only by `sync`.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub online: Vec<f64>,
    pub target: Vec<f64>,
}

impl Parameters {
    /// Seeded fan-in-scaled uniform init; the target starts as a copy.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Parameters {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut online = vec![0.0; spec.param_count()];
        let offsets = spec.offsets();
        for (layer, &off) in spec.layers.iter().zip(&offsets) {
            // Biases sit at the tail of each layer block and start at zero.
            let weights = match layer.kind {
                LayerKind::Dense { inputs, outputs, .. } => inputs * outputs,
                LayerKind::Conv {
                    in_ch,
                    out_ch,
                    kernel,
                    ..
                }
                | LayerKind::TransposedConv {
                    in_ch,
                    out_ch,
                    kernel,
                    ..
                } => in_ch * out_ch * kernel * kernel,
            };
            let bound = 1.0 / (layer.kind.fan_in() as f64).sqrt();
            for slot in online[off..off + weights].iter_mut() {
                *slot = rng.gen_range(-bound..bound);
            }
        }
        let target = online.clone();
        Parameters { online, target }
    }

    pub fn zeros(spec: &NetworkSpec) -> Parameters {
        let n = spec.param_count();
        Parameters {
            online: vec![0.0; n],
            target: vec![0.0; n],
        }
    }

    /// Copies online weights into the target network.
    pub fn sync_target(&mut self) {
        self.target.copy_from_slice(&self.online);
    }
}

/// Adam moment vectors and hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub timestep: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(param_count: usize, learning_rate: f64) -> AdamState {
        AdamState {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            timestep: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected Adam update. Non-finite gradients abort without touching
/// parameters or moments.
pub fn adam_step(params: &mut [f64], grad: &[f64], state: &mut AdamState) -> Result<(), NnError> {
    if params.len() != grad.len() || params.len() != state.m.len() {
        return Err(NnError::LengthMismatch { what: "gradient" });
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(NnError::NonFiniteGrad);
    }
    state.timestep += 1;
    let t = state.timestep as i32;
    let bias1 = 1.0 - state.beta1.powi(t);
    let bias2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
        let m_hat = state.m[i] / bias1;
        let v_hat = state.v[i] / bias2;
        params[i] -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

/// Optimizer choice: Adam for production runs, plain SGD for the tabular
/// equivalence oracles.
#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Adam(AdamState),
    Sgd { learning_rate: f64 },
}

impl Optimizer {
    pub fn adam(param_count: usize, learning_rate: f64) -> Optimizer {
        Optimizer::Adam(AdamState::new(param_count, learning_rate))
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<(), NnError> {
        match self {
            Optimizer::Adam(state) => adam_step(params, grad, state),
            Optimizer::Sgd { learning_rate } => {
                if grad.iter().any(|g| !g.is_finite()) {
                    return Err(NnError::NonFiniteGrad);
                }
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= *learning_rate * g;
                }
                Ok(())
            }
        }
    }

    pub fn timestep(&self) -> u64 {
        match self {
            Optimizer::Adam(state) => state.timestep,
            Optimizer::Sgd { .. } => 0,
        }
    }
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

/// Executable network: a spec plus precomputed offsets.
#[derive(Debug, Clone)]
pub struct Network {
    pub spec: NetworkSpec,
    offsets: Vec<usize>,
}

/// Post-activation outputs of every layer for one input, kept for backprop.
pub struct ForwardTrace {
    /// `activations[0]` is the input; `activations[i + 1]` is layer `i`'s output.
    pub activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("non-empty trace")
    }
}

impl Network {
    pub fn new(spec: NetworkSpec) -> Network {
        let offsets = spec.offsets();
        Network { spec, offsets }
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    pub fn input_len(&self) -> usize {
        self.spec.input_len()
    }

    pub fn output_len(&self) -> usize {
        self.spec.output_len()
    }

    /// Full forward pass; returns only the output vector.
    pub fn forward(&self, params: &[f64], input: &[f64]) -> Result<Vec<f64>, NnError> {
        Ok(self.forward_traced(params, input, None)?.output().to_vec())
    }

    /// Forward pass keeping every layer activation.
    ///
    /// `pre_activation_noise` optionally adds a vector to the named layer's
    /// pre-activation (used to harden the autoencoder code layer).
    pub fn forward_traced(
        &self,
        params: &[f64],
        input: &[f64],
        pre_activation_noise: Option<(usize, &[f64])>,
    ) -> Result<ForwardTrace, NnError> {
        if input.len() != self.input_len() {
            return Err(NnError::BadInput {
                expected: self.input_len(),
                got: input.len(),
            });
        }
        if params.len() != self.param_count() {
            return Err(NnError::LengthMismatch { what: "parameters" });
        }
        let mut activations = Vec::with_capacity(self.spec.layers.len() + 1);
        activations.push(input.to_vec());
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let p = &params[self.offsets[i]..self.offsets[i] + layer.kind.param_count()];
            let x = activations.last().expect("input present");
            let mut z = linear_forward(&layer.kind, p, x);
            if let Some((noise_layer, noise)) = pre_activation_noise {
                if noise_layer == i {
                    for (v, n) in z.iter_mut().zip(noise) {
                        *v += n;
                    }
                }
            }
            layer.activation.apply(&mut z);
            if z.iter().any(|v| !v.is_finite()) {
                return Err(NnError::NonFinite { layer: i });
            }
            activations.push(z);
        }
        Ok(ForwardTrace { activations })
    }

    /// Output of an intermediate layer (post-activation).
    pub fn layer_output(
        &self,
        params: &[f64],
        input: &[f64],
        layer: usize,
    ) -> Result<Vec<f64>, NnError> {
        let trace = self.forward_traced(params, input, None)?;
        Ok(trace.activations[layer + 1].clone())
    }

    /// Backpropagates `d_output` (dL/d output) through the trace,
    /// accumulating parameter gradients into `grad`.
    pub fn backward(
        &self,
        params: &[f64],
        trace: &ForwardTrace,
        d_output: &[f64],
        grad: &mut [f64],
    ) {
        assert_eq!(grad.len(), self.param_count());
        let mut dy = d_output.to_vec();
        for i in (0..self.spec.layers.len()).rev() {
            let layer = &self.spec.layers[i];
            layer.activation.backward(&trace.activations[i + 1], &mut dy);
            let p = &params[self.offsets[i]..self.offsets[i] + layer.kind.param_count()];
            let g = &mut grad[self.offsets[i]..self.offsets[i] + layer.kind.param_count()];
            dy = linear_backward(&layer.kind, p, &trace.activations[i], &dy, g);
        }
    }
}

fn linear_forward(kind: &LayerKind, p: &[f64], x: &[f64]) -> Vec<f64> {
    match *kind {
        LayerKind::Dense {
            inputs,
            outputs,
            bias,
        } => {
            let mut z = vec![0.0; outputs];
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &p[o * inputs..(o + 1) * inputs];
                let mut acc = if bias { p[inputs * outputs + o] } else { 0.0 };
                for (w, xi) in row.iter().zip(x) {
                    acc += w * xi;
                }
                *zo = acc;
            }
            z
        }
        LayerKind::Conv {
            in_h,
            in_w,
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
        } => {
            let (out_h, out_w, _) = kind.output_shape();
            let mut z = vec![0.0; out_h * out_w * out_ch];
            let wlen = in_ch * kernel * kernel;
            for oc in 0..out_ch {
                let b = p[out_ch * wlen + oc];
                for oy in 0..out_h {
                    for ox in 0..out_w {
                        let mut acc = b;
                        for ic in 0..in_ch {
                            for ky in 0..kernel {
                                let y = (oy * stride + ky) as isize - pad as isize;
                                if y < 0 || y >= in_h as isize {
                                    continue;
                                }
                                for kx in 0..kernel {
                                    let xx = (ox * stride + kx) as isize - pad as isize;
                                    if xx < 0 || xx >= in_w as isize {
                                        continue;
                                    }
                                    let w =
                                        p[((oc * in_ch + ic) * kernel + ky) * kernel + kx];
                                    acc += w
                                        * x[(ic * in_h + y as usize) * in_w + xx as usize];
                                }
                            }
                        }
                        z[(oc * out_h + oy) * out_w + ox] = acc;
                    }
                }
            }
            z
        }
        LayerKind::TransposedConv {
            in_h,
            in_w,
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
        } => {
            let (out_h, out_w, _) = kind.output_shape();
            let mut z = vec![0.0; out_h * out_w * out_ch];
            let wlen = in_ch * out_ch * kernel * kernel;
            for oc in 0..out_ch {
                let b = p[wlen + oc];
                for slot in z[oc * out_h * out_w..(oc + 1) * out_h * out_w].iter_mut() {
                    *slot = b;
                }
            }
            for ic in 0..in_ch {
                for iy in 0..in_h {
                    for ix in 0..in_w {
                        let xv = x[(ic * in_h + iy) * in_w + ix];
                        for oc in 0..out_ch {
                            for ky in 0..kernel {
                                let oy = (iy * stride + ky) as isize - pad as isize;
                                if oy < 0 || oy >= out_h as isize {
                                    continue;
                                }
                                for kx in 0..kernel {
                                    let ox = (ix * stride + kx) as isize - pad as isize;
                                    if ox < 0 || ox >= out_w as isize {
                                        continue;
                                    }
                                    let w =
                                        p[((ic * out_ch + oc) * kernel + ky) * kernel + kx];
                                    z[(oc * out_h + oy as usize) * out_w + ox as usize] +=
                                        w * xv;
                                }
                            }
                        }
                    }
                }
            }
            z
        }
    }
}

/// Returns dL/d input and accumulates dL/d params into `g`.
fn linear_backward(kind: &LayerKind, p: &[f64], x: &[f64], dy: &[f64], g: &mut [f64]) -> Vec<f64> {
    match *kind {
        LayerKind::Dense {
            inputs,
            outputs,
            bias,
        } => {
            let mut dx = vec![0.0; inputs];
            for o in 0..outputs {
                let d = dy[o];
                if d == 0.0 {
                    continue;
                }
                let row = &p[o * inputs..(o + 1) * inputs];
                let grow = &mut g[o * inputs..(o + 1) * inputs];
                for i in 0..inputs {
                    dx[i] += d * row[i];
                    grow[i] += d * x[i];
                }
                if bias {
                    g[inputs * outputs + o] += d;
                }
            }
            dx
        }
        LayerKind::Conv {
            in_h,
            in_w,
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
        } => {
            let (out_h, out_w, _) = kind.output_shape();
            let mut dx = vec![0.0; in_h * in_w * in_ch];
            let wlen = in_ch * kernel * kernel;
            for oc in 0..out_ch {
                for oy in 0..out_h {
                    for ox in 0..out_w {
                        let d = dy[(oc * out_h + oy) * out_w + ox];
                        if d == 0.0 {
                            continue;
                        }
                        g[out_ch * wlen + oc] += d;
                        for ic in 0..in_ch {
                            for ky in 0..kernel {
                                let y = (oy * stride + ky) as isize - pad as isize;
                                if y < 0 || y >= in_h as isize {
                                    continue;
                                }
                                for kx in 0..kernel {
                                    let xx = (ox * stride + kx) as isize - pad as isize;
                                    if xx < 0 || xx >= in_w as isize {
                                        continue;
                                    }
                                    let widx = ((oc * in_ch + ic) * kernel + ky) * kernel + kx;
                                    let xidx = (ic * in_h + y as usize) * in_w + xx as usize;
                                    g[widx] += d * x[xidx];
                                    dx[xidx] += d * p[widx];
                                }
                            }
                        }
                    }
                }
            }
            dx
        }
        LayerKind::TransposedConv {
            in_h,
            in_w,
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
        } => {
            let (out_h, out_w, _) = kind.output_shape();
            let mut dx = vec![0.0; in_h * in_w * in_ch];
            let wlen = in_ch * out_ch * kernel * kernel;
            for oc in 0..out_ch {
                for oy in 0..out_h {
                    for ox in 0..out_w {
                        g[wlen + oc] += dy[(oc * out_h + oy) * out_w + ox];
                    }
                }
            }
            for ic in 0..in_ch {
                for iy in 0..in_h {
                    for ix in 0..in_w {
                        let xidx = (ic * in_h + iy) * in_w + ix;
                        let xv = x[xidx];
                        let mut acc = 0.0;
                        for oc in 0..out_ch {
                            for ky in 0..kernel {
                                let oy = (iy * stride + ky) as isize - pad as isize;
                                if oy < 0 || oy >= out_h as isize {
                                    continue;
                                }
                                for kx in 0..kernel {
                                    let ox = (ix * stride + kx) as isize - pad as isize;
                                    if ox < 0 || ox >= out_w as isize {
                                        continue;
                                    }
                                    let widx = ((ic * out_ch + oc) * kernel + ky) * kernel + kx;
                                    let d = dy[(oc * out_h + oy as usize) * out_w + ox as usize];
                                    g[widx] += d * xv;
                                    acc += d * p[widx];
                                }
                            }
                        }
                        dx[xidx] += acc;
                    }
                }
            }
            dx
        }
    }
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// One Q-learning sample: predict `target` for `action` under `weight`.
pub struct QSample<'a> {
    pub input: &'a [f64],
    pub action: usize,
    pub target: f64,
    pub weight: f64,
}

/// Result of a masked loss evaluation.
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
    /// Samples with weight > 0; zero means the whole batch was masked out.
    pub included: usize,
}

/// Mean over included samples of `weight * (target - Q(s, a))^2`, with the
/// exact gradient. Weight 0 skips a sample entirely; weights in (0, 1]
/// scale its squared TD error.
pub fn masked_q_loss_grad(
    net: &Network,
    params: &[f64],
    batch: &[QSample<'_>],
) -> Result<LossGrad, NnError> {
    let mut grad = vec![0.0; net.param_count()];
    let included = batch.iter().filter(|s| s.weight > 0.0).count();
    if included == 0 {
        return Ok(LossGrad {
            loss: 0.0,
            grad,
            included,
        });
    }
    let scale = 1.0 / included as f64;
    let mut loss = 0.0;
    let mut d_out = vec![0.0; net.output_len()];
    for sample in batch.iter().filter(|s| s.weight > 0.0) {
        let trace = net.forward_traced(params, sample.input, None)?;
        let q = trace.output()[sample.action];
        let residual = sample.target - q;
        loss += sample.weight * residual * residual * scale;
        for v in d_out.iter_mut() {
            *v = 0.0;
        }
        d_out[sample.action] = -2.0 * sample.weight * residual * scale;
        net.backward(params, &trace, &d_out, &mut grad);
    }
    Ok(LossGrad {
        loss,
        grad,
        included,
    })
}

/// Mean squared reconstruction error over a batch, with gradient.
///
/// `code_noise` adds seeded uniform noise to the code layer's
/// pre-activation during training, pushing the sigmoid units toward
/// saturation so rounded codes are robust to observation noise.
pub fn reconstruction_loss_grad<R: Rng>(
    net: &Network,
    params: &[f64],
    batch: &[(&[f64], &[f64])],
    code_noise: Option<(usize, f64, &mut R)>,
    grad: &mut [f64],
) -> Result<f64, NnError> {
    assert!(!batch.is_empty());
    for v in grad.iter_mut() {
        *v = 0.0;
    }
    let out_len = net.output_len();
    let scale = 1.0 / (batch.len() * out_len) as f64;
    let mut loss = 0.0;
    let mut noise = code_noise.map(|(layer, amplitude, rng)| {
        let width = net.spec.layers[layer].kind.output_len();
        (layer, amplitude, rng, vec![0.0; width])
    });
    let mut d_out = vec![0.0; out_len];
    for (input, target) in batch {
        let noise_arg = match noise.as_mut() {
            Some((layer, amplitude, rng, buf)) => {
                for slot in buf.iter_mut() {
                    *slot = rng.gen_range(-*amplitude..*amplitude);
                }
                Some((*layer, buf.as_slice()))
            }
            None => None,
        };
        let trace = net.forward_traced(params, input, noise_arg)?;
        let out = trace.output();
        for ((d, &y), &t) in d_out.iter_mut().zip(out).zip(target.iter()) {
            let residual = y - t;
            loss += residual * residual * scale;
            *d = 2.0 * residual * scale;
        }
        net.backward(params, &trace, &d_out, grad);
    }
    Ok(loss)
}

// ---------------------------------------------------------------------------
// Snapshots
// ---------------------------------------------------------------------------

/// Serializes parameters as a one-line header plus little-endian f64 arrays
/// (online then target).
pub fn snapshot_to_bytes(
    spec: &NetworkSpec,
    params: &Parameters,
    seed: u64,
    steps: u64,
) -> Vec<u8> {
    let header = format!(
        "{{\"spec\":\"{}\",\"seed\":{},\"steps\":{},\"params\":{}}}\n",
        spec.encode(),
        seed,
        steps,
        params.online.len()
    );
    let mut bytes = header.into_bytes();
    for v in params.online.iter().chain(params.target.iter()) {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

pub struct Snapshot {
    pub spec: NetworkSpec,
    pub params: Parameters,
    pub seed: u64,
    pub steps: u64,
}

pub fn snapshot_from_bytes(bytes: &[u8]) -> Result<Snapshot, NnError> {
    let bad = |msg: &str| NnError::BadSnapshot(msg.to_string());
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("missing header line"))?;
    let header = std::str::from_utf8(&bytes[..newline]).map_err(|_| bad("header not utf-8"))?;
    let field = |name: &str| -> Result<&str, NnError> {
        let tag = format!("\"{name}\":");
        let start = header
            .find(&tag)
            .ok_or_else(|| bad(&format!("missing field {name}")))?
            + tag.len();
        let rest = &header[start..];
        if let Some(quoted) = rest.strip_prefix('"') {
            let end = quoted
                .find('"')
                .ok_or_else(|| bad("unterminated string field"))?;
            return Ok(&quoted[..end]);
        }
        let end = rest
            .char_indices()
            .find(|(_, c)| *c == ',' || *c == '}')
            .map(|(i, _)| i)
            .ok_or_else(|| bad("unterminated field"))?;
        Ok(&rest[..end])
    };
    let spec_text = field("spec")?.to_string();
    let seed: u64 = field("seed")?.parse().map_err(|_| bad("seed"))?;
    let steps: u64 = field("steps")?.parse().map_err(|_| bad("steps"))?;
    let count: usize = field("params")?.parse().map_err(|_| bad("params"))?;
    let spec = NetworkSpec::decode(&spec_text)?;
    if spec.param_count() != count {
        return Err(bad("param count does not match spec"));
    }
    let body = &bytes[newline + 1..];
    if body.len() != count * 16 {
        return Err(bad("truncated parameter payload"));
    }
    let read_vec = |chunk: &[u8]| -> Vec<f64> {
        chunk
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect()
    };
    let online = read_vec(&body[..count * 8]);
    let target = read_vec(&body[count * 8..]);
    Ok(Snapshot {
        spec,
        params: Parameters { online, target },
        seed,
        steps,
    })
}
