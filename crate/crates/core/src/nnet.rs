//! Dense ReLU feed-forward network with exact reverse-mode gradients and Adam.
//!
//! Weights are stored `(out_dim, in_dim)`; batches are `(batch, features)`
//! row-major. Every hidden layer uses ReLU and the last layer is linear.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 20 inputs, three hidden layers of 100 units, 20 outputs.
pub const DEFAULT_LAYER_DIMS: [usize; 5] = [20, 100, 100, 100, 20];

const MODEL_FORMAT: &str = "lobsad.mlp";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl LayerParams {
    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }
}

/// The network function `phi(x; W)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct MlpModel {
    layers: Vec<LayerParams>,
    layer_dims: Vec<usize>,
    bias_enabled: bool,
    seed: u64,
}

/// Intermediate values kept by [`MlpModel::forward`] for the backward pass.
///
/// `inputs[l]` is the input to layer `l`; for hidden layers the ReLU mask of
/// layer `l` is recovered from `inputs[l + 1] > 0`.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    inputs: Vec<Array2<f64>>,
}

impl ForwardTape {
    pub fn batch_size(&self) -> usize {
        self.inputs[0].nrows()
    }

    /// Activations after each hidden layer.
    pub fn hidden_activations(&self) -> &[Array2<f64>] {
        &self.inputs[1..]
    }
}

/// One real per model parameter, laid out like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl MlpModel {
    /// Random initialization: weights uniform in `(-a, a)` with
    /// `a = sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn init(seed: u64, layer_dims: &[usize], bias_enabled: bool) -> Result<Self> {
        validate_dims(layer_dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_layers = layer_dims.len() - 1;
        let layers = layer_dims
            .windows(2)
            .enumerate()
            .map(|(l, pair)| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights = Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-a..a));
                LayerParams {
                    weights,
                    bias: Array1::zeros(fan_out),
                    activation: if l + 1 == n_layers {
                        Activation::Linear
                    } else {
                        Activation::Relu
                    },
                }
            })
            .collect();
        Ok(Self {
            layers,
            layer_dims: layer_dims.to_vec(),
            bias_enabled,
            seed,
        })
    }

    /// Builds a model from explicit layers, checking shapes, activations and finiteness.
    pub fn from_layers(layers: Vec<LayerParams>, bias_enabled: bool, seed: u64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("model needs at least one layer".into()));
        }
        let mut layer_dims = vec![layers[0].in_dim()];
        for (l, layer) in layers.iter().enumerate() {
            if layer.in_dim() != *layer_dims.last().unwrap() {
                return Err(Error::shape(
                    &format!("layer {l} input dim"),
                    *layer_dims.last().unwrap(),
                    layer.in_dim(),
                ));
            }
            if layer.bias.len() != layer.out_dim() {
                return Err(Error::shape(&format!("layer {l} bias"), layer.out_dim(), layer.bias.len()));
            }
            let expected = if l + 1 == layers.len() {
                Activation::Linear
            } else {
                Activation::Relu
            };
            if layer.activation != expected {
                return Err(Error::Config(format!(
                    "layer {l} activation must be {expected:?}, got {:?}",
                    layer.activation
                )));
            }
            if !layer.bias_enabled_ok(bias_enabled) {
                return Err(Error::Config(format!("layer {l} has non-zero bias but biases are disabled")));
            }
            layer_dims.push(layer.out_dim());
        }
        validate_dims(&layer_dims)?;
        let model = Self {
            layers,
            layer_dims,
            bias_enabled,
            seed,
        };
        if !model.is_finite() {
            return Err(Error::Data("model parameters must be finite".into()));
        }
        Ok(model)
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    /// Mutable access to the parameters. Shapes must not be changed.
    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn bias_enabled(&self) -> bool {
        self.bias_enabled
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// Parameters flattened layer by layer: weights row-major, then bias.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for layer in &self.layers {
            out.extend(layer.weights.iter());
            out.extend(layer.bias.iter());
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::shape("flat parameter count", self.n_params(), params.len()));
        }
        let mut it = params.iter().copied();
        for layer in &mut self.layers {
            layer.weights.iter_mut().for_each(|w| *w = it.next().unwrap());
            layer.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
        Ok(())
    }

    fn check_batch(&self, batch: &ArrayView2<f64>) -> Result<()> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::shape("batch feature count", self.input_dim(), batch.ncols()));
        }
        if let Some(pos) = batch.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite input at row {}, column {}",
                pos / batch.ncols().max(1),
                pos % batch.ncols().max(1)
            )));
        }
        Ok(())
    }

    fn layer_forward(layer: &LayerParams, input: &ArrayView2<f64>) -> Array2<f64> {
        let mut z = input.dot(&layer.weights.t());
        z += &layer.bias;
        if layer.activation == Activation::Relu {
            z.mapv_inplace(|v| v.max(0.0));
        }
        z
    }

    /// Runs the batch through the network, keeping what backward needs.
    pub fn forward(&self, batch: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardTape)> {
        self.check_batch(&batch)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        inputs.push(batch.to_owned());
        for layer in &self.layers {
            let next = Self::layer_forward(layer, &inputs.last().unwrap().view());
            inputs.push(next);
        }
        let outputs = inputs.pop().unwrap();
        Ok((outputs, ForwardTape { inputs }))
    }

    /// Forward pass without a tape.
    pub fn predict(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_batch(&batch)?;
        let mut current = Self::layer_forward(&self.layers[0], &batch);
        for layer in &self.layers[1..] {
            current = Self::layer_forward(layer, &current.view());
        }
        Ok(current)
    }

    /// Reverse-mode gradient of `sum(grad_outputs * outputs)` with respect to
    /// every parameter, for the batch recorded in `tape`.
    pub fn backward(&self, tape: &ForwardTape, grad_outputs: ArrayView2<f64>) -> Result<Gradients> {
        if tape.inputs.len() != self.layers.len() || tape.inputs[0].ncols() != self.input_dim() {
            return Err(Error::Shape("tape was not produced by this model".into()));
        }
        let batch = tape.batch_size();
        if grad_outputs.dim() != (batch, self.output_dim()) {
            return Err(Error::Shape(format!(
                "grad_outputs: expected {:?}, got {:?}",
                (batch, self.output_dim()),
                grad_outputs.dim()
            )));
        }

        let n = self.layers.len();
        let mut weights = Vec::with_capacity(n);
        let mut biases = Vec::with_capacity(n);
        let mut delta = grad_outputs.to_owned();
        for l in (0..n).rev() {
            let layer = &self.layers[l];
            if layer.activation == Activation::Relu {
                Zip::from(&mut delta)
                    .and(&tape.inputs[l + 1])
                    .for_each(|d, &a| {
                        if a <= 0.0 {
                            *d = 0.0;
                        }
                    });
            }
            weights.push(delta.t().dot(&tape.inputs[l]));
            biases.push(if self.bias_enabled {
                delta.sum_axis(Axis(0))
            } else {
                Array1::zeros(layer.out_dim())
            });
            if l > 0 {
                delta = delta.dot(&layer.weights);
            }
        }
        weights.reverse();
        biases.reverse();
        Ok(Gradients { weights, biases })
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

impl LayerParams {
    fn bias_enabled_ok(&self, bias_enabled: bool) -> bool {
        bias_enabled || self.bias.iter().all(|&b| b == 0.0)
    }
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::Config(format!(
            "layer_dims needs at least 2 entries, got {}",
            dims.len()
        )));
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::Config(format!("layer_dims must be positive: {dims:?}")));
    }
    Ok(())
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            weights: model
                .layers
                .iter()
                .map(|l| Array2::zeros(l.weights.raw_dim()))
                .collect(),
            biases: model.layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Same layout as [`MlpModel::params_flat`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn scale(&mut self, factor: f64) {
        self.weights.iter_mut().for_each(|w| *w *= factor);
        self.biases.iter_mut().for_each(|b| *b *= factor);
    }

    fn congruent_with(&self, model: &MlpModel) -> bool {
        self.weights.len() == model.layers.len()
            && self.biases.len() == model.layers.len()
            && model.layers.iter().enumerate().all(|(l, layer)| {
                self.weights[l].dim() == layer.weights.dim() && self.biases[l].len() == layer.bias.len()
            })
    }
}

/// Adam moments and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Gradients,
    v: Gradients,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(model: &MlpModel) -> Self {
        Self::with_hyper(model, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(model: &MlpModel, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            m: Gradients::zeros_like(model),
            v: Gradients::zeros_like(model),
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &Gradients {
        &self.m
    }

    pub fn second_moment(&self) -> &Gradients {
        &self.v
    }
}

/// One Adam update. `weight_decay * W` is added to the gradient of every
/// weight matrix (biases are not decayed).
pub fn adam_step(
    model: &mut MlpModel,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if !grads.congruent_with(model) || !state.m.congruent_with(model) {
        return Err(Error::Shape("gradients are not shape-congruent with the model".into()));
    }
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!("learning rate must be finite and >= 0, got {lr}")));
    }
    if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
        return Err(Error::Config(format!("weight decay must be finite and >= 0, got {weight_decay}")));
    }
    if !grads.is_finite() {
        return Err(Error::Divergence(format!(
            "non-finite gradient at optimizer step {}",
            state.t + 1
        )));
    }

    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
        flush_subnormal(p);
        flush_subnormal(m);
        flush_subnormal(v);
    };

    for (l, layer) in model.layers.iter_mut().enumerate() {
        Zip::from(&mut layer.weights)
            .and(&grads.weights[l])
            .and(&mut state.m.weights[l])
            .and(&mut state.v.weights[l])
            .for_each(|w, &g, m, v| {
                let g = g + weight_decay * *w;
                update(w, g, m, v);
            });
        if model.bias_enabled {
            Zip::from(&mut layer.bias)
                .and(&grads.biases[l])
                .and(&mut state.m.biases[l])
                .and(&mut state.v.biases[l])
                .for_each(|b, &g, m, v| update(b, g, m, v));
        }
    }
    Ok(())
}

/// Weights of dead units decay geometrically under L2 and end up subnormal,
/// which sends every later matmul down the slow floating-point path.
fn flush_subnormal(x: &mut f64) {
    if x.is_subnormal() {
        *x = 0.0;
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    version: u32,
    layer_dims: Vec<usize>,
    bias_enabled: bool,
    seed: u64,
    params: Vec<f64>,
}

impl From<MlpModel> for ModelFile {
    fn from(model: MlpModel) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            params: model.params_flat(),
            layer_dims: model.layer_dims,
            bias_enabled: model.bias_enabled,
            seed: model.seed,
        }
    }
}

impl TryFrom<ModelFile> for MlpModel {
    type Error = Error;

    fn try_from(file: ModelFile) -> Result<Self> {
        if file.format != MODEL_FORMAT {
            return Err(Error::Schema(format!("unknown model format {:?}", file.format)));
        }
        if file.version != MODEL_VERSION {
            return Err(Error::Schema(format!(
                "unsupported model version {} (expected {MODEL_VERSION})",
                file.version
            )));
        }
        let mut model = MlpModel::init(0, &file.layer_dims, file.bias_enabled)?;
        model.seed = file.seed;
        model.set_params_flat(&file.params)?;
        if !model.is_finite() {
            return Err(Error::Data("model file contains non-finite parameters".into()));
        }
        if !model.bias_enabled && model.layers.iter().any(|l| l.bias.iter().any(|&b| b != 0.0)) {
            return Err(Error::Data("biases disabled but non-zero bias values present".into()));
        }
        Ok(model)
    }
}
