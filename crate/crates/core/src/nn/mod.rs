//! A small dense-network engine: forward pass with a cache, exact
//! reverse-mode gradients, cross-entropy, Adam, and a text parameter dump.
//!
//! Weights are stored `fan_in × fan_out` so a layer computes `x · W + b` on a
//! row-major batch.

mod adam;
mod loss;
mod serialize;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{cross_entropy_logits, cross_entropy_probabilities, softmax_rows};
pub use train::{accuracy, fit_classifier, FitConfig};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::matrix::Matrix;
use crate::numerics::RngState;

/// Negative-side slope of the leaky ReLU.
pub const LEAKY_RELU_SLOPE: f64 = 0.2;
pub const BATCH_NORM_MOMENTUM: f64 = 0.9;
pub const BATCH_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    LeakyRelu,
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::LeakyRelu => "leaky-relu",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "leaky-relu" => Activation::LeakyRelu,
            "relu" => Activation::Relu,
            "tanh" => Activation::Tanh,
            "sigmoid" => Activation::Sigmoid,
            "identity" => Activation::Identity,
            other => return Err(invalid(format!("unknown activation {other:?}"))),
        })
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if z < 0.0 {
                    LEAKY_RELU_SLOPE * z
                } else {
                    z
                }
            }
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => crate::numerics::sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative given the pre-activation `z` and output `y`.
    #[inline]
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if z < 0.0 {
                    LEAKY_RELU_SLOPE
                } else {
                    1.0
                }
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

/// How the final layer's output is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Head {
    /// Outputs are logits; probabilities come from a row softmax.
    SoftmaxLogits,
    Linear,
}

impl Head {
    pub fn name(self) -> &'static str {
        match self {
            Head::SoftmaxLogits => "softmax-logits",
            Head::Linear => "linear",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    fn new(width: usize) -> Self {
        Self {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `fan_in × fan_out`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
    pub batch_norm: Option<BatchNorm>,
}

impl DenseLayer {
    pub fn new(fan_in: usize, fan_out: usize, activation: Activation, batch_norm: bool, rng: &mut RngState) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| (2.0 * rng.uniform() - 1.0) * limit)
            .collect();
        Self {
            weights: Matrix::from_vec(fan_in, fan_out, data).expect("shape"),
            bias: vec![0.0; fan_out],
            activation,
            batch_norm: batch_norm.then(|| BatchNorm::new(fan_out)),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.cols()
    }
}

/// Architecture description used to build an [`MlpModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub hidden_activation: Activation,
    #[serde(default)]
    pub batch_norm: bool,
    pub head: Head,
}

impl MlpSpec {
    pub fn classifier(input_dim: usize, hidden: &[usize], classes: usize) -> Self {
        Self {
            input_dim,
            hidden: hidden.to_vec(),
            output_dim: classes,
            hidden_activation: Activation::LeakyRelu,
            batch_norm: false,
            head: Head::SoftmaxLogits,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<DenseLayer>,
    pub head: Head,
}

#[derive(Debug, Clone)]
struct BatchNormCache {
    normalized: Matrix,
    inv_std: Vec<f64>,
    mean: Vec<f64>,
    var: Vec<f64>,
    training: bool,
}

#[derive(Debug, Clone)]
struct LayerCache {
    /// Input to the activation (after batch-norm when present).
    pre_activation: Matrix,
    output: Matrix,
    bn: Option<BatchNormCache>,
}

/// Per-layer values recorded by [`MlpModel::forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Matrix,
    layers: Vec<LayerCache>,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        &self.layers.last().expect("non-empty network").output
    }

    /// Output of layer `index` (0-based).
    pub fn layer_output(&self, index: usize) -> &Matrix {
        &self.layers[index].output
    }

    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }

    fn layer_input(&self, index: usize) -> &Matrix {
        if index == 0 {
            &self.input
        } else {
            &self.layers[index - 1].output
        }
    }
}

/// Gradients laid out in the same block order as [`MlpModel::parameter_blocks`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradients {
    pub blocks: Vec<Vec<f64>>,
}

impl MlpGradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            blocks: model.parameter_blocks().iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().flatten().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, factor: f64) {
        self.blocks.iter_mut().flatten().for_each(|v| *v *= factor);
    }

    pub fn add_assign(&mut self, other: &MlpGradients) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Result of [`MlpModel::backward`].
#[derive(Debug, Clone)]
pub struct Backward {
    pub gradients: MlpGradients,
    /// Gradient with respect to the network input.
    pub input_gradient: Matrix,
}

impl MlpModel {
    pub fn new(spec: &MlpSpec, rng: &mut RngState) -> Result<Self> {
        if spec.input_dim == 0 || spec.output_dim == 0 || spec.hidden.contains(&0) {
            return Err(invalid("network dimensions must be positive"));
        }
        let mut dims = vec![spec.input_dim];
        dims.extend(&spec.hidden);
        dims.push(spec.output_dim);
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let last = i + 1 == n;
                let act = if last { Activation::Identity } else { spec.hidden_activation };
                DenseLayer::new(dims[i], dims[i + 1], act, spec.batch_norm && !last, rng)
            })
            .collect();
        Ok(Self {
            layers,
            head: spec.head,
        })
    }

    /// Builds a model from explicit layers, checking that dimensions chain.
    pub fn from_layers(layers: Vec<DenseLayer>, head: Head) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("network layers"));
        }
        for pair in layers.windows(2) {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::Dimension {
                    context: "layer chaining",
                    expected: pair[0].fan_out(),
                    got: pair[1].fan_in(),
                });
            }
        }
        for l in &layers {
            if l.bias.len() != l.fan_out() {
                return Err(Error::Dimension {
                    context: "layer bias",
                    expected: l.fan_out(),
                    got: l.bias.len(),
                });
            }
            if let Some(bn) = &l.batch_norm {
                let w = l.fan_out();
                if [bn.gamma.len(), bn.beta.len(), bn.running_mean.len(), bn.running_var.len()]
                    .iter()
                    .any(|&len| len != w)
                {
                    return Err(Error::Format("batch-norm width mismatch".into()));
                }
                if bn.running_var.iter().any(|&v| !(v > 0.0)) {
                    return Err(Error::Format("batch-norm running variance must be positive".into()));
                }
            }
        }
        Ok(Self { layers, head })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::fan_out)
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_blocks().iter().map(|b| b.len()).sum()
    }

    /// Trainable parameters in a fixed order: per layer `W`, `b`, then
    /// batch-norm `gamma`, `beta` when present.
    pub fn parameter_blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            out.push(l.weights.as_slice());
            out.push(&l.bias);
            if let Some(bn) = &l.batch_norm {
                out.push(&bn.gamma);
                out.push(&bn.beta);
            }
        }
        out
    }

    pub fn parameter_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            out.push(l.weights.as_mut_slice());
            out.push(&mut l.bias);
            if let Some(bn) = &mut l.batch_norm {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        out
    }

    pub fn forward(&self, batch: &Matrix, training: bool) -> Result<ForwardCache> {
        if batch.cols() != self.input_dim() {
            return Err(Error::Dimension {
                context: "forward input",
                expected: self.input_dim(),
                got: batch.cols(),
            });
        }
        let mut caches: Vec<LayerCache> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = caches.last().map_or(batch, |c| &c.output);
            let mut z = input.matmul(&layer.weights)?;
            for row in 0..z.rows() {
                for (v, b) in z.row_mut(row).iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            let bn_cache = match &layer.batch_norm {
                Some(bn) => Some(batch_norm_forward(&mut z, bn, training)?),
                None => None,
            };
            let act = layer.activation;
            let output = z.map(|v| act.apply(v));
            caches.push(LayerCache {
                pre_activation: z,
                output,
                bn: bn_cache,
            });
        }
        let cache = ForwardCache {
            input: batch.clone(),
            layers: caches,
        };
        if !cache.output().is_finite() {
            return Err(Error::Domain("network produced non-finite outputs".into()));
        }
        Ok(cache)
    }

    /// Inference-mode outputs (logits for a softmax head).
    pub fn predict(&self, batch: &Matrix) -> Result<Matrix> {
        Ok(self.forward(batch, false)?.output().clone())
    }

    pub fn predict_proba(&self, batch: &Matrix) -> Result<Matrix> {
        let out = self.predict(batch)?;
        Ok(match self.head {
            Head::SoftmaxLogits => softmax_rows(&out),
            Head::Linear => out,
        })
    }

    pub fn predict_labels(&self, batch: &Matrix) -> Result<Vec<usize>> {
        Ok(self.predict(batch)?.argmax_rows())
    }

    /// Activations of the layer feeding the output layer (the embedding used
    /// for entropy estimation on learned features).
    pub fn penultimate_features(&self, batch: &Matrix) -> Result<Matrix> {
        if self.layers.len() < 2 {
            return Ok(batch.clone());
        }
        let cache = self.forward(batch, false)?;
        Ok(cache.layer_output(self.layers.len() - 2).clone())
    }

    pub fn backward(&self, cache: &ForwardCache, output_gradient: &Matrix) -> Result<Backward> {
        self.backward_impl(cache, output_gradient, true)
    }

    /// Parameter gradients only; skips the product that would propagate the
    /// gradient into the network input.
    pub fn parameter_gradients(&self, cache: &ForwardCache, output_gradient: &Matrix) -> Result<MlpGradients> {
        Ok(self.backward_impl(cache, output_gradient, false)?.gradients)
    }

    fn backward_impl(&self, cache: &ForwardCache, output_gradient: &Matrix, need_input: bool) -> Result<Backward> {
        if cache.layers.len() != self.layers.len() {
            return Err(Error::Dimension {
                context: "backward cache depth",
                expected: self.layers.len(),
                got: cache.layers.len(),
            });
        }
        let out = cache.output();
        if out.shape() != output_gradient.shape() {
            return Err(Error::Dimension {
                context: "backward output gradient",
                expected: out.rows() * out.cols(),
                got: output_gradient.rows() * output_gradient.cols(),
            });
        }
        for (i, (layer, lc)) in self.layers.iter().zip(&cache.layers).enumerate() {
            if lc.pre_activation.cols() != layer.fan_out() || cache.layer_input(i).cols() != layer.fan_in() {
                return Err(Error::Dimension {
                    context: "stale forward cache",
                    expected: layer.fan_out(),
                    got: lc.pre_activation.cols(),
                });
            }
        }

        let mut blocks_rev: Vec<Vec<Vec<f64>>> = Vec::with_capacity(self.layers.len());
        let mut grad = output_gradient.clone();
        for (i, (layer, lc)) in self.layers.iter().zip(&cache.layers).enumerate().rev() {
            // through the activation
            let act = layer.activation;
            let mut dz = grad;
            for ((d, &z), &y) in dz
                .as_mut_slice()
                .iter_mut()
                .zip(lc.pre_activation.as_slice())
                .zip(lc.output.as_slice())
            {
                *d *= act.derivative(z, y);
            }
            let mut layer_blocks = Vec::with_capacity(4);
            let mut bn_blocks = None;
            if let (Some(bn), Some(bc)) = (&layer.batch_norm, &lc.bn) {
                let (dx, dgamma, dbeta) = batch_norm_backward(&dz, bn, bc);
                dz = dx;
                bn_blocks = Some((dgamma, dbeta));
            }
            let dw = cache.layer_input(i).transpose_matmul(&dz)?;
            let db = dz.sum_rows();
            grad = if i == 0 && !need_input {
                Matrix::zeros(0, 0)
            } else {
                dz.matmul_transpose(&layer.weights)?
            };
            layer_blocks.push(dw.into_vec());
            layer_blocks.push(db);
            if let Some((g, b)) = bn_blocks {
                layer_blocks.push(g);
                layer_blocks.push(b);
            }
            blocks_rev.push(layer_blocks);
        }
        let blocks = blocks_rev.into_iter().rev().flatten().collect();
        Ok(Backward {
            gradients: MlpGradients { blocks },
            input_gradient: grad,
        })
    }

    /// Folds the batch statistics of a training-mode pass into the running
    /// batch-norm estimates.
    pub fn commit_batch_statistics(&mut self, cache: &ForwardCache) {
        for (layer, lc) in self.layers.iter_mut().zip(&cache.layers) {
            if let (Some(bn), Some(bc)) = (&mut layer.batch_norm, &lc.bn) {
                if !bc.training {
                    continue;
                }
                for j in 0..bn.running_mean.len() {
                    bn.running_mean[j] =
                        BATCH_NORM_MOMENTUM * bn.running_mean[j] + (1.0 - BATCH_NORM_MOMENTUM) * bc.mean[j];
                    bn.running_var[j] =
                        BATCH_NORM_MOMENTUM * bn.running_var[j] + (1.0 - BATCH_NORM_MOMENTUM) * bc.var[j];
                }
            }
        }
    }
}

fn batch_norm_forward(z: &mut Matrix, bn: &BatchNorm, training: bool) -> Result<BatchNormCache> {
    let (n, w) = z.shape();
    let (mean, var) = if training {
        if n < 2 {
            return Err(invalid("batch-norm in training mode needs at least two rows"));
        }
        let mean: Vec<f64> = z.sum_rows().into_iter().map(|s| s / n as f64).collect();
        let mut var = vec![0.0; w];
        for row in z.iter_rows() {
            for ((v, &x), &m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        var.iter_mut().for_each(|v| *v /= n as f64);
        (mean, var)
    } else {
        (bn.running_mean.clone(), bn.running_var.clone())
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BATCH_NORM_EPS).sqrt()).collect();
    let mut normalized = Matrix::zeros(n, w);
    for r in 0..n {
        let zr = z.row_mut(r);
        let nr = normalized.row_mut(r);
        for j in 0..w {
            let xh = (zr[j] - mean[j]) * inv_std[j];
            nr[j] = xh;
            zr[j] = bn.gamma[j] * xh + bn.beta[j];
        }
    }
    Ok(BatchNormCache {
        normalized,
        inv_std,
        mean,
        var,
        training,
    })
}

fn batch_norm_backward(dy: &Matrix, bn: &BatchNorm, c: &BatchNormCache) -> (Matrix, Vec<f64>, Vec<f64>) {
    let (n, w) = dy.shape();
    let mut dgamma = vec![0.0; w];
    let dbeta = dy.sum_rows();
    for r in 0..n {
        for j in 0..w {
            dgamma[j] += dy.get(r, j) * c.normalized.get(r, j);
        }
    }
    let mut dx = Matrix::zeros(n, w);
    if c.training {
        // dx = γ·inv_std/N · (N·dy − Σdy − x̂·Σ(dy·x̂))
        let nf = n as f64;
        for r in 0..n {
            for j in 0..w {
                let v = bn.gamma[j] * c.inv_std[j] / nf
                    * (nf * dy.get(r, j) - dbeta[j] - c.normalized.get(r, j) * dgamma[j]);
                dx.set(r, j, v);
            }
        }
    } else {
        for r in 0..n {
            for j in 0..w {
                dx.set(r, j, dy.get(r, j) * bn.gamma[j] * c.inv_std[j]);
            }
        }
    }
    (dx, dgamma, dbeta)
}
