use serde::{Deserialize, Serialize};

use super::rng::RngStream;
use super::tensor::{matmul_into, matmul_nt_into, matmul_tn_acc, Tensor2};
use crate::error::{shape_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }
}

/// Fully connected network. `activation` is applied after every hidden layer;
/// the output layer is always linear.
///
/// `weights[i]` has shape `layer_sizes[i] × layer_sizes[i + 1]`, so a batch
/// `x` (rows = examples) maps through `x · W + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Tensor2>,
    pub biases: Vec<Vec<f64>>,
    pub activation: Activation,
}

/// Gradients with the same layout as [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Tensor2>,
    pub biases: Vec<Vec<f64>>,
}

/// Per-layer inputs recorded by a forward pass; `layers[0]` is the network
/// input and the last entry is the network output.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    layers: Vec<Tensor2>,
}

impl MlpTrace {
    pub fn output(&self) -> &Tensor2 {
        self.layers.last().expect("trace always holds the input")
    }

    pub fn into_output(mut self) -> Tensor2 {
        self.layers.pop().expect("trace always holds the input")
    }
}

impl MlpParams {
    pub fn new(
        layer_sizes: Vec<usize>,
        weights: Vec<Tensor2>,
        biases: Vec<Vec<f64>>,
        activation: Activation,
    ) -> Result<Self> {
        let params = Self {
            layer_sizes,
            weights,
            biases,
            activation,
        };
        params.validate()?;
        Ok(params)
    }

    /// Uniform `±1/√fan_in` initialization for weights and biases.
    pub fn init(layer_sizes: &[usize], activation: Activation, rng: &mut RngStream) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(shape_err(format!(
                "an MLP needs at least two non-empty layers, got {layer_sizes:?}"
            )));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.uniform_range(-bound, bound))
                .collect();
            weights.push(Tensor2::from_vec(fan_in, fan_out, data)?);
            biases.push((0..fan_out).map(|_| rng.uniform_range(-bound, bound)).collect());
        }
        Self::new(layer_sizes.to_vec(), weights, biases, activation)
    }

    pub fn validate(&self) -> Result<()> {
        let n_layers = self.layer_sizes.len().saturating_sub(1);
        if n_layers == 0 || self.weights.len() != n_layers || self.biases.len() != n_layers {
            return Err(shape_err(format!(
                "{} layer sizes need {} weight matrices and bias vectors, found {} and {}",
                self.layer_sizes.len(),
                n_layers,
                self.weights.len(),
                self.biases.len()
            )));
        }
        for i in 0..n_layers {
            let expect = (self.layer_sizes[i], self.layer_sizes[i + 1]);
            if self.weights[i].shape() != expect || self.biases[i].len() != expect.1 {
                return Err(shape_err(format!(
                    "layer {i}: weight {:?} and bias {} do not match sizes {:?}",
                    self.weights[i].shape(),
                    self.biases[i].len(),
                    expect
                )));
            }
            if !self.weights[i].is_finite() || self.biases[i].iter().any(|v| !v.is_finite()) {
                return Err(crate::Error::Data(format!("layer {i} holds non-finite parameters")));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            weights: self
                .weights
                .iter()
                .map(|w| Tensor2::zeros(w.rows(), w.cols()))
                .collect(),
            biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    /// Mutable parameter buffers in `[w0, b0, w1, b1, ...]` order.
    pub fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w.data_mut());
            out.push(b.as_mut_slice());
        }
        out
    }

    pub fn buffer_names(&self) -> Vec<String> {
        (0..self.weights.len())
            .flat_map(|i| [format!("layer{i}.weight"), format!("layer{i}.bias")])
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.data().len() + b.len())
            .sum()
    }
}

impl MlpGrads {
    /// Gradient buffers in the same order as [`MlpParams::buffers_mut`].
    pub fn buffers(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w.data());
            out.push(b.as_slice());
        }
        out
    }
}

pub fn mlp_forward(params: &MlpParams, x: &Tensor2) -> Result<Tensor2> {
    Ok(mlp_forward_trace(params, x)?.into_output())
}

pub fn mlp_forward_trace(params: &MlpParams, x: &Tensor2) -> Result<MlpTrace> {
    if x.cols() != params.input_dim() {
        return Err(shape_err(format!(
            "network expects {} input columns, got {}",
            params.input_dim(),
            x.cols()
        )));
    }
    let last = params.n_layers() - 1;
    let mut layers = Vec::with_capacity(params.n_layers() + 1);
    layers.push(x.clone());
    for (i, (w, b)) in params.weights.iter().zip(&params.biases).enumerate() {
        let input = layers.last().expect("non-empty");
        let mut out = Tensor2::zeros(input.rows(), w.cols());
        matmul_into(input, w, &mut out);
        let act = if i == last {
            Activation::Identity
        } else {
            params.activation
        };
        for r in 0..out.rows() {
            for (o, &bv) in out.row_mut(r).iter_mut().zip(b) {
                *o = act.apply(*o + bv);
            }
        }
        layers.push(out);
    }
    Ok(MlpTrace { layers })
}

/// Gradients of `Σ upstream ⊙ f(x)` with respect to parameters and input.
pub fn mlp_backward(
    params: &MlpParams,
    x: &Tensor2,
    upstream_grad: &Tensor2,
) -> Result<(MlpGrads, Tensor2)> {
    let trace = mlp_forward_trace(params, x)?;
    mlp_backward_trace(params, &trace, upstream_grad)
}

pub fn mlp_backward_trace(
    params: &MlpParams,
    trace: &MlpTrace,
    upstream_grad: &Tensor2,
) -> Result<(MlpGrads, Tensor2)> {
    if upstream_grad.shape() != trace.output().shape() {
        return Err(shape_err(format!(
            "upstream gradient {:?} does not match network output {:?}",
            upstream_grad.shape(),
            trace.output().shape()
        )));
    }
    let mut grads = params.zero_grads();
    let mut delta = upstream_grad.clone();
    for i in (0..params.n_layers()).rev() {
        let input = &trace.layers[i];
        matmul_tn_acc(input, &delta, &mut grads.weights[i]);
        for r in 0..delta.rows() {
            for (g, &d) in grads.biases[i].iter_mut().zip(delta.row(r)) {
                *g += d;
            }
        }
        let mut prev = Tensor2::zeros(delta.rows(), params.weights[i].rows());
        matmul_nt_into(&delta, &params.weights[i], &mut prev);
        if i > 0 && params.activation == Activation::Relu {
            // trace.layers[i] is the post-ReLU output of layer i-1
            for (p, &h) in prev.data_mut().iter_mut().zip(input.data()) {
                if h <= 0.0 {
                    *p = 0.0;
                }
            }
        }
        delta = prev;
    }
    Ok((grads, delta))
}
