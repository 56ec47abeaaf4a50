//! Feed-forward network `h_θ` with tanh hidden layers, evaluated and
//! differentiated by hand.
//!
//! Parameters are flattened layer by layer, each layer contributing its
//! row-major weight matrix (`outputs × inputs`) followed by its bias.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::scalar::{all_finite, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output<T: Scalar>(self, y: T) -> T {
        match self {
            Activation::Tanh => T::one() - y * y,
            Activation::Identity => T::one(),
        }
    }
}

/// Fully connected layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    inputs: usize,
    outputs: usize,
    weights: Vec<T>,
    bias: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![T::zero(); inputs * outputs],
            bias: vec![T::zero(); outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    /// Row-major `outputs × inputs`.
    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [T] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [T] {
        &mut self.bias
    }

    fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Multi-layer perceptron. `layer_sizes = [n, hidden..., m]`; every layer
/// but the last applies tanh, the last applies `output_activation`.
///
/// A single entry `[n]` describes the identity map with no parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", into = "MlpRecord<T>", try_from = "MlpRecord<T>")]
pub struct Mlp<T> {
    layer_sizes: Vec<usize>,
    output_activation: Activation,
    layers: Vec<Dense<T>>,
}

/// Layer activations recorded by [`Mlp::forward_trace`]; `activations[0]` is
/// the input and the last entry is `h_θ(x)`.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    activations: Vec<Vec<T>>,
}

impl<T> ForwardTrace<T> {
    pub fn output(&self) -> &[T] {
        self.activations.last().expect("trace holds the input")
    }

    pub fn input(&self) -> &[T] {
        &self.activations[0]
    }
}

impl<T: Scalar> Mlp<T> {
    /// All parameters zero.
    pub fn zeros(layer_sizes: &[usize], output_activation: Activation) -> Result<Self> {
        if layer_sizes.is_empty() || layer_sizes.contains(&0) {
            return Err(Error::Config(format!(
                "invalid layer sizes {layer_sizes:?}"
            )));
        }
        let layers = layer_sizes
            .windows(2)
            .map(|w| Dense::zeros(w[0], w[1]))
            .collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            output_activation,
            layers,
        })
    }

    /// Weights and biases drawn uniformly from `±1/sqrt(fan_in)` using a
    /// xoshiro256++ generator seeded with `seed`.
    pub fn init(layer_sizes: &[usize], output_activation: Activation, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes, output_activation)?;
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        for layer in &mut net.layers {
            let r = 1.0 / (layer.inputs as f64).sqrt();
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w = T::lit(rng.random_range(-r..=r));
            }
        }
        Ok(net)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn output_activation(&self) -> Activation {
        self.output_activation
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<T>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("non-empty")
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::num_params).sum()
    }

    /// Flattened parameter vector θ.
    pub fn params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn set_params(&mut self, theta: &[T]) -> Result<()> {
        check_len("parameter vector", self.num_params(), theta.len())?;
        let mut rest = theta;
        for layer in &mut self.layers {
            let (w, r) = rest.split_at(layer.weights.len());
            let (b, r) = r.split_at(layer.bias.len());
            layer.weights.copy_from_slice(w);
            layer.bias.copy_from_slice(b);
            rest = r;
        }
        Ok(())
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output_activation
        } else {
            Activation::Tanh
        }
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(self.forward_trace(x)?.activations.pop().expect("non-empty"))
    }

    pub fn forward_trace(&self, x: &[T]) -> Result<ForwardTrace<T>> {
        check_len("network input", self.input_dim(), x.len())?;
        if !all_finite(x) {
            return Err(Error::NonFinite("network input"));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let act = self.activation(l);
            let input = activations.last().expect("non-empty");
            let out: Vec<T> = layer
                .weights
                .chunks_exact(layer.inputs)
                .zip(&layer.bias)
                .map(|(row, &b)| {
                    let z = row.iter().zip(input).fold(b, |acc, (&w, &v)| acc + w * v);
                    act.apply(z)
                })
                .collect();
            activations.push(out);
        }
        Ok(ForwardTrace { activations })
    }

    /// Reverse accumulation of `upstream · h_θ(x)` with respect to θ, i.e.
    /// the Jacobian (parameters × outputs) applied to `upstream`.
    pub fn backward(&self, trace: &ForwardTrace<T>, upstream: &[T]) -> Result<Vec<T>> {
        check_len("upstream gradient", self.output_dim(), upstream.len())?;
        let mut grad = vec![T::zero(); self.num_params()];
        let mut end = grad.len();
        let mut g_out = upstream.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let act = self.activation(l);
            let input = &trace.activations[l];
            let output = &trace.activations[l + 1];
            let g_pre: Vec<T> = g_out
                .iter()
                .zip(output)
                .map(|(&g, &y)| g * act.derivative_from_output(y))
                .collect();
            let start = end - layer.num_params();
            let (gw, gb) = grad[start..end].split_at_mut(layer.weights.len());
            gb.copy_from_slice(&g_pre);
            for (row, &gp) in gw.chunks_exact_mut(layer.inputs).zip(&g_pre) {
                for (g, &v) in row.iter_mut().zip(input) {
                    *g = gp * v;
                }
            }
            if l > 0 {
                let mut g_in = vec![T::zero(); layer.inputs];
                for (row, &gp) in layer.weights.chunks_exact(layer.inputs).zip(&g_pre) {
                    for (gi, &w) in g_in.iter_mut().zip(row) {
                        *gi = *gi + w * gp;
                    }
                }
                g_out = g_in;
            }
            end = start;
        }
        Ok(grad)
    }

    /// Exact Jacobian of `h_θ` at `x`, one reverse pass per output.
    pub fn jacobian(&self, x: &[T]) -> Result<Jacobian<T>> {
        let trace = self.forward_trace(x)?;
        let m = self.output_dim();
        let rows = self.num_params();
        let mut data = vec![T::zero(); rows * m];
        let mut unit = vec![T::zero(); m];
        for j in 0..m {
            unit.iter_mut().for_each(|u| *u = T::zero());
            unit[j] = T::one();
            for (i, g) in self.backward(&trace, &unit)?.into_iter().enumerate() {
                data[i * m + j] = g;
            }
        }
        Ok(Jacobian {
            rows,
            cols: m,
            data,
        })
    }

    /// `θ ← θ − α·direction`.
    pub fn apply_param_step(&mut self, direction: &[T], alpha: T) -> Result<()> {
        check_len("parameter step", self.num_params(), direction.len())?;
        let mut rest = direction;
        for layer in &mut self.layers {
            for p in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *p = *p - alpha * rest[0];
                rest = &rest[1..];
            }
        }
        Ok(())
    }

    pub fn params_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| all_finite(&l.weights) && all_finite(&l.bias))
    }
}

/// `∂h_j/∂θ_i`, stored row-major as parameters × outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Jacobian<T> {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, param: usize, output: usize) -> T {
        self.data[param * self.cols + output]
    }

    pub fn row(&self, param: usize) -> &[T] {
        &self.data[param * self.cols..(param + 1) * self.cols]
    }

    /// `J v` for an output-space vector `v`.
    pub fn apply(&self, v: &[T]) -> Result<Vec<T>> {
        check_len("jacobian contraction", self.cols, v.len())?;
        Ok(self
            .data
            .chunks_exact(self.cols)
            .map(|row| crate::scalar::dot(row, v))
            .collect())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct LayerRecord<T> {
    weights: Vec<Vec<T>>,
    bias: Vec<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct MlpRecord<T> {
    layer_sizes: Vec<usize>,
    output_activation: Activation,
    layers: Vec<LayerRecord<T>>,
}

impl<T: Scalar> From<Mlp<T>> for MlpRecord<T> {
    fn from(net: Mlp<T>) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|l| LayerRecord {
                weights: l
                    .weights
                    .chunks_exact(l.inputs)
                    .map(<[T]>::to_vec)
                    .collect(),
                bias: l.bias.clone(),
            })
            .collect();
        Self {
            layer_sizes: net.layer_sizes,
            output_activation: net.output_activation,
            layers,
        }
    }
}

impl<T: Scalar> TryFrom<MlpRecord<T>> for Mlp<T> {
    type Error = Error;

    fn try_from(r: MlpRecord<T>) -> Result<Self> {
        let mut net = Mlp::zeros(&r.layer_sizes, r.output_activation)?;
        check_len("checkpoint layers", net.layers.len(), r.layers.len())?;
        for (layer, rec) in net.layers.iter_mut().zip(r.layers) {
            check_len("checkpoint weight rows", layer.outputs, rec.weights.len())?;
            check_len("checkpoint bias", layer.outputs, rec.bias.len())?;
            for (dst, row) in layer
                .weights
                .chunks_exact_mut(layer.inputs)
                .zip(&rec.weights)
            {
                check_len("checkpoint weight row", layer.inputs, row.len())?;
                dst.copy_from_slice(row);
            }
            layer.bias = rec.bias;
        }
        if !net.params_finite() {
            return Err(Error::NonFinite("checkpoint parameters"));
        }
        Ok(net)
    }
}
