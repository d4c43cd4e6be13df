//! Minimal dense-network engine shared by the reward model and the SAC networks.
//!
//! Networks are chains of affine layers, each followed by an element-wise
//! activation. Forward and backward passes work on row-major batches
//! ([`Matrix`]), one row per sample. Every dot product accumulates in a fixed
//! order that does not depend on the batch size, so evaluating a single row
//! and evaluating the same row inside a large batch give bit-identical
//! results.

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite gradient encountered, optimization diverged")]
    NonFiniteGradient,
    #[error("network must have at least one layer")]
    EmptyNetwork,
    #[error("invalid parameter snapshot: {0}")]
    InvalidSnapshot(String),
}

pub type Result<T> = std::result::Result<T, NnError>;

/// Slope of the negative half of [`Activation::LeakyRelu`].
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    LEAKY_SLOPE * z
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative given the pre-activation `z` and the output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if z > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::LeakyRelu => "leaky_relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "relu" => Some(Activation::Relu),
            "leaky_relu" => Some(Activation::LeakyRelu),
            "tanh" => Some(Activation::Tanh),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Row-major dense matrix, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(NnError::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(NnError::DimensionMismatch {
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn row_vector(x: &[f64]) -> Self {
        Self {
            rows: 1,
            cols: x.len(),
            data: x.to_vec(),
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Single column as a vector.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(NnError::DimensionMismatch {
                expected: self.rows,
                got: other.rows,
            });
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Ok(Matrix {
            rows: self.rows,
            cols,
            data,
        })
    }

    /// Copy of columns `start..end`.
    pub fn columns(&self, start: usize, end: usize) -> Matrix {
        let cols = end - start;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(&self.row(i)[start..end]);
        }
        Matrix {
            rows: self.rows,
            cols,
            data,
        }
    }
}

/// Dot product with four interleaved accumulators combined in a fixed order.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let k = c * 4;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut tail = 0.0;
    for k in chunks * 4..a.len() {
        tail += a[k] * b[k];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// One affine layer plus activation. Weights are `[out × in]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

impl Dense {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if weights.len() != in_dim * out_dim {
            return Err(NnError::DimensionMismatch {
                expected: in_dim * out_dim,
                got: weights.len(),
            });
        }
        if bias.len() != out_dim {
            return Err(NnError::DimensionMismatch {
                expected: out_dim,
                got: bias.len(),
            });
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            bias,
            activation,
        })
    }

    /// Uniform(−1/√fan_in, 1/√fan_in) for weights and biases.
    pub fn random<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let bias = (0..out_dim).map(|_| rng.random_range(-bound..bound)).collect();
        Self {
            in_dim,
            out_dim,
            weights,
            bias,
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    fn pre_activation(&self, x: &Matrix) -> Matrix {
        let mut z = Matrix::zeros(x.rows(), self.out_dim);
        for i in 0..x.rows() {
            let xr = x.row(i);
            let zr = z.row_mut(i);
            for (o, zo) in zr.iter_mut().enumerate() {
                let w = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
                *zo = self.bias[o] + dot(xr, w);
            }
        }
        z
    }
}

/// Gradient of every parameter of a [`DenseNet`], shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// Flattened in the same order as [`DenseNet::flat_params`].
    pub fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            axpy(1.0, &b.weights, &mut a.weights);
            axpy(1.0, &b.bias, &mut a.bias);
        }
    }
}

/// Intermediate values of a batched forward pass, consumed by backward.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
    output: Matrix,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        &self.output
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Dense>,
}

impl DenseNet {
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(NnError::EmptyNetwork);
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(NnError::DimensionMismatch {
                    expected: pair[0].out_dim,
                    got: pair[1].in_dim,
                });
            }
        }
        Ok(Self { layers })
    }

    /// Multilayer perceptron `input → hidden… → output` with `hidden_activation`
    /// on every hidden layer and `output_activation` on the last.
    pub fn mlp<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        hidden_activation: Activation,
        output_activation: Activation,
        rng: &mut R,
    ) -> Self {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(hidden);
        dims.push(output_dim);
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n {
                    output_activation
                } else {
                    hidden_activation
                };
                Dense::random(dims[i], dims[i + 1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(self.forward_unchecked(&Matrix::row_vector(x)).into_vec())
    }

    pub fn forward_batch(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        Ok(self.forward_unchecked(x))
    }

    fn forward_unchecked(&self, x: &Matrix) -> Matrix {
        let mut h: Option<Matrix> = None;
        for layer in &self.layers {
            let input = h.as_ref().unwrap_or(x);
            let mut z = layer.pre_activation(input);
            let act = layer.activation;
            if act != Activation::Identity {
                z.as_mut_slice().iter_mut().for_each(|v| *v = act.apply(*v));
            }
            h = Some(z);
        }
        h.expect("non-empty network")
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.cols(),
            });
        }
        Ok(())
    }

    /// Forward pass retaining what [`DenseNet::backward`] needs.
    pub fn forward_cached(&self, x: &Matrix) -> Result<ForwardCache> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let z = layer.pre_activation(&h);
            let mut a = z.clone();
            let act = layer.activation;
            a.as_mut_slice().iter_mut().for_each(|v| *v = act.apply(*v));
            inputs.push(h);
            pre.push(z);
            h = a;
        }
        Ok(ForwardCache {
            inputs,
            pre,
            output: h,
        })
    }

    /// Reverse-mode pass. `upstream` holds dL/d(output) for every row; the
    /// returned parameter gradients are summed over rows.
    pub fn backward(&self, cache: &ForwardCache, upstream: &Matrix) -> Result<(Gradients, Matrix)> {
        if upstream.cols() != self.output_dim() || upstream.rows() != cache.output.rows() {
            return Err(NnError::DimensionMismatch {
                expected: self.output_dim(),
                got: upstream.cols(),
            });
        }
        let mut grads = Gradients::zeros_like(self);
        let mut delta = upstream.clone();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let z = &cache.pre[idx];
            let a = if idx + 1 == self.layers.len() {
                &cache.output
            } else {
                &cache.inputs[idx + 1]
            };
            let act = layer.activation;
            if act != Activation::Identity {
                for ((d, &zv), &av) in delta
                    .as_mut_slice()
                    .iter_mut()
                    .zip(z.as_slice())
                    .zip(a.as_slice())
                {
                    *d *= act.derivative(zv, av);
                }
            }
            let x = &cache.inputs[idx];
            let g = &mut grads.layers[idx];
            let mut dx = Matrix::zeros(x.rows(), layer.in_dim);
            for i in 0..x.rows() {
                let xr = x.row(i);
                let dr = delta.row(i);
                let dxr = dx.row_mut(i);
                for (o, &d) in dr.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let lo = o * layer.in_dim;
                    let hi = lo + layer.in_dim;
                    axpy(d, xr, &mut g.weights[lo..hi]);
                    g.bias[o] += d;
                    axpy(d, &layer.weights[lo..hi], dxr);
                }
            }
            delta = dx;
        }
        Ok((grads, delta))
    }

    /// Single-sample convenience wrapper around forward + backward.
    pub fn backward_single(&self, x: &[f64], upstream: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        if upstream.len() != self.output_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        if x.len() != self.input_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let cache = self.forward_cached(&Matrix::row_vector(x))?;
        let (g, dx) = self.backward(&cache, &Matrix::row_vector(upstream))?;
        Ok((g, dx.into_vec()))
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    /// Mutable access to the `index`-th parameter in [`DenseNet::flat_params`] order.
    pub fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        for l in &mut self.layers {
            if index < l.weights.len() {
                return &mut l.weights[index];
            }
            index -= l.weights.len();
            if index < l.bias.len() {
                return &mut l.bias[index];
            }
            index -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// Polyak averaging: `self = (1 − tau)·self + tau·online`.
    pub fn soft_update_from(&mut self, online: &DenseNet, tau: f64) {
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            for (tv, ov) in t.weights.iter_mut().zip(&o.weights) {
                *tv = (1.0 - tau) * *tv + tau * ov;
            }
            for (tv, ov) in t.bias.iter_mut().zip(&o.bias) {
                *tv = (1.0 - tau) * *tv + tau * ov;
            }
        }
    }

    /// `{"layer_i": {"W": [[row]...], "b": [...], "activation": "..."}}`.
    pub fn to_snapshot(&self) -> Value {
        let mut map = Map::new();
        for (i, l) in self.layers.iter().enumerate() {
            let rows: Vec<Vec<f64>> = l
                .weights
                .chunks(l.in_dim)
                .map(<[f64]>::to_vec)
                .collect();
            map.insert(
                format!("layer_{i}"),
                json!({ "W": rows, "b": l.bias, "activation": l.activation.name() }),
            );
        }
        Value::Object(map)
    }

    pub fn from_snapshot(value: &Value) -> Result<Self> {
        let map = value
            .as_object()
            .ok_or_else(|| NnError::InvalidSnapshot("expected a JSON object".into()))?;
        let mut layers = Vec::with_capacity(map.len());
        for i in 0..map.len() {
            let entry = map
                .get(&format!("layer_{i}"))
                .ok_or_else(|| NnError::InvalidSnapshot(format!("missing layer_{i}")))?;
            let rows: Vec<Vec<f64>> = serde_json::from_value(entry["W"].clone())
                .map_err(|e| NnError::InvalidSnapshot(format!("layer_{i}.W: {e}")))?;
            let bias: Vec<f64> = serde_json::from_value(entry["b"].clone())
                .map_err(|e| NnError::InvalidSnapshot(format!("layer_{i}.b: {e}")))?;
            let act = entry["activation"]
                .as_str()
                .and_then(Activation::from_name)
                .ok_or_else(|| NnError::InvalidSnapshot(format!("layer_{i}.activation")))?;
            let out_dim = rows.len();
            let in_dim = rows.first().map_or(0, Vec::len);
            if out_dim == 0 || in_dim == 0 || rows.iter().any(|r| r.len() != in_dim) {
                return Err(NnError::InvalidSnapshot(format!("layer_{i}.W is ragged or empty")));
            }
            layers.push(Dense::new(in_dim, out_dim, rows.concat(), bias, act)?);
        }
        Self::from_layers(layers)
    }
}

/// Bias-corrected Adam over an ordered list of parameter slices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.second_moment
    }

    /// Applies one update. Moments are allocated lazily on the first call.
    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) -> Result<()> {
        if params.len() != grads.len() {
            return Err(NnError::DimensionMismatch {
                expected: params.len(),
                got: grads.len(),
            });
        }
        for (p, g) in params.iter().zip(&grads) {
            if p.len() != g.len() {
                return Err(NnError::DimensionMismatch {
                    expected: p.len(),
                    got: g.len(),
                });
            }
        }
        if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(NnError::NonFiniteGradient);
        }
        if self.first_moment.is_empty() {
            self.first_moment = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.second_moment = self.first_moment.clone();
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let m = &mut self.first_moment[k];
            let v = &mut self.second_moment[k];
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }

    pub fn step_net(&mut self, net: &mut DenseNet, grads: &Gradients) -> Result<()> {
        self.step(net.param_slices_mut(), grads.slices())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_layer(act: Activation) -> DenseNet {
        DenseNet::from_layers(vec![
            Dense::new(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], act).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn identity_forward() {
        let net = identity_layer(Activation::Identity);
        assert_eq!(net.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn leaky_relu_forward() {
        let net = identity_layer(Activation::LeakyRelu);
        assert_eq!(net.forward(&[-1.0, 2.0]).unwrap(), vec![-0.01, 2.0]);
    }

    #[test]
    fn rejects_wrong_input_length() {
        let net = identity_layer(Activation::Identity);
        assert_eq!(
            net.forward(&[1.0]),
            Err(NnError::DimensionMismatch {
                expected: 2,
                got: 1
            })
        );
        assert!(net.backward_single(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn rejects_unchained_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Dense::random(3, 4, Activation::Relu, &mut rng);
        let b = Dense::random(5, 1, Activation::Identity, &mut rng);
        assert!(DenseNet::from_layers(vec![a, b]).is_err());
        assert_eq!(DenseNet::from_layers(vec![]), Err(NnError::EmptyNetwork));
    }

    #[test]
    fn two_layer_net_matches_hand_computed_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = DenseNet::mlp(3, &[4], 2, Activation::Tanh, Activation::Identity, &mut rng);
        let x = [0.3, -0.7, 1.1];
        let l0 = &net.layers()[0];
        let l1 = &net.layers()[1];
        let mut h = [0.0; 4];
        for o in 0..4 {
            let mut s = l0.bias()[o];
            for j in 0..3 {
                s += l0.weights()[o * 3 + j] * x[j];
            }
            h[o] = s.tanh();
        }
        let mut y = [0.0; 2];
        for o in 0..2 {
            let mut s = l1.bias()[o];
            for j in 0..4 {
                s += l1.weights()[o * 4 + j] * h[j];
            }
            y[o] = s;
        }
        let out = net.forward(&x).unwrap();
        for o in 0..2 {
            assert!((out[o] - y[o]).abs() < 1e-14);
        }
    }

    #[test]
    fn linear_gradient_is_outer_product() {
        // L = y for a 1-output linear layer: dL/dW = x, dL/db = 1, dL/dx = W.
        let net = DenseNet::from_layers(vec![Dense::new(
            3,
            1,
            vec![0.5, -1.0, 2.0],
            vec![0.1],
            Activation::Identity,
        )
        .unwrap()])
        .unwrap();
        let (g, dx) = net.backward_single(&[1.0, 2.0, 3.0], &[1.0]).unwrap();
        assert_eq!(g.layers[0].weights, vec![1.0, 2.0, 3.0]);
        assert_eq!(g.layers[0].bias, vec![1.0]);
        assert_eq!(dx, vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = DenseNet::mlp(4, &[8, 8], 2, Activation::LeakyRelu, Activation::Identity, &mut rng);
        let (g, dx) = net.backward_single(&[0.1, 0.2, -0.3, 0.4], &[0.0, 0.0]).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_rows_match_single_evaluation_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = DenseNet::mlp(7, &[16, 16], 1, Activation::LeakyRelu, Activation::Identity, &mut rng);
        let rows: Vec<Vec<f64>> = (0..13)
            .map(|_| (0..7).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let batch = net.forward_batch(&Matrix::from_rows(&rows).unwrap()).unwrap();
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(batch.get(i, 0).to_bits(), net.forward(r).unwrap()[0].to_bits());
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = vec![1.5, -2.0];
        let mut adam = AdamState::new(0.001);
        adam.step(vec![&mut p], vec![&[0.0, 0.0]]).unwrap();
        assert_eq!(p, vec![1.5, -2.0]);
        assert_eq!(adam.step_count, 1);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut p = vec![0.0];
        let mut adam = AdamState::new(0.001);
        adam.step(vec![&mut p], vec![&[1.0]]).unwrap();
        // m̂ = 1, v̂ = 1 ⇒ Δ = lr / (1 + ε)
        assert!((p[0] + 0.001 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn adam_two_steps_match_scalar_trace() {
        let (lr, b1, b2, eps) = (0.01, 0.9, 0.999, 1e-8);
        let grads = [0.5, -0.25];
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 1.0f64);
        for (t, g) in grads.iter().enumerate() {
            let t = (t + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            x -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        }
        let mut p = vec![1.0];
        let mut adam = AdamState::new(lr);
        for g in grads {
            adam.step(vec![&mut p], vec![&[g]]).unwrap();
        }
        assert_eq!(adam.step_count, 2);
        assert!((p[0] - x).abs() < 1e-15);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut p = vec![0.0];
        let mut adam = AdamState::new(0.001);
        assert_eq!(
            adam.step(vec![&mut p], vec![&[f64::NAN]]),
            Err(NnError::NonFiniteGradient)
        );
        assert_eq!(adam.step_count, 0);
    }

    #[test]
    fn snapshot_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = DenseNet::mlp(3, &[5, 4], 2, Activation::Relu, Activation::Tanh, &mut rng);
        let snap = net.to_snapshot();
        assert_eq!(snap["layer_0"]["W"].as_array().unwrap().len(), 5);
        assert_eq!(snap["layer_2"]["activation"], "tanh");
        assert_eq!(DenseNet::from_snapshot(&snap).unwrap(), net);
        assert!(DenseNet::from_snapshot(&json!({"layer_0": {"W": [[1.0]]}})).is_err());
    }

    #[test]
    fn identical_seed_gives_identical_init() {
        let a = DenseNet::mlp(4, &[8], 1, Activation::Relu, Activation::Identity, &mut ChaCha8Rng::seed_from_u64(9));
        let b = DenseNet::mlp(4, &[8], 1, Activation::Relu, Activation::Identity, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        for l in a.layers() {
            let bound = 1.0 / (l.in_dim() as f64).sqrt();
            assert!(l.weights().iter().all(|w| w.abs() <= bound));
        }
    }
}
