//! Dense network with sinusoidal hidden activations and a linear read-out,
//! with batched forward, directional-derivative (JVP), and reverse passes.
//! Batches are stored column-wise: one sample per column.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Layer weights and biases. `weights[l]` maps the input of layer `l` to its
/// pre-activation; every layer but the last applies `sin`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl MlpParams {
    /// Glorot-uniform initialisation: weights in
    /// `+/- sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init<R: Rng + ?Sized>(
        input_dim: usize,
        hidden_layers: usize,
        hidden_width: usize,
        output_dim: usize,
        rng: &mut R,
    ) -> Self {
        let mut dims = Vec::with_capacity(hidden_layers + 2);
        dims.push(input_dim);
        for _ in 0..hidden_layers {
            dims.push(hidden_width);
        }
        dims.push(output_dim);
        let mut weights = Vec::with_capacity(dims.len() - 1);
        let mut biases = Vec::with_capacity(dims.len() - 1);
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(DMatrix::from_fn(fan_out, fan_in, |_, _| rng.gen_range(-bound..bound)));
            biases.push(DVector::zeros(fan_out));
        }
        Self { weights, biases }
    }

    pub fn hidden_layers(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights[self.weights.len() - 1].nrows()
    }

    pub fn hidden_width(&self) -> usize {
        if self.weights.len() > 1 {
            self.weights[0].nrows()
        } else {
            0
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Single-sample forward pass.
    pub fn forward(&self, u: &DVector<f64>) -> DVector<f64> {
        let h = self.weights.len() - 1;
        let mut z = u.clone();
        for l in 0..h {
            let mut a = &self.weights[l] * &z + &self.biases[l];
            a.apply(|v| *v = v.sin());
            z = a;
        }
        &self.weights[h] * &z + &self.biases[h]
    }

    /// Batched forward pass; returns the cache needed by the JVP and reverse
    /// passes together with the output block.
    pub fn forward_batch(&self, u: &DMatrix<f64>) -> (BatchCache, DMatrix<f64>) {
        let h = self.weights.len() - 1;
        let b = u.ncols();
        let mut inputs = Vec::with_capacity(h + 1);
        let mut cos_a = Vec::with_capacity(h);
        inputs.push(u.clone());
        for l in 0..h {
            let mut a = DMatrix::zeros(self.weights[l].nrows(), b);
            a.gemm(1.0, &self.weights[l], &inputs[l], 0.0);
            add_bias(&mut a, &self.biases[l]);
            let mut cos = a.clone();
            cos.apply(|v| *v = v.cos());
            let mut sin = a;
            sin.apply(|v| *v = v.sin());
            cos_a.push(cos);
            inputs.push(sin);
        }
        let mut y = DMatrix::zeros(self.output_dim(), b);
        y.gemm(1.0, &self.weights[h], &inputs[h], 0.0);
        add_bias(&mut y, &self.biases[h]);
        (BatchCache { inputs, cos_a }, y)
    }

    /// Directional derivative of the batched forward pass along the input
    /// tangents `u_dot` (one tangent per column, matching the cache's batch).
    pub fn jvp_batch(&self, cache: &BatchCache, u_dot: &DMatrix<f64>) -> (JvpCache, DMatrix<f64>) {
        let h = self.weights.len() - 1;
        let b = u_dot.ncols();
        let mut a_dot = Vec::with_capacity(h);
        let mut z_dot = u_dot.clone();
        for l in 0..h {
            let mut ad = DMatrix::zeros(self.weights[l].nrows(), b);
            ad.gemm(1.0, &self.weights[l], &z_dot, 0.0);
            z_dot = ad.component_mul(&cache.cos_a[l]);
            a_dot.push(ad);
        }
        let mut y_dot = DMatrix::zeros(self.output_dim(), b);
        y_dot.gemm(1.0, &self.weights[h], &z_dot, 0.0);
        (JvpCache { a_dot }, y_dot)
    }
}

/// Caches of a batched forward pass: `inputs[l]` is the input block of layer
/// `l` (`inputs[0]` is the network input), `cos_a[l]` the cosine of hidden
/// pre-activations (their sine is `inputs[l + 1]`).
pub struct BatchCache {
    pub inputs: Vec<DMatrix<f64>>,
    pub cos_a: Vec<DMatrix<f64>>,
}

/// Hidden pre-activation tangents of one JVP pass.
pub struct JvpCache {
    pub a_dot: Vec<DMatrix<f64>>,
}

impl JvpCache {
    /// Input tangent of layer `l` given the original input tangent.
    pub fn layer_input_tangent(
        &self,
        cache: &BatchCache,
        u_dot: &DMatrix<f64>,
        l: usize,
    ) -> DMatrix<f64> {
        if l == 0 {
            u_dot.clone()
        } else {
            self.a_dot[l - 1].component_mul(&cache.cos_a[l - 1])
        }
    }
}

/// Parameter-shaped gradient accumulator.
#[derive(Debug, Clone)]
pub struct MlpGrad {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl MlpGrad {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            weights: params.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            biases: params.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn norm(&self) -> f64 {
        let mut acc = 0.0;
        for w in &self.weights {
            acc += w.norm_squared();
        }
        for b in &self.biases {
            acc += b.norm_squared();
        }
        acc.sqrt()
    }
}

pub(crate) fn add_bias(a: &mut DMatrix<f64>, bias: &DVector<f64>) {
    for mut col in a.column_iter_mut() {
        col += bias;
    }
}

/// `out += m` summed over columns.
pub(crate) fn add_row_sums(out: &mut DVector<f64>, m: &DMatrix<f64>) {
    for col in m.column_iter() {
        *out += col;
    }
}
