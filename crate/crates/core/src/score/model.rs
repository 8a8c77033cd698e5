//! The score network: an MLP over featurised `(t, x)` inputs whose output is
//! scaled by `relu(d(x, boundary) - delta)` so the score vanishes on a collar
//! of the boundary. Periodic coordinates enter as `(cos, sin)` pairs and are
//! ignored by the distance gate.

use super::mlp::{BatchCache, MlpParams};
use crate::geometry::DomainSpec;
use nalgebra::{DMatrix, DVector};

/// Default boundary-collar threshold in domain units.
pub const DEFAULT_DELTA: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct ScoreModel {
    pub params: MlpParams,
    /// Collar width: the score is exactly zero where the boundary distance
    /// is at most `delta`.
    pub delta: f64,
    pub domain: DomainSpec,
    /// Time horizon used to normalise the time feature.
    pub horizon: f64,
}

/// Input width of the network for a domain: constrained coordinates, a
/// `(cos, sin)` pair per torus coordinate, and one time feature.
pub fn feature_dim(domain: &DomainSpec) -> usize {
    domain.constrained_dim() + 2 * domain.periodic_dims() + 1
}

impl ScoreModel {
    pub fn new(params: MlpParams, delta: f64, domain: DomainSpec, horizon: f64) -> Self {
        debug_assert_eq!(params.input_dim(), feature_dim(&domain));
        debug_assert_eq!(params.output_dim(), domain.dim());
        Self { params, delta, domain, horizon }
    }

    /// Featurise one state into a column of the input block.
    pub(crate) fn fill_features(&self, mut col: nalgebra::DVectorViewMut<f64>, t: f64, x: &DVector<f64>) {
        let dc = self.domain.constrained_dim();
        for i in 0..dc {
            col[i] = x[i];
        }
        for j in 0..self.domain.periodic_dims() {
            let theta = x[dc + j];
            col[dc + 2 * j] = theta.cos();
            col[dc + 2 * j + 1] = theta.sin();
        }
        col[feature_dim(&self.domain) - 1] = t / self.horizon;
    }

    /// Input-space tangent of featurisation along state coordinate `i`.
    pub(crate) fn fill_feature_tangent(
        &self,
        mut col: nalgebra::DVectorViewMut<f64>,
        i: usize,
        x: &DVector<f64>,
    ) {
        let dc = self.domain.constrained_dim();
        if i < dc {
            col[i] = 1.0;
        } else {
            let j = i - dc;
            let theta = x[dc + j];
            col[dc + 2 * j] = -theta.sin();
            col[dc + 2 * j + 1] = theta.cos();
        }
    }

    /// The boundary gate `relu(d(x, boundary) - delta)`; identically one on
    /// domains without constraints.
    pub fn gate(&self, x: &DVector<f64>) -> f64 {
        let set = self.domain.constrained();
        if set.num_constraints() == 0 {
            return 1.0;
        }
        let block = self.domain.constrained_block(x);
        let dist = set.min_slack(&block);
        (dist - self.delta).max(0.0)
    }

    /// Gradient of the gate in state coordinates; zero inside the collar
    /// (subgradient zero at the kink) and on periodic coordinates.
    pub fn gate_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let d = self.domain.dim();
        let set = self.domain.constrained();
        let mut grad = DVector::zeros(d);
        if set.num_constraints() == 0 {
            return grad;
        }
        let block = self.domain.constrained_block(x);
        let (dist, id) = set.active_constraint(&block).expect("constraints present");
        if dist <= self.delta {
            return grad;
        }
        let g = set.slack_gradient(id, &block);
        for i in 0..set.dim() {
            grad[i] = g[i];
        }
        grad
    }

    /// `s(t, x) = gate(x) * NN(t, x)`.
    pub fn score_eval(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        let gate = self.gate(x);
        if gate == 0.0 {
            return DVector::zeros(self.domain.dim());
        }
        let mut u = DVector::zeros(feature_dim(&self.domain));
        self.fill_features(u.rows_mut(0, u.len()), t, x);
        self.params.forward(&u) * gate
    }

    /// Scores of many states at a shared time, batched through the network.
    pub fn score_eval_batch(&self, t: f64, xs: &[DVector<f64>]) -> Vec<DVector<f64>> {
        if xs.is_empty() {
            return Vec::new();
        }
        let n_in = feature_dim(&self.domain);
        let mut u = DMatrix::zeros(n_in, xs.len());
        for (j, x) in xs.iter().enumerate() {
            self.fill_features(u.column_mut(j), t, x);
        }
        let (_, y) = self.params.forward_batch(&u);
        xs.iter()
            .enumerate()
            .map(|(j, x)| {
                let gate = self.gate(x);
                DVector::from_iterator(self.domain.dim(), y.column(j).iter().map(|v| v * gate))
            })
            .collect()
    }

    /// Exact divergence `sum_i d s_i / d x_i` via one JVP per coordinate:
    /// `div s = <grad gate, y> + gate * sum_i (J_x NN)_{ii}`.
    pub fn divergence(&self, t: f64, x: &DVector<f64>) -> f64 {
        let gate = self.gate(x);
        let ggrad = self.gate_gradient(x);
        if gate == 0.0 && ggrad.iter().all(|v| *v == 0.0) {
            return 0.0;
        }
        let n_in = feature_dim(&self.domain);
        let mut u = DMatrix::zeros(n_in, 1);
        self.fill_features(u.column_mut(0), t, x);
        let (cache, y) = self.params.forward_batch(&u);
        let mut div = 0.0;
        for i in 0..self.domain.dim() {
            div += ggrad[i] * y[(i, 0)];
        }
        if gate > 0.0 {
            div += gate * self.jacobian_trace(&cache, x);
        }
        div
    }

    fn jacobian_trace(&self, cache: &BatchCache, x: &DVector<f64>) -> f64 {
        let n_in = feature_dim(&self.domain);
        let mut tr = 0.0;
        for i in 0..self.domain.dim() {
            let mut dir = DMatrix::zeros(n_in, 1);
            self.fill_feature_tangent(dir.column_mut(0), i, x);
            let (_, y_dot) = self.params.jvp_batch(cache, &dir);
            tr += y_dot[(i, 0)];
        }
        tr
    }
}
