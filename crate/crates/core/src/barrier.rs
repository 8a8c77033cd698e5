//! Log-barrier Hessian geometry on polytopes: the barrier potential, the
//! metric `g = A^T S^{-2} A`, its inverse-square-root noise map, the
//! divergence drift of `g^{-1}`, and geodesic-random-walk steps for the
//! forward and backward dynamics.

use crate::error::{Error, Result};
use crate::geometry::ConstraintSet;
use crate::schedule::NoiseSchedule;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Retraction margin coefficient: a shortened step must land with slack at
/// least `eps * sqrt(gamma)`.
pub const RETRACTION_EPS: f64 = 1e-3;
/// Halving budget of the retraction.
pub const MAX_HALVINGS: usize = 60;

/// The barrier metric at a point: slacks, `g`, and its Cholesky factor.
#[derive(Debug, Clone)]
pub struct MetricEval {
    pub x: DVector<f64>,
    pub slacks: DVector<f64>,
    pub g: DMatrix<f64>,
    chol_l: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl MetricEval {
    /// Lower-triangular Cholesky factor of `g`.
    pub fn chol_g(&self) -> &DMatrix<f64> {
        &self.chol_l
    }

    /// Solve `g u = rhs` via the cached factorisation.
    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }
}

fn require_polytope(set: &ConstraintSet) -> Result<()> {
    if !set.spheres().is_empty() {
        return Err(Error::UnsupportedDomain(
            "the log-barrier method needs linear constraints only".into(),
        ));
    }
    if set.linear().is_empty() {
        return Err(Error::UnsupportedDomain(
            "the log-barrier method needs a bounded polytope".into(),
        ));
    }
    Ok(())
}

fn slacks_checked(x: &DVector<f64>, set: &ConstraintSet) -> Result<DVector<f64>> {
    require_polytope(set)?;
    let m = set.linear().len();
    let mut s = DVector::zeros(m);
    for (i, c) in set.linear().iter().enumerate() {
        s[i] = c.slack(x);
        if s[i] <= 0.0 {
            return Err(Error::InfeasiblePoint(format!("slack {} is {:e}", i, s[i])));
        }
    }
    Ok(s)
}

/// The log-barrier potential `-sum_i log(s_i)` with slacks `s_i = b_i - <a_i, x>`.
pub fn log_barrier(x: &DVector<f64>, set: &ConstraintSet) -> Result<f64> {
    let s = slacks_checked(x, set)?;
    Ok(-s.iter().map(|v| v.ln()).sum::<f64>())
}

/// The Hessian metric `g(x) = A^T S^{-2}(x) A` with its Cholesky factor.
pub fn metric_at(x: &DVector<f64>, set: &ConstraintSet) -> Result<MetricEval> {
    let s = slacks_checked(x, set)?;
    let d = set.dim();
    let mut g = DMatrix::zeros(d, d);
    for (i, c) in set.linear().iter().enumerate() {
        let a = c.normal();
        let w = 1.0 / (s[i] * s[i]);
        g.syger(w, a, a, 1.0);
    }
    // syger fills the lower triangle only
    for r in 0..d {
        for c in (r + 1)..d {
            g[(r, c)] = g[(c, r)];
        }
    }
    let chol = g.clone().cholesky().ok_or(Error::DegenerateMetric)?;
    let chol_l = chol.l();
    Ok(MetricEval { x: x.clone(), slacks: s, g, chol_l, chol })
}

/// Map a standard normal draw `z` to noise with covariance `g^{-1}` by
/// solving `L^T u = z` against the cached Cholesky factor `g = L L^T`.
pub fn noise_map(me: &MetricEval, z: &DVector<f64>) -> DVector<f64> {
    let l = me.chol_g();
    let d = z.len();
    let mut u = DVector::zeros(d);
    for i in (0..d).rev() {
        let mut acc = z[i];
        for j in (i + 1)..d {
            acc -= l[(j, i)] * u[j];
        }
        u[i] = acc / l[(i, i)];
    }
    u
}

/// The row-wise divergence of `g^{-1}`: entry `i` is `sum_j d_j (g^{-1})_{ij}`.
///
/// With `d_j g = 2 A^T S^{-3} diag(A_{:,j}) A` and
/// `d_j g^{-1} = -g^{-1} (d_j g) g^{-1}`, writing `b_k = g^{-1} a_k` gives
/// `div(g^{-1}) = -2 sum_k s_k^{-3} <a_k, b_k> b_k`.
pub fn div_metric_inv(x: &DVector<f64>, set: &ConstraintSet) -> Result<DVector<f64>> {
    let me = metric_at(x, set)?;
    div_metric_inv_with(&me, set)
}

/// As [`div_metric_inv`] but reusing an already computed metric.
pub fn div_metric_inv_with(me: &MetricEval, set: &ConstraintSet) -> Result<DVector<f64>> {
    let d = set.dim();
    let m = set.linear().len();
    let mut out = DVector::zeros(d);
    for k in 0..m {
        let a = set.linear()[k].normal();
        let b = me.solve(a);
        let coeff = -2.0 * a.dot(&b) / (me.slacks[k] * me.slacks[k] * me.slacks[k]);
        out.axpy(coeff, &b, 1.0);
    }
    Ok(out)
}

/// One geodesic-random-walk step `W = gamma drift + sqrt(gamma) g^{-1/2} z`,
/// retracted into the interior: the full step is kept when it stays strictly
/// inside, otherwise `W` is halved until the result has slack at least
/// `eps * sqrt(gamma)`.
pub fn grw_step(
    x: &DVector<f64>,
    drift: &DVector<f64>,
    gamma: f64,
    z: &DVector<f64>,
    set: &ConstraintSet,
    eps: f64,
) -> Result<DVector<f64>> {
    let me = metric_at(x, set)?;
    grw_step_with(&me, drift, gamma, z, set, eps)
}

/// As [`grw_step`] but reusing an already computed metric at `x`.
pub fn grw_step_with(
    me: &MetricEval,
    drift: &DVector<f64>,
    gamma: f64,
    z: &DVector<f64>,
    set: &ConstraintSet,
    eps: f64,
) -> Result<DVector<f64>> {
    if !(gamma > 0.0) {
        return Err(Error::Format(format!("step size must be positive, got {gamma}")));
    }
    let mut w = drift * gamma + noise_map(me, z) * gamma.sqrt();
    let full = &me.x + &w;
    if set.min_slack(&full) > 0.0 {
        return Ok(full);
    }
    let margin = eps * gamma.sqrt();
    for _ in 0..MAX_HALVINGS {
        w *= 0.5;
        let cand = &me.x + &w;
        if set.min_slack(&cand) >= margin {
            return Ok(cand);
        }
    }
    Err(Error::StepFailure(MAX_HALVINGS))
}

/// One forward barrier-Langevin step at time `t`: drift
/// `(1/2) beta(t) div(g^{-1})` and noise scaled by `sqrt(beta(t))`.
pub fn barrier_forward_step<R: rand::Rng + ?Sized>(
    x: &DVector<f64>,
    t: f64,
    schedule: &NoiseSchedule,
    set: &ConstraintSet,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let beta = schedule.beta(t);
    let me = metric_at(x, set)?;
    let drift = div_metric_inv_with(&me, set)? * (0.5 * beta);
    let mut z = DVector::zeros(x.len());
    for zi in z.iter_mut() {
        *zi = rng.sample::<f64, _>(rand_distr::StandardNormal) * beta.sqrt();
    }
    grw_step_with(&me, &drift, schedule.gamma(), &z, set, RETRACTION_EPS)
}

/// All `N + 1` states of the forward barrier chain from `x0`.
pub fn barrier_forward_chain<R: rand::Rng + ?Sized>(
    x0: &DVector<f64>,
    schedule: &NoiseSchedule,
    set: &ConstraintSet,
    rng: &mut R,
) -> Result<Vec<DVector<f64>>> {
    let mut states = Vec::with_capacity(schedule.steps + 1);
    states.push(x0.clone());
    let mut x = x0.clone();
    for k in 0..schedule.steps {
        x = barrier_forward_step(&x, schedule.time_at(k), schedule, set, rng)?;
        states.push(x.clone());
    }
    Ok(states)
}

/// Drift of the time-reversed barrier dynamics (before the caller's `beta`
/// scaling): `(1/2) div(g^{-1})(x) + g^{-1}(x) score`, with the score
/// evaluated at the matching forward time by the caller.
pub fn barrier_backward_drift(
    x: &DVector<f64>,
    score: &DVector<f64>,
    set: &ConstraintSet,
) -> Result<DVector<f64>> {
    let me = metric_at(x, set)?;
    let div = div_metric_inv_with(&me, set)?;
    Ok(div * 0.5 + me.solve(score))
}

/// Drift of the probability-flow ODE sharing the forward marginals:
/// `(1/2) div(g^{-1})(x) - (1/2) g^{-1}(x) score`.
pub fn probability_flow_drift(
    x: &DVector<f64>,
    score: &DVector<f64>,
    set: &ConstraintSet,
) -> Result<DVector<f64>> {
    let me = metric_at(x, set)?;
    let div = div_metric_inv_with(&me, set)?;
    Ok(div * 0.5 - me.solve(score) * 0.5)
}
