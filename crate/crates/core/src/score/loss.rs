//! Implicit score matching: `L = E[ lambda_t ( ||s||^2 / 2 + div s ) ]` with
//! `lambda_t = t + 1`, over trajectory slices. The divergence is exact (one
//! JVP per coordinate) by default; a Rademacher trace estimator is available
//! for high-dimensional domains.
//!
//! Writing `s = gate * y` with `y` the raw network output,
//! `div s = <grad gate, y> + gate * trace(dy/dx)`, so the per-sample loss is
//! `w (gate^2 ||y||^2 / 2 + <grad gate, y> + gate * T)`. Parameter gradients
//! flow through the primal output cotangent `w (gate^2 y + grad gate)` and,
//! for the trace term, back through each JVP pass; the tangent-path
//! cotangents on hidden pre-activations rejoin the primal reverse sweep.

use super::mlp::{add_row_sums, JvpCache, MlpGrad};
use super::model::{feature_dim, ScoreModel};
use crate::error::{Error, Result};
use crate::sampling::TrajectorySlices;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

struct Probe {
    /// Input-space tangents, one column per sample.
    u_dot: DMatrix<f64>,
    /// Output selector: the divergence contribution of this probe for sample
    /// `b` is `<selector[:, b], y_dot[:, b]>`.
    selector: DMatrix<f64>,
}

fn state_tangent_to_features(
    model: &ScoreModel,
    states: &[DVector<f64>],
    state_dir: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n_in = feature_dim(&model.domain);
    let dc = model.domain.constrained_dim();
    let p = model.domain.periodic_dims();
    let b = states.len();
    let mut u_dot = DMatrix::zeros(n_in, b);
    for (col, x) in states.iter().enumerate() {
        for i in 0..dc {
            u_dot[(i, col)] = state_dir[(i, col)];
        }
        for j in 0..p {
            let theta = x[dc + j];
            let w = state_dir[(dc + j, col)];
            u_dot[(dc + 2 * j, col)] = -theta.sin() * w;
            u_dot[(dc + 2 * j + 1, col)] = cosine(theta) * w;
        }
    }
    u_dot
}

fn cosine(theta: f64) -> f64 {
    theta.cos()
}

fn exact_probes(model: &ScoreModel, states: &[DVector<f64>]) -> Vec<Probe> {
    let d = model.domain.dim();
    let b = states.len();
    (0..d)
        .map(|i| {
            let mut dir = DMatrix::zeros(d, b);
            for col in 0..b {
                dir[(i, col)] = 1.0;
            }
            let mut selector = DMatrix::zeros(d, b);
            for col in 0..b {
                selector[(i, col)] = 1.0;
            }
            Probe { u_dot: state_tangent_to_features(model, states, &dir), selector }
        })
        .collect()
}

fn rademacher_probes<R: Rng + ?Sized>(
    model: &ScoreModel,
    states: &[DVector<f64>],
    n_probes: usize,
    rng: &mut R,
) -> Vec<Probe> {
    let d = model.domain.dim();
    let b = states.len();
    let scale = 1.0 / n_probes as f64;
    (0..n_probes)
        .map(|_| {
            let dir = DMatrix::from_fn(d, b, |_, _| if rng.gen::<bool>() { 1.0 } else { -1.0 });
            let selector = &dir * scale;
            Probe { u_dot: state_tangent_to_features(model, states, &dir), selector }
        })
        .collect()
}

struct PassOutput {
    loss: f64,
    grad: Option<MlpGrad>,
}

fn ism_pass(model: &ScoreModel, batch: &TrajectorySlices, probes: Vec<Probe>, with_grad: bool) -> Result<PassOutput> {
    let b = batch.len();
    if b == 0 {
        return Err(Error::EmptyInput("implicit score matching needs a nonempty batch".into()));
    }
    let d = model.domain.dim();
    let n_in = feature_dim(&model.domain);
    let params = &model.params;
    let h = params.hidden_layers();

    // featurised inputs, gates, gate gradients, weights
    let mut u = DMatrix::zeros(n_in, b);
    let mut gates = Vec::with_capacity(b);
    let mut gate_grads = DMatrix::zeros(d, b);
    let mut w = Vec::with_capacity(b);
    for col in 0..b {
        let x = &batch.states[col];
        let t = batch.times[col];
        model.fill_features(u.column_mut(col), t, x);
        gates.push(model.gate(x));
        gate_grads.set_column(col, &model.gate_gradient(x));
        w.push((t + 1.0) / b as f64);
    }

    let (cache, y) = params.forward_batch(&u);

    // primal part of the loss
    let mut loss = 0.0;
    for col in 0..b {
        let yc = y.column(col);
        let half_sq = 0.5 * gates[col] * gates[col] * yc.norm_squared();
        let gate_term = gate_grads.column(col).dot(&yc);
        loss += w[col] * (half_sq + gate_term);
    }

    // divergence part, one JVP per probe
    let jvps: Vec<(JvpCache, DMatrix<f64>)> =
        probes.iter().map(|p| params.jvp_batch(&cache, &p.u_dot)).collect();
    for (probe, (_, y_dot)) in probes.iter().zip(&jvps) {
        for col in 0..b {
            loss += w[col] * gates[col] * probe.selector.column(col).dot(&y_dot.column(col));
        }
    }

    if !with_grad {
        return Ok(PassOutput { loss, grad: None });
    }

    let mut grad = MlpGrad::zeros_like(params);
    // tangent-origin cotangents on hidden pre-activations
    let mut a_bar: Vec<DMatrix<f64>> =
        (0..h).map(|l| DMatrix::zeros(params.weights[l].nrows(), b)).collect();

    for (probe, (jvp, _)) in probes.iter().zip(&jvps) {
        // cotangent on the probe's output tangent
        let mut r_bar = probe.selector.clone();
        for col in 0..b {
            let scale = w[col] * gates[col];
            for row in 0..d {
                r_bar[(row, col)] *= scale;
            }
        }
        // output layer: y_dot = W_h * z_dot_h
        let z_h = jvp.layer_input_tangent(&cache, &probe.u_dot, h);
        grad.weights[h].gemm(1.0, &r_bar, &z_h.transpose(), 1.0);
        let mut c = DMatrix::zeros(params.weights[h].ncols(), b);
        c.gemm_tr(1.0, &params.weights[h], &r_bar, 0.0);
        for l in (0..h).rev() {
            // z_dot_{l+1} = cos(a_l) .* a_dot_l
            let sin_a = &cache.inputs[l + 1];
            let a_dot = &jvp.a_dot[l];
            // second-order coupling onto the primal pre-activation
            {
                let ab = a_bar[l].as_mut_slice();
                let sa = sin_a.as_slice();
                let ad = a_dot.as_slice();
                let cc = c.as_slice();
                for k in 0..ab.len() {
                    ab[k] -= sa[k] * ad[k] * cc[k];
                }
            }
            let g_a = cache.cos_a[l].component_mul(&c);
            let z_l = jvp.layer_input_tangent(&cache, &probe.u_dot, l);
            grad.weights[l].gemm(1.0, &g_a, &z_l.transpose(), 1.0);
            if l > 0 {
                let mut down = DMatrix::zeros(params.weights[l].ncols(), b);
                down.gemm_tr(1.0, &params.weights[l], &g_a, 0.0);
                c = down;
            }
        }
    }

    // primal reverse with the combined cotangents
    let mut y_bar = DMatrix::zeros(d, b);
    for col in 0..b {
        let yc = y.column(col);
        let scale = w[col] * gates[col] * gates[col];
        for row in 0..d {
            y_bar[(row, col)] = scale * yc[row] + w[col] * gate_grads[(row, col)];
        }
    }
    grad.weights[h].gemm(1.0, &y_bar, &cache.inputs[h].transpose(), 1.0);
    add_row_sums(&mut grad.biases[h], &y_bar);
    let mut z_bar = DMatrix::zeros(params.weights[h].ncols(), b);
    z_bar.gemm_tr(1.0, &params.weights[h], &y_bar, 0.0);
    for l in (0..h).rev() {
        let mut a_total = cache.cos_a[l].component_mul(&z_bar);
        a_total += &a_bar[l];
        grad.weights[l].gemm(1.0, &a_total, &cache.inputs[l].transpose(), 1.0);
        add_row_sums(&mut grad.biases[l], &a_total);
        if l > 0 {
            let mut down = DMatrix::zeros(params.weights[l].ncols(), b);
            down.gemm_tr(1.0, &params.weights[l], &a_total, 0.0);
            z_bar = down;
        }
    }

    Ok(PassOutput { loss, grad: Some(grad) })
}

/// Batch-mean ISM loss with exact divergence.
pub fn ism_loss(model: &ScoreModel, batch: &TrajectorySlices) -> Result<f64> {
    let probes = exact_probes(model, &batch.states);
    ism_pass(model, batch, probes, false).map(|o| o.loss)
}

/// Loss and analytic parameter gradient with exact divergence.
pub fn ism_loss_gradient(model: &ScoreModel, batch: &TrajectorySlices) -> Result<(f64, MlpGrad)> {
    let probes = exact_probes(model, &batch.states);
    let out = ism_pass(model, batch, probes, true)?;
    Ok((out.loss, out.grad.expect("gradient requested")))
}

/// Loss and gradient with the divergence replaced by a Rademacher trace
/// estimator; intended for dimensions where one JVP per coordinate is too
/// expensive.
pub fn ism_loss_gradient_hutchinson<R: Rng + ?Sized>(
    model: &ScoreModel,
    batch: &TrajectorySlices,
    n_probes: usize,
    rng: &mut R,
) -> Result<(f64, MlpGrad)> {
    if n_probes == 0 {
        return Err(Error::Format("trace estimator needs at least one probe".into()));
    }
    let probes = rademacher_probes(model, &batch.states, n_probes, rng);
    let out = ism_pass(model, batch, probes, true)?;
    Ok((out.loss, out.grad.expect("gradient requested")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_interval, DomainSpec};
    use crate::sampling::TrajectorySlices;
    use crate::score::mlp::MlpParams;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn tiny_model(seed: u64) -> ScoreModel {
        let domain = DomainSpec::from_set(make_interval(0.0, 1.0).unwrap()).unwrap();
        let mut rng = StdRng::seed_from_u64(seed);
        let params = MlpParams::init(feature_dim(&domain), 1, 4, 1, &mut rng);
        ScoreModel::new(params, 0.01, domain, 1.0)
    }

    fn tiny_batch(model: &ScoreModel, seed: u64, n: usize) -> TrajectorySlices {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut times = Vec::new();
        let mut states = Vec::new();
        let mut origin = Vec::new();
        for i in 0..n {
            // keep states away from the collar kink and the wall-switch point
            let x = loop {
                let c: f64 = rng.gen_range(0.05..0.95);
                if (c - 0.5).abs() > 1e-3 && (c.min(1.0 - c) - model.delta).abs() > 1e-3 {
                    break c;
                }
            };
            times.push(rng.gen_range(0.05..1.0));
            states.push(DVector::from_element(1, x));
            origin.push(i);
        }
        TrajectorySlices::new(times, states, origin, &model.domain).unwrap()
    }

    #[test]
    fn zero_parameters_give_zero_loss() {
        let mut model = tiny_model(1);
        for w in &mut model.params.weights {
            w.fill(0.0);
        }
        for b in &mut model.params.biases {
            b.fill(0.0);
        }
        let batch = tiny_batch(&model, 2, 16);
        assert_eq!(ism_loss(&model, &batch).unwrap(), 0.0);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let model = tiny_model(1);
        let batch = TrajectorySlices::new(vec![], vec![], vec![], &model.domain).unwrap();
        assert!(matches!(ism_loss(&model, &batch), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn loss_matches_pointwise_definition() {
        // mean of lambda (||s||^2/2 + div s) over the batch, computed with
        // the single-point evaluators
        let model = tiny_model(5);
        let batch = tiny_batch(&model, 6, 9);
        let loss = ism_loss(&model, &batch).unwrap();
        let mut manual = 0.0;
        for i in 0..batch.len() {
            let t = batch.times[i];
            let x = &batch.states[i];
            let s = model.score_eval(t, x);
            let div = model.divergence(t, x);
            manual += (t + 1.0) * (0.5 * s.norm_squared() + div);
        }
        manual /= batch.len() as f64;
        assert_relative_eq!(loss, manual, epsilon = 1e-12);
    }

    fn loss_with_perturbed(model: &ScoreModel, batch: &TrajectorySlices, layer: usize, bias: bool, idx: usize, eps: f64) -> f64 {
        let mut m = model.clone();
        if bias {
            m.params.biases[layer][idx] += eps;
        } else {
            m.params.weights[layer].as_mut_slice()[idx] += eps;
        }
        ism_loss(&m, batch).unwrap()
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        for seed in 0..3u64 {
            let model = tiny_model(100 + seed);
            let batch = tiny_batch(&model, 200 + seed, 8);
            let (_, grad) = ism_loss_gradient(&model, &batch).unwrap();
            let h = 1e-5;
            let mut max_rel = 0.0f64;
            for layer in 0..model.params.weights.len() {
                for idx in 0..model.params.weights[layer].len() {
                    let up = loss_with_perturbed(&model, &batch, layer, false, idx, h);
                    let dn = loss_with_perturbed(&model, &batch, layer, false, idx, -h);
                    let fd = (up - dn) / (2.0 * h);
                    let an = grad.weights[layer].as_slice()[idx];
                    max_rel = max_rel.max((an - fd).abs() / fd.abs().max(1e-4));
                }
                for idx in 0..model.params.biases[layer].len() {
                    let up = loss_with_perturbed(&model, &batch, layer, true, idx, h);
                    let dn = loss_with_perturbed(&model, &batch, layer, true, idx, -h);
                    let fd = (up - dn) / (2.0 * h);
                    let an = grad.biases[layer][idx];
                    max_rel = max_rel.max((an - fd).abs() / fd.abs().max(1e-4));
                }
            }
            assert!(max_rel < 1e-5, "seed {seed}: max relative gradient error {max_rel}");
        }
    }

    #[test]
    fn hutchinson_estimator_is_unbiased_against_exact() {
        let model = tiny_model(9);
        let batch = tiny_batch(&model, 10, 12);
        let (exact_loss, _) = ism_loss_gradient(&model, &batch).unwrap();
        let mut rng = StdRng::seed_from_u64(11);
        let n_draws = 2000;
        let mut acc = 0.0;
        for _ in 0..n_draws {
            let (l, _) = ism_loss_gradient_hutchinson(&model, &batch, 1, &mut rng).unwrap();
            acc += l;
        }
        let mean = acc / n_draws as f64;
        // Rademacher trace estimates average to the exact divergence
        assert!(
            (mean - exact_loss).abs() < 0.05 * exact_loss.abs().max(1.0),
            "hutchinson mean {mean} vs exact {exact_loss}"
        );
    }

    #[test]
    fn gradient_handles_multidimensional_torus_domains() {
        // gradient check on a product domain exercises the periodic
        // featurisation path
        let domain = DomainSpec::new(make_interval(0.0, 1.0).unwrap(), 1).unwrap();
        let mut rng = StdRng::seed_from_u64(77);
        let params = MlpParams::init(feature_dim(&domain), 1, 3, 2, &mut rng);
        let model = ScoreModel::new(params, 0.01, domain, 1.0);
        let times = vec![0.3, 0.8, 0.55];
        let states = vec![
            DVector::from_row_slice(&[0.3, 1.2]),
            DVector::from_row_slice(&[0.7, 4.0]),
            DVector::from_row_slice(&[0.2, 0.1]),
        ];
        let batch = TrajectorySlices::new(times, states, vec![0, 1, 2], &model.domain).unwrap();
        let (_, grad) = ism_loss_gradient(&model, &batch).unwrap();
        let h = 1e-5;
        for layer in 0..model.params.weights.len() {
            for idx in 0..model.params.weights[layer].len() {
                let up = loss_with_perturbed(&model, &batch, layer, false, idx, h);
                let dn = loss_with_perturbed(&model, &batch, layer, false, idx, -h);
                let fd = (up - dn) / (2.0 * h);
                let an = grad.weights[layer].as_slice()[idx];
                assert!(
                    (an - fd).abs() / fd.abs().max(1e-4) < 1e-5,
                    "layer {layer} idx {idx}: {an} vs {fd}"
                );
            }
        }
    }
}
