//! Reflected dynamics: the straight-line reflection step against linear and
//! spherical boundaries, the reflected random walk, and the backward
//! (denoising) step. Periodic coordinates advance additively and wrap.

use crate::error::{Error, Result};
use crate::geometry::{reflect_direction, DomainSpec};
use crate::schedule::NoiseSchedule;
use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

/// Bounce budget; exceeding it means the step magnitude vastly exceeds the
/// domain diameter.
pub const MAX_BOUNCES: usize = 1_000_000;
/// Inward displacement applied after each reflection so subsequent slack
/// computations stay strictly positive.
const NUDGE: f64 = 1e-12;
/// Two hits closer than this are treated as a corner tie.
const CORNER_TIE: f64 = 1e-12;

/// Outcome of one reflected step.
#[derive(Debug, Clone)]
pub struct ReflectedStepTrace {
    pub endpoint: DVector<f64>,
    pub bounces: usize,
    pub path_length_used: f64,
}

/// Follow the straight segment `x + v`, reflecting the direction at each
/// constraint hit, until the full arclength `||v||` is consumed. Constraints
/// act on the leading coordinate block; periodic coordinates never reflect
/// and are wrapped into `[0, 2*pi)` at the end.
///
/// Corner ties resolve to the most head-on constraint; near-tangential hits
/// are skipped by the underlying ray query.
pub fn reflected_step(
    x: &DVector<f64>,
    v: &DVector<f64>,
    domain: &DomainSpec,
) -> Result<ReflectedStepTrace> {
    debug_assert_eq!(x.len(), domain.dim());
    debug_assert_eq!(v.len(), domain.dim());
    let set = domain.constrained();
    let dc = set.dim();
    if dc > 0 && !set.is_interior(&domain.constrained_block(x)) {
        return Err(Error::InfeasiblePoint("reflected step must start strictly inside".into()));
    }

    let total = v.norm();
    let mut endpoint = x.clone();
    if total < 1e-300 {
        domain.wrap_periodic(&mut endpoint);
        return Ok(ReflectedStepTrace { endpoint, bounces: 0, path_length_used: total });
    }

    let mut s_hat = v / total;
    let mut remaining = total;
    let mut bounces = 0usize;

    while remaining > 0.0 {
        let block = domain.constrained_block(&endpoint);
        let dir_block = domain.constrained_block(&s_hat);
        let hit = if dc == 0 { None } else { set.ray_hits(&block, &dir_block) };
        match hit {
            Some((t_hit, id)) if t_hit < remaining => {
                // among hits tied within CORNER_TIE keep the most head-on one
                let mut chosen = id;
                if set.num_constraints() > 1 {
                    let mut best_head_on = {
                        let p = &block + &dir_block * t_hit;
                        dir_block.dot(&set.outward_normal_for_walk(id, &p)).abs()
                    };
                    for (alt_t, alt_id) in set.all_ray_hits(&block, &dir_block) {
                        if alt_id != id && (alt_t - t_hit).abs() < CORNER_TIE {
                            let p = &block + &dir_block * alt_t;
                            let head_on =
                                dir_block.dot(&set.outward_normal_for_walk(alt_id, &p)).abs();
                            if head_on > best_head_on {
                                best_head_on = head_on;
                                chosen = alt_id;
                            }
                        }
                    }
                }
                endpoint += &s_hat * t_hit;
                remaining -= t_hit;
                bounces += 1;
                if bounces > MAX_BOUNCES {
                    return Err(Error::RunawayReflection(MAX_BOUNCES));
                }
                let hit_block = domain.constrained_block(&endpoint);
                let n = set.outward_normal_for_walk(chosen, &hit_block);
                let reflected = reflect_direction(&domain.constrained_block(&s_hat), &n);
                for i in 0..dc {
                    s_hat[i] = reflected[i];
                    endpoint[i] -= NUDGE * n[i];
                }
            }
            _ => {
                endpoint += &s_hat * remaining;
                remaining = 0.0;
            }
        }
    }

    // guard against roundoff leaving the endpoint marginally outside
    if dc > 0 {
        let block = domain.constrained_block(&endpoint);
        let slack = set.min_slack(&block);
        if slack <= 0.0 {
            if slack < -crate::geometry::SURFACE_TOL {
                return Err(Error::StepFailure(bounces));
            }
            if let Some((_, id)) = set.active_constraint(&block) {
                let g = set.slack_gradient(id, &block);
                for i in 0..dc {
                    endpoint[i] += (NUDGE - slack) * g[i];
                }
            }
        }
    }
    domain.wrap_periodic(&mut endpoint);
    Ok(ReflectedStepTrace { endpoint, bounces, path_length_used: total })
}

/// Discretised reflected SDE `dX = b dt + dB - dk`: `N` steps of
/// `ReflectedStep[X_k, gamma beta b + sqrt(gamma beta) Z]` on the schedule's
/// grid. Returns all `N + 1` states.
pub fn reflected_random_walk<F, R>(
    x0: &DVector<f64>,
    mut drift_fn: F,
    schedule: &NoiseSchedule,
    domain: &DomainSpec,
    rng: &mut R,
) -> Result<Vec<DVector<f64>>>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
    R: Rng + ?Sized,
{
    let gamma = schedule.gamma();
    let mut states = Vec::with_capacity(schedule.steps + 1);
    states.push(x0.clone());
    let mut x = x0.clone();
    for k in 0..schedule.steps {
        let t = schedule.time_at(k);
        let beta = schedule.beta(t);
        let drift = drift_fn(t, &x);
        let mut v = drift * (gamma * beta);
        let noise = (gamma * beta).sqrt();
        for i in 0..x.len() {
            let z: f64 = rng.sample(StandardNormal);
            v[i] += noise * z;
        }
        x = reflected_step(&x, &v, domain)?.endpoint;
        states.push(x.clone());
    }
    Ok(states)
}

/// One backward (denoising) step at backward time `t`: a reflected step with
/// `v = gamma beta(T - t) score + sqrt(gamma beta(T - t)) Z`, where `score`
/// is the model output at `(T - t, x)`.
pub fn reflected_backward_step<R: Rng + ?Sized>(
    x: &DVector<f64>,
    t: f64,
    score: &DVector<f64>,
    schedule: &NoiseSchedule,
    domain: &DomainSpec,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let gamma = schedule.gamma();
    let beta = schedule.beta(schedule.t_max - t);
    let mut v = score * (gamma * beta);
    let noise = (gamma * beta).sqrt();
    for i in 0..x.len() {
        let z: f64 = rng.sample(StandardNormal);
        v[i] += noise * z;
    }
    Ok(reflected_step(x, &v, domain)?.endpoint)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{ks_distance, reflected_heat_cdf_1d, reflected_heat_score_1d};
    use crate::geometry::{make_hypercube, make_interval, DomainSpec, TWO_PI};
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn v(entries: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(entries)
    }

    fn unit_interval() -> DomainSpec {
        DomainSpec::from_set(make_interval(0.0, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn hand_traced_single_bounce() {
        // 0.8 + 0.5: hit the upper wall after 0.2, travel the remaining 0.3
        // back down to 0.7
        let dom = unit_interval();
        let tr = reflected_step(&v(&[0.8]), &v(&[0.5]), &dom).unwrap();
        assert_relative_eq!(tr.endpoint[0], 0.7, epsilon = 1e-9);
        assert_eq!(tr.bounces, 1);
        assert_relative_eq!(tr.path_length_used, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn short_steps_do_not_bounce() {
        let dom = unit_interval();
        let tr = reflected_step(&v(&[0.4]), &v(&[0.1]), &dom).unwrap();
        assert_relative_eq!(tr.endpoint[0], 0.5, epsilon = 1e-12);
        assert_eq!(tr.bounces, 0);
    }

    #[test]
    fn torus_coordinates_wrap_without_reflection() {
        let dom = DomainSpec::torus(1).unwrap();
        let tr = reflected_step(&v(&[6.0]), &v(&[0.5]), &dom).unwrap();
        assert_relative_eq!(tr.endpoint[0], 6.5 - TWO_PI, epsilon = 1e-12);
        assert_eq!(tr.bounces, 0);
    }

    #[test]
    fn mixed_domain_reflects_only_constrained_block() {
        // interval x torus: the move reflects the first coordinate while the
        // angle advances by its full displacement
        let dom = DomainSpec::new(make_interval(0.0, 1.0).unwrap(), 1).unwrap();
        let tr = reflected_step(&v(&[0.8, 1.0]), &v(&[0.5, 0.4]), &dom).unwrap();
        assert_relative_eq!(tr.endpoint[0], 0.7, epsilon = 1e-9);
        assert_relative_eq!(tr.endpoint[1], 1.4, epsilon = 1e-9);
        assert_eq!(tr.bounces, 1);
    }

    #[test]
    fn long_steps_conserve_arclength_and_stay_inside() {
        let dom = DomainSpec::from_set(make_hypercube(2).unwrap()).unwrap();
        let mut rng = StdRng::seed_from_u64(42);
        use rand::Rng;
        for _ in 0..2000 {
            let x = v(&[rng.gen_range(-0.99..0.99), rng.gen_range(-0.99..0.99)]);
            let step = v(&[rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)]);
            let tr = reflected_step(&x, &step, &dom).unwrap();
            assert!(dom.constrained().min_slack(&tr.endpoint) >= 0.0);
            assert_relative_eq!(tr.path_length_used, step.norm(), epsilon = 1e-10);
        }
    }

    #[test]
    fn many_bounces_match_explicit_folding() {
        // folding x + v into [0, 1] by the tent map is the closed form of
        // repeated reflection in one dimension
        let dom = unit_interval();
        let fold = |y: f64| -> f64 {
            let m = y.rem_euclid(2.0);
            if m <= 1.0 {
                m
            } else {
                2.0 - m
            }
        };
        for (x0, step) in [(0.3, 2.7), (0.9, -3.45), (0.01, 7.3), (0.5, -0.2)] {
            let tr = reflected_step(&v(&[x0]), &v(&[step]), &dom).unwrap();
            assert_relative_eq!(tr.endpoint[0], fold(x0 + step), epsilon = 1e-8);
        }
    }

    #[test]
    fn zero_step_is_identity_and_zero_drift_walk_stays_inside() {
        let dom = unit_interval();
        let tr = reflected_step(&v(&[0.37]), &v(&[0.0]), &dom).unwrap();
        assert_eq!(tr.endpoint[0], 0.37);
        assert_eq!(tr.bounces, 0);

        let schedule = NoiseSchedule::unit_rate(1.0, 16);
        let mut rng = StdRng::seed_from_u64(1);
        let states =
            reflected_random_walk(&v(&[0.37]), |_, _| v(&[0.0]), &schedule, &dom, &mut rng).unwrap();
        assert_eq!(states.len(), 17);
        for s in states {
            assert!(s[0] > 0.0 && s[0] < 1.0);
        }
    }

    fn erf(x: f64) -> f64 {
        // Abramowitz-Stegun 7.1.26, 1.5e-7 absolute accuracy
        let sign = if x < 0.0 { -1.0 } else { 1.0 };
        let x = x.abs();
        let t = 1.0 / (1.0 + 0.3275911 * x);
        let y = 1.0
            - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t
                + 0.254829592)
                * t
                * (-x * x).exp();
        sign * y
    }

    #[test]
    fn one_step_distribution_matches_method_of_images() {
        // single reflected step from 0.9 with gamma = 0.01: the endpoint is
        // the folded Gaussian, whose CDF is an image sum because the preimage
        // of [0, y] under the fold is the union of [2k - y, 2k + y]
        let dom = unit_interval();
        let gamma: f64 = 0.01;
        let sigma = gamma.sqrt();
        let mut rng = StdRng::seed_from_u64(7);
        use rand::Rng;
        let n = 100_000;
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            let tr = reflected_step(&v(&[0.9]), &v(&[sigma * z]), &dom).unwrap();
            samples.push(tr.endpoint[0]);
        }
        let phi = |u: f64| 0.5 * (1.0 + erf(u / std::f64::consts::SQRT_2));
        let cdf = |y: f64| -> f64 {
            let mut c = 0.0;
            for k in -5i64..=5 {
                let base = 2.0 * k as f64;
                c += phi((base + y - 0.9) / sigma) - phi((base - y - 0.9) / sigma);
            }
            c.clamp(0.0, 1.0)
        };
        let d = ks_distance(&samples, cdf).unwrap();
        assert!(d < 0.01, "KS distance {d} against the image-sum CDF");
    }

    #[test]
    fn walk_marginal_matches_heat_kernel_oracle() {
        let dom = unit_interval();
        let schedule = NoiseSchedule::unit_rate(0.3, 300);
        let n = 4000;
        let mut terminals = Vec::with_capacity(n);
        for i in 0..n {
            let mut rng = crate::rng::stream_rng(991, i as u64);
            let states =
                reflected_random_walk(&v(&[0.5]), |_, _| v(&[0.0]), &schedule, &dom, &mut rng)
                    .unwrap();
            terminals.push(states.last().unwrap()[0]);
        }
        let d = ks_distance(&terminals, |y| reflected_heat_cdf_1d(y, 0.5, 0.3, 200)).unwrap();
        assert!(d < 0.03, "KS {d} at t = 0.3");
    }

    #[test]
    fn backward_step_with_zero_score_is_a_reflected_increment() {
        let dom = unit_interval();
        let schedule = NoiseSchedule::unit_rate(1.0, 100);
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..200 {
            let y = reflected_backward_step(&v(&[0.5]), 0.0, &v(&[0.0]), &schedule, &dom, &mut rng)
                .unwrap();
            assert!(y[0] >= 0.0 && y[0] <= 1.0);
        }
    }

    #[test]
    fn oracle_score_reversal_concentrates_at_origin_point() {
        // integrate the time-reversal with the exact score of p_t(.|0.3);
        // stop at forward time 0.01 where the truth is ~N(0.3, 0.01)
        let dom = unit_interval();
        let schedule = NoiseSchedule::unit_rate(1.0, 1000);
        let n_paths = 1000;
        let stop = 990;
        let mut finals = Vec::with_capacity(n_paths);
        for i in 0..n_paths {
            let mut rng = crate::rng::stream_rng(4242, i as u64);
            use rand::Rng;
            let mut x = v(&[rng.gen::<f64>()]);
            for k in 0..stop {
                let t_b = schedule.time_at(k);
                let t_fwd = schedule.t_max - t_b;
                let s = reflected_heat_score_1d(x[0], 0.3, t_fwd, 200);
                x = reflected_backward_step(&x, t_b, &v(&[s]), &schedule, &dom, &mut rng).unwrap();
            }
            finals.push(x[0]);
        }
        let mean = finals.iter().sum::<f64>() / n_paths as f64;
        let std = (finals.iter().map(|f| (f - mean) * (f - mean)).sum::<f64>()
            / (n_paths as f64 - 1.0))
            .sqrt();
        assert!((mean - 0.3).abs() < 0.03, "terminal mean {mean}");
        assert!(std < 0.12, "terminal std {std}");
    }

    #[test]
    fn containment_of_many_random_steps() {
        let dom = DomainSpec::from_set(make_hypercube(2).unwrap()).unwrap();
        let schedule = NoiseSchedule::unit_rate(1.0, 500);
        let mut boundary_hits = 0usize;
        let mut total = 0usize;
        for i in 0..20 {
            let mut rng = crate::rng::stream_rng(5150, i);
            let states = reflected_random_walk(
                &v(&[0.0, 0.0]),
                |_, _| v(&[0.0, 0.0]),
                &schedule,
                &dom,
                &mut rng,
            )
            .unwrap();
            for s in &states {
                total += 1;
                let slack = dom.constrained().min_slack(s);
                assert!(slack >= 0.0, "state left the closed domain");
                if slack <= crate::geometry::SURFACE_TOL {
                    boundary_hits += 1;
                }
            }
        }
        // boundary contact should be measure-zero in practice
        assert!((boundary_hits as f64) < 0.001 * total as f64);
    }

    #[test]
    fn periodic_marginal_is_uniform() {
        let dom = DomainSpec::torus(1).unwrap();
        let schedule = NoiseSchedule::unit_rate(8.0, 400);
        let n = 4000;
        let mut finals = Vec::with_capacity(n);
        for i in 0..n {
            let mut rng = crate::rng::stream_rng(77, i as u64);
            let states =
                reflected_random_walk(&v(&[1.0]), |_, _| v(&[0.0]), &schedule, &dom, &mut rng)
                    .unwrap();
            finals.push(states.last().unwrap()[0]);
        }
        let d = ks_distance(&finals, |y| (y / TWO_PI).clamp(0.0, 1.0)).unwrap();
        assert!(d < 0.02, "KS {d} for the wrapped angle");
    }
}
