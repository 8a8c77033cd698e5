//! Sampling orchestration: hit-and-run and direct uniform reference sampling,
//! forward trajectory slicing for training, backward generative sampling with
//! the low-temperature multiplier, and the synthetic mixture dataset.
//!
//! Every sample owns an RNG stream derived from `(seed, sample index)`, so
//! results are identical for any worker count and samples parallelise freely.

use crate::barrier;
use crate::error::{Error, Result};
use crate::geometry::{ConstraintSet, DomainSpec, TWO_PI};
use crate::reflected::{reflected_random_walk, reflected_step};
use crate::rng::{derive, salt, stream_rng};
use crate::schedule::NoiseSchedule;
use crate::score::ScoreModel;
use crate::Method;
use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Hit-and-run burn-in used when drawing independent uniform samples.
pub const HIT_AND_RUN_BURN_IN: usize = 200;

/// Batches of `(time, state)` pairs harvested from discretised forward
/// trajectories; the training currency.
#[derive(Debug, Clone)]
pub struct TrajectorySlices {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// Which data point each slice came from.
    pub origin_index: Vec<usize>,
}

impl TrajectorySlices {
    pub fn new(
        times: Vec<f64>,
        states: Vec<DVector<f64>>,
        origin_index: Vec<usize>,
        domain: &DomainSpec,
    ) -> Result<Self> {
        if times.len() != states.len() || times.len() != origin_index.len() {
            return Err(Error::DimensionMismatch(format!(
                "slice fields disagree: {} times, {} states, {} origins",
                times.len(),
                states.len(),
                origin_index.len()
            )));
        }
        if times.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::Format("slice times must be strictly positive".into()));
        }
        for s in &states {
            if s.len() != domain.dim() {
                return Err(Error::DimensionMismatch("slice state has wrong dimension".into()));
            }
            if !domain.is_interior(s) {
                return Err(Error::InfeasiblePoint("slice state is not interior".into()));
            }
        }
        Ok(Self { times, states, origin_index })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Low-temperature sampling knobs: `lambda0` concentrates the target density
/// and `psi` adds corrector-style noise inflation. `lambda0 = 1, psi = 0` is
/// the plain time-reversal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowTempConfig {
    pub lambda0: f64,
    pub psi: f64,
}

impl Default for LowTempConfig {
    fn default() -> Self {
        Self { lambda0: 1.0, psi: 0.0 }
    }
}

impl LowTempConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda0 >= 1.0) {
            return Err(Error::Format(format!("lambda0 must be >= 1, got {}", self.lambda0)));
        }
        if !(self.psi >= 0.0) {
            return Err(Error::Format(format!("psi must be >= 0, got {}", self.psi)));
        }
        Ok(())
    }

    /// Score multiplier `lambda_t + lambda0 psi / 2` with
    /// `lambda_t = lambda0 / (alpha_t + (1 - alpha_t) lambda0)` and
    /// `alpha_t = exp(-2 int_0^t beta)`.
    pub fn score_multiplier(&self, schedule: &NoiseSchedule, t: f64) -> f64 {
        let alpha = schedule.alpha(t);
        let lambda_t = self.lambda0 / (alpha + (1.0 - alpha) * self.lambda0);
        lambda_t + self.lambda0 * self.psi / 2.0
    }

    /// Noise multiplier `sqrt(1 + psi)`.
    pub fn noise_multiplier(&self) -> f64 {
        (1.0 + self.psi).sqrt()
    }
}

/// One hit-and-run chain: repeatedly draw a uniform direction, find the chord
/// through the current point, and jump to a uniform point of the chord.
pub fn hit_and_run<R: Rng + ?Sized>(
    set: &ConstraintSet,
    x0: &DVector<f64>,
    n_steps: usize,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let d = set.dim();
    if d == 0 {
        return Ok(x0.clone());
    }
    let mut x = x0.clone();
    for _ in 0..n_steps {
        let mut u = DVector::zeros(d);
        loop {
            for ui in u.iter_mut() {
                *ui = rng.sample(StandardNormal);
            }
            let n = u.norm();
            if n > 1e-12 {
                u /= n;
                break;
            }
        }
        let (t_plus, _) = set.ray_hits(&x, &u).ok_or(Error::NoIntersection)?;
        let neg = -&u;
        let (t_minus, _) = set.ray_hits(&x, &neg).ok_or(Error::NoIntersection)?;
        let t = -t_minus + rng.gen::<f64>() * (t_minus + t_plus);
        let cand = &x + &u * t;
        if set.is_interior(&cand) {
            x = cand;
        } else {
            // endpoint rounding: shrink towards the current point
            x = &x + &u * (t * (1.0 - 1e-9));
        }
    }
    Ok(x)
}

fn sample_ball_direct<R: Rng + ?Sized>(set: &ConstraintSet, rng: &mut R) -> DVector<f64> {
    let sphere = &set.spheres()[0];
    let d = set.dim();
    let mut u = DVector::zeros(d);
    loop {
        for ui in u.iter_mut() {
            *ui = rng.sample(StandardNormal);
        }
        let n = u.norm();
        if n > 1e-12 {
            u /= n;
            break;
        }
    }
    let radius = sphere.radius() * rng.gen::<f64>().powf(1.0 / d as f64);
    sphere.center() + u * radius
}

/// `n` independent (approximately) uniform samples on a bounded domain:
/// hit-and-run chains with burn-in on the constrained block (direct radial
/// sampling when the block is a bare ball), uniform angles on the torus block.
pub fn uniform_reference(domain: &DomainSpec, n: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
    let set = domain.constrained();
    let dc = set.dim();
    if dc > 0 && set.num_constraints() == 0 {
        return Err(Error::UnsupportedDomain(
            "cannot sample the uniform distribution on an unbounded block".into(),
        ));
    }
    let ball_only = set.spheres().len() == 1 && set.linear().is_empty();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let mut x = DVector::zeros(domain.dim());
            if dc > 0 {
                let block = if ball_only {
                    sample_ball_direct(set, &mut rng)
                } else {
                    hit_and_run(set, set.interior_point(), HIT_AND_RUN_BURN_IN, &mut rng)?
                };
                for j in 0..dc {
                    x[j] = block[j];
                }
            }
            for j in dc..domain.dim() {
                x[j] = rng.gen::<f64>() * TWO_PI;
            }
            Ok(x)
        })
        .collect()
}

fn simulate_forward_chain<R: Rng + ?Sized>(
    x0: &DVector<f64>,
    method: Method,
    domain: &DomainSpec,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<Vec<DVector<f64>>> {
    match method {
        Method::Reflected => {
            let zero = DVector::zeros(domain.dim());
            reflected_random_walk(x0, |_, _| zero.clone(), schedule, domain, rng)
        }
        Method::Barrier => {
            if domain.periodic_dims() > 0 {
                return Err(Error::UnsupportedDomain(
                    "the log-barrier method does not support torus coordinates".into(),
                ));
            }
            barrier::barrier_forward_chain(x0, schedule, domain.constrained(), rng)
        }
    }
}

/// Simulate one forward trajectory per data point and record `k` slices at
/// stratified grid times: slice `j` lands uniformly in `((j-1) T / k, j T / k]`,
/// snapped to the discretisation grid (never below the first step).
pub fn forward_slices(
    data: &[DVector<f64>],
    method: Method,
    domain: &DomainSpec,
    schedule: &NoiseSchedule,
    k: usize,
    seed: u64,
) -> Result<TrajectorySlices> {
    if k == 0 {
        return Err(Error::Format("need at least one slice per trajectory".into()));
    }
    let gamma = schedule.gamma();
    let per_point: Vec<(Vec<f64>, Vec<DVector<f64>>, Vec<usize>)> = data
        .par_iter()
        .enumerate()
        .map(|(i, x0)| {
            let mut rng = stream_rng(seed, i as u64);
            let chain = simulate_forward_chain(x0, method, domain, schedule, &mut rng)?;
            let mut times = Vec::with_capacity(k);
            let mut states = Vec::with_capacity(k);
            let mut origins = Vec::with_capacity(k);
            for j in 1..=k {
                let lo = (j - 1) as f64 * schedule.t_max / k as f64;
                let hi = j as f64 * schedule.t_max / k as f64;
                let t_raw = lo + rng.gen::<f64>() * (hi - lo);
                let idx = ((t_raw / gamma).round() as usize).clamp(1, schedule.steps);
                times.push(idx as f64 * gamma);
                states.push(chain[idx].clone());
                origins.push(i);
            }
            Ok((times, states, origins))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut times = Vec::with_capacity(data.len() * k);
    let mut states = Vec::with_capacity(data.len() * k);
    let mut origin = Vec::with_capacity(data.len() * k);
    for (t, s, o) in per_point {
        times.extend(t);
        states.extend(s);
        origin.extend(o);
    }
    TrajectorySlices::new(times, states, origin, domain)
}

/// Backward generative sampling: `n` chains initialised from the uniform
/// reference, integrated for `N` steps with the model score scaled by the
/// low-temperature multiplier and the noise by `sqrt(1 + psi)`.
pub fn backward_sample(
    model: &ScoreModel,
    method: Method,
    domain: &DomainSpec,
    schedule: &NoiseSchedule,
    n: usize,
    lowtemp: &LowTempConfig,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    lowtemp.validate()?;
    let expected = model.domain.hash();
    let got = domain.hash();
    if expected != got {
        return Err(Error::ModelDomainMismatch { expected, got });
    }
    if (model.horizon - schedule.t_max).abs() > 1e-12 {
        return Err(Error::Format(format!(
            "schedule horizon {} differs from the model's {}",
            schedule.t_max, model.horizon
        )));
    }

    let mut states = uniform_reference(domain, n, derive(seed, salt::UNIFORM_REF))?;
    let chain_seed = derive(seed, salt::BACKWARD);
    let mut rngs: Vec<_> = (0..n).map(|i| stream_rng(chain_seed, i as u64)).collect();

    let gamma = schedule.gamma();
    let noise_mult = lowtemp.noise_multiplier();
    for step in 0..schedule.steps {
        let t_back = schedule.time_at(step);
        let t_fwd = schedule.t_max - t_back;
        let beta = schedule.beta(t_fwd);
        let mult = lowtemp.score_multiplier(schedule, t_back);
        let scores = model.score_eval_batch(t_fwd, &states);
        states
            .par_iter_mut()
            .zip(rngs.par_iter_mut())
            .zip(scores.into_par_iter())
            .try_for_each(|((x, rng), score)| -> Result<()> {
                match method {
                    Method::Reflected => {
                        let mut v = score * (mult * gamma * beta);
                        let sd = (gamma * beta).sqrt() * noise_mult;
                        for i in 0..v.len() {
                            let z: f64 = rng.sample(StandardNormal);
                            v[i] += sd * z;
                        }
                        *x = reflected_step(x, &v, domain)?.endpoint;
                    }
                    Method::Barrier => {
                        let set = domain.constrained();
                        let me = barrier::metric_at(x, set)?;
                        let div = barrier::div_metric_inv_with(&me, set)?;
                        let drift = (div * 0.5 + me.solve(&(score * mult))) * beta;
                        let mut z = DVector::zeros(x.len());
                        for zi in z.iter_mut() {
                            *zi = rng.sample::<f64, _>(StandardNormal) * beta.sqrt() * noise_mult;
                        }
                        *x = barrier::grw_step_with(
                            &me,
                            &drift,
                            gamma,
                            &z,
                            set,
                            barrier::RETRACTION_EPS,
                        )?;
                    }
                }
                Ok(())
            })?;
    }
    Ok(states)
}

/// One component of the wrapped-normal mixture.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub center: Vec<f64>,
}

/// Mixture of wrapped normals: a component centre plus Gaussian displacement
/// pushed through the reflected step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub components: Vec<MixtureComponent>,
    pub sigma2: f64,
}

impl MixtureSpec {
    /// The bimodal mixture used on the two-dimensional hypercube:
    /// weights 0.7 / 0.3, centres `(0.5, 0.5)` and `(-0.5, -0.5)`,
    /// variance 0.25.
    pub fn hypercube_default() -> Self {
        Self {
            components: vec![
                MixtureComponent { weight: 0.7, center: vec![0.5, 0.5] },
                MixtureComponent { weight: 0.3, center: vec![-0.5, -0.5] },
            ],
            sigma2: 0.25,
        }
    }

    pub fn validate(&self, domain: &DomainSpec) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::Format("mixture needs at least one component".into()));
        }
        if !(self.sigma2 > 0.0) {
            return Err(Error::Format(format!("mixture variance must be positive, got {}", self.sigma2)));
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Format(format!("mixture weights sum to {total}, expected 1")));
        }
        for c in &self.components {
            if c.weight <= 0.0 {
                return Err(Error::Format("mixture weights must be positive".into()));
            }
            if c.center.len() != domain.dim() {
                return Err(Error::DimensionMismatch(format!(
                    "mixture centre has dimension {}, domain has {}",
                    c.center.len(),
                    domain.dim()
                )));
            }
            let center = DVector::from_row_slice(&c.center);
            if !domain.is_interior(&center) {
                return Err(Error::InfeasiblePoint("mixture centre is not interior".into()));
            }
        }
        Ok(())
    }
}

/// Draw `n` points from the wrapped-normal mixture: pick a component by
/// weight, draw `v ~ N(0, sigma2 I)`, return `reflected_step(centre, v)`.
pub fn make_synthetic_dataset(
    domain: &DomainSpec,
    mixture: &MixtureSpec,
    n: usize,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    Ok(make_synthetic_dataset_labeled(domain, mixture, n, seed)?
        .into_iter()
        .map(|(x, _)| x)
        .collect())
}

/// As [`make_synthetic_dataset`] but keeping the index of the component each
/// point was drawn from.
pub fn make_synthetic_dataset_labeled(
    domain: &DomainSpec,
    mixture: &MixtureSpec,
    n: usize,
    seed: u64,
) -> Result<Vec<(DVector<f64>, usize)>> {
    mixture.validate(domain)?;
    let sigma = mixture.sigma2.sqrt();
    let centers: Vec<DVector<f64>> =
        mixture.components.iter().map(|c| DVector::from_row_slice(&c.center)).collect();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let pick: f64 = rng.gen();
            let mut acc = 0.0;
            let mut chosen = centers.len() - 1;
            for (ci, comp) in mixture.components.iter().enumerate() {
                acc += comp.weight;
                if pick < acc {
                    chosen = ci;
                    break;
                }
            }
            let mut v = DVector::zeros(domain.dim());
            for vi in v.iter_mut() {
                *vi = rng.sample::<f64, _>(StandardNormal) * sigma;
            }
            Ok((reflected_step(&centers[chosen], &v, domain)?.endpoint, chosen))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{ks_distance, mmd2, KernelSpec};
    use crate::geometry::{make_hypercube, make_interval, make_simplex, ConstraintSet, SphereConstraint};
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn v(entries: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(entries)
    }

    fn rejection_uniform_cube(n: usize, seed: u64) -> Vec<DVector<f64>> {
        let mut rng = StdRng::seed_from_u64(seed);
        (0..n).map(|_| v(&[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])).collect()
    }

    #[test]
    fn hit_and_run_zero_steps_is_identity() {
        let cube = make_hypercube(2).unwrap();
        let mut rng = StdRng::seed_from_u64(1);
        let x = hit_and_run(&cube, &v(&[0.2, 0.2]), 0, &mut rng).unwrap();
        assert_eq!(x, v(&[0.2, 0.2]));
    }

    #[test]
    fn hit_and_run_one_step_is_exactly_uniform_on_interval() {
        // in one dimension the chord is the whole interval
        let interval = make_interval(0.0, 1.0).unwrap();
        let n = 20_000;
        let samples: Vec<f64> = (0..n)
            .map(|i| {
                let mut rng = stream_rng(3, i);
                hit_and_run(&interval, &v(&[0.8]), 1, &mut rng).unwrap()[0]
            })
            .collect();
        let d = ks_distance(&samples, |x| x.clamp(0.0, 1.0)).unwrap();
        assert!(d < 0.015, "KS {d}");
    }

    #[test]
    fn hit_and_run_converges_to_uniform_on_cube() {
        let cube = DomainSpec::from_set(make_hypercube(2).unwrap()).unwrap();
        let n = 10_000;
        let samples = uniform_reference(&cube, n, 11).unwrap();
        let reference = rejection_uniform_cube(n, 12);
        let m = mmd2(&samples, &reference, &KernelSpec::rbf_median()).unwrap();
        assert!(m < 0.003, "MMD^2 {m}");
    }

    #[test]
    fn hit_and_run_mixing_improves_with_steps() {
        // MMD^2 against the uniform decreases (after smoothing) in the step
        // count
        let cube = make_hypercube(2).unwrap();
        let reference = rejection_uniform_cube(4000, 21);
        let corner = v(&[0.95, 0.95]);
        let kernel = KernelSpec::rbf_median();
        let mut values = Vec::new();
        for (si, steps) in [1usize, 10, 50, 200].iter().enumerate() {
            let samples: Vec<DVector<f64>> = (0..4000)
                .map(|i| {
                    let mut rng = stream_rng(400 + si as u64, i);
                    hit_and_run(&cube, &corner, *steps, &mut rng).unwrap()
                })
                .collect();
            values.push(mmd2(&samples, &reference, &kernel).unwrap());
        }
        for w in values.windows(2) {
            assert!(w[1] <= w[0] + 2e-4, "MMD sequence not decreasing: {values:?}");
        }
    }

    #[test]
    fn uniform_reference_on_disc_by_annulus_mass() {
        // direct radial sampling: P(r < rho) = rho^2 on the unit disc
        let disc = ConstraintSet::new(
            2,
            Vec::new(),
            vec![SphereConstraint::new(v(&[0.0, 0.0]), 1.0).unwrap()],
        )
        .unwrap();
        let dom = DomainSpec::from_set(disc).unwrap();
        let n = 100_000;
        let samples = uniform_reference(&dom, n, 5).unwrap();
        let radii: Vec<f64> = samples.iter().map(|s| s.norm()).collect();
        let d = ks_distance(&radii, |r| (r * r).clamp(0.0, 1.0)).unwrap();
        assert!(d < 0.01, "KS {d} for the radial CDF");
        // annulus counting: ring [0.5, 0.6] holds mass 0.36 - 0.25 = 0.11
        let in_ring = radii.iter().filter(|r| **r >= 0.5 && **r < 0.6).count() as f64;
        assert!((in_ring / n as f64 - 0.11).abs() < 0.005);
    }

    #[test]
    fn uniform_reference_simplex_coordinate_means() {
        // uniform on the 2-simplex chart has E[x_i] = 1/3
        let dom = DomainSpec::from_set(make_simplex(2).unwrap()).unwrap();
        let n = 100_000;
        let samples = uniform_reference(&dom, n, 6).unwrap();
        for c in 0..2 {
            let mean = samples.iter().map(|s| s[c]).sum::<f64>() / n as f64;
            assert!((mean - 1.0 / 3.0).abs() < 0.01, "coordinate {c} mean {mean}");
        }
    }

    #[test]
    fn uniform_reference_torus_angles() {
        let dom = DomainSpec::torus(2).unwrap();
        let samples = uniform_reference(&dom, 10_000, 7).unwrap();
        for c in 0..2 {
            let angles: Vec<f64> = samples.iter().map(|s| s[c]).collect();
            let d = ks_distance(&angles, |a| (a / TWO_PI).clamp(0.0, 1.0)).unwrap();
            assert!(d < 0.02, "KS {d} on torus coordinate {c}");
        }
    }

    #[test]
    fn unbounded_domain_is_rejected() {
        let dom = DomainSpec::from_set(ConstraintSet::unconstrained(2)).unwrap();
        assert!(matches!(
            uniform_reference(&dom, 10, 0),
            Err(Error::UnsupportedDomain(_))
        ));
    }

    #[test]
    fn forward_slices_shape_and_containment() {
        let dom = DomainSpec::from_set(make_hypercube(2).unwrap()).unwrap();
        let schedule = NoiseSchedule::new(1.0, 64, 0.001, 6.0).unwrap();
        let data = vec![v(&[0.5, 0.5]); 32];
        for method in [Method::Reflected, Method::Barrier] {
            let slices = forward_slices(&data, method, &dom, &schedule, 4, 99).unwrap();
            assert_eq!(slices.len(), 128);
            for (t, s) in slices.times.iter().zip(&slices.states) {
                assert!(*t > 0.0 && *t <= 1.0 + 1e-12);
                assert!(dom.constrained().min_slack(s) > 0.0);
            }
            // stratification: slice j of each point sits in stratum j
            for (pos, t) in slices.times.iter().enumerate() {
                let stratum = pos % 4;
                let lo = stratum as f64 * 0.25;
                let hi = lo + 0.25;
                assert!(
                    *t >= lo - 1e-2 && *t <= hi + 1e-2,
                    "slice time {t} escaped stratum [{lo}, {hi}]"
                );
            }
        }
    }

    #[test]
    fn single_stratum_slices_sit_anywhere_in_horizon() {
        let dom = DomainSpec::from_set(make_interval(0.0, 1.0).unwrap()).unwrap();
        let schedule = NoiseSchedule::unit_rate(1.0, 50);
        let data = vec![v(&[0.4]); 8];
        let slices = forward_slices(&data, Method::Reflected, &dom, &schedule, 1, 13).unwrap();
        assert_eq!(slices.len(), 8);
    }

    #[test]
    fn forward_slices_long_horizon_reach_uniform() {
        let dom = DomainSpec::from_set(make_hypercube(2).unwrap()).unwrap();
        let schedule = NoiseSchedule::unit_rate(5.0, 1000);
        let data = vec![v(&[0.5, 0.5]); 4000];
        let slices = forward_slices(&data, Method::Reflected, &dom, &schedule, 1, 23).unwrap();
        // keep only terminal-stratum slices past 80% of the horizon
        let terminal: Vec<DVector<f64>> = slices
            .times
            .iter()
            .zip(&slices.states)
            .filter(|(t, _)| **t > 4.0)
            .map(|(_, s)| s.clone())
            .collect();
        assert!(terminal.len() > 500);
        let reference = rejection_uniform_cube(terminal.len(), 24);
        let m = mmd2(&terminal, &reference, &KernelSpec::rbf_median()).unwrap();
        assert!(m < 0.01, "MMD^2 {m}");
    }

    #[test]
    fn low_temp_multiplier_identities() {
        let schedule = NoiseSchedule::new(1.0, 1000, 0.001, 6.0).unwrap();
        let plain = LowTempConfig::default();
        for k in 0..=1000 {
            let t = k as f64 / 1000.0;
            assert_eq!(plain.score_multiplier(&schedule, t), 1.0);
        }
        assert_eq!(plain.noise_multiplier(), 1.0);
        assert_eq!(schedule.alpha(0.0), 1.0);
        assert_relative_eq!(schedule.alpha(1.0), (-6.001f64).exp(), epsilon = 1e-15);

        // lambda0 > 1 concentrates: multiplier starts at lambda0 and decays
        // towards 1 as alpha vanishes
        let cold = LowTempConfig { lambda0: 5.0, psi: 0.0 };
        assert_relative_eq!(cold.score_multiplier(&schedule, 0.0), 5.0);
        assert!(cold.score_multiplier(&schedule, 1.0) < 1.03);
    }

    #[test]
    fn mixture_dataset_statistics() {
        let dom = DomainSpec::from_set(make_hypercube(2).unwrap()).unwrap();
        let mixture = MixtureSpec::hypercube_default();
        let n = 100_000;
        let data = make_synthetic_dataset_labeled(&dom, &mixture, n, 31).unwrap();
        for (s, _) in &data {
            assert!(dom.constrained().min_slack(s) >= 0.0);
        }
        // component-1 share 0.7 within a binomial band
        let first = data.iter().filter(|(_, label)| *label == 0).count() as f64 / n as f64;
        assert!((first - 0.7).abs() < 0.01, "component share {first}");
    }

    #[test]
    fn degenerate_mixture_collapses_to_centres() {
        let dom = DomainSpec::from_set(make_hypercube(2).unwrap()).unwrap();
        let mixture = MixtureSpec {
            components: vec![
                MixtureComponent { weight: 0.7, center: vec![0.5, 0.5] },
                MixtureComponent { weight: 0.3, center: vec![-0.5, -0.5] },
            ],
            sigma2: 1e-18,
        };
        let n = 10_000;
        let data = make_synthetic_dataset(&dom, &mixture, n, 41).unwrap();
        let first = data.iter().filter(|s| s[0] > 0.0).count() as f64 / n as f64;
        let sd = (0.7 * 0.3 / n as f64).sqrt();
        assert!((first - 0.7).abs() < 2.0 * sd + 1e-9, "share {first}");
        for s in &data {
            let c = if s[0] > 0.0 { v(&[0.5, 0.5]) } else { v(&[-0.5, -0.5]) };
            assert!((s.clone() - c).norm() < 1e-6);
        }
    }

    #[test]
    fn infeasible_mixture_centre_is_rejected() {
        let dom = DomainSpec::from_set(make_hypercube(2).unwrap()).unwrap();
        let mixture = MixtureSpec {
            components: vec![MixtureComponent { weight: 1.0, center: vec![1.5, 0.0] }],
            sigma2: 0.25,
        };
        assert!(matches!(
            make_synthetic_dataset(&dom, &mixture, 10, 0),
            Err(Error::InfeasiblePoint(_))
        ));
    }

    #[test]
    fn backward_sample_rejects_mismatched_domain() {
        use crate::score::mlp::MlpParams;
        use crate::score::model::feature_dim;
        let cube = DomainSpec::from_set(make_hypercube(2).unwrap()).unwrap();
        let other = DomainSpec::from_set(make_simplex(2).unwrap()).unwrap();
        let mut rng = StdRng::seed_from_u64(0);
        let params = MlpParams::init(feature_dim(&cube), 1, 4, 2, &mut rng);
        let model = ScoreModel::new(params, 0.01, cube, 1.0);
        let schedule = NoiseSchedule::unit_rate(1.0, 10);
        assert!(matches!(
            backward_sample(&model, Method::Reflected, &other, &schedule, 4, &LowTempConfig::default(), 0),
            Err(Error::ModelDomainMismatch { .. })
        ));
    }

    #[test]
    fn backward_sample_outputs_stay_inside() {
        use crate::score::mlp::MlpParams;
        use crate::score::model::feature_dim;
        let cube = DomainSpec::from_set(make_hypercube(2).unwrap()).unwrap();
        let mut rng = StdRng::seed_from_u64(8);
        let params = MlpParams::init(feature_dim(&cube), 1, 8, 2, &mut rng);
        let model = ScoreModel::new(params, 0.01, cube.clone(), 1.0);
        let schedule = NoiseSchedule::new(1.0, 50, 0.001, 6.0).unwrap();
        for method in [Method::Reflected, Method::Barrier] {
            let out = backward_sample(&model, method, &cube, &schedule, 64, &LowTempConfig::default(), 3)
                .unwrap();
            assert_eq!(out.len(), 64);
            for s in &out {
                assert!(cube.constrained().min_slack(s) >= 0.0);
            }
        }
    }

    #[test]
    fn backward_sample_is_reproducible() {
        use crate::score::mlp::MlpParams;
        use crate::score::model::feature_dim;
        let cube = DomainSpec::from_set(make_hypercube(2).unwrap()).unwrap();
        let mut rng = StdRng::seed_from_u64(8);
        let params = MlpParams::init(feature_dim(&cube), 1, 8, 2, &mut rng);
        let model = ScoreModel::new(params, 0.01, cube.clone(), 1.0);
        let schedule = NoiseSchedule::new(1.0, 25, 0.001, 6.0).unwrap();
        let a = backward_sample(&model, Method::Reflected, &cube, &schedule, 32, &LowTempConfig::default(), 19)
            .unwrap();
        let b = backward_sample(&model, Method::Reflected, &cube, &schedule, 32, &LowTempConfig::default(), 19)
            .unwrap();
        assert_eq!(a, b);
    }
}
