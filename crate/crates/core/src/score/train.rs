//! Adam training of the score network on implicit score matching over
//! freshly simulated forward-trajectory slices.

use super::loss::{ism_loss_gradient, ism_loss_gradient_hutchinson};
use super::mlp::{MlpGrad, MlpParams};
use super::model::{feature_dim, ScoreModel};
use crate::error::{Error, Result};
use crate::geometry::DomainSpec;
use crate::rng::{derive, salt, stream_rng};
use crate::sampling::forward_slices;
use crate::schedule::NoiseSchedule;
use crate::Method;
use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Optimiser and architecture settings. Defaults match the full-scale
/// training recipe; [`TrainConfig::desk_profile`] shrinks the network and
/// iteration budget to desk scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_iters: usize,
    pub peak_lr: f64,
    pub warmup_iters: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    /// Boundary collar of the score parameterisation.
    pub delta: f64,
    /// Slices harvested per forward trajectory.
    pub slices_per_traj: usize,
    /// `Some(p)`: estimate the divergence with `p` Rademacher probes instead
    /// of one JVP per coordinate; worthwhile for high-dimensional domains.
    pub hutchinson_probes: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            total_iters: 100_000,
            peak_lr: 2e-4,
            warmup_iters: 1000,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            hidden_layers: 6,
            hidden_width: 512,
            delta: super::model::DEFAULT_DELTA,
            slices_per_traj: 4,
            hutchinson_probes: None,
        }
    }
}

impl TrainConfig {
    /// Reduced profile: 3 hidden layers of width 128, 20k iterations.
    pub fn desk_profile() -> Self {
        Self { total_iters: 20_000, hidden_layers: 3, hidden_width: 128, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Format("batch size must be positive".into()));
        }
        if !(self.peak_lr > 0.0) || !(self.adam_eps > 0.0) {
            return Err(Error::Format("learning rate and epsilon must be positive".into()));
        }
        if !(self.adam_beta1 > 0.0 && self.adam_beta1 < 1.0)
            || !(self.adam_beta2 > 0.0 && self.adam_beta2 < 1.0)
        {
            return Err(Error::Format("Adam betas must lie in (0, 1)".into()));
        }
        if self.total_iters > 0 && self.warmup_iters >= self.total_iters {
            return Err(Error::Format(format!(
                "warmup ({}) must be shorter than the run ({})",
                self.warmup_iters, self.total_iters
            )));
        }
        if self.hidden_width == 0 && self.hidden_layers > 0 {
            return Err(Error::Format("hidden width must be positive".into()));
        }
        if self.slices_per_traj == 0 {
            return Err(Error::Format("need at least one slice per trajectory".into()));
        }
        if !(self.delta >= 0.0) {
            return Err(Error::Format(format!("delta must be >= 0, got {}", self.delta)));
        }
        if self.hutchinson_probes == Some(0) {
            return Err(Error::Format("trace estimator needs at least one probe".into()));
        }
        Ok(())
    }
}

/// Linear warmup to `peak_lr` over `warmup_iters`, then cosine decay to zero
/// at `total_iters`.
pub fn learning_rate(cfg: &TrainConfig, iter: usize) -> f64 {
    if iter < cfg.warmup_iters {
        return cfg.peak_lr * iter as f64 / cfg.warmup_iters as f64;
    }
    let span = (cfg.total_iters - cfg.warmup_iters) as f64;
    let progress = (iter - cfg.warmup_iters) as f64 / span;
    cfg.peak_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress.min(1.0)).cos())
}

/// Adam moment estimates with bias correction.
pub struct AdamState {
    m: MlpGrad,
    v: MlpGrad,
    step: usize,
}

impl AdamState {
    pub fn new(params: &MlpParams) -> Self {
        Self { m: MlpGrad::zeros_like(params), v: MlpGrad::zeros_like(params), step: 0 }
    }

    pub fn step(&mut self, params: &mut MlpParams, grad: &MlpGrad, lr: f64, cfg: &TrainConfig) {
        self.step += 1;
        let (b1, b2, eps) = (cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        let corr1 = 1.0 - b1.powi(self.step as i32);
        let corr2 = 1.0 - b2.powi(self.step as i32);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / corr1;
                let v_hat = v[i] / corr2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        };
        for l in 0..params.weights.len() {
            update(
                params.weights[l].as_mut_slice(),
                grad.weights[l].as_slice(),
                self.m.weights[l].as_mut_slice(),
                self.v.weights[l].as_mut_slice(),
            );
            update(
                params.biases[l].as_mut_slice(),
                grad.biases[l].as_slice(),
                self.m.biases[l].as_mut_slice(),
                self.v.biases[l].as_mut_slice(),
            );
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Serialize)]
pub struct TrainRecord {
    pub iteration: usize,
    pub loss: f64,
    pub lr: f64,
}

/// Train a fresh score model: each iteration draws a data batch, simulates
/// forward trajectories with the chosen method, harvests stratified slices,
/// and descends the ISM gradient.
pub fn train(
    dataset: &[DVector<f64>],
    domain: &DomainSpec,
    schedule: &NoiseSchedule,
    method: Method,
    config: &TrainConfig,
) -> Result<(ScoreModel, Vec<TrainRecord>)> {
    config.validate()?;
    schedule.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyInput("training needs a dataset".into()));
    }
    for x in dataset {
        if x.len() != domain.dim() {
            return Err(Error::DimensionMismatch(format!(
                "dataset point has dimension {}, domain has {}",
                x.len(),
                domain.dim()
            )));
        }
        if !domain.is_interior(x) {
            return Err(Error::InfeasiblePoint("dataset point is not interior".into()));
        }
    }

    let mut init_rng = stream_rng(derive(config.seed, salt::TRAIN_INIT), 0);
    let params = MlpParams::init(
        feature_dim(domain),
        config.hidden_layers,
        config.hidden_width,
        domain.dim(),
        &mut init_rng,
    );
    let mut model = ScoreModel::new(params, config.delta, domain.clone(), schedule.t_max);

    let mut adam = AdamState::new(&model.params);
    let mut batch_rng = stream_rng(derive(config.seed, salt::TRAIN_BATCH), 0);
    let sim_base = derive(config.seed, salt::TRAIN_SIM);
    let mut hutch_rng = stream_rng(derive(config.seed, salt::TRAIN_SIM), u64::MAX);
    let mut records = Vec::with_capacity(config.total_iters);

    for iteration in 0..config.total_iters {
        let batch: Vec<DVector<f64>> = (0..config.batch_size)
            .map(|_| dataset[batch_rng.gen_range(0..dataset.len())].clone())
            .collect();
        let slices = forward_slices(
            &batch,
            method,
            domain,
            schedule,
            config.slices_per_traj,
            derive(sim_base, iteration as u64),
        )?;
        let (loss, grad) = match config.hutchinson_probes {
            None => ism_loss_gradient(&model, &slices)?,
            Some(p) => ism_loss_gradient_hutchinson(&model, &slices, p, &mut hutch_rng)?,
        };
        if !loss.is_finite() || !grad.is_finite() {
            return Err(Error::DivergenceFailure { iteration });
        }
        let lr = learning_rate(config, iteration);
        adam.step(&mut model.params, &grad, lr, config);
        records.push(TrainRecord { iteration, loss, lr });
    }
    Ok((model, records))
}
