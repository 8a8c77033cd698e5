//! Time horizon and diffusion-rate schedule.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Linear diffusion-rate schedule `beta(t) = beta_min + (beta_max - beta_min) * t / T`
/// discretised into `steps` Euler steps over `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub t_max: f64,
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl NoiseSchedule {
    pub fn new(t_max: f64, steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if !(t_max > 0.0) || !t_max.is_finite() {
            return Err(Error::Format(format!("schedule horizon must be positive, got {t_max}")));
        }
        if steps == 0 {
            return Err(Error::Format("schedule needs at least one step".into()));
        }
        if !(beta_min > 0.0) || !(beta_max >= beta_min) {
            return Err(Error::Format(format!(
                "need 0 < beta_min <= beta_max, got {beta_min}, {beta_max}"
            )));
        }
        Ok(Self { t_max, steps, beta_min, beta_max })
    }

    /// The constant-rate schedule `beta = 1`; the raw, untimed process.
    pub fn unit_rate(t_max: f64, steps: usize) -> Self {
        Self { t_max, steps, beta_min: 1.0, beta_max: 1.0 }
    }

    /// Step size `gamma = T / N`.
    pub fn gamma(&self) -> f64 {
        self.t_max / self.steps as f64
    }

    pub fn beta(&self, t: f64) -> f64 {
        self.beta_min + (self.beta_max - self.beta_min) * (t / self.t_max)
    }

    /// `int_0^t beta(s) ds`, the effective (unit-rate) time reached by time `t`.
    pub fn integral_beta(&self, t: f64) -> f64 {
        self.beta_min * t + (self.beta_max - self.beta_min) * t * t / (2.0 * self.t_max)
    }

    /// `alpha(t) = exp(-2 int_0^t beta(s) ds)`, the contraction factor used by
    /// the low-temperature sampling multiplier.
    pub fn alpha(&self, t: f64) -> f64 {
        (-2.0 * self.integral_beta(t)).exp()
    }

    /// Grid time of step `k`, `k * gamma`.
    pub fn time_at(&self, k: usize) -> f64 {
        k as f64 * self.gamma()
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.t_max, self.steps, self.beta_min, self.beta_max).map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn linear_schedule_endpoints() {
        let s = NoiseSchedule::new(1.0, 1000, 0.001, 6.0).unwrap();
        assert_relative_eq!(s.beta(0.0), 0.001);
        assert_relative_eq!(s.beta(1.0), 6.0);
        assert_relative_eq!(s.beta(0.5), 0.001 + 5.999 * 0.5);
    }

    #[test]
    fn integral_matches_closed_form() {
        // int_0^1 (0.001 + 5.999 t) dt = 0.001 + 5.999/2 = 3.0005
        let s = NoiseSchedule::new(1.0, 10, 0.001, 6.0).unwrap();
        assert_relative_eq!(s.integral_beta(1.0), 3.0005, epsilon = 1e-15);
        assert_relative_eq!(s.alpha(1.0), (-6.001f64).exp(), epsilon = 1e-15);
        assert_eq!(s.alpha(0.0), 1.0);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(NoiseSchedule::new(0.0, 10, 0.1, 1.0).is_err());
        assert!(NoiseSchedule::new(1.0, 0, 0.1, 1.0).is_err());
        assert!(NoiseSchedule::new(1.0, 10, 0.0, 1.0).is_err());
        assert!(NoiseSchedule::new(1.0, 10, 2.0, 1.0).is_err());
    }
}
