//! Quantitative evaluation: MMD U-statistic with an RBF kernel, the 1-D
//! reflected heat-kernel oracle and its score, histogram summaries, and
//! Kolmogorov-Smirnov distances against reference distributions.

use crate::error::{Error, Result};
use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Kernel bandwidth: fixed, or the median of pairwise distances of the
/// pooled samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bandwidth {
    Fixed(f64),
    MedianHeuristic,
}

/// RBF kernel `k(x, y) = exp(-||x - y||^2 / (2 sigma^2))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub bandwidth: Bandwidth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Rbf,
}

impl KernelSpec {
    pub fn rbf(bandwidth: Bandwidth) -> Self {
        Self { kind: KernelKind::Rbf, bandwidth }
    }

    pub fn rbf_median() -> Self {
        Self::rbf(Bandwidth::MedianHeuristic)
    }

    pub fn validate(&self) -> Result<()> {
        if let Bandwidth::Fixed(s) = self.bandwidth {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::Format(format!("kernel bandwidth must be positive, got {s}")));
            }
        }
        Ok(())
    }
}

/// An MMD^2 estimate together with the kernel actually used.
#[derive(Debug, Clone, Serialize)]
pub struct MmdReport {
    pub mmd2: f64,
    pub sigma: f64,
    pub m_x: usize,
    pub m_y: usize,
}

fn rbf(x: &DVector<f64>, y: &DVector<f64>, inv_two_sigma2: f64) -> f64 {
    let mut sq = 0.0;
    for (a, b) in x.iter().zip(y.iter()) {
        let d = a - b;
        sq += d * d;
    }
    (-sq * inv_two_sigma2).exp()
}

/// Unbiased within-sample kernel mean: `sum_{i != j} k(z_i, z_j) / (m (m-1))`.
fn within_mean(z: &[DVector<f64>], inv_two_sigma2: f64) -> f64 {
    let m = z.len();
    let total: f64 = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut row = 0.0;
            for j in (i + 1)..m {
                row += rbf(&z[i], &z[j], inv_two_sigma2);
            }
            row
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    2.0 * total / (m as f64 * (m as f64 - 1.0))
}

fn cross_mean(x: &[DVector<f64>], y: &[DVector<f64>], inv_two_sigma2: f64) -> f64 {
    let total: f64 = (0..x.len())
        .into_par_iter()
        .map(|i| {
            let mut row = 0.0;
            for yj in y {
                row += rbf(&x[i], yj, inv_two_sigma2);
            }
            row
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    total / (x.len() as f64 * y.len() as f64)
}

/// Resolve the kernel bandwidth for a pooled sample set.
pub fn resolve_bandwidth(kernel: &KernelSpec, pooled: &[DVector<f64>]) -> Result<f64> {
    kernel.validate()?;
    match kernel.bandwidth {
        Bandwidth::Fixed(s) => Ok(s),
        Bandwidth::MedianHeuristic => median_heuristic_bandwidth(pooled),
    }
}

/// Unbiased MMD^2 U-statistic between two sample sets. May be slightly
/// negative when the distributions coincide. With unequal sample counts the
/// within-terms use their own counts and the cross-term `1/(m n)`.
pub fn mmd2_report(x: &[DVector<f64>], y: &[DVector<f64>], kernel: &KernelSpec) -> Result<MmdReport> {
    if x.len() < 2 || y.len() < 2 {
        return Err(Error::InsufficientSamples { need: 2, got: x.len().min(y.len()) });
    }
    let d = x[0].len();
    if x.iter().chain(y.iter()).any(|v| v.len() != d) {
        return Err(Error::DimensionMismatch("sample sets have mixed dimensions".into()));
    }
    let pooled: Vec<DVector<f64>> = x.iter().chain(y.iter()).cloned().collect();
    let sigma = resolve_bandwidth(kernel, &pooled)?;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mmd2 = within_mean(x, inv) + within_mean(y, inv) - 2.0 * cross_mean(x, y, inv);
    Ok(MmdReport { mmd2, sigma, m_x: x.len(), m_y: y.len() })
}

/// Unbiased MMD^2 U-statistic; see [`mmd2_report`] for the kernel details.
pub fn mmd2(x: &[DVector<f64>], y: &[DVector<f64>], kernel: &KernelSpec) -> Result<f64> {
    mmd2_report(x, y, kernel).map(|r| r.mmd2)
}

/// Standard deviation of the permutation null of MMD^2: pooled samples are
/// reshuffled `n_perms` times into two sets of the original sizes.
pub fn permutation_null_std<R: Rng>(
    x: &[DVector<f64>],
    y: &[DVector<f64>],
    kernel: &KernelSpec,
    n_perms: usize,
    rng: &mut R,
) -> Result<f64> {
    let mut pooled: Vec<DVector<f64>> = x.iter().chain(y.iter()).cloned().collect();
    let sigma = resolve_bandwidth(kernel, &pooled)?;
    let fixed = KernelSpec::rbf(Bandwidth::Fixed(sigma));
    let mut vals = Vec::with_capacity(n_perms);
    for _ in 0..n_perms {
        pooled.shuffle(rng);
        let (a, b) = pooled.split_at(x.len());
        vals.push(mmd2(a, b, &fixed)?);
    }
    let mean = vals.iter().sum::<f64>() / n_perms as f64;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n_perms as f64 - 1.0);
    Ok(var.sqrt())
}

/// Median of pairwise Euclidean distances over a deterministic stride
/// subsample of at most 2000 points, floored at 1e-6.
pub fn median_heuristic_bandwidth(z: &[DVector<f64>]) -> Result<f64> {
    if z.len() < 2 {
        return Err(Error::InsufficientSamples { need: 2, got: z.len() });
    }
    let cap = 2000usize;
    let stride = z.len().div_ceil(cap);
    let sub: Vec<&DVector<f64>> = z.iter().step_by(stride).collect();
    let mut dists = Vec::with_capacity(sub.len() * (sub.len() - 1) / 2);
    for i in 0..sub.len() {
        for j in (i + 1)..sub.len() {
            dists.push((sub[i] - sub[j]).norm());
        }
    }
    let mid = dists.len() / 2;
    let (_, median, _) = dists.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    Ok(median.max(1e-6))
}

// ---------------------------------------------------------------------------
// 1-D reflected heat kernel on [0, 1]
// ---------------------------------------------------------------------------

/// Default number of cosine modes in the series.
pub const HEAT_KERNEL_TERMS: usize = 200;

/// Transition density of rate-one Brownian motion reflected at 0 and 1,
/// `p_t(x | x0) = 1 + 2 sum_k exp(-k^2 pi^2 t / 2) cos(k pi x) cos(k pi x0)`.
/// The cosine modes satisfy the zero-normal-derivative boundary condition, so
/// the density integrates to one and flattens to the uniform as `t` grows.
pub fn reflected_heat_kernel_1d(x: f64, x0: f64, t: f64, terms: usize) -> f64 {
    let mut p = 1.0;
    for k in 1..=terms {
        let kf = k as f64 * std::f64::consts::PI;
        let decay = (-kf * kf * t / 2.0).exp();
        if decay < 1e-300 {
            break;
        }
        p += 2.0 * decay * (kf * x).cos() * (kf * x0).cos();
    }
    p
}

/// `d/dx p_t(x | x0)` of the reflected heat kernel. Every term carries a
/// `sin(k pi x)` factor, so this vanishes at both walls.
pub fn reflected_heat_kernel_dx_1d(x: f64, x0: f64, t: f64, terms: usize) -> f64 {
    let mut dp = 0.0;
    for k in 1..=terms {
        let kf = k as f64 * std::f64::consts::PI;
        let decay = (-kf * kf * t / 2.0).exp();
        if decay < 1e-300 {
            break;
        }
        dp += -2.0 * decay * kf * (kf * x).sin() * (kf * x0).cos();
    }
    dp
}

/// `d/dx log p_t(x | x0)` of the reflected heat kernel.
pub fn reflected_heat_score_1d(x: f64, x0: f64, t: f64, terms: usize) -> f64 {
    let mut p = 1.0;
    let mut dp = 0.0;
    for k in 1..=terms {
        let kf = k as f64 * std::f64::consts::PI;
        let decay = (-kf * kf * t / 2.0).exp();
        if decay < 1e-300 {
            break;
        }
        let c0 = (kf * x0).cos();
        p += 2.0 * decay * (kf * x).cos() * c0;
        dp += -2.0 * decay * kf * (kf * x).sin() * c0;
    }
    dp / p.max(1e-300)
}

/// CDF `int_0^x p_t(u | x0) du` of the reflected heat kernel; closed form of
/// the cosine series.
pub fn reflected_heat_cdf_1d(x: f64, x0: f64, t: f64, terms: usize) -> f64 {
    let mut c = x;
    for k in 1..=terms {
        let kf = k as f64 * std::f64::consts::PI;
        let decay = (-kf * kf * t / 2.0).exp();
        if decay < 1e-300 {
            break;
        }
        c += 2.0 * decay * (kf * x).sin() * (kf * x0).cos() / kf;
    }
    c.clamp(0.0, 1.0)
}

// ---------------------------------------------------------------------------
// Kolmogorov-Smirnov distance
// ---------------------------------------------------------------------------

/// Two-sided KS distance between a sample and a reference CDF.
pub fn ks_distance<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("KS distance needs samples".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, &s) in sorted.iter().enumerate() {
        let f = cdf(s);
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((f - lo).abs()).max((hi - f).abs());
    }
    Ok(d)
}

// ---------------------------------------------------------------------------
// Histograms
// ---------------------------------------------------------------------------

/// Per-coordinate marginal histograms with deterministic bin edges; for
/// two-dimensional data a joint grid is also filled. Values outside the range
/// are clamped into the edge bins so counts always sum to the sample count.
#[derive(Debug, Clone)]
pub struct Histogram {
    pub bins: usize,
    /// `(lo, hi)` per coordinate.
    pub ranges: Vec<(f64, f64)>,
    /// `marginals[c][b]` = count of samples in bin `b` of coordinate `c`.
    pub marginals: Vec<Vec<u64>>,
    /// Row-major `bins x bins` grid over coordinates 0 and 1, when `d == 2`.
    pub joint: Option<Vec<u64>>,
}

pub fn histogram(x: &[DVector<f64>], bins: usize, ranges: &[(f64, f64)]) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::Format("histogram needs at least one bin".into()));
    }
    if x.is_empty() {
        return Err(Error::EmptyInput("histogram needs samples".into()));
    }
    let d = x[0].len();
    if ranges.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "{} ranges for dimension-{d} samples",
            ranges.len()
        )));
    }
    let bin_of = |v: f64, (lo, hi): (f64, f64)| -> usize {
        let w = (hi - lo) / bins as f64;
        (((v - lo) / w).floor() as i64).clamp(0, bins as i64 - 1) as usize
    };
    let mut marginals = vec![vec![0u64; bins]; d];
    let mut joint = if d == 2 { Some(vec![0u64; bins * bins]) } else { None };
    for p in x {
        if p.len() != d {
            return Err(Error::DimensionMismatch("mixed sample dimensions".into()));
        }
        for c in 0..d {
            marginals[c][bin_of(p[c], ranges[c])] += 1;
        }
        if let Some(grid) = joint.as_mut() {
            grid[bin_of(p[0], ranges[0]) * bins + bin_of(p[1], ranges[1])] += 1;
        }
    }
    Ok(Histogram { bins, ranges: ranges.to_vec(), marginals, joint })
}

impl Histogram {
    pub fn edges(&self, coord: usize) -> Vec<f64> {
        let (lo, hi) = self.ranges[coord];
        let w = (hi - lo) / self.bins as f64;
        (0..=self.bins).map(|b| lo + b as f64 * w).collect()
    }
}
