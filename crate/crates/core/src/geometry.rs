//! Constrained domains: linear and spherical inequality constraints, distances,
//! ray intersections, reflections, and the canonical domain constructors.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Points closer to a constraint surface than this are treated as on it.
pub const SURFACE_TOL: f64 = 1e-9;
/// Minimum slack a constructed interior point must achieve.
pub const INTERIOR_MARGIN: f64 = 1e-6;

/// Half-space constraint `<normal, x> < offset` with a unit normal.
///
/// Inputs are rescaled at construction so that the slack `offset - <normal, x>`
/// equals the Euclidean distance to the hyperplane.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    normal: DVector<f64>,
    offset: f64,
}

impl LinearConstraint {
    pub fn new(normal: DVector<f64>, offset: f64) -> Result<Self> {
        let norm = normal.norm();
        if !norm.is_finite() || norm < 1e-14 {
            return Err(Error::Format("linear constraint has zero or non-finite normal".into()));
        }
        Ok(Self { normal: normal / norm, offset: offset / norm })
    }

    pub fn normal(&self) -> &DVector<f64> {
        &self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Distance to the hyperplane, positive inside the half-space.
    pub fn slack(&self, x: &DVector<f64>) -> f64 {
        self.offset - self.normal.dot(x)
    }
}

/// Ball constraint `||x - center|| < radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereConstraint {
    center: DVector<f64>,
    radius: f64,
}

impl SphereConstraint {
    pub fn new(center: DVector<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::Format(format!("sphere radius must be positive, got {radius}")));
        }
        Ok(Self { center, radius })
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Distance to the sphere surface, positive inside the ball.
    pub fn slack(&self, x: &DVector<f64>) -> f64 {
        self.radius - (x - &self.center).norm()
    }
}

/// Identifies which constraint surface a ray hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintId {
    Linear(usize),
    Sphere(usize),
}

/// An open domain in `R^d` cut out by linear and spherical constraints.
///
/// Immutable after construction; construction fails if the interior is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    dim: usize,
    linear: Vec<LinearConstraint>,
    spheres: Vec<SphereConstraint>,
    interior_seed: DVector<f64>,
}

impl ConstraintSet {
    pub fn new(
        dim: usize,
        linear: Vec<LinearConstraint>,
        spheres: Vec<SphereConstraint>,
    ) -> Result<Self> {
        for c in &linear {
            if c.normal.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "linear constraint has dimension {}, set has {}",
                    c.normal.len(),
                    dim
                )));
            }
        }
        for s in &spheres {
            if s.center.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "sphere constraint has dimension {}, set has {}",
                    s.center.len(),
                    dim
                )));
            }
        }
        let interior_seed = if linear.is_empty() && spheres.is_empty() {
            DVector::zeros(dim)
        } else {
            max_min_slack_point(dim, &linear, &spheres)?
        };
        Ok(Self { dim, linear, spheres, interior_seed })
    }

    /// A set with no constraints; every point of `R^d` is interior.
    pub fn unconstrained(dim: usize) -> Self {
        Self { dim, linear: Vec::new(), spheres: Vec::new(), interior_seed: DVector::zeros(dim) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn linear(&self) -> &[LinearConstraint] {
        &self.linear
    }

    pub fn spheres(&self) -> &[SphereConstraint] {
        &self.spheres
    }

    pub fn num_constraints(&self) -> usize {
        self.linear.len() + self.spheres.len()
    }

    /// Minimum slack over all constraints; `+inf` when there are none.
    pub fn min_slack(&self, x: &DVector<f64>) -> f64 {
        let mut m = f64::INFINITY;
        for c in &self.linear {
            m = m.min(c.slack(x));
        }
        for s in &self.spheres {
            m = m.min(s.slack(x));
        }
        m
    }

    pub fn is_interior(&self, x: &DVector<f64>) -> bool {
        self.min_slack(x) > 0.0
    }

    /// Distance from a strictly interior point to the nearest constraint surface.
    pub fn distance_to_boundary(&self, x: &DVector<f64>) -> Result<f64> {
        let d = self.min_slack(x);
        if d <= 0.0 {
            return Err(Error::InfeasiblePoint(format!("min slack {d} is not positive")));
        }
        Ok(d)
    }

    /// Slack of one identified constraint.
    pub fn slack_of(&self, id: ConstraintId, x: &DVector<f64>) -> f64 {
        match id {
            ConstraintId::Linear(i) => self.linear[i].slack(x),
            ConstraintId::Sphere(i) => self.spheres[i].slack(x),
        }
    }

    /// The constraint with smallest slack at `x`, with that slack.
    /// Ties resolve to the first constraint in storage order.
    pub fn active_constraint(&self, x: &DVector<f64>) -> Option<(f64, ConstraintId)> {
        let mut best: Option<(f64, ConstraintId)> = None;
        for (i, c) in self.linear.iter().enumerate() {
            let s = c.slack(x);
            if best.map_or(true, |(b, _)| s < b) {
                best = Some((s, ConstraintId::Linear(i)));
            }
        }
        for (i, sp) in self.spheres.iter().enumerate() {
            let s = sp.slack(x);
            if best.map_or(true, |(b, _)| s < b) {
                best = Some((s, ConstraintId::Sphere(i)));
            }
        }
        best
    }

    /// Gradient of the slack of one constraint. Linear: `-normal`;
    /// sphere: `-(x - c)/||x - c||` (zero at the centre).
    pub fn slack_gradient(&self, id: ConstraintId, x: &DVector<f64>) -> DVector<f64> {
        match id {
            ConstraintId::Linear(i) => -self.linear[i].normal.clone(),
            ConstraintId::Sphere(i) => {
                let delta = x - &self.spheres[i].center;
                let n = delta.norm();
                if n < 1e-300 {
                    DVector::zeros(self.dim)
                } else {
                    -delta / n
                }
            }
        }
    }

    /// Nearest surface hit along `x + t * dir` for `t > 0`, for any nonzero
    /// `dir` (not necessarily unit). Near-tangential intersections with
    /// `|<dir_hat, n_hat>| < 1e-12` are skipped. Returns `None` when the ray
    /// escapes without hitting anything.
    pub fn ray_hits(&self, x: &DVector<f64>, dir: &DVector<f64>) -> Option<(f64, ConstraintId)> {
        let dir_norm = dir.norm();
        if dir_norm < 1e-300 {
            return None;
        }
        let mut best: Option<(f64, ConstraintId)> = None;
        let mut consider = |t: f64, id: ConstraintId| {
            if t > 0.0 && best.map_or(true, |(b, _)| t < b) {
                best = Some((t, id));
            }
        };
        for (i, c) in self.linear.iter().enumerate() {
            let speed = c.normal.dot(dir);
            // only rays moving towards the wall, excluding grazing incidence
            if speed / dir_norm <= 1e-12 {
                continue;
            }
            consider(c.slack(x) / speed, ConstraintId::Linear(i));
        }
        for (i, s) in self.spheres.iter().enumerate() {
            let delta = x - &s.center;
            let a = dir.norm_squared();
            let b = 2.0 * dir.dot(&delta);
            let c0 = delta.norm_squared() - s.radius * s.radius;
            let disc = b * b - 4.0 * a * c0;
            if disc <= 0.0 {
                continue; // misses or grazes the sphere
            }
            let sq = disc.sqrt();
            // smaller positive root first (relevant when x is outside the ball)
            let t_lo = (-b - sq) / (2.0 * a);
            let t_hi = (-b + sq) / (2.0 * a);
            for t in [t_lo, t_hi] {
                if t > 0.0 {
                    let hit = x + dir * t;
                    let n = self.outward_normal_unchecked(ConstraintId::Sphere(i), &hit);
                    if (dir.dot(&n) / dir_norm).abs() < 1e-12 {
                        continue;
                    }
                    consider(t, ConstraintId::Sphere(i));
                    break;
                }
            }
        }
        best
    }

    /// Distance to the first constraint surface along unit direction `s_hat`
    /// from a strictly interior point, and which constraint is hit.
    pub fn ray_intersect(&self, x: &DVector<f64>, s_hat: &DVector<f64>) -> Result<(f64, ConstraintId)> {
        if !self.is_interior(x) {
            return Err(Error::InfeasiblePoint("ray origin is not strictly interior".into()));
        }
        if (s_hat.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::Format(format!("ray direction must be unit, norm {}", s_hat.norm())));
        }
        self.ray_hits(x, s_hat).ok_or(Error::NoIntersection)
    }

    /// Every positive-`t` surface hit along `x + t * dir`, grazing excluded;
    /// used for corner tie-breaking in the reflected walk.
    pub fn all_ray_hits(&self, x: &DVector<f64>, dir: &DVector<f64>) -> Vec<(f64, ConstraintId)> {
        let dir_norm = dir.norm();
        if dir_norm < 1e-300 {
            return Vec::new();
        }
        let mut hits = Vec::new();
        for (i, c) in self.linear.iter().enumerate() {
            let speed = c.normal.dot(dir);
            if speed / dir_norm <= 1e-12 {
                continue;
            }
            let t = c.slack(x) / speed;
            if t > 0.0 {
                hits.push((t, ConstraintId::Linear(i)));
            }
        }
        for (i, s) in self.spheres.iter().enumerate() {
            let delta = x - &s.center;
            let a = dir.norm_squared();
            let b = 2.0 * dir.dot(&delta);
            let c0 = delta.norm_squared() - s.radius * s.radius;
            let disc = b * b - 4.0 * a * c0;
            if disc <= 0.0 {
                continue;
            }
            let sq = disc.sqrt();
            for t in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
                if t > 0.0 {
                    let hit = x + dir * t;
                    let n = self.outward_normal_unchecked(ConstraintId::Sphere(i), &hit);
                    if (dir.dot(&n) / dir_norm).abs() >= 1e-12 {
                        hits.push((t, ConstraintId::Sphere(i)));
                    }
                    break;
                }
            }
        }
        hits
    }

    /// Outward normal without the on-surface tolerance check; the reflected
    /// walk calls this at points it has just placed on a surface.
    pub fn outward_normal_for_walk(&self, id: ConstraintId, x_hit: &DVector<f64>) -> DVector<f64> {
        self.outward_normal_unchecked(id, x_hit)
    }

    fn outward_normal_unchecked(&self, id: ConstraintId, x_hit: &DVector<f64>) -> DVector<f64> {
        match id {
            ConstraintId::Linear(i) => self.linear[i].normal.clone(),
            ConstraintId::Sphere(i) => {
                let delta = x_hit - &self.spheres[i].center;
                let n = delta.norm();
                delta / n
            }
        }
    }

    /// Unit outward normal of the identified constraint at a point on its
    /// surface (within [`SURFACE_TOL`]).
    pub fn outward_normal(&self, id: ConstraintId, x_hit: &DVector<f64>) -> Result<DVector<f64>> {
        let s = self.slack_of(id, x_hit);
        if s.abs() > SURFACE_TOL {
            return Err(Error::InfeasiblePoint(format!(
                "point is {s:e} away from the constraint surface (tolerance {SURFACE_TOL:e})"
            )));
        }
        Ok(self.outward_normal_unchecked(id, x_hit))
    }

    /// A strictly interior point with slack at least [`INTERIOR_MARGIN`],
    /// located at construction time by maximising the minimum slack.
    pub fn interior_point(&self) -> &DVector<f64> {
        &self.interior_seed
    }
}

/// Mirror a unit direction across the tangent plane with unit outward normal
/// `n_hat`: `s - 2 <s, n> n`. Involutive and norm-preserving.
pub fn reflect_direction(s_hat: &DVector<f64>, n_hat: &DVector<f64>) -> DVector<f64> {
    s_hat - n_hat * (2.0 * s_hat.dot(n_hat))
}

// ---------------------------------------------------------------------------
// Interior-point search
// ---------------------------------------------------------------------------

/// Maximise the minimum slack over all constraints (the Chebyshev centre for
/// polytopes, generalised to mixed linear/sphere sets) via annealed soft-min
/// Newton ascent. Errors with `InfeasibleDomain` when the optimum slack is
/// below [`INTERIOR_MARGIN`].
fn max_min_slack_point(
    dim: usize,
    linear: &[LinearConstraint],
    spheres: &[SphereConstraint],
) -> Result<DVector<f64>> {
    if dim == 0 {
        return Err(Error::Format("constrained set with constraints needs dim >= 1".into()));
    }
    // Start at the sphere-centre average when available, else at the origin.
    let mut x = DVector::zeros(dim);
    if !spheres.is_empty() {
        for s in spheres {
            x += &s.center;
        }
        x /= spheres.len() as f64;
    }

    let scale = linear
        .iter()
        .map(|c| c.offset.abs())
        .chain(spheres.iter().map(|s| s.radius))
        .fold(1.0f64, f64::max);

    let slacks_grads = |x: &DVector<f64>| -> (Vec<f64>, Vec<DVector<f64>>, Vec<Option<(DVector<f64>, f64)>>) {
        let mut s = Vec::with_capacity(linear.len() + spheres.len());
        let mut g = Vec::with_capacity(s.capacity());
        // curvature info for spheres: (unit radial, 1/||x-c||)
        let mut curv = Vec::with_capacity(s.capacity());
        for c in linear {
            s.push(c.slack(x));
            g.push(-c.normal.clone());
            curv.push(None);
        }
        for sp in spheres {
            let delta = x - &sp.center;
            let n = delta.norm();
            s.push(sp.radius - n);
            if n < 1e-12 {
                g.push(DVector::zeros(dim));
                curv.push(None);
            } else {
                let u = &delta / n;
                g.push(-u.clone());
                curv.push(Some((u, 1.0 / n)));
            }
        }
        (s, g, curv)
    };

    // Soft minimum f_tau(x) = -tau ln sum exp(-s_i/tau); smooth, concave,
    // within tau*ln(m) of min_i s_i.
    let soft_min = |s: &[f64], tau: f64| -> (f64, Vec<f64>) {
        let neg_min = s.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut z = 0.0;
        let mut w: Vec<f64> = s.iter().map(|&si| (-(si - neg_min) / tau).exp()).collect();
        for wi in &w {
            z += wi;
        }
        for wi in &mut w {
            *wi /= z;
        }
        (neg_min - tau * z.ln(), w)
    };

    let mut tau = scale;
    while tau > 1e-9 * scale {
        for _ in 0..80 {
            let (s, grads, curv) = slacks_grads(&x);
            let (f, w) = soft_min(&s, tau);
            // gradient of f_tau
            let mut grad = DVector::zeros(dim);
            for (wi, gi) in w.iter().zip(&grads) {
                grad += gi * *wi;
            }
            // Hessian (negated, so positive semidefinite)
            let mut h = DMatrix::zeros(dim, dim);
            for ((wi, gi), ci) in w.iter().zip(&grads).zip(&curv) {
                h += (gi * gi.transpose()) * (*wi / tau);
                if let Some((u, inv_n)) = ci {
                    // -d^2 slack = (I - u u^T)/||x-c||
                    let mut p = DMatrix::identity(dim, dim);
                    p -= u * u.transpose();
                    h += p * (*wi * *inv_n);
                }
            }
            let gg = &grad * grad.transpose();
            h -= gg / tau;
            // h = -(Hessian of f); regularise and solve h * step = grad
            for i in 0..dim {
                h[(i, i)] += 1e-10 * (1.0 + h[(i, i)].abs());
            }
            let step = match h.clone().cholesky() {
                Some(ch) => ch.solve(&grad),
                None => grad.clone(),
            };
            if step.norm() < 1e-13 * scale.max(1.0) {
                break;
            }
            // backtracking line search on f_tau
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let cand = &x + &step * alpha;
                let (s2, _, _) = slacks_grads(&cand);
                let (f2, _) = soft_min(&s2, tau);
                if f2 > f + 1e-12 * alpha * grad.dot(&step).max(0.0) && f2.is_finite() {
                    x = cand;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
            // An unbounded max-min problem (open domain directions): any point
            // with comfortable slack is a valid interior point.
            let m = x.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            if m > 1e8 * scale {
                break;
            }
        }
        tau *= 0.1;
    }

    let final_slack = {
        let (s, _, _) = slacks_grads(&x);
        s.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    if final_slack < INTERIOR_MARGIN {
        return Err(Error::InfeasibleDomain(format!(
            "best attainable slack {final_slack:e} is below the interior margin"
        )));
    }
    Ok(x)
}

// ---------------------------------------------------------------------------
// Canonical constructors
// ---------------------------------------------------------------------------

/// The hypercube `[-1, 1]^d`: `2d` half-spaces `x_i < 1`, `-x_i < 1`.
pub fn make_hypercube(d: usize) -> Result<ConstraintSet> {
    if d == 0 {
        return Err(Error::Format("hypercube dimension must be >= 1".into()));
    }
    let mut linear = Vec::with_capacity(2 * d);
    for i in 0..d {
        let mut up = DVector::zeros(d);
        up[i] = 1.0;
        linear.push(LinearConstraint::new(up, 1.0)?);
        let mut down = DVector::zeros(d);
        down[i] = -1.0;
        linear.push(LinearConstraint::new(down, 1.0)?);
    }
    ConstraintSet::new(d, linear, Vec::new())
}

/// The open interval `(lo, hi)` as a one-dimensional constraint set.
pub fn make_interval(lo: f64, hi: f64) -> Result<ConstraintSet> {
    if !(hi > lo) {
        return Err(Error::Format(format!("interval needs lo < hi, got [{lo}, {hi}]")));
    }
    let linear = vec![
        LinearConstraint::new(DVector::from_element(1, 1.0), hi)?,
        LinearConstraint::new(DVector::from_element(1, -1.0), -lo)?,
    ];
    ConstraintSet::new(1, linear, Vec::new())
}

/// The simplex in its free-coordinate chart: `d` coordinates with `x_i > 0`
/// and `sum x_i < 1`; the implied last barycentric coordinate is
/// `1 - sum x_i`.
pub fn make_simplex(d: usize) -> Result<ConstraintSet> {
    if d == 0 {
        return Err(Error::Format("simplex dimension must be >= 1".into()));
    }
    let mut linear = Vec::with_capacity(d + 1);
    for i in 0..d {
        let mut n = DVector::zeros(d);
        n[i] = -1.0;
        linear.push(LinearConstraint::new(n, 0.0)?);
    }
    linear.push(LinearConstraint::new(DVector::from_element(d, 1.0), 1.0)?);
    ConstraintSet::new(d, linear, Vec::new())
}

/// The Birkhoff polytope of doubly stochastic `n x n` matrices, charted by the
/// top-left `(n-1) x (n-1)` block (row-major). The remaining row, column, and
/// corner entries are affine in the block, so all `n^2` positivity
/// constraints are linear in the `(n-1)^2` free coordinates.
pub fn make_birkhoff(n: usize) -> Result<ConstraintSet> {
    if n < 2 {
        return Err(Error::Format("Birkhoff polytope needs n >= 2".into()));
    }
    let m = n - 1;
    let d = m * m;
    let idx = |i: usize, j: usize| i * m + j;
    let mut linear = Vec::with_capacity(n * n);
    // block entries: Y_ij > 0
    for i in 0..m {
        for j in 0..m {
            let mut a = DVector::zeros(d);
            a[idx(i, j)] = -1.0;
            linear.push(LinearConstraint::new(a, 0.0)?);
        }
    }
    // last column: 1 - sum_j Y_ij > 0
    for i in 0..m {
        let mut a = DVector::zeros(d);
        for j in 0..m {
            a[idx(i, j)] = 1.0;
        }
        linear.push(LinearConstraint::new(a, 1.0)?);
    }
    // last row: 1 - sum_i Y_ij > 0
    for j in 0..m {
        let mut a = DVector::zeros(d);
        for i in 0..m {
            a[idx(i, j)] = 1.0;
        }
        linear.push(LinearConstraint::new(a, 1.0)?);
    }
    // corner: sum_ij Y_ij - (n - 2) > 0
    let a = DVector::from_element(d, -1.0);
    linear.push(LinearConstraint::new(a, -((n as f64) - 2.0))?);
    ConstraintSet::new(d, linear, Vec::new())
}

/// Lower-triangular Cholesky factors of trace-bounded SPD matrices:
/// `d(d+1)/2` coordinates (row-major over `j <= i`), one ball constraint
/// `||L||_F < sqrt(C)` and `d` half-spaces `L_ii > 0`.
pub fn make_cholesky_ball(d: usize, trace_bound: f64) -> Result<ConstraintSet> {
    if d == 0 {
        return Err(Error::Format("Cholesky ball needs matrix dimension >= 1".into()));
    }
    if !(trace_bound > 0.0) {
        return Err(Error::Format(format!("trace bound must be positive, got {trace_bound}")));
    }
    let dim = d * (d + 1) / 2;
    let mut diag_index = Vec::with_capacity(d);
    let mut k = 0;
    for i in 0..d {
        for j in 0..=i {
            if i == j {
                diag_index.push(k);
            }
            k += 1;
        }
    }
    let mut linear = Vec::with_capacity(d);
    for &di in &diag_index {
        let mut a = DVector::zeros(dim);
        a[di] = -1.0;
        linear.push(LinearConstraint::new(a, 0.0)?);
    }
    let sphere = SphereConstraint::new(DVector::zeros(dim), trace_bound.sqrt())?;
    ConstraintSet::new(dim, linear, vec![sphere])
}

/// Anchored-chain loop polytope over the triangle diagonals
/// `r(1,3), ..., r(1,N-1)` of an `N`-joint chain with link lengths
/// `lengths = [l_1, ..., l_{N-1}]` and anchor distance `r(1,N) = d_anchor`.
pub fn make_loop_polytope(lengths: &[f64], d_anchor: f64) -> Result<ConstraintSet> {
    if lengths.len() < 3 {
        return Err(Error::Format("loop polytope needs at least 3 link lengths".into()));
    }
    if lengths.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::Format("link lengths must be positive".into()));
    }
    if !(d_anchor >= 0.0) {
        return Err(Error::Format(format!("anchor distance must be >= 0, got {d_anchor}")));
    }
    let n = lengths.len() + 1; // number of joints
    let d = n - 3; // free diagonals r(1,3) .. r(1,N-1)
    let l = |j: usize| lengths[j - 1]; // 1-based link lengths
    let coord = |j: usize| j - 3; // r(1,j) -> coordinate index

    let mut linear = Vec::new();
    let mut push = |a: DVector<f64>, b: f64| -> Result<()> {
        linear.push(LinearConstraint::new(a, b)?);
        Ok(())
    };

    // r(1,3) <= l1 + l2 and r(1,3) >= |l1 - l2|
    let mut a = DVector::zeros(d);
    a[coord(3)] = 1.0;
    push(a, l(1) + l(2))?;
    let mut a = DVector::zeros(d);
    a[coord(3)] = -1.0;
    push(a, -(l(1) - l(2)).abs())?;

    // triangle constraints between consecutive diagonals
    for j in 3..=(n - 2) {
        let (cj, cj1) = (coord(j), coord(j + 1));
        let mut a = DVector::zeros(d);
        a[cj] = 1.0;
        a[cj1] = -1.0;
        push(a, l(j))?;
        let mut a = DVector::zeros(d);
        a[cj] = -1.0;
        a[cj1] = 1.0;
        push(a, l(j))?;
        let mut a = DVector::zeros(d);
        a[cj] = -1.0;
        a[cj1] = -1.0;
        push(a, -l(j))?;
    }

    // r(1,N-1) <= l_{N-1} + d_anchor and r(1,N-1) >= |l_{N-1} - d_anchor|
    let mut a = DVector::zeros(d);
    a[coord(n - 1)] = 1.0;
    push(a, l(n - 1) + d_anchor)?;
    let mut a = DVector::zeros(d);
    a[coord(n - 1)] = -1.0;
    push(a, -(l(n - 1) - d_anchor).abs())?;

    ConstraintSet::new(d, linear, Vec::new())
}

// ---------------------------------------------------------------------------
// Product domain with torus coordinates
// ---------------------------------------------------------------------------

pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// The product of a constrained block and `periodic_dims` torus coordinates
/// on `[0, 2*pi)`. Periodic coordinates are stored after constrained ones.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    constrained: ConstraintSet,
    periodic_dims: usize,
}

impl DomainSpec {
    pub fn new(constrained: ConstraintSet, periodic_dims: usize) -> Result<Self> {
        if constrained.dim() + periodic_dims == 0 {
            return Err(Error::Format("domain must have at least one coordinate".into()));
        }
        Ok(Self { constrained, periodic_dims })
    }

    /// A constrained set with no torus factor.
    pub fn from_set(constrained: ConstraintSet) -> Result<Self> {
        Self::new(constrained, 0)
    }

    /// A bare torus with no constrained coordinates.
    pub fn torus(periodic_dims: usize) -> Result<Self> {
        Self::new(ConstraintSet::unconstrained(0), periodic_dims)
    }

    pub fn dim(&self) -> usize {
        self.constrained.dim() + self.periodic_dims
    }

    pub fn constrained_dim(&self) -> usize {
        self.constrained.dim()
    }

    pub fn periodic_dims(&self) -> usize {
        self.periodic_dims
    }

    pub fn constrained(&self) -> &ConstraintSet {
        &self.constrained
    }

    /// The constrained block of a full-dimension point.
    pub fn constrained_block(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.constrained.dim(), x.iter().take(self.constrained.dim()).cloned())
    }

    pub fn is_interior(&self, x: &DVector<f64>) -> bool {
        debug_assert_eq!(x.len(), self.dim());
        if self.constrained.dim() == 0 {
            return true;
        }
        self.constrained.is_interior(&self.constrained_block(x))
    }

    /// Wrap periodic coordinates into `[0, 2*pi)` in place.
    pub fn wrap_periodic(&self, x: &mut DVector<f64>) {
        let dc = self.constrained.dim();
        for i in dc..self.dim() {
            x[i] = x[i].rem_euclid(TWO_PI);
        }
    }

    /// Hex digest of the canonical JSON form; checkpoints record it so that a
    /// model is only ever applied to the domain it was trained on.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("domain serialisation cannot fail");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        let out = h.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }
}

// ---------------------------------------------------------------------------
// JSON wire format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct LinearRaw {
    normal: Vec<f64>,
    offset: f64,
}

#[derive(Serialize, Deserialize)]
struct SphereRaw {
    center: Vec<f64>,
    radius: f64,
}

#[derive(Serialize, Deserialize)]
struct DomainRaw {
    dimension: usize,
    linear: Vec<LinearRaw>,
    spheres: Vec<SphereRaw>,
    periodic_dims: usize,
}

impl Serialize for DomainSpec {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        let raw = DomainRaw {
            dimension: self.constrained.dim(),
            linear: self
                .constrained
                .linear
                .iter()
                .map(|c| LinearRaw { normal: c.normal.iter().cloned().collect(), offset: c.offset })
                .collect(),
            spheres: self
                .constrained
                .spheres
                .iter()
                .map(|s| SphereRaw { center: s.center.iter().cloned().collect(), radius: s.radius })
                .collect(),
            periodic_dims: self.periodic_dims,
        };
        raw.serialize(ser)
    }
}

impl<'de> Deserialize<'de> for DomainSpec {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let raw = DomainRaw::deserialize(de)?;
        let linear = raw
            .linear
            .into_iter()
            .map(|c| LinearConstraint::new(DVector::from_vec(c.normal), c.offset))
            .collect::<Result<Vec<_>>>()
            .map_err(serde::de::Error::custom)?;
        let spheres = raw
            .spheres
            .into_iter()
            .map(|s| SphereConstraint::new(DVector::from_vec(s.center), s.radius))
            .collect::<Result<Vec<_>>>()
            .map_err(serde::de::Error::custom)?;
        let set = if linear.is_empty() && spheres.is_empty() {
            ConstraintSet::unconstrained(raw.dimension)
        } else {
            ConstraintSet::new(raw.dimension, linear, spheres).map_err(serde::de::Error::custom)?
        };
        DomainSpec::new(set, raw.periodic_dims).map_err(serde::de::Error::custom)
    }
}
