//! `min ‖z‖₁ s.t. ‖A z − y‖₂ ≤ radius`.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::transform::{SensingOperator, Signal, SpectralVector};

pub const DEFAULT_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_MAX_ITERS: usize = 5000;

#[derive(Debug, Clone)]
pub struct L1Problem<'a> {
    pub observed: &'a Signal,
    pub op: &'a SensingOperator,
    pub radius: f64,
    pub tolerance: f64,
    pub max_iters: usize,
    /// Starting point for the iterative solver.
    pub warm_start: Option<&'a SpectralVector>,
}

impl<'a> L1Problem<'a> {
    pub fn new(observed: &'a Signal, op: &'a SensingOperator, radius: f64) -> Self {
        Self { observed, op, radius, tolerance: DEFAULT_TOLERANCE, max_iters: DEFAULT_MAX_ITERS, warm_start: None }
    }

    fn validate(&self) -> Result<()> {
        check_len(self.op.m(), self.observed.len())?;
        if !(self.radius.is_finite() && self.radius >= 0.0) {
            return Err(Error::InvalidParameter(format!("radius must be finite and >= 0, got {}", self.radius)));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(Error::InvalidParameter("tolerance must be > 0".into()));
        }
        Ok(())
    }
}

/// Soft threshold level `λ` with `‖min(λ, |c|)‖₂ = radius`, assuming
/// `0 < radius < ‖c‖₂`.
fn shrinkage_level(c: &[f64], radius: f64) -> f64 {
    let mut mags: Vec<f64> = c.iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| a.total_cmp(b));
    let target = radius * radius;
    let n = mags.len();
    // g(λ) = Σ_{|c_i| < λ} c_i² + #{|c_i| >= λ} λ², piecewise on the sorted magnitudes
    let mut below = 0.0;
    for (j, &m) in mags.iter().enumerate() {
        let remaining = (n - j) as f64;
        if below + remaining * m * m >= target {
            return ((target - below) / remaining).max(0.0).sqrt();
        }
        below += m * m;
    }
    mags[n - 1]
}

fn soft_threshold(c: &[f64], level: f64) -> Vec<f64> {
    c.iter().map(|&v| v.signum() * (v.abs() - level).max(0.0)).collect()
}

/// Exact solution for the full orthonormal operator, where
/// `‖A z − y‖₂ = ‖z − A* y‖₂`: a soft threshold of `c = A* y` at the level
/// that puts the shrinkage exactly on the constraint boundary.
pub fn l1_min_orthonormal(p: &L1Problem<'_>) -> Result<SpectralVector> {
    p.validate()?;
    if !p.op.is_full() {
        return Err(Error::InvalidParameter("l1_min_orthonormal requires the full orthonormal operator".into()));
    }
    let c = p.op.analyze(p.observed)?;
    if p.radius == 0.0 {
        return Ok(c);
    }
    if c.l2() <= p.radius {
        return Ok(SpectralVector::zeros(c.len()));
    }
    let level = shrinkage_level(c.as_slice(), p.radius);
    Ok(SpectralVector::from_vec_unchecked(soft_threshold(c.as_slice(), level)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L1Solution {
    pub estimate: SpectralVector,
    pub iterations: usize,
    pub converged: bool,
    /// `max(0, ‖A z − y‖₂ − radius)` at exit.
    pub feasibility_violation: f64,
}

/// Projection onto `{x : ‖A x − y‖₂ ≤ r}`. Rows of a (partial) orthonormal
/// operator are orthonormal, so `A Aᵀ = I` and the projection only moves the
/// row-space component.
fn project_feasible(x: &SpectralVector, p: &L1Problem<'_>) -> Result<SpectralVector> {
    let ax = p.op.synthesize(x)?;
    let diff = ax.sub(p.observed)?;
    let dist = diff.l2();
    if dist <= p.radius {
        return Ok(x.clone());
    }
    // A x -> y + r (A x - y) / ‖A x - y‖
    let shift = diff.scale(p.radius / dist - 1.0);
    x.add(&p.op.analyze(&shift)?)
}

/// General solver by ADMM on the split `min ‖z‖₁ + I_C(x)` s.t. `x = z`,
/// with residual-balancing penalty updates.
pub fn l1_min_general(p: &L1Problem<'_>) -> Result<L1Solution> {
    p.validate()?;
    let n = p.op.n();
    let mut z = match p.warm_start {
        Some(w) => {
            check_len(n, w.len())?;
            w.clone()
        }
        None => p.op.analyze(p.observed)?,
    };
    let mut u = vec![0.0; n];
    let mut rho = 1.0;
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=p.max_iters.max(1) {
        iterations = it;
        let v = SpectralVector::from_vec_unchecked(z.as_slice().iter().zip(&u).map(|(a, b)| a - b).collect());
        let x = project_feasible(&v, p)?;
        let z_prev = z;
        let shifted: Vec<f64> = x.as_slice().iter().zip(&u).map(|(a, b)| a + b).collect();
        z = SpectralVector::from_vec_unchecked(soft_threshold(&shifted, 1.0 / rho));
        for ((ui, xi), zi) in u.iter_mut().zip(x.as_slice()).zip(z.as_slice()) {
            *ui += xi - zi;
        }
        let primal = x.sub(&z)?.l2();
        let change = z.sub(&z_prev)?.l2();
        if primal < p.tolerance && change < p.tolerance {
            converged = true;
            break;
        }
        let dual = rho * change;
        if primal > 10.0 * dual {
            rho *= 2.0;
            u.iter_mut().for_each(|v| *v *= 0.5);
        } else if dual > 10.0 * primal {
            rho *= 0.5;
            u.iter_mut().for_each(|v| *v *= 2.0);
        }
    }

    let violation = (p.op.synthesize(&z)?.sub(p.observed)?.l2() - p.radius).max(0.0);
    Ok(L1Solution { estimate: z, iterations, converged, feasibility_violation: violation })
}

/// Dispatches to the exact orthonormal solver when possible.
pub fn l1_min(p: &L1Problem<'_>) -> Result<L1Solution> {
    if p.op.is_full() {
        let estimate = l1_min_orthonormal(p)?;
        return Ok(L1Solution { estimate, iterations: 1, converged: true, feasibility_violation: 0.0 });
    }
    l1_min_general(p)
}
