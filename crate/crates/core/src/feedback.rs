//! Residuals, per-action feedback predicates, Mahalanobis scoring against
//! clean-residual statistics, and stopping rules.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::bandit::ActionDistribution;
use crate::error::{check_len, Error, Result};
use crate::recovery::{Action, Cosamp};
use crate::transform::{SensingOperator, Signal, SpectralVector};

/// How the a1 predicate groups its three comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum A1Precedence {
    /// `‖v‖₂ < α  OR  (MD < θ AND ‖v‖∞ < m)`
    #[default]
    OrFirst,
    /// `(‖v‖₂ < α OR MD < θ)  AND  ‖v‖∞ < m`
    AndFirst,
}

/// Domain in which the l∞ norm and the thresholded count of a residual are
/// taken. The l2 norm and the Mahalanobis distance do not depend on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualDomain {
    /// Pixel-domain residual `v = y − A x̂`.
    #[default]
    Signal,
    /// Its spectral coefficients `A* v`.
    Spectral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackConfig {
    /// l2 residual threshold α.
    pub alpha: f64,
    /// l∞ residual threshold β.
    pub beta: f64,
    /// Lower l∞ threshold m.
    pub m_low: f64,
    /// l0 attack sparsity τ.
    pub tau: usize,
    /// Mahalanobis threshold θ.
    pub theta: f64,
    /// Per-channel θ, overriding `theta` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_per_channel: Option<Vec<f64>>,
    /// Magnitude floor for counting residual entries as nonzero.
    pub count_threshold: f64,
    pub eta: f64,
    pub eta_prime: f64,
    pub eta_dprime: f64,
    /// Stopping probability Δ.
    pub delta_prob: f64,
    /// Stopping residual δ.
    pub delta_res: f64,
    /// Iteration cap T.
    pub t_max: usize,
    /// When set, a3 and a4 also need more than this many counted entries.
    #[serde(default)]
    pub l0_count_gate: Option<usize>,
    #[serde(default)]
    pub a1_precedence: A1Precedence,
    #[serde(default)]
    pub residual_domain: ResidualDomain,
}

impl FeedbackConfig {
    /// Grayscale 28×28 parameter set.
    pub fn mnist() -> Self {
        Self {
            alpha: 8.0,
            beta: 5.0,
            m_low: 1.8,
            tau: 15,
            theta: 65.0,
            theta_per_channel: None,
            count_threshold: 0.5,
            eta: 0.3,
            eta_prime: 0.15,
            eta_dprime: 0.04,
            delta_prob: 0.8,
            delta_res: 2.0,
            t_max: 100,
            l0_count_gate: None,
            a1_precedence: A1Precedence::OrFirst,
            residual_domain: ResidualDomain::Signal,
        }
    }

    /// RGB 32×32 parameter set (θ per channel, RGB order).
    pub fn cifar10() -> Self {
        Self {
            alpha: 7.0,
            beta: 2.8,
            m_low: 1.4,
            tau: 35,
            theta: 3.3,
            theta_per_channel: Some(vec![3.3, 3.0, 3.2]),
            eta: 0.5,
            eta_prime: 0.05,
            eta_dprime: 0.05,
            ..Self::mnist()
        }
    }

    pub fn theta_for(&self, channel: usize) -> f64 {
        self.theta_per_channel
            .as_ref()
            .and_then(|t| t.get(channel).copied())
            .unwrap_or(self.theta)
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("m_low", self.m_low),
            ("theta", self.theta),
            ("count_threshold", self.count_threshold),
            ("eta", self.eta),
            ("eta_prime", self.eta_prime),
            ("eta_dprime", self.eta_dprime),
            ("delta_res", self.delta_res),
        ];
        for (name, v) in named {
            if v.is_nan() || v < 0.0 {
                return Err(Error::InvalidParameter(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.delta_prob > 0.0 && self.delta_prob <= 1.0) {
            return Err(Error::InvalidParameter(format!("delta_prob must lie in (0, 1], got {}", self.delta_prob)));
        }
        if self.t_max == 0 {
            return Err(Error::InvalidParameter("t_max must be >= 1".into()));
        }
        if let Some(t) = &self.theta_per_channel {
            if t.iter().any(|v| v.is_nan() || *v < 0.0) {
                return Err(Error::InvalidParameter("theta_per_channel entries must be >= 0".into()));
            }
        }
        Ok(())
    }
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        Self::mnist()
    }
}

/// `y − A x̂`.
pub fn residual(y: &Signal, estimate: &SpectralVector, op: &SensingOperator) -> Result<Signal> {
    check_len(op.m(), y.len())?;
    y.sub(&op.synthesize(estimate)?)
}

/// Mean and covariance of clean residuals; the Cholesky factor of
/// `covariance + ridge·I` is computed on first use and cached.
#[derive(Debug, Serialize, Deserialize)]
pub struct CleanStats {
    pub mean: Vec<f64>,
    /// Row-major `n × n`.
    pub covariance: Vec<f64>,
    pub ridge: f64,
    pub source_count: usize,
    #[serde(skip)]
    factor: OnceLock<std::result::Result<Vec<f64>, Error>>,
}

impl Clone for CleanStats {
    fn clone(&self) -> Self {
        Self {
            mean: self.mean.clone(),
            covariance: self.covariance.clone(),
            ridge: self.ridge,
            source_count: self.source_count,
            factor: self.factor.clone(),
        }
    }
}

impl PartialEq for CleanStats {
    fn eq(&self, other: &Self) -> bool {
        self.mean == other.mean
            && self.covariance == other.covariance
            && self.ridge == other.ridge
            && self.source_count == other.source_count
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct StatsSidecar {
    n: usize,
    ridge: f64,
    source_count: usize,
}

/// Lower-triangular `L` with `a = L Lᵀ`, row-major.
fn cholesky(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let dot: f64 = (0..j).map(|p| l[i * n + p] * l[j * n + p]).sum();
            if i == j {
                let d = a[i * n + i] - dot;
                if d.is_nan() || d <= 0.0 {
                    return Err(Error::NotPositiveDefinite { minor: i + 1 });
                }
                l[i * n + i] = d.sqrt();
            } else {
                l[i * n + j] = (a[i * n + j] - dot) / l[j * n + j];
            }
        }
    }
    Ok(l)
}

impl CleanStats {
    pub fn new(mean: Vec<f64>, covariance: Vec<f64>, ridge: f64, source_count: usize) -> Result<Self> {
        let n = mean.len();
        if n == 0 {
            return Err(Error::InvalidParameter("empty mean".into()));
        }
        check_len(n * n, covariance.len())?;
        if !(ridge.is_finite() && ridge >= 0.0) {
            return Err(Error::InvalidParameter(format!("ridge must be finite and >= 0, got {ridge}")));
        }
        for i in 0..n {
            for j in 0..i {
                let (a, b) = (covariance[i * n + j], covariance[j * n + i]);
                if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::InvalidParameter(format!("covariance not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { mean, covariance, ridge, source_count, factor: OnceLock::new() })
    }

    pub fn n(&self) -> usize {
        self.mean.len()
    }

    /// Cholesky factor of `covariance + ridge·I`.
    pub fn factor(&self) -> Result<&[f64]> {
        self.factor
            .get_or_init(|| {
                let n = self.n();
                let mut a = self.covariance.clone();
                for i in 0..n {
                    a[i * n + i] += self.ridge;
                }
                cholesky(&a, n)
            })
            .as_deref()
            .map_err(Clone::clone)
    }

    /// Squared ratio of the extreme Cholesky diagonal entries, a cheap
    /// estimate of the regularized covariance's condition number.
    pub fn condition_estimate(&self) -> Result<f64> {
        let l = self.factor()?;
        let n = self.n();
        let diag = (0..n).map(|i| l[i * n + i]);
        let (lo, hi) = diag.fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d), hi.max(d)));
        Ok((hi / lo).powi(2))
    }

    /// Writes little-endian float64 mean then row-major covariance to
    /// `path`, with `{n, ridge, source_count}` in the `.json` sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(8 * (self.n() + self.covariance.len()));
        for v in self.mean.iter().chain(&self.covariance) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, bytes)?;
        let sidecar = StatsSidecar { n: self.n(), ridge: self.ridge, source_count: self.source_count };
        let json = serde_json::to_vec_pretty(&sidecar).map_err(|e| Error::Parse(e.to_string()))?;
        fs::write(Self::sidecar_path(path), json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let sidecar: StatsSidecar = serde_json::from_slice(&fs::read(Self::sidecar_path(path))?)
            .map_err(|e| Error::Parse(format!("stats sidecar: {e}")))?;
        let bytes = fs::read(path)?;
        let n = sidecar.n;
        if bytes.len() != 8 * (n + n * n) {
            return Err(Error::Parse(format!("stats file has {} bytes, expected {}", bytes.len(), 8 * (n + n * n))));
        }
        let mut values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mean: Vec<f64> = values.by_ref().take(n).collect();
        let covariance: Vec<f64> = values.collect();
        Self::new(mean, covariance, sidecar.ridge, sidecar.source_count)
    }

    pub fn sidecar_path(path: &Path) -> PathBuf {
        path.with_extension("json")
    }
}

/// `√((v − m̂)ᵀ (C + ridge·I)⁻¹ (v − m̂))` by forward substitution against
/// the cached Cholesky factor.
pub fn mahalanobis(v: &Signal, stats: &CleanStats) -> Result<f64> {
    let n = stats.n();
    check_len(n, v.len())?;
    let l = stats.factor()?;
    let mut w: Vec<f64> = v.as_slice().iter().zip(&stats.mean).map(|(a, b)| a - b).collect();
    for i in 0..n {
        let row = &l[i * n..i * n + i];
        let dot: f64 = row.iter().zip(&w[..i]).map(|(a, b)| a * b).sum();
        w[i] = (w[i] - dot) / l[i * n + i];
    }
    Ok(w.iter().map(|x| x * x).sum::<f64>().sqrt())
}

/// Runs `n_cosamp` CoSaMP iterations on each clean signal and takes the
/// sample mean and covariance of the residuals. `ridge = None` selects
/// `1e-6 · trace(C) / N`, floored at `1e-12`.
pub fn estimate_clean_stats(
    clean_signals: &[Signal],
    op: &SensingOperator,
    k: usize,
    n_cosamp: usize,
    ridge: Option<f64>,
) -> Result<CleanStats> {
    if clean_signals.len() < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 clean signals, got {}", clean_signals.len())));
    }
    let n = op.m();
    let x0 = SpectralVector::zeros(op.n());
    let mut residuals = Vec::with_capacity(clean_signals.len());
    for y in clean_signals {
        let run = Cosamp::new(y, op, k)?.run(&x0, n_cosamp)?;
        residuals.push(run.state.residual);
    }
    residual_stats(&residuals, n, ridge)
}

/// Sample mean and covariance of `residuals`.
pub fn residual_stats(residuals: &[Signal], n: usize, ridge: Option<f64>) -> Result<CleanStats> {
    let count = residuals.len();
    if count < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 residuals, got {count}")));
    }
    let mut mean = vec![0.0; n];
    for r in residuals {
        check_len(n, r.len())?;
        mean.iter_mut().zip(r.as_slice()).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);

    let mut cov = vec![0.0; n * n];
    let mut centered = vec![0.0; n];
    for r in residuals {
        centered.iter_mut().zip(r.as_slice().iter().zip(&mean)).for_each(|(c, (v, m))| *c = v - m);
        for i in 0..n {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            for j in 0..=i {
                cov[i * n + j] += ci * centered[j];
            }
        }
    }
    let denom = (count - 1) as f64;
    for i in 0..n {
        for j in 0..=i {
            let v = cov[i * n + j] / denom;
            cov[i * n + j] = v;
            cov[j * n + i] = v;
        }
    }
    let ridge = match ridge {
        Some(r) => r,
        None => {
            let trace: f64 = (0..n).map(|i| cov[i * n + i]).sum();
            (1e-6 * trace / n as f64).max(1e-12)
        }
    };
    CleanStats::new(mean, cov, ridge, count)
}

/// Norms of one residual, as used by the feedback predicates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub l2: f64,
    pub linf: f64,
    /// Entries with magnitude above `count_threshold`.
    pub count: usize,
    pub mahalanobis: Option<f64>,
}

impl ResidualSummary {
    /// Summarizes `v`; the Mahalanobis distance is computed only when
    /// `stats` is given.
    pub fn compute(
        v: &Signal,
        op: &SensingOperator,
        cfg: &FeedbackConfig,
        stats: Option<&CleanStats>,
    ) -> Result<Self> {
        let (linf, count) = match cfg.residual_domain {
            ResidualDomain::Signal => (v.linf(), v.count_above(cfg.count_threshold)),
            ResidualDomain::Spectral => {
                let spec = op.analyze(v)?;
                (spec.linf(), spec.count_above(cfg.count_threshold))
            }
        };
        let mahalanobis = stats.map(|s| mahalanobis(v, s)).transpose()?;
        Ok(Self { l2: v.l2(), linf, count, mahalanobis })
    }
}

/// Feedback bit for `action` given a residual summary. `theta` is the
/// Mahalanobis threshold in force (per channel).
pub fn feedback_from_summary(action: Action, s: &ResidualSummary, cfg: &FeedbackConfig, theta: f64) -> bool {
    let above_alpha = s.l2 > cfg.alpha;
    let dense_enough = cfg.l0_count_gate.is_none_or(|gate| s.count > gate);
    match action {
        Action::Cosamp => {
            let small = s.l2 < cfg.alpha;
            let md_ok = s.mahalanobis.is_some_and(|md| md < theta);
            let peak_ok = s.linf < cfg.m_low;
            match cfg.a1_precedence {
                A1Precedence::OrFirst => small || (md_ok && peak_ok),
                A1Precedence::AndFirst => (small || md_ok) && peak_ok,
            }
        }
        Action::BasisPursuitL0 => above_alpha && s.count < cfg.tau,
        Action::BasisPursuitL2 => above_alpha && cfg.m_low < s.linf && s.linf < cfg.beta && dense_enough,
        Action::BasisPursuitLinf => above_alpha && s.linf > cfg.beta && dense_enough,
    }
}

/// Feedback bit for `action` from the pixel-domain residual `v`.
pub fn feedback_bit(action: Action, v: &Signal, cfg: &FeedbackConfig, stats: Option<&CleanStats>) -> Result<bool> {
    let stats = if action == Action::Cosamp { stats } else { None };
    let linf = v.linf();
    let summary = ResidualSummary {
        l2: v.l2(),
        linf,
        count: v.count_above(cfg.count_threshold),
        mahalanobis: stats.map(|s| mahalanobis(v, s)).transpose()?,
    };
    Ok(feedback_from_summary(action, &summary, cfg, cfg.theta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Some action's sampling probability exceeded Δ.
    Prob,
    /// Residual l2 norm fell below δ.
    Residual,
    /// Iteration cap T reached.
    TMax,
}

/// Early-stop test on the sampling distribution and the residual norm.
pub fn stop_reason(dist: &ActionDistribution, residual_l2: f64, cfg: &FeedbackConfig) -> Option<StopReason> {
    if residual_l2 < cfg.delta_res {
        Some(StopReason::Residual)
    } else if dist.max() > cfg.delta_prob {
        Some(StopReason::Prob)
    } else {
        None
    }
}

pub fn should_stop(dist: &ActionDistribution, v: &Signal, cfg: &FeedbackConfig) -> bool {
    stop_reason(dist, v.l2(), cfg).is_some()
}
