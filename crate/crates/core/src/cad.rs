//! The adaptive defence loop: sample an action, run it with a growing
//! iteration budget, prune to k terms, score the residual, reward, update,
//! and stop early on a confident distribution or a small residual. The
//! highest-scoring action (CoSaMP when no score is positive) produces the
//! final estimate from a fresh run.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bandit::{probabilities, reward, sample_action, update, BanditParams, BanditState, N_ACTIONS};
use crate::error::{check_len, Error, Result};
use crate::feedback::{feedback_from_summary, residual, stop_reason, CleanStats, FeedbackConfig, ResidualSummary, StopReason};
use crate::recovery::{action_radius, l1_min, Action, Cosamp, L1Problem, DEFAULT_MAX_ITERS, DEFAULT_TOLERANCE};
use crate::rng::{derive_seed, rng_from_seed};
use crate::transform::{top_k, SensingOperator, Signal, SpectralVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum X0Mode {
    #[default]
    Zero,
    /// Entries uniform in ±0.01, pruned to k terms.
    Random,
}

/// Inner iterations on the s-th selection of an action: `base + increment·(s − 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InnerSchedule {
    pub base: usize,
    pub increment: usize,
}

impl Default for InnerSchedule {
    fn default() -> Self {
        Self { base: 3, increment: 2 }
    }
}

fn default_final_iters() -> usize {
    20
}

fn default_l1_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}

fn default_l1_max_iters() -> usize {
    DEFAULT_MAX_ITERS
}

fn default_channels() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CadConfig {
    pub k: usize,
    #[serde(default)]
    pub feedback: FeedbackConfig,
    #[serde(default)]
    pub bandit: BanditParams,
    #[serde(default)]
    pub schedule: InnerSchedule,
    #[serde(default)]
    pub x0_mode: X0Mode,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default)]
    pub seed: u64,
    /// CoSaMP iterations for the final estimate.
    #[serde(default = "default_final_iters")]
    pub final_cosamp_iters: usize,
    #[serde(default = "default_l1_tolerance")]
    pub l1_tolerance: f64,
    /// Iterative l1 solver budget on the first selection.
    #[serde(default = "default_l1_max_iters")]
    pub l1_max_iters: usize,
}

impl CadConfig {
    /// Grayscale defaults with sparsity `k`.
    pub fn new(k: usize) -> Self {
        Self {
            k,
            feedback: FeedbackConfig::mnist(),
            bandit: BanditParams::mnist(),
            schedule: InnerSchedule::default(),
            x0_mode: X0Mode::Zero,
            channels: 1,
            seed: 0,
            final_cosamp_iters: default_final_iters(),
            l1_tolerance: DEFAULT_TOLERANCE,
            l1_max_iters: DEFAULT_MAX_ITERS,
        }
    }

    pub fn mnist() -> Self {
        Self::new(80)
    }

    pub fn cifar10() -> Self {
        Self { feedback: FeedbackConfig::cifar10(), bandit: BanditParams::cifar10(), channels: 3, ..Self::new(300) }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Checks the configuration against a per-channel dimension `n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.k == 0 || self.k > n {
            return Err(Error::InvalidParameter(format!("k = {} must satisfy 1 <= k <= {n}", self.k)));
        }
        if self.feedback.tau > n {
            return Err(Error::InvalidParameter(format!("tau = {} exceeds N = {n}", self.feedback.tau)));
        }
        if self.schedule.base == 0 {
            return Err(Error::InvalidParameter("schedule.base must be >= 1".into()));
        }
        if !matches!(self.channels, 1 | 3) {
            return Err(Error::InvalidParameter(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        if self.final_cosamp_iters == 0 || self.l1_max_iters == 0 || self.l1_tolerance.is_nan() || self.l1_tolerance <= 0.0 {
            return Err(Error::InvalidParameter("final_cosamp_iters, l1_max_iters and l1_tolerance must be positive".into()));
        }
        self.feedback.validate()?;
        self.bandit.validate()
    }
}

/// Inner-iteration budget for the `times_selected`-th selection of `action`.
/// CoSaMP runs this many iterations; the iterative l1 solver scales its
/// iteration cap by `budget / base`.
pub fn inner_iterations(_action: Action, times_selected: usize, cfg: &CadConfig) -> usize {
    let s = times_selected.max(1);
    cfg.schedule.base + cfg.schedule.increment * (s - 1)
}

/// Recovery method chosen at the end of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FinalMethod {
    Selected(Action),
    /// No action earned a positive score.
    CosampFallback,
}

impl FinalMethod {
    /// Action that produces the final estimate.
    pub fn recovery_action(self) -> Action {
        match self {
            FinalMethod::Selected(a) => a,
            FinalMethod::CosampFallback => Action::Cosamp,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            FinalMethod::Selected(a) => a.label(),
            FinalMethod::CosampFallback => "cosamp_fallback",
        }
    }
}

impl std::fmt::Display for FinalMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl From<FinalMethod> for String {
    fn from(m: FinalMethod) -> String {
        m.label().to_string()
    }
}

impl TryFrom<String> for FinalMethod {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl std::str::FromStr for FinalMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "cosamp_fallback" {
            return Ok(FinalMethod::CosampFallback);
        }
        Action::ALL
            .into_iter()
            .find(|a| a.label() == s)
            .map(FinalMethod::Selected)
            .ok_or_else(|| Error::Parse(format!("unknown recovery method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: usize,
    pub action: Action,
    pub inner_iters: usize,
    pub residual_l0: usize,
    pub residual_l2: f64,
    pub residual_linf: f64,
    pub mahalanobis: Option<f64>,
    pub feedback: bool,
    pub reward: f64,
    pub reward_clamped: bool,
    /// Sampling distribution at this iteration.
    pub probs: [f64; N_ACTIONS],
    /// Cumulative scores after this iteration's update.
    pub scores: [f64; N_ACTIONS],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CadTrace {
    pub records: Vec<IterationRecord>,
}

impl CadTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CadOutcome {
    pub channel: usize,
    pub final_method: FinalMethod,
    pub final_scores: [f64; N_ACTIONS],
    pub estimate: SpectralVector,
    pub reconstruction: Signal,
    pub trace: CadTrace,
    pub stopped_at: usize,
    pub stop_reason: StopReason,
}

/// Per-channel outcomes plus the channel-major reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CadResult {
    pub channels: Vec<CadOutcome>,
    /// Most frequent per-channel method; ties go to the earliest channel.
    pub majority_method: FinalMethod,
    pub reconstruction: Signal,
}

/// A failed run with the trace collected up to the failure.
#[derive(Debug, Clone, PartialEq)]
pub struct CadFailure {
    pub channel: usize,
    pub error: Error,
    pub trace: CadTrace,
}

impl std::fmt::Display for CadFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "channel {} after {} iterations: {}", self.channel, self.trace.len(), self.error)
    }
}

impl std::error::Error for CadFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

fn initial_estimate(cfg: &CadConfig, n: usize, channel: usize) -> SpectralVector {
    match cfg.x0_mode {
        X0Mode::Zero => SpectralVector::zeros(n),
        X0Mode::Random => {
            let mut rng = rng_from_seed(derive_seed(cfg.seed, 0x5eed_0000 + channel as u64));
            let values = (0..n).map(|_| rng.random_range(-0.01..=0.01)).collect();
            top_k(&SpectralVector::from_vec_unchecked(values), cfg.k)
        }
    }
}

struct ActionRunner<'a> {
    y: &'a Signal,
    op: &'a SensingOperator,
    cfg: &'a CadConfig,
    cosamp: Cosamp<'a>,
    x0: SpectralVector,
    warm: [Option<SpectralVector>; N_ACTIONS],
}

impl<'a> ActionRunner<'a> {
    fn new(y: &'a Signal, op: &'a SensingOperator, cfg: &'a CadConfig, x0: SpectralVector) -> Result<Self> {
        Ok(Self { y, op, cfg, cosamp: Cosamp::new(y, op, cfg.k)?, x0, warm: Default::default() })
    }

    /// Raw (unpruned) output of `action` with `budget` inner iterations.
    fn run(&mut self, action: Action, budget: usize, warm_start: bool) -> Result<SpectralVector> {
        match action {
            Action::Cosamp => Ok(self.cosamp.run(&self.x0, budget)?.state.estimate),
            _ => {
                let radius = action_radius(action, &self.cfg.feedback, self.op.n()).expect("l1 action");
                let max_iters = self.cfg.l1_max_iters.saturating_mul(budget) / self.cfg.schedule.base;
                let warm = if warm_start { self.warm[action.index()].as_ref() } else { None };
                let problem = L1Problem {
                    observed: self.y,
                    op: self.op,
                    radius,
                    tolerance: self.cfg.l1_tolerance,
                    max_iters: max_iters.max(1),
                    warm_start: warm,
                };
                let solution = l1_min(&problem)?;
                if warm_start {
                    self.warm[action.index()] = Some(solution.estimate.clone());
                }
                Ok(solution.estimate)
            }
        }
    }
}

/// Runs the defence on one channel.
pub fn run_channel(
    y: &Signal,
    cfg: &CadConfig,
    stats: Option<&CleanStats>,
    op: &SensingOperator,
    channel: usize,
) -> std::result::Result<CadOutcome, CadFailure> {
    let mut trace = CadTrace::default();
    let fail = |error: Error, trace: CadTrace| CadFailure { channel, error, trace };

    let setup = || -> Result<ActionRunner<'_>> {
        check_len(op.m(), y.len())?;
        cfg.validate(op.n())?;
        if let Some(s) = stats {
            check_len(op.m(), s.n())?;
        }
        ActionRunner::new(y, op, cfg, initial_estimate(cfg, op.n(), channel))
    };
    let mut runner = match setup() {
        Ok(r) => r,
        Err(e) => return Err(fail(e, trace)),
    };

    let fb = &cfg.feedback;
    let theta = fb.theta_for(channel);
    let mut rng = rng_from_seed(derive_seed(cfg.seed, channel as u64));
    let mut state = BanditState::new(cfg.bandit).map_err(|e| fail(e, CadTrace::default()))?;
    let mut times_selected = [0usize; N_ACTIONS];
    let mut stop = StopReason::TMax;

    for t in 1..=fb.t_max {
        let dist = probabilities(&state);
        let action = sample_action(&dist, &mut rng);
        times_selected[action.index()] += 1;
        let budget = inner_iterations(action, times_selected[action.index()], cfg);

        let step = (|| -> Result<ResidualSummary> {
            let raw = runner.run(action, budget, true)?;
            let estimate = top_k(&raw, cfg.k);
            let v = residual(y, &estimate, op)?;
            let md_stats = if action == Action::Cosamp { stats } else { None };
            ResidualSummary::compute(&v, op, fb, md_stats)
        })();
        let summary = match step {
            Ok(s) => s,
            Err(e) => return Err(fail(e, trace)),
        };

        let feedback = feedback_from_summary(action, &summary, fb, theta);
        let r = reward(feedback, dist.prob(action), cfg.bandit.lambda);
        state = update(&state, action, r.value);
        trace.records.push(IterationRecord {
            t,
            action,
            inner_iters: budget,
            residual_l0: summary.count,
            residual_l2: summary.l2,
            residual_linf: summary.linf,
            mahalanobis: summary.mahalanobis,
            feedback,
            reward: r.value,
            reward_clamped: r.clamped,
            probs: dist.probs,
            scores: state.scores,
        });
        if let Some(reason) = stop_reason(&dist, summary.l2, fb) {
            stop = reason;
            break;
        }
    }

    let final_method =
        if state.max_score() <= 0.0 { FinalMethod::CosampFallback } else { FinalMethod::Selected(state.argmax()) };
    let finish = (|| -> Result<(SpectralVector, Signal)> {
        let action = final_method.recovery_action();
        let budget = match action {
            Action::Cosamp => cfg.final_cosamp_iters,
            _ => cfg.schedule.base,
        };
        let estimate = top_k(&runner.run(action, budget, false)?, cfg.k);
        let reconstruction = op.synthesize(&estimate)?;
        Ok((estimate, reconstruction))
    })();
    let (estimate, reconstruction) = match finish {
        Ok(v) => v,
        Err(e) => return Err(fail(e, trace)),
    };

    Ok(CadOutcome {
        channel,
        final_method,
        final_scores: state.scores,
        estimate,
        reconstruction,
        stopped_at: trace.len(),
        trace,
        stop_reason: stop,
    })
}

/// Runs the defence on every channel of `y` (channel-major, `cfg.channels`
/// blocks of `op.m()` samples). `stats` is empty (no Mahalanobis branch) or
/// holds one entry per channel.
pub fn cad_run(
    y: &Signal,
    cfg: &CadConfig,
    stats: &[CleanStats],
    op: &SensingOperator,
) -> std::result::Result<CadResult, CadFailure> {
    let m = op.m();
    let pre = |error: Error| CadFailure { channel: 0, error, trace: CadTrace::default() };
    check_len(m * cfg.channels, y.len()).map_err(pre)?;
    if !stats.is_empty() && stats.len() != cfg.channels {
        return Err(pre(Error::InvalidParameter(format!(
            "expected {} clean-statistics sets, got {}",
            cfg.channels,
            stats.len()
        ))));
    }

    let mut outcomes = Vec::with_capacity(cfg.channels);
    let mut reconstruction = Vec::with_capacity(y.len());
    for c in 0..cfg.channels {
        let yc = Signal::from_vec_unchecked(y.as_slice()[c * m..(c + 1) * m].to_vec());
        let out = run_channel(&yc, cfg, stats.get(c), op, c)?;
        reconstruction.extend_from_slice(out.reconstruction.as_slice());
        outcomes.push(out);
    }
    let majority_method = majority(&outcomes);
    Ok(CadResult { channels: outcomes, majority_method, reconstruction: Signal::from_vec_unchecked(reconstruction) })
}

fn majority(outcomes: &[CadOutcome]) -> FinalMethod {
    let mut best = outcomes[0].final_method;
    let mut best_count = 0;
    for o in outcomes {
        let count = outcomes.iter().filter(|p| p.final_method == o.final_method).count();
        if count > best_count {
            best = o.final_method;
            best_count = count;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack_sim::make_clean_sparse;

    #[test]
    fn schedule_examples() {
        let cfg = CadConfig::new(4);
        assert_eq!(inner_iterations(Action::Cosamp, 1, &cfg), 3);
        assert_eq!(inner_iterations(Action::Cosamp, 3, &cfg), 7);
        let flat = CadConfig { schedule: InnerSchedule { base: 3, increment: 0 }, ..CadConfig::new(4) };
        assert_eq!(inner_iterations(Action::BasisPursuitL2, 9, &flat), 3);
    }

    #[test]
    fn final_method_strings() {
        for m in [FinalMethod::CosampFallback, FinalMethod::Selected(Action::BasisPursuitLinf)] {
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(serde_json::from_str::<FinalMethod>(&json).unwrap(), m);
        }
        assert_eq!(FinalMethod::CosampFallback.recovery_action(), Action::Cosamp);
        assert!("a9".parse::<FinalMethod>().is_err());
    }

    #[test]
    fn clean_input_stops_on_residual() {
        let op = SensingOperator::dct(64).unwrap();
        let x = make_clean_sparse(64, 4, (1.0, 2.0), 3).unwrap();
        let y = op.synthesize(&x).unwrap();
        let out = run_channel(&y, &CadConfig::new(4).with_seed(5), None, &op, 0).unwrap();
        assert_eq!(out.stop_reason, StopReason::Residual);
        assert!(out.estimate.sub(&x).unwrap().l2() < 1e-8);
        assert_eq!(out.trace.len(), out.stopped_at);
    }

    #[test]
    fn dimension_errors_carry_empty_trace() {
        let op = SensingOperator::dct(16).unwrap();
        let err = run_channel(&Signal::zeros(8), &CadConfig::new(2), None, &op, 0).unwrap_err();
        assert!(matches!(err.error, Error::DimensionMismatch { .. }));
        assert!(err.trace.is_empty());
        let err = cad_run(&Signal::zeros(16), &CadConfig { channels: 3, ..CadConfig::new(2) }, &[], &op).unwrap_err();
        assert!(matches!(err.error, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn config_validation() {
        assert!(CadConfig::new(0).validate(16).is_err());
        assert!(CadConfig { channels: 2, ..CadConfig::new(2) }.validate(16).is_err());
        assert!(CadConfig { schedule: InnerSchedule { base: 0, increment: 1 }, ..CadConfig::new(2) }
            .validate(16)
            .is_err());
        assert!(CadConfig::mnist().validate(784).is_ok());
        assert!(CadConfig::cifar10().validate(1024).is_ok());
    }

    #[test]
    fn random_init_is_sparse_and_small() {
        let cfg = CadConfig { x0_mode: X0Mode::Random, ..CadConfig::new(5) };
        let x0 = initial_estimate(&cfg, 64, 0);
        assert_eq!(x0.nnz(), 5);
        assert!(x0.linf() <= 0.01);
    }
}
