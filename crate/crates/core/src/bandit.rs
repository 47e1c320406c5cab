//! Exponential-weight selection over the four recovery actions.
//!
//! `p_i = (1 − γ) softmax(σ S)_i + γ/4`, rewards `λ / p_i` on positive
//! feedback and `−1 / (1 − p_i)` on negative feedback for the chosen action.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recovery::Action;

pub const N_ACTIONS: usize = 4;
/// Floor on `1 − p` (and `p`) inside the reward denominators.
pub const REWARD_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BanditParams {
    /// Exploration rate γ ∈ (0, 1).
    pub gamma: f64,
    /// Temperature σ > 0.
    pub sigma: f64,
    /// Reward scale λ > 0.
    pub lambda: f64,
}

impl BanditParams {
    pub fn mnist() -> Self {
        Self { gamma: 0.07, sigma: 1.01, lambda: 1.25 }
    }

    pub fn cifar10() -> Self {
        Self { gamma: 0.45, sigma: 1.0, lambda: 5.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidParameter(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be > 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

impl Default for BanditParams {
    fn default() -> Self {
        Self::mnist()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditState {
    /// Cumulative scores `S_a(t − 1)`.
    pub scores: [f64; N_ACTIONS],
    pub params: BanditParams,
    pub t: usize,
}

impl BanditState {
    pub fn new(params: BanditParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { scores: [0.0; N_ACTIONS], params, t: 0 })
    }

    pub fn with_scores(params: BanditParams, scores: [f64; N_ACTIONS]) -> Result<Self> {
        params.validate()?;
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { scores, params, t: 0 })
    }

    /// Lowest-index action with the largest score.
    pub fn argmax(&self) -> Action {
        let mut best = 0;
        for i in 1..N_ACTIONS {
            if self.scores[i] > self.scores[best] {
                best = i;
            }
        }
        Action::ALL[best]
    }

    pub fn max_score(&self) -> f64 {
        self.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution {
    pub probs: [f64; N_ACTIONS],
}

impl ActionDistribution {
    pub fn uniform() -> Self {
        Self { probs: [1.0 / N_ACTIONS as f64; N_ACTIONS] }
    }

    pub fn new(probs: [f64; N_ACTIONS]) -> Result<Self> {
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidParameter(format!("invalid probabilities {probs:?}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("probabilities sum to {total}")));
        }
        Ok(Self { probs })
    }

    pub fn prob(&self, action: Action) -> f64 {
        self.probs[action.index()]
    }

    pub fn max(&self) -> f64 {
        self.probs.iter().copied().fold(0.0, f64::max)
    }
}

/// Exponential weighting of the cumulative scores, mixed with the uniform
/// distribution. The softmax is evaluated with the maximum score subtracted.
pub fn probabilities(state: &BanditState) -> ActionDistribution {
    let BanditParams { gamma, sigma, .. } = state.params;
    let top = state.max_score();
    let weights = state.scores.map(|s| (sigma * (s - top)).exp());
    let total: f64 = weights.iter().sum();
    let probs = weights.map(|w| (1.0 - gamma) * w / total + gamma / N_ACTIONS as f64);
    ActionDistribution { probs }
}

/// Inverse-CDF draw from `dist`.
pub fn sample_action<R: Rng + ?Sized>(dist: &ActionDistribution, rng: &mut R) -> Action {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, &p) in dist.probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
            cum += p;
            if u < cum {
                return Action::ALL[i];
            }
        }
    }
    // rounding left u above the final cumulative sum
    Action::ALL[last_positive]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reward {
    pub value: f64,
    /// A denominator hit [`REWARD_CLAMP`].
    pub clamped: bool,
}

/// Reward for the chosen action: `λ / p` when `feedback`, `−1 / (1 − p)`
/// otherwise.
pub fn reward(feedback: bool, p_chosen: f64, lambda: f64) -> Reward {
    if feedback {
        let clamped = p_chosen < REWARD_CLAMP;
        Reward { value: lambda / p_chosen.max(REWARD_CLAMP), clamped }
    } else {
        let gap = 1.0 - p_chosen;
        let clamped = gap < REWARD_CLAMP;
        Reward { value: -1.0 / gap.max(REWARD_CLAMP), clamped }
    }
}

/// Per-action reward vector for one round: zero for every action but `chosen`.
pub fn round_rewards(chosen: Action, feedback: bool, dist: &ActionDistribution, lambda: f64) -> ([f64; N_ACTIONS], bool) {
    let r = reward(feedback, dist.prob(chosen), lambda);
    let mut out = [0.0; N_ACTIONS];
    out[chosen.index()] = r.value;
    (out, r.clamped)
}

/// Adds `r` to the chosen action's score and advances `t`.
pub fn update(state: &BanditState, chosen: Action, r: f64) -> BanditState {
    let mut next = state.clone();
    next.scores[chosen.index()] += r;
    next.t += 1;
    next
}
