//! The four recovery actions: CoSaMP and three constrained l1 minimizations
//! that differ only in the radius of the data-fidelity ball.

mod cosamp;
mod l1;

pub use cosamp::{cosamp_run, cosamp_step, Cosamp, CosampRun, CosampState};
pub use l1::{
    l1_min, l1_min_general, l1_min_orthonormal, L1Problem, L1Solution, DEFAULT_MAX_ITERS, DEFAULT_TOLERANCE,
};

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};
use crate::feedback::FeedbackConfig;
use crate::transform::{best_k_term_error, SpectralVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    /// a1: CoSaMP.
    #[serde(rename = "a1")]
    Cosamp,
    /// a2: basis pursuit with radius `τ η′` (l0 attacks).
    #[serde(rename = "a2")]
    BasisPursuitL0,
    /// a3: basis pursuit with radius `η` (l1 / l2 attacks).
    #[serde(rename = "a3")]
    BasisPursuitL2,
    /// a4: basis pursuit with radius `√N η″` (l∞ attacks).
    #[serde(rename = "a4")]
    BasisPursuitLinf,
}

impl Action {
    pub const ALL: [Action; 4] =
        [Action::Cosamp, Action::BasisPursuitL0, Action::BasisPursuitL2, Action::BasisPursuitLinf];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn label(self) -> &'static str {
        ["a1", "a2", "a3", "a4"][self.index()]
    }
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Constraint radius for the l1 actions; `None` for CoSaMP.
pub fn action_radius(action: Action, cfg: &FeedbackConfig, n: usize) -> Option<f64> {
    match action {
        Action::Cosamp => None,
        Action::BasisPursuitL0 => Some(cfg.tau as f64 * cfg.eta_prime),
        Action::BasisPursuitL2 => Some(cfg.eta),
        Action::BasisPursuitLinf => Some((n as f64).sqrt() * cfg.eta_dprime),
    }
}

/// Recovery error against a clean spectrum, alongside the quantities that
/// appear in the error bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub empirical_l2_error: f64,
    pub empirical_l1_error: f64,
    pub budget: f64,
    pub sigma_k_l1: f64,
    /// `empirical_l2_error / budget`, absent when the budget is zero.
    pub ratio: Option<f64>,
}

pub fn check_bound(clean: &SpectralVector, recovered: &SpectralVector, k: usize, budget: f64) -> Result<BoundReport> {
    check_len(clean.len(), recovered.len())?;
    let diff = clean.sub(recovered)?;
    let l2 = diff.l2();
    Ok(BoundReport {
        empirical_l2_error: l2,
        empirical_l1_error: diff.l1(),
        budget,
        sigma_k_l1: best_k_term_error(clean, k),
        ratio: (budget > 0.0).then(|| l2 / budget),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radii_for_mnist_parameters() {
        let cfg = FeedbackConfig::mnist();
        assert!((action_radius(Action::BasisPursuitL0, &cfg, 784).unwrap() - 2.25).abs() < 1e-12);
        assert!((action_radius(Action::BasisPursuitL2, &cfg, 784).unwrap() - 0.3).abs() < 1e-12);
        assert!((action_radius(Action::BasisPursuitLinf, &cfg, 784).unwrap() - 1.12).abs() < 1e-12);
        assert_eq!(action_radius(Action::Cosamp, &cfg, 784), None);
    }

    #[test]
    fn bound_report_exact_recovery() {
        let c = SpectralVector::new(vec![1.0, 0.0, -2.0]).unwrap();
        let r = check_bound(&c, &c, 2, 0.5).unwrap();
        assert_eq!(r.empirical_l2_error, 0.0);
        assert_eq!(r.empirical_l1_error, 0.0);
        assert_eq!(r.sigma_k_l1, 0.0);
        assert_eq!(r.ratio, Some(0.0));
        assert_eq!(check_bound(&c, &c, 2, 0.0).unwrap().ratio, None);
    }

    #[test]
    fn action_labels_roundtrip() {
        for a in Action::ALL {
            assert_eq!(Action::from_index(a.index()), Some(a));
            let json = serde_json::to_string(&a).unwrap();
            assert_eq!(json, format!("\"{}\"", a.label()));
        }
        assert_eq!(Action::from_index(4), None);
    }
}
