//! Compressive-sensing adaptive defence.
//!
//! A possibly adversarial signal `y = A(x̂ + e)` is reconstructed as a
//! k-sparse spectral approximation. Four recovery actions (CoSaMP and three
//! constrained l1 minimizations tuned to l0, l1/l2 and l∞ perturbations) are
//! tried under an exponential-weight bandit whose rewards come from residual
//! feedback; the action with the highest cumulative score identifies the
//! attack family and produces the final estimate.
//!
//! ```
//! use cad_core::prelude::*;
//!
//! let op = SensingOperator::dct(64).unwrap();
//! let clean = make_clean_sparse(64, 4, (1.0, 2.0), 7).unwrap();
//! let y = op.synthesize(&clean).unwrap();
//! let cfg = CadConfig::new(4);
//! let out = cad_run(&y, &cfg, &[], &op).unwrap();
//! assert!(out.channels[0].estimate.sub(&clean).unwrap().l2() < 1e-8);
//! ```

pub mod attack_sim;
pub mod bandit;
pub mod cad;
pub mod error;
pub mod feedback;
pub mod recovery;
pub mod rng;
pub mod transform;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::attack_sim::{make_clean_sparse, make_compressible, perturb, AdversarialInstance, AttackFamily, AttackSpec};
    pub use crate::bandit::{probabilities, sample_action, ActionDistribution, BanditParams, BanditState};
    pub use crate::cad::{cad_run, run_channel, CadConfig, CadOutcome, CadResult, FinalMethod};
    pub use crate::feedback::{estimate_clean_stats, CleanStats, FeedbackConfig, ResidualDomain, StopReason};
    pub use crate::recovery::{action_radius, check_bound, cosamp_run, l1_min, Action, L1Problem};
    pub use crate::transform::{best_k_term_error, top_k, SensingOperator, Signal, SpectralVector};
}
