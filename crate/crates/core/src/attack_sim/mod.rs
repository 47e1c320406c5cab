//! Synthetic clean spectra and norm-bounded spectral perturbations.
//!
//! These generators stand in for gradient-based image attacks: each family
//! draws a perturbation `e` inside its norm ball and the adversarial
//! observation is `y = A(x̂ + e)`.

mod io;

pub use io::{load_signal, write_pgm, write_raw_f64, LoadedSignal, SignalFormat};

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, CadRng};
use crate::transform::{SensingOperator, Signal, SpectralVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackFamily {
    None,
    L0,
    L1,
    L2,
    Linf,
    GradientProxy,
}

impl AttackFamily {
    pub const ALL: [AttackFamily; 6] = [
        AttackFamily::None,
        AttackFamily::L0,
        AttackFamily::L1,
        AttackFamily::L2,
        AttackFamily::Linf,
        AttackFamily::GradientProxy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttackFamily::None => "none",
            AttackFamily::L0 => "l0",
            AttackFamily::L1 => "l1",
            AttackFamily::L2 => "l2",
            AttackFamily::Linf => "linf",
            AttackFamily::GradientProxy => "gradient_proxy",
        }
    }
}

impl std::fmt::Display for AttackFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AttackFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttackFamily::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::UnknownFamily(s.to_string()))
    }
}

fn default_tau() -> usize {
    0
}

/// Attack family plus its budgets. Budgets are in spectral coefficient units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub family: AttackFamily,
    /// l2 budget (l2 family) or l1 budget (l1 family).
    #[serde(default)]
    pub eta: f64,
    /// Per-entry budget for l0 attacks.
    #[serde(default)]
    pub eta_prime: f64,
    /// l∞ budget for l∞ and gradient-proxy attacks.
    #[serde(default)]
    pub eta_dprime: f64,
    #[serde(default = "default_tau")]
    pub tau: usize,
    #[serde(default)]
    pub seed: u64,
    /// Place l0 support in the lowest quarter of the spectrum.
    #[serde(default)]
    pub low_freq_bias: bool,
    /// Clamp the observed signal to [0, 1]. Breaks exact budgets.
    #[serde(default)]
    pub clip: bool,
}

impl AttackSpec {
    pub fn none() -> Self {
        Self {
            family: AttackFamily::None,
            eta: 0.0,
            eta_prime: 0.0,
            eta_dprime: 0.0,
            tau: 0,
            seed: 0,
            low_freq_bias: false,
            clip: false,
        }
    }

    pub fn l0(tau: usize, eta_prime: f64) -> Self {
        Self { family: AttackFamily::L0, tau, eta_prime, ..Self::none() }
    }

    pub fn l1(eta: f64) -> Self {
        Self { family: AttackFamily::L1, eta, ..Self::none() }
    }

    pub fn l2(eta: f64) -> Self {
        Self { family: AttackFamily::L2, eta, ..Self::none() }
    }

    pub fn linf(eta_dprime: f64) -> Self {
        Self { family: AttackFamily::Linf, eta_dprime, ..Self::none() }
    }

    pub fn gradient_proxy(eta_dprime: f64) -> Self {
        Self { family: AttackFamily::GradientProxy, eta_dprime, ..Self::none() }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        for (name, v) in [("eta", self.eta), ("eta_prime", self.eta_prime), ("eta_dprime", self.eta_dprime)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParameter(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.tau > n {
            return Err(Error::InvalidParameter(format!("tau = {} exceeds N = {n}", self.tau)));
        }
        Ok(())
    }

    /// Upper bound on `‖e‖₂` implied by the family's budget for dimension `n`.
    pub fn l2_bound(&self, n: usize) -> f64 {
        match self.family {
            AttackFamily::None => 0.0,
            AttackFamily::L0 => self.tau as f64 * self.eta_prime,
            AttackFamily::L1 | AttackFamily::L2 => self.eta,
            AttackFamily::Linf | AttackFamily::GradientProxy => (n as f64).sqrt() * self.eta_dprime,
        }
    }
}

/// A clean spectrum, its perturbation and the observation they produce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialInstance {
    pub clean_spectral: SpectralVector,
    pub perturbation: SpectralVector,
    pub observed: Signal,
    pub spec: AttackSpec,
}

fn random_sign(rng: &mut CadRng) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

fn check_range(range: (f64, f64)) -> Result<()> {
    let (lo, hi) = range;
    if !(lo.is_finite() && hi.is_finite()) || lo <= 0.0 || lo > hi {
        return Err(Error::InvalidParameter(format!("amplitude range [{lo}, {hi}] must satisfy 0 < lo <= hi")));
    }
    Ok(())
}

fn draw_magnitude(rng: &mut CadRng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Exactly `k`-sparse spectrum with uniformly placed support, magnitudes
/// uniform in `amplitude_range` and random signs.
pub fn make_clean_sparse(n: usize, k: usize, amplitude_range: (f64, f64), seed: u64) -> Result<SpectralVector> {
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!("k = {k} must satisfy 1 <= k <= {n}")));
    }
    check_range(amplitude_range)?;
    let mut rng = rng_from_seed(seed);
    let mut out = vec![0.0; n];
    for i in sample(&mut rng, n, k).into_iter() {
        out[i] = random_sign(&mut rng) * draw_magnitude(&mut rng, amplitude_range);
    }
    Ok(SpectralVector::from_vec_unchecked(out))
}

/// Compressible spectrum: a `k`-sparse head as in [`make_clean_sparse`] plus
/// a tail of `n - k` entries with magnitudes `tail_scale * (j + 1)^(-decay)`
/// in random positions and signs.
pub fn make_compressible(
    n: usize,
    k: usize,
    amplitude_range: (f64, f64),
    tail_scale: f64,
    decay: f64,
    seed: u64,
) -> Result<SpectralVector> {
    if !(tail_scale.is_finite() && tail_scale >= 0.0 && decay.is_finite() && decay >= 0.0) {
        return Err(Error::InvalidParameter("tail_scale and decay must be finite and >= 0".into()));
    }
    let mut out = make_clean_sparse(n, k, amplitude_range, seed)?.into_inner();
    let mut rng = rng_from_seed(seed ^ 0x7a11);
    let mut free: Vec<usize> = (0..n).filter(|&i| out[i] == 0.0).collect();
    // Fisher-Yates so the tail order is random
    for i in (1..free.len()).rev() {
        let j = rng.random_range(0..=i);
        free.swap(i, j);
    }
    for (rank, idx) in free.into_iter().enumerate() {
        out[idx] = random_sign(&mut rng) * tail_scale * ((rank + 1) as f64).powf(-decay);
    }
    Ok(SpectralVector::from_vec_unchecked(out))
}

fn draw_perturbation(n: usize, spec: &AttackSpec, rng: &mut CadRng) -> Vec<f64> {
    let mut e = vec![0.0; n];
    match spec.family {
        AttackFamily::None => {}
        AttackFamily::L0 => {
            let pool = if spec.low_freq_bias { (n / 4).max(spec.tau).min(n) } else { n };
            for i in sample(rng, pool, spec.tau).into_iter() {
                e[i] = random_sign(rng) * spec.eta_prime;
            }
        }
        AttackFamily::L1 => {
            if spec.eta > 0.0 {
                for v in e.iter_mut() {
                    let m: f64 = Exp1.sample(rng);
                    *v = random_sign(rng) * m;
                }
                let norm: f64 = e.iter().map(|v| v.abs()).sum();
                e.iter_mut().for_each(|v| *v *= spec.eta / norm);
            }
        }
        AttackFamily::L2 => {
            if spec.eta > 0.0 {
                for v in e.iter_mut() {
                    *v = StandardNormal.sample(rng);
                }
                let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
                e.iter_mut().for_each(|v| *v *= spec.eta / norm);
            }
        }
        AttackFamily::Linf => {
            if spec.eta_dprime > 0.0 {
                let b = spec.eta_dprime;
                for v in e.iter_mut() {
                    *v = rng.random_range(-b..=b);
                }
                let at_bound = rng.random_range(0..n);
                e[at_bound] = random_sign(rng) * b;
            }
        }
        AttackFamily::GradientProxy => {
            for v in e.iter_mut() {
                *v = random_sign(rng) * spec.eta_dprime;
            }
        }
    }
    e
}

/// Draws `e` for `spec` and composes `y = A(clean + e)`.
pub fn perturb(clean: &SpectralVector, spec: &AttackSpec, op: &SensingOperator) -> Result<AdversarialInstance> {
    let n = clean.len();
    crate::error::check_len(op.n(), n)?;
    spec.validate(n)?;
    let mut rng = rng_from_seed(spec.seed);
    let perturbation = SpectralVector::from_vec_unchecked(draw_perturbation(n, spec, &mut rng));
    let mut observed = op.synthesize(&clean.add(&perturbation)?)?;
    let perturbation = if spec.clip {
        observed.as_mut_slice().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        // effective perturbation after clamping
        op.analyze(&observed)?.sub(clean)?
    } else {
        perturbation
    };
    Ok(AdversarialInstance { clean_spectral: clean.clone(), perturbation, observed, spec: spec.clone() })
}
