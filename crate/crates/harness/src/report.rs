use std::fs;
use std::path::Path;

use cad_core::prelude::*;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

/// Action that counts as a correct identification for `family`. The
/// gradient proxy has none.
pub fn designated_action(family: AttackFamily) -> Option<Action> {
    match family {
        AttackFamily::None => Some(Action::Cosamp),
        AttackFamily::L0 => Some(Action::BasisPursuitL0),
        AttackFamily::L1 | AttackFamily::L2 => Some(Action::BasisPursuitL2),
        AttackFamily::Linf => Some(Action::BasisPursuitLinf),
        AttackFamily::GradientProxy => None,
    }
}

/// One (instance, channel) result. Fields describing the outcome are empty
/// when the run failed; `error` then holds the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRow {
    pub instance: usize,
    pub attack_index: usize,
    pub sample: usize,
    pub repetition: usize,
    pub channel: usize,
    pub family: AttackFamily,
    pub final_method: Option<FinalMethod>,
    pub designated_action: Option<Action>,
    pub identified: Option<bool>,
    /// `‖estimate − clean‖₂` in spectral units (equal in pixel units).
    pub reconstruction_error: Option<f64>,
    pub relative_error: Option<f64>,
    pub residual_l2: Option<f64>,
    pub residual_linf: Option<f64>,
    pub iterations: Option<usize>,
    pub stop_reason: Option<StopReason>,
    /// l2 budget of the attack family.
    pub bound_budget: f64,
    /// `reconstruction_error / bound_budget`, empty for a zero budget.
    pub bound_ratio: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub family: AttackFamily,
    pub rows: usize,
    pub failures: usize,
    pub identified: Option<usize>,
    pub identification_rate: Option<f64>,
    pub method_a1: usize,
    pub method_a2: usize,
    pub method_a3: usize,
    pub method_a4: usize,
    pub method_fallback: usize,
    pub stop_residual: usize,
    pub stop_prob: usize,
    pub stop_t_max: usize,
    pub mean_error: Option<f64>,
    pub median_error: Option<f64>,
    pub mean_bound_ratio: Option<f64>,
    pub median_bound_ratio: Option<f64>,
    pub mean_iterations: Option<f64>,
}

/// Wall time of one `cad_run` call (all channels), excluding IO.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub instance: usize,
    pub channels: usize,
    pub iterations: usize,
    pub wall_seconds: f64,
}

/// Configuration echo at the top of every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub m_low: f64,
    pub tau: usize,
    pub theta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_per_channel: Option<Vec<f64>>,
    pub gamma: f64,
    pub sigma: f64,
    pub lambda: f64,
    pub n: usize,
    pub channels: usize,
    pub seed: u64,
    pub instances: usize,
    pub repetitions: usize,
    pub mahalanobis: bool,
    pub cad: CadConfig,
    pub attacks: Vec<AttackSpec>,
}

impl RunHeader {
    pub fn new(cfg: &ExperimentConfig, n: usize, instances: usize, mahalanobis: bool) -> Self {
        let fb = &cfg.cad.feedback;
        let bp = &cfg.cad.bandit;
        Self {
            k: cfg.cad.k,
            alpha: fb.alpha,
            beta: fb.beta,
            m_low: fb.m_low,
            tau: fb.tau,
            theta: fb.theta,
            theta_per_channel: fb.theta_per_channel.clone(),
            gamma: bp.gamma,
            sigma: bp.sigma,
            lambda: bp.lambda,
            n,
            channels: cfg.cad.channels,
            seed: cfg.seed,
            instances,
            repetitions: cfg.repetitions,
            mahalanobis,
            cad: cfg.cad.clone(),
            attacks: cfg.attacks.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub header: RunHeader,
    pub rows: Vec<InstanceRow>,
    pub aggregates: Vec<AggregateRow>,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[mid] } else { 0.5 * (v[mid - 1] + v[mid]) })
}

/// Per-family aggregates, families in canonical order.
pub fn aggregate(rows: &[InstanceRow]) -> Vec<AggregateRow> {
    let mut out = Vec::new();
    for family in AttackFamily::ALL {
        let fam: Vec<&InstanceRow> = rows.iter().filter(|r| r.family == family).collect();
        if fam.is_empty() {
            continue;
        }
        let count_method = |m: FinalMethod| fam.iter().filter(|r| r.final_method == Some(m)).count();
        let count_stop = |s: StopReason| fam.iter().filter(|r| r.stop_reason == Some(s)).count();
        let errors: Vec<f64> = fam.iter().filter_map(|r| r.reconstruction_error).collect();
        let ratios: Vec<f64> = fam.iter().filter_map(|r| r.bound_ratio).collect();
        let iterations: Vec<f64> = fam.iter().filter_map(|r| r.iterations.map(|i| i as f64)).collect();
        let identified = designated_action(family).map(|_| fam.iter().filter(|r| r.identified == Some(true)).count());
        out.push(AggregateRow {
            family,
            rows: fam.len(),
            failures: fam.iter().filter(|r| r.error.is_some()).count(),
            identified,
            identification_rate: identified.map(|c| c as f64 / fam.len() as f64),
            method_a1: count_method(FinalMethod::Selected(Action::Cosamp)),
            method_a2: count_method(FinalMethod::Selected(Action::BasisPursuitL0)),
            method_a3: count_method(FinalMethod::Selected(Action::BasisPursuitL2)),
            method_a4: count_method(FinalMethod::Selected(Action::BasisPursuitLinf)),
            method_fallback: count_method(FinalMethod::CosampFallback),
            stop_residual: count_stop(StopReason::Residual),
            stop_prob: count_stop(StopReason::Prob),
            stop_t_max: count_stop(StopReason::TMax),
            mean_error: mean(&errors),
            median_error: median(&errors),
            mean_bound_ratio: mean(&ratios),
            median_bound_ratio: median(&ratios),
            mean_iterations: mean(&iterations),
        });
    }
    out
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::io(path.display(), e))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| HarnessError::io(path.display(), e))?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::io(path.display(), e))?;
    r.deserialize().map(|row| row.map_err(HarnessError::from)).collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::io(path.display(), e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| HarnessError::io(path.display(), e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path.display(), e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}
