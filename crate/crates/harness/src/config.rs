use std::fs;
use std::path::{Path, PathBuf};

use cad_core::attack_sim::AttackSpec;
use cad_core::cad::CadConfig;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Compressible tail added to synthetic clean spectra.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailSpec {
    pub scale: f64,
    pub decay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorkload {
    /// Per-channel dimension N.
    pub n: usize,
    /// Nonzeros in each clean spectrum.
    pub sparsity: usize,
    pub amplitude: (f64, f64),
    /// Clean samples; every attack is applied to every sample.
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail: Option<TailSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Workload {
    Synthetic(SyntheticWorkload),
    /// Clean images matched by a glob (PGM, PPM or raw float64).
    Files { pattern: String },
    /// Instances written by `gen`, replayed through their manifest.
    Instances { manifest: PathBuf },
}

fn default_clean_samples() -> usize {
    20
}

fn default_cosamp_iters() -> usize {
    10
}

/// Clean-residual statistics: how `stats` estimates them and where `run`
/// finds them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsConfig {
    /// Synthetic clean signals drawn for estimation.
    #[serde(default = "default_clean_samples")]
    pub clean_samples: usize,
    #[serde(default = "default_cosamp_iters")]
    pub cosamp_iters: usize,
    /// `None` selects the trace-scaled default ridge.
    #[serde(default)]
    pub ridge: Option<f64>,
    /// Directory holding `stats_c<channel>.bin`; enables the Mahalanobis
    /// branch of a1 during `run`.
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self { clean_samples: default_clean_samples(), cosamp_iters: default_cosamp_iters(), ridge: None, dir: None }
    }
}

/// Parameter axes for `bench`; absent axes stay at the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    #[serde(default)]
    pub k: Option<Vec<usize>>,
    #[serde(default)]
    pub eta: Option<Vec<f64>>,
    #[serde(default)]
    pub eta_prime: Option<Vec<f64>>,
    #[serde(default)]
    pub eta_dprime: Option<Vec<f64>>,
    #[serde(default)]
    pub gamma: Option<Vec<f64>>,
    #[serde(default)]
    pub sigma: Option<Vec<f64>>,
    #[serde(default)]
    pub lambda: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
}

fn default_repetitions() -> usize {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_formats() -> Vec<ReportFormat> {
    vec![ReportFormat::Csv, ReportFormat::Json]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub workload: Workload,
    pub cad: CadConfig,
    pub attacks: Vec<AttackSpec>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<ReportFormat>,
    /// Master seed for every derived stream.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub stats: StatsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

impl ExperimentConfig {
    /// Parses a JSON config. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path.display(), e))?;
        let mut cfg: Self =
            serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.workload {
            Workload::Files { pattern } if Path::new(pattern.as_str()).is_relative() => {
                *pattern = base.join(pattern.as_str()).to_string_lossy().into_owned();
            }
            Workload::Instances { manifest } => fix(manifest),
            _ => {}
        }
        if let Some(dir) = &mut self.stats.dir {
            fix(dir);
        }
        fix(&mut self.output_dir);
    }

    /// Checks everything that does not depend on the workload contents.
    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(HarnessError::Config("repetitions must be >= 1".into()));
        }
        if self.attacks.is_empty() {
            return Err(HarnessError::Config("at least one attack spec is required (family may be none)".into()));
        }
        if self.formats.is_empty() {
            return Err(HarnessError::Config("at least one report format is required".into()));
        }
        if let Workload::Synthetic(w) = &self.workload {
            if w.samples == 0 {
                return Err(HarnessError::Config("synthetic workload needs samples >= 1".into()));
            }
            self.cad.validate(w.n)?;
            for a in &self.attacks {
                a.validate(w.n)?;
            }
        }
        Ok(())
    }

    pub fn writes(&self, format: ReportFormat) -> bool {
        self.formats.contains(&format)
    }
}
