//! Turns a config into concrete adversarial instances.
//!
//! Every random draw comes from a stream keyed on what it is for, never on
//! its position: clean sample `i` uses `(CLEAN_STREAM, i, channel)` and
//! instance `(attack, sample, repetition)` uses its own derived seed, so
//! adding attacks or reordering work never changes an existing instance.

use std::fs;
use std::path::{Path, PathBuf};

use cad_core::attack_sim::{load_signal, make_clean_sparse, make_compressible, perturb, SignalFormat};
use cad_core::prelude::*;
use cad_core::rng::derive_seed;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Workload};
use crate::error::{HarnessError, Result};

pub const CLEAN_STREAM: u64 = 0xc1ea_0000;
pub const STATS_STREAM: u64 = 0x57a7_0000;
pub const CAD_STREAM: u64 = 0xcad0;

/// One instance: the per-channel adversarial data plus its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedInstance {
    pub index: usize,
    pub attack_index: usize,
    pub sample: usize,
    pub repetition: usize,
    pub seed: u64,
    pub family: AttackFamily,
    pub channels: Vec<AdversarialInstance>,
}

impl PreparedInstance {
    /// Channel-major observation.
    pub fn observed(&self) -> Signal {
        let values: Vec<f64> = self.channels.iter().flat_map(|c| c.observed.as_slice().iter().copied()).collect();
        Signal::new(values).expect("observations are finite and non-empty")
    }
}

#[derive(Debug, Clone)]
pub struct Workset {
    pub op: SensingOperator,
    pub channels: usize,
    pub instances: Vec<PreparedInstance>,
}

impl Workset {
    pub fn n(&self) -> usize {
        self.op.n()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub file: String,
    pub family: AttackFamily,
    pub attack_index: usize,
    pub sample: usize,
    pub repetition: usize,
    pub seed: u64,
    pub perturbation_l2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub n: usize,
    pub channels: usize,
    pub seed: u64,
    pub instances: Vec<ManifestEntry>,
}

pub fn instance_seed(master: u64, attack: usize, sample: usize, repetition: usize) -> u64 {
    derive_seed(derive_seed(derive_seed(master, attack as u64), sample as u64), repetition as u64)
}

fn synthetic_clean(w: &crate::config::SyntheticWorkload, seed: u64) -> cad_core::Result<SpectralVector> {
    match w.tail {
        Some(t) => make_compressible(w.n, w.sparsity, w.amplitude, t.scale, t.decay, seed),
        None => make_clean_sparse(w.n, w.sparsity, w.amplitude, seed),
    }
}

fn matched_files(pattern: &str) -> Result<Vec<PathBuf>> {
    let paths = glob::glob(pattern).map_err(|e| HarnessError::Config(format!("bad glob `{pattern}`: {e}")))?;
    let mut files = Vec::new();
    for p in paths {
        files.push(p.map_err(|e| HarnessError::io(pattern, e))?);
    }
    files.sort();
    if files.is_empty() {
        return Err(HarnessError::Io(format!("no files match `{pattern}`")));
    }
    Ok(files)
}

/// Loads every matched file as `channels` per-channel signals of one length.
fn load_files(pattern: &str, channels: usize) -> Result<(usize, Vec<Vec<Signal>>)> {
    let mut n = None;
    let mut out = Vec::new();
    for path in matched_files(pattern)? {
        let format = SignalFormat::from_path(&path)
            .ok_or_else(|| HarnessError::Config(format!("unknown signal format: {}", path.display())))?;
        let loaded = load_signal(&path, format).map_err(|e| match e {
            cad_core::Error::Io(msg) => HarnessError::io(path.display(), msg),
            other => HarnessError::Config(format!("{}: {other}", path.display())),
        })?;
        if loaded.channels != channels {
            return Err(HarnessError::Config(format!(
                "{} has {} channels, config expects {channels}",
                path.display(),
                loaded.channels
            )));
        }
        let len = loaded.channel_len();
        if *n.get_or_insert(len) != len {
            return Err(HarnessError::Config(format!("{} has {len} samples per channel, expected {}", path.display(), n.unwrap())));
        }
        out.push((0..channels).map(|c| loaded.channel(c)).collect());
    }
    Ok((n.expect("at least one file"), out))
}

/// Clean spectra indexed `[sample][channel]`.
fn clean_spectra(cfg: &ExperimentConfig) -> Result<(SensingOperator, Vec<Vec<SpectralVector>>)> {
    let channels = cfg.cad.channels;
    match &cfg.workload {
        Workload::Synthetic(w) => {
            let op = SensingOperator::dct(w.n)?;
            let stream = derive_seed(cfg.seed, CLEAN_STREAM);
            let cleans = (0..w.samples)
                .map(|i| {
                    (0..channels)
                        .map(|c| synthetic_clean(w, derive_seed(stream, (i * channels + c) as u64)))
                        .collect::<cad_core::Result<Vec<_>>>()
                })
                .collect::<cad_core::Result<Vec<_>>>()?;
            Ok((op, cleans))
        }
        Workload::Files { pattern } => {
            let (n, files) = load_files(pattern, channels)?;
            let op = SensingOperator::dct(n)?;
            let cleans = files
                .iter()
                .map(|chans| chans.iter().map(|s| op.analyze(s)).collect::<cad_core::Result<Vec<_>>>())
                .collect::<cad_core::Result<Vec<_>>>()?;
            Ok((op, cleans))
        }
        Workload::Instances { .. } => unreachable!("replayed instances carry their own clean spectra"),
    }
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path.display(), e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

fn replay(manifest_path: &Path, channels: usize) -> Result<Workset> {
    let manifest = load_manifest(manifest_path)?;
    if manifest.channels != channels {
        return Err(HarnessError::Config(format!(
            "manifest has {} channels, config expects {channels}",
            manifest.channels
        )));
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut instances = Vec::with_capacity(manifest.instances.len());
    for entry in &manifest.instances {
        let path = base.join(&entry.file);
        let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(path.display(), e))?;
        let inst: PreparedInstance =
            serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        if inst.channels.len() != channels || inst.channels.iter().any(|c| c.observed.len() != manifest.n) {
            return Err(HarnessError::Config(format!("{} does not match the manifest shape", path.display())));
        }
        instances.push(inst);
    }
    Ok(Workset { op: SensingOperator::dct(manifest.n)?, channels, instances })
}

/// Builds every (attack, sample, repetition) instance of the config.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Workset> {
    cfg.validate()?;
    let channels = cfg.cad.channels;
    if let Workload::Instances { manifest } = &cfg.workload {
        let ws = replay(manifest, channels)?;
        cfg.cad.validate(ws.n())?;
        return Ok(ws);
    }
    let (op, cleans) = clean_spectra(cfg)?;
    cfg.cad.validate(op.n())?;
    let mut instances = Vec::new();
    for (a, spec) in cfg.attacks.iter().enumerate() {
        spec.validate(op.n())?;
        for (i, clean) in cleans.iter().enumerate() {
            for r in 0..cfg.repetitions {
                let seed = instance_seed(cfg.seed, a, i, r);
                let per_channel = clean
                    .iter()
                    .enumerate()
                    .map(|(c, x)| perturb(x, &spec.clone().with_seed(derive_seed(seed, c as u64)), &op))
                    .collect::<cad_core::Result<Vec<_>>>()?;
                instances.push(PreparedInstance {
                    index: instances.len(),
                    attack_index: a,
                    sample: i,
                    repetition: r,
                    seed,
                    family: spec.family,
                    channels: per_channel,
                });
            }
        }
    }
    Ok(Workset { op, channels, instances })
}

/// Clean signals for residual statistics, indexed `[channel][signal]`.
pub fn stats_signals(cfg: &ExperimentConfig) -> Result<(SensingOperator, Vec<Vec<Signal>>)> {
    let channels = cfg.cad.channels;
    let (op, per_sample): (SensingOperator, Vec<Vec<Signal>>) = match &cfg.workload {
        Workload::Synthetic(w) => {
            let op = SensingOperator::dct(w.n)?;
            let stream = derive_seed(cfg.seed, STATS_STREAM);
            let mut samples = Vec::with_capacity(cfg.stats.clean_samples);
            for i in 0..cfg.stats.clean_samples {
                let mut chans = Vec::with_capacity(channels);
                for c in 0..channels {
                    let x = synthetic_clean(w, derive_seed(stream, (i * channels + c) as u64))?;
                    chans.push(op.synthesize(&x)?);
                }
                samples.push(chans);
            }
            (op, samples)
        }
        Workload::Files { pattern } => {
            let (n, files) = load_files(pattern, channels)?;
            (SensingOperator::dct(n)?, files)
        }
        Workload::Instances { manifest } => {
            let ws = replay(manifest, channels)?;
            let mut seen = std::collections::BTreeSet::new();
            let mut samples = Vec::new();
            for inst in &ws.instances {
                if seen.insert(inst.sample) {
                    let chans = inst
                        .channels
                        .iter()
                        .map(|c| ws.op.synthesize(&c.clean_spectral))
                        .collect::<cad_core::Result<Vec<_>>>()?;
                    samples.push(chans);
                }
            }
            (ws.op, samples)
        }
    };
    let by_channel = (0..channels).map(|c| per_sample.iter().map(|s| s[c].clone()).collect()).collect();
    Ok((op, by_channel))
}

/// File name of channel `c`'s statistics inside a stats directory.
pub fn stats_file(dir: &Path, channel: usize) -> PathBuf {
    dir.join(format!("stats_c{channel}.bin"))
}

/// Loads one statistics file per channel from `dir`.
pub fn load_stats(dir: &Path, channels: usize, n: usize) -> Result<Vec<CleanStats>> {
    (0..channels)
        .map(|c| {
            let path = stats_file(dir, c);
            let stats = CleanStats::load(&path).map_err(|e| match e {
                cad_core::Error::Io(msg) => HarnessError::io(path.display(), msg),
                other => HarnessError::Config(format!("{}: {other}", path.display())),
            })?;
            if stats.n() != n {
                return Err(HarnessError::Config(format!("{} has N = {}, expected {n}", path.display(), stats.n())));
            }
            Ok(stats)
        })
        .collect()
}
