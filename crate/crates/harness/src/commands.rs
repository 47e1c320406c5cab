use std::fs;
use std::path::Path;
use std::time::Instant;

use cad_core::feedback::estimate_clean_stats;
use cad_core::prelude::*;
use cad_core::rng::derive_seed;
use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ReportFormat, SweepConfig};
use crate::error::{HarnessError, Result};
use crate::report::{
    aggregate, designated_action, write_csv, write_json, AggregateRow, InstanceRow, RunHeader, RunReport, TimingRow,
};
use crate::workload::{
    load_stats, prepare, stats_file, stats_signals, Manifest, ManifestEntry, PreparedInstance, Workset, CAD_STREAM,
};

pub const ROWS_CSV: &str = "rows.csv";
pub const AGGREGATES_CSV: &str = "aggregates.csv";
pub const TIMINGS_CSV: &str = "timings.csv";
pub const HEADER_JSON: &str = "header.json";
pub const REPORT_JSON: &str = "report.json";
pub const MANIFEST_JSON: &str = "manifest.json";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_JSON: &str = "sweep.json";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir.display(), e))
}

/// Worker pool with `workers` threads (0 picks the rayon default).
pub fn build_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::Config(format!("worker pool: {e}")))
}

/// Writes every instance as JSON plus a manifest under `output_dir`.
pub fn cmd_gen(cfg: &ExperimentConfig) -> Result<Manifest> {
    let ws = prepare(cfg)?;
    let dir = &cfg.output_dir;
    create_dir(&dir.join("instances"))?;
    let mut entries = Vec::with_capacity(ws.instances.len());
    for inst in &ws.instances {
        let file = format!("instances/inst_{:06}.json", inst.index);
        write_json(&dir.join(&file), inst)?;
        entries.push(ManifestEntry {
            index: inst.index,
            file,
            family: inst.family,
            attack_index: inst.attack_index,
            sample: inst.sample,
            repetition: inst.repetition,
            seed: inst.seed,
            perturbation_l2: inst.channels.iter().map(|c| c.perturbation.l2()).collect(),
        });
    }
    let manifest = Manifest { n: ws.n(), channels: ws.channels, seed: cfg.seed, instances: entries };
    write_json(&dir.join(MANIFEST_JSON), &manifest)?;
    info!("gen: wrote {} instances to {}", manifest.instances.len(), dir.display());
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub channel: usize,
    pub file: String,
    pub source_count: usize,
    pub ridge: f64,
    /// `‖m̂‖₂` of the clean-residual mean.
    pub mean_residual_norm: f64,
    pub condition_estimate: f64,
}

/// Estimates per-channel clean-residual statistics into `output_dir/stats`.
pub fn cmd_stats(cfg: &ExperimentConfig) -> Result<Vec<StatsSummary>> {
    cfg.validate()?;
    let (op, signals) = stats_signals(cfg)?;
    cfg.cad.validate(op.n())?;
    let dir = cfg.output_dir.join("stats");
    create_dir(&dir)?;
    let mut summaries = Vec::with_capacity(signals.len());
    for (c, sigs) in signals.iter().enumerate() {
        let stats = estimate_clean_stats(sigs, &op, cfg.cad.k, cfg.stats.cosamp_iters, cfg.stats.ridge)?;
        let condition = stats.condition_estimate()?;
        let path = stats_file(&dir, c);
        stats.save(&path).map_err(|e| HarnessError::io(path.display(), e))?;
        let summary = StatsSummary {
            channel: c,
            file: path.file_name().unwrap().to_string_lossy().into_owned(),
            source_count: stats.source_count,
            ridge: stats.ridge,
            mean_residual_norm: stats.mean.iter().map(|v| v * v).sum::<f64>().sqrt(),
            condition_estimate: condition,
        };
        info!(
            "stats: channel {c}: {} signals, mean residual norm {:.3e}, condition estimate {:.3e}",
            summary.source_count, summary.mean_residual_norm, summary.condition_estimate
        );
        summaries.push(summary);
    }
    write_json(&dir.join("summary.json"), &summaries)?;
    Ok(summaries)
}

/// Report plus wall times, which live apart so reports stay reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub report: RunReport,
    pub timings: Vec<TimingRow>,
}

fn failed_row(inst: &PreparedInstance, channel: usize, budget: f64, error: String) -> InstanceRow {
    let designated = designated_action(inst.family);
    InstanceRow {
        instance: inst.index,
        attack_index: inst.attack_index,
        sample: inst.sample,
        repetition: inst.repetition,
        channel,
        family: inst.family,
        final_method: None,
        designated_action: designated,
        identified: designated.map(|_| false),
        reconstruction_error: None,
        relative_error: None,
        residual_l2: None,
        residual_linf: None,
        iterations: None,
        stop_reason: None,
        bound_budget: budget,
        bound_ratio: None,
        error: Some(error),
    }
}

fn run_instance(
    inst: &PreparedInstance,
    cfg: &ExperimentConfig,
    op: &SensingOperator,
    stats: &[CleanStats],
) -> (Vec<InstanceRow>, TimingRow) {
    let cad_cfg = CadConfig { seed: derive_seed(inst.seed, CAD_STREAM), ..cfg.cad.clone() };
    let y = inst.observed();
    let started = Instant::now();
    let result = cad_run(&y, &cad_cfg, stats, op);
    let wall_seconds = started.elapsed().as_secs_f64();

    let n = op.n();
    let budget = |c: usize| inst.channels[c].spec.l2_bound(n);
    let designated = designated_action(inst.family);
    let rows = match &result {
        Ok(res) => res
            .channels
            .iter()
            .map(|out| {
                let c = out.channel;
                let adv = &inst.channels[c];
                let row = (|| -> cad_core::Result<InstanceRow> {
                    let report = check_bound(&adv.clean_spectral, &out.estimate, cfg.cad.k, budget(c))?;
                    let v = adv.observed.sub(&out.reconstruction)?;
                    let clean_norm = adv.clean_spectral.l2();
                    Ok(InstanceRow {
                        instance: inst.index,
                        attack_index: inst.attack_index,
                        sample: inst.sample,
                        repetition: inst.repetition,
                        channel: c,
                        family: inst.family,
                        final_method: Some(out.final_method),
                        designated_action: designated,
                        identified: designated.map(|a| out.final_method.recovery_action() == a),
                        reconstruction_error: Some(report.empirical_l2_error),
                        relative_error: (clean_norm > 0.0).then(|| report.empirical_l2_error / clean_norm),
                        residual_l2: Some(v.l2()),
                        residual_linf: Some(v.linf()),
                        iterations: Some(out.stopped_at),
                        stop_reason: Some(out.stop_reason),
                        bound_budget: report.budget,
                        bound_ratio: report.ratio,
                        error: None,
                    })
                })();
                row.unwrap_or_else(|e| failed_row(inst, c, budget(c), e.to_string()))
            })
            .collect(),
        Err(failure) => {
            warn!("instance {}: {failure}", inst.index);
            (0..inst.channels.len()).map(|c| failed_row(inst, c, budget(c), failure.to_string())).collect()
        }
    };
    let iterations = match &result {
        Ok(res) => res.channels.iter().map(|o| o.stopped_at).sum(),
        Err(f) => f.trace.len(),
    };
    debug!("instance {} ({}): {iterations} iterations in {wall_seconds:.4}s", inst.index, inst.family);
    (rows, TimingRow { instance: inst.index, channels: inst.channels.len(), iterations, wall_seconds })
}

/// Runs the defence over a prepared workset on a pool of `workers` threads.
/// Results are collected in instance order whatever the scheduling.
pub fn execute(cfg: &ExperimentConfig, ws: &Workset, stats: &[CleanStats], workers: usize) -> Result<RunOutput> {
    let pool = build_pool(workers)?;
    let results: Vec<(Vec<InstanceRow>, TimingRow)> =
        pool.install(|| ws.instances.par_iter().map(|inst| run_instance(inst, cfg, &ws.op, stats)).collect());
    let mut rows = Vec::new();
    let mut timings = Vec::with_capacity(results.len());
    for (r, t) in results {
        rows.extend(r);
        timings.push(t);
    }
    let aggregates = aggregate(&rows);
    let header = RunHeader::new(cfg, ws.n(), ws.instances.len(), !stats.is_empty());
    Ok(RunOutput { report: RunReport { header, rows, aggregates }, timings })
}

fn stats_for(cfg: &ExperimentConfig, ws: &Workset) -> Result<Vec<CleanStats>> {
    match &cfg.stats.dir {
        Some(dir) => load_stats(dir, ws.channels, ws.n()),
        None => Ok(Vec::new()),
    }
}

pub fn write_run(dir: &Path, cfg: &ExperimentConfig, out: &RunOutput) -> Result<()> {
    create_dir(dir)?;
    write_json(&dir.join(HEADER_JSON), &out.report.header)?;
    if cfg.writes(ReportFormat::Csv) {
        write_csv(&dir.join(ROWS_CSV), &out.report.rows)?;
        write_csv(&dir.join(AGGREGATES_CSV), &out.report.aggregates)?;
    }
    if cfg.writes(ReportFormat::Json) {
        write_json(&dir.join(REPORT_JSON), &out.report)?;
    }
    write_csv(&dir.join(TIMINGS_CSV), &out.timings)
}

/// Prepares the workload, runs it and writes the reports to `output_dir`.
pub fn cmd_run(cfg: &ExperimentConfig, workers: usize) -> Result<RunOutput> {
    let ws = prepare(cfg)?;
    let stats = stats_for(cfg, &ws)?;
    info!("run: {} instances, N = {}, {} channel(s), workers = {workers}", ws.instances.len(), ws.n(), ws.channels);
    let out = execute(cfg, &ws, &stats, workers)?;
    for a in &out.report.aggregates {
        info!(
            "run: {}: {} rows, identification {}, median error {}",
            a.family,
            a.rows,
            a.identification_rate.map_or("-".to_string(), |r| format!("{r:.3}")),
            a.median_error.map_or("-".to_string(), |e| format!("{e:.4}"))
        );
    }
    write_run(&cfg.output_dir, cfg, &out)?;
    Ok(out)
}

/// Parameter values of one grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellParams {
    pub k: usize,
    pub eta: f64,
    pub eta_prime: f64,
    pub eta_dprime: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub lambda: f64,
}

impl CellParams {
    fn base(cfg: &ExperimentConfig) -> Self {
        let fb = &cfg.cad.feedback;
        let bp = &cfg.cad.bandit;
        Self {
            k: cfg.cad.k,
            eta: fb.eta,
            eta_prime: fb.eta_prime,
            eta_dprime: fb.eta_dprime,
            gamma: bp.gamma,
            sigma: bp.sigma,
            lambda: bp.lambda,
        }
    }

    /// The config with this cell's values. Budget axes move both the attack
    /// budgets and the matching action radii.
    pub fn apply(&self, cfg: &ExperimentConfig, sweep: &SweepConfig) -> ExperimentConfig {
        let mut out = cfg.clone();
        out.cad.k = self.k;
        out.cad.bandit.gamma = self.gamma;
        out.cad.bandit.sigma = self.sigma;
        out.cad.bandit.lambda = self.lambda;
        let fb = &mut out.cad.feedback;
        fb.eta = self.eta;
        fb.eta_prime = self.eta_prime;
        fb.eta_dprime = self.eta_dprime;
        for a in &mut out.attacks {
            match a.family {
                AttackFamily::L1 | AttackFamily::L2 if sweep.eta.is_some() => a.eta = self.eta,
                AttackFamily::L0 if sweep.eta_prime.is_some() => a.eta_prime = self.eta_prime,
                AttackFamily::Linf | AttackFamily::GradientProxy if sweep.eta_dprime.is_some() => {
                    a.eta_dprime = self.eta_dprime
                }
                _ => {}
            }
        }
        out
    }
}

/// Cartesian product of the sweep axes, in axis order k, η, η′, η″, γ, σ, λ
/// with the last axis varying fastest.
pub fn grid(cfg: &ExperimentConfig, sweep: &SweepConfig) -> Result<Vec<CellParams>> {
    fn axis<T: Copy>(name: &str, values: &Option<Vec<T>>, base: T) -> Result<Vec<T>> {
        match values {
            Some(v) if v.is_empty() => Err(HarnessError::Config(format!("empty grid: sweep axis `{name}` has no values"))),
            Some(v) => Ok(v.clone()),
            None => Ok(vec![base]),
        }
    }
    let b = CellParams::base(cfg);
    let ks = axis("k", &sweep.k, b.k)?;
    let etas = axis("eta", &sweep.eta, b.eta)?;
    let eps = axis("eta_prime", &sweep.eta_prime, b.eta_prime)?;
    let edps = axis("eta_dprime", &sweep.eta_dprime, b.eta_dprime)?;
    let gammas = axis("gamma", &sweep.gamma, b.gamma)?;
    let sigmas = axis("sigma", &sweep.sigma, b.sigma)?;
    let lambdas = axis("lambda", &sweep.lambda, b.lambda)?;
    let mut cells = Vec::new();
    for &k in &ks {
        for &eta in &etas {
            for &eta_prime in &eps {
                for &eta_dprime in &edps {
                    for &gamma in &gammas {
                        for &sigma in &sigmas {
                            for &lambda in &lambdas {
                                cells.push(CellParams { k, eta, eta_prime, eta_dprime, gamma, sigma, lambda });
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(cells)
}

/// One metric of one family in one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cell: usize,
    pub k: usize,
    pub eta: f64,
    pub eta_prime: f64,
    pub eta_dprime: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub lambda: f64,
    pub family: AttackFamily,
    pub metric: String,
    pub value: f64,
}

fn metrics(a: &AggregateRow) -> Vec<(&'static str, Option<f64>)> {
    vec![
        ("rows", Some(a.rows as f64)),
        ("failures", Some(a.failures as f64)),
        ("identification_rate", a.identification_rate),
        ("mean_error", a.mean_error),
        ("median_error", a.median_error),
        ("mean_bound_ratio", a.mean_bound_ratio),
        ("median_bound_ratio", a.median_bound_ratio),
        ("mean_iterations", a.mean_iterations),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    /// Aggregates of every cell, in grid order.
    pub cells: Vec<(CellParams, Vec<AggregateRow>)>,
}

/// Runs the workload at every grid cell and writes a long-format table.
pub fn cmd_bench(cfg: &ExperimentConfig, workers: usize) -> Result<SweepOutput> {
    let sweep = cfg.sweep.clone().unwrap_or_default();
    let cells = grid(cfg, &sweep)?;
    info!("bench: {} cell(s)", cells.len());
    let mut rows = Vec::new();
    let mut per_cell = Vec::with_capacity(cells.len());
    for (i, cell) in cells.iter().enumerate() {
        let cell_cfg = cell.apply(cfg, &sweep);
        let ws = prepare(&cell_cfg)?;
        let stats = stats_for(&cell_cfg, &ws)?;
        let out = execute(&cell_cfg, &ws, &stats, workers)?;
        for a in &out.report.aggregates {
            for (metric, value) in metrics(a) {
                if let Some(value) = value {
                    rows.push(SweepRow {
                        cell: i,
                        k: cell.k,
                        eta: cell.eta,
                        eta_prime: cell.eta_prime,
                        eta_dprime: cell.eta_dprime,
                        gamma: cell.gamma,
                        sigma: cell.sigma,
                        lambda: cell.lambda,
                        family: a.family,
                        metric: metric.to_string(),
                        value,
                    });
                }
            }
        }
        per_cell.push((*cell, out.report.aggregates));
    }
    create_dir(&cfg.output_dir)?;
    if cfg.writes(ReportFormat::Csv) {
        write_csv(&cfg.output_dir.join(SWEEP_CSV), &rows)?;
    }
    if cfg.writes(ReportFormat::Json) {
        write_json(&cfg.output_dir.join(SWEEP_JSON), &rows)?;
    }
    Ok(SweepOutput { rows, cells: per_cell })
}
