use std::fs;
use std::path::Path;
use std::process::Command;

use cad_core::attack_sim::write_pgm;
use cad_core::prelude::*;
use cad_harness::commands::{grid, AGGREGATES_CSV, MANIFEST_JSON, ROWS_CSV, TIMINGS_CSV};
use cad_harness::report::{read_csv, read_json};
use cad_harness::*;

fn config(dir: &Path, n: usize, k: usize, samples: usize, attacks: Vec<AttackSpec>) -> ExperimentConfig {
    ExperimentConfig {
        workload: Workload::Synthetic(SyntheticWorkload { n, sparsity: k, amplitude: (1.0, 2.0), samples, tail: None }),
        cad: CadConfig::new(k),
        attacks,
        repetitions: 1,
        output_dir: dir.to_path_buf(),
        formats: vec![ReportFormat::Csv, ReportFormat::Json],
        seed: 11,
        stats: StatsConfig::default(),
        sweep: None,
    }
}

#[test]
fn gen_l2_budgets_are_exact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 784, 80, 100, vec![AttackSpec::l2(0.3)]);
    let manifest = cmd_gen(&cfg).unwrap();
    assert_eq!(manifest.instances.len(), 100);
    assert_eq!(fs::read_dir(dir.path().join("instances")).unwrap().count(), 100);
    for e in &manifest.instances {
        assert!((e.perturbation_l2[0] - 0.3).abs() <= 1e-9);
    }
}

#[test]
fn gen_none_is_unperturbed_and_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg_a = config(a.path(), 64, 4, 5, vec![AttackSpec::none(), AttackSpec::linf(0.5)]);
    let cfg_b = ExperimentConfig { output_dir: b.path().to_path_buf(), ..cfg_a.clone() };
    let m = cmd_gen(&cfg_a).unwrap();
    cmd_gen(&cfg_b).unwrap();
    for e in m.instances.iter().filter(|e| e.family == AttackFamily::None) {
        assert_eq!(e.perturbation_l2, vec![0.0]);
    }
    assert_eq!(fs::read(a.path().join(MANIFEST_JSON)).unwrap(), fs::read(b.path().join(MANIFEST_JSON)).unwrap());
}

#[test]
fn replayed_instances_match_generated_ones() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(&dir.path().join("gen"), 64, 4, 3, vec![AttackSpec::l2(0.5), AttackSpec::l0(3, 0.4)]);
    cmd_gen(&cfg).unwrap();
    let replay = ExperimentConfig {
        workload: Workload::Instances { manifest: dir.path().join("gen").join(MANIFEST_JSON) },
        output_dir: dir.path().join("replay"),
        ..cfg.clone()
    };
    let direct = cmd_run(&ExperimentConfig { output_dir: dir.path().join("direct"), ..cfg }, 2).unwrap();
    let replayed = cmd_run(&replay, 2).unwrap();
    assert_eq!(direct.report.rows, replayed.report.rows);
}

#[test]
fn stats_from_sparse_cleans_have_zero_mean_residual() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), 64, 4, 1, vec![AttackSpec::none()]);
    cfg.stats.ridge = Some(1e-3);
    let s = cmd_stats(&cfg).unwrap();
    assert_eq!(s.len(), 1);
    assert!(s[0].mean_residual_norm <= 1e-8);
    assert_eq!(s[0].source_count, 20);
    let loaded = CleanStats::load(&dir.path().join("stats").join("stats_c0.bin")).unwrap();
    assert_eq!(loaded.ridge, 1e-3);
}

#[test]
fn stats_on_color_corpus_writes_one_file_per_channel() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir_all(&data).unwrap();
    let op = SensingOperator::dct(64).unwrap();
    for i in 0..4u64 {
        let mut rgb = Vec::new();
        for c in 0..3 {
            let x = make_clean_sparse(64, 3, (0.05, 0.2), 10 * i + c).unwrap();
            let s = op.synthesize(&x).unwrap();
            rgb.extend(s.as_slice().iter().map(|v| v + 0.5));
        }
        write_pgm(&data.join(format!("img{i}.ppm")), &Signal::new(rgb).unwrap(), 3).unwrap();
    }
    let mut cfg = config(dir.path(), 64, 3, 1, vec![AttackSpec::none()]);
    cfg.workload = Workload::Files { pattern: data.join("*.ppm").to_string_lossy().into_owned() };
    cfg.cad = CadConfig { channels: 3, ..CadConfig::new(3) };
    let s = cmd_stats(&cfg).unwrap();
    assert_eq!(s.len(), 3);
    for (c, summary) in s.iter().enumerate() {
        assert!(dir.path().join("stats").join(format!("stats_c{c}.bin")).exists());
        assert_eq!(summary.source_count, 4);
    }
}

#[test]
fn stats_need_two_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), 64, 4, 1, vec![AttackSpec::none()]);
    cfg.stats.clean_samples = 1;
    let err = cmd_stats(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 1, "{err}");
}

#[test]
fn singular_covariance_without_ridge_is_numerical() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), 64, 4, 1, vec![AttackSpec::none()]);
    cfg.stats.ridge = Some(0.0);
    let err = cmd_stats(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
}

#[test]
fn clean_ensemble_is_identified() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 64, 4, 40, vec![AttackSpec::none()]);
    let out = cmd_run(&cfg, 4).unwrap();
    let agg = &out.report.aggregates[0];
    assert_eq!(agg.family, AttackFamily::None);
    assert!(agg.identification_rate.unwrap() >= 0.95);
    assert_eq!(out.timings.len(), 40);
    assert!(out.timings.iter().all(|t| t.wall_seconds >= 0.0));
}

#[test]
fn header_echoes_grayscale_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 784, 80, 1, vec![AttackSpec::none()]);
    cmd_run(&cfg, 1).unwrap();
    let h: RunHeader = read_json(&dir.path().join("header.json")).unwrap();
    assert_eq!(
        (h.k, h.alpha, h.beta, h.m_low, h.tau, h.theta, h.gamma, h.sigma, h.lambda),
        (80, 8.0, 5.0, 1.8, 15, 65.0, 0.07, 1.01, 1.25)
    );
}

#[test]
fn reports_round_trip_and_aggregates_recompute() {
    let dir = tempfile::tempdir().unwrap();
    let attacks = vec![AttackSpec::none(), AttackSpec::l2(3.0), AttackSpec::linf(0.8), AttackSpec::gradient_proxy(0.2)];
    let cfg = ExperimentConfig { repetitions: 2, ..config(dir.path(), 64, 4, 6, attacks) };
    let out = cmd_run(&cfg, 3).unwrap();
    let rows: Vec<InstanceRow> = read_csv(&dir.path().join(ROWS_CSV)).unwrap();
    assert_eq!(rows, out.report.rows);
    let aggs: Vec<AggregateRow> = read_csv(&dir.path().join(AGGREGATES_CSV)).unwrap();
    assert_eq!(aggs, out.report.aggregates);
    let json: RunReport = read_json(&dir.path().join("report.json")).unwrap();
    assert_eq!(json, out.report);
    let timings: Vec<TimingRow> = read_csv(&dir.path().join(TIMINGS_CSV)).unwrap();
    assert_eq!(timings, out.timings);

    let recomputed = aggregate(&rows);
    assert_eq!(recomputed.len(), aggs.len());
    for (a, b) in recomputed.iter().zip(&aggs) {
        assert_eq!((a.family, a.rows, a.identified), (b.family, b.rows, b.identified));
        for (x, y) in [(a.mean_error, b.mean_error), (a.median_error, b.median_error), (a.mean_bound_ratio, b.mean_bound_ratio)] {
            match (x, y) {
                (Some(x), Some(y)) => assert!((x - y).abs() <= 1e-12),
                (x, y) => assert_eq!(x, y),
            }
        }
    }
    let proxy = aggs.iter().find(|a| a.family == AttackFamily::GradientProxy).unwrap();
    assert_eq!(proxy.identification_rate, None);
    assert_eq!(rows.len(), 4 * 6 * 2);
}

#[test]
fn instance_results_do_not_depend_on_order() {
    let dir = tempfile::tempdir().unwrap();
    let a = config(dir.path(), 64, 4, 4, vec![AttackSpec::l2(2.0), AttackSpec::linf(0.6)]);
    // same attacks in the same slots, but a different worker count
    let b = ExperimentConfig { output_dir: dir.path().join("b"), ..a.clone() };
    let ra = cmd_run(&a, 1).unwrap();
    let rb = cmd_run(&b, 4).unwrap();
    assert_eq!(ra.report.rows, rb.report.rows);
    // an extra sample appended to the workload leaves existing instances unchanged
    let mut c = a.clone();
    c.output_dir = dir.path().join("c");
    if let Workload::Synthetic(w) = &mut c.workload {
        w.samples = 5;
    }
    let rc = cmd_run(&c, 2).unwrap();
    for row in &ra.report.rows {
        let twin = rc
            .report
            .rows
            .iter()
            .find(|r| r.attack_index == row.attack_index && r.sample == row.sample && r.repetition == row.repetition)
            .unwrap();
        assert_eq!(InstanceRow { instance: row.instance, ..twin.clone() }, *row);
    }
}

#[test]
fn missing_stats_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), 64, 4, 2, vec![AttackSpec::none()]);
    cfg.stats.dir = Some(dir.path().join("nowhere"));
    assert_eq!(cmd_run(&cfg, 1).unwrap_err().exit_code(), 2);
}

#[test]
fn run_with_stats_records_mahalanobis_branch() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), 64, 4, 3, vec![AttackSpec::none(), AttackSpec::l2(2.0)]);
    cfg.stats.ridge = Some(1e-3);
    cmd_stats(&cfg).unwrap();
    cfg.stats.dir = Some(dir.path().join("stats"));
    let out = cmd_run(&cfg, 2).unwrap();
    assert!(out.report.header.mahalanobis);
    assert!(out.report.rows.iter().all(|r| r.error.is_none()));
}

#[test]
fn single_cell_sweep_equals_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 64, 4, 5, vec![AttackSpec::l2(1.0), AttackSpec::none()]);
    let bench = cmd_bench(&cfg, 2).unwrap();
    let run = cmd_run(&ExperimentConfig { output_dir: dir.path().join("run"), ..cfg }, 2).unwrap();
    assert_eq!(bench.cells.len(), 1);
    assert_eq!(bench.cells[0].1, run.report.aggregates);
    assert!(dir.path().join("sweep.csv").exists());
}

#[test]
fn empty_grid_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), 64, 4, 5, vec![AttackSpec::l2(1.0)]);
    cfg.sweep = Some(SweepConfig { eta: Some(vec![]), ..Default::default() });
    assert_eq!(cmd_bench(&cfg, 1).unwrap_err().exit_code(), 1);
    cfg.sweep = Some(SweepConfig { eta: Some(vec![0.1, 0.2]), gamma: Some(vec![0.1, 0.2, 0.3]), ..Default::default() });
    assert_eq!(grid(&cfg, cfg.sweep.as_ref().unwrap()).unwrap().len(), 6);
}

#[test]
fn error_grows_with_l2_budget() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), 64, 4, 100, vec![AttackSpec::l2(0.1)]);
    cfg.sweep = Some(SweepConfig { eta: Some(vec![0.1, 0.2, 0.3]), ..Default::default() });
    let out = cmd_bench(&cfg, 4).unwrap();
    let medians: Vec<f64> = out
        .rows
        .iter()
        .filter(|r| r.family == AttackFamily::L2 && r.metric == "median_error")
        .map(|r| r.value)
        .collect();
    assert_eq!(medians.len(), 3);
    assert!(medians.windows(2).all(|w| w[1] >= w[0]), "{medians:?}");
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_cad")).args(args).output().unwrap()
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    let cfg = config(Path::new("out"), 32, 2, 3, vec![AttackSpec::l2(0.5)]);
    fs::write(&cfg_path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let p = cfg_path.to_str().unwrap();

    let ok = cli(&["run", "--config", p, "--workers", "2", "--format", "csv", "--seed", "5"]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(dir.path().join("out").join(ROWS_CSV).exists());
    assert!(!dir.path().join("out").join("report.json").exists());

    let other = dir.path().join("elsewhere");
    assert!(cli(&["gen", "--config", p, "--out", other.to_str().unwrap()]).status.success());
    assert!(other.join(MANIFEST_JSON).exists());

    let missing = cli(&["run", "--config", dir.path().join("absent.json").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));

    let bad_path = dir.path().join("bad.json");
    fs::write(&bad_path, "{\"workload\": 3}").unwrap();
    assert_eq!(cli(&["run", "--config", bad_path.to_str().unwrap()]).status.code(), Some(1));

    let mut invalid = cfg.clone();
    invalid.repetitions = 0;
    fs::write(&bad_path, serde_json::to_string(&invalid).unwrap()).unwrap();
    assert_eq!(cli(&["run", "--config", bad_path.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn shipped_configs_load_and_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(cfg.output_dir.is_absolute());
        seen += 1;
    }
    assert!(seen >= 4);
}
