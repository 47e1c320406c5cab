use std::path::PathBuf;
use std::process::ExitCode;

use cad_harness::{cmd_bench, cmd_gen, cmd_run, cmd_stats, ExperimentConfig, HarnessError, ReportFormat};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cad", version, about = "Compressive-sensing adaptive defence experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate adversarial instances and a manifest.
    Gen(Common),
    /// Estimate clean-residual statistics for the Mahalanobis test.
    Stats(Common),
    /// Run the defence and write per-instance and aggregate reports.
    Run(Common),
    /// Sweep parameters over a grid and write a long-format table.
    Bench(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Write only this report format.
    #[arg(long, value_enum)]
    format: Option<ReportFormat>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(f) = self.format {
            cfg.formats = vec![f];
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Gen(c) => {
            let m = cmd_gen(&c.load()?)?;
            println!("wrote {} instances", m.instances.len());
        }
        Command::Stats(c) => {
            for s in cmd_stats(&c.load()?)? {
                println!(
                    "channel {}: {} clean signals, mean residual norm {:.3e}, condition estimate {:.3e}",
                    s.channel, s.source_count, s.mean_residual_norm, s.condition_estimate
                );
            }
        }
        Command::Run(c) => {
            let out = cmd_run(&c.load()?, c.workers)?;
            for a in &out.report.aggregates {
                let rate = a.identification_rate.map_or("-".into(), |r| format!("{r:.3}"));
                println!("{:<15} rows {:>5}  identified {rate:>6}  failures {}", a.family.as_str(), a.rows, a.failures);
            }
        }
        Command::Bench(c) => {
            let out = cmd_bench(&c.load()?, c.workers)?;
            println!("{} cells, {} rows", out.cells.len(), out.rows.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CAD_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
