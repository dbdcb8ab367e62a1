use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use amup::aggregators::axiom_checks;
use amup::harness::{self, load_config, output_dir, ExperimentConfig, RunOptions};
use amup::{Error, Result};

#[derive(Parser)]
#[command(name = "amup", version, about = "Depth-learning-rate scaling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config file
    config: PathBuf,
    /// Run a single seed instead of the configured list
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config's `out`)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// One-step S̄ probes and AM-μP calibration per depth
    Probe(Common),
    /// Learning-rate sweeps, resumable; writes all report files
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Stop after this many new jobs
        #[arg(long)]
        max_jobs: Option<usize>,
        /// Replicates of the per-point S̄ probe (0 disables it)
        #[arg(long, default_value_t = 16)]
        point_probes: usize,
    },
    /// Power-law fits from existing sweep rows
    Fit(Common),
    /// Segmented two-anchor predictions from existing sweep rows
    Predict(Common),
    /// Aggregator axiom table
    Axioms {
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-emit runs.csv, fit.csv, plotdata.txt and report.txt
    Report(Common),
}

fn setup(c: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut config = load_config(&c.config)?;
    if let Some(s) = c.seed {
        config = config.with_seeds(vec![s])?;
    }
    let out = output_dir(&config, c.out.clone());
    Ok((config, out))
}

fn print_fits(fits: &[amup::scaling::PowerLawFit]) {
    for f in fits {
        println!(
            "{}  slope {:+.4}  intercept {:+.4}  R2 {:.4}  CI [{:.4}, {:.4}]",
            f.kind.id(),
            f.slope,
            f.intercept,
            f.r2,
            f.slope_ci.0,
            f.slope_ci.1
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Probe(c) => {
            let (config, out) = setup(&c)?;
            println!("{:>4} {:>6} {:>12} {:>12} {:>14}", "L", "seed", "S̄(probe)", "stderr", "calibrated η");
            for r in harness::run_probes(&config, &out)? {
                println!("{:>4} {:>6} {:>12.4e} {:>12.2e} {:>14.4e}", r.depth, r.seed, r.sbar, r.sbar_stderr, r.calibrated_eta);
            }
        }
        Command::Sweep { common, max_jobs, point_probes } => {
            let (config, out) = setup(&common)?;
            let record = harness::run_experiment(&config, &out, RunOptions { max_jobs, point_probe_replicates: point_probes })?;
            let complete = record.rows.len() == config.depths.len() * config.seeds.len() * config.grid.len();
            if complete && config.depths.len() >= 2 {
                let files = harness::emit_report(&config, &record, &out)?;
                print!("{}", std::fs::read_to_string(files.report)?);
            } else {
                harness::write_runs(&record, &out.join("runs.csv"))?;
                println!("{} rows in {}; rerun to resume", record.rows.len(), out.display());
            }
        }
        Command::Fit(c) => {
            let (config, out) = setup(&c)?;
            let record = harness::load_record(&config, &out)?;
            print_fits(&harness::emit_fit(&config, &record, &out)?);
        }
        Command::Predict(c) => {
            let (config, out) = setup(&c)?;
            if config.segments.is_empty() {
                return Err(Error::ConfigField { field: "segment".into(), msg: "no segments configured".into() });
            }
            let record = harness::load_record(&config, &out)?;
            for (seg, preds) in config.segments.iter().zip(harness::emit_predictions(&config, &record, &out)?) {
                println!("anchors {:?}", seg.anchors);
                for q in preds {
                    let err = q.error_dex.map_or("-".to_string(), |e| format!("{e:+.3} dex"));
                    println!("  L={:<4} predicted {:.4e}  {err}", q.depth, q.predicted);
                }
            }
        }
        Command::Axioms { config, .. } => {
            if let Some(path) = config {
                load_config(&path)?;
            }
            let checks = axiom_checks()?;
            println!("{:<5} {:<6} {:<55} witness", "axiom", "result", "claim");
            for c in &checks {
                println!("{:<5} {:<6} {:<55} {}", c.axiom, if c.passed { "pass" } else { "FAIL" }, c.claim, c.witness);
            }
            if checks.iter().any(|c| !c.passed) {
                return Err(Error::Invalid("axiom check failed".into()));
            }
        }
        Command::Report(c) => {
            let (config, out) = setup(&c)?;
            let record = harness::load_record(&config, &out)?;
            let files = harness::emit_report(&config, &record, &out)?;
            print!("{}", std::fs::read_to_string(files.report)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}
