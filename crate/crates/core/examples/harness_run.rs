//! The experiment harness end to end on a small config: resumable sweep,
//! report files, then a look at what was written.

use amup::harness::{emit_report, run_experiment, ExperimentConfig, RunOptions};

const CONFIG: &str = "\
# tiny synthetic sweep
family = mlp
depths = 2, 3, 4
width = 32
eta_min = 0.01
eta_max = 3
eta_count = 8
seeds = 0, 1
train_samples = 1280
val_samples = 256
segment = 2, 3 -> 4
";

fn main() -> amup::Result<()> {
    let config = ExperimentConfig::parse(CONFIG)?;
    let out = std::env::temp_dir().join(format!("amup-harness-{}", &config.hash()[..12]));

    // Stop early as if killed, then resume; finished rows are not retrained.
    let first = run_experiment(&config, &out, RunOptions { max_jobs: Some(10), point_probe_replicates: 8 })?;
    println!("first pass: {} rows", first.rows.len());
    let record = run_experiment(&config, &out, RunOptions { max_jobs: None, point_probe_replicates: 8 })?;
    println!("after resume: {} rows", record.rows.len());

    let files = emit_report(&config, &record, &out)?;
    print!("{}", std::fs::read_to_string(&files.report)?);
    println!("\nfiles in {}", out.display());
    Ok(())
}
