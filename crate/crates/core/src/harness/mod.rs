//! Experiment orchestration: datasets, resumable sweep runs, persistence
//! and report emission.

pub mod config;
mod report;

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Instant;

use rayon::prelude::*;

pub use config::{load_config, ExperimentConfig, NetKind, Segment, Task};
pub use report::{emit_fit, emit_predictions, emit_report, fit_rows, predictions, ReportFiles};

use crate::data::{load_image_dir, synthetic, Dataset};
use crate::error::{Error, Result};
use crate::netcore::Loss;
use crate::probes::{second_moments, ProbeSettings};
use crate::rng::derive_seed;
use crate::scaling::{calibrate_amup, model_seed, sweep_point, Calibration, SweepResult};

pub const RUNS_HEADER: [&str; 7] = ["L", "eta", "seed", "metric", "diverged", "sbar", "wall_ms"];
pub const FIT_HEADER: [&str; 6] = ["fit_kind", "alpha", "intercept", "r2", "alpha_ci_lo", "alpha_ci_hi"];
pub const PROBE_HEADER: [&str; 7] = ["L", "seed", "probe_eta", "sbar", "sbar_stderr", "calibrated_eta", "sbar_at_eta"];

const JOURNAL: &str = "journal.csv";
const SIDECAR: &str = "config.txt";
const ERRORS: &str = "errors.txt";

/// `v<crate version>`.
pub fn version() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

/// One trained grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunRow {
    pub depth: usize,
    pub eta: f64,
    pub seed: u64,
    pub metric: f64,
    pub diverged: bool,
    /// One-step S̄ at this (L, η, seed); NaN when point probes are off.
    pub sbar: f64,
    pub wall_ms: f64,
}

impl RunRow {
    fn key(&self) -> (usize, u64, u64) {
        (self.depth, self.eta.to_bits(), self.seed)
    }

    fn record(&self) -> [String; 7] {
        [
            self.depth.to_string(),
            format!("{:?}", self.eta),
            self.seed.to_string(),
            format!("{:?}", self.metric),
            u8::from(self.diverged).to_string(),
            format!("{:?}", self.sbar),
            format!("{:.3}", self.wall_ms),
        ]
    }

    fn parse(rec: &csv::StringRecord) -> Result<Self> {
        let bad = || Error::Invalid(format!("malformed run row: {rec:?}"));
        if rec.len() != RUNS_HEADER.len() {
            return Err(bad());
        }
        let f = |i: usize| rec[i].parse::<f64>().map_err(|_| bad());
        Ok(Self {
            depth: rec[0].parse().map_err(|_| bad())?,
            eta: f(1)?,
            seed: rec[2].parse().map_err(|_| bad())?,
            metric: f(3)?,
            diverged: match &rec[4] {
                "0" => false,
                "1" => true,
                _ => return Err(bad()),
            },
            sbar: f(5)?,
            wall_ms: f(6)?,
        })
    }
}

/// AM-μP calibration of one (depth, seed).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeRow {
    pub depth: usize,
    pub seed: u64,
    pub probe_eta: f64,
    pub sbar: f64,
    pub sbar_stderr: f64,
    pub calibrated_eta: f64,
    pub sbar_at_eta: f64,
}

/// Everything a run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub config_hash: String,
    pub version: String,
    /// Sorted by (L, η, seed).
    pub rows: Vec<RunRow>,
    pub probes: Vec<ProbeRow>,
    pub errors: Vec<String>,
}

impl RunRecord {
    /// Per (depth, seed) sweep results rebuilt from the rows.
    pub fn sweeps(&self, config: &ExperimentConfig) -> Vec<SweepResult> {
        let mut groups: BTreeMap<(usize, u64), Vec<crate::scaling::SweepPoint>> = BTreeMap::new();
        for r in &self.rows {
            groups.entry((r.depth, r.seed)).or_default().push(crate::scaling::SweepPoint {
                eta: r.eta,
                metric: r.metric,
                diverged: r.diverged,
                wall_ms: r.wall_ms,
            });
        }
        groups.into_iter().map(|((d, s), pts)| SweepResult::from_points(d, s, config.selection, pts)).collect()
    }
}

/// Run-time knobs that are not part of the experiment definition.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunOptions {
    /// Stop after this many new jobs, as if the process had been killed.
    pub max_jobs: Option<usize>,
    /// Replicates of the per-point S̄ probe; 0 leaves the `sbar` column NaN.
    pub point_probe_replicates: usize,
}

/// Dataset for one seed. Synthetic data is drawn per seed; image data is shared.
pub fn make_dataset(config: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    match &config.task {
        Task::Synthetic10 => synthetic(config.synthetic_params(), derive_seed(seed, 0xda7a)),
        Task::ImageBinary(dir) => load_image_dir(dir),
    }
}

fn prepare_dir(config: &ExperimentConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let sidecar = out.join(SIDECAR);
    if sidecar.exists() {
        let stored = config::ExperimentConfig::parse(&std::fs::read_to_string(&sidecar)?)?;
        if stored.hash() != config.hash() {
            return Err(Error::Invalid(format!(
                "{} holds results of a different experiment (config hash {} vs {})",
                out.display(),
                stored.hash(),
                config.hash()
            )));
        }
    } else {
        std::fs::write(&sidecar, &config.canonical)?;
    }
    Ok(())
}

/// Rows already persisted in `out`.
pub fn read_journal(out: &Path) -> Result<Vec<RunRow>> {
    let path = out.join(JOURNAL);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_path(&path)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        // A torn final line from a killed writer is dropped and its job rerun.
        if let Ok(row) = RunRow::parse(&rec) {
            rows.push(row);
        }
    }
    Ok(rows)
}

fn sort_rows(rows: &mut [RunRow]) {
    rows.sort_by(|a, b| (a.depth, a.eta, a.seed).partial_cmp(&(b.depth, b.eta, b.seed)).expect("finite keys"));
}

fn read_errors(out: &Path) -> Vec<String> {
    std::fs::read_to_string(out.join(ERRORS)).map(|s| s.lines().map(String::from).collect()).unwrap_or_default()
}

/// Load what a previous run left in the output directory.
pub fn load_record(config: &ExperimentConfig, out: &Path) -> Result<RunRecord> {
    let mut rows = read_journal(out)?;
    sort_rows(&mut rows);
    let mut dedup: Vec<RunRow> = Vec::with_capacity(rows.len());
    for r in rows {
        if dedup.last().map(RunRow::key) != Some(r.key()) {
            dedup.push(r);
        }
    }
    Ok(RunRecord {
        config_hash: config.hash(),
        version: version(),
        rows: dedup,
        probes: read_probes(out)?,
        errors: read_errors(out),
    })
}

#[derive(Debug, Clone, Copy)]
struct Job {
    depth: usize,
    seed: u64,
    eta: f64,
}

/// Train every (depth, seed, η) job not yet in the journal, appending each
/// finished row as it completes. Job errors are logged and the run continues.
pub fn run_experiment(config: &ExperimentConfig, out: &Path, options: RunOptions) -> Result<RunRecord> {
    prepare_dir(config, out)?;
    let done: HashSet<(usize, u64, u64)> = read_journal(out)?.iter().map(RunRow::key).collect();
    let mut pending = Vec::new();
    for &depth in &config.depths {
        for &seed in &config.seeds {
            for &eta in config.grid.etas() {
                if !done.contains(&(depth, eta.to_bits(), seed)) {
                    pending.push(Job { depth, seed, eta });
                }
            }
        }
    }
    if let Some(n) = options.max_jobs {
        pending.truncate(n);
    }
    let seeds: Vec<u64> = {
        let mut s: Vec<u64> = pending.iter().map(|j| j.seed).collect();
        s.sort_unstable();
        s.dedup();
        s
    };
    let datasets: BTreeMap<u64, Dataset> = seeds.iter().map(|&s| Ok((s, make_dataset(config, s)?))).collect::<Result<_>>()?;

    let journal_path = out.join(JOURNAL);
    let fresh = !journal_path.exists();
    if !fresh {
        drop_torn_tail(&journal_path)?;
    }
    let mut journal = OpenOptions::new().create(true).append(true).open(&journal_path)?;
    if fresh {
        writeln!(journal, "{}", RUNS_HEADER.join(","))?;
    }
    let mut errors = OpenOptions::new().create(true).append(true).open(out.join(ERRORS))?;

    let (tx, rx) = mpsc::channel::<std::result::Result<RunRow, String>>();
    let writer = std::thread::spawn(move || -> std::io::Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(&mut journal);
        for msg in rx {
            match msg {
                Ok(row) => {
                    w.write_record(row.record()).map_err(std::io::Error::other)?;
                    w.flush()?;
                }
                Err(e) => {
                    writeln!(errors, "{e}")?;
                    errors.flush()?;
                }
            }
        }
        Ok(())
    });
    pending.par_iter().for_each_with(tx, |tx, job| {
        let msg = run_job(config, &datasets[&job.seed], *job, options.point_probe_replicates)
            .map_err(|e| format!("L={} eta={:?} seed={}: {e}", job.depth, job.eta, job.seed));
        let _ = tx.send(msg);
    });
    writer.join().expect("writer thread panicked")?;
    load_record(config, out)
}

/// Cut a partial last line left by a killed writer so appends start on a fresh line.
fn drop_torn_tail(path: &Path) -> Result<()> {
    let bytes = std::fs::read(path)?;
    if bytes.last().is_some_and(|&b| b != b'\n') {
        let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        OpenOptions::new().write(true).open(path)?.set_len(keep as u64)?;
    }
    Ok(())
}

fn run_job(config: &ExperimentConfig, data: &Dataset, job: Job, probe_replicates: usize) -> Result<RunRow> {
    let spec = config.spec(job.depth)?;
    let start = Instant::now();
    let point = sweep_point(&spec, data, job.eta, config.budget, config.selection, model_seed(job.seed, job.depth))?;
    let sbar = if probe_replicates >= 2 {
        let settings = ProbeSettings {
            eta: job.eta,
            batch: config.probe_batch,
            replicates: probe_replicates,
            loss: Loss::Mse,
            sigma_y: config.sigma_y,
            seed: model_seed(job.seed, job.depth),
        };
        match second_moments(&spec, &settings) {
            Ok(r) if r.diverged == 0 => r.sbar,
            Ok(_) | Err(Error::Insufficient(_)) => f64::INFINITY,
            Err(e) => return Err(e),
        }
    } else {
        f64::NAN
    };
    Ok(RunRow {
        depth: job.depth,
        eta: job.eta,
        seed: job.seed,
        metric: point.metric,
        diverged: point.diverged,
        sbar,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// AM-μP calibration for every (depth, seed), written to `probe.csv`.
pub fn run_probes(config: &ExperimentConfig, out: &Path) -> Result<Vec<ProbeRow>> {
    std::fs::create_dir_all(out)?;
    let mut rows = Vec::new();
    for &depth in &config.depths {
        let spec = config.spec(depth)?;
        for &seed in &config.seeds {
            let settings = ProbeSettings {
                eta: config.probe_eta,
                batch: config.probe_batch,
                replicates: config.replicates,
                loss: Loss::Mse,
                sigma_y: config.sigma_y,
                seed,
            };
            let base = second_moments(&spec, &settings)?;
            let cal: Calibration = calibrate_amup(&spec, config.probe_eta, &settings)?;
            rows.push(ProbeRow {
                depth,
                seed,
                probe_eta: config.probe_eta,
                sbar: base.sbar,
                sbar_stderr: base.sbar_stderr,
                calibrated_eta: cal.eta,
                sbar_at_eta: cal.sbar_at_eta,
            });
        }
    }
    let mut w = csv::Writer::from_path(out.join("probe.csv"))?;
    w.write_record(PROBE_HEADER)?;
    for r in &rows {
        w.write_record([
            r.depth.to_string(),
            r.seed.to_string(),
            format!("{:?}", r.probe_eta),
            format!("{:?}", r.sbar),
            format!("{:?}", r.sbar_stderr),
            format!("{:?}", r.calibrated_eta),
            format!("{:?}", r.sbar_at_eta),
        ])?;
    }
    w.flush()?;
    Ok(rows)
}

fn read_probes(out: &Path) -> Result<Vec<ProbeRow>> {
    let path = out.join("probe.csv");
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut rdr = csv::Reader::from_path(&path)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let bad = || Error::Invalid(format!("malformed probe row: {rec:?}"));
        let f = |i: usize| rec.get(i).and_then(|v| v.parse::<f64>().ok()).ok_or_else(bad);
        rows.push(ProbeRow {
            depth: rec.get(0).and_then(|v| v.parse().ok()).ok_or_else(bad)?,
            seed: rec.get(1).and_then(|v| v.parse().ok()).ok_or_else(bad)?,
            probe_eta: f(2)?,
            sbar: f(3)?,
            sbar_stderr: f(4)?,
            calibrated_eta: f(5)?,
            sbar_at_eta: f(6)?,
        });
    }
    Ok(rows)
}

/// Write the sorted `runs.csv`.
pub fn write_runs(record: &RunRecord, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    w.write_record(RUNS_HEADER)?;
    for r in &record.rows {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(())
}

/// Output directory: `--out` if given, else the config's `out`.
pub fn output_dir(config: &ExperimentConfig, out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| config.out.clone())
}
