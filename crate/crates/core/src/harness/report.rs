use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{write_runs, ExperimentConfig, RunRecord, FIT_HEADER};
use crate::error::{Error, Result};
use crate::scaling::{depth_points, fit_power_law, segmented_predict, DepthPoint, FitKind, PowerLawFit, Prediction};

/// Paths of the emitted files.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub runs: PathBuf,
    pub fit: PathBuf,
    pub plotdata: PathBuf,
    pub report: PathBuf,
}

fn points(config: &ExperimentConfig, record: &RunRecord) -> Vec<DepthPoint> {
    depth_points(&record.sweeps(config), config.grid.spacing_dex())
}

/// OLS and WLS fits of log10 η* against log10 L.
pub fn fit_rows(config: &ExperimentConfig, record: &RunRecord) -> Result<Vec<PowerLawFit>> {
    let pts = points(config, record);
    Ok(vec![fit_power_law(&pts, FitKind::Ols)?, fit_power_law(&pts, FitKind::Wls)?])
}

/// Two-anchor predictions of every configured segment.
pub fn predictions(config: &ExperimentConfig, record: &RunRecord) -> Result<Vec<Vec<Prediction>>> {
    let measured: Vec<(usize, f64)> = points(config, record).iter().map(|p| (p.depth, 10f64.powf(p.log10_eta))).collect();
    config
        .segments
        .iter()
        .map(|seg| {
            let anchors = seg
                .anchors
                .iter()
                .map(|d| {
                    measured
                        .iter()
                        .find(|(m, _)| m == d)
                        .copied()
                        .ok_or_else(|| Error::Insufficient(format!("no η* measured at anchor depth {d}")))
                })
                .collect::<Result<Vec<_>>>()?;
            segmented_predict(&anchors, &seg.targets, &measured)
        })
        .collect()
}

fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.6}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn write_fit(fits: &[PowerLawFit], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(FIT_HEADER)?;
    for f in fits {
        w.write_record([
            f.kind.id().to_string(),
            format!("{:?}", f.slope),
            format!("{:?}", f.intercept),
            format!("{:?}", f.r2),
            format!("{:?}", f.slope_ci.0),
            format!("{:?}", f.slope_ci.1),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn plotdata(config: &ExperimentConfig, pts: &[DepthPoint], fit: &PowerLawFit) -> String {
    let shift = config.l_eff_factor.log10();
    let mut s = String::new();
    let _ = writeln!(s, "# measured points (block 0); x is log10 of depth times {}", config.l_eff_factor);
    let _ = writeln!(s, "# log10_L log10_eta_star stderr_dex");
    for p in pts {
        let _ = writeln!(s, "{} {} {}", num((p.depth as f64).log10() + shift), num(p.log10_eta), num(p.variance.unwrap_or(0.0).sqrt()));
    }
    let _ = writeln!(s, "\n\n# {} fit line with 95% band (block 1)", fit.kind.id());
    let _ = writeln!(s, "# log10_L log10_eta_fit band_lo band_hi");
    let (lo, hi) = (pts[0].depth as f64, pts[pts.len() - 1].depth as f64);
    let n = 50;
    for i in 0..=n {
        let l = lo * (hi / lo).powf(i as f64 / n as f64);
        let y = fit.predict_log10(l);
        let h = fit.band_half_width(l);
        let _ = writeln!(s, "{} {} {} {}", num(l.log10() + shift), num(y), num(y - h), num(y + h));
    }
    s
}

fn summary(config: &ExperimentConfig, record: &RunRecord, pts: &[DepthPoint], fits: &[PowerLawFit], preds: &[Vec<Prediction>]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "depth-LR scaling report");
    let _ = writeln!(s, "version      {}", record.version);
    let _ = writeln!(s, "config hash  {}", record.config_hash);
    let _ = writeln!(s, "runs         {} rows, {} diverged, {} job errors", record.rows.len(), record.rows.iter().filter(|r| r.diverged).count(), record.errors.len());
    let _ = writeln!(s, "selection    {}", config.selection.id());
    let _ = writeln!(s);
    let _ = writeln!(s, "per-depth eta* (geometric mean over seeds)");
    for sweep in record.sweeps(config).iter().filter(|r| r.endpoint_hit) {
        let _ = writeln!(s, "  warning: L={} seed={} selected a grid endpoint; widen the grid", sweep.depth, sweep.seed);
    }
    for p in pts {
        let _ = writeln!(s, "  L={:<4} eta*={:.4e}  log10={:+.3} ± {:.3}", p.depth, 10f64.powf(p.log10_eta), p.log10_eta, p.variance.unwrap_or(0.0).sqrt());
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "power-law fits  log10 eta* = intercept + slope * log10 L");
    for f in fits {
        let flag = if f.degenerate { "  (two depths: exact interpolation, no band)" } else { "" };
        let _ = writeln!(
            s,
            "  {}  slope {:+.4}  alpha {:.4}  intercept {:+.4}  R2 {:.4}  slope 95% CI [{}, {}]{flag}",
            f.kind.id(),
            f.slope,
            f.alpha(),
            f.intercept,
            f.r2,
            num(f.slope_ci.0),
            num(f.slope_ci.1)
        );
    }
    if !preds.is_empty() {
        let _ = writeln!(s);
        let _ = writeln!(s, "segmented two-anchor predictions");
        for (seg, p) in config.segments.iter().zip(preds) {
            let anchors: Vec<String> = seg.anchors.iter().map(ToString::to_string).collect();
            let _ = writeln!(s, "  segment anchors L={}", anchors.join(","));
            for q in p {
                let _ = writeln!(
                    s,
                    "    L={:<4} predicted {:.4e}  measured {}  error {} dex",
                    q.depth,
                    q.predicted,
                    q.measured.map_or("-".into(), |m| format!("{m:.4e}")),
                    q.error_dex.map_or("-".into(), |e| format!("{e:+.3}"))
                );
            }
            let max = p.iter().filter_map(|q| q.error_dex).map(f64::abs).fold(f64::NAN, f64::max);
            let _ = writeln!(s, "    max |error| {} dex", num(max));
        }
    }
    if !record.probes.is_empty() {
        let _ = writeln!(s);
        let _ = writeln!(s, "AM-muP calibration (S̄ = 1) vs sweep eta*");
        for p in &record.probes {
            let sweep = pts.iter().find(|q| q.depth == p.depth).map(|q| q.log10_eta);
            let gap = sweep.map_or("-".into(), |l| format!("{:+.3}", p.calibrated_eta.log10() - l));
            let _ = writeln!(s, "  L={:<4} seed={:<3} S̄(probe)={:.3e}  calibrated eta={:.4e}  gap to sweep {gap} dex", p.depth, p.seed, p.sbar, p.calibrated_eta);
        }
    }
    if !record.errors.is_empty() {
        let _ = writeln!(s);
        let _ = writeln!(s, "job errors");
        for e in &record.errors {
            let _ = writeln!(s, "  {e}");
        }
    }
    s
}

/// Write only `fit.csv` and `plotdata.txt`.
pub fn emit_fit(config: &ExperimentConfig, record: &RunRecord, out: &Path) -> Result<Vec<PowerLawFit>> {
    std::fs::create_dir_all(out)?;
    let pts = points(config, record);
    let fits = fit_rows(config, record)?;
    write_fit(&fits, &out.join("fit.csv"))?;
    std::fs::write(out.join("plotdata.txt"), plotdata(config, &pts, &fits[1]))?;
    Ok(fits)
}

/// Write `predictions.csv` (segment, L, predicted, measured, error_dex).
pub fn emit_predictions(config: &ExperimentConfig, record: &RunRecord, out: &Path) -> Result<Vec<Vec<Prediction>>> {
    std::fs::create_dir_all(out)?;
    let preds = predictions(config, record)?;
    let mut w = csv::Writer::from_path(out.join("predictions.csv"))?;
    w.write_record(["segment", "L", "predicted", "measured", "error_dex"])?;
    for (i, seg) in preds.iter().enumerate() {
        for q in seg {
            w.write_record([
                i.to_string(),
                q.depth.to_string(),
                format!("{:?}", q.predicted),
                format!("{:?}", q.measured.unwrap_or(f64::NAN)),
                format!("{:?}", q.error_dex.unwrap_or(f64::NAN)),
            ])?;
        }
    }
    w.flush()?;
    Ok(preds)
}

/// Write `runs.csv`, `fit.csv`, `plotdata.txt` and `report.txt` into `out`.
pub fn emit_report(config: &ExperimentConfig, record: &RunRecord, out: &Path) -> Result<ReportFiles> {
    std::fs::create_dir_all(out)?;
    let pts = points(config, record);
    let fits = fit_rows(config, record)?;
    let preds = predictions(config, record)?;
    let files = ReportFiles {
        runs: out.join("runs.csv"),
        fit: out.join("fit.csv"),
        plotdata: out.join("plotdata.txt"),
        report: out.join("report.txt"),
    };
    write_runs(record, &files.runs)?;
    write_fit(&fits, &files.fit)?;
    std::fs::write(&files.plotdata, plotdata(config, &pts, &fits[1]))?;
    std::fs::write(&files.report, summary(config, record, &pts, &fits, &preds))?;
    Ok(files)
}
