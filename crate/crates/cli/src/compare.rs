//! Signal-by-signal comparison of two run directories.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::Path;

use serde::Serialize;

use snakesim::trajectory::{CsvTable, Summary, LOG_SCHEMA_VERSION};

use crate::failure::Failure;
use crate::{print_json, write_file, write_json};

pub const REPORT_FILE: &str = "comparison.json";
pub const OVERLAY_FILE: &str = "head_overlay.csv";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SignalDiff {
    pub rms: f64,
    pub peak: f64,
}

#[derive(Debug, Serialize)]
struct Report {
    schema_version: u32,
    run_a: String,
    run_b: String,
    engine_a: String,
    engine_b: String,
    compared_samples: usize,
    head_displacement_a: f64,
    head_displacement_b: f64,
    /// `b / a`; absent when run a did not move.
    displacement_ratio: Option<f64>,
    peak_contact_force_a: f64,
    peak_contact_force_b: f64,
    signals: BTreeMap<String, SignalDiff>,
    overlay_csv: String,
}

struct Run {
    summary: Summary,
    table: CsvTable,
}

fn schema_error(dir: &Path, msg: impl std::fmt::Display) -> Failure {
    Failure::config(format!("{}: schema mismatch: {msg}", dir.display()))
}

fn load_run(dir: &Path) -> Result<Run, Failure> {
    let summary_path = dir.join("summary.json");
    let text = fs::read_to_string(&summary_path)
        .map_err(|e| Failure::io(format!("{}: {e}", summary_path.display())))?;
    let summary: Summary =
        serde_json::from_str(&text).map_err(|e| schema_error(dir, format!("summary.json: {e}")))?;
    if summary.schema_version != LOG_SCHEMA_VERSION {
        return Err(schema_error(
            dir,
            format!(
                "log schema version {} (expected {LOG_SCHEMA_VERSION})",
                summary.schema_version
            ),
        ));
    }
    let csv_path = dir.join("trajectory.csv");
    let file =
        File::open(&csv_path).map_err(|e| Failure::io(format!("{}: {e}", csv_path.display())))?;
    let table =
        CsvTable::read(file).map_err(|e| schema_error(dir, format!("trajectory.csv: {e}")))?;
    if table.rows.len() != summary.samples {
        return Err(schema_error(
            dir,
            format!(
                "trajectory.csv has {} rows but the summary records {} samples",
                table.rows.len(),
                summary.samples
            ),
        ));
    }
    Ok(Run { summary, table })
}

/// Linear interpolation of `(xs, ys)` at `x`; exact at the knots. `xs` must be sorted.
fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> Option<f64> {
    let k = xs.partition_point(|&t| t < x);
    if k < xs.len() && xs[k] == x {
        return Some(ys[k]);
    }
    if k == 0 || k == xs.len() {
        return None;
    }
    let (x0, x1) = (xs[k - 1], xs[k]);
    let s = (x - x0) / (x1 - x0);
    Some(ys[k - 1] + s * (ys[k] - ys[k - 1]))
}

/// RMS and peak difference of every non-time column, with run b sampled at run a's
/// times over the interval both runs cover. Also returns the compared times.
pub fn signal_diffs(
    a: &CsvTable,
    b: &CsvTable,
) -> Result<(BTreeMap<String, SignalDiff>, Vec<f64>), String> {
    if a.columns != b.columns {
        return Err("runs have different columns".into());
    }
    let ta = a.column("t").unwrap_or_default();
    let tb = b.column("t").unwrap_or_default();
    let rows: Vec<(usize, f64)> = ta
        .iter()
        .enumerate()
        .filter(|(_, &t)| interpolate(&tb, &tb, t).is_some())
        .map(|(i, &t)| (i, t))
        .collect();
    let mut diffs = BTreeMap::new();
    for (k, name) in a.columns.iter().enumerate().skip(1) {
        let yb: Vec<f64> = b.rows.iter().map(|r| r[k]).collect();
        let (mut sum_sq, mut peak) = (0.0_f64, 0.0_f64);
        for &(i, t) in &rows {
            let d = a.rows[i][k] - interpolate(&tb, &yb, t).unwrap_or(f64::NAN);
            sum_sq += d * d;
            peak = peak.max(d.abs());
        }
        let rms = if rows.is_empty() {
            0.0
        } else {
            (sum_sq / rows.len() as f64).sqrt()
        };
        diffs.insert(name.clone(), SignalDiff { rms, peak });
    }
    Ok((diffs, rows.into_iter().map(|r| r.1).collect()))
}

pub fn cmd_compare(dir_a: &Path, dir_b: &Path, out: &Path) -> Result<(), Failure> {
    let a = load_run(dir_a)?;
    let b = load_run(dir_b)?;
    let (signals, times) = signal_diffs(&a.table, &b.table).map_err(|e| schema_error(dir_b, e))?;

    fs::create_dir_all(out).map_err(|e| Failure::io(format!("{}: {e}", out.display())))?;
    let overlay_path = out.join(OVERLAY_FILE);
    let col = |t: &CsvTable, name: &str| t.column(name).unwrap_or_default();
    let (ta, tb) = (col(&a.table, "t"), col(&b.table, "t"));
    let (xa, za) = (col(&a.table, "head_x"), col(&a.table, "head_z"));
    let (xb, zb) = (col(&b.table, "head_x"), col(&b.table, "head_z"));
    write_file(&overlay_path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["t", "head_x_a", "head_z_a", "head_x_b", "head_z_b"])?;
        for &t in &times {
            let fields = [
                Some(t),
                interpolate(&ta, &xa, t),
                interpolate(&ta, &za, t),
                interpolate(&tb, &xb, t),
                interpolate(&tb, &zb, t),
            ];
            csv.write_record(
                fields
                    .iter()
                    .map(|x| format!("{:e}", x.unwrap_or(f64::NAN))),
            )?;
        }
        csv.flush()
    })?;

    let da = a.summary.head_displacement;
    let db = b.summary.head_displacement;
    let report = Report {
        schema_version: LOG_SCHEMA_VERSION,
        run_a: dir_a.display().to_string(),
        run_b: dir_b.display().to_string(),
        engine_a: a.summary.engine.clone(),
        engine_b: b.summary.engine.clone(),
        compared_samples: times.len(),
        head_displacement_a: da,
        head_displacement_b: db,
        displacement_ratio: (da != 0.0).then(|| db / da),
        peak_contact_force_a: a.summary.peak_contact_force,
        peak_contact_force_b: b.summary.peak_contact_force,
        signals,
        overlay_csv: overlay_path.display().to_string(),
    };
    write_json(&out.join(REPORT_FILE), &report)?;
    print_json(&report)
}
