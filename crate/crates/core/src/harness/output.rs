//! Report files: `report.csv`, `report.json`, `curves/*.dat` with a manifest,
//! `transcripts/*.jsonl`, per-group bias tables and wrapper debug traces.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::sweep::SweepReport;
use crate::error::Result;
use crate::experts::RoundDiagnostics;
use crate::metrics::CalibrationReport;
use crate::transcript::Transcript;

pub const CSV_COLUMNS: [&str; 11] = [
    "axis",
    "value",
    "replica",
    "seed",
    "mcerr",
    "calerr",
    "ever_active_total",
    "max_depth_reached",
    "runtime_ms",
    "baseline_mcerr",
    "baseline_calerr",
];

pub fn write_report_csv(path: &Path, report: &SweepReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_COLUMNS)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &report.rows {
        w.write_record([
            r.axis.clone(),
            r.value.to_string(),
            r.replica.to_string(),
            r.seed.to_string(),
            r.mcerr.to_string(),
            r.calerr.to_string(),
            r.ever_active_total.to_string(),
            r.max_depth_reached.to_string(),
            r.runtime_ms.to_string(),
            opt(r.baseline_mcerr),
            opt(r.baseline_calerr),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct CurveEntry {
    file: String,
    x: String,
    y: String,
    description: String,
}

/// Two-column `x y` files of the median curves plus `curves/manifest.json`.
pub fn write_curves(dir: &Path, report: &SweepReport) -> Result<()> {
    let curves = dir.join("curves");
    fs::create_dir_all(&curves)?;
    let mut manifest = Vec::new();
    let mut emit = |name: &str, y: &str, description: &str, f: &dyn Fn(&super::sweep::Aggregate) -> Option<f64>| {
        let points: Vec<(u64, f64)> = report.aggregates.iter().filter_map(|a| f(a).map(|y| (a.value, y))).collect();
        if points.is_empty() {
            return Ok::<(), crate::error::Error>(());
        }
        let file = format!("{name}.dat");
        let mut out = BufWriter::new(File::create(curves.join(&file))?);
        writeln!(out, "# {} {y}", report.axis)?;
        for (x, y) in points {
            writeln!(out, "{x} {y}")?;
        }
        out.flush()?;
        manifest.push(CurveEntry { file, x: report.axis.clone(), y: y.into(), description: description.into() });
        Ok(())
    };
    emit("calerr_median", "median_calerr", "median CalErr per axis value", &|a| Some(a.median_calerr))?;
    emit("calerr_iqr", "iqr_calerr", "interquartile range of CalErr", &|a| Some(a.iqr_calerr))?;
    emit("mcerr_median", "median_mcerr", "median MCerr per axis value", &|a| Some(a.median_mcerr))?;
    emit("ever_active_median", "median_ever_active", "median number of ever-active bins", &|a| {
        Some(a.median_ever_active)
    })?;
    emit("baseline_calerr_median", "median_baseline_calerr", "median CalErr of the fixed-grid baseline", &|a| {
        a.median_baseline_calerr
    })?;
    emit("baseline_mcerr_median", "median_baseline_mcerr", "median MCerr of the fixed-grid baseline", &|a| {
        a.median_baseline_mcerr
    })?;
    write_json(&curves.join("manifest.json"), &manifest)
}

/// Writes `report.csv`, `report.json` and the curves under `dir`.
pub fn write_sweep(dir: &Path, report: &SweepReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_report_csv(&dir.join("report.csv"), report)?;
    write_json(&dir.join("report.json"), report)?;
    write_curves(dir, report)
}

/// Writes `<dir>/<stem>.jsonl`.
pub fn write_transcript(dir: &Path, stem: &str, transcript: &Transcript) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut out = BufWriter::new(File::create(dir.join(format!("{stem}.jsonl")))?);
    transcript.write_jsonl(&mut out)?;
    out.flush()?;
    Ok(())
}

/// Per-group table with columns `group_id,name,bias_sum`.
pub fn write_group_csv(path: &Path, report: &CalibrationReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["group_id", "name", "bias_sum"])?;
    for g in &report.per_group {
        w.write_record([g.group_id.to_string(), g.name.clone(), g.bias_sum.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Wrapper trace with columns `t,awake_experts,max_weight,phi_hat`.
pub fn write_debug_csv(path: &Path, diagnostics: &[RoundDiagnostics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "awake_experts", "max_weight", "phi_hat"])?;
    for d in diagnostics {
        w.write_record([d.t.to_string(), d.awake_experts.to_string(), d.max_weight.to_string(), d.phi_hat.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
