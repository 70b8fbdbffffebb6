//! Plot-ready CSV series from a finished report. Nothing is rendered.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::HarnessError;
use crate::experiment::ExperimentReport;

pub const SERIES_FILE: &str = "series.csv";
pub const ENDPOINTS_FILE: &str = "endpoints.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub variant: String,
    pub seed: u64,
    pub i: usize,
    pub t: f64,
    #[serde(rename = "L_a")]
    pub loss_a: f64,
    pub delta_norm: f64,
    pub lambda_t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointRow {
    pub variant: String,
    pub seed: u64,
    pub x: f64,
    pub y: f64,
    pub artifact: u8,
}

#[derive(Deserialize)]
struct TrajRow {
    i: usize,
    t: f64,
    #[serde(rename = "L_a")]
    loss_a: f64,
    delta_norm: f64,
    lambda_t: f64,
}

/// Writes `series.csv` (one row per step of every logged trajectory) and,
/// for two-dimensional latents, `endpoints.csv`. Returns the written paths.
pub fn emit_plot_data(report_path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    if !report_path.is_file() {
        return Err(HarnessError::Report(format!("no report at {}", report_path.display())));
    }
    let text = fs::read_to_string(report_path).map_err(|e| HarnessError::io(report_path, e))?;
    let report: ExperimentReport =
        serde_json::from_str(&text).map_err(|e| HarnessError::Report(format!("{}: {e}", report_path.display())))?;
    let report_dir = report_path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;

    let mut series = Vec::new();
    for run in &report.runs {
        let Some(name) = &run.trajectory else { continue };
        let path = report_dir.join(name);
        let mut r = csv::Reader::from_path(&path).map_err(|e| HarnessError::Report(format!("{}: {e}", path.display())))?;
        for row in r.deserialize::<TrajRow>() {
            let row = row.map_err(|e| HarnessError::Report(format!("{}: {e}", path.display())))?;
            series.push(SeriesRow {
                variant: run.variant.clone(),
                seed: run.seed,
                i: row.i,
                t: row.t,
                loss_a: row.loss_a,
                delta_norm: row.delta_norm,
                lambda_t: row.lambda_t,
            });
        }
    }
    let series_path = out_dir.join(SERIES_FILE);
    write_rows(&series_path, &series, &["variant", "seed", "i", "t", "L_a", "delta_norm", "lambda_t"])?;
    let mut written = vec![series_path];

    let planar = report.runs.iter().all(|r| r.final_x.len() == 2);
    if planar {
        let endpoints: Vec<EndpointRow> = report
            .runs
            .iter()
            .map(|r| EndpointRow {
                variant: r.variant.clone(),
                seed: r.seed,
                x: r.final_x[0],
                y: r.final_x[1],
                artifact: u8::from(r.artifact),
            })
            .collect();
        let path = out_dir.join(ENDPOINTS_FILE);
        write_rows(&path, &endpoints, &["variant", "seed", "x", "y", "artifact"])?;
        written.push(path);
    }
    Ok(written)
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<(), HarnessError> {
    let f = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(f));
    let err = |e: csv::Error| HarnessError::Report(e.to_string());
    if rows.is_empty() {
        w.write_record(header).map_err(err)?;
    }
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}
