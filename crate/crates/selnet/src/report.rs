//! CSV outputs. Every file starts with a `#` provenance line.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use selnet_core::evaluation::{CompareRow, CoverageGrid, CurvePoint};
use selnet_core::optim::TrainHistory;

use crate::error::{Error, Result};

/// Version of the CSV layouts below.
pub const CSV_FORMAT: u32 = 1;

pub fn provenance(config_hash: &str, seeds: &[u64]) -> String {
    let seeds: Vec<String> = seeds.iter().map(u64::to_string).collect();
    format!(
        "# selnet format={CSV_FORMAT} config={config_hash} seed={}",
        seeds.join(";")
    )
}

fn open(path: &Path, provenance: &str) -> Result<csv::Writer<File>> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(f, "{provenance}").map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

fn finish(path: &Path, mut w: csv::Writer<File>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn row(path: &Path, w: &mut csv::Writer<File>, fields: &[String]) -> Result<()> {
    w.write_record(fields)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_owned(), |x| x.to_string())
}

pub fn write_compare(path: &Path, provenance: &str, rows: &[CompareRow]) -> Result<()> {
    let mut w = open(path, provenance)?;
    let head = [
        "coverage",
        "selnet",
        "selnet_se",
        "mc_dropout",
        "mc_dropout_se",
        "mc_improvement",
        "sr",
        "sr_se",
        "sr_improvement",
    ];
    row(path, &mut w, &head.map(String::from))?;
    for r in rows {
        row(
            path,
            &mut w,
            &[
                r.coverage.to_string(),
                r.selnet.mean.to_string(),
                r.selnet.stderr.to_string(),
                opt(r.mc_dropout.map(|s| s.mean)),
                opt(r.mc_dropout.map(|s| s.stderr)),
                opt(r.mc_improvement),
                opt(r.sr.map(|s| s.mean)),
                opt(r.sr.map(|s| s.stderr)),
                opt(r.sr_improvement),
            ],
        )?;
    }
    finish(path, w)
}

/// `stderr` holds the standard error of the risk at each point.
pub fn write_curve(path: &Path, provenance: &str, points: &[CurvePoint], stderr: &[f64]) -> Result<()> {
    let mut w = open(path, provenance)?;
    row(
        path,
        &mut w,
        &["c", "achieved_coverage", "risk", "stderr"].map(String::from),
    )?;
    for (p, se) in points.iter().zip(stderr) {
        row(
            path,
            &mut w,
            &[
                p.target_coverage.to_string(),
                p.coverage.to_string(),
                p.risk.to_string(),
                se.to_string(),
            ],
        )?;
    }
    finish(path, w)
}

pub fn write_grid(path: &Path, provenance: &str, grid: &CoverageGrid) -> Result<()> {
    let mut w = open(path, provenance)?;
    let mut head = vec!["train_c".to_owned()];
    head.extend(grid.calibration_coverages.iter().map(|c| format!("calib_{c}")));
    row(path, &mut w, &head)?;
    for (tc, risks) in grid.train_coverages.iter().zip(&grid.risks) {
        let mut r = vec![tc.to_string()];
        r.extend(risks.iter().map(f64::to_string));
        row(path, &mut w, &r)?;
    }
    finish(path, w)
}

pub fn write_history(path: &Path, provenance: &str, history: &TrainHistory) -> Result<()> {
    let mut w = open(path, provenance)?;
    let head = [
        "epoch",
        "lr",
        "total_loss",
        "selective_loss",
        "auxiliary_loss",
        "soft_coverage",
        "hard_coverage",
        "selective_risk",
    ];
    row(path, &mut w, &head.map(String::from))?;
    for e in &history.epochs {
        row(
            path,
            &mut w,
            &[
                e.epoch.to_string(),
                e.lr.to_string(),
                e.total_loss.to_string(),
                opt(e.selective_loss),
                opt(e.auxiliary_loss),
                opt(e.soft_coverage),
                opt(e.hard_coverage),
                opt(e.selective_risk),
            ],
        )?;
    }
    finish(path, w)
}
