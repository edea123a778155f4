//! Result files: JSON reports, CSV tables and binary PGM heatmaps.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::reconstruction::CoordRow;
use super::timing::TimingRow;
use super::train::MetricsReport;
use crate::error::{CocnError, Result};

/// Flat per-fold row of `folds.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRow {
    pub fold: usize,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub accuracy: f64,
    pub auc: Option<f64>,
    pub test_loss: f64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub mean_epoch_seconds: f64,
}

impl FoldRow {
    pub fn from_report(report: &MetricsReport) -> Vec<FoldRow> {
        report
            .folds
            .iter()
            .map(|f| FoldRow {
                fold: f.fold,
                train_size: f.train_size,
                val_size: f.val_size,
                test_size: f.test_size,
                accuracy: f.accuracy,
                auc: f.auc,
                test_loss: f.test_loss,
                epochs_run: f.epochs_run,
                best_epoch: f.best_epoch,
                mean_epoch_seconds: f.mean_epoch_seconds,
            })
            .collect()
    }
}

/// Reconstruction error for one relaxation factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MseRow {
    pub tau: f64,
    pub initial_mse: f64,
    pub mse: f64,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CocnError::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CocnError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| CocnError::io(path, e))?;
    w.flush().map_err(|e| CocnError::io(path, e))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CocnError::io(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Err(CocnError::MissingFile(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| row.map_err(CocnError::from))
        .collect()
}

/// `metrics.json` and `folds.csv` under `dir`.
pub fn write_metrics(dir: &Path, report: &MetricsReport) -> Result<()> {
    write_json(&dir.join("metrics.json"), report)?;
    write_csv(&dir.join("folds.csv"), &FoldRow::from_report(report))
}

pub fn write_timings(path: &Path, rows: &[TimingRow]) -> Result<()> {
    write_csv(path, rows)
}

pub fn write_coords(path: &Path, rows: &[CoordRow]) -> Result<()> {
    write_csv(path, rows)
}

/// 8-bit binary PGM, linearly scaled so the minimum maps to 0 and the
/// maximum to 255. A constant matrix is written as all zeros.
pub fn write_pgm(path: &Path, m: &Array2<f64>) -> Result<()> {
    let (h, w) = m.dim();
    let lo = m.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m.iter().any(|v| !v.is_finite()) {
        return Err(CocnError::Integrity(
            "heatmap has non-finite entries".into(),
        ));
    }
    let span = hi - lo;
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend(m.iter().map(|&v| {
        if span > 0.0 {
            ((v - lo) / span * 255.0).round() as u8
        } else {
            0
        }
    }));
    let mut f = create(path)?;
    f.write_all(&bytes).map_err(|e| CocnError::io(path, e))?;
    f.flush().map_err(|e| CocnError::io(path, e))
}

/// Parses a binary PGM written by [`write_pgm`].
pub fn read_pgm(path: &Path) -> Result<Array2<u8>> {
    let bytes = std::fs::read(path).map_err(|e| CocnError::io(path, e))?;
    let bad = |msg: &str| CocnError::Parse {
        line: 1,
        msg: format!("{}: {msg}", path.display()),
    };
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad("not an 8-bit P5 image"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    let data = bytes.get(pos + 1..).ok_or_else(|| bad("missing pixels"))?;
    if data.len() != w * h {
        return Err(bad("pixel count does not match the header"));
    }
    Array2::from_shape_vec((h, w), data.to_vec()).map_err(|_| bad("bad shape"))
}
