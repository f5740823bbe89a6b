//! Time-series input/output and synthetic draws from the model.
//!
//! Series files are two-column CSV (time, value) with optional `#` comment
//! lines and an optional textual header. Times carrying identical values
//! are collapsed by averaging before the training set is built, since
//! coincident samples are indistinguishable to the kernel apart from their
//! noise.

use std::path::Path;

use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::covmodel::{CovarianceModel, HyperPoint, KernelParams};
use crate::error::{Error, Result};
use crate::gpcore::{build_matrix, cholesky_with_jitter, TrainingSet};

/// A loaded series plus bookkeeping about what loading had to do.
#[derive(Clone, Debug)]
pub struct SeriesFile {
    pub data: TrainingSet,
    /// Rows removed by averaging coincident times.
    pub n_collapsed: usize,
}

/// Draw one realization of the process at the given times: y = L z with
/// K = L L^T and z standard normal. The same jitter policy as training
/// applies, so draws from nearly singular kernels stay finite.
pub fn sample_gp(
    model: &CovarianceModel,
    point: &HyperPoint,
    ts: &[f64],
    seed: u64,
) -> Result<Vec<f64>> {
    if ts.is_empty() {
        return Err(Error::DegenerateData("cannot sample at zero times".into()));
    }
    let params = KernelParams::new(model, point)?;
    let k = build_matrix(&params, ts);
    let (chol, _) = cholesky_with_jitter(&k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = DVector::from_iterator(ts.len(), (0..ts.len()).map(|_| rng.sample(StandardNormal)));
    let y = chol.l() * z;
    Ok(y.as_slice().to_vec())
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse { line, message: format!("{other:?}") },
    }
}

/// Read a two-column series file. `#` starts a comment, a leading textual
/// header row is skipped, rows are sorted by time, and rows with exactly
/// equal times are averaged.
pub fn load_series<P: AsRef<Path>>(path: P) -> Result<SeriesFile> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path.as_ref())
        .map_err(csv_error)?;

    let mut rows: Vec<(f64, f64)> = Vec::new();
    let mut first = true;
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected 2 columns (time, value), got {}", rec.len()),
            });
        }
        let t = rec[0].parse::<f64>();
        let y = rec[1].parse::<f64>();
        match (t, y) {
            (Ok(t), Ok(y)) => rows.push((t, y)),
            (Err(_), Err(_)) if first => {} // header row
            (t, _) => {
                let (col, field) = if t.is_err() { ("time", &rec[0]) } else { ("value", &rec[1]) };
                return Err(Error::Parse {
                    line,
                    message: format!("{col} column is not a number: {field:?}"),
                });
            }
        }
        first = false;
    }
    if rows.len() < 2 {
        return Err(Error::DegenerateData(format!(
            "series file holds {} data row(s); at least 2 are needed",
            rows.len()
        )));
    }

    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut ts = Vec::with_capacity(rows.len());
    let mut ys = Vec::with_capacity(rows.len());
    let mut n_collapsed = 0usize;
    let mut i = 0;
    while i < rows.len() {
        let mut j = i + 1;
        let mut sum = rows[i].1;
        while j < rows.len() && rows[j].0 == rows[i].0 {
            sum += rows[j].1;
            j += 1;
        }
        ts.push(rows[i].0);
        ys.push(sum / (j - i) as f64);
        n_collapsed += j - i - 1;
        i = j;
    }

    Ok(SeriesFile { data: TrainingSet::new(ts, ys)?, n_collapsed })
}

/// Write a two-column series file with a `t,y` header. Values are printed
/// in Rust's shortest round-trip form, so load_series recovers them
/// exactly.
pub fn write_series<P: AsRef<Path>>(path: P, ts: &[f64], ys: &[f64]) -> Result<()> {
    if ts.len() != ys.len() {
        return Err(Error::DimensionMismatch { what: "series columns", expected: ts.len(), got: ys.len() });
    }
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(csv_error)?;
    w.write_record(["t", "y"]).map_err(csv_error)?;
    for (t, y) in ts.iter().zip(ys) {
        w.write_record([format!("{t}"), format!("{y}")]).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Training set restricted to the given sample indices (any order,
/// duplicates rejected by the constructor).
pub fn subset(data: &TrainingSet, idx: &[usize]) -> Result<TrainingSet> {
    let mut ts = Vec::with_capacity(idx.len());
    let mut ys = Vec::with_capacity(idx.len());
    for &i in idx {
        if i >= data.n() {
            return Err(Error::DimensionMismatch { what: "subset index", expected: data.n(), got: i });
        }
        ts.push(data.ts()[i]);
        ys.push(data.ys()[i]);
    }
    TrainingSet::new(ts, ys)
}

/// Every k-th sample, starting from the first.
pub fn subset_stride(data: &TrainingSet, k: usize) -> Result<TrainingSet> {
    if k == 0 {
        return Err(Error::DegenerateData("stride must be positive".into()));
    }
    let idx: Vec<usize> = (0..data.n()).step_by(k).collect();
    subset(data, &idx)
}

/// Samples with lo <= t < hi.
pub fn subset_time_window(data: &TrainingSet, lo: f64, hi: f64) -> Result<TrainingSet> {
    let idx: Vec<usize> = (0..data.n())
        .filter(|&i| data.ts()[i] >= lo && data.ts()[i] < hi)
        .collect();
    if idx.is_empty() {
        return Err(Error::DegenerateData(format!(
            "no samples inside time window [{lo}, {hi})"
        )));
    }
    subset(data, &idx)
}
