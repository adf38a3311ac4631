//! CSV artifacts. Every file is written to a temporary sibling first and
//! renamed into place.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use vaml_lab_core::mbrl::RunRecord;

use crate::error::{io_err, LabError, Result};

/// One row of a per-run CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub method: String,
    pub seed: u64,
    pub env_steps: usize,
    pub mean_return: f64,
    pub std_return: f64,
}

/// One row of `curves.csv`: the across-seed mean and standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub env_steps: usize,
    pub runs: usize,
    pub mean_return: f64,
    pub se_return: f64,
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(tmp.path()))?;
    tmp.persist(path).map_err(|e| LabError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    w.into_inner().map_err(|e| LabError::Csv(e.into_error().into()))
}

pub fn curve_rows(record: &RunRecord) -> Vec<CurveRow> {
    record
        .curve
        .iter()
        .map(|p| CurveRow {
            method: record.method.clone(),
            seed: record.seed,
            env_steps: p.env_steps,
            mean_return: p.mean_return,
            std_return: p.std_return,
        })
        .collect()
}

/// Writes `method,seed,env_steps,mean_return,std_return`. A run with no
/// evaluations still gets its header row.
pub fn write_run_csv(path: &Path, record: &RunRecord) -> Result<()> {
    let rows = curve_rows(record);
    if rows.is_empty() {
        return write_atomic(path, b"method,seed,env_steps,mean_return,std_return\n");
    }
    write_atomic(path, &to_csv(&rows)?)
}

pub fn read_curve_csv(path: &Path) -> Result<Vec<CurveRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(LabError::from)).collect()
}

/// Mean and standard error across runs at each evaluation point, in method
/// order of first appearance. Runs that stopped early simply contribute to
/// fewer points; `runs` says how many were averaged.
pub fn aggregate(records: &[&RunRecord]) -> Vec<AggregateRow> {
    let mut order: Vec<&str> = Vec::new();
    let mut points: BTreeMap<(&str, usize), Vec<f64>> = BTreeMap::new();
    for r in records {
        if !order.contains(&r.method.as_str()) {
            order.push(&r.method);
        }
        for p in &r.curve {
            points.entry((&r.method, p.env_steps)).or_default().push(p.mean_return);
        }
    }
    let mut out = Vec::new();
    for method in order {
        for ((_, env_steps), xs) in points.range((method, 0)..=(method, usize::MAX)) {
            let (mean, se) = mean_and_se(xs);
            out.push(AggregateRow {
                method: method.to_string(),
                env_steps: *env_steps,
                runs: xs.len(),
                mean_return: mean,
                se_return: se,
            });
        }
    }
    out
}

/// Sample mean and `s / sqrt(n)`; the error is 0 for a single value.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
