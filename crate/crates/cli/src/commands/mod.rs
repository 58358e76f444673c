pub mod analyze;
pub mod hmm;
pub mod simulate;
pub mod transmission;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use telegraph::signal::{bin_clicks, BinnedTrace};
use telegraph::simulate::ClickRecord;

pub(crate) fn positive(key: &str, v: f64) -> Result<f64> {
    if !(v > 0.0 && v.is_finite()) {
        bail!("{key} must be positive, got {v}");
    }
    Ok(v)
}

pub(crate) fn non_negative(key: &str, v: f64) -> Result<f64> {
    if !(v >= 0.0 && v.is_finite()) {
        bail!("{key} must be >= 0, got {v}");
    }
    Ok(v)
}

pub(crate) fn csv_line(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| v.to_string()).collect();
    parts.join(",")
}

/// Loads click files, checking each header.
pub(crate) fn load_records(paths: &[PathBuf]) -> Result<Vec<ClickRecord>> {
    paths
        .par_iter()
        .map(|p| ClickRecord::load(p).with_context(|| format!("loading {}", p.display())))
        .collect()
}

pub(crate) fn bin_all(records: &[ClickRecord], bin_width: f64) -> Result<Vec<BinnedTrace>> {
    records.par_iter().map(|r| Ok(bin_clicks(r, bin_width)?)).collect()
}

/// `0003_name` for the fourth input `dir/name.clicks`.
pub(crate) fn output_stem(index: usize, path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    format!("{index:04}_{stem}")
}
