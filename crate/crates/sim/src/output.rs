//! CSV output of experiment results.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::experiment::ExperimentResult;

pub const RESULTS_HEADER: [&str; 7] = ["preset", "estimator", "grid_name", "grid_value", "mean_error", "se", "k_effective"];
pub const PAIRS_HEADER: [&str; 7] = ["estimator_a", "estimator_b", "grid_value", "mean_diff", "se_diff", "t", "p"];

/// `results.csv` -> `results_pairs.csv`.
pub fn pairs_path(results: &Path) -> PathBuf {
    let stem = results.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "results".into());
    results.with_file_name(format!("{stem}_pairs.csv"))
}

fn num(v: f64) -> String {
    format!("{v}")
}

pub fn write_results<W: Write>(writer: W, result: &ExperimentResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RESULTS_HEADER)?;
    for r in &result.rows {
        w.write_record([
            r.preset.clone(),
            r.estimator.clone(),
            r.grid_name.clone(),
            num(r.grid_value),
            num(r.mean_error),
            num(r.se),
            r.k_effective.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_pairs<W: Write>(writer: W, result: &ExperimentResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(PAIRS_HEADER)?;
    for r in &result.pairs {
        w.write_record([
            r.estimator_a.clone(),
            r.estimator_b.clone(),
            num(r.grid_value),
            num(r.mean_diff),
            num(r.se_diff),
            num(r.t),
            num(r.p),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Write the results file and its `_pairs` sibling; returns both paths.
pub fn write_csvs(path: &Path, result: &ExperimentResult) -> Result<(PathBuf, PathBuf)> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_results(File::create(path)?, result)?;
    let pairs = pairs_path(path);
    write_pairs(File::create(&pairs)?, result)?;
    Ok((path.to_path_buf(), pairs))
}
