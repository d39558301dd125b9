//! End-to-end experiments behind the command-line tool. Each runner returns
//! a report that can print a table and write its artifacts to a directory.

use std::path::{Path, PathBuf};

use nalgebra::DVector;

use crate::error::{Error, Result};

mod appendix_b;
mod multitask;
mod theorem;
mod width_sweep;

pub use appendix_b::{appendix_b, appendix_b_architecture, AppendixBConfig, AppendixBReport, SeedResult};
pub use multitask::{multitask_demo, MethodScore, MultitaskConfig, MultitaskReport};
pub use theorem::{theorem_check, theorem_check_on, TheoremCheckConfig, TheoremCheckReport};
pub use width_sweep::{width_sweep, WidthSweepConfig, WidthSweepReport, WidthSweepRow};

/// `points` equispaced values on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..points)
            .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// Largest componentwise difference of two predictors over `xs`.
pub fn sup_distance(
    xs: &[f64],
    f: impl Fn(f64) -> DVector<f64>,
    g: impl Fn(f64) -> DVector<f64>,
) -> f64 {
    xs.iter().map(|&x| (f(x) - g(x)).amax()).fold(0.0, f64::max)
}

pub(crate) fn write_artifact(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub(crate) fn pass_word(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

pub(crate) const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];
