//! Reproducible experiments over the rigidity laboratory.
//!
//! A run reads an [`ExperimentConfig`], validates it, executes one named
//! experiment and writes its CSV tables plus `<experiment>.json`, a summary
//! with the config echo and the build version.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiments;

use std::path::{Path, PathBuf};

use serde_json::json;

pub use config::{Experiment, ExperimentConfig};
pub use error::{LabError, LabResult};

/// Version string in `git describe` style.
pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"), "-", env!("RIGID_LAB_DESCRIBE"));

/// Where a run wrote its files.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
}

/// Validates, runs and writes one experiment. A violated invariant is
/// returned as an error after all outputs are on disk.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> LabResult<RunArtifacts> {
    let exp = cfg.validate()?;
    let outcome = experiments::run_experiment(exp, cfg)?;
    std::fs::create_dir_all(out)?;
    experiments::write_tables(out, &outcome)?;
    let mut files: Vec<PathBuf> = outcome.tables.iter().map(|(name, _)| out.join(name)).collect();
    let summary = json!({
        "experiment": exp.name(),
        "version": VERSION,
        "config": serde_json::to_value(cfg).expect("config serializes"),
        "results": outcome.results,
        "violation": outcome.violation,
    });
    let path = out.join(format!("{}.json", exp.name()));
    let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    text.push('\n');
    std::fs::write(&path, text)?;
    files.push(path);
    if let Some(v) = outcome.violation {
        return Err(LabError::Core(rigid_core::Error::Invariant(v)));
    }
    Ok(RunArtifacts {
        dir: out.to_path_buf(),
        files,
    })
}
