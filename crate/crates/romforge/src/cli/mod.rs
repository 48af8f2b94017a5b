//! Config-driven experiment runner.
//!
//! Each experiment is one JSON config (see [`config::ExperimentConfig`]) run
//! into a fresh artifact directory of CSV/JSON files. Every source of
//! randomness flows from the config seed, so a rerun into a clean directory
//! reproduces every artifact byte for byte.

pub mod config;
mod inspect;
mod parametric;
mod reproduce;
mod studies;

use std::fs;
use std::path::Path;

use thiserror::Error;

pub use config::{ConfigError, ExperimentConfig, ExperimentKind};
pub use inspect::inspect_dir;

#[derive(Debug, Error)]
pub enum CliError {
    /// Configuration or usage problems: exit code 2.
    #[error("{0}")]
    Config(String),
    /// Numerical or I/O failures during a run: exit code 3.
    #[error("{0}")]
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(_) => 3,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<crate::archive::ArchiveError> for CliError {
    fn from(e: crate::archive::ArchiveError) -> Self {
        CliError::Run(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(e.to_string())
    }
}

/// Prepare the artifact directory: refuse a non-empty existing one unless
/// forced, in which case it is wiped and recreated.
pub fn prepare_output_dir(dir: &Path, force: bool) -> Result<(), CliError> {
    if dir.exists() {
        let occupied = fs::read_dir(dir)
            .map(|mut entries| entries.next().is_some())
            .unwrap_or(false);
        if occupied {
            if !force {
                return Err(CliError::Config(format!(
                    "output directory {} exists and is not empty; pass --force to overwrite",
                    dir.display()
                )));
            }
            fs::remove_dir_all(dir).map_err(|e| CliError::Run(e.to_string()))?;
        }
    }
    fs::create_dir_all(dir).map_err(|e| CliError::Run(e.to_string()))?;
    Ok(())
}

/// Run the experiment described by the config into its output directory.
pub fn run_experiment(config: &ExperimentConfig, force: bool) -> Result<(), CliError> {
    config.validate()?;
    prepare_output_dir(&config.output_dir, force)?;
    // Echo the config into the artifact directory for replayability.
    let echo = serde_json::to_vec_pretty(config).map_err(|e| CliError::Run(e.to_string()))?;
    fs::write(config.output_dir.join("config.json"), echo)?;
    match config.kind {
        ExperimentKind::Reproduce => reproduce::run(config),
        ExperimentKind::Parametric => parametric::run(config),
        ExperimentKind::CvStudy => studies::run_cv_study(config),
        ExperimentKind::EpsSweep => studies::run_eps_sweep(config),
        ExperimentKind::PVsH => studies::run_p_vs_h(config),
    }
}

/// Deterministic float formatting shared by every CSV writer: shortest
/// round-trip form in exponent notation (plain decimals become unwieldy for
/// near-zero values).
pub(crate) fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

/// Write rows as CSV with a header line.
pub(crate) fn write_csv(path: &Path, header: &str, rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut text = String::with_capacity(rows.len() * 32 + header.len() + 1);
    text.push_str(header);
    text.push('\n');
    for row in rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}
