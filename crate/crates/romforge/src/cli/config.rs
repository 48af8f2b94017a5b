//! Experiment configuration: one JSON file per experiment.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fom::FomSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which experiment a config drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Solution reproduction: one FOM run, POD, both ROMs across the N list.
    Reproduce,
    /// Greedy offline plus online evaluation over a test set.
    Parametric,
    /// h-block cross-validation of the POD projection error across N.
    CvStudy,
    /// Constrained-margin sensitivity sweep.
    EpsSweep,
    /// Per-anchor spaces versus one merged deflated space at equal total
    /// dimension.
    PVsH,
}

/// Declarative experiment description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub fom: FomSpec,
    /// Artifact directory; the runner refuses to reuse a non-empty one
    /// without the force flag.
    pub output_dir: std::path::PathBuf,
    /// Parameter the single-run experiments use.
    #[serde(default)]
    pub mu: Option<f64>,
    /// Reduced dimensions to sweep.
    #[serde(default)]
    pub n_list: Vec<usize>,
    /// Margins to sweep (eps-sweep) or the single margin to use elsewhere.
    #[serde(default)]
    pub eps_list: Vec<f64>,
    #[serde(default)]
    pub p_train: Vec<f64>,
    #[serde(default)]
    pub p_test: Vec<f64>,
    #[serde(default)]
    pub l: Option<usize>,
    #[serde(default)]
    pub n_cand: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// CV block size; derived from the probe autocorrelation when absent.
    #[serde(default)]
    pub h_block: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_path(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read(path)?;
        let config: ExperimentConfig = serde_json::from_slice(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.fom
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let need = |cond: bool, msg: &str| {
            if cond {
                Ok(())
            } else {
                Err(ConfigError::Invalid(msg.into()))
            }
        };
        match self.kind {
            ExperimentKind::Reproduce => {
                need(self.mu.is_some(), "reproduce requires `mu`")?;
                need(!self.n_list.is_empty(), "reproduce requires `n_list`")?;
            }
            ExperimentKind::Parametric => {
                need(!self.p_train.is_empty(), "parametric requires `p_train`")?;
                need(!self.p_test.is_empty(), "parametric requires `p_test`")?;
                need(
                    !self.n_list.is_empty(),
                    "parametric requires `n_list` (first entry used)",
                )?;
                need(self.l.is_some(), "parametric requires `l`")?;
            }
            ExperimentKind::CvStudy => {
                need(self.mu.is_some(), "cv-study requires `mu`")?;
                need(!self.n_list.is_empty(), "cv-study requires `n_list`")?;
            }
            ExperimentKind::EpsSweep => {
                need(self.mu.is_some(), "eps-sweep requires `mu`")?;
                need(!self.eps_list.is_empty(), "eps-sweep requires `eps_list`")?;
                need(
                    !self.n_list.is_empty(),
                    "eps-sweep requires `n_list` (first entry used)",
                )?;
            }
            ExperimentKind::PVsH => {
                need(
                    self.p_train.len() >= 2,
                    "p-vs-h requires two anchors in `p_train`",
                )?;
                need(
                    !self.n_list.is_empty(),
                    "p-vs-h requires `n_list` (first entry used)",
                )?;
            }
        }
        Ok(())
    }

    /// Default margin when a single value is needed: first of `eps_list`, or
    /// 0.01 (reproduction) / 0.05 (parametric) following the study setups.
    pub fn margin(&self) -> f64 {
        if let Some(&eps) = self.eps_list.first() {
            return eps;
        }
        match self.kind {
            ExperimentKind::Parametric => 0.05,
            _ => 0.01,
        }
    }
}
