//! On-disk formats.
//!
//! * Snapshot archive: a directory with `meta.json` plus `snapshots.f64`
//!   (raw little-endian f64, column-major, n_h rows x K columns) and an
//!   optional `gram_V.f64` (n_h x n_h, same encoding). Doubles as the
//!   ingestion format for externally produced data.
//! * Reduced space: `space.json` (N, inner tag, anchor, eigenvalues) plus
//!   `modes.f64` (n_h x N, column-major).
//! * Trajectory CSV with header `j,t,a_1..a_N,status`.
//! * Box bounds as JSON, activation reports as `n,rate` CSV.
//! * Greedy state: `greedy.json` plus one `anchor_NNN/` directory per model;
//!   operators and indicator Gramians are rebuilt deterministically from the
//!   stored space on load.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constrained::{ActivationReport, BoxBounds};
use crate::fom::{FomKind, FomSpec, SnapshotSet};
use crate::greedy::{AnchorModel, GreedyConfig, GreedyState};
use crate::indicator::build_indicator;
use crate::pod::{InnerProduct, ReducedSpace};
use crate::rom::{assemble_operators, RomTrajectory, StepStatus};

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Format(String),
}

/// Raw little-endian f64 payload, column-major.
pub fn write_f64_matrix(path: &Path, m: &DMatrix<f64>) -> Result<(), ArchiveError> {
    let mut bytes = Vec::with_capacity(m.len() * 8);
    for x in m.as_slice() {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_f64_matrix(
    path: &Path,
    rows: usize,
    cols: usize,
) -> Result<DMatrix<f64>, ArchiveError> {
    let bytes = fs::read(path)?;
    if bytes.len() != rows * cols * 8 {
        return Err(ArchiveError::Format(format!(
            "{}: expected {} bytes for {rows}x{cols} f64, found {}",
            path.display(),
            rows * cols * 8,
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(DMatrix::from_column_slice(rows, cols, &values))
}

fn write_f64_vector(path: &Path, v: &DVector<f64>) -> Result<(), ArchiveError> {
    write_f64_matrix(path, &DMatrix::from_column_slice(v.len(), 1, v.as_slice()))
}

fn read_f64_vector(path: &Path, len: usize) -> Result<DVector<f64>, ArchiveError> {
    let m = read_f64_matrix(path, len, 1)?;
    Ok(m.column(0).clone_owned())
}

/// `meta.json` of a snapshot archive.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchiveMeta {
    pub kind: FomKind,
    pub n_h: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub dt: f64,
    pub dt_s: f64,
    #[serde(rename = "T0")]
    pub t0: f64,
    pub mu: f64,
    pub inner_product: InnerProduct,
}

/// Write a snapshot archive directory.
pub fn save_snapshot_archive(
    dir: &Path,
    snapshots: &SnapshotSet,
    inner: InnerProduct,
    gram: Option<&DMatrix<f64>>,
) -> Result<(), ArchiveError> {
    let spec = snapshots
        .spec
        .as_ref()
        .ok_or_else(|| ArchiveError::Format("snapshot set carries no spec metadata".into()))?;
    fs::create_dir_all(dir)?;
    let meta = ArchiveMeta {
        kind: spec.kind,
        n_h: snapshots.n_dof(),
        k: snapshots.len(),
        dt: spec.dt,
        dt_s: spec.dt_s,
        t0: spec.t0,
        mu: snapshots.mu,
        inner_product: inner,
    };
    fs::write(dir.join("meta.json"), serde_json::to_vec_pretty(&meta)?)?;
    write_f64_matrix(&dir.join("snapshots.f64"), &snapshots.data)?;
    if let Some(g) = gram {
        write_f64_matrix(&dir.join("gram_V.f64"), g)?;
    }
    Ok(())
}

/// Read a snapshot archive directory. Sampling times are reconstructed from
/// `T0 + k dt_s`; the optional V-matrix file is returned when present.
pub fn load_snapshot_archive(
    dir: &Path,
) -> Result<(SnapshotSet, ArchiveMeta, Option<DMatrix<f64>>), ArchiveError> {
    let meta: ArchiveMeta = serde_json::from_slice(&fs::read(dir.join("meta.json"))?)?;
    let data = read_f64_matrix(&dir.join("snapshots.f64"), meta.n_h, meta.k)?;
    let gram_path = dir.join("gram_V.f64");
    let gram = if gram_path.exists() {
        Some(read_f64_matrix(&gram_path, meta.n_h, meta.n_h)?)
    } else {
        None
    };
    let times = (1..=meta.k)
        .map(|k| meta.t0 + k as f64 * meta.dt_s)
        .collect();
    let snapshots = SnapshotSet {
        data,
        times,
        mu: meta.mu,
        spec: None,
    };
    Ok((snapshots, meta, gram))
}

#[derive(Debug, Serialize, Deserialize)]
struct SpaceMeta {
    n: usize,
    n_h: usize,
    inner: InnerProduct,
    anchor_mu: f64,
    eigenvalues: Vec<f64>,
}

pub fn save_space(dir: &Path, space: &ReducedSpace) -> Result<(), ArchiveError> {
    fs::create_dir_all(dir)?;
    let meta = SpaceMeta {
        n: space.n(),
        n_h: space.n_dof(),
        inner: space.inner,
        anchor_mu: space.anchor_mu,
        eigenvalues: space.eigenvalues.clone(),
    };
    fs::write(dir.join("space.json"), serde_json::to_vec_pretty(&meta)?)?;
    write_f64_matrix(&dir.join("modes.f64"), &space.modes)
}

pub fn load_space(dir: &Path) -> Result<ReducedSpace, ArchiveError> {
    let meta: SpaceMeta = serde_json::from_slice(&fs::read(dir.join("space.json"))?)?;
    let modes = read_f64_matrix(&dir.join("modes.f64"), meta.n_h, meta.n)?;
    Ok(ReducedSpace {
        modes,
        eigenvalues: meta.eigenvalues,
        inner: meta.inner,
        anchor_mu: meta.anchor_mu,
    })
}

/// Trajectory export: `j,t,a_1..a_N,status`. Row 0 carries the prescribed
/// initial coefficients with status `init`.
pub fn write_trajectory_csv(path: &Path, traj: &RomTrajectory) -> Result<(), ArchiveError> {
    let mut out = fs::File::create(path)?;
    let n = traj.n();
    let mut header = String::from("j,t");
    for i in 1..=n {
        header.push_str(&format!(",a_{i}"));
    }
    header.push_str(",status\n");
    out.write_all(header.as_bytes())?;
    for j in 0..=traj.j_total() {
        let mut line = format!("{j},{}", j as f64 * traj.dt);
        for i in 0..n {
            line.push_str(&format!(",{}", traj.coeffs[(i, j)]));
        }
        let status = if j == 0 {
            "init".to_string()
        } else {
            traj.status[j - 1].to_string()
        };
        line.push_str(&format!(",{status}\n"));
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}

/// Activation rates as `n,rate` plus a trailing `global` row.
pub fn write_activation_csv(path: &Path, report: &ActivationReport) -> Result<(), ArchiveError> {
    let mut out = fs::File::create(path)?;
    out.write_all(b"n,rate\n")?;
    for (i, rate) in report.per_mode.iter().enumerate() {
        out.write_all(format!("{},{}\n", i + 1, rate).as_bytes())?;
    }
    out.write_all(format!("global,{}\n", report.global).as_bytes())?;
    Ok(())
}

pub fn save_bounds(path: &Path, bounds: &BoxBounds) -> Result<(), ArchiveError> {
    fs::write(path, serde_json::to_vec_pretty(bounds)?)?;
    Ok(())
}

pub fn load_bounds(path: &Path) -> Result<BoxBounds, ArchiveError> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

#[derive(Debug, Serialize, Deserialize)]
struct GreedyMeta {
    spec: FomSpec,
    config: GreedyConfig,
    train: Vec<f64>,
    indicator_table: Vec<Vec<f64>>,
    anchors: Vec<GreedyAnchorMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GreedyAnchorMeta {
    mu_star: f64,
    train_idx: usize,
    eta: f64,
}

/// Serialize the offline greedy output: `greedy.json` plus per-anchor model
/// directories (space, bounds, initial coefficients, FOM mean).
pub fn save_greedy_state(dir: &Path, state: &GreedyState) -> Result<(), ArchiveError> {
    fs::create_dir_all(dir)?;
    let meta = GreedyMeta {
        spec: state.spec.clone(),
        config: state.config.clone(),
        train: state.train.clone(),
        indicator_table: state.indicator_table.clone(),
        anchors: state
            .anchors
            .iter()
            .map(|a| GreedyAnchorMeta {
                mu_star: a.mu_star,
                train_idx: a.train_idx,
                eta: a.eta,
            })
            .collect(),
    };
    fs::write(dir.join("greedy.json"), serde_json::to_vec_pretty(&meta)?)?;
    for (l, anchor) in state.anchors.iter().enumerate() {
        let adir = dir.join(format!("anchor_{l:03}"));
        save_space(&adir, &anchor.space)?;
        save_bounds(&adir.join("bounds.json"), &anchor.bounds)?;
        write_f64_vector(&adir.join("a0.f64"), &anchor.a0)?;
        write_f64_vector(&adir.join("fom_mean.f64"), &anchor.fom_mean_lifted)?;
    }
    Ok(())
}

/// Load a greedy state, rebuilding operators and indicator Gramians from the
/// stored spaces (deterministic, so the rebuilt model matches the saved one
/// bit for bit).
pub fn load_greedy_state(dir: &Path) -> Result<GreedyState, ArchiveError> {
    let meta: GreedyMeta = serde_json::from_slice(&fs::read(dir.join("greedy.json"))?)?;
    let provider = meta
        .spec
        .forms()
        .map_err(|e| ArchiveError::Format(e.to_string()))?;
    let mut anchors = Vec::with_capacity(meta.anchors.len());
    for (l, am) in meta.anchors.iter().enumerate() {
        let adir = dir.join(format!("anchor_{l:03}"));
        let space = load_space(&adir)?;
        let bounds = load_bounds(&adir.join("bounds.json"))?;
        let a0 = read_f64_vector(&adir.join("a0.f64"), space.n())?;
        let fom_mean_lifted = read_f64_vector(&adir.join("fom_mean.f64"), space.n_dof())?;
        let ops = assemble_operators(&space, provider.as_ref(), meta.spec.dt)
            .map_err(|e| ArchiveError::Format(e.to_string()))?;
        let indicator = build_indicator(&space, provider.as_ref())
            .map_err(|e| ArchiveError::Format(e.to_string()))?;
        anchors.push(AnchorModel {
            mu_star: am.mu_star,
            train_idx: am.train_idx,
            space,
            ops,
            bounds,
            indicator,
            eta: am.eta,
            a0,
            fom_mean_lifted,
        });
    }
    Ok(GreedyState {
        spec: meta.spec,
        config: meta.config,
        train: meta.train,
        anchors,
        indicator_table: meta.indicator_table,
    })
}

/// Count steps flagged by each status, a light summary for inspection.
pub fn status_counts(traj: &RomTrajectory) -> (usize, usize, usize) {
    let mut counts = (0usize, 0usize, 0usize);
    for s in &traj.status {
        match s {
            StepStatus::Galerkin => counts.0 += 1,
            StepStatus::Constrained => counts.1 += 1,
            StepStatus::Failed => counts.2 += 1,
        }
    }
    counts
}
