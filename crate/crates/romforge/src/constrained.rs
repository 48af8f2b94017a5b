//! Box-constrained Galerkin: per-mode coefficient bounds estimated from
//! snapshot data, and a quadratic-program step that replaces the plain solve
//! only when the Galerkin candidate leaves the box.
//!
//! Bounds come from the sample extrema of the snapshot projections
//! `a_n^k = (u^k, zeta_n)_V` widened by a margin:
//! `alpha_n = m_n - eps (M_n - m_n)`, `beta_n = M_n + eps (M_n - m_n)`.
//! The constrained step minimizes the Euclidean norm of the reduced Galerkin
//! residual subject to the box; when the unconstrained solution already
//! satisfies the bounds it is returned unchanged (same solve path, bit for
//! bit). The QP warm-starts from the previous step's active set.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fom::SnapshotSet;
use crate::pod::{InnerProduct, ReducedSpace};
use crate::qp::{self, BoundState};
use crate::rom::{self, integrate_with, ReducedOperators, RomError, RomTrajectory, StepStatus};

#[derive(Debug, Error)]
pub enum ConstrainedError {
    #[error("{0}")]
    Invalid(String),
}

/// Per-mode coefficient box with its source statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoxBounds {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    /// Margin applied to the sample range.
    pub margin: f64,
    pub sample_min: DVector<f64>,
    pub sample_max: DVector<f64>,
    pub anchor_mu: f64,
}

impl BoxBounds {
    pub fn n(&self) -> usize {
        self.lower.len()
    }

    /// Sample range `M - m` per mode.
    pub fn width(&self) -> DVector<f64> {
        &self.sample_max - &self.sample_min
    }

    /// Effectively unconstrained box for a given dimension.
    pub fn unbounded(n: usize) -> Self {
        BoxBounds {
            lower: DVector::from_element(n, -f64::MAX / 4.0),
            upper: DVector::from_element(n, f64::MAX / 4.0),
            margin: 0.0,
            sample_min: DVector::from_element(n, -f64::MAX / 4.0),
            sample_max: DVector::from_element(n, f64::MAX / 4.0),
            anchor_mu: f64::NAN,
        }
    }

    pub fn contains(&self, a: &DVector<f64>) -> bool {
        (0..self.n()).all(|i| a[i] >= self.lower[i] && a[i] <= self.upper[i])
    }

    pub fn clamp_into(&self, a: &mut DVector<f64>) {
        for i in 0..self.n() {
            a[i] = a[i].clamp(self.lower[i], self.upper[i]);
        }
    }
}

/// Sample minima and maxima of the snapshot projections on each mode.
pub fn coefficient_extrema(
    space: &ReducedSpace,
    gram: &DMatrix<f64>,
    data: &DMatrix<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let n = space.n();
    let mut min = DVector::from_element(n, f64::INFINITY);
    let mut max = DVector::from_element(n, f64::NEG_INFINITY);
    for k in 0..data.ncols() {
        let coeffs = space.coefficients(gram, &data.column(k).clone_owned());
        for i in 0..n {
            min[i] = min[i].min(coeffs[i]);
            max[i] = max[i].max(coeffs[i]);
        }
    }
    (min, max)
}

/// Estimate the coefficient box from snapshot data. The space must be
/// orthonormal in the V product realized by `gram`; a single snapshot yields
/// a degenerate box `alpha = beta`.
pub fn estimate_bounds(
    snapshots: &SnapshotSet,
    space: &ReducedSpace,
    gram: &DMatrix<f64>,
    eps: f64,
) -> Result<BoxBounds, ConstrainedError> {
    if snapshots.n_dof() != space.n_dof() {
        return Err(ConstrainedError::Invalid(
            "snapshots and space differ in n_h".into(),
        ));
    }
    if snapshots.is_empty() {
        return Err(ConstrainedError::Invalid("empty snapshot set".into()));
    }
    if space.inner != InnerProduct::H1 {
        return Err(ConstrainedError::Invalid(
            "coefficient bounds are defined against V-orthonormal modes".into(),
        ));
    }
    if !(eps >= 0.0) {
        return Err(ConstrainedError::Invalid(format!(
            "margin eps = {eps} must be >= 0"
        )));
    }
    let (sample_min, sample_max) = coefficient_extrema(space, gram, &snapshots.data);
    let widths = &sample_max - &sample_min;
    let lower = &sample_min - &widths * eps;
    let upper = &sample_max + &widths * eps;
    Ok(BoxBounds {
        lower,
        upper,
        margin: eps,
        sample_min,
        sample_max,
        anchor_mu: snapshots.mu,
    })
}

/// Per-anchor bounds: the l-th box is derived solely from the l-th anchor's
/// data (the piecewise-constant-in-parameter approximation).
pub fn bounds_per_anchor(
    snapshot_sets: &[SnapshotSet],
    spaces: &[ReducedSpace],
    gram: &DMatrix<f64>,
    eps: f64,
) -> Result<Vec<BoxBounds>, ConstrainedError> {
    if snapshot_sets.len() != spaces.len() {
        return Err(ConstrainedError::Invalid(
            "one snapshot set per anchor space is required".into(),
        ));
    }
    snapshot_sets
        .iter()
        .zip(spaces)
        .map(|(snaps, space)| estimate_bounds(snaps, space, gram, eps))
        .collect()
}

/// Fraction of steps whose Galerkin candidate already satisfied the box.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActivationReport {
    /// Per-mode rate: coordinate n of the Galerkin candidate inside
    /// [alpha_n, beta_n].
    pub per_mode: Vec<f64>,
    /// All coordinates inside simultaneously.
    pub global: f64,
    /// Steps counted (those past the transient cutoff).
    pub steps: usize,
}

/// One constrained step with an externally persisted active set.
///
/// Returns the Galerkin candidate alongside the accepted state so callers
/// can track activation statistics.
pub fn constrained_step_warm(
    ops: &ReducedOperators,
    a_j: &DVector<f64>,
    mu: f64,
    bounds: &BoxBounds,
    warm: &mut Vec<BoundState>,
) -> Result<(DVector<f64>, StepStatus, DVector<f64>), RomError> {
    let (lhs, rhs) = ops.assemble_system(a_j, mu);
    let galerkin = crate::linalg::lu_solve_checked(&lhs, &rhs, rom::LU_PIVOT_TOL)
        .map_err(|msg| RomError::StepFailure { step: 0, msg })?;
    if bounds.contains(&galerkin) {
        return Ok((galerkin.clone(), StepStatus::Galerkin, galerkin));
    }
    let mut h = lhs.transpose() * &lhs;
    qp::regularize_normal_matrix(&mut h);
    let g = lhs.transpose() * &rhs;
    let solution = qp::solve_box_ls_normal(
        &h,
        &g,
        &bounds.lower,
        &bounds.upper,
        &galerkin,
        warm,
        10 * ops.n,
    )
    .map_err(|e| RomError::StepFailure {
        step: 0,
        msg: e.to_string(),
    })?;
    Ok((solution.x, StepStatus::Constrained, galerkin))
}

/// One constrained step without warm-start bookkeeping.
pub fn constrained_step(
    ops: &ReducedOperators,
    a_j: &DVector<f64>,
    mu: f64,
    bounds: &BoxBounds,
) -> Result<(DVector<f64>, StepStatus), RomError> {
    let mut warm = Vec::new();
    constrained_step_warm(ops, a_j, mu, bounds, &mut warm).map(|(a, s, _)| (a, s))
}

/// Box-constrained integration over J steps with activation statistics over
/// the post-transient window. The prescribed initial coefficients are
/// clipped into the box: the constrained model's state space is the box.
pub fn constrained_integrate(
    ops: &ReducedOperators,
    a0: &DVector<f64>,
    mu: f64,
    j_total: usize,
    j0: usize,
    bounds: &BoxBounds,
) -> Result<(RomTrajectory, ActivationReport), RomError> {
    if bounds.n() != ops.n {
        return Err(RomError::Invalid(format!(
            "bounds have {} modes, operators {}",
            bounds.n(),
            ops.n
        )));
    }
    let mut start = a0.clone();
    bounds.clamp_into(&mut start);
    let mut warm: Vec<BoundState> = Vec::new();
    let mut per_mode = vec![0usize; ops.n];
    let mut global = 0usize;
    let mut counted = 0usize;
    let mut step_index = 0usize;
    let traj = integrate_with(ops, &start, mu, j_total, j0, |ops, a_j, mu| {
        let (a_next, status, galerkin) = constrained_step_warm(ops, a_j, mu, bounds, &mut warm)?;
        step_index += 1;
        if step_index > j0 {
            counted += 1;
            let mut all_in = true;
            for i in 0..ops.n {
                let inside = galerkin[i] >= bounds.lower[i] && galerkin[i] <= bounds.upper[i];
                if inside {
                    per_mode[i] += 1;
                } else {
                    all_in = false;
                }
            }
            if all_in {
                global += 1;
            }
        }
        Ok((a_next, status))
    })?;
    let denom = counted.max(1) as f64;
    let report = ActivationReport {
        per_mode: per_mode.iter().map(|&c| c as f64 / denom).collect(),
        global: global as f64 / denom,
        steps: counted,
    };
    Ok((traj, report))
}
