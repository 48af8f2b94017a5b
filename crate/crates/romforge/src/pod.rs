//! Proper orthogonal decomposition by the method of snapshots.
//!
//! The K x K Gramian `U_{kk'} = (u^k, u^{k'})_*` is eigendecomposed instead
//! of the n_h x n_h covariance; modes are snapshot combinations
//! `zeta_n = (1/sqrt(lambda_n)) sum_k (v_n)_k u^k`, re-orthonormalized with a
//! single modified Gram-Schmidt pass in the chosen inner product, and given a
//! deterministic sign (largest-magnitude nodal entry positive, ties broken by
//! lowest index) so repeated builds are bit-identical.
//!
//! The module also provides deflated space merging (POD of `(I - Pi) u^k`
//! appended to an existing basis) and h-block cross-validation of the
//! out-of-sample projection error, where the h snapshots before and after the
//! held-out index are removed from the training fold to break serial
//! correlation.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fom::SnapshotSet;
use crate::linalg;
use crate::metrics;

/// Inner product a reduced space is orthonormal in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InnerProduct {
    /// The energy product `(.,.)_V`.
    H1,
    /// The mass product.
    L2,
}

#[derive(Debug, Error)]
pub enum PodError {
    #[error("requested {requested} modes but numerical rank is {achievable}")]
    RankDeficient { requested: usize, achievable: usize },
    #[error("snapshots already contained in the base space")]
    AlreadyContained,
    #[error("{0}")]
    Invalid(String),
}

/// An N-dimensional reduced space: orthonormal modes, the full eigenvalue
/// diagnostics of the Gramian they came from, and the anchor parameter.
#[derive(Debug, Clone)]
pub struct ReducedSpace {
    /// n_h x N mode matrix, columns orthonormal in the tagged inner product.
    pub modes: DMatrix<f64>,
    /// All K Gramian eigenvalues (clamped at zero), kept for diagnostics.
    /// For merged spaces the list concatenates the base block and the
    /// deflated block.
    pub eigenvalues: Vec<f64>,
    pub inner: InnerProduct,
    /// Parameter of the generating snapshot set.
    pub anchor_mu: f64,
}

impl ReducedSpace {
    pub fn n(&self) -> usize {
        self.modes.ncols()
    }

    pub fn n_dof(&self) -> usize {
        self.modes.nrows()
    }

    /// Coefficients of `field` against the modes in the inner product with
    /// matrix `gram`: `a_n = (field, zeta_n)_*`. For orthonormal modes these
    /// are the projection coefficients.
    pub fn coefficients(&self, gram: &DMatrix<f64>, field: &DVector<f64>) -> DVector<f64> {
        self.modes.transpose() * (gram * field)
    }

    /// Reconstruct a field from coefficients.
    pub fn reconstruct(&self, coeffs: &DVector<f64>) -> DVector<f64> {
        &self.modes * coeffs
    }

    /// Max-norm orthonormality defect `||Z^T G Z - I||_max`.
    pub fn orthonormality_defect(&self, gram: &DMatrix<f64>) -> f64 {
        linalg::orthonormality_defect(&self.modes, gram)
    }
}

/// Build an N-mode reduced space from snapshots in the inner product with
/// matrix `gram` (which must realize the tagged product).
pub fn pod_build(
    snapshots: &SnapshotSet,
    n: usize,
    inner: InnerProduct,
    gram: &DMatrix<f64>,
) -> Result<ReducedSpace, PodError> {
    snapshots
        .validate()
        .map_err(|e| PodError::Invalid(e.to_string()))?;
    let k = snapshots.len();
    if n == 0 || n > k {
        return Err(PodError::Invalid(format!("N = {n} outside 1..=K = {k}")));
    }
    if gram.nrows() != snapshots.n_dof() {
        return Err(PodError::Invalid("Gramian dimension mismatch".into()));
    }
    let (eigenvalues, mut modes) =
        snapshot_modes(&snapshots.data, n, gram).map_err(|achievable| PodError::RankDeficient {
            requested: n,
            achievable,
        })?;
    mgs_orthonormalize(&mut modes, gram, 0).map_err(|achievable| PodError::RankDeficient {
        requested: n,
        achievable,
    })?;
    apply_sign_convention(&mut modes);
    Ok(ReducedSpace {
        modes,
        eigenvalues,
        inner,
        anchor_mu: snapshots.mu,
    })
}

/// Gramian eigen-pass shared by `pod_build` and the deflated merge. Returns
/// the full clamped eigenvalue list and the first `n` raw (pre-MGS) modes;
/// `Err(achievable)` when `n` exceeds the numerical rank.
fn snapshot_modes(
    data: &DMatrix<f64>,
    n: usize,
    gram: &DMatrix<f64>,
) -> Result<(Vec<f64>, DMatrix<f64>), usize> {
    let weighted = gram * data;
    let gramian = data.transpose() * weighted;
    let (mut eigenvalues, vectors) = linalg::symmetric_eigen_desc(&gramian);
    for lam in eigenvalues.iter_mut() {
        if *lam < 0.0 {
            *lam = 0.0;
        }
    }
    let lead = eigenvalues[0];
    let achievable = eigenvalues
        .iter()
        .take_while(|&&lam| lead > 0.0 && lam / lead >= 1e-14)
        .count();
    if n > achievable {
        return Err(achievable);
    }
    let mut modes = DMatrix::zeros(data.nrows(), n);
    for (j, lam) in eigenvalues.iter().take(n).enumerate() {
        let coeff = vectors.column(j) / lam.sqrt();
        modes.set_column(j, &(data * coeff));
    }
    Ok((eigenvalues, modes))
}

/// One modified Gram-Schmidt pass in the `gram` product, leaving the first
/// `frozen` columns untouched. `Err(rank)` if a column collapses below 1e-12.
fn mgs_orthonormalize(
    modes: &mut DMatrix<f64>,
    gram: &DMatrix<f64>,
    frozen: usize,
) -> Result<(), usize> {
    let n = modes.ncols();
    for j in frozen..n {
        let mut col = modes.column(j).clone_owned();
        for i in 0..j {
            let prev = modes.column(i);
            let proj = (gram * &col).dot(&prev);
            col -= prev * proj;
        }
        let norm = (gram * &col).dot(&col).max(0.0).sqrt();
        if norm < 1e-12 {
            return Err(j);
        }
        col /= norm;
        modes.set_column(j, &col);
    }
    Ok(())
}

/// Flip each column so its largest-magnitude entry is positive; ties broken
/// by lowest index. Makes the basis independent of eigensolver sign choices.
fn apply_sign_convention(modes: &mut DMatrix<f64>) {
    for j in 0..modes.ncols() {
        let col = modes.column(j);
        let mut best = 0usize;
        let mut best_abs = 0.0;
        for (i, &x) in col.iter().enumerate() {
            if x.abs() > best_abs {
                best_abs = x.abs();
                best = i;
            }
        }
        if col[best] < 0.0 {
            let flipped = -col.clone_owned();
            modes.set_column(j, &flipped);
        }
    }
}

/// Fluctuation energy fraction `r_N = sum_{2..N} lambda / sum_{2..K} lambda`.
/// The first eigenvalue is excluded: its mode tracks the mean flow and does
/// not contribute to the fluctuating field. A zero denominator (no
/// fluctuation energy at all) is defined as 1.
pub fn energy_ratio(space: &ReducedSpace, n: usize) -> Result<f64, PodError> {
    let k = space.eigenvalues.len();
    if n < 2 || n > k {
        return Err(PodError::Invalid(format!("N = {n} outside 2..=K = {k}")));
    }
    let num: f64 = space.eigenvalues[1..n].iter().sum();
    let den: f64 = space.eigenvalues[1..k].iter().sum();
    if den == 0.0 {
        return Ok(1.0);
    }
    Ok(num / den)
}

/// Mean squared projection error of the columns of `data` onto the space:
/// `(1/K) sum_k ||u^k - Pi u^k||_*^2`.
pub fn projection_error_mean(
    space: &ReducedSpace,
    data: &DMatrix<f64>,
    gram: &DMatrix<f64>,
) -> f64 {
    let k = data.ncols();
    let mut acc = 0.0;
    for j in 0..k {
        let x = data.column(j).clone_owned();
        let coeffs = space.modes.transpose() * (gram * &x);
        let residual = &x - space.reconstruct(&coeffs);
        acc += (gram * &residual).dot(&residual);
    }
    acc / k as f64
}

/// Enrich `base` with `n2` POD modes of the deflated snapshots
/// `(I - Pi_base) u^k`. The first `base.n()` columns of the result are the
/// base modes unchanged.
pub fn pod_merge_deflated(
    base: &ReducedSpace,
    snapshots: &SnapshotSet,
    n2: usize,
    gram: &DMatrix<f64>,
) -> Result<ReducedSpace, PodError> {
    snapshots
        .validate()
        .map_err(|e| PodError::Invalid(e.to_string()))?;
    if base.n_dof() != snapshots.n_dof() {
        return Err(PodError::Invalid(
            "base space and snapshots differ in n_h".into(),
        ));
    }
    let n1 = base.n();
    if n1 == 0 {
        return pod_build(snapshots, n2, base.inner, gram);
    }
    let k = snapshots.len();
    if n2 == 0 || n2 > k {
        return Err(PodError::Invalid(format!("N2 = {n2} outside 1..=K = {k}")));
    }

    let mut deflated = snapshots.data.clone();
    let mut scale = 0.0_f64;
    let mut deflated_scale = 0.0_f64;
    for j in 0..k {
        let x = deflated.column(j).clone_owned();
        scale = scale.max((gram * &x).dot(&x));
        let coeffs = base.modes.transpose() * (gram * &x);
        let y = &x - base.reconstruct(&coeffs);
        deflated_scale = deflated_scale.max((gram * &y).dot(&y));
        deflated.set_column(j, &y);
    }
    if deflated_scale <= 1e-24 * scale {
        return Err(PodError::AlreadyContained);
    }

    let (new_eigs, new_modes) =
        snapshot_modes(&deflated, n2, gram).map_err(|achievable| PodError::RankDeficient {
            requested: n2,
            achievable,
        })?;
    let mut modes = DMatrix::zeros(base.n_dof(), n1 + n2);
    for j in 0..n1 {
        modes.set_column(j, &base.modes.column(j));
    }
    for j in 0..n2 {
        modes.set_column(n1 + j, &new_modes.column(j));
    }
    mgs_orthonormalize(&mut modes, gram, n1).map_err(|rank| PodError::RankDeficient {
        requested: n1 + n2,
        achievable: rank,
    })?;
    // Sign convention on the new block only; the base block must stay equal
    // to the base modes.
    let mut new_block = modes.columns(n1, n2).clone_owned();
    apply_sign_convention(&mut new_block);
    for j in 0..n2 {
        modes.set_column(n1 + j, &new_block.column(j));
    }

    let mut eigenvalues: Vec<f64> = base.eigenvalues[..n1.min(base.eigenvalues.len())].to_vec();
    eigenvalues.extend_from_slice(&new_eigs);
    Ok(ReducedSpace {
        modes,
        eigenvalues,
        inner: base.inner,
        anchor_mu: base.anchor_mu,
    })
}

/// h-block cross-validation report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvReport {
    /// CV estimate of the out-of-sample projection error.
    pub e_hat: f64,
    /// In-sample projection error of the full-data space.
    pub e_in: f64,
    /// Projection error on held-out data, when the caller supplies any.
    pub e_out: Option<f64>,
    pub h: usize,
    pub n: usize,
}

/// h-block cross-validation of the N-mode POD projection error.
///
/// For every k the training fold removes snapshots k-h..k+h (clipped to the
/// sample range); h = 0 is exactly leave-one-out. Folds are independent and
/// evaluated in parallel, reduced in index order.
pub fn hblock_cv(
    snapshots: &SnapshotSet,
    h: usize,
    n: usize,
    inner: InnerProduct,
    gram: &DMatrix<f64>,
) -> Result<CvReport, PodError> {
    snapshots
        .validate()
        .map_err(|e| PodError::Invalid(e.to_string()))?;
    let k = snapshots.len();
    if k < 2 * h + 2 {
        return Err(PodError::Invalid(format!("K = {k} too small for h = {h}")));
    }
    let max_n = k - 2 * h - 1;
    if n > max_n {
        return Err(PodError::Invalid(format!(
            "N = {n} infeasible for K = {k}, h = {h}; max feasible N = {max_n}"
        )));
    }

    let full = pod_build(snapshots, n, inner, gram)?;
    let e_in = projection_error_mean(&full, &snapshots.data, gram);

    let fold_errors: Result<Vec<f64>, PodError> = (0..k)
        .into_par_iter()
        .map(|idx| {
            let keep: Vec<usize> = (0..k).filter(|&j| j + h < idx || j > idx + h).collect();
            let mut fold_data = DMatrix::zeros(snapshots.n_dof(), keep.len());
            for (dst, &src) in keep.iter().enumerate() {
                fold_data.set_column(dst, &snapshots.data.column(src));
            }
            let (_, mut fold_modes) =
                snapshot_modes(&fold_data, n, gram).map_err(|achievable| {
                    PodError::RankDeficient {
                        requested: n,
                        achievable,
                    }
                })?;
            mgs_orthonormalize(&mut fold_modes, gram, 0).map_err(|achievable| {
                PodError::RankDeficient {
                    requested: n,
                    achievable,
                }
            })?;
            let x = snapshots.data.column(idx).clone_owned();
            let coeffs = fold_modes.transpose() * (gram * &x);
            let residual = &x - &fold_modes * coeffs;
            Ok((gram * &residual).dot(&residual))
        })
        .collect();
    let e_hat = fold_errors?.iter().sum::<f64>() / k as f64;

    Ok(CvReport {
        e_hat,
        e_in,
        e_out: None,
        h,
        n,
    })
}

/// Default CV block size from the autocorrelation of a probe series: the
/// smallest lag with autocorrelation below 0.8, in units of the sampling
/// period. Returns at least 1; capped at a quarter of the series length.
pub fn suggested_h(probe: &[f64], dt: f64, dt_s: f64) -> usize {
    let cap = (probe.len() / 4).max(1);
    let mut tau = cap as f64 * dt;
    for kappa in 1..cap {
        match metrics::autocorrelation(probe, kappa) {
            Ok(rho) if rho < 0.8 => {
                tau = kappa as f64 * dt;
                break;
            }
            Ok(_) => {}
            Err(_) => break,
        }
    }
    ((tau / dt_s).ceil() as usize).max(1)
}


#[cfg(test)]
mod h_tests {
    use super::suggested_h;

    #[test]
    fn suggested_h_tracks_correlation_length() {
        // Slowly varying series: correlation above 0.8 persists for many
        // lags, so the block extends beyond one sampling period.
        let slow: Vec<f64> = (0..400).map(|i| (i as f64 * 0.01).sin()).collect();
        let h_slow = suggested_h(&slow, 0.1, 0.2);
        assert!(h_slow > 1, "h = {h_slow}");

        // White-noise-like series decorrelates immediately.
        let fast: Vec<f64> = (0..400)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        assert_eq!(suggested_h(&fast, 0.1, 0.2), 1);
    }
}

#[cfg(test)]
mod merge_tests {
    use super::*;
    use crate::fom::{run_fom, FomKind, FomSpec};

    #[test]
    fn merged_space_dominates_constituents_on_their_own_data() {
        // Two runs at different hyperviscosities. The merged space contains
        // the first anchor's modes outright, and its deflated block is the
        // optimal complement for the second anchor's data, so on each
        // parameter's own snapshots the merged projection error is no worse
        // than the same-size single-space error.
        let spec = FomSpec {
            kind: FomKind::KsPeriodic,
            n_h: 32,
            domain_length: 22.0,
            boundary: (0.0, 0.0),
            mu_range: (0.5, 1.5),
            dt: 0.05,
            t_final: 150.0,
            t0: 50.0,
            dt_s: 1.0,
            n_snapshots: 80,
        };
        let provider = spec.forms().unwrap();
        let gram = provider.gram_v();
        let run_a = run_fom(&spec, 0.8).unwrap();
        let run_b = run_fom(&spec, 1.2).unwrap();
        let n = 4;
        let space_a = pod_build(&run_a.snapshots, n, InnerProduct::H1, gram).unwrap();
        let space_b = pod_build(&run_b.snapshots, n, InnerProduct::H1, gram).unwrap();
        let merged = pod_merge_deflated(&space_a, &run_b.snapshots, n, gram).unwrap();
        assert_eq!(merged.n(), 2 * n);

        let err_merged_a = projection_error_mean(&merged, &run_a.snapshots.data, gram);
        let err_a = projection_error_mean(&space_a, &run_a.snapshots.data, gram);
        assert!(err_merged_a <= err_a + 1e-12, "{err_merged_a} vs {err_a}");

        let err_merged_b = projection_error_mean(&merged, &run_b.snapshots.data, gram);
        let err_b = projection_error_mean(&space_b, &run_b.snapshots.data, gram);
        assert!(err_merged_b <= err_b + 1e-12, "{err_merged_b} vs {err_b}");
    }
}
