//! Time-averaged residual dual-norm error indicator.
//!
//! For a reduced trajectory `{w^j = sum_n a_n^j zeta_n}` the indicator is the
//! dual norm over the discrete space of the time-averaged step residual
//!
//! ```text
//! <R>(v) = (dt/(T-T0)) sum_{j=J0}^{J-1} e(w^j, w^{j+1}, v),
//! ```
//!
//! with `e` the semi-implicit step form. Because the residual is affine in a
//! fixed catalogue of fields, `<R>(v) = sum_m Theta_m (xi_m, v)_V` with Riesz
//! representers `xi_m` solved offline against the V matrix (one Cholesky
//! factorization reused for all right-hand sides) and trajectory-dependent
//! weights `Theta`. Online,
//!
//! ```text
//! Delta^u = sqrt(Theta^T Sigma Theta),   Sigma_{mm'} = (xi_m, xi_{m'})_V.
//! ```
//!
//! The catalogue, in storage order, holds mass terms (N), affine terms per
//! block (Q x N), lift-advecting-trial terms (N), convective pair terms
//! (N^2), trial-advecting-lift terms (N), lift-affine constants (Q), and the
//! lift-lift convective constant (1): M = N^2 + (3+Q) N + Q + 1 entries.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fom::{FormProvider, ThetaFamily};
use crate::pod::{InnerProduct, ReducedSpace};
use crate::rom::RomTrajectory;

#[derive(Debug, Error)]
pub enum IndicatorError {
    #[error("{0}")]
    Invalid(String),
    #[error("V-matrix Cholesky factorization failed")]
    NotSpd,
    #[error("quadratic form {value:.3e} below the negativity tolerance {tol:.3e}")]
    NegativeForm { value: f64, tol: f64 },
    #[error("anchor effectivity must be positive, got {0}")]
    BadEffectivity(f64),
}

/// Storage layout of the representer catalogue for N modes and Q affine
/// blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RieszLayout {
    pub n: usize,
    pub q: usize,
}

impl RieszLayout {
    pub fn total(&self) -> usize {
        self.n * self.n + (3 + self.q) * self.n + self.q + 1
    }

    pub fn mass(&self, n: usize) -> usize {
        n
    }

    pub fn affine(&self, q: usize, n: usize) -> usize {
        self.n + q * self.n + n
    }

    pub fn conv_lift(&self, n: usize) -> usize {
        self.n * (1 + self.q) + n
    }

    /// Convective pair (m = implicit-slot mode, n = explicit-slot mode).
    pub fn conv_pair(&self, m: usize, n: usize) -> usize {
        self.n * (2 + self.q) + m * self.n + n
    }

    pub fn lift_conv(&self, n: usize) -> usize {
        self.n * (2 + self.q) + self.n * self.n + n
    }

    pub fn lift_affine(&self, q: usize) -> usize {
        self.n * (3 + self.q) + self.n * self.n + q
    }

    pub fn lift_lift(&self) -> usize {
        self.total() - 1
    }
}

/// Offline data of the indicator: the Riesz Gramian and the catalogue
/// layout.
#[derive(Debug, Clone)]
pub struct IndicatorData {
    pub sigma: DMatrix<f64>,
    pub layout: RieszLayout,
    pub theta: ThetaFamily,
    pub anchor_mu: f64,
    /// Gershgorin bound on the spectral radius of Sigma, used to calibrate
    /// the negative-form clamp.
    pub lambda_max_bound: f64,
}

impl IndicatorData {
    pub fn catalogue_len(&self) -> usize {
        self.layout.total()
    }

    /// `sqrt(max(Theta^T Sigma Theta, 0))` with a calibrated clamp: tiny
    /// negative quadratic forms are roundoff, anything materially negative
    /// is a bug signal.
    pub fn delta_from_theta(&self, theta: &DVector<f64>) -> Result<f64, IndicatorError> {
        if theta.len() != self.catalogue_len() {
            return Err(IndicatorError::Invalid(format!(
                "Theta has length {}, catalogue expects {}",
                theta.len(),
                self.catalogue_len()
            )));
        }
        let value = (&self.sigma * theta).dot(theta);
        let tol = 1e-10 * self.lambda_max_bound * theta.dot(theta);
        if value < -tol {
            return Err(IndicatorError::NegativeForm { value, tol });
        }
        Ok(value.max(0.0).sqrt())
    }
}

/// Solve the M Riesz problems and assemble the Gramian `Sigma`.
pub fn build_indicator(
    space: &ReducedSpace,
    provider: &dyn FormProvider,
) -> Result<IndicatorData, IndicatorError> {
    if space.n_dof() != provider.n_dof() {
        return Err(IndicatorError::Invalid(format!(
            "space has {} DOFs, forms have {}",
            space.n_dof(),
            provider.n_dof()
        )));
    }
    if space.inner != InnerProduct::H1 {
        return Err(IndicatorError::Invalid(
            "indicator requires a V-orthonormal space".into(),
        ));
    }
    let layout = RieszLayout {
        n: space.n(),
        q: provider.affine().len(),
    };
    if provider.theta_family().len() != layout.q {
        return Err(IndicatorError::Invalid(
            "affine blocks and theta family disagree".into(),
        ));
    }
    let chol = provider
        .gram_v()
        .clone()
        .cholesky()
        .ok_or(IndicatorError::NotSpd)?;

    let functionals = catalogue_functionals(space, provider, &layout);
    let m_total = layout.total();
    let mut representers = DMatrix::zeros(provider.n_dof(), m_total);
    for (idx, f) in functionals.iter().enumerate() {
        representers.set_column(idx, &chol.solve(f));
    }
    // (xi_i, xi_j)_V = rhs_i . xi_j since G xi_i = rhs_i; symmetrize to kill
    // roundoff asymmetry.
    let mut sigma = DMatrix::zeros(m_total, m_total);
    for i in 0..m_total {
        for j in 0..m_total {
            sigma[(i, j)] = functionals[i].dot(&representers.column(j).clone_owned());
        }
    }
    for i in 0..m_total {
        for j in 0..i {
            let s = 0.5 * (sigma[(i, j)] + sigma[(j, i)]);
            sigma[(i, j)] = s;
            sigma[(j, i)] = s;
        }
    }
    let lambda_max_bound = (0..m_total)
        .map(|i| (0..m_total).map(|j| sigma[(i, j)].abs()).sum::<f64>())
        .fold(0.0_f64, f64::max);

    Ok(IndicatorData {
        sigma,
        layout,
        theta: provider.theta_family(),
        anchor_mu: space.anchor_mu,
        lambda_max_bound,
    })
}

/// Right-hand-side functionals of the Riesz problems, in catalogue order,
/// each restricted to the discrete test space.
fn catalogue_functionals(
    space: &ReducedSpace,
    provider: &dyn FormProvider,
    layout: &RieszLayout,
) -> Vec<DVector<f64>> {
    let n = layout.n;
    let mut out = vec![DVector::zeros(provider.n_dof()); layout.total()];
    let modes: Vec<DVector<f64>> = (0..n)
        .map(|j| space.modes.column(j).clone_owned())
        .collect();
    for (j, zeta) in modes.iter().enumerate() {
        out[layout.mass(j)] = provider.mass() * zeta;
        for (q, a_q) in provider.affine().iter().enumerate() {
            out[layout.affine(q, j)] = a_q * zeta;
        }
        out[layout.conv_lift(j)] = provider.lift_conv_first() * zeta;
        out[layout.lift_conv(j)] = provider.lift_conv_second() * zeta;
        for (m, zeta_m) in modes.iter().enumerate() {
            out[layout.conv_pair(m, j)] = provider.conv_functional(zeta, zeta_m);
        }
    }
    for (q, g_q) in provider.lift_affine().iter().enumerate() {
        out[layout.lift_affine(q)] = g_q.clone();
    }
    out[layout.lift_lift()] = provider.lift_conv_both().clone();
    for f in out.iter_mut() {
        provider.restrict_functional(f);
    }
    out
}

/// Trajectory- and parameter-dependent weights matching the catalogue.
pub fn theta_vector(
    data: &IndicatorData,
    traj: &RomTrajectory,
    mu: f64,
) -> Result<DVector<f64>, IndicatorError> {
    let layout = data.layout;
    if traj.n() != layout.n {
        return Err(IndicatorError::Invalid(format!(
            "trajectory has {} modes, catalogue expects {}",
            traj.n(),
            layout.n
        )));
    }
    if traj.j_total() <= traj.j0 {
        return Err(IndicatorError::Invalid(
            "empty statistics window (J0 >= J)".into(),
        ));
    }
    let window = traj.window();
    let thetas = data.theta.eval(mu);
    let acc = &traj.accum;
    let mut theta = DVector::zeros(layout.total());
    for j in 0..layout.n {
        theta[layout.mass(j)] = (acc.a_final[j] - acc.a_at_j0[j]) / window;
        for (q, th) in thetas.iter().enumerate() {
            theta[layout.affine(q, j)] = th * acc.a_plus[j];
        }
        theta[layout.conv_lift(j)] = acc.a_plus[j];
        theta[layout.lift_conv(j)] = acc.a_minus[j];
        for m in 0..layout.n {
            theta[layout.conv_pair(m, j)] = acc.c_bar[(m, j)];
        }
    }
    for (q, th) in thetas.iter().enumerate() {
        theta[layout.lift_affine(q)] = *th;
    }
    theta[layout.lift_lift()] = 1.0;
    Ok(theta)
}

/// Online evaluation: `Delta^u = sqrt(Theta^T Sigma Theta)`.
pub fn evaluate_indicator(
    data: &IndicatorData,
    traj: &RomTrajectory,
    mu: f64,
) -> Result<f64, IndicatorError> {
    let theta = theta_vector(data, traj, mu)?;
    data.delta_from_theta(&theta)
}

/// Effectivity of the raw indicator at a parameter where the true mean-flow
/// error is known: `eta = Delta^u / ||<u - u_hat>||_V`.
pub fn effectivity(delta: f64, true_error_v: f64) -> Result<f64, IndicatorError> {
    if !(true_error_v > 0.0) {
        return Err(IndicatorError::Invalid(format!(
            "true error must be positive, got {true_error_v}"
        )));
    }
    Ok(delta / true_error_v)
}

/// Effectivity-corrected estimator `Delta^{u,corr} = Delta^u / eta(mu*)`.
/// At the anchor itself this reproduces the true mean-flow error.
pub fn corrected_indicator(delta: f64, eta_anchor: f64) -> Result<f64, IndicatorError> {
    if !(eta_anchor > 0.0) {
        return Err(IndicatorError::BadEffectivity(eta_anchor));
    }
    Ok(delta / eta_anchor)
}

/// Direct (offline-free) evaluation: assemble the time-averaged residual
/// functional from reconstructed states and take one dual-norm solve. This
/// is the quantity the offline/online split must reproduce; quadratic in J
/// and N, intended for verification and diagnostics.
pub fn direct_dual_norm(
    space: &ReducedSpace,
    provider: &dyn FormProvider,
    traj: &RomTrajectory,
    mu: f64,
) -> Result<f64, IndicatorError> {
    if traj.j_total() <= traj.j0 {
        return Err(IndicatorError::Invalid("empty statistics window".into()));
    }
    let chol: Cholesky<f64, Dyn> = provider
        .gram_v()
        .clone()
        .cholesky()
        .ok_or(IndicatorError::NotSpd)?;
    let thetas = provider.theta(mu);
    let dt = traj.dt;
    let window = traj.window();
    let mut residual = DVector::zeros(provider.n_dof());
    for j in traj.j0..traj.j_total() {
        let u_a = space.reconstruct(&traj.coeffs.column(j).clone_owned());
        let u_b = space.reconstruct(&traj.coeffs.column(j + 1).clone_owned());
        let mut e = provider.mass() * (&u_b - &u_a) / dt;
        for (q, a_q) in provider.affine().iter().enumerate() {
            e += a_q * &u_b * thetas[q];
            e += &provider.lift_affine()[q] * thetas[q];
        }
        e += provider.conv_functional(&u_a, &u_b);
        e += provider.lift_conv_first() * &u_b;
        e += provider.lift_conv_second() * &u_a;
        e += provider.lift_conv_both();
        residual += e * (dt / window);
    }
    provider.restrict_functional(&mut residual);
    let dual_sq = chol.solve(&residual).dot(&residual);
    Ok(dual_sq.max(0.0).sqrt())
}
