//! Reduced operator assembly and the plain Galerkin ROM.
//!
//! The semi-implicit step for the reduced coefficients solves
//!
//! ```text
//! [ A1 + sum_q theta_q(mu) A_q + C(a^j) ] a^{j+1} = E a^j - sum_q theta_q(mu) G_q - H
//! ```
//!
//! with `A1 = mass/dt + [c(R, zeta_n, zeta_m)]`, `A_q = [a_q(zeta_n, zeta_m)]`,
//! `C(w) = sum_i w_i [c(zeta_i, zeta_n, zeta_m)]`,
//! `E = mass/dt - [c(zeta_n, R, zeta_m)]`, `G_q = [a_q(R, zeta_m)]`, and the
//! constant convective forcing `H = [c(R, R, zeta_m)]`. The mass blocks of A1
//! and E are the same matrix by construction. Everything is dense; one step
//! costs O(N^3) and the operators occupy O(N^3) storage.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fom::{FormProvider, ThetaFamily};
use crate::linalg;
use crate::pod::ReducedSpace;

#[derive(Debug, Error)]
pub enum RomError {
    #[error("operator assembly failed: {0}")]
    Assembly(String),
    #[error("step {step} failed: {msg}")]
    StepFailure { step: usize, msg: String },
    #[error("non-finite coefficients at step {step}")]
    NonFinite { step: usize },
    #[error("{0}")]
    Invalid(String),
}

/// Relative pivot tolerance of the dense LU behind every reduced solve.
pub const LU_PIVOT_TOL: f64 = 1e-14;

/// Dense reduced operators of the semi-implicit Galerkin system.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReducedOperators {
    pub n: usize,
    pub dt: f64,
    pub anchor_mu: f64,
    pub theta: ThetaFamily,
    /// `(zeta_n, zeta_m)_{L2}`, shared mass block of A1 and E.
    pub mass: DMatrix<f64>,
    /// `c(R, zeta_n, zeta_m)` - lift advecting the trial function.
    pub conv_lift_implicit: DMatrix<f64>,
    /// `c(zeta_n, R, zeta_m)` - trial function advecting the lift.
    pub conv_lift_explicit: DMatrix<f64>,
    /// `a_q(zeta_n, zeta_m)` per affine block.
    pub affine: Vec<DMatrix<f64>>,
    /// `a_q(R, zeta_m)` per affine block (the G vectors).
    pub lift_affine: Vec<DVector<f64>>,
    /// `conv[i][(m, n)] = c(zeta_i, zeta_n, zeta_m)`.
    pub conv: Vec<DMatrix<f64>>,
    /// Constant convective forcing `c(R, R, zeta_m)`.
    pub lift_forcing: DVector<f64>,
    /// `(R, zeta_m)_{L2}`, right-hand side of the initial projection.
    pub lift_mass: DVector<f64>,
}

impl ReducedOperators {
    /// `A1 = mass/dt + c(R, zeta_n, zeta_m)`.
    pub fn a1(&self) -> DMatrix<f64> {
        &self.mass / self.dt + &self.conv_lift_implicit
    }

    /// `E = mass/dt - c(zeta_n, R, zeta_m)`.
    pub fn e_matrix(&self) -> DMatrix<f64> {
        &self.mass / self.dt - &self.conv_lift_explicit
    }

    /// Left-hand matrix and right-hand side of the step at state `a_j`.
    pub fn assemble_system(&self, a_j: &DVector<f64>, mu: f64) -> (DMatrix<f64>, DVector<f64>) {
        let thetas = self.theta.eval(mu);
        let mut lhs = self.a1();
        for (q, block) in self.affine.iter().enumerate() {
            lhs += block * thetas[q];
        }
        for (i, slice) in self.conv.iter().enumerate() {
            lhs += slice * a_j[i];
        }
        let mut rhs = self.e_matrix() * a_j - &self.lift_forcing;
        for (q, g_q) in self.lift_affine.iter().enumerate() {
            rhs -= g_q * thetas[q];
        }
        (lhs, rhs)
    }

    /// Coefficients of the L2 projection of `-R` onto the space, the ROM
    /// initial condition when the full-order run starts from zero.
    pub fn initial_coeffs(&self) -> Result<DVector<f64>, RomError> {
        let chol = self
            .mass
            .clone()
            .cholesky()
            .ok_or_else(|| RomError::Assembly("mode mass Gramian not SPD".into()))?;
        Ok(chol.solve(&(-&self.lift_mass)))
    }
}

/// Assemble the reduced operators for a space over the given forms.
pub fn assemble_operators(
    space: &ReducedSpace,
    provider: &dyn FormProvider,
    dt: f64,
) -> Result<ReducedOperators, RomError> {
    if space.n_dof() != provider.n_dof() {
        return Err(RomError::Assembly(format!(
            "space has {} DOFs, forms have {}",
            space.n_dof(),
            provider.n_dof()
        )));
    }
    if space.n() == 0 {
        return Err(RomError::Assembly("empty reduced space".into()));
    }
    if !(dt > 0.0) {
        return Err(RomError::Assembly(format!("dt = {dt} must be positive")));
    }
    let z = &space.modes;
    let zt = z.transpose();
    let n = space.n();
    let n_h = provider.n_dof();

    let mass = &zt * provider.mass() * z;
    let conv_lift_implicit = &zt * provider.lift_conv_first() * z;
    let conv_lift_explicit = &zt * provider.lift_conv_second() * z;
    let affine: Vec<DMatrix<f64>> = provider.affine().iter().map(|a_q| &zt * a_q * z).collect();
    let lift_affine: Vec<DVector<f64>> =
        provider.lift_affine().iter().map(|g_q| &zt * g_q).collect();
    let mut conv = Vec::with_capacity(n);
    let mut scratch = DMatrix::zeros(n_h, n_h);
    for i in 0..n {
        let zeta_i = z.column(i).clone_owned();
        provider.conv_matrix(&zeta_i, &mut scratch);
        conv.push(&zt * &scratch * z);
    }
    let lift_forcing = &zt * provider.lift_conv_both();
    let lift_mass = &zt * provider.lift_mass();

    let ops = ReducedOperators {
        n,
        dt,
        anchor_mu: space.anchor_mu,
        theta: provider.theta_family(),
        mass,
        conv_lift_implicit,
        conv_lift_explicit,
        affine,
        lift_affine,
        conv,
        lift_forcing,
        lift_mass,
    };
    for block in ops.affine.iter().chain(ops.conv.iter()) {
        if !linalg::all_finite(block) {
            return Err(RomError::Assembly("non-finite operator entry".into()));
        }
    }
    Ok(ops)
}

/// One plain Galerkin step: dense LU with partial pivoting and an explicit
/// pivot check so a singular system fails loudly.
pub fn galerkin_step(
    ops: &ReducedOperators,
    a_j: &DVector<f64>,
    mu: f64,
) -> Result<DVector<f64>, RomError> {
    let (lhs, rhs) = ops.assemble_system(a_j, mu);
    linalg::lu_solve_checked(&lhs, &rhs, LU_PIVOT_TOL)
        .map_err(|msg| RomError::StepFailure { step: 0, msg })
}

/// How a stored step was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepStatus {
    Galerkin,
    Constrained,
    Failed,
}

impl std::fmt::Display for StepStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StepStatus::Galerkin => write!(f, "galerkin"),
            StepStatus::Constrained => write!(f, "constrained"),
            StepStatus::Failed => write!(f, "failed"),
        }
    }
}

/// Running sums over the statistics window, accumulated inside the
/// integration loop exactly as the indicator consumes them.
#[derive(Debug, Clone)]
pub struct TrajectoryAccumulators {
    /// `(1/(J-J0)) sum_{j=J0+1}^{J} a^j`.
    pub a_plus: DVector<f64>,
    /// `(1/(J-J0)) sum_{j=J0}^{J-1} a^j`.
    pub a_minus: DVector<f64>,
    /// `(1/(J-J0)) sum_{j=J0}^{J-1} a^{j+1} (a^j)^T`.
    pub c_bar: DMatrix<f64>,
    pub a_at_j0: DVector<f64>,
    pub a_final: DVector<f64>,
}

/// A reduced trajectory with per-step provenance flags.
#[derive(Debug, Clone)]
pub struct RomTrajectory {
    /// N x (J+1); column j holds the coefficients at t_g^j.
    pub coeffs: DMatrix<f64>,
    /// Status of step j -> j+1, length J.
    pub status: Vec<StepStatus>,
    pub mu: f64,
    pub dt: f64,
    pub j0: usize,
    pub accum: TrajectoryAccumulators,
}

impl RomTrajectory {
    /// Wrap an externally produced coefficient matrix (N x (J+1)),
    /// recomputing the window accumulators offline.
    pub fn from_coefficients(
        coeffs: DMatrix<f64>,
        mu: f64,
        dt: f64,
        j0: usize,
    ) -> Result<Self, RomError> {
        if coeffs.ncols() == 0 {
            return Err(RomError::Invalid("empty coefficient matrix".into()));
        }
        let j_total = coeffs.ncols() - 1;
        if j0 > j_total {
            return Err(RomError::Invalid(format!(
                "J0 = {j0} exceeds J = {j_total}"
            )));
        }
        let n = coeffs.nrows();
        let mut a_plus = DVector::zeros(n);
        let mut a_minus = DVector::zeros(n);
        let mut c_bar = DMatrix::zeros(n, n);
        for j in j0..j_total {
            let a_j = coeffs.column(j).clone_owned();
            let a_n = coeffs.column(j + 1).clone_owned();
            a_minus += &a_j;
            a_plus += &a_n;
            c_bar += a_n * a_j.transpose();
        }
        let window = j_total.saturating_sub(j0);
        if window > 0 {
            let inv = 1.0 / window as f64;
            a_plus *= inv;
            a_minus *= inv;
            c_bar *= inv;
        }
        let accum = TrajectoryAccumulators {
            a_plus,
            a_minus,
            c_bar,
            a_at_j0: coeffs.column(j0).clone_owned(),
            a_final: coeffs.column(j_total).clone_owned(),
        };
        Ok(RomTrajectory {
            status: vec![StepStatus::Galerkin; j_total],
            coeffs,
            mu,
            dt,
            j0,
            accum,
        })
    }

    pub fn n(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn j_total(&self) -> usize {
        self.coeffs.ncols() - 1
    }

    /// Statistics-window length T - T0.
    pub fn window(&self) -> f64 {
        (self.j_total() - self.j0) as f64 * self.dt
    }
}

/// Integrate with a custom step rule; shared by the plain and the
/// box-constrained ROM.
pub fn integrate_with<F>(
    ops: &ReducedOperators,
    a0: &DVector<f64>,
    mu: f64,
    j_total: usize,
    j0: usize,
    mut step: F,
) -> Result<RomTrajectory, RomError>
where
    F: FnMut(&ReducedOperators, &DVector<f64>, f64) -> Result<(DVector<f64>, StepStatus), RomError>,
{
    if a0.len() != ops.n {
        return Err(RomError::Invalid(format!(
            "initial coefficients have length {}, operators expect {}",
            a0.len(),
            ops.n
        )));
    }
    if j0 > j_total {
        return Err(RomError::Invalid(format!(
            "J0 = {j0} exceeds J = {j_total}"
        )));
    }
    let n = ops.n;
    let mut coeffs = DMatrix::zeros(n, j_total + 1);
    coeffs.set_column(0, a0);
    let mut status = Vec::with_capacity(j_total);
    let mut a_plus = DVector::zeros(n);
    let mut a_minus = DVector::zeros(n);
    let mut c_bar = DMatrix::zeros(n, n);
    let mut a_j = a0.clone();
    for j in 0..j_total {
        let (a_next, flag) = step(ops, &a_j, mu).map_err(|e| match e {
            RomError::StepFailure { msg, .. } => RomError::StepFailure { step: j + 1, msg },
            other => other,
        })?;
        if !linalg::all_finite_vec(&a_next) {
            return Err(RomError::NonFinite { step: j + 1 });
        }
        if j >= j0 {
            a_minus += &a_j;
            c_bar += &a_next * a_j.transpose();
        }
        if j + 1 > j0 {
            a_plus += &a_next;
        }
        coeffs.set_column(j + 1, &a_next);
        status.push(flag);
        a_j = a_next;
    }
    let window = j_total.saturating_sub(j0);
    if window > 0 {
        let inv = 1.0 / window as f64;
        a_plus *= inv;
        a_minus *= inv;
        c_bar *= inv;
    }
    let a_at_j0 = coeffs.column(j0).clone_owned();
    let a_final = coeffs.column(j_total).clone_owned();
    Ok(RomTrajectory {
        coeffs,
        status,
        mu,
        dt: ops.dt,
        j0,
        accum: TrajectoryAccumulators {
            a_plus,
            a_minus,
            c_bar,
            a_at_j0,
            a_final,
        },
    })
}

/// Plain Galerkin integration over J steps.
pub fn rom_integrate(
    ops: &ReducedOperators,
    a0: &DVector<f64>,
    mu: f64,
    j_total: usize,
    j0: usize,
) -> Result<RomTrajectory, RomError> {
    integrate_with(ops, a0, mu, j_total, j0, |ops, a_j, mu| {
        galerkin_step(ops, a_j, mu).map(|a| (a, StepStatus::Galerkin))
    })
}

/// Coefficients of the L2 projection of a full-order field onto the space.
pub fn project_l2(
    space: &ReducedSpace,
    provider: &dyn FormProvider,
    field: &DVector<f64>,
) -> Result<DVector<f64>, RomError> {
    let z = &space.modes;
    let mode_mass = z.transpose() * provider.mass() * z;
    let rhs = z.transpose() * (provider.mass() * field);
    let chol = mode_mass
        .cholesky()
        .ok_or_else(|| RomError::Assembly("mode mass Gramian not SPD".into()))?;
    Ok(chol.solve(&rhs))
}

#[cfg(test)]
mod tests;
