//! Full-order model contract and the two desk-scale solvers.
//!
//! Every FOM here exposes the same algebraic skeleton through
//! [`FormProvider`]: an L2 (mass) inner product, an energy inner product
//! `(.,.)_V` used for POD and Riesz solves, an affine family of linear
//! operators `{A_q, theta_q(mu)}`, a trilinear convective form `c(w,u,v)`,
//! and a lift field absorbing inhomogeneous Dirichlet data. The reduced-order
//! layers never look past this trait, so they are discretization-agnostic.
//!
//! Time stepping is the first-order semi-implicit scheme used by the reduced
//! models as well: linear terms and the second trilinear slot implicit, the
//! first trilinear slot explicit,
//!
//! ```text
//! (1/dt) m(u^{j+1} - u^j, v) + sum_q theta_q(mu) a_q(u^{j+1} + R, v)
//!     + c(u^j + R, u^{j+1} + R, v) = 0      for all test functions v,
//! ```
//!
//! where `u` is the lifted state and `R` the lift. Sharing one scheme between
//! FOM and ROM makes "the FOM trajectory has zero discrete residual" an exact,
//! testable property rather than an approximation.

mod burgers;
mod ks;

pub use burgers::BurgersForms;
pub use ks::KsForms;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;

/// Which toy full-order model a [`FomSpec`] describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FomKind {
    /// Viscous Burgers on (0, L) with inhomogeneous Dirichlet data, P1 finite
    /// elements on a uniform grid, harmonic lift. Parameter mu = Re, so the
    /// single affine coefficient is 1/Re.
    BurgersDirichlet,
    /// Kuramoto-Sivashinsky on [0, L) periodic, Fourier collocation on the
    /// zero-mean subspace, zero lift. Parameter mu = hyperviscosity, with the
    /// destabilizing second-derivative term carrying a constant coefficient.
    KsPeriodic,
}

#[derive(Debug, Error)]
pub enum FomError {
    #[error("invalid FOM spec: {0}")]
    InvalidSpec(String),
    #[error("parameter {mu} outside [{lb}, {ub}]")]
    ParameterOutOfRange { mu: f64, lb: f64, ub: f64 },
    #[error("state diverged (non-finite entry) at step {step}")]
    Divergence { step: usize },
    #[error("step {step} failed: {msg}")]
    StepFailure { step: usize, msg: String },
    #[error("vector length {got}, expected {expected}")]
    LengthMismatch { got: usize, expected: usize },
}

/// Declarative description of a full-order run: discretization, parameter
/// range, time grid, and snapshot sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FomSpec {
    pub kind: FomKind,
    /// Number of degrees of freedom (interior nodes for Burgers, collocation
    /// points for KS).
    pub n_h: usize,
    pub domain_length: f64,
    /// Endpoint values (g(0), g(L)) for Burgers; ignored for KS.
    #[serde(default)]
    pub boundary: (f64, f64),
    /// Admissible parameter range [mu_lb, mu_ub].
    pub mu_range: (f64, f64),
    pub dt: f64,
    /// Final time T = t_g^J.
    pub t_final: f64,
    /// Statistics start time T0; transient before T0 is discarded.
    pub t0: f64,
    /// Sampling period for snapshots (an integer multiple of dt).
    pub dt_s: f64,
    /// Number of snapshots K, taken at t = T0 + k dt_s, k = 1..K.
    pub n_snapshots: usize,
}

impl FomSpec {
    pub fn validate(&self) -> Result<(), FomError> {
        let err = |msg: String| Err(FomError::InvalidSpec(msg));
        if self.n_h < 8 {
            return err(format!("n_h = {} < 8", self.n_h));
        }
        if !(self.dt > 0.0) {
            return err(format!("dt = {} must be positive", self.dt));
        }
        if !(self.domain_length > 0.0) {
            return err("domain length must be positive".into());
        }
        if !(self.t0 < self.t_final) {
            return err(format!(
                "T0 = {} must be below T = {}",
                self.t0, self.t_final
            ));
        }
        if self.t0 < 0.0 {
            return err("T0 must be nonnegative".into());
        }
        if self.mu_range.0 > self.mu_range.1 {
            return err(format!(
                "mu_lb = {} exceeds mu_ub = {}",
                self.mu_range.0, self.mu_range.1
            ));
        }
        if self.n_snapshots < 2 {
            return err(format!("K = {} < 2", self.n_snapshots));
        }
        for (name, t) in [("dt_s", self.dt_s), ("T0", self.t0), ("T", self.t_final)] {
            let ratio = t / self.dt;
            if (ratio - ratio.round()).abs() > 1e-9 * ratio.abs().max(1.0) {
                return err(format!(
                    "{name} = {t} is not an integer multiple of dt = {}",
                    self.dt
                ));
            }
        }
        if self.dt_s < self.dt {
            return err("dt_s must be at least dt".into());
        }
        if self.t0 + self.n_snapshots as f64 * self.dt_s > self.t_final + 1e-9 * self.t_final {
            return err(format!(
                "T0 + K dt_s = {} exceeds T = {}",
                self.t0 + self.n_snapshots as f64 * self.dt_s,
                self.t_final
            ));
        }
        if self.kind == FomKind::BurgersDirichlet && self.mu_range.0 <= 0.0 {
            return err("Burgers requires Re > 0".into());
        }
        Ok(())
    }

    /// Index of the first post-transient step, t_g^{J0} = T0.
    pub fn j0(&self) -> usize {
        (self.t0 / self.dt).round() as usize
    }

    /// Total number of steps J, with T = J dt.
    pub fn j_total(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    /// Steps between consecutive snapshots.
    pub fn snapshot_stride(&self) -> usize {
        (self.dt_s / self.dt).round() as usize
    }

    /// Build the discrete forms for this spec.
    pub fn forms(&self) -> Result<Box<dyn FormProvider>, FomError> {
        self.validate()?;
        Ok(match self.kind {
            FomKind::BurgersDirichlet => Box::new(BurgersForms::new(
                self.n_h,
                self.domain_length,
                self.boundary,
            )),
            FomKind::KsPeriodic => Box::new(KsForms::new(self.n_h, self.domain_length)),
        })
    }
}

/// Parameter dependence of the affine coefficients, kept as a serializable
/// tag so reduced operators can be re-evaluated at new parameters without
/// the provider.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThetaFamily {
    /// Single block with coefficient 1/mu (Burgers: mu = Re).
    InverseParam,
    /// Two blocks with coefficients [1, mu] (KS: mu = hyperviscosity).
    ConstantAndParam,
}

impl ThetaFamily {
    pub fn eval(&self, mu: f64) -> Vec<f64> {
        match self {
            ThetaFamily::InverseParam => vec![1.0 / mu],
            ThetaFamily::ConstantAndParam => vec![1.0, mu],
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ThetaFamily::InverseParam => 1,
            ThetaFamily::ConstantAndParam => 2,
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Discrete forms of one full-order model.
///
/// All state vectors have length `n_dof`. Matrices returned by reference are
/// assembled once at construction, so repeated evaluation of any form with
/// identical inputs is bit-identical.
pub trait FormProvider: Send + Sync {
    fn n_dof(&self) -> usize;

    /// L2 (mass) inner-product matrix.
    fn mass(&self) -> &DMatrix<f64>;

    /// Energy inner-product matrix, symmetric positive definite. This is the
    /// POD inner product and the matrix behind every Riesz solve.
    fn gram_v(&self) -> &DMatrix<f64>;

    /// Affine linear-operator family `A_q`.
    fn affine(&self) -> &[DMatrix<f64>];

    /// Parameter dependence of the affine coefficients.
    fn theta_family(&self) -> ThetaFamily;

    /// Coefficients `theta_q(mu)` matching [`FormProvider::affine`].
    fn theta(&self, mu: f64) -> Vec<f64> {
        self.theta_family().eval(mu)
    }

    /// Trilinear convective form `c(w, u, v)` on state vectors.
    fn trilinear(&self, w: &DVector<f64>, u: &DVector<f64>, v: &DVector<f64>) -> f64;

    /// Matrix `[c(w, phi_j, phi_i)]_{ij}` of the convective form with the
    /// first slot frozen at the state vector `w`.
    fn conv_matrix(&self, w: &DVector<f64>, out: &mut DMatrix<f64>);

    /// Functional `[c(w, u, phi_i)]_i`, restricted to the discrete test space
    /// (for KS this removes the constant component).
    fn conv_functional(&self, w: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;

    /// Lift field in state-vector representation.
    fn lift(&self) -> &DVector<f64>;

    /// `[c(R, phi_j, phi_i)]_{ij}` - lift in the explicit (first) slot.
    fn lift_conv_first(&self) -> &DMatrix<f64>;

    /// `[c(phi_j, R, phi_i)]_{ij}` - lift in the implicit (second) slot.
    fn lift_conv_second(&self) -> &DMatrix<f64>;

    /// Constant convective functional `[c(R, R, phi_i)]_i`.
    fn lift_conv_both(&self) -> &DVector<f64>;

    /// `[(R, phi_i)_{L2}]_i`.
    fn lift_mass(&self) -> &DVector<f64>;

    /// `[a_q(R, phi_i)]_i` per affine block.
    fn lift_affine(&self) -> &[DVector<f64>];

    /// Enforce the discrete-space constraint on a state (zero mean for KS,
    /// no-op for Burgers).
    fn project_state(&self, _u: &mut DVector<f64>) {}

    /// Restrict a functional vector to the discrete test space (remove the
    /// constant component for KS, no-op for Burgers).
    fn restrict_functional(&self, _f: &mut DVector<f64>) {}

    /// Hook applied to the assembled step system before solving; KS projects
    /// the system onto the zero-mean subspace and pins the mean so the matrix
    /// stays nonsingular.
    fn regularize_step_system(&self, _mat: &mut DMatrix<f64>, _rhs: &mut DVector<f64>) {}

    /// Lifted initial state.
    fn initial_state(&self) -> DVector<f64>;

    /// Lift field including boundary nodes where the discretization has them
    /// (Burgers); `None` when state vectors already carry the whole field.
    fn full_lift_field(&self) -> Option<&DVector<f64>> {
        None
    }

    fn mass_ip(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        (self.mass() * u).dot(v)
    }

    fn v_ip(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        (self.gram_v() * u).dot(v)
    }

    fn affine_ip(&self, q: usize, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        (&self.affine()[q] * u).dot(v)
    }
}

/// Scalar form evaluations for one (w, u, v) triple.
#[derive(Debug, Clone, PartialEq)]
pub struct FormSample {
    pub trilinear: f64,
    pub v_inner: f64,
    pub mass_inner: f64,
    /// One entry per affine block: `a_q(u, v)`.
    pub affine: Vec<f64>,
}

/// Evaluate every scalar form on the given vectors. Mirrors the quantities
/// the reduced-operator assembly consumes; useful for oracles and debugging.
pub fn evaluate_forms(
    provider: &dyn FormProvider,
    w: &DVector<f64>,
    u: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<FormSample, FomError> {
    let n = provider.n_dof();
    for vec in [w, u, v] {
        if vec.len() != n {
            return Err(FomError::LengthMismatch {
                got: vec.len(),
                expected: n,
            });
        }
    }
    Ok(FormSample {
        trilinear: provider.trilinear(w, u, v),
        v_inner: provider.v_ip(u, v),
        mass_inner: provider.mass_ip(u, v),
        affine: (0..provider.affine().len())
            .map(|q| provider.affine_ip(q, u, v))
            .collect(),
    })
}

/// Discrete lift field for a spec: the harmonic extension of the boundary
/// data for Burgers (linear in 1D), the zero vector for periodic KS.
pub fn compute_lift(spec: &FomSpec) -> Result<DVector<f64>, FomError> {
    spec.validate()?;
    Ok(spec.forms()?.lift().clone())
}

/// K full-order lifted states at the sampling times.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotSet {
    /// n_h x K, one snapshot per column.
    pub data: DMatrix<f64>,
    pub times: Vec<f64>,
    pub mu: f64,
    /// Present when the snapshots came from a built-in FOM run; ingested
    /// archives may carry partial metadata only.
    pub spec: Option<FomSpec>,
}

impl SnapshotSet {
    pub fn n_dof(&self) -> usize {
        self.data.nrows()
    }

    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }

    pub fn validate(&self) -> Result<(), FomError> {
        if self.len() < 2 {
            return Err(FomError::InvalidSpec(format!("K = {} < 2", self.len())));
        }
        if self.times.len() != self.len() {
            return Err(FomError::InvalidSpec("times/data length mismatch".into()));
        }
        if !linalg::all_finite(&self.data) {
            return Err(FomError::InvalidSpec("non-finite snapshot entry".into()));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(FomError::InvalidSpec(
                "sampling times not strictly increasing".into(),
            ));
        }
        Ok(())
    }
}

/// Output of one full-order run.
#[derive(Debug, Clone)]
pub struct FomRun {
    pub snapshots: SnapshotSet,
    /// Time average of the lifted state over j = J0+1..J, accumulated inside
    /// the integration loop.
    pub mean_lifted: DVector<f64>,
    /// Lifted state at a mid-domain probe node, one entry per grid step
    /// (j = 0..=J); feeds the autocorrelation-based choice of the CV block.
    pub probe: Vec<f64>,
    /// Lifted state at the final step.
    pub terminal: DVector<f64>,
    /// ||u^J - u^{J-1}||_{L2} / dt, a steady-state diagnostic.
    pub terminal_step_delta: f64,
    pub j0: usize,
    pub j_total: usize,
}

impl FomRun {
    /// Unlifted long-time mean <u>_g = <lifted>_g + R.
    pub fn mean_unlifted(&self, provider: &dyn FormProvider) -> DVector<f64> {
        &self.mean_lifted + provider.lift()
    }
}

/// Advance the FOM from its initial state to T with the semi-implicit scheme,
/// collecting snapshots and the running mean.
pub fn run_fom(spec: &FomSpec, mu: f64) -> Result<FomRun, FomError> {
    spec.validate()?;
    let (lb, ub) = spec.mu_range;
    if !(mu >= lb && mu <= ub) {
        return Err(FomError::ParameterOutOfRange { mu, lb, ub });
    }
    let provider = spec.forms()?;
    run_fom_with(spec, provider.as_ref(), mu)
}

/// [`run_fom`] against an externally constructed provider (shared across
/// parameters to avoid re-assembly).
pub fn run_fom_with(
    spec: &FomSpec,
    provider: &dyn FormProvider,
    mu: f64,
) -> Result<FomRun, FomError> {
    let n = provider.n_dof();
    let j0 = spec.j0();
    let j_total = spec.j_total();
    let stride = spec.snapshot_stride();
    let k_max = spec.n_snapshots;
    let thetas = provider.theta(mu);
    let probe_idx = n / 2;

    // Step-invariant pieces of the implicit matrix and the forcing.
    let mass_over_dt = provider.mass() / spec.dt;
    let mut base = mass_over_dt.clone() + provider.lift_conv_first();
    for (q, a_q) in provider.affine().iter().enumerate() {
        base += a_q * thetas[q];
    }
    let mut forcing = provider.lift_conv_both().clone();
    for (q, g_q) in provider.lift_affine().iter().enumerate() {
        forcing += g_q * thetas[q];
    }

    let mut state = provider.initial_state();
    let mut snapshots = DMatrix::zeros(n, k_max);
    let mut times = Vec::with_capacity(k_max);
    let mut mean = DVector::zeros(n);
    let mut probe = Vec::with_capacity(j_total + 1);
    probe.push(state[probe_idx]);
    let mut prev_state = state.clone();
    let mut conv = DMatrix::zeros(n, n);
    let mut k_next = 1usize;

    for j in 0..j_total {
        provider.conv_matrix(&state, &mut conv);
        let mut mat = &base + &conv;
        let explicit = &mass_over_dt * &state - provider.lift_conv_second() * &state;
        let mut rhs = explicit - &forcing;
        provider.regularize_step_system(&mut mat, &mut rhs);
        prev_state.copy_from(&state);
        state = linalg::lu_solve_checked(&mat, &rhs, 1e-14)
            .map_err(|msg| FomError::StepFailure { step: j + 1, msg })?;
        provider.project_state(&mut state);
        if !linalg::all_finite_vec(&state) {
            return Err(FomError::Divergence { step: j + 1 });
        }
        let j_now = j + 1;
        probe.push(state[probe_idx]);
        if j_now > j0 {
            mean += &state;
        }
        if k_next <= k_max && j_now == j0 + k_next * stride {
            snapshots.set_column(k_next - 1, &state);
            times.push(spec.t0 + k_next as f64 * spec.dt_s);
            k_next += 1;
        }
    }
    if k_next <= k_max {
        return Err(FomError::InvalidSpec(format!(
            "collected only {} of {} snapshots",
            k_next - 1,
            k_max
        )));
    }
    mean /= (j_total - j0) as f64;
    let terminal_step_delta = {
        let diff = &state - &prev_state;
        provider.mass_ip(&diff, &diff).sqrt() / spec.dt
    };

    Ok(FomRun {
        snapshots: SnapshotSet {
            data: snapshots,
            times,
            mu,
            spec: Some(spec.clone()),
        },
        mean_lifted: mean,
        probe,
        terminal: state,
        terminal_step_delta,
        j0,
        j_total,
    })
}
