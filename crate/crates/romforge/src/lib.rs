//! Reduced-basis pipeline for long-time integration of parametrized,
//! quadratically-nonlinear PDEs.
//!
//! The crate is organized around the algebraic skeleton shared by the
//! incompressible Navier-Stokes equations and its 1D stand-ins (viscous
//! Burgers, Kuramoto-Sivashinsky): a mass inner product, an affine family of
//! linear operators with parameter-dependent coefficients, a trilinear
//! convective form, and a lift field absorbing inhomogeneous Dirichlet data.
//!
//! * [`fom`] — full-order model contract plus two deterministic desk-scale
//!   solvers (lifted-Dirichlet Burgers, periodic Kuramoto-Sivashinsky).
//! * [`pod`] — proper orthogonal decomposition by the method of snapshots,
//!   deflated space merging, and h-block cross-validation.
//! * [`rom`] — reduced operator assembly and the semi-implicit Galerkin ROM.
//! * [`qp`] / [`constrained`] — box-constrained Galerkin: coefficient bounds
//!   estimated from snapshot data and an active-set quadratic program per
//!   time step.
//! * [`indicator`] — time-averaged residual dual-norm error indicator with
//!   offline/online decomposition via Riesz representers.
//! * [`greedy`] — anchor selection over a training set driven by the
//!   indicator, and nearest-anchor online model selection.
//! * [`metrics`] — long-time means, turbulent kinetic energy, mean-flow
//!   errors, autocorrelation, effective stability constants.
//! * [`archive`] — on-disk formats: snapshot archives, reduced spaces,
//!   trajectory CSV, greedy model directories.
//! * [`cli`] — config-driven experiment runner behind the `romforge` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0)` rejects NaN; `x <= 0` would not

pub mod archive;
pub mod cli;
pub mod constrained;
pub mod fom;
pub mod greedy;
pub mod indicator;
mod linalg;
pub mod metrics;
pub mod pod;
pub mod qp;
pub mod rom;
#[cfg(test)]
pub(crate) mod testutil;

pub use constrained::{ActivationReport, BoxBounds};
pub use fom::{FomKind, FomRun, FomSpec, FormProvider, SnapshotSet};
pub use greedy::{AnchorModel, GreedyState};
pub use indicator::IndicatorData;
pub use pod::{CvReport, InnerProduct, ReducedSpace};
pub use rom::{ReducedOperators, RomTrajectory, StepStatus};
