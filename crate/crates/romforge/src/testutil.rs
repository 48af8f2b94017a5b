//! Shared helpers for unit tests: synthetic orthonormal spaces and exact
//! piecewise-linear quadrature for oracles.

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::fom::FormProvider;
use crate::pod::{InnerProduct, ReducedSpace};

/// Random columns orthonormalized in the provider's V product; a stand-in
/// reduced space when the POD pipeline is not under test.
pub fn synthetic_space(provider: &dyn FormProvider, n: usize, seed: u64) -> ReducedSpace {
    let g = provider.gram_v();
    let mut rng = StdRng::seed_from_u64(seed);
    let mut modes = DMatrix::from_fn(provider.n_dof(), n, |_, _| rng.random_range(-1.0..1.0));
    for j in 0..n {
        let mut col = modes.column(j).clone_owned();
        provider.project_state(&mut col);
        modes.set_column(j, &col);
    }
    orthonormalize_in(&mut modes, g);
    ReducedSpace {
        modes,
        eigenvalues: vec![1.0; n],
        inner: InnerProduct::H1,
        anchor_mu: 20.0,
    }
}

/// In-place Gram-Schmidt in the given product.
pub fn orthonormalize_in(modes: &mut DMatrix<f64>, gram: &DMatrix<f64>) {
    for j in 0..modes.ncols() {
        let mut col = modes.column(j).clone_owned();
        for i in 0..j {
            let prev = modes.column(i);
            let proj = (gram * &col).dot(&prev);
            col -= prev * proj;
        }
        let norm = (gram * &col).dot(&col).sqrt();
        col /= norm;
        modes.set_column(j, &col);
    }
}

/// V-orthonormalized canonical basis: the full discrete space as a
/// `ReducedSpace` with N = n_h.
pub fn full_space(provider: &dyn FormProvider, anchor_mu: f64) -> ReducedSpace {
    let n_h = provider.n_dof();
    let mut modes = DMatrix::identity(n_h, n_h);
    orthonormalize_in(&mut modes, provider.gram_v());
    ReducedSpace {
        modes,
        eigenvalues: vec![1.0; n_h],
        inner: InnerProduct::H1,
        anchor_mu,
    }
}

/// Simpson quadrature of piecewise-linear nodal fields on a uniform grid,
/// split per half-cell; exact for the cubic-at-most integrands of the forms.
pub struct P1Quad {
    pub h: f64,
}

impl P1Quad {
    /// Simpson over the two halves of every cell, with the parent cell fixed
    /// so one-sided values are taken at the discontinuous cell boundaries.
    fn integrate_cells<F: Fn(usize, f64) -> f64>(&self, n_cells: usize, f: F) -> f64 {
        let mut acc = 0.0;
        for cell in 0..n_cells {
            for half in 0..2 {
                let a = cell as f64 * self.h + half as f64 * self.h / 2.0;
                let b = a + self.h / 2.0;
                acc += (b - a) / 6.0 * (f(cell, a) + 4.0 * f(cell, 0.5 * (a + b)) + f(cell, b));
            }
        }
        acc
    }

    fn eval_in(vals: &[f64], h: f64, cell: usize, x: f64) -> f64 {
        let t = (x - cell as f64 * h) / h;
        vals[cell] * (1.0 - t) + vals[cell + 1] * t
    }

    fn slope_in(vals: &[f64], h: f64, cell: usize) -> f64 {
        (vals[cell + 1] - vals[cell]) / h
    }

    /// `int w u' v`.
    pub fn tri(&self, w: &[f64], u: &[f64], v: &[f64]) -> f64 {
        let h = self.h;
        self.integrate_cells(w.len() - 1, |cell, x| {
            Self::eval_in(w, h, cell, x) * Self::slope_in(u, h, cell) * Self::eval_in(v, h, cell, x)
        })
    }

    /// `int u' v'`.
    pub fn stiff(&self, u: &[f64], v: &[f64]) -> f64 {
        let h = self.h;
        self.integrate_cells(u.len() - 1, |cell, _| {
            Self::slope_in(u, h, cell) * Self::slope_in(v, h, cell)
        })
    }

    /// `int u v`.
    pub fn mass(&self, u: &[f64], v: &[f64]) -> f64 {
        let h = self.h;
        self.integrate_cells(u.len() - 1, |cell, x| {
            Self::eval_in(u, h, cell, x) * Self::eval_in(v, h, cell, x)
        })
    }
}

/// Zero-extend an interior vector to the full grid (Dirichlet layout).
pub fn zero_extend(v: &DVector<f64>) -> Vec<f64> {
    let mut f = vec![0.0; v.len() + 2];
    for i in 0..v.len() {
        f[i + 1] = v[i];
    }
    f
}
