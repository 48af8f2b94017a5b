//! Periodic Kuramoto-Sivashinsky forms.
//!
//! Fourier collocation on n equispaced nodes of [0, L). Differentiation
//! matrices are dense real circulants assembled from the DFT symbol (the
//! Nyquist mode is zeroed in the odd-order operator, kept in the even one).
//! The weak form behind the affine family is
//!
//! ```text
//! (u_t, v) + c(u, u, v) - (u_x, v_x) + nu (u_xx, v_xx) = 0,
//! ```
//!
//! with the first-derivative energy `(u_x, v_x)` assembled through the
//! second-derivative symbol as `-w D2` (exact for the trigonometric
//! interpolants and nondegenerate on the Nyquist mode): `A_1 = w D2` with a
//! constant coefficient (the destabilizing term) and `A_2 = w D2 D2` with
//! coefficient nu.
//!
//! The discrete space is the zero-mean subspace: states are projected after
//! every step, functionals are restricted by removing their constant
//! component, and the step system is sandwiched with the mean projector plus
//! a mean-pinning block so it stays nonsingular. The energy inner product is
//! the spectral first-derivative energy (symbol k^2, assembled as -w D2)
//! plus a mean-mean coupling that vanishes identically on the subspace but
//! makes the matrix positive definite, so a single Cholesky factorization
//! serves every Riesz solve.

use nalgebra::{DMatrix, DVector};

use super::{FormProvider, ThetaFamily};

#[derive(Debug, Clone)]
pub struct KsForms {
    n: usize,
    length: f64,
    mass: DMatrix<f64>,
    gram_v: DMatrix<f64>,
    affine: Vec<DMatrix<f64>>,
    d1: DMatrix<f64>,
    lift: DVector<f64>,
    lift_conv: DMatrix<f64>,
    lift_vec: DVector<f64>,
    lift_affine: Vec<DVector<f64>>,
}

impl KsForms {
    pub fn new(n: usize, length: f64) -> Self {
        assert!(
            n.is_multiple_of(2),
            "collocation grid must have an even number of nodes"
        );
        let d1 = diff_matrix_order1(n, length);
        let d2 = diff_matrix_order2(n, length);
        let w = length / n as f64;
        let mass = DMatrix::identity(n, n) * w;

        // First-derivative energy via the second-derivative symbol:
        // (u_x, v_x) = -(u_xx, v) = -w v^T D2 u, exact for the trigonometric
        // interpolants and nonzero on the Nyquist mode (D1^T D1 would drop
        // it, leaving the energy product singular in that direction).
        let seminorm = -(&d2 * w);
        let a1 = -seminorm.clone();
        let a2 = (&d2 * &d2) * w; // D2 symmetric, so D2^T M D2 = w D2 D2
        let mut gram_v = seminorm;
        let mean_coupling = length / (n * n) as f64;
        for i in 0..n {
            for j in 0..n {
                gram_v[(i, j)] += mean_coupling;
            }
        }

        Self {
            n,
            length,
            mass,
            gram_v,
            affine: vec![a1, a2],
            d1,
            lift: DVector::zeros(n),
            lift_conv: DMatrix::zeros(n, n),
            lift_vec: DVector::zeros(n),
            lift_affine: vec![DVector::zeros(n), DVector::zeros(n)],
        }
    }

    pub fn first_derivative(&self) -> &DMatrix<f64> {
        &self.d1
    }

    fn remove_mean(v: &mut DVector<f64>) {
        let mean = v.mean();
        v.add_scalar_mut(-mean);
    }
}

/// First-derivative collocation matrix via the DFT symbol i k_m, Nyquist
/// zeroed.
fn diff_matrix_order1(n: usize, length: f64) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let theta = 2.0 * std::f64::consts::PI * (i as f64 - j as f64) / n as f64;
            let mut acc = 0.0;
            for m in 1..n / 2 {
                let k = 2.0 * std::f64::consts::PI * m as f64 / length;
                acc -= 2.0 * k * (theta * m as f64).sin();
            }
            d[(i, j)] = acc / n as f64;
        }
    }
    d
}

/// Second-derivative collocation matrix via the symbol -k_m^2, Nyquist kept.
fn diff_matrix_order2(n: usize, length: f64) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let theta = 2.0 * std::f64::consts::PI * (i as f64 - j as f64) / n as f64;
            let mut acc = 0.0;
            for m in 1..n / 2 {
                let k = 2.0 * std::f64::consts::PI * m as f64 / length;
                acc -= 2.0 * k * k * (theta * m as f64).cos();
            }
            let k_nyq = std::f64::consts::PI * n as f64 / length;
            acc -= k_nyq * k_nyq * (theta * (n / 2) as f64).cos();
            d[(i, j)] = acc / n as f64;
        }
    }
    d
}

impl FormProvider for KsForms {
    fn n_dof(&self) -> usize {
        self.n
    }

    fn mass(&self) -> &DMatrix<f64> {
        &self.mass
    }

    fn gram_v(&self) -> &DMatrix<f64> {
        &self.gram_v
    }

    fn affine(&self) -> &[DMatrix<f64>] {
        &self.affine
    }

    fn theta_family(&self) -> ThetaFamily {
        ThetaFamily::ConstantAndParam
    }

    fn trilinear(&self, w: &DVector<f64>, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        let du = &self.d1 * u;
        let quad = self.length / self.n as f64;
        let mut acc = 0.0;
        for i in 0..self.n {
            acc += w[i] * du[i] * v[i];
        }
        acc * quad
    }

    fn conv_matrix(&self, w: &DVector<f64>, out: &mut DMatrix<f64>) {
        let quad = self.length / self.n as f64;
        for i in 0..self.n {
            let wi = w[i] * quad;
            for j in 0..self.n {
                out[(i, j)] = wi * self.d1[(i, j)];
            }
        }
    }

    fn conv_functional(&self, w: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let du = &self.d1 * u;
        let quad = self.length / self.n as f64;
        let mut f = DVector::from_fn(self.n, |i, _| quad * w[i] * du[i]);
        Self::remove_mean(&mut f);
        f
    }

    fn lift(&self) -> &DVector<f64> {
        &self.lift
    }

    fn lift_conv_first(&self) -> &DMatrix<f64> {
        &self.lift_conv
    }

    fn lift_conv_second(&self) -> &DMatrix<f64> {
        &self.lift_conv
    }

    fn lift_conv_both(&self) -> &DVector<f64> {
        &self.lift_vec
    }

    fn lift_mass(&self) -> &DVector<f64> {
        &self.lift_vec
    }

    fn lift_affine(&self) -> &[DVector<f64>] {
        &self.lift_affine
    }

    fn project_state(&self, u: &mut DVector<f64>) {
        Self::remove_mean(u);
    }

    fn restrict_functional(&self, f: &mut DVector<f64>) {
        Self::remove_mean(f);
    }

    fn regularize_step_system(&self, mat: &mut DMatrix<f64>, rhs: &mut DVector<f64>) {
        let n = self.n;
        let inv_n = 1.0 / n as f64;
        // P K: subtract column means.
        for j in 0..n {
            let mean: f64 = (0..n).map(|i| mat[(i, j)]).sum::<f64>() * inv_n;
            for i in 0..n {
                mat[(i, j)] -= mean;
            }
        }
        // (P K) P: subtract row means.
        for i in 0..n {
            let mean: f64 = (0..n).map(|j| mat[(i, j)]).sum::<f64>() * inv_n;
            for j in 0..n {
                mat[(i, j)] -= mean;
            }
        }
        // Pin the mean so the projected system stays nonsingular.
        let pin = self.length / (n * n) as f64;
        for i in 0..n {
            for j in 0..n {
                mat[(i, j)] += pin;
            }
        }
        Self::remove_mean(rhs);
    }

    fn initial_state(&self) -> DVector<f64> {
        let mut u = DVector::from_fn(self.n, |i, _| {
            let x = i as f64 * self.length / self.n as f64;
            let k = 2.0 * std::f64::consts::PI / self.length;
            (k * x).cos() + 0.1 * (2.0 * k * x).cos()
        });
        Self::remove_mean(&mut u);
        u
    }
}
