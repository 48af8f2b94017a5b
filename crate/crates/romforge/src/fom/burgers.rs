//! Lifted-Dirichlet viscous Burgers forms.
//!
//! P1 finite elements on a uniform grid over (0, L). Degrees of freedom are
//! the interior nodes; boundary nodes carry the Dirichlet data through the
//! lift, which is stored as a full-grid field so every lift-coupled form is
//! integrated exactly. All cell integrals of piecewise-linear factors are
//! evaluated in closed form, so the forms are exact quadratures of the P1
//! interpolants.
//!
//! With mu = Re the single affine block is the V (stiffness) matrix with
//! coefficient 1/Re, matching the lifted weak form
//! `(u_t, v) + (1/Re)(u + R, v)_V + c(u + R, u + R, v) = 0`.

use nalgebra::{DMatrix, DVector};

use super::{FormProvider, ThetaFamily};

#[derive(Debug, Clone)]
pub struct BurgersForms {
    n: usize,
    h: f64,
    mass: DMatrix<f64>,
    stiffness: Vec<DMatrix<f64>>,
    lift_interior: DVector<f64>,
    lift_full: DVector<f64>,
    lift_conv_first: DMatrix<f64>,
    lift_conv_second: DMatrix<f64>,
    lift_conv_both: DVector<f64>,
    lift_mass: DVector<f64>,
    lift_affine: Vec<DVector<f64>>,
}

impl BurgersForms {
    /// Forms with the harmonic (linear) lift matching the endpoint data.
    pub fn new(n_h: usize, length: f64, boundary: (f64, f64)) -> Self {
        let grid = n_h + 2;
        let mut lift_full = DVector::zeros(grid);
        for i in 0..grid {
            let x = i as f64 * length / (n_h + 1) as f64;
            lift_full[i] = boundary.0 + (boundary.1 - boundary.0) * x / length;
        }
        Self::with_lift_field(n_h, length, lift_full)
    }

    /// Forms with an arbitrary full-grid lift field (n_h + 2 nodes including
    /// the boundary). Used to exercise lift-coupled terms that vanish for the
    /// harmonic lift.
    pub fn with_lift_field(n_h: usize, length: f64, lift_full: DVector<f64>) -> Self {
        assert_eq!(
            lift_full.len(),
            n_h + 2,
            "lift field must include boundary nodes"
        );
        let n = n_h;
        let h = length / (n_h + 1) as f64;

        let mut mass = DMatrix::zeros(n, n);
        let mut stiff = DMatrix::zeros(n, n);
        for i in 0..n {
            mass[(i, i)] = 2.0 * h / 3.0;
            stiff[(i, i)] = 2.0 / h;
            if i + 1 < n {
                mass[(i, i + 1)] = h / 6.0;
                mass[(i + 1, i)] = h / 6.0;
                stiff[(i, i + 1)] = -1.0 / h;
                stiff[(i + 1, i)] = -1.0 / h;
            }
        }

        let lift_interior = DVector::from_fn(n, |i, _| lift_full[i + 1]);
        let mut lift_conv_first = DMatrix::zeros(n, n);
        conv_matrix_from_full(&lift_full, &mut lift_conv_first);
        let lift_conv_second = conv_second_matrix(&lift_full, h, n);

        // c(R, R, phi_i) and (R, phi_i)_{L2}: exact two-cell sums around each
        // interior node; (R, phi_i)_V telescopes to the slope jump.
        let slope = |k: usize| (lift_full[k + 1] - lift_full[k]) / h;
        let mut lift_conv_both = DVector::zeros(n);
        let mut lift_mass = DVector::zeros(n);
        let mut lift_v = DVector::zeros(n);
        for i in 0..n {
            let g = i + 1; // full-grid node index
            lift_conv_both[i] = slope(g - 1)
                * (h / 3.0 * lift_full[g] + h / 6.0 * lift_full[g - 1])
                + slope(g) * (h / 3.0 * lift_full[g] + h / 6.0 * lift_full[g + 1]);
            lift_mass[i] = h / 6.0 * (lift_full[g - 1] + 4.0 * lift_full[g] + lift_full[g + 1]);
            lift_v[i] = slope(g - 1) - slope(g);
        }

        Self {
            n,
            h,
            mass,
            stiffness: vec![stiff],
            lift_interior,
            lift_full,
            lift_conv_first,
            lift_conv_second,
            lift_conv_both,
            lift_mass,
            lift_affine: vec![lift_v],
        }
    }

    fn zero_extend(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut full = DVector::zeros(self.n + 2);
        for i in 0..self.n {
            full[i + 1] = u[i];
        }
        full
    }
}

/// `[c(w, phi_j, phi_i)]_{ij}` over interior nodes for a full-grid field `w`.
/// Tridiagonal: per cell the trial derivative is constant and the remaining
/// product integrates in closed form; the 1/h of the derivative cancels the
/// cell measure, so entries are h-free.
fn conv_matrix_from_full(w_full: &DVector<f64>, out: &mut DMatrix<f64>) {
    let n = out.nrows();
    out.fill(0.0);
    for i in 0..n {
        let g = i + 1;
        out[(i, i)] = (w_full[g - 1] - w_full[g + 1]) / 6.0;
        if i + 1 < n {
            out[(i, i + 1)] = w_full[g] / 3.0 + w_full[g + 1] / 6.0;
            out[(i + 1, i)] = -(w_full[g + 1] / 3.0 + w_full[g] / 6.0);
        }
    }
}

/// `[c(phi_j, R, phi_i)]_{ij}`: the lift derivative is frozen per cell.
fn conv_second_matrix(r_full: &DVector<f64>, h: f64, n: usize) -> DMatrix<f64> {
    let slope = |k: usize| (r_full[k + 1] - r_full[k]) / h;
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        let g = i + 1;
        out[(i, i)] = slope(g - 1) * h / 3.0 + slope(g) * h / 3.0;
        if i + 1 < n {
            out[(i, i + 1)] = slope(g) * h / 6.0;
            out[(i + 1, i)] = slope(g) * h / 6.0;
        }
    }
    out
}

impl FormProvider for BurgersForms {
    fn n_dof(&self) -> usize {
        self.n
    }

    fn mass(&self) -> &DMatrix<f64> {
        &self.mass
    }

    fn gram_v(&self) -> &DMatrix<f64> {
        &self.stiffness[0]
    }

    fn affine(&self) -> &[DMatrix<f64>] {
        &self.stiffness
    }

    fn theta_family(&self) -> ThetaFamily {
        ThetaFamily::InverseParam
    }

    fn trilinear(&self, w: &DVector<f64>, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        let h = self.h;
        let wf = self.zero_extend(w);
        let uf = self.zero_extend(u);
        let vf = self.zero_extend(v);
        let mut acc = 0.0;
        for k in 0..=self.n {
            let du = (uf[k + 1] - uf[k]) / h;
            let wv = h / 3.0 * (wf[k] * vf[k] + wf[k + 1] * vf[k + 1])
                + h / 6.0 * (wf[k] * vf[k + 1] + wf[k + 1] * vf[k]);
            acc += du * wv;
        }
        acc
    }

    fn conv_matrix(&self, w: &DVector<f64>, out: &mut DMatrix<f64>) {
        let wf = self.zero_extend(w);
        conv_matrix_from_full(&wf, out);
    }

    fn conv_functional(&self, w: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let mut mat = DMatrix::zeros(self.n, self.n);
        self.conv_matrix(w, &mut mat);
        mat * u
    }

    fn lift(&self) -> &DVector<f64> {
        &self.lift_interior
    }

    fn lift_conv_first(&self) -> &DMatrix<f64> {
        &self.lift_conv_first
    }

    fn lift_conv_second(&self) -> &DMatrix<f64> {
        &self.lift_conv_second
    }

    fn lift_conv_both(&self) -> &DVector<f64> {
        &self.lift_conv_both
    }

    fn lift_mass(&self) -> &DVector<f64> {
        &self.lift_mass
    }

    fn lift_affine(&self) -> &[DVector<f64>] {
        &self.lift_affine
    }

    fn initial_state(&self) -> DVector<f64> {
        // u(0) = 0, so the lifted state starts at -R.
        -self.lift_interior.clone()
    }

    fn full_lift_field(&self) -> Option<&DVector<f64>> {
        Some(&self.lift_full)
    }
}
