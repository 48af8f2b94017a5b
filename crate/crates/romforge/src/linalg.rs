//! Small dense linear-algebra helpers shared across the crate.

use nalgebra::{DMatrix, DVector};

/// Symmetric eigendecomposition with eigenvalues sorted in nonincreasing
/// order. Returns `(eigenvalues, eigenvectors)` with eigenvectors as columns,
/// matching the eigenvalue order.
pub fn symmetric_eigen_desc(mat: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = mat.nrows();
    let eig = mat.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("non-finite eigenvalue")
            .then(a.cmp(&b))
    });
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Dense LU solve with an explicit pivot-magnitude check.
///
/// Fails when the smallest pivot drops below `tol_rel * max|A_ij|`, so a
/// near-singular reduced system surfaces as an error instead of a silently
/// garbage step.
pub fn lu_solve_checked(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    tol_rel: f64,
) -> Result<DVector<f64>, String> {
    let max_abs = a.amax();
    if !max_abs.is_finite() {
        return Err("non-finite entries in system matrix".into());
    }
    let lu = a.clone().lu();
    let u = lu.u();
    let min_pivot = (0..u.nrows().min(u.ncols()))
        .map(|i| u[(i, i)].abs())
        .fold(f64::INFINITY, f64::min);
    if !(min_pivot >= tol_rel * max_abs) {
        return Err(format!(
            "singular system: min pivot {min_pivot:.3e} below {:.3e}",
            tol_rel * max_abs
        ));
    }
    lu.solve(b).ok_or_else(|| "LU solve failed".to_string())
}

/// Frobenius-style max-norm of `Z^T G Z - I`; orthonormality defect of the
/// columns of `z` in the inner product with matrix `gram`.
pub fn orthonormality_defect(z: &DMatrix<f64>, gram: &DMatrix<f64>) -> f64 {
    let m = z.transpose() * gram * z;
    let n = m.nrows();
    let mut defect = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            defect = defect.max((m[(i, j)] - target).abs());
        }
    }
    defect
}

/// True when every entry of the matrix is finite.
pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// True when every entry of the vector is finite.
pub fn all_finite_vec(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_sorted_descending() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 1.0]);
        let (vals, vecs) = symmetric_eigen_desc(&m);
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
        // residual check A v = lambda v
        for (i, &lam) in vals.iter().enumerate() {
            let v = vecs.column(i).clone_owned();
            let r = &m * &v - lam * &v;
            assert!(r.amax() < 1e-12);
        }
    }

    #[test]
    fn lu_rejects_singular() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let b = DVector::from_column_slice(&[1.0, 2.0]);
        assert!(lu_solve_checked(&a, &b, 1e-14).is_err());
    }

    #[test]
    fn lu_solves_well_conditioned() {
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let b = DVector::from_column_slice(&[5.0, 5.0]);
        let x = lu_solve_checked(&a, &b, 1e-14).unwrap();
        assert!((&a * &x - &b).amax() < 1e-12);
    }
}
