//! Box-constrained linear least squares by a primal active-set method.
//!
//! Solves `min_x ||A x - f||_2^2  s.t.  lower <= x <= upper` through the
//! normal equations `H = A^T A`, `g = A^T f`. The iterate stays feasible:
//! each cycle solves the equality-constrained subproblem on the free
//! coordinates, walks toward it until a bound blocks, and drops the active
//! constraint with the most negative multiplier once the subproblem solution
//! is feasible. The active set is persisted by the caller between solves;
//! consecutive time steps rarely change it, which makes the constrained ROM
//! nearly as cheap as the plain one.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QpError {
    #[error("active-set iteration cap {0} exceeded")]
    IterationCap(usize),
    #[error("normal matrix not positive definite on the free block")]
    IndefiniteBlock,
    #[error("{0}")]
    Invalid(String),
}

/// Per-coordinate constraint state, persisted across solves for warm starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundState {
    Free,
    Lower,
    Upper,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Active-set changes performed (0 when the warm start was already
    /// optimal).
    pub changes: usize,
}

/// Condition guard of the normal matrix: when the Cholesky-based estimate
/// exceeds 1e14, `trace(H)/N * 1e-12` is added to the diagonal to keep the
/// problem strictly convex without visibly perturbing solutions.
pub fn regularize_normal_matrix(h: &mut DMatrix<f64>) {
    let n = h.nrows();
    let trace: f64 = (0..n).map(|i| h[(i, i)]).sum();
    let bump = 1e-12 * trace / n as f64;
    let needs_bump = match h.clone().cholesky() {
        None => true,
        Some(chol) => {
            let l = chol.l();
            let mut dmax = 0.0_f64;
            let mut dmin = f64::INFINITY;
            for i in 0..n {
                dmax = dmax.max(l[(i, i)]);
                dmin = dmin.min(l[(i, i)]);
            }
            !(dmin > 0.0) || (dmax / dmin) * (dmax / dmin) > 1e14
        }
    };
    if needs_bump && bump > 0.0 {
        for i in 0..n {
            h[(i, i)] += bump;
        }
    }
}

/// Solve the box-constrained least-squares problem in normal-equation form.
///
/// `warm` carries the active set between calls; it is resized and rewritten
/// with the final state. Coordinates with `lower == upper` are fixed outside
/// the iteration. `max_changes` caps active-set changes.
pub fn solve_box_ls_normal(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    start: &DVector<f64>,
    warm: &mut Vec<BoundState>,
    max_changes: usize,
) -> Result<QpSolution, QpError> {
    let n = g.len();
    if lower.len() != n || upper.len() != n || h.nrows() != n {
        return Err(QpError::Invalid("dimension mismatch".into()));
    }
    for i in 0..n {
        if lower[i] > upper[i] {
            return Err(QpError::Invalid(format!(
                "empty box at coordinate {i}: [{}, {}]",
                lower[i], upper[i]
            )));
        }
    }
    if warm.len() != n {
        warm.clear();
        warm.resize(n, BoundState::Free);
    }
    let fixed: Vec<bool> = (0..n).map(|i| lower[i] == upper[i]).collect();

    // Feasible start consistent with the warm active set.
    let mut x = start.clone();
    for i in 0..n {
        if fixed[i] {
            warm[i] = BoundState::Lower;
            x[i] = lower[i];
        } else {
            match warm[i] {
                BoundState::Lower => x[i] = lower[i],
                BoundState::Upper => x[i] = upper[i],
                BoundState::Free => x[i] = x[i].clamp(lower[i], upper[i]),
            }
        }
    }

    let mut changes = 0usize;
    loop {
        let free: Vec<usize> = (0..n).filter(|&i| warm[i] == BoundState::Free).collect();
        let target = subproblem_solution(h, g, lower, upper, warm, &free)?;

        // Walk from x toward the subproblem solution until a bound blocks.
        let mut t_max = 1.0_f64;
        let mut blocker: Option<(usize, BoundState)> = None;
        for &i in &free {
            let d = target[i] - x[i];
            if d > 0.0 && target[i] > upper[i] {
                let t = (upper[i] - x[i]) / d;
                if t < t_max {
                    t_max = t;
                    blocker = Some((i, BoundState::Upper));
                }
            } else if d < 0.0 && target[i] < lower[i] {
                let t = (lower[i] - x[i]) / d;
                if t < t_max {
                    t_max = t;
                    blocker = Some((i, BoundState::Lower));
                }
            }
        }

        match blocker {
            Some((i, side)) => {
                let t = t_max.max(0.0);
                for &j in &free {
                    x[j] = (x[j] + t * (target[j] - x[j])).clamp(lower[j], upper[j]);
                }
                x[i] = if side == BoundState::Lower {
                    lower[i]
                } else {
                    upper[i]
                };
                warm[i] = side;
                changes += 1;
                if changes > max_changes {
                    return Err(QpError::IterationCap(max_changes));
                }
            }
            None => {
                for &j in &free {
                    x[j] = target[j].clamp(lower[j], upper[j]);
                }
                // Subproblem optimum reached; check multipliers of active
                // bounds and release the most negative one.
                let grad = compute_gradient(h, g, &x);
                let scale = 1.0 + g.amax();
                let mut worst: Option<(usize, f64)> = None;
                for i in 0..n {
                    if fixed[i] || warm[i] == BoundState::Free {
                        continue;
                    }
                    let lambda = match warm[i] {
                        BoundState::Lower => grad[i],
                        BoundState::Upper => -grad[i],
                        BoundState::Free => unreachable!(),
                    };
                    if lambda < -1e-11 * scale {
                        match worst {
                            Some((_, best)) if lambda >= best => {}
                            _ => worst = Some((i, lambda)),
                        }
                    }
                }
                match worst {
                    Some((i, _)) => {
                        warm[i] = BoundState::Free;
                        changes += 1;
                        if changes > max_changes {
                            return Err(QpError::IterationCap(max_changes));
                        }
                    }
                    None => return Ok(QpSolution { x, changes }),
                }
            }
        }
    }
}

/// Equality-constrained minimizer with the active coordinates pinned at
/// their bounds; the free block solves `H_FF x_F = g_F - H_FA x_A`.
fn subproblem_solution(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    state: &[BoundState],
    free: &[usize],
) -> Result<DVector<f64>, QpError> {
    let n = g.len();
    let mut x = DVector::zeros(n);
    for i in 0..n {
        x[i] = match state[i] {
            BoundState::Lower => lower[i],
            BoundState::Upper => upper[i],
            BoundState::Free => 0.0,
        };
    }
    if free.is_empty() {
        return Ok(x);
    }
    let nf = free.len();
    let mut h_ff = DMatrix::zeros(nf, nf);
    let mut rhs = DVector::zeros(nf);
    for (r, &i) in free.iter().enumerate() {
        rhs[r] = g[i];
        for (c, &j) in free.iter().enumerate() {
            h_ff[(r, c)] = h[(i, j)];
        }
        for j in 0..n {
            if state[j] != BoundState::Free {
                rhs[r] -= h[(i, j)] * x[j];
            }
        }
    }
    let chol = h_ff.cholesky().ok_or(QpError::IndefiniteBlock)?;
    let x_f = chol.solve(&rhs);
    for (r, &i) in free.iter().enumerate() {
        x[i] = x_f[r];
    }
    Ok(x)
}

/// Half-gradient of the objective: `H x - g` (the full gradient is twice
/// this; sign tests are unaffected).
fn compute_gradient(h: &DMatrix<f64>, g: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
    h * x - g
}

/// Worst KKT violation of a candidate point for `min ||A x - f||^2` in the
/// box: gradient components must vanish on interior coordinates and carry
/// the right sign on active ones.
pub fn kkt_residual(
    a_mat: &DMatrix<f64>,
    f: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    x: &DVector<f64>,
) -> f64 {
    let grad = a_mat.transpose() * (a_mat * x - f) * 2.0;
    let mut worst = 0.0_f64;
    for i in 0..x.len() {
        let at_tol = 1e-12 * (1.0 + lower[i].abs().max(upper[i].abs()));
        let at_lower = x[i] <= lower[i] + at_tol;
        let at_upper = x[i] >= upper[i] - at_tol;
        let v = if at_lower && at_upper {
            0.0
        } else if at_lower {
            (-grad[i]).max(0.0)
        } else if at_upper {
            grad[i].max(0.0)
        } else {
            grad[i].abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// Objective value `||A x - f||^2`.
pub fn objective(a_mat: &DMatrix<f64>, f: &DVector<f64>, x: &DVector<f64>) -> f64 {
    let r = a_mat * x - f;
    r.dot(&r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn solve(
        a_mat: &DMatrix<f64>,
        f: &DVector<f64>,
        lower: &DVector<f64>,
        upper: &DVector<f64>,
    ) -> DVector<f64> {
        let mut h = a_mat.transpose() * a_mat;
        regularize_normal_matrix(&mut h);
        let g = a_mat.transpose() * f;
        let mut warm = Vec::new();
        let start = DVector::zeros(f.len());
        solve_box_ls_normal(&h, &g, lower, upper, &start, &mut warm, 10 * f.len().max(4))
            .unwrap()
            .x
    }

    /// Exhaustive active-set oracle: every {lower, free, upper} pattern,
    /// solved as an equality-constrained least squares and screened by
    /// feasibility and multiplier signs.
    fn oracle(
        a_mat: &DMatrix<f64>,
        f: &DVector<f64>,
        lower: &DVector<f64>,
        upper: &DVector<f64>,
    ) -> (DVector<f64>, f64) {
        let n = f.len();
        let h = a_mat.transpose() * a_mat;
        let g = a_mat.transpose() * f;
        let mut best: Option<(DVector<f64>, f64)> = None;
        for code in 0..3usize.pow(n as u32) {
            let mut c = code;
            let mut state = vec![BoundState::Free; n];
            for item in state.iter_mut() {
                *item = match c % 3 {
                    0 => BoundState::Free,
                    1 => BoundState::Lower,
                    _ => BoundState::Upper,
                };
                c /= 3;
            }
            let free: Vec<usize> = (0..n).filter(|&i| state[i] == BoundState::Free).collect();
            let Ok(x) = subproblem_solution(&h, &g, lower, upper, &state, &free) else {
                continue;
            };
            let feasible = (0..n).all(|i| {
                x[i] >= lower[i] - 1e-9 * (1.0 + lower[i].abs())
                    && x[i] <= upper[i] + 1e-9 * (1.0 + upper[i].abs())
            });
            if !feasible {
                continue;
            }
            let grad = compute_gradient(&h, &g, &x);
            let tol = 1e-9 * (1.0 + g.amax());
            let kkt_ok = (0..n).all(|i| match state[i] {
                BoundState::Free => grad[i].abs() <= tol.max(1e-7 * (1.0 + grad.amax())),
                BoundState::Lower => grad[i] >= -tol,
                BoundState::Upper => grad[i] <= tol,
            });
            if !kkt_ok {
                continue;
            }
            let val = objective(a_mat, f, &x);
            match &best {
                Some((_, v)) if *v <= val => {}
                _ => best = Some((x, val)),
            }
        }
        best.expect("oracle found no KKT point")
    }

    #[test]
    fn scalar_clip() {
        let a_mat = DMatrix::from_element(1, 1, 1.0);
        let f = DVector::from_element(1, 2.0);
        let x = solve(
            &a_mat,
            &f,
            &DVector::from_element(1, 0.0),
            &DVector::from_element(1, 1.0),
        );
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn interior_solution_is_unconstrained() {
        let a_mat = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.1, 1.5]);
        let f = DVector::from_column_slice(&[0.4, -0.2]);
        let wide_lo = DVector::from_element(2, -100.0);
        let wide_hi = DVector::from_element(2, 100.0);
        let x = solve(&a_mat, &f, &wide_lo, &wide_hi);
        let exact = a_mat.clone().lu().solve(&f).unwrap();
        assert!((&x - &exact).amax() < 1e-10);
    }

    #[test]
    fn matches_exhaustive_oracle_on_random_instances() {
        let mut rng = StdRng::seed_from_u64(61);
        for trial in 0..200 {
            let n = 3;
            let a_mat = DMatrix::from_fn(n, n, |i, j| {
                rng.random_range(-1.0..1.0) + if i == j { 2.0 } else { 0.0 }
            });
            let f = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
            let mut lo = DVector::from_fn(n, |_, _| rng.random_range(-1.0..0.0));
            let mut hi = DVector::from_fn(n, |_, _| rng.random_range(0.0..1.0));
            if trial % 7 == 0 {
                // occasional degenerate coordinate
                lo[0] = 0.25;
                hi[0] = 0.25;
            }
            let x = solve(&a_mat, &f, &lo, &hi);
            let (_, oracle_val) = oracle(&a_mat, &f, &lo, &hi);
            let val = objective(&a_mat, &f, &x);
            assert!(
                (val - oracle_val).abs() <= 1e-8 * (1.0 + oracle_val),
                "trial {trial}: objective {val} vs oracle {oracle_val}"
            );
            assert!(
                kkt_residual(&a_mat, &f, &lo, &hi, &x) <= 1e-8 * (1.0 + f.norm()),
                "trial {trial}: KKT violated"
            );
        }
    }

    #[test]
    fn warm_start_reuses_active_set() {
        let a_mat = DMatrix::from_row_slice(2, 2, &[3.0, 0.2, 0.1, 2.0]);
        let f = DVector::from_column_slice(&[10.0, -10.0]);
        let lo = DVector::from_element(2, -1.0);
        let hi = DVector::from_element(2, 1.0);
        let mut h = a_mat.transpose() * &a_mat;
        regularize_normal_matrix(&mut h);
        let g = a_mat.transpose() * &f;
        let mut warm = Vec::new();
        let start = DVector::zeros(2);
        let first = solve_box_ls_normal(&h, &g, &lo, &hi, &start, &mut warm, 40).unwrap();
        assert!(first.changes > 0);
        let second = solve_box_ls_normal(&h, &g, &lo, &hi, &first.x, &mut warm, 40).unwrap();
        assert_eq!(
            second.changes, 0,
            "warm start should be immediately optimal"
        );
        assert_eq!(first.x, second.x);
    }

    #[test]
    fn iteration_cap_reported() {
        let a_mat = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let f = DVector::from_column_slice(&[5.0, 5.0]);
        let lo = DVector::from_element(2, -1.0);
        let hi = DVector::from_element(2, 1.0);
        let h = a_mat.transpose() * &a_mat;
        let g = a_mat.transpose() * &f;
        let mut warm = Vec::new();
        let start = DVector::zeros(2);
        assert!(matches!(
            solve_box_ls_normal(&h, &g, &lo, &hi, &start, &mut warm, 1),
            Err(QpError::IterationCap(1))
        ));
    }
}
