use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use super::*;
use crate::fom::{run_fom, BurgersForms, FomKind, FomSpec, FormProvider};
use crate::testutil::{full_space, synthetic_space, P1Quad};

#[test]
fn zero_lift_operators_collapse_to_mass_and_identity() {
    let provider = BurgersForms::new(12, 1.0, (0.0, 0.0));
    let space = synthetic_space(&provider, 3, 7);
    let dt = 0.01;
    let ops = assemble_operators(&space, &provider, dt).unwrap();

    // Modes orthonormal in V and A_1 = V-Gramian: the affine block is I.
    for i in 0..3 {
        for j in 0..3 {
            let target = if i == j { 1.0 } else { 0.0 };
            assert_relative_eq!(ops.affine[0][(i, j)], target, epsilon = 1e-10);
        }
    }
    assert_eq!(ops.lift_affine[0].amax(), 0.0);
    assert_eq!(ops.lift_forcing.amax(), 0.0);
    let mass_over_dt = &ops.mass / dt;
    assert_relative_eq!((ops.a1() - &mass_over_dt).amax(), 0.0, epsilon = 1e-14);
    assert_relative_eq!(
        (ops.e_matrix() - &mass_over_dt).amax(),
        0.0,
        epsilon = 1e-14
    );
}

#[test]
fn operator_entries_match_quadrature_oracle() {
    // Non-harmonic lift so every lift-coupled tensor is nonzero.
    let n_h = 8;
    let h = 1.0 / (n_h + 1) as f64;
    let lift_full = DVector::from_fn(n_h + 2, |i, _| {
        let x = i as f64 * h;
        0.5 + x * x - 0.3 * x
    });
    let provider = BurgersForms::with_lift_field(n_h, 1.0, lift_full.clone());
    let space = synthetic_space(&provider, 2, 11);
    let dt = 0.05;
    let ops = assemble_operators(&space, &provider, dt).unwrap();

    let quad = P1Quad { h };
    let full = |v: &DVector<f64>| {
        let mut f = vec![0.0; n_h + 2];
        for i in 0..n_h {
            f[i + 1] = v[i];
        }
        f
    };
    let zeta: Vec<Vec<f64>> = (0..2)
        .map(|j| full(&space.modes.column(j).clone_owned()))
        .collect();
    let lift: Vec<f64> = lift_full.iter().copied().collect();

    for m in 0..2 {
        for n in 0..2 {
            let mass_mn = quad.mass(&zeta[n], &zeta[m]);
            assert_relative_eq!(ops.mass[(m, n)], mass_mn, epsilon = 1e-10);
            let a1_mn = mass_mn / dt + quad.tri(&lift, &zeta[n], &zeta[m]);
            assert_relative_eq!(ops.a1()[(m, n)], a1_mn, epsilon = 1e-10);
            let a2_mn = quad.stiff(&zeta[n], &zeta[m]);
            assert_relative_eq!(ops.affine[0][(m, n)], a2_mn, epsilon = 1e-10);
            let e_mn = mass_mn / dt - quad.tri(&zeta[n], &lift, &zeta[m]);
            assert_relative_eq!(ops.e_matrix()[(m, n)], e_mn, epsilon = 1e-10);
            for i in 0..2 {
                let c_imn = quad.tri(&zeta[i], &zeta[n], &zeta[m]);
                assert_relative_eq!(ops.conv[i][(m, n)], c_imn, epsilon = 1e-10);
            }
        }
        let g_m = quad.stiff(&lift, &zeta[m]);
        assert_relative_eq!(ops.lift_affine[0][m], g_m, epsilon = 1e-10);
        let h_m = quad.tri(&lift, &lift, &zeta[m]);
        assert_relative_eq!(ops.lift_forcing[m], h_m, epsilon = 1e-10);
        let lm_m = quad.mass(&lift, &zeta[m]);
        assert_relative_eq!(ops.lift_mass[m], lm_m, epsilon = 1e-10);
    }
}

#[test]
fn conv_tensor_contracts_linearly() {
    let provider = BurgersForms::new(10, 1.0, (0.0, 1.0));
    let space = synthetic_space(&provider, 3, 13);
    let ops = assemble_operators(&space, &provider, 0.01).unwrap();
    let mu = 20.0;
    let (lhs_zero, _) = ops.assemble_system(&DVector::zeros(3), mu);
    for i in 0..3 {
        let mut e_i = DVector::zeros(3);
        e_i[i] = 1.0;
        let (lhs_i, _) = ops.assemble_system(&e_i, mu);
        let slice = &lhs_i - &lhs_zero;
        assert_relative_eq!((&slice - &ops.conv[i]).amax(), 0.0, epsilon = 1e-12);
    }
}

#[test]
fn scalar_system_halves_the_coefficient() {
    // N = 1, A1 = 1/dt = 1, A2 = 1, C = 0, E = 1/dt, G = 0, theta = 1:
    // (1 + 1) a+ = a.
    let ops = ReducedOperators {
        n: 1,
        dt: 1.0,
        anchor_mu: 1.0,
        theta: ThetaFamily::InverseParam,
        mass: DMatrix::from_element(1, 1, 1.0),
        conv_lift_implicit: DMatrix::zeros(1, 1),
        conv_lift_explicit: DMatrix::zeros(1, 1),
        affine: vec![DMatrix::from_element(1, 1, 1.0)],
        lift_affine: vec![DVector::zeros(1)],
        conv: vec![DMatrix::zeros(1, 1)],
        lift_forcing: DVector::zeros(1),
        lift_mass: DVector::zeros(1),
    };
    let a = DVector::from_element(1, 0.8);
    let next = galerkin_step(&ops, &a, 1.0).unwrap();
    assert_relative_eq!(next[0], 0.4, epsilon = 1e-15);
}

#[test]
fn zero_initial_state_is_a_fixed_point_without_lift() {
    let provider = BurgersForms::new(10, 1.0, (0.0, 0.0));
    let space = synthetic_space(&provider, 3, 17);
    let ops = assemble_operators(&space, &provider, 0.01).unwrap();
    let traj = rom_integrate(&ops, &DVector::zeros(3), 20.0, 25, 5).unwrap();
    assert_eq!(traj.coeffs.amax(), 0.0);
    assert!(traj.status.iter().all(|s| *s == StepStatus::Galerkin));
}

#[test]
fn zero_steps_returns_initial_coefficients_only() {
    let provider = BurgersForms::new(10, 1.0, (0.0, 1.0));
    let space = synthetic_space(&provider, 2, 19);
    let ops = assemble_operators(&space, &provider, 0.01).unwrap();
    let a0 = DVector::from_column_slice(&[0.3, -0.4]);
    let traj = rom_integrate(&ops, &a0, 20.0, 0, 0).unwrap();
    assert_eq!(traj.coeffs.ncols(), 1);
    assert_eq!(traj.coeffs.column(0).as_slice(), a0.as_slice());
    assert!(traj.status.is_empty());
}

#[test]
fn accumulators_match_offline_recomputation() {
    let provider = BurgersForms::new(10, 1.0, (0.0, 1.0));
    let space = synthetic_space(&provider, 3, 23);
    let ops = assemble_operators(&space, &provider, 0.01).unwrap();
    let a0 = ops.initial_coeffs().unwrap();
    let (j_total, j0) = (24usize, 6usize);
    let traj = rom_integrate(&ops, &a0, 20.0, j_total, j0).unwrap();

    let window = (j_total - j0) as f64;
    let mut a_plus = DVector::zeros(3);
    let mut a_minus = DVector::zeros(3);
    let mut c_bar = DMatrix::zeros(3, 3);
    for j in j0..j_total {
        let a_j = traj.coeffs.column(j).clone_owned();
        let a_n = traj.coeffs.column(j + 1).clone_owned();
        a_minus += &a_j;
        a_plus += &a_n;
        c_bar += a_n * a_j.transpose();
    }
    assert_relative_eq!(
        (&traj.accum.a_plus - a_plus / window).amax(),
        0.0,
        epsilon = 1e-12
    );
    assert_relative_eq!(
        (&traj.accum.a_minus - a_minus / window).amax(),
        0.0,
        epsilon = 1e-12
    );
    assert_relative_eq!(
        (&traj.accum.c_bar - c_bar / window).amax(),
        0.0,
        epsilon = 1e-12
    );
    assert_eq!(
        traj.accum.a_at_j0.as_slice(),
        traj.coeffs.column(j0).as_slice()
    );
    assert_eq!(
        traj.accum.a_final.as_slice(),
        traj.coeffs.column(j_total).as_slice()
    );
}

#[test]
fn full_dimension_rom_reproduces_the_fom() {
    let n_h = 12;
    let spec = FomSpec {
        kind: FomKind::BurgersDirichlet,
        n_h,
        domain_length: 1.0,
        boundary: (0.0, 1.0),
        mu_range: (5.0, 50.0),
        dt: 5e-3,
        t_final: 0.25,
        t0: 0.0,
        dt_s: 5e-3,
        n_snapshots: 50,
    };
    let mu = 25.0;
    let provider = spec.forms().unwrap();
    let run = run_fom(&spec, mu).unwrap();

    let space = full_space(provider.as_ref(), mu);
    let ops = assemble_operators(&space, provider.as_ref(), spec.dt).unwrap();
    let a0 = project_l2(&space, provider.as_ref(), &provider.initial_state()).unwrap();
    let traj = rom_integrate(&ops, &a0, mu, spec.j_total(), spec.j0()).unwrap();

    for k in 0..run.snapshots.len() {
        let j = k + 1; // dt_s = dt, T0 = 0: snapshot k sits at step k+1
        let rom_state = space.reconstruct(&traj.coeffs.column(j).clone_owned());
        let fom_state = run.snapshots.data.column(k).clone_owned();
        let diff = (&rom_state - &fom_state).norm();
        let scale = fom_state.norm().max(1e-6);
        assert!(
            diff <= 1e-8 * scale,
            "step {j}: relative deviation {}",
            diff / scale
        );
    }
}

#[test]
fn reduced_residual_equals_full_residual_on_the_modes() {
    // Offline/online consistency: for arbitrary coefficients, the reduced
    // step residual is the full-order residual tested against each mode.
    let n_h = 10;
    let h = 1.0 / (n_h + 1) as f64;
    let lift_full = DVector::from_fn(n_h + 2, |i, _| {
        let x = i as f64 * h;
        0.2 + 0.8 * x + 0.5 * (3.0 * x).sin()
    });
    let provider = BurgersForms::with_lift_field(n_h, 1.0, lift_full);
    let space = synthetic_space(&provider, 4, 29);
    let dt = 0.02;
    let mu = 30.0;
    let ops = assemble_operators(&space, &provider, dt).unwrap();

    let mut rng = StdRng::seed_from_u64(31);
    let a_j = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
    let a_n = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));

    let (lhs, rhs) = ops.assemble_system(&a_j, mu);
    let reduced = lhs * &a_n - rhs;

    let u_a = space.reconstruct(&a_j);
    let u_b = space.reconstruct(&a_n);
    let thetas = provider.theta(mu);
    let mut f = provider.mass() * (&u_b - &u_a) / dt;
    for (q, a_q) in provider.affine().iter().enumerate() {
        f += a_q * &u_b * thetas[q];
        f += &provider.lift_affine()[q] * thetas[q];
    }
    f += provider.conv_functional(&u_a, &u_b);
    f += provider.lift_conv_first() * &u_b;
    f += provider.lift_conv_second() * &u_a;
    f += provider.lift_conv_both();
    let full_on_modes = space.modes.transpose() * f;

    let scale = reduced.amax().max(1.0);
    assert!(
        (&reduced - &full_on_modes).amax() <= 1e-10 * scale,
        "consistency defect {}",
        (&reduced - &full_on_modes).amax()
    );
}

#[test]
fn singular_system_fails_loudly() {
    let ops = ReducedOperators {
        n: 2,
        dt: 1.0,
        anchor_mu: 1.0,
        theta: ThetaFamily::InverseParam,
        mass: DMatrix::zeros(2, 2),
        conv_lift_implicit: DMatrix::zeros(2, 2),
        conv_lift_explicit: DMatrix::zeros(2, 2),
        affine: vec![DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0])],
        lift_affine: vec![DVector::zeros(2)],
        conv: vec![DMatrix::zeros(2, 2); 2],
        lift_forcing: DVector::zeros(2),
        lift_mass: DVector::zeros(2),
    };
    let a = DVector::from_column_slice(&[1.0, 2.0]);
    assert!(matches!(
        galerkin_step(&ops, &a, 1.0),
        Err(RomError::StepFailure { .. })
    ));
}
