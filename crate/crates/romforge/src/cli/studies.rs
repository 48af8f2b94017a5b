//! Secondary studies: h-block cross-validation across N, margin
//! sensitivity, and per-anchor versus merged-space comparison.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::constrained::{coefficient_extrema, constrained_integrate, estimate_bounds};
use crate::fom::{run_fom_with, FomSpec, SnapshotSet};
use crate::metrics::{mean_flow_errors, sample_moments, tke_series_reduced};
use crate::pod::{
    hblock_cv, pod_build, pod_merge_deflated, projection_error_mean, suggested_h, InnerProduct,
};
use crate::rom::{assemble_operators, project_l2};

use super::{fmt_f64, write_csv, CliError, ExperimentConfig};

/// h-block CV of the POD projection error across N, with an out-of-sample
/// window when the time horizon leaves room for a second K snapshots.
pub fn run_cv_study(config: &ExperimentConfig) -> Result<(), CliError> {
    let spec = &config.fom;
    let out = &config.output_dir;
    let mu = config.mu.expect("validated");
    let provider = spec.forms().map_err(|e| CliError::Run(e.to_string()))?;

    // Collect 2K snapshots when T allows a held-out window of the same size.
    let k = spec.n_snapshots;
    let double_ok = spec.t0 + 2.0 * k as f64 * spec.dt_s <= spec.t_final + 1e-9 * spec.t_final;
    let run_spec = FomSpec {
        n_snapshots: if double_ok { 2 * k } else { k },
        ..spec.clone()
    };
    let run =
        run_fom_with(&run_spec, provider.as_ref(), mu).map_err(|e| CliError::Run(e.to_string()))?;
    let (build_data, holdout) = if double_ok {
        let first = run.snapshots.data.columns(0, k).clone_owned();
        let second = run.snapshots.data.columns(k, k).clone_owned();
        (first, Some(second))
    } else {
        (run.snapshots.data.clone(), None)
    };
    let build_snaps = SnapshotSet {
        data: build_data,
        times: run.snapshots.times[..k].to_vec(),
        mu,
        spec: Some(spec.clone()),
    };

    let h = config
        .h_block
        .unwrap_or_else(|| suggested_h(&run.probe[run.j0..], spec.dt, spec.dt_s));

    // Normalization by the one-mode in-sample error.
    let e_in_ref = {
        let space = pod_build(&build_snaps, 1, InnerProduct::H1, provider.gram_v())
            .map_err(|e| CliError::Run(e.to_string()))?;
        projection_error_mean(&space, &build_snaps.data, provider.gram_v())
    };

    let rows: Vec<Vec<String>> = config
        .n_list
        .par_iter()
        .map(|&n| -> Result<Vec<String>, CliError> {
            let mut report = hblock_cv(&build_snaps, h, n, InnerProduct::H1, provider.gram_v())
                .map_err(|e| CliError::Run(e.to_string()))?;
            if let Some(held) = &holdout {
                let space = pod_build(&build_snaps, n, InnerProduct::H1, provider.gram_v())
                    .map_err(|e| CliError::Run(e.to_string()))?;
                report.e_out = Some(projection_error_mean(&space, held, provider.gram_v()));
            }
            Ok(vec![
                n.to_string(),
                fmt_f64(report.e_in),
                fmt_f64(report.e_hat),
                report.e_out.map(fmt_f64).unwrap_or_default(),
                fmt_f64(report.e_in / e_in_ref),
                fmt_f64(report.e_hat / e_in_ref),
                report
                    .e_out
                    .map(|e| fmt_f64(e / e_in_ref))
                    .unwrap_or_default(),
            ])
        })
        .collect::<Result<_, _>>()?;

    write_csv(
        &out.join("cv_vs_N.csv"),
        "n,e_in,e_hat,e_out,e_in_rel,e_hat_rel,e_out_rel",
        &rows,
    )?;
    std::fs::write(
        out.join("cv_meta.json"),
        serde_json::to_vec_pretty(&serde_json::json!({
            "h": h,
            "e_in_ref_n1": e_in_ref,
            "holdout": holdout.is_some(),
        }))
        .map_err(|e| CliError::Run(e.to_string()))?,
    )?;
    Ok(())
}

/// Margin sensitivity: constrained runs across the eps list at fixed N,
/// plus the drift of the per-mode coefficient extrema across parameters.
pub fn run_eps_sweep(config: &ExperimentConfig) -> Result<(), CliError> {
    let spec = &config.fom;
    let out = &config.output_dir;
    let mu = config.mu.expect("validated");
    let n = config.n_list[0];
    let provider = spec.forms().map_err(|e| CliError::Run(e.to_string()))?;
    let run =
        run_fom_with(spec, provider.as_ref(), mu).map_err(|e| CliError::Run(e.to_string()))?;
    let space = pod_build(&run.snapshots, n, InnerProduct::H1, provider.gram_v())
        .map_err(|e| CliError::Run(e.to_string()))?;
    let ops = assemble_operators(&space, provider.as_ref(), spec.dt)
        .map_err(|e| CliError::Run(e.to_string()))?;
    let a0 = project_l2(&space, provider.as_ref(), &provider.initial_state())
        .map_err(|e| CliError::Run(e.to_string()))?;
    let mode_mass = space.modes.transpose() * provider.mass() * &space.modes;
    let stride = spec.snapshot_stride();
    let cols: Vec<usize> = (1..=spec.n_snapshots)
        .map(|k| spec.j0() + k * stride)
        .collect();

    let rows: Vec<Vec<String>> = config
        .eps_list
        .par_iter()
        .map(|&eps| -> Result<Vec<String>, CliError> {
            let bounds = estimate_bounds(&run.snapshots, &space, provider.gram_v(), eps)
                .map_err(|e| CliError::Run(e.to_string()))?;
            let (traj, report) =
                constrained_integrate(&ops, &a0, mu, spec.j_total(), spec.j0(), &bounds)
                    .map_err(|e| CliError::Run(e.to_string()))?;
            let rom_mean = space.reconstruct(&traj.accum.a_plus);
            let reference = run.mean_unlifted(provider.as_ref());
            let (e0, e1) = mean_flow_errors(
                &run.mean_lifted,
                &rom_mean,
                &reference,
                provider.mass(),
                provider.gram_v(),
            )
            .map_err(|e| CliError::Run(e.to_string()))?;
            let mut sampled = DMatrix::zeros(n, cols.len());
            for (dst, &src) in cols.iter().enumerate() {
                sampled.set_column(dst, &traj.coeffs.column(src));
            }
            let tke = tke_series_reduced(&sampled, &traj.accum.a_plus, &mode_mass)
                .map_err(|e| CliError::Run(e.to_string()))?;
            let (tke_mean, _) = sample_moments(&tke);
            Ok(vec![
                fmt_f64(eps),
                fmt_f64(e0),
                fmt_f64(e1),
                fmt_f64(tke_mean),
                fmt_f64(report.global),
            ])
        })
        .collect::<Result<_, _>>()?;
    write_csv(
        &out.join("eps_sweep.csv"),
        "eps,e0,e1,tke_mean,gal_rate",
        &rows,
    )?;

    // Coefficient-extrema drift across other parameters, relative to the
    // anchor's own box; skipped without test parameters.
    if !config.p_test.is_empty() {
        let mut rows = Vec::new();
        let anchor_bounds = estimate_bounds(&run.snapshots, &space, provider.gram_v(), 0.0)
            .map_err(|e| CliError::Run(e.to_string()))?;
        let drifts: Vec<(f64, nalgebra::DVector<f64>, nalgebra::DVector<f64>)> = config
            .p_test
            .par_iter()
            .map(|&mu_probe| -> Result<_, CliError> {
                let probe_run = run_fom_with(spec, provider.as_ref(), mu_probe)
                    .map_err(|e| CliError::Run(e.to_string()))?;
                let (min, max) =
                    coefficient_extrema(&space, provider.gram_v(), &probe_run.snapshots.data);
                Ok((mu_probe, min, max))
            })
            .collect::<Result<_, _>>()?;
        for (mu_probe, min, max) in drifts {
            for i in 0..n {
                let width = anchor_bounds.sample_max[i] - anchor_bounds.sample_min[i];
                let drift = (min[i] - anchor_bounds.sample_min[i])
                    .abs()
                    .max((max[i] - anchor_bounds.sample_max[i]).abs());
                rows.push(vec![
                    fmt_f64(mu_probe),
                    (i + 1).to_string(),
                    fmt_f64(min[i]),
                    fmt_f64(max[i]),
                    fmt_f64(if width > 0.0 { drift / width } else { f64::NAN }),
                ]);
            }
        }
        write_csv(
            &out.join("bound_drift.csv"),
            "mu,n,sample_min,sample_max,drift_rel_width",
            &rows,
        )?;
    }
    Ok(())
}

/// Per-anchor local spaces versus one merged deflated space at matched total
/// dimension, evaluated by reproduction error at the two anchors.
pub fn run_p_vs_h(config: &ExperimentConfig) -> Result<(), CliError> {
    let spec = &config.fom;
    let out = &config.output_dir;
    let n = config.n_list[0];
    let eps = config.margin();
    let provider = spec.forms().map_err(|e| CliError::Run(e.to_string()))?;
    let mu_a = config.p_train[0];
    let mu_b = config.p_train[1];

    let run_a =
        run_fom_with(spec, provider.as_ref(), mu_a).map_err(|e| CliError::Run(e.to_string()))?;
    let run_b =
        run_fom_with(spec, provider.as_ref(), mu_b).map_err(|e| CliError::Run(e.to_string()))?;

    let space_a = pod_build(&run_a.snapshots, n, InnerProduct::H1, provider.gram_v())
        .map_err(|e| CliError::Run(e.to_string()))?;
    let space_b = pod_build(&run_b.snapshots, n, InnerProduct::H1, provider.gram_v())
        .map_err(|e| CliError::Run(e.to_string()))?;
    // Merged route: deflate the second anchor's data against the first space.
    let merged = pod_merge_deflated(&space_a, &run_b.snapshots, n, provider.gram_v())
        .map_err(|e| CliError::Run(e.to_string()))?;

    let mut rows = Vec::new();
    for (mu, run, local_space) in [(mu_a, &run_a, &space_a), (mu_b, &run_b, &space_b)] {
        for (approach, space) in [("h", local_space), ("p", &merged)] {
            let ops = assemble_operators(space, provider.as_ref(), spec.dt)
                .map_err(|e| CliError::Run(e.to_string()))?;
            let bounds = estimate_bounds(&run.snapshots, space, provider.gram_v(), eps)
                .map_err(|e| CliError::Run(e.to_string()))?;
            let a0 = project_l2(space, provider.as_ref(), &provider.initial_state())
                .map_err(|e| CliError::Run(e.to_string()))?;
            let (traj, _) =
                constrained_integrate(&ops, &a0, mu, spec.j_total(), spec.j0(), &bounds)
                    .map_err(|e| CliError::Run(e.to_string()))?;
            let rom_mean = space.reconstruct(&traj.accum.a_plus);
            let reference = run.mean_unlifted(provider.as_ref());
            let (e0, e1) = mean_flow_errors(
                &run.mean_lifted,
                &rom_mean,
                &reference,
                provider.mass(),
                provider.gram_v(),
            )
            .map_err(|e| CliError::Run(e.to_string()))?;
            let mode_mass = space.modes.transpose() * provider.mass() * &space.modes;
            let stride = spec.snapshot_stride();
            let cols: Vec<usize> = (1..=spec.n_snapshots)
                .map(|k| spec.j0() + k * stride)
                .collect();
            let mut sampled = DMatrix::zeros(space.n(), cols.len());
            for (dst, &src) in cols.iter().enumerate() {
                sampled.set_column(dst, &traj.coeffs.column(src));
            }
            let tke = tke_series_reduced(&sampled, &traj.accum.a_plus, &mode_mass)
                .map_err(|e| CliError::Run(e.to_string()))?;
            let (tke_mean, _) = sample_moments(&tke);
            rows.push(vec![
                fmt_f64(mu),
                approach.to_string(),
                space.n().to_string(),
                fmt_f64(e0),
                fmt_f64(e1),
                fmt_f64(tke_mean),
            ]);
        }
    }
    write_csv(
        &out.join("p_vs_h.csv"),
        "mu,approach,n_total,e0,e1,tke_mean",
        &rows,
    )
}
