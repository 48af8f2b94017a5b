//! Solution-reproduction experiment: one FOM run, POD, plain and constrained
//! ROMs across the N list, error metrics, activation statistics, stability
//! constants and the residual indicator.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::archive;
use crate::constrained::{constrained_integrate, estimate_bounds};
use crate::fom::{run_fom_with, FomRun, FormProvider};
use crate::indicator::{build_indicator, evaluate_indicator};
use crate::metrics::{
    self, mean_flow_errors, sample_moments, stability_constants, tke_series_full,
    tke_series_reduced, FlowStats,
};
use crate::pod::{pod_build, InnerProduct};
use crate::rom::{assemble_operators, project_l2, rom_integrate, RomTrajectory};

use super::{fmt_f64, write_csv, CliError, ExperimentConfig};

#[derive(Serialize)]
struct FailureRecord {
    n: usize,
    model: String,
    error: String,
}

type DimensionOutcome = (Vec<ModelRow>, Vec<FailureRecord>);

struct ModelRow {
    n: usize,
    model: &'static str,
    e0: f64,
    e1: f64,
    tke_mean: f64,
    tke_var: f64,
    delta_u: f64,
    gal_rate: f64,
}

pub fn run(config: &ExperimentConfig) -> Result<(), CliError> {
    let spec = &config.fom;
    let mu = config.mu.expect("validated");
    let out = &config.output_dir;
    let provider = spec.forms().map_err(|e| CliError::Run(e.to_string()))?;
    let run = run_fom_with(spec, provider.as_ref(), mu)
        .map_err(|e| CliError::Run(format!("FOM run failed: {e}")))?;

    // FOM reference statistics at the sampling times.
    let fom_tke = tke_series_full(&run.snapshots.data, &run.mean_lifted, provider.mass())
        .map_err(|e| CliError::Run(e.to_string()))?;
    write_tke_series(out, "tke_series_fom.csv", spec, &fom_tke)?;
    let (fom_tke_mean, fom_tke_var) = sample_moments(&fom_tke);

    let eps = config.margin();
    let results: Vec<Result<DimensionOutcome, CliError>> = config
        .n_list
        .par_iter()
        .map(|&n| evaluate_dimension(config, provider.as_ref(), &run, n, eps))
        .collect();

    let mut rows: Vec<ModelRow> = Vec::new();
    let mut failures: Vec<FailureRecord> = Vec::new();
    for r in results {
        let (mut rs, mut fs) = r?;
        rows.append(&mut rs);
        failures.append(&mut fs);
    }

    let header = "n,model,e0,e1,tke_mean,tke_var,delta_u,gal_rate";
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.n.to_string(),
                r.model.to_string(),
                fmt_f64(r.e0),
                fmt_f64(r.e1),
                fmt_f64(r.tke_mean),
                fmt_f64(r.tke_var),
                fmt_f64(r.delta_u),
                fmt_f64(r.gal_rate),
            ]
        })
        .collect();
    write_csv(&out.join("errors_vs_N.csv"), header, &csv_rows)?;

    merge_stability_parts(config)?;

    let summary = serde_json::json!({
        "mu": mu,
        "fom_tke_mean_s": fom_tke_mean,
        "fom_tke_var_s": fom_tke_var,
        "failures": failures,
    });
    std::fs::write(
        out.join("summary.json"),
        serde_json::to_vec_pretty(&summary).map_err(|e| CliError::Run(e.to_string()))?,
    )?;
    Ok(())
}

/// Indices of the sampling times within the trajectory columns.
fn sampling_columns(spec: &crate::fom::FomSpec) -> Vec<usize> {
    let stride = spec.snapshot_stride();
    (1..=spec.n_snapshots)
        .map(|k| spec.j0() + k * stride)
        .collect()
}

fn evaluate_dimension(
    config: &ExperimentConfig,
    provider: &dyn FormProvider,
    run: &FomRun,
    n: usize,
    eps: f64,
) -> Result<DimensionOutcome, CliError> {
    let spec = &config.fom;
    let out = &config.output_dir;
    let mu = run.snapshots.mu;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let record = |model: &str, err: String, failures: &mut Vec<FailureRecord>| {
        log::warn!("N = {n}, {model}: {err}");
        failures.push(FailureRecord {
            n,
            model: model.into(),
            error: err,
        });
    };

    let space = match pod_build(&run.snapshots, n, InnerProduct::H1, provider.gram_v()) {
        Ok(s) => s,
        Err(e) => {
            record("pod", e.to_string(), &mut failures);
            return Ok((rows, failures));
        }
    };
    let ops =
        assemble_operators(&space, provider, spec.dt).map_err(|e| CliError::Run(e.to_string()))?;
    let indicator = build_indicator(&space, provider).map_err(|e| CliError::Run(e.to_string()))?;
    let a0 = project_l2(&space, provider, &provider.initial_state())
        .map_err(|e| CliError::Run(e.to_string()))?;
    let bounds = estimate_bounds(&run.snapshots, &space, provider.gram_v(), eps)
        .map_err(|e| CliError::Run(e.to_string()))?;

    let galerkin = rom_integrate(&ops, &a0, mu, spec.j_total(), spec.j0());
    let constrained = constrained_integrate(&ops, &a0, mu, spec.j_total(), spec.j0(), &bounds);

    match &constrained {
        Ok((_, report)) => {
            archive::write_activation_csv(&out.join(format!("activation_N{n}.csv")), report)?
        }
        Err(e) => record("constrained", e.to_string(), &mut failures),
    }

    for (model, traj, gal_rate) in [
        ("galerkin", galerkin.as_ref().ok(), 1.0),
        (
            "constrained",
            constrained.as_ref().ok().map(|(t, _)| t),
            constrained
                .as_ref()
                .map(|(_, r)| r.global)
                .unwrap_or(f64::NAN),
        ),
    ] {
        let Some(traj) = traj else {
            if model == "galerkin" {
                record(
                    "galerkin",
                    galerkin
                        .as_ref()
                        .err()
                        .map(|e| e.to_string())
                        .unwrap_or_default(),
                    &mut failures,
                );
            }
            continue;
        };
        let row = summarize_model(config, provider, run, &space, traj, &indicator, model, n)?;
        rows.push(ModelRow { gal_rate, ..row });
    }
    Ok((rows, failures))
}

#[allow(clippy::too_many_arguments)]
fn summarize_model(
    config: &ExperimentConfig,
    provider: &dyn FormProvider,
    run: &FomRun,
    space: &crate::pod::ReducedSpace,
    traj: &RomTrajectory,
    indicator: &crate::indicator::IndicatorData,
    model: &'static str,
    n: usize,
) -> Result<ModelRow, CliError> {
    let spec = &config.fom;
    let out = &config.output_dir;
    let mu = run.snapshots.mu;

    let rom_mean = space.reconstruct(&traj.accum.a_plus);
    let reference = run.mean_unlifted(provider);
    let (e0, e1) = mean_flow_errors(
        &run.mean_lifted,
        &rom_mean,
        &reference,
        provider.mass(),
        provider.gram_v(),
    )
    .map_err(|e| CliError::Run(e.to_string()))?;

    // Reduced-side TKE at the sampling times about the grid mean.
    let cols = sampling_columns(spec);
    let mut sampled = DMatrix::zeros(traj.n(), cols.len());
    for (dst, &src) in cols.iter().enumerate() {
        sampled.set_column(dst, &traj.coeffs.column(src));
    }
    let mode_mass = space.modes.transpose() * provider.mass() * &space.modes;
    let tke = tke_series_reduced(&sampled, &traj.accum.a_plus, &mode_mass)
        .map_err(|e| CliError::Run(e.to_string()))?;
    write_tke_series(out, &format!("tke_series_N{n}_{model}.csv"), spec, &tke)?;
    let (tke_mean, tke_var) = sample_moments(&tke);

    let delta_u =
        evaluate_indicator(indicator, traj, mu).map_err(|e| CliError::Run(e.to_string()))?;

    // Per-mode sample moments and stability constants.
    let coeff_moments: Vec<(f64, f64)> = (0..traj.n())
        .map(|i| {
            let series: Vec<f64> = cols.iter().map(|&c| traj.coeffs[(i, c)]).collect();
            sample_moments(&series)
        })
        .collect();
    let stats = FlowStats {
        tke_mean_s: tke_mean,
        tke_var_s: tke_var,
        coeff_mean_s: coeff_moments.iter().map(|m| m.0).collect(),
        coeff_var_s: coeff_moments.iter().map(|m| m.1).collect(),
        e0,
        e1,
    };
    std::fs::write(
        out.join(format!("stats_N{n}_{model}.json")),
        serde_json::to_vec_pretty(&stats).map_err(|e| CliError::Run(e.to_string()))?,
    )?;

    let stability = stability_constants(
        provider,
        space,
        &run.mean_lifted,
        &run.snapshots.data,
        &rom_mean,
        tke_mean,
    );
    append_stability_row(out, n, model, &stability)?;

    Ok(ModelRow {
        n,
        model,
        e0,
        e1,
        tke_mean,
        tke_var,
        delta_u,
        gal_rate: f64::NAN,
    })
}

fn write_tke_series(
    out: &std::path::Path,
    name: &str,
    spec: &crate::fom::FomSpec,
    tke: &[f64],
) -> Result<(), CliError> {
    let stride = spec.snapshot_stride();
    let rows: Vec<Vec<String>> = tke
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let j = spec.j0() + (k + 1) * stride;
            vec![j.to_string(), fmt_f64(j as f64 * spec.dt), fmt_f64(v)]
        })
        .collect();
    write_csv(&out.join(name), "j,t,tke", &rows)
}

/// Stability rows accumulate across N and models; since dimensions run in
/// parallel the rows are staged per call and merged deterministically at the
/// end via a stable per-file name.
fn append_stability_row(
    out: &std::path::Path,
    n: usize,
    model: &str,
    report: &Result<metrics::StabilityReport, metrics::MetricsError>,
) -> Result<(), CliError> {
    let path = out.join(format!("stability_N{n}_{model}.part.json"));
    match report {
        Ok(r) => std::fs::write(
            &path,
            serde_json::to_vec(r).map_err(|e| CliError::Run(e.to_string()))?,
        )?,
        Err(e) => std::fs::write(&path, format!("{{\"error\":\"{e}\"}}"))?,
    }
    Ok(())
}

/// Merge staged stability parts into `stability_constants.csv`, ordered by
/// (N, model).
fn merge_stability_parts(config: &ExperimentConfig) -> Result<(), CliError> {
    let out = &config.output_dir;
    let mut rows: Vec<Vec<String>> = Vec::new();
    for &n in &config.n_list {
        for model in ["galerkin", "constrained"] {
            let path = out.join(format!("stability_N{n}_{model}.part.json"));
            if !path.exists() {
                continue;
            }
            let bytes = std::fs::read(&path)?;
            // Infinite constants (exactly representable targets) serialize
            // as JSON null; map them back instead of dropping the row.
            if let Ok(value) = serde_json::from_slice::<serde_json::Value>(&bytes) {
                if value.get("error").is_none() {
                    let field = |k: &str| {
                        value
                            .get(k)
                            .and_then(|v| v.as_f64())
                            .unwrap_or(f64::INFINITY)
                    };
                    rows.push(vec![
                        n.to_string(),
                        model.to_string(),
                        fmt_f64(field("m")),
                        fmt_f64(field("sigma")),
                        fmt_f64(field("e1_opt")),
                        fmt_f64(field("e2_opt")),
                    ]);
                }
            }
            std::fs::remove_file(&path)?;
        }
    }
    write_csv(
        &out.join("stability_constants.csv"),
        "n,model,m,sigma,e1_opt,e2_opt",
        &rows,
    )
}
