//! Interactive browser demo of the reduced-basis pipeline.
//!
//! Three operations are exposed to the page, all on the chaotic
//! Kuramoto-Sivashinsky toy model with the hyperviscosity as the free
//! parameter:
//!
//! * [`simulate_field`] - integrate the full-order model and return the
//!   space-time field for a heatmap.
//! * [`rom_compare`] - build a POD space from a fresh run and integrate the
//!   plain and box-constrained Galerkin ROMs against the truth, returning
//!   TKE series, mean-flow errors and the residual indicator.
//! * [`pod_spectrum`] - POD eigenvalues and fluctuation-energy ratios.
//!
//! Results cross the JS boundary as JSON strings so the page stays free of
//! generated bindings beyond the wasm loader. The compute drivers are plain
//! Rust and unit-tested natively; only the `#[wasm_bindgen]` exports are
//! compiled for the wasm target.

use nalgebra::DMatrix;
use serde::Serialize;

use romforge::constrained::{constrained_integrate, estimate_bounds};
use romforge::fom::{run_fom_with, FomKind, FomSpec};
use romforge::indicator::{build_indicator, evaluate_indicator};
use romforge::metrics::{mean_flow_errors, sample_moments, tke_series_full, tke_series_reduced};
use romforge::pod::{energy_ratio, pod_build, InnerProduct};
use romforge::rom::{assemble_operators, project_l2, rom_integrate};

const DOMAIN: f64 = 22.0;
const NU_MIN: f64 = 0.4;
const NU_MAX: f64 = 1.6;

fn demo_spec(n_h: usize, t_final: f64, t0: f64) -> FomSpec {
    FomSpec {
        kind: FomKind::KsPeriodic,
        n_h,
        domain_length: DOMAIN,
        boundary: (0.0, 0.0),
        mu_range: (NU_MIN, NU_MAX),
        dt: 0.05,
        t_final,
        t0,
        dt_s: 0.5,
        n_snapshots: ((t_final - t0) / 0.5) as usize - 1,
    }
}

#[derive(Serialize)]
struct FieldFrames {
    n_h: usize,
    frames: usize,
    dt_frame: f64,
    /// Row-major frames x n_h, flattened.
    values: Vec<f64>,
    min: f64,
    max: f64,
}

/// Integrate the KS model at hyperviscosity `nu` and return `frames`
/// snapshots of the field between t0 and t_final.
pub fn simulate_field_json(nu: f64, n_h: usize, t_final: f64) -> Result<String, String> {
    let nu = nu.clamp(NU_MIN, NU_MAX);
    let n_h = n_h.clamp(32, 128) & !1;
    let spec = demo_spec(n_h, t_final.clamp(60.0, 400.0), 10.0);
    let provider = spec.forms().map_err(|e| e.to_string())?;
    let run = run_fom_with(&spec, provider.as_ref(), nu).map_err(|e| e.to_string())?;
    let frames = run.snapshots.len();
    let mut values = Vec::with_capacity(frames * n_h);
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for k in 0..frames {
        for i in 0..n_h {
            let v = run.snapshots.data[(i, k)];
            min = min.min(v);
            max = max.max(v);
            values.push(v);
        }
    }
    let out = FieldFrames {
        n_h,
        frames,
        dt_frame: spec.dt_s,
        values,
        min,
        max,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct RomComparison {
    nu: f64,
    n_modes: usize,
    times: Vec<f64>,
    tke_fom: Vec<f64>,
    tke_galerkin: Option<Vec<f64>>,
    tke_constrained: Vec<f64>,
    e1_galerkin: Option<f64>,
    e1_constrained: f64,
    delta_galerkin: Option<f64>,
    delta_constrained: f64,
    galerkin_failure: Option<String>,
    activation_rate: f64,
}

/// Truth run, POD space of dimension `n_modes`, then both ROMs; the plain
/// Galerkin branch may legitimately blow up at small N and is reported as a
/// failure string instead of an error.
pub fn rom_compare_json(nu: f64, n_modes: usize) -> Result<String, String> {
    let nu = nu.clamp(NU_MIN, NU_MAX);
    let spec = demo_spec(48, 250.0, 50.0);
    let n_modes = n_modes.clamp(2, 24).min(spec.n_snapshots);
    let provider = spec.forms().map_err(|e| e.to_string())?;
    let run = run_fom_with(&spec, provider.as_ref(), nu).map_err(|e| e.to_string())?;

    let space = pod_build(&run.snapshots, n_modes, InnerProduct::H1, provider.gram_v())
        .map_err(|e| e.to_string())?;
    let ops = assemble_operators(&space, provider.as_ref(), spec.dt).map_err(|e| e.to_string())?;
    let bounds = estimate_bounds(&run.snapshots, &space, provider.gram_v(), 0.01)
        .map_err(|e| e.to_string())?;
    let indicator = build_indicator(&space, provider.as_ref()).map_err(|e| e.to_string())?;
    let a0 = project_l2(&space, provider.as_ref(), &provider.initial_state())
        .map_err(|e| e.to_string())?;

    let tke_fom = tke_series_full(&run.snapshots.data, &run.mean_lifted, provider.mass())
        .map_err(|e| e.to_string())?;
    let times = run.snapshots.times.clone();
    let reference = run.mean_unlifted(provider.as_ref());
    let mode_mass = space.modes.transpose() * provider.mass() * &space.modes;
    let stride = spec.snapshot_stride();
    let cols: Vec<usize> = (1..=spec.n_snapshots)
        .map(|k| spec.j0() + k * stride)
        .collect();
    let sampled_tke = |traj: &romforge::rom::RomTrajectory| -> Result<Vec<f64>, String> {
        let mut sampled = DMatrix::zeros(n_modes, cols.len());
        for (dst, &src) in cols.iter().enumerate() {
            sampled.set_column(dst, &traj.coeffs.column(src));
        }
        tke_series_reduced(&sampled, &traj.accum.a_plus, &mode_mass).map_err(|e| e.to_string())
    };
    let e1_of = |traj: &romforge::rom::RomTrajectory| -> Result<f64, String> {
        let rom_mean = space.reconstruct(&traj.accum.a_plus);
        mean_flow_errors(
            &run.mean_lifted,
            &rom_mean,
            &reference,
            provider.mass(),
            provider.gram_v(),
        )
        .map(|(_, e1)| e1)
        .map_err(|e| e.to_string())
    };

    let (constrained, report) =
        constrained_integrate(&ops, &a0, nu, spec.j_total(), spec.j0(), &bounds)
            .map_err(|e| e.to_string())?;
    let galerkin = rom_integrate(&ops, &a0, nu, spec.j_total(), spec.j0());

    let (tke_galerkin, e1_galerkin, delta_galerkin, galerkin_failure) = match &galerkin {
        Ok(traj) => (
            Some(sampled_tke(traj)?),
            Some(e1_of(traj)?),
            evaluate_indicator(&indicator, traj, nu).ok(),
            None,
        ),
        Err(e) => (None, None, None, Some(e.to_string())),
    };

    let out = RomComparison {
        nu,
        n_modes,
        times,
        tke_fom,
        tke_galerkin,
        tke_constrained: sampled_tke(&constrained)?,
        e1_galerkin,
        e1_constrained: e1_of(&constrained)?,
        delta_galerkin,
        delta_constrained: evaluate_indicator(&indicator, &constrained, nu)
            .map_err(|e| e.to_string())?,
        galerkin_failure,
        activation_rate: report.global,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Spectrum {
    nu: f64,
    eigenvalues: Vec<f64>,
    /// r_N for N = 2..=K.
    energy_ratio: Vec<f64>,
    tke_mean: f64,
    tke_var: f64,
}

/// POD eigenvalue diagnostics of a fresh run at `nu`.
pub fn pod_spectrum_json(nu: f64) -> Result<String, String> {
    let nu = nu.clamp(NU_MIN, NU_MAX);
    let spec = demo_spec(48, 250.0, 50.0);
    let provider = spec.forms().map_err(|e| e.to_string())?;
    let run = run_fom_with(&spec, provider.as_ref(), nu).map_err(|e| e.to_string())?;
    let k = run.snapshots.len();
    let space = pod_build(
        &run.snapshots,
        k.min(40),
        InnerProduct::H1,
        provider.gram_v(),
    )
    .or_else(|_| pod_build(&run.snapshots, 8, InnerProduct::H1, provider.gram_v()))
    .map_err(|e| e.to_string())?;
    let ratios: Vec<f64> = (2..=k)
        .map(|n| energy_ratio(&space, n).unwrap_or(f64::NAN))
        .collect();
    let tke = tke_series_full(&run.snapshots.data, &run.mean_lifted, provider.mass())
        .map_err(|e| e.to_string())?;
    let (tke_mean, tke_var) = sample_moments(&tke);
    let out = Spectrum {
        nu,
        eigenvalues: space.eigenvalues.clone(),
        energy_ratio: ratios,
        tke_mean,
        tke_var,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[cfg(target_arch = "wasm32")]
mod wasm {
    use wasm_bindgen::prelude::*;

    /// KS space-time field as JSON (see `FieldFrames`).
    #[wasm_bindgen]
    pub fn simulate_field(nu: f64, n_h: usize, t_final: f64) -> Result<String, JsValue> {
        super::simulate_field_json(nu, n_h, t_final).map_err(|e| JsValue::from_str(&e))
    }

    /// FOM-vs-ROM comparison as JSON (see `RomComparison`).
    #[wasm_bindgen]
    pub fn rom_compare(nu: f64, n_modes: usize) -> Result<String, JsValue> {
        super::rom_compare_json(nu, n_modes).map_err(|e| JsValue::from_str(&e))
    }

    /// POD spectrum diagnostics as JSON (see `Spectrum`).
    #[wasm_bindgen]
    pub fn pod_spectrum(nu: f64) -> Result<String, JsValue> {
        super::pod_spectrum_json(nu).map_err(|e| JsValue::from_str(&e))
    }
}
