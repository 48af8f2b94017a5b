//! Greedy anchor selection over a training set, driven by the time-averaged
//! residual indicator, and nearest-anchor online model selection.
//!
//! Offline: starting from a seeded random anchor, each iteration runs the
//! full-order model at the newest anchor, builds the local space, bounds,
//! operators and indicator, evaluates the indicator at every training
//! parameter with the constrained ROM, and picks the next anchor as the
//! training point maximizing the minimum indicator over the models built so
//! far (ties broken by the lowest parameter value; existing anchors are
//! excluded from re-selection).
//!
//! Online: given a new parameter, the n_cand models with the nearest anchors
//! are integrated fully, and the one with the smallest indicator wins. This
//! induces the parameter-domain partition implicitly.

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constrained::{constrained_integrate, estimate_bounds, BoxBounds};
use crate::fom::{run_fom_with, FomSpec, FormProvider};
use crate::indicator::{build_indicator, effectivity, evaluate_indicator, IndicatorData};
use crate::pod::{pod_build, InnerProduct, ReducedSpace};
use crate::rom::{assemble_operators, project_l2, ReducedOperators, RomTrajectory};

#[derive(Debug, Error)]
pub enum GreedyError {
    #[error("FOM run at anchor {mu} failed: {source}")]
    Fom {
        mu: f64,
        #[source]
        source: crate::fom::FomError,
    },
    #[error("model construction at anchor {mu} failed: {msg}")]
    Build { mu: f64, msg: String },
    #[error("{0}")]
    Invalid(String),
}

/// Offline configuration knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GreedyConfig {
    /// Reduced dimension of every local space.
    pub n: usize,
    /// Number of anchors (offline FOM solves).
    pub l: usize,
    /// Coefficient-box margin.
    pub eps: f64,
    /// Online candidate count.
    pub n_cand: usize,
    /// Seed of the first-anchor draw.
    pub seed: u64,
}

/// One local reduced model anchored at a training parameter.
#[derive(Debug, Clone)]
pub struct AnchorModel {
    pub mu_star: f64,
    /// Index of the anchor in the sorted training set.
    pub train_idx: usize,
    pub space: ReducedSpace,
    pub ops: ReducedOperators,
    pub bounds: BoxBounds,
    pub indicator: IndicatorData,
    /// Raw-indicator effectivity at the anchor, for the corrected estimator.
    pub eta: f64,
    /// ROM initial coefficients (projection of the FOM initial state).
    pub a0: DVector<f64>,
    /// FOM long-time mean (lifted) at the anchor.
    pub fom_mean_lifted: DVector<f64>,
}

/// Everything the offline stage produces.
#[derive(Debug, Clone)]
pub struct GreedyState {
    pub spec: FomSpec,
    pub config: GreedyConfig,
    /// Training parameters, sorted ascending.
    pub train: Vec<f64>,
    pub anchors: Vec<AnchorModel>,
    /// `indicator_table[l][i] = Delta_l(mu_i)`; one row per built model.
    pub indicator_table: Vec<Vec<f64>>,
}

impl GreedyState {
    /// Column-wise minimum of the indicator table over the first `rows`
    /// models.
    pub fn min_indicator(&self, rows: usize) -> Vec<f64> {
        min_over_models(&self.indicator_table[..rows])
    }
}

/// Column-wise minimum over model rows.
pub fn min_over_models(table: &[Vec<f64>]) -> Vec<f64> {
    let cols = table.first().map_or(0, Vec::len);
    (0..cols)
        .map(|i| table.iter().map(|row| row[i]).fold(f64::INFINITY, f64::min))
        .collect()
}

/// Next-anchor rule: the training index maximizing the min-over-models
/// indicator, excluding already chosen anchors; ties resolve to the lowest
/// parameter value. Pure so synthetic tables can drive it in tests.
pub fn select_next_anchor(table: &[Vec<f64>], train: &[f64], exclude: &[usize]) -> Option<usize> {
    let mins = min_over_models(table);
    let mut best: Option<(usize, f64)> = None;
    for (i, &value) in mins.iter().enumerate() {
        if exclude.contains(&i) {
            continue;
        }
        match best {
            Some((bi, bv)) => {
                if value > bv || (value == bv && train[i] < train[bi]) {
                    best = Some((i, value));
                }
            }
            None => best = Some((i, value)),
        }
    }
    best.map(|(i, _)| i)
}

struct RowEval {
    delta: f64,
    rom_mean_coeffs: Option<DVector<f64>>,
}

/// Offline POD-hGreedy anchor construction.
pub fn greedy_offline(
    spec: &FomSpec,
    train: &[f64],
    config: &GreedyConfig,
) -> Result<GreedyState, GreedyError> {
    spec.validate()
        .map_err(|e| GreedyError::Invalid(e.to_string()))?;
    if train.is_empty() {
        return Err(GreedyError::Invalid("empty training set".into()));
    }
    if config.l == 0 || config.l > train.len() {
        return Err(GreedyError::Invalid(format!(
            "L = {} must lie in 1..={}",
            config.l,
            train.len()
        )));
    }
    if config.n == 0 || config.n > spec.n_snapshots {
        return Err(GreedyError::Invalid(format!(
            "N = {} must lie in 1..=K = {}",
            config.n, spec.n_snapshots
        )));
    }
    let mut train: Vec<f64> = train.to_vec();
    train.sort_by(|a, b| a.partial_cmp(b).expect("non-finite training parameter"));
    let (lb, ub) = spec.mu_range;
    if train.iter().any(|&mu| mu < lb || mu > ub) {
        return Err(GreedyError::Invalid(
            "training parameter outside mu range".into(),
        ));
    }

    let provider = spec
        .forms()
        .map_err(|e| GreedyError::Invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut anchor_idx = rng.random_range(0..train.len());

    let mut anchors: Vec<AnchorModel> = Vec::with_capacity(config.l);
    let mut table: Vec<Vec<f64>> = Vec::with_capacity(config.l);
    let mut chosen: Vec<usize> = Vec::with_capacity(config.l);

    for iteration in 0..config.l {
        let mu_star = train[anchor_idx];
        chosen.push(anchor_idx);
        log::info!("greedy iteration {}: anchor mu = {mu_star}", iteration + 1);
        let model = build_anchor_model(spec, provider.as_ref(), mu_star, anchor_idx, config)?;

        // Indicator row over the training set via constrained integration.
        let evals: Vec<RowEval> = train
            .par_iter()
            .enumerate()
            .map(|(i, &mu)| evaluate_training_point(spec, &model, mu, i == anchor_idx))
            .collect();
        let row: Vec<f64> = evals.iter().map(|e| e.delta).collect();

        // Effectivity at the anchor from the same evaluation pass.
        let eta = {
            let eval = &evals[anchor_idx];
            match (&eval.rom_mean_coeffs, eval.delta.is_finite()) {
                (Some(mean_coeffs), true) => {
                    let rom_mean = model.space.reconstruct(mean_coeffs);
                    let diff = &model.fom_mean_lifted - &rom_mean;
                    let err = (provider.gram_v() * &diff).dot(&diff).sqrt();
                    effectivity(eval.delta, err).map_err(|e| GreedyError::Build {
                        mu: mu_star,
                        msg: e.to_string(),
                    })?
                }
                _ => {
                    return Err(GreedyError::Build {
                        mu: mu_star,
                        msg: "constrained ROM failed at its own anchor".into(),
                    })
                }
            }
        };
        let model = AnchorModel { eta, ..model };
        anchors.push(model);
        table.push(row);

        if iteration + 1 < config.l {
            anchor_idx = select_next_anchor(&table, &train, &chosen)
                .ok_or_else(|| GreedyError::Invalid("no selectable training point left".into()))?;
        }
    }

    Ok(GreedyState {
        spec: spec.clone(),
        config: config.clone(),
        train,
        anchors,
        indicator_table: table,
    })
}

fn build_anchor_model(
    spec: &FomSpec,
    provider: &dyn FormProvider,
    mu_star: f64,
    train_idx: usize,
    config: &GreedyConfig,
) -> Result<AnchorModel, GreedyError> {
    let build_err = |msg: String| GreedyError::Build { mu: mu_star, msg };
    let run = run_fom_with(spec, provider, mu_star).map_err(|source| GreedyError::Fom {
        mu: mu_star,
        source,
    })?;
    let space = pod_build(
        &run.snapshots,
        config.n,
        InnerProduct::H1,
        provider.gram_v(),
    )
    .map_err(|e| build_err(e.to_string()))?;
    let bounds = estimate_bounds(&run.snapshots, &space, provider.gram_v(), config.eps)
        .map_err(|e| build_err(e.to_string()))?;
    let ops =
        assemble_operators(&space, provider, spec.dt).map_err(|e| build_err(e.to_string()))?;
    let indicator = build_indicator(&space, provider).map_err(|e| build_err(e.to_string()))?;
    let a0 = project_l2(&space, provider, &provider.initial_state())
        .map_err(|e| build_err(e.to_string()))?;
    Ok(AnchorModel {
        mu_star,
        train_idx,
        space,
        ops,
        bounds,
        indicator,
        eta: f64::NAN,
        a0,
        fom_mean_lifted: run.mean_lifted,
    })
}

/// Indicator value of one model at one training parameter. A failed ROM run
/// scores infinity: the model is unusable there and the greedy should favor
/// that region.
fn evaluate_training_point(
    spec: &FomSpec,
    model: &AnchorModel,
    mu: f64,
    keep_mean: bool,
) -> RowEval {
    match constrained_integrate(
        &model.ops,
        &model.a0,
        mu,
        spec.j_total(),
        spec.j0(),
        &model.bounds,
    ) {
        Ok((traj, _)) => match evaluate_indicator(&model.indicator, &traj, mu) {
            Ok(delta) => RowEval {
                delta,
                rom_mean_coeffs: keep_mean.then(|| traj.accum.a_plus.clone()),
            },
            Err(e) => {
                log::warn!("indicator evaluation failed at mu = {mu}: {e}");
                RowEval {
                    delta: f64::INFINITY,
                    rom_mean_coeffs: None,
                }
            }
        },
        Err(e) => {
            log::warn!("constrained ROM failed at mu = {mu}: {e}");
            RowEval {
                delta: f64::INFINITY,
                rom_mean_coeffs: None,
            }
        }
    }
}

/// One candidate's online evaluation.
#[derive(Debug, Clone)]
pub struct CandidateEval {
    /// Index into `GreedyState::anchors`.
    pub model: usize,
    pub delta: f64,
    pub delta_corrected: f64,
    /// Window-mean coefficients of the candidate trajectory, enough to
    /// reconstruct its mean field for true-error comparisons.
    pub mean_coeffs: DVector<f64>,
}

/// Outcome of the online stage at one parameter.
#[derive(Debug)]
pub struct OnlineResult {
    /// Winning model index into `GreedyState::anchors`.
    pub model: usize,
    pub delta: f64,
    pub delta_corrected: f64,
    pub trajectory: RomTrajectory,
    /// All candidate evaluations, in candidate order.
    pub candidates: Vec<CandidateEval>,
}

/// Indices of the `n_cand` anchors nearest to `mu` (ties to the lower anchor
/// value).
pub fn nearest_anchors(state: &GreedyState, mu: f64, n_cand: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..state.anchors.len()).collect();
    order.sort_by(|&a, &b| {
        let da = (state.anchors[a].mu_star - mu).abs();
        let db = (state.anchors[b].mu_star - mu).abs();
        da.partial_cmp(&db).unwrap().then(
            state.anchors[a]
                .mu_star
                .partial_cmp(&state.anchors[b].mu_star)
                .unwrap(),
        )
    });
    order.truncate(n_cand.min(state.anchors.len()).max(1));
    order
}

/// Online stage: integrate the candidate models fully and return the one
/// minimizing the indicator.
pub fn greedy_online(
    state: &GreedyState,
    mu: f64,
    n_cand: usize,
) -> Result<OnlineResult, GreedyError> {
    if state.anchors.is_empty() {
        return Err(GreedyError::Invalid("no models built".into()));
    }
    let candidates = nearest_anchors(state, mu, n_cand);
    let spec = &state.spec;
    let mut best: Option<(usize, f64, f64, RomTrajectory)> = None;
    let mut evals = Vec::with_capacity(candidates.len());
    for idx in candidates {
        let model = &state.anchors[idx];
        let (traj, _) = constrained_integrate(
            &model.ops,
            &model.a0,
            mu,
            spec.j_total(),
            spec.j0(),
            &model.bounds,
        )
        .map_err(|e| GreedyError::Build {
            mu,
            msg: e.to_string(),
        })?;
        let delta =
            evaluate_indicator(&model.indicator, &traj, mu).map_err(|e| GreedyError::Build {
                mu,
                msg: e.to_string(),
            })?;
        let corrected = delta / model.eta;
        evals.push(CandidateEval {
            model: idx,
            delta,
            delta_corrected: corrected,
            mean_coeffs: traj.accum.a_plus.clone(),
        });
        let better = match &best {
            Some((_, best_delta, _, _)) => delta < *best_delta,
            None => true,
        };
        if better {
            best = Some((idx, delta, corrected, traj));
        }
    }
    let (model, delta, delta_corrected, trajectory) = best.expect("at least one candidate");
    Ok(OnlineResult {
        model,
        delta,
        delta_corrected,
        trajectory,
        candidates: evals,
    })
}

#[cfg(test)]
mod tests;
