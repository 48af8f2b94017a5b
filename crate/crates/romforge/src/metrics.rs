//! Flow statistics and ROM-quality diagnostics.
//!
//! Two families of time averages appear throughout: `<.>_s` over the K
//! sampling times (snapshots) and `<.>_g` over every grid step after the
//! transient cutoff. They are deliberately kept as distinct estimators.
//! Variances use the unbiased 1/(K-1) normalization.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fom::FormProvider;
use crate::pod::ReducedSpace;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("series variance is zero")]
    ZeroVariance,
    #[error("zero denominator: {0}")]
    ZeroDenominator(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("series too short: {0}")]
    TooShort(String),
}

/// Scalar summary of one run, serialized next to the CSV series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowStats {
    pub tke_mean_s: f64,
    pub tke_var_s: f64,
    /// Per-mode sample mean of the coefficients at sampling times.
    pub coeff_mean_s: Vec<f64>,
    /// Per-mode sample variance of the coefficients at sampling times.
    pub coeff_var_s: Vec<f64>,
    /// Relative mean-flow error in the L2 norm.
    pub e0: f64,
    /// Relative mean-flow error in the V norm.
    pub e1: f64,
}

/// Instantaneous turbulent kinetic energy of full states against a fixed
/// mean field: `TKE^k = 1/2 ||u^k - mean||_{L2}^2`. States and mean must be
/// both lifted or both unlifted; the lift cancels in the difference.
pub fn tke_series_full(
    states: &DMatrix<f64>,
    mean: &DVector<f64>,
    mass: &DMatrix<f64>,
) -> Result<Vec<f64>, MetricsError> {
    if states.nrows() != mean.len() {
        return Err(MetricsError::DimensionMismatch(format!(
            "states have {} rows, mean has {}",
            states.nrows(),
            mean.len()
        )));
    }
    Ok((0..states.ncols())
        .map(|j| {
            let fluct = states.column(j) - mean;
            0.5 * (mass * &fluct).dot(&fluct)
        })
        .collect())
}

/// Reduced-side TKE from coefficients alone: with fluctuation coefficients
/// `d^j = a^j - mean_coeffs`, `TKE^j = 1/2 d^T (Z^T M Z) d`. No full states
/// are reconstructed.
pub fn tke_series_reduced(
    coeffs: &DMatrix<f64>,
    mean_coeffs: &DVector<f64>,
    mode_mass: &DMatrix<f64>,
) -> Result<Vec<f64>, MetricsError> {
    if coeffs.nrows() != mean_coeffs.len() || mode_mass.nrows() != mean_coeffs.len() {
        return Err(MetricsError::DimensionMismatch(
            "coefficient/mode-mass dimensions disagree".into(),
        ));
    }
    Ok((0..coeffs.ncols())
        .map(|j| {
            let d = coeffs.column(j) - mean_coeffs;
            0.5 * (mode_mass * &d).dot(&d)
        })
        .collect())
}

/// Sample mean and unbiased variance of a series.
pub fn sample_moments(series: &[f64]) -> (f64, f64) {
    let k = series.len();
    let mean = series.iter().sum::<f64>() / k as f64;
    if k < 2 {
        return (mean, 0.0);
    }
    let var = series.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / (k - 1) as f64;
    (mean, var)
}

/// Relative mean-flow errors `(E^0, E^1)`: L2 and V norms of the difference
/// of the mean fields over the norms of the reference mean. Fields must be
/// both lifted or both unlifted.
pub fn mean_flow_errors(
    fom_mean: &DVector<f64>,
    rom_mean: &DVector<f64>,
    reference_mean: &DVector<f64>,
    mass: &DMatrix<f64>,
    gram_v: &DMatrix<f64>,
) -> Result<(f64, f64), MetricsError> {
    if fom_mean.len() != rom_mean.len() {
        return Err(MetricsError::DimensionMismatch(
            "mean fields disagree".into(),
        ));
    }
    let diff = fom_mean - rom_mean;
    let den0 = (mass * reference_mean).dot(reference_mean).sqrt();
    let den1 = (gram_v * reference_mean).dot(reference_mean).sqrt();
    if den0 == 0.0 || den1 == 0.0 {
        return Err(MetricsError::ZeroDenominator(
            "mean flow has zero norm".into(),
        ));
    }
    let e0 = (mass * &diff).dot(&diff).sqrt() / den0;
    let e1 = (gram_v * &diff).dot(&diff).sqrt() / den1;
    Ok((e0, e1))
}

/// Autocorrelation factor at lag `kappa` of a post-transient series.
///
/// `rho(kappa) = [1/(n-kappa) sum_i (y_i - m)(y_{i+kappa} - m)]
///             / [1/n sum_i (y_i - m)^2]`
///
/// with m the full-series mean. The numerator normalization uses the number
/// of available products, so `rho(0) = 1` exactly while `|rho|` may slightly
/// exceed 1 for short series; that finite-length behavior is intentional and
/// not corrected.
pub fn autocorrelation(series: &[f64], kappa: usize) -> Result<f64, MetricsError> {
    let n = series.len();
    if n < kappa + 2 {
        return Err(MetricsError::TooShort(format!(
            "need more than kappa + 1 = {} samples, got {n}",
            kappa + 1
        )));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let den = series.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n as f64;
    if den == 0.0 {
        return Err(MetricsError::ZeroVariance);
    }
    let num = (0..n - kappa)
        .map(|i| (series[i] - mean) * (series[i + kappa] - mean))
        .sum::<f64>()
        / (n - kappa) as f64;
    Ok(num / den)
}

/// Spearman rank correlation with average ranks on ties. `None` when either
/// sequence has zero rank variance.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let rank = |v: &[f64]| -> Vec<f64> {
        let mut order: Vec<usize> = (0..v.len()).collect();
        order.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let mut ranks = vec![0.0; v.len()];
        let mut i = 0;
        while i < order.len() {
            let mut j = i;
            while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &idx in &order[i..=j] {
                ranks[idx] = avg;
            }
            i = j + 1;
        }
        ranks
    };
    let rx = rank(x);
    let ry = rank(y);
    let mx = rx.iter().sum::<f64>() / rx.len() as f64;
    let my = ry.iter().sum::<f64>() / ry.len() as f64;
    let mut num = 0.0;
    let mut dx = 0.0;
    let mut dy = 0.0;
    for i in 0..rx.len() {
        num += (rx[i] - mx) * (ry[i] - my);
        dx += (rx[i] - mx) * (rx[i] - mx);
        dy += (ry[i] - my) * (ry[i] - my);
    }
    if dx == 0.0 || dy == 0.0 {
        return None;
    }
    Some(num / (dx * dy).sqrt())
}

/// Effective stability constants and their best-fit ingredients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityReport {
    /// Mean-flow stability constant: actual mean error over the best-fit
    /// (V-projection) error. Infinity marker when the space contains the
    /// mean exactly.
    pub m: f64,
    /// TKE stability constant against the L2-projected optimum.
    pub sigma: f64,
    pub e1_opt: f64,
    pub e2_opt: f64,
}

/// Effective stability constants of a ROM against the projection optima.
///
/// * `fom_mean_lifted` - `<u_lifted>_g` from the FOM run.
/// * `fom_snapshots` - lifted snapshots at the sampling times.
/// * `rom_mean_lifted` - the ROM's reconstructed lifted mean.
/// * `rom_tke_mean_s` - the ROM's mean TKE over sampling times.
pub fn stability_constants(
    provider: &dyn FormProvider,
    space: &ReducedSpace,
    fom_mean_lifted: &DVector<f64>,
    fom_snapshots: &DMatrix<f64>,
    rom_mean_lifted: &DVector<f64>,
    rom_tke_mean_s: f64,
) -> Result<StabilityReport, MetricsError> {
    let gram_v = provider.gram_v();
    let mass = provider.mass();
    let mean_unlifted = fom_mean_lifted + provider.lift();
    let mean_norm_v = (gram_v * &mean_unlifted).dot(&mean_unlifted).sqrt();
    if mean_norm_v == 0.0 {
        return Err(MetricsError::ZeroDenominator(
            "mean flow has zero V norm".into(),
        ));
    }

    // Best-fit mean error: V-projection onto the space.
    let coeffs = space.coefficients(gram_v, fom_mean_lifted);
    let residual = fom_mean_lifted - space.reconstruct(&coeffs);
    let e1_opt = (gram_v * &residual).dot(&residual).sqrt() / mean_norm_v;

    // Best-fit TKE: L2-projection of the fluctuation.
    let mode_mass = space.modes.transpose() * mass * &space.modes;
    let mode_mass_inv = mode_mass
        .clone()
        .cholesky()
        .ok_or_else(|| MetricsError::DimensionMismatch("mode mass Gramian not SPD".into()))?;
    let k = fom_snapshots.ncols();
    let mut tke_true = Vec::with_capacity(k);
    let mut tke_opt = Vec::with_capacity(k);
    for j in 0..k {
        let fluct = fom_snapshots.column(j) - fom_mean_lifted;
        tke_true.push(0.5 * (mass * &fluct).dot(&fluct));
        let rhs = space.modes.transpose() * (mass * &fluct);
        let proj_coeffs = mode_mass_inv.solve(&rhs);
        let proj = space.reconstruct(&proj_coeffs);
        tke_opt.push(0.5 * (mass * &proj).dot(&proj));
    }
    let tke_mean = tke_true.iter().sum::<f64>() / k as f64;
    let tke_opt_mean = tke_opt.iter().sum::<f64>() / k as f64;
    if tke_mean == 0.0 {
        return Err(MetricsError::ZeroDenominator("mean TKE is zero".into()));
    }
    let e2_opt = (tke_mean - tke_opt_mean).abs() / tke_mean;

    // A best-fit error at roundoff level means the space contains the target
    // exactly; the ratio is then meaningless and flagged with infinity.
    let mean_err = {
        let d = fom_mean_lifted - rom_mean_lifted;
        (gram_v * &d).dot(&d).sqrt()
    };
    let m = if e1_opt <= 1e-14 {
        f64::INFINITY
    } else {
        mean_err / (mean_norm_v * e1_opt)
    };
    let sigma = if e2_opt <= 1e-14 {
        f64::INFINITY
    } else {
        (tke_mean - rom_tke_mean_s).abs() / (tke_mean * e2_opt)
    };
    Ok(StabilityReport {
        m,
        sigma,
        e1_opt,
        e2_opt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fom::{BurgersForms, FormProvider};
    use crate::pod::InnerProduct;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn constant_field_has_zero_tke() {
        let provider = BurgersForms::new(8, 1.0, (0.0, 0.0));
        let mean = DVector::from_element(8, 0.7);
        let states = DMatrix::from_fn(8, 5, |_, _| 0.7);
        let tke = tke_series_full(&states, &mean, provider.mass()).unwrap();
        assert!(tke.iter().all(|&t| t == 0.0));
    }

    #[test]
    fn sinusoidal_modulation_gives_sin_squared_tke() {
        // u^j = mean + sin(w j) phi with ||phi||_{L2}^2 = 2 gives
        // TKE^j = sin^2(w j).
        let provider = BurgersForms::new(12, 1.0, (0.0, 0.0));
        let mass = provider.mass();
        let mut phi = DVector::from_fn(12, |i, _| ((i + 1) as f64 * 0.4).sin());
        let norm2 = (mass * &phi).dot(&phi);
        phi *= (2.0 / norm2).sqrt();
        let mean = DVector::from_fn(12, |i, _| 0.1 * i as f64);
        let omega = 0.9;
        let states = DMatrix::from_fn(12, 7, |i, j| mean[i] + (omega * j as f64).sin() * phi[i]);
        let tke = tke_series_full(&states, &mean, mass).unwrap();
        for (j, &t) in tke.iter().enumerate() {
            let s = (omega * j as f64).sin();
            assert_relative_eq!(t, s * s, epsilon = 1e-12);
        }
    }

    #[test]
    fn reduced_tke_matches_full_reconstruction() {
        let provider = BurgersForms::new(12, 1.0, (0.0, 0.0));
        let mut rng = StdRng::seed_from_u64(5);
        let modes = DMatrix::from_fn(12, 3, |_, _| rng.random_range(-1.0..1.0));
        let coeffs = DMatrix::from_fn(3, 9, |_, _| rng.random_range(-1.0..1.0));
        let mean_coeffs = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let mode_mass = modes.transpose() * provider.mass() * &modes;
        let reduced = tke_series_reduced(&coeffs, &mean_coeffs, &mode_mass).unwrap();

        let states = &modes * &coeffs;
        let mean = &modes * &mean_coeffs;
        let full = tke_series_full(&states, &mean, provider.mass()).unwrap();
        for (a, b) in reduced.iter().zip(&full) {
            assert_relative_eq!(a, b, epsilon = 1e-10, max_relative = 1e-10);
        }
    }

    #[test]
    fn mean_flow_errors_identical_fields_are_zero() {
        let provider = BurgersForms::new(8, 1.0, (0.0, 1.0));
        let mean = DVector::from_fn(8, |i, _| (i as f64 + 1.0).ln());
        let (e0, e1) =
            mean_flow_errors(&mean, &mean, &mean, provider.mass(), provider.gram_v()).unwrap();
        assert_eq!((e0, e1), (0.0, 0.0));
    }

    #[test]
    fn mean_flow_errors_match_direct_quotient() {
        let provider = BurgersForms::new(8, 1.0, (0.0, 1.0));
        let mut rng = StdRng::seed_from_u64(17);
        let a = DVector::from_fn(8, |_, _| rng.random_range(-1.0..1.0));
        let b = DVector::from_fn(8, |_, _| rng.random_range(-1.0..1.0));
        let rfr = DVector::from_fn(8, |_, _| rng.random_range(-1.0..1.0));
        let (e0, e1) = mean_flow_errors(&a, &b, &rfr, provider.mass(), provider.gram_v()).unwrap();
        let d = &a - &b;
        let q0 = (provider.mass() * &d).dot(&d).sqrt() / (provider.mass() * &rfr).dot(&rfr).sqrt();
        let q1 =
            (provider.gram_v() * &d).dot(&d).sqrt() / (provider.gram_v() * &rfr).dot(&rfr).sqrt();
        assert_relative_eq!(e0, q0, epsilon = 1e-12);
        assert_relative_eq!(e1, q1, epsilon = 1e-12);
    }

    #[test]
    fn mean_flow_errors_zero_reference_rejected() {
        let provider = BurgersForms::new(8, 1.0, (0.0, 1.0));
        let zero = DVector::zeros(8);
        let a = DVector::from_element(8, 1.0);
        assert!(matches!(
            mean_flow_errors(&a, &a, &zero, provider.mass(), provider.gram_v()),
            Err(MetricsError::ZeroDenominator(_))
        ));
    }

    #[test]
    fn autocorrelation_lag_zero_is_one() {
        let series: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin() + 0.2).collect();
        assert_eq!(autocorrelation(&series, 0).unwrap(), 1.0);
    }

    #[test]
    fn autocorrelation_alternating_series_hand_value() {
        // Length-8 alternating +1/-1: mean 0, denominator 1, numerator at
        // lag 1 is (1/7) * sum of 7 products, each -1.
        let series = [1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0];
        let rho = autocorrelation(&series, 1).unwrap();
        assert_relative_eq!(rho, -1.0, epsilon = 1e-15);
        // lag 2: 6 products, each +1, normalized by 6 -> exactly 1.
        assert_relative_eq!(autocorrelation(&series, 2).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn autocorrelation_decorrelates_pseudorandom_series() {
        let mut rng = StdRng::seed_from_u64(23);
        let series: Vec<f64> = (0..4000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rho = autocorrelation(&series, 37).unwrap();
        assert!(rho.abs() < 0.2, "rho = {rho}");
    }

    #[test]
    fn spearman_rank_correlation() {
        // Monotone map: perfect rank agreement regardless of scale.
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y: Vec<f64> = x.iter().map(|v| f64::exp(*v)).collect();
        assert_relative_eq!(spearman(&x, &y).unwrap(), 1.0, epsilon = 1e-12);
        let y_rev: Vec<f64> = x.iter().map(|v| -*v).collect();
        assert_relative_eq!(spearman(&x, &y_rev).unwrap(), -1.0, epsilon = 1e-12);
        assert!(spearman(&x, &[1.0; 5]).is_none());
        // hand-checked tie handling: x ranks (1.5, 1.5, 3), y ranks (1, 2, 3)
        let rho = spearman(&[1.0, 1.0, 2.0], &[0.1, 0.2, 0.3]).unwrap();
        assert_relative_eq!(rho, 0.8660254037844387, epsilon = 1e-12);
    }

    #[test]
    fn autocorrelation_errors() {
        let flat = [1.0; 10];
        assert!(matches!(
            autocorrelation(&flat, 1),
            Err(MetricsError::ZeroVariance)
        ));
        let short = [1.0, 2.0];
        assert!(matches!(
            autocorrelation(&short, 1),
            Err(MetricsError::TooShort(_))
        ));
    }

    fn synthetic_space(provider: &BurgersForms, n: usize, seed: u64) -> ReducedSpace {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut modes = DMatrix::from_fn(provider.n_dof(), n, |_, _| rng.random_range(-1.0..1.0));
        // project out earlier columns in V, normalize
        let g = provider.gram_v();
        for j in 0..n {
            let mut col = modes.column(j).clone_owned();
            for i in 0..j {
                let prev = modes.column(i);
                let proj = (g * &col).dot(&prev);
                col -= prev * proj;
            }
            let norm = (g * &col).dot(&col).sqrt();
            col /= norm;
            modes.set_column(j, &col);
        }
        ReducedSpace {
            modes,
            eigenvalues: vec![1.0; n],
            inner: InnerProduct::H1,
            anchor_mu: 0.0,
        }
    }

    #[test]
    fn stability_constants_are_one_at_the_projection_optimum() {
        let provider = BurgersForms::new(12, 1.0, (0.0, 1.0));
        let space = synthetic_space(&provider, 3, 29);
        let mut rng = StdRng::seed_from_u64(31);
        let fom_mean = DVector::from_fn(12, |_, _| rng.random_range(-1.0..1.0));
        let snapshots = DMatrix::from_fn(12, 6, |_, _| rng.random_range(-1.0..1.0));

        // ROM outputs set to the projections themselves.
        let coeffs = space.coefficients(provider.gram_v(), &fom_mean);
        let rom_mean = space.reconstruct(&coeffs);
        let mode_mass = space.modes.transpose() * provider.mass() * &space.modes;
        let chol = mode_mass.cholesky().unwrap();
        let mut tke_opt = 0.0;
        for j in 0..6 {
            let fluct = snapshots.column(j) - &fom_mean;
            let rhs = space.modes.transpose() * (provider.mass() * &fluct);
            let proj = space.reconstruct(&chol.solve(&rhs));
            tke_opt += 0.5 * (provider.mass() * &proj).dot(&proj);
        }
        tke_opt /= 6.0;

        let report =
            stability_constants(&provider, &space, &fom_mean, &snapshots, &rom_mean, tke_opt)
                .unwrap();
        assert_relative_eq!(report.m, 1.0, epsilon = 1e-10);
        assert_relative_eq!(report.sigma, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn stability_constants_exact_space_reports_infinity() {
        // Space containing the mean exactly: e1_opt = 0 -> infinity marker.
        let provider = BurgersForms::new(12, 1.0, (0.0, 1.0));
        let mut rng = StdRng::seed_from_u64(37);
        let fom_mean = DVector::from_fn(12, |_, _| rng.random_range(-1.0..1.0));
        let g = provider.gram_v();
        let norm = (g * &fom_mean).dot(&fom_mean).sqrt();
        let mode = &fom_mean / norm;
        let mut modes = DMatrix::zeros(12, 1);
        modes.set_column(0, &mode);
        let space = ReducedSpace {
            modes,
            eigenvalues: vec![1.0],
            inner: InnerProduct::H1,
            anchor_mu: 0.0,
        };
        let snapshots = DMatrix::from_fn(12, 5, |_, _| rng.random_range(-1.0..1.0));
        let report =
            stability_constants(&provider, &space, &fom_mean, &snapshots, &fom_mean, 0.1).unwrap();
        assert!(report.m.is_infinite());
    }

    #[test]
    fn error_ratios_invariant_under_basis_rotation() {
        // Rotating an orthonormal basis and its coefficients together leaves
        // every reconstructed field, hence every error ratio, unchanged.
        let provider = BurgersForms::new(12, 1.0, (0.0, 1.0));
        let space = synthetic_space(&provider, 3, 41);
        let mut rng = StdRng::seed_from_u64(43);
        let raw = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let q = raw.qr().q();
        let rotated = ReducedSpace {
            modes: &space.modes * &q,
            eigenvalues: space.eigenvalues.clone(),
            inner: space.inner,
            anchor_mu: space.anchor_mu,
        };

        let coeffs = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let rot_coeffs = q.transpose() * &coeffs;
        let fom_mean = DVector::from_fn(12, |_, _| rng.random_range(-1.0..1.0));
        let reference = DVector::from_fn(12, |_, _| rng.random_range(-1.0..1.0));

        let rom_mean_a = space.reconstruct(&coeffs);
        let rom_mean_b = rotated.reconstruct(&rot_coeffs);
        let (e0a, e1a) = mean_flow_errors(
            &fom_mean,
            &rom_mean_a,
            &reference,
            provider.mass(),
            provider.gram_v(),
        )
        .unwrap();
        let (e0b, e1b) = mean_flow_errors(
            &fom_mean,
            &rom_mean_b,
            &reference,
            provider.mass(),
            provider.gram_v(),
        )
        .unwrap();
        assert_relative_eq!(e0a, e0b, max_relative = 1e-10);
        assert_relative_eq!(e1a, e1b, max_relative = 1e-10);
    }
}
