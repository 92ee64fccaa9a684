//! Deterministic Monte Carlo experiment drivers.
//!
//! Each driver takes a plain configuration struct plus a master seed and
//! returns summary numbers: confidence-interval coverage, mean squared
//! errors of bootstrap covariance and functional-quantile estimators,
//! partial-derivative integrated mean squared errors, and changepoint
//! rejection rates. Repetitions run in parallel; every repetition derives
//! its generators from `(seed, label, repetition index)` alone, so any
//! worker count produces identical results.
//!
//! The covariance and quantile studies follow a matched-smoothing design:
//! a *target* process (the scaled deviation of a smooth empirical copula
//! from the truth) is approximated by multiplier replicates built with a
//! possibly different *replicate* smoothing family. To isolate the effect
//! of the smoothing choice, replicates use the exact partial derivatives
//! of the data-generating model and i.i.d. sign multipliers. Quantile
//! estimation centers the replicates at their cross-replicate mean;
//! covariance estimation is centering-invariant.

use crate::bootstrap::{ci_frank_mpl_with, ci_kendall_with, CiMethod};
use crate::changepoint::{generate_ar1, run_test, Ar1Config, ChangeSpec};
use crate::data::{unit_grid, RankMatrix, Window};
use crate::derivatives::{imse, PdEstimatorSpec};
use crate::models::{CopulaFamily, CopulaModel};
use crate::multiplier::{
    estimate_covariance, estimate_functional_quantile, Functional, MultiplierConfig, PdSource,
    replicate_c_field,
};
use crate::rng::{derived_seed, stream_rng};
use crate::smoothing::{SmoothEmpiricalCopula, SmoothingFamily};
use crate::{Error, Result};
use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;

/// Stream labels keeping each driver's nested generators disjoint.
mod label {
    pub const DATA: u64 = 1;
    pub const RESAMPLE: u64 = 2;
    pub const MULTIPLIER: u64 = 3;
    pub const TRUTH: u64 = 4;
}

/// Which parameter a confidence-interval study covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CiTarget {
    /// Kendall's tau, re-estimated on each smooth resample.
    KendallTau,
    /// The Frank copula parameter, refitted by maximum pseudo-likelihood.
    FrankTheta,
}

/// Configuration of a confidence-interval coverage study.
#[derive(Debug, Clone)]
pub struct CiCoverageConfig {
    /// Data-generating copula.
    pub model: CopulaModel,
    /// True value of the covered parameter.
    pub truth: f64,
    /// Covered parameter.
    pub target: CiTarget,
    /// Smoothing family of the bootstrap sampler.
    pub smoothing: SmoothingFamily,
    /// Sample size per repetition.
    pub n: usize,
    /// Monte Carlo repetitions.
    pub reps: usize,
    /// Bootstrap resamples per interval.
    pub b: usize,
    /// Nominal confidence level.
    pub level: f64,
    /// Interval construction method.
    pub method: CiMethod,
}

/// Summary of a coverage study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageResult {
    /// Share of intervals containing the truth.
    pub coverage: f64,
    /// Average interval length.
    pub avg_length: f64,
}

/// Runs a confidence-interval coverage study.
///
/// # Errors
///
/// [`Error::Config`] for zero repetitions; interval-construction errors
/// propagated.
pub fn ci_coverage(cfg: &CiCoverageConfig, seed: u64) -> Result<CoverageResult> {
    if cfg.reps == 0 {
        return Err(Error::Config("coverage study needs repetitions".into()));
    }
    let rows: Vec<(bool, f64)> = (0..cfg.reps)
        .into_par_iter()
        .map(|r| -> Result<(bool, f64)> {
            let mut data_rng = stream_rng(derived_seed(seed, label::DATA, r as u64), 0);
            let sample = cfg.model.sample(cfg.n, &mut data_rng)?;
            let ci_seed = derived_seed(seed, label::RESAMPLE, r as u64);
            let (lo, hi) = match cfg.target {
                CiTarget::KendallTau => ci_kendall_with(
                    &sample,
                    cfg.smoothing,
                    cfg.b,
                    cfg.level,
                    cfg.method,
                    ci_seed,
                )?,
                CiTarget::FrankTheta => ci_frank_mpl_with(
                    &sample,
                    cfg.smoothing,
                    cfg.b,
                    cfg.level,
                    cfg.method,
                    ci_seed,
                )?,
            };
            Ok((lo <= cfg.truth && cfg.truth <= hi, hi - lo))
        })
        .collect::<Result<_>>()?;
    let reps = rows.len() as f64;
    Ok(CoverageResult {
        coverage: rows.iter().filter(|(hit, _)| *hit).count() as f64 / reps,
        avg_length: rows.iter().map(|(_, len)| len).sum::<f64>() / reps,
    })
}

/// The four-point evaluation set `{(i/3, j/3) : i, j = 1, 2}` of the
/// bivariate covariance study.
pub fn default_cov_points() -> Vec<Vec<f64>> {
    let mut points = Vec::with_capacity(4);
    for i in 1..=2 {
        for j in 1..=2 {
            points.push(vec![i as f64 / 3.0, j as f64 / 3.0]);
        }
    }
    points
}

/// The scaled deviation field `sqrt(n) * C^nu(u)` of one fresh sample at
/// the given points (an additive constant plays no role in covariance
/// estimation, so the true copula is not subtracted).
fn target_field_row(
    model: &CopulaModel,
    family: SmoothingFamily,
    n: usize,
    points: &[Vec<f64>],
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let sample = model.sample(n, rng)?;
    let ranks = RankMatrix::from_window(&sample, Window::full(n))?;
    let cop = SmoothEmpiricalCopula::new(ranks, family)?;
    let vals = cop.eval_grid(points)?;
    let scale = (n as f64).sqrt();
    Ok(vals.into_iter().map(|v| scale * v).collect())
}

/// Estimates the covariance of the target process at `points` from many
/// independent samples; the reference the bootstrap estimates are judged
/// against.
///
/// # Errors
///
/// [`Error::Config`] for fewer than two draws; evaluation errors
/// propagated.
pub fn covariance_truth(
    model: &CopulaModel,
    family: SmoothingFamily,
    n: usize,
    draws: usize,
    points: &[Vec<f64>],
    seed: u64,
) -> Result<Array2<f64>> {
    if draws < 2 {
        return Err(Error::Config(
            "covariance reference needs at least two draws".into(),
        ));
    }
    let rows: Vec<Vec<f64>> = (0..draws)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(derived_seed(seed, label::TRUTH, r as u64), 0);
            target_field_row(model, family, n, points, &mut rng)
        })
        .collect::<Result<_>>()?;
    let mut mat = Array2::<f64>::zeros((draws, points.len()));
    for (r, row) in rows.iter().enumerate() {
        for (e, &v) in row.iter().enumerate() {
            mat[(r, e)] = v;
        }
    }
    Ok(estimate_covariance(&mat))
}

/// Configuration of the bootstrap covariance-estimation study.
#[derive(Debug, Clone)]
pub struct CovMseConfig {
    /// Data-generating copula (also supplies the exact derivatives).
    pub model: CopulaModel,
    /// Smoothing family of the target empirical copula process.
    pub target_family: SmoothingFamily,
    /// Smoothing family of the multiplier replicates.
    pub replicate_family: SmoothingFamily,
    /// Sample size.
    pub n: usize,
    /// Monte Carlo repetitions (one covariance estimate each).
    pub reps: usize,
    /// Multiplier replicates per repetition.
    pub b: usize,
    /// Independent samples behind the reference covariance.
    pub truth_draws: usize,
    /// Evaluation points.
    pub points: Vec<Vec<f64>>,
}

/// Mean over the distinct entries of a symmetric matrix pair of the
/// squared difference.
fn mean_square_upper(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let p = a.nrows();
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..p {
        for j in i..p {
            let diff = a[(i, j)] - b[(i, j)];
            total += diff * diff;
            count += 1;
        }
    }
    total / count as f64
}

/// A matrix of i.i.d. sign multipliers, one generator stream per row.
fn sign_multipliers(b: usize, n: usize, seed: u64) -> Array2<f64> {
    let mut xi = Array2::<f64>::zeros((b, n));
    for bi in 0..b {
        let mut rng = stream_rng(seed, bi as u64);
        for i in 0..n {
            xi[(bi, i)] = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        }
    }
    xi
}

/// Average mean squared error (scaled by 1e4) of the multiplier estimate
/// of the target-process covariance, over the distinct entries and the
/// repetitions.
///
/// # Errors
///
/// [`Error::Config`] for empty designs; evaluation errors propagated.
pub fn cov_mse(cfg: &CovMseConfig, seed: u64) -> Result<f64> {
    if cfg.reps == 0 {
        return Err(Error::Config("covariance study needs repetitions".into()));
    }
    let truth = covariance_truth(
        &cfg.model,
        cfg.target_family,
        cfg.n,
        cfg.truth_draws,
        &cfg.points,
        seed,
    )?;
    let errs: Vec<f64> = (0..cfg.reps)
        .into_par_iter()
        .map(|r| -> Result<f64> {
            let mut data_rng = stream_rng(derived_seed(seed, label::DATA, r as u64), 0);
            let sample = cfg.model.sample(cfg.n, &mut data_rng)?;
            let xi = sign_multipliers(
                cfg.b,
                cfg.n,
                derived_seed(seed, label::MULTIPLIER, r as u64),
            );
            let field = replicate_c_field(
                &sample,
                cfg.replicate_family,
                &xi,
                &cfg.points,
                PdSource::Oracle(&cfg.model),
            )?;
            let est = estimate_covariance(&field);
            Ok(mean_square_upper(&est, &truth))
        })
        .collect::<Result<_>>()?;
    Ok(1e4 * errs.iter().sum::<f64>() / errs.len() as f64)
}

/// Configuration of the functional-quantile estimation study.
#[derive(Debug, Clone)]
pub struct QuantileMseConfig {
    /// Data-generating copula (also supplies the exact derivatives).
    pub model: CopulaModel,
    /// Smoothing family of the target process.
    pub target_family: SmoothingFamily,
    /// Smoothing family of the multiplier replicates.
    pub replicate_family: SmoothingFamily,
    /// Sample size.
    pub n: usize,
    /// Monte Carlo repetitions.
    pub reps: usize,
    /// Multiplier replicates per repetition.
    pub b: usize,
    /// Independent samples behind the reference quantile.
    pub truth_draws: usize,
    /// Supremum- or integral-type functional.
    pub functional: Functional,
    /// Estimated quantile order.
    pub q: f64,
    /// Interior grid resolution per coordinate for the functional.
    pub grid_per_dim: usize,
}

/// Estimates the `q`-quantile of the functional of the target process
/// from many independent samples.
///
/// # Errors
///
/// [`Error::Config`] for an empty design; evaluation errors propagated.
pub fn functional_quantile_truth(cfg: &QuantileMseConfig, seed: u64) -> Result<f64> {
    if cfg.truth_draws == 0 {
        return Err(Error::Config("quantile reference needs draws".into()));
    }
    let d = cfg.model.d();
    let grid = unit_grid(d, cfg.grid_per_dim);
    let truth_at: Vec<f64> = grid
        .iter()
        .map(|u| cfg.model.cdf(u))
        .collect::<Result<_>>()?;
    let scale = (cfg.n as f64).sqrt();
    let values: Vec<f64> = (0..cfg.truth_draws)
        .into_par_iter()
        .map(|r| -> Result<f64> {
            let mut rng = stream_rng(derived_seed(seed, label::TRUTH, r as u64), 0);
            let sample = cfg.model.sample(cfg.n, &mut rng)?;
            let ranks = RankMatrix::from_window(&sample, Window::full(cfg.n))?;
            let cop = SmoothEmpiricalCopula::new(ranks, cfg.target_family)?;
            let vals = cop.eval_grid(&grid)?;
            let traj: Vec<f64> = vals
                .iter()
                .zip(&truth_at)
                .map(|(v, c)| scale * (v - c))
                .collect();
            Ok(match cfg.functional {
                Functional::Ks => crate::multiplier::ks_functional(&traj),
                Functional::Cvm => crate::multiplier::cvm_functional(&traj),
            })
        })
        .collect::<Result<_>>()?;
    Ok(crate::multiplier::empirical_quantile(&values, cfg.q))
}

/// Mean squared error (scaled by 1e4) of the multiplier estimate of the
/// functional quantile, over the repetitions.
///
/// # Errors
///
/// [`Error::Config`] for empty designs; evaluation errors propagated.
pub fn quantile_mse(cfg: &QuantileMseConfig, seed: u64) -> Result<f64> {
    if cfg.reps == 0 {
        return Err(Error::Config("quantile study needs repetitions".into()));
    }
    let truth = functional_quantile_truth(cfg, seed)?;
    let d = cfg.model.d();
    let grid = unit_grid(d, cfg.grid_per_dim);
    let errs: Vec<f64> = (0..cfg.reps)
        .into_par_iter()
        .map(|r| -> Result<f64> {
            let mut data_rng = stream_rng(derived_seed(seed, label::DATA, r as u64), 0);
            let sample = cfg.model.sample(cfg.n, &mut data_rng)?;
            let xi = sign_multipliers(
                cfg.b,
                cfg.n,
                derived_seed(seed, label::MULTIPLIER, r as u64),
            );
            let field = replicate_c_field(
                &sample,
                cfg.replicate_family,
                &xi,
                &grid,
                PdSource::Oracle(&cfg.model),
            )?;
            let est = estimate_functional_quantile(&field, cfg.functional, cfg.q);
            Ok((est - truth) * (est - truth))
        })
        .collect::<Result<_>>()?;
    Ok(1e4 * errs.iter().sum::<f64>() / errs.len() as f64)
}

/// One partial-derivative accuracy row: the estimator specification and
/// its integrated mean squared error.
#[derive(Debug, Clone)]
pub struct ImseRow {
    /// Human-readable estimator label.
    pub estimator: String,
    /// Integrated mean squared error over the evaluation grid.
    pub imse: f64,
}

/// Integrated-MSE comparison of partial-derivative estimators on a common
/// model, coordinate, and grid.
///
/// # Errors
///
/// As for [`crate::derivatives::imse`].
pub fn pd_imse_rows(
    specs: &[PdEstimatorSpec],
    model: &CopulaModel,
    j: usize,
    n: usize,
    reps: usize,
    grid_per_dim: usize,
    seed: u64,
) -> Result<Vec<ImseRow>> {
    specs
        .iter()
        .map(|spec| {
            Ok(ImseRow {
                estimator: spec.label(),
                imse: imse(spec, model, j, n, reps, grid_per_dim, seed)?,
            })
        })
        .collect()
}

/// Configuration of a changepoint Monte Carlo study (one cell of a
/// rejection-rate table).
#[derive(Debug, Clone)]
pub struct CpdMcConfig {
    /// Sample size.
    pub n: usize,
    /// AR(1) coefficient of the margins.
    pub beta: f64,
    /// Kendall's tau of the (pre-change) Frank innovation copula;
    /// `tau = 0` uses the independence copula.
    pub tau1: f64,
    /// Optional change `(t, tau2)`: after `k* = floor(n t)` innovations
    /// switch to a Frank copula with Kendall's tau `tau2`.
    pub change: Option<(f64, f64)>,
    /// Smoothing family of the test.
    pub smoothing: SmoothingFamily,
    /// Multiplier replicates per test.
    pub b: usize,
    /// Monte Carlo repetitions.
    pub reps: usize,
    /// Multiplier configuration.
    pub mult: MultiplierConfig,
    /// Significance level.
    pub level: f64,
}

/// A bivariate Frank model with the given tau (independence for tau = 0).
pub fn frank_or_independence(tau: f64) -> Result<CopulaModel> {
    if tau.abs() < 1e-12 {
        CopulaModel::new(CopulaFamily::Independence, 0.0, 2)
    } else {
        CopulaModel::from_tau(CopulaFamily::Frank, tau, 2)
    }
}

/// Rejection rate of the changepoint test across repetitions of the AR(1)
/// data-generating process.
///
/// # Errors
///
/// [`Error::Config`] for empty designs or invalid change fractions; test
/// errors propagated.
pub fn cpd_rejection_rate(cfg: &CpdMcConfig, seed: u64) -> Result<f64> {
    if cfg.reps == 0 {
        return Err(Error::Config("rejection study needs repetitions".into()));
    }
    let innovation = frank_or_independence(cfg.tau1)?;
    let change = match cfg.change {
        None => None,
        Some((t, tau2)) => {
            if !(0.0 < t && t < 1.0) {
                return Err(Error::Config(format!(
                    "change fraction must lie in (0,1), got {t}"
                )));
            }
            Some(ChangeSpec {
                k_star: (cfg.n as f64 * t).floor() as usize,
                post_copula: frank_or_independence(tau2)?,
            })
        }
    };
    let ar1 = Ar1Config {
        beta: cfg.beta,
        innovation_copula: innovation,
        n: cfg.n,
        change,
    };
    let rejections: Vec<bool> = (0..cfg.reps)
        .into_par_iter()
        .map(|r| -> Result<bool> {
            let mut data_rng = stream_rng(derived_seed(seed, label::DATA, r as u64), 0);
            let sample = generate_ar1(&ar1, &mut data_rng)?;
            let result = run_test(
                &sample,
                cfg.smoothing,
                cfg.b,
                &cfg.mult,
                derived_seed(seed, label::MULTIPLIER, r as u64),
            )?;
            Ok(result.p_value <= cfg.level)
        })
        .collect::<Result<_>>()?;
    Ok(rejections.iter().filter(|&&x| x).count() as f64 / cfg.reps as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::tau_to_theta;

    fn clayton(tau: f64) -> CopulaModel {
        CopulaModel::from_tau(CopulaFamily::Clayton, tau, 2).unwrap()
    }

    #[test]
    fn coverage_study_is_deterministic_and_sane() {
        let cfg = CiCoverageConfig {
            model: clayton(0.5),
            truth: 0.5,
            target: CiTarget::KendallTau,
            smoothing: SmoothingFamily::Binomial,
            n: 40,
            reps: 60,
            b: 100,
            level: 0.95,
            method: CiMethod::Percentile,
        };
        let a = ci_coverage(&cfg, 11).unwrap();
        let b = ci_coverage(&cfg, 11).unwrap();
        assert_eq!(a, b);
        assert!(
            (0.75..=1.0).contains(&a.coverage),
            "coverage {}",
            a.coverage
        );
        assert!(a.avg_length > 0.0 && a.avg_length < 1.5);
    }

    #[test]
    fn frank_coverage_study_runs() {
        let theta = tau_to_theta(CopulaFamily::Frank, 0.4).unwrap();
        let cfg = CiCoverageConfig {
            model: CopulaModel::new(CopulaFamily::Frank, theta, 2).unwrap(),
            truth: theta,
            target: CiTarget::FrankTheta,
            smoothing: SmoothingFamily::Binomial,
            n: 30,
            reps: 30,
            b: 100,
            level: 0.9,
            method: CiMethod::Percentile,
        };
        let res = ci_coverage(&cfg, 12).unwrap();
        assert!((0.5..=1.0).contains(&res.coverage), "coverage {}", res.coverage);
    }

    #[test]
    fn covariance_reference_is_symmetric_with_nonnegative_diagonal() {
        let points = default_cov_points();
        let truth = covariance_truth(
            &clayton(0.25),
            SmoothingFamily::Binomial,
            20,
            2000,
            &points,
            13,
        )
        .unwrap();
        assert_eq!(truth.nrows(), 4);
        for i in 0..4 {
            assert!(truth[(i, i)] >= 0.0);
            for j in 0..4 {
                assert_eq!(truth[(i, j)].to_bits(), truth[(j, i)].to_bits());
            }
        }
        // The deviation field of a dependent copula has genuine variance.
        assert!(truth[(0, 0)] > 1e-3);
    }

    #[test]
    fn covariance_mse_is_positive_and_deterministic() {
        let cfg = CovMseConfig {
            model: clayton(0.25),
            target_family: SmoothingFamily::Binomial,
            replicate_family: SmoothingFamily::Binomial,
            n: 20,
            reps: 20,
            b: 60,
            truth_draws: 2000,
            points: default_cov_points(),
        };
        let a = cov_mse(&cfg, 14).unwrap();
        let b = cov_mse(&cfg, 14).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(a > 0.0 && a.is_finite());
    }

    #[test]
    fn quantile_mse_is_positive_and_deterministic() {
        let cfg = QuantileMseConfig {
            model: clayton(0.25),
            target_family: SmoothingFamily::Binomial,
            replicate_family: SmoothingFamily::Binomial,
            n: 20,
            reps: 15,
            b: 60,
            truth_draws: 1500,
            functional: Functional::Ks,
            q: 0.95,
            grid_per_dim: 6,
        };
        let truth = functional_quantile_truth(&cfg, 15).unwrap();
        assert!(truth > 0.0, "quantile reference {truth}");
        let a = quantile_mse(&cfg, 15).unwrap();
        let b = quantile_mse(&cfg, 15).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(a > 0.0 && a.is_finite());
    }

    #[test]
    fn imse_rows_carry_labels_and_values() {
        let specs = vec![
            PdEstimatorSpec::nabla(SmoothingFamily::Dirac),
            PdEstimatorSpec::delta_truncated(SmoothingFamily::Dirac),
        ];
        let rows = pd_imse_rows(&specs, &clayton(0.5), 0, 20, 40, 6, 16).unwrap();
        assert_eq!(rows.len(), 2);
        assert_ne!(rows[0].estimator, rows[1].estimator);
        assert!(rows.iter().all(|r| r.imse > 0.0 && r.imse.is_finite()));
    }

    #[test]
    fn null_rejection_rate_is_small_and_deterministic() {
        let cfg = CpdMcConfig {
            n: 60,
            beta: 0.0,
            tau1: 0.33,
            change: None,
            smoothing: SmoothingFamily::Binomial,
            b: 100,
            reps: 50,
            mult: MultiplierConfig::iid(),
            level: 0.05,
        };
        let a = cpd_rejection_rate(&cfg, 17).unwrap();
        let b = cpd_rejection_rate(&cfg, 17).unwrap();
        assert_eq!(a, b);
        assert!(a <= 0.16, "null rejection rate {a}");
    }

    #[test]
    fn power_increases_with_central_changes() {
        // Changes near the middle of the stretch are easiest to detect;
        // the rates for t in {0.1, 0.25, 0.5} should be ordered up to
        // Monte Carlo noise.
        let rate = |t: f64| {
            let cfg = CpdMcConfig {
                n: 100,
                beta: 0.0,
                tau1: 0.2,
                change: Some((t, 0.6)),
                smoothing: SmoothingFamily::Binomial,
                b: 120,
                reps: 50,
                mult: MultiplierConfig::dependent_default(100),
                level: 0.05,
            };
            cpd_rejection_rate(&cfg, 18).unwrap()
        };
        let r10 = rate(0.1);
        let r25 = rate(0.25);
        let r50 = rate(0.5);
        assert!(r50 >= r25 - 0.08, "t=0.5 rate {r50} vs t=0.25 rate {r25}");
        assert!(r25 >= r10 - 0.08, "t=0.25 rate {r25} vs t=0.1 rate {r10}");
        assert!(r50 > r10, "t=0.5 rate {r50} vs t=0.1 rate {r10}");
        assert!(r50 > 0.3, "central-change power {r50}");
    }
}
