//! A changepoint test for cross-sectional dependence: the maximally
//! selected Cramér–von Mises statistic built on smooth sequential
//! empirical copulas, its multiplier replicates, p-values, and an AR(1)
//! data generator for power studies.
//!
//! For each candidate split `s = k/n` the two-sample deviation field is
//!
//! ```text
//! D(s, u) = sqrt(n) * lambda(0,s) * lambda(s,1)
//!           * { C_{1:k}(u) - C_{k+1:n}(u) },     lambda(s,t) = (⌊nt⌋-⌊ns⌋)/n,
//! ```
//!
//! with both sub-window estimators smoothed by the chosen family, and the
//! statistic is `S = max_k mean_i D(k/n, u_i)^2`, the integral running
//! over the `n` scaled-rank atoms `u_i = R_i / n` of the full-window
//! empirical copula. Replicates substitute the local multiplier copula
//! processes of [`crate::multiplier`]:
//!
//! ```text
//! Ď(s, u) = lambda(s,1) * Č(0,s,u) - lambda(0,s) * Č(s,1,u),
//! ```
//!
//! each `Č` using sub-window ranks, sub-window centering, and truncated
//! two-sided partial-derivative weights with bandwidth
//! `min(m_window^{-1/2}, 1/2)`. p-values count replicates at least as
//! large as the observed statistic.
//!
//! Sub-windows shorter than the beta-binomial dispersion bound fall back
//! to the binomial member of the family, which needs no minimum length;
//! Dirac smoothing reproduces the classical rank-only test exactly.

use crate::data::{RankMatrix, Sample, Window};
use crate::derivatives::{pd_eval_grid, PdEstimatorSpec};
use crate::models::CopulaModel;
use crate::multiplier::{gen_multipliers, MultiplierConfig};
use crate::rng::stream_rng;
use crate::smoothing::{SmoothEmpiricalCopula, SmoothingFamily};
use crate::{Error, Result};
use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

/// Observations discarded before the kept stretch so the AR(1) filter
/// reaches stationarity.
const AR1_BURN_IN: usize = 100;

/// Redraw budget for the measure-zero event of a tied generated sample.
const TIE_RETRIES: usize = 64;

/// Outcome of the changepoint test.
#[derive(Debug, Clone)]
pub struct ChangePointResult {
    /// The observed statistic `S`.
    pub statistic: f64,
    /// `(1/B) * #{replicates >= statistic}`.
    pub p_value: f64,
    /// All `B` replicate statistics.
    pub replicate_values: Vec<f64>,
    /// The split fraction `k/n` attaining the maximum (first if tied).
    pub argmax_s: f64,
}

/// A dependence change inserted into generated data.
#[derive(Debug, Clone)]
pub struct ChangeSpec {
    /// Last observation index (one-based) drawn from the pre-change
    /// copula; rows `k_star + 1 ..= n` use `post_copula`.
    pub k_star: usize,
    /// Cross-sectional copula after the change.
    pub post_copula: CopulaModel,
}

/// Configuration of the AR(1) data generator: each margin follows
/// `X_ij = beta * X_{i-1,j} + eps_ij` with innovations
/// `eps_i = Phi^{-1}(U_i)` coordinate-wise and `U_i` drawn from the
/// innovation copula (switching to the post-change copula after `k_star`
/// when a change is configured).
#[derive(Debug, Clone)]
pub struct Ar1Config {
    /// Autoregression coefficient, `|beta| < 1`.
    pub beta: f64,
    /// Cross-sectional copula of the innovations (pre-change).
    pub innovation_copula: CopulaModel,
    /// Number of observations kept after burn-in.
    pub n: usize,
    /// Optional dependence change.
    pub change: Option<ChangeSpec>,
}

/// The standard normal quantile function, accurate to about 1e-9 over
/// the open unit interval (rational approximation refined by the
/// underlying statistics library).
fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0)
        .expect("unit normal parameters are valid")
        .inverse_cdf(p)
}

/// Generates an AR(1) sample per the configuration.
///
/// The first burn-in innovation seeds the recursion directly
/// (`X = eps`), 100 burn-in rows are discarded, and the generator redraws
/// on the measure-zero event of a tie.
///
/// # Errors
///
/// [`Error::Config`] for `|beta| >= 1`, `n = 0`, a change index outside
/// `1..n`, or a post-change copula of different dimension;
/// [`Error::Tie`] only if redraws are exhausted.
pub fn generate_ar1<R: Rng>(cfg: &Ar1Config, rng: &mut R) -> Result<Sample> {
    if !(cfg.beta.abs() < 1.0) {
        return Err(Error::Config(format!(
            "AR(1) coefficient must satisfy |beta| < 1, got {}",
            cfg.beta
        )));
    }
    if cfg.n == 0 {
        return Err(Error::Config("cannot generate an empty sample".into()));
    }
    let d = cfg.innovation_copula.d();
    if let Some(change) = &cfg.change {
        if change.k_star == 0 || change.k_star >= cfg.n {
            return Err(Error::Config(format!(
                "change index must lie strictly inside 1..{}, got {}",
                cfg.n, change.k_star
            )));
        }
        if change.post_copula.d() != d {
            return Err(Error::Config(format!(
                "post-change copula dimension {} differs from innovation dimension {d}",
                change.post_copula.d()
            )));
        }
    }
    let mut last_err = None;
    for _ in 0..TIE_RETRIES {
        let mut state = vec![0.0f64; d];
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(cfg.n);
        for step in 0..(AR1_BURN_IN + cfg.n) {
            // One-based index of the kept observation this step produces
            // (burn-in steps count as pre-change history).
            let kept_index = step.saturating_sub(AR1_BURN_IN - 1);
            let model = match &cfg.change {
                Some(change) if kept_index > change.k_star => &change.post_copula,
                _ => &cfg.innovation_copula,
            };
            let u = model.sample(1, rng)?;
            for j in 0..d {
                let eps = normal_quantile(u.get(0, j));
                state[j] = if step == 0 {
                    eps
                } else {
                    cfg.beta * state[j] + eps
                };
            }
            if step >= AR1_BURN_IN {
                rows.push(state.clone());
            }
        }
        match Sample::new(rows) {
            Ok(sample) => return Ok(sample),
            Err(e @ Error::Tie { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("retry loop only repeats on tie errors"))
}

/// The split weight `lambda(0, k/n) * lambda(k/n, 1)`, computed as the
/// integer ratio `k(n-k)/n^2` so exactly representable values stay exact.
pub(crate) fn split_weight(n: usize, k: usize) -> f64 {
    (k * (n - k)) as f64 / (n * n) as f64
}

/// The share of replicates at least as large as the observed statistic.
pub(crate) fn p_value_from(statistic: f64, replicates: &[f64]) -> f64 {
    let hits = replicates.iter().filter(|&&r| r >= statistic).count();
    hits as f64 / replicates.len() as f64
}

/// Resolves the smoothing family for a sub-window of length `m`: the
/// beta-binomial member needs `rho < m` and falls back to the binomial
/// member on shorter stretches.
fn window_family(family: SmoothingFamily, m: usize) -> SmoothingFamily {
    match family {
        SmoothingFamily::BetaBinomial { rho } if m as f64 <= rho => SmoothingFamily::Binomial,
        other => other,
    }
}

/// Applies the same short-window family fallback to the smoothing step of
/// a partial-derivative estimator.
fn window_pd_spec(spec: &PdEstimatorSpec, m: usize) -> PdEstimatorSpec {
    use crate::derivatives::Placement;
    let mut out = spec.clone();
    out.placement = match out.placement {
        Placement::SmoothThenDiff(f) => Placement::SmoothThenDiff(window_family(f, m)),
        Placement::DiffThenSmooth(f) => Placement::DiffThenSmooth(window_family(f, m)),
        other => other,
    };
    out
}

/// The evaluation atoms of the `dC_{1:n}` integral: the scaled rank
/// vectors `R_i / n` of the full window.
fn integration_points(sample: &Sample) -> Result<Vec<Vec<f64>>> {
    let ranks = RankMatrix::from_window(sample, Window::full(sample.n()))?;
    Ok(ranks.pseudo_observations())
}

/// The observed changepoint statistic and the split fraction attaining it:
/// `S = max_{k=1..n-1} mean_i D(k/n, u_i)^2` over the scaled-rank atoms.
///
/// # Errors
///
/// [`Error::Config`] for `n < 4`; estimator construction errors
/// propagated.
pub fn statistic_s(sample: &Sample, family: SmoothingFamily) -> Result<(f64, f64)> {
    let n = sample.n();
    if n < 4 {
        return Err(Error::Config(format!(
            "the changepoint statistic needs n >= 4 observations, got {n}"
        )));
    }
    let points = integration_points(sample)?;
    let values: Vec<f64> = (1..n)
        .into_par_iter()
        .map(|k| -> Result<f64> {
            let side = |window: Window| -> Result<Vec<f64>> {
                let ranks = RankMatrix::from_window(sample, window)?;
                let fam = window_family(family, ranks.m());
                SmoothEmpiricalCopula::new(ranks, fam)?.eval_grid(&points)
            };
            let pre = side(Window { k: 1, l: k })?;
            let suf = side(Window { k: k + 1, l: n })?;
            let scale = (n as f64).sqrt() * split_weight(n, k);
            let mean_sq = pre
                .iter()
                .zip(&suf)
                .map(|(a, b)| {
                    let dv = scale * (a - b);
                    dv * dv
                })
                .sum::<f64>()
                / points.len() as f64;
            Ok(mean_sq)
        })
        .collect::<Result<_>>()?;
    let mut best = f64::NEG_INFINITY;
    let mut best_k = 1usize;
    for (idx, &v) in values.iter().enumerate() {
        if v > best {
            best = v;
            best_k = idx + 1;
        }
    }
    Ok((best, best_k as f64 / n as f64))
}

/// Per-split mean-square replicate values: entry `(b, k-1)` holds
/// `mean_i Ď^{[b]}(k/n, u_i)^2` for multiplier row `b`.
///
/// Points and their coordinate projections are evaluated once per
/// sub-window; all replicates then share the centered kernel matrix
/// through one matrix product per side.
pub(crate) fn replicate_split_means(
    sample: &Sample,
    family: SmoothingFamily,
    xi: ArrayView2<'_, f64>,
    pd_spec: &PdEstimatorSpec,
) -> Result<Array2<f64>> {
    let n = sample.n();
    let d = sample.d();
    if n < 4 {
        return Err(Error::Config(format!(
            "the changepoint statistic needs n >= 4 observations, got {n}"
        )));
    }
    if xi.ncols() != n {
        return Err(Error::Range(format!(
            "multiplier matrix has {} columns, sample has {n} rows",
            xi.ncols()
        )));
    }
    let nb = xi.nrows();
    let points = integration_points(sample)?;
    let p = points.len();
    // Extended evaluation list: the atoms followed by d blocks of
    // margin projections u^{(j)} (all coordinates but j set to 1).
    let mut extended = points.clone();
    for j in 0..d {
        for u in &points {
            let mut proj = vec![1.0; d];
            proj[j] = u[j];
            extended.push(proj);
        }
    }
    let sqrt_n = (n as f64).sqrt();

    // One local copula-process replicate field per side of the split:
    // rows are replicates, columns the p atoms.
    let side_field = |window: Window, cols: std::ops::Range<usize>| -> Result<Array2<f64>> {
        let ranks = RankMatrix::from_window(sample, window)?;
        let m = ranks.m();
        let fam = window_family(family, m);
        let cop = SmoothEmpiricalCopula::new(ranks, fam)?;
        let mut h = cop.kernel_matrix(&extended)?;
        let centers = cop.eval_grid(&extended)?;
        for (mut row, _) in h.axis_iter_mut(Axis(0)).zip(0..m) {
            row.iter_mut().zip(&centers).for_each(|(v, c)| *v -= c);
        }
        let spec = window_pd_spec(pd_spec, m);
        let pd: Vec<Vec<f64>> = (0..d)
            .map(|j| pd_eval_grid(&spec, cop.ranks(), j, &points))
            .collect::<Result<_>>()?;
        let b_field = xi.slice(ndarray::s![.., cols]).dot(&h) / sqrt_n;
        let mut c_field = b_field.slice(ndarray::s![.., 0..p]).to_owned();
        for j in 0..d {
            let proj_block = b_field.slice(ndarray::s![.., (1 + j) * p..(2 + j) * p]);
            for b in 0..nb {
                for e in 0..p {
                    c_field[(b, e)] -= pd[j][e] * proj_block[(b, e)];
                }
            }
        }
        Ok(c_field)
    };

    let per_split: Vec<Vec<f64>> = (1..n)
        .into_par_iter()
        .map(|k| -> Result<Vec<f64>> {
            let pre = side_field(Window { k: 1, l: k }, 0..k)?;
            let suf = side_field(Window { k: k + 1, l: n }, k..n)?;
            let lam_pre = k as f64 / n as f64;
            let lam_suf = (n - k) as f64 / n as f64;
            let means = (0..nb)
                .map(|b| {
                    (0..p)
                        .map(|e| {
                            let dv = lam_suf * pre[(b, e)] - lam_pre * suf[(b, e)];
                            dv * dv
                        })
                        .sum::<f64>()
                        / p as f64
                })
                .collect();
            Ok(means)
        })
        .collect::<Result<_>>()?;

    let mut out = Array2::<f64>::zeros((nb, n - 1));
    for (col, means) in per_split.iter().enumerate() {
        for (b, &v) in means.iter().enumerate() {
            out[(b, col)] = v;
        }
    }
    Ok(out)
}

/// One replicate statistic `Š = max_k mean_i Ď(k/n, u_i)^2` for a single
/// multiplier vector.
///
/// # Errors
///
/// [`Error::Range`] on a multiplier-length mismatch; estimator errors
/// propagated.
pub fn replicate_s(
    sample: &Sample,
    family: SmoothingFamily,
    multipliers: &[f64],
    pd_spec: &PdEstimatorSpec,
) -> Result<f64> {
    let xi = ArrayView2::from_shape((1, multipliers.len()), multipliers)
        .map_err(|e| Error::Range(format!("multiplier vector shape: {e}")))?;
    let means = replicate_split_means(sample, family, xi, pd_spec)?;
    Ok(means
        .row(0)
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Runs the changepoint test: observed statistic, `B` multiplier
/// replicates with per-replicate generator streams, and the counting
/// p-value.
///
/// Partial-derivative weights use the truncated two-sided estimator of
/// the same smoothing family; multipliers follow `mult_cfg`.
///
/// # Errors
///
/// [`Error::Config`] for `B < 100` or `n < 4`; generation and estimator
/// errors propagated.
pub fn run_test(
    sample: &Sample,
    family: SmoothingFamily,
    b: usize,
    mult_cfg: &MultiplierConfig,
    seed: u64,
) -> Result<ChangePointResult> {
    if b < 100 {
        return Err(Error::Config(format!(
            "the changepoint test needs at least 100 replicates, got {b}"
        )));
    }
    let n = sample.n();
    let (statistic, argmax_s) = statistic_s(sample, family)?;
    let rows: Vec<Vec<f64>> = (0..b)
        .into_par_iter()
        .map(|bi| gen_multipliers(mult_cfg, n, &mut stream_rng(seed, bi as u64)))
        .collect::<Result<_>>()?;
    let mut xi = Array2::<f64>::zeros((b, n));
    for (bi, row) in rows.iter().enumerate() {
        for (i, &v) in row.iter().enumerate() {
            xi[(bi, i)] = v;
        }
    }
    let pd_spec = PdEstimatorSpec::delta_truncated(family);
    let means = replicate_split_means(sample, family, xi.view(), &pd_spec)?;
    let replicate_values: Vec<f64> = means
        .axis_iter(Axis(0))
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let p_value = p_value_from(statistic, &replicate_values);
    Ok(ChangePointResult {
        statistic,
        p_value,
        replicate_values,
        argmax_s,
    })
}
