//! Sampling from a smooth empirical copula and smooth-bootstrap confidence
//! intervals.
//!
//! A smooth empirical copula with Binomial or BetaBinomial kernels is a
//! genuine copula, and it is an equal-weight mixture over the observation
//! rows of tractable kernels. That yields an exact sampling scheme for one
//! variate `V`:
//!
//! 1. pick a row `I` uniformly from `{1, …, n}`;
//! 2. draw `U` from the survival copula coupling the kernel margins
//!    (independence for the Binomial family, the empirical beta copula for
//!    the BetaBinomial family);
//! 3. set `V_j = K_{R_Ij}^{-1}(U_j)` where `K_r(u)` is the kernel's margin
//!    distribution function in `u` — continuous and strictly increasing,
//!    so the quantile is well defined.
//!
//! For the Binomial family `K_r` is the `Beta(r, n+1-r)` distribution
//! function and step 3 collapses to direct Beta draws; the BetaBinomial
//! family inverts `K_r` numerically with a bracket table plus safeguarded
//! false position. The Dirac family has step-function margins and is not
//! supported.
//!
//! Repeating the scheme `n` times gives a *smooth bootstrap* resample of
//! the data's dependence structure, tie-free with probability one. On top
//! of it sit percentile confidence intervals for Kendall's tau and for the
//! Frank copula parameter fitted by maximum pseudo-likelihood.

use crate::data::{kendall_tau, RankMatrix, Sample, Window};
use crate::models::frank_log_density;
use crate::rng::stream_rng;
use crate::smoothing::{SmoothEmpiricalCopula, SmoothingFamily};
use crate::{Error, Result};
use rand::Rng;
use rand_distr::{Beta, Distribution};
use rayon::prelude::*;

/// Quantile-inversion tolerance: `|K(u) - y|` at the returned `u`. Far
/// below the `1/n` resolution of the ranks for any realistic sample size.
pub const INVERSION_TOLERANCE: f64 = 1e-10;

/// Number of intervals in the inversion bracket table.
const BRACKET_GRID: usize = 512;

/// Retry budget for the measure-zero event of a tied resample.
const TIE_RETRIES: usize = 64;

/// Inverts a kernel margin distribution: the `u` with
/// `K_r(u) = margin_survival(u, r) = y`, to [`INVERSION_TOLERANCE`], by
/// bisection on `[0, 1]`.
///
/// Margins are identical across coordinates, so only the rank `r` matters.
/// `y = 0` and `y = 1` map to the exact endpoints.
///
/// # Errors
///
/// [`Error::UnsupportedFamily`] for the Dirac family (step-function
/// margins have no continuous inverse); [`Error::Range`] for `r` outside
/// `1..=m` or `y` outside `[0, 1]`; [`Error::Tolerance`] if bisection
/// stalls without reaching the tolerance (numeric pathology guard).
pub fn margin_quantile_invert(cop: &SmoothEmpiricalCopula, r: u32, y: f64) -> Result<f64> {
    if cop.family() == SmoothingFamily::Dirac {
        return Err(Error::UnsupportedFamily(
            "Dirac kernel margins are step functions and cannot be inverted".into(),
        ));
    }
    if r == 0 || r as usize > cop.m() {
        return Err(Error::Range(format!(
            "rank {r} outside 1..={} for quantile inversion",
            cop.m()
        )));
    }
    if !(0.0..=1.0).contains(&y) {
        return Err(Error::Range(format!(
            "quantile level must lie in [0,1], got {y}"
        )));
    }
    if y == 0.0 {
        return Ok(0.0);
    }
    if y == 1.0 {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f = cop.margin_survival(mid, r) - y;
        if f.abs() <= INVERSION_TOLERANCE {
            return Ok(mid);
        }
        if f < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Tolerance(format!(
        "margin quantile inversion stalled for rank {r} at level {y}"
    )))
}

/// Precomputed margin-survival values on a `u` grid: row `g` holds
/// `K_r(g / BRACKET_GRID)` for every rank `r`, giving O(log grid) bracket
/// lookups for inversion.
#[derive(Debug, Clone)]
struct BracketTable {
    /// Flattened `(BRACKET_GRID + 1) x m`, indexed `g * m + (r - 1)`.
    values: Vec<f64>,
    m: usize,
}

impl BracketTable {
    fn new(cop: &SmoothEmpiricalCopula) -> Self {
        let m = cop.m();
        let mut values = Vec::with_capacity((BRACKET_GRID + 1) * m);
        for g in 0..=BRACKET_GRID {
            let u = g as f64 / BRACKET_GRID as f64;
            values.extend_from_slice(&cop.margin_survival_column(u));
        }
        Self { values, m }
    }

    /// The grid interval `[g, g+1]` whose survival values bracket `y`.
    fn bracket(&self, r: u32, y: f64) -> (f64, f64, f64, f64) {
        let col = (r - 1) as usize;
        let at = |g: usize| self.values[g * self.m + col];
        let (mut glo, mut ghi) = (0usize, BRACKET_GRID);
        while ghi - glo > 1 {
            let gmid = (glo + ghi) / 2;
            if at(gmid) <= y {
                glo = gmid;
            } else {
                ghi = gmid;
            }
        }
        let scale = BRACKET_GRID as f64;
        (glo as f64 / scale, ghi as f64 / scale, at(glo), at(ghi))
    }
}

/// Safeguarded false-position (Illinois) refinement of a bracketed root of
/// the increasing function `u -> K(u) - y`.
fn refine_bracket(
    survival: impl Fn(f64) -> f64,
    y: f64,
    mut lo: f64,
    mut hi: f64,
    mut flo: f64,
    mut fhi: f64,
) -> Result<f64> {
    if flo.abs() <= INVERSION_TOLERANCE {
        return Ok(lo);
    }
    if fhi.abs() <= INVERSION_TOLERANCE {
        return Ok(hi);
    }
    let mut side = 0i8;
    for _ in 0..200 {
        let mut mid = (lo * fhi - hi * flo) / (fhi - flo);
        if !(mid > lo && mid < hi) || !mid.is_finite() {
            mid = 0.5 * (lo + hi);
        }
        let fm = survival(mid) - y;
        if fm.abs() <= INVERSION_TOLERANCE {
            return Ok(mid);
        }
        if fm < 0.0 {
            lo = mid;
            flo = fm;
            if side == -1 {
                fhi *= 0.5;
            }
            side = -1;
        } else {
            hi = mid;
            fhi = fm;
            if side == 1 {
                flo *= 0.5;
            }
            side = 1;
        }
        if hi - lo < 1e-15 {
            // The margin distribution is Lipschitz, so at this width one
            // endpoint must sit within tolerance.
            return if flo.abs() <= fhi.abs() {
                if flo.abs() <= INVERSION_TOLERANCE {
                    Ok(lo)
                } else {
                    Err(Error::Tolerance("inversion bracket collapsed".into()))
                }
            } else if fhi.abs() <= INVERSION_TOLERANCE {
                Ok(hi)
            } else {
                Err(Error::Tolerance("inversion bracket collapsed".into()))
            };
        }
    }
    Err(Error::Tolerance("quantile inversion stalled".into()))
}

/// How step 3 of the sampling scheme is realized per family.
#[derive(Debug, Clone)]
enum MarginDraws {
    /// `Beta(r, m+1-r)` laws per rank; both the direct margin draws of the
    /// Binomial family and the inner coupling draws of the BetaBinomial
    /// family.
    Direct(Vec<Beta<f64>>),
    /// Beta laws for the inner coupling plus numeric inversion of the
    /// beta-binomial margins.
    Inverted {
        inner: Vec<Beta<f64>>,
        table: BracketTable,
    },
}

/// A reusable sampler for one fitted smooth empirical copula.
///
/// Construction precomputes per-rank margin laws (and, for the
/// BetaBinomial family, the inversion bracket table), so that each draw
/// costs O(d) Beta variates plus at most a few survival evaluations per
/// coordinate. Immutable and shareable across worker threads.
#[derive(Debug, Clone)]
pub struct BootstrapSampler {
    cop: SmoothEmpiricalCopula,
    draws: MarginDraws,
}

impl BootstrapSampler {
    /// Prepares a sampler for the estimator.
    ///
    /// # Errors
    ///
    /// [`Error::UnsupportedFamily`] for the Dirac family.
    pub fn new(cop: &SmoothEmpiricalCopula) -> Result<Self> {
        let m = cop.m();
        let betas: Vec<Beta<f64>> = (1..=m)
            .map(|r| {
                Beta::new(r as f64, (m + 1 - r) as f64)
                    .map_err(|e| Error::Domain(format!("beta margin setup failed: {e}")))
            })
            .collect::<Result<_>>()?;
        let draws = match cop.family() {
            SmoothingFamily::Dirac => {
                return Err(Error::UnsupportedFamily(
                    "sampling needs continuous kernel margins; the Dirac family has none".into(),
                ));
            }
            SmoothingFamily::Binomial => MarginDraws::Direct(betas),
            SmoothingFamily::BetaBinomial { .. } => MarginDraws::Inverted {
                inner: betas,
                table: BracketTable::new(cop),
            },
        };
        Ok(Self {
            cop: cop.clone(),
            draws,
        })
    }

    /// The window length `n` of the underlying estimator.
    pub fn n(&self) -> usize {
        self.cop.m()
    }

    /// Draws a single variate `V` in `[0,1]^d` distributed as the smooth
    /// empirical copula.
    ///
    /// # Errors
    ///
    /// [`Error::Tolerance`] from numeric inversion (beta-binomial kind
    /// only; guards pathology, unreachable for valid inputs).
    pub fn draw<R: Rng>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let ranks = self.cop.ranks();
        let (m, d) = (ranks.m(), ranks.d());
        let i = rng.gen_range(0..m);
        match &self.draws {
            MarginDraws::Direct(betas) => Ok((0..d)
                .map(|j| betas[(ranks.get(i, j) - 1) as usize].sample(rng))
                .collect()),
            MarginDraws::Inverted { inner, table } => {
                // The coupling variate comes from the empirical beta copula
                // of the same ranks: a second uniform row index with
                // independent Beta coordinates.
                let ip = rng.gen_range(0..m);
                (0..d)
                    .map(|j| {
                        let y = inner[(ranks.get(ip, j) - 1) as usize].sample(rng);
                        let r = ranks.get(i, j);
                        if y <= 0.0 {
                            return Ok(0.0);
                        }
                        if y >= 1.0 {
                            return Ok(1.0);
                        }
                        let (lo, hi, flo, fhi) = table.bracket(r, y);
                        refine_bracket(
                            |u| self.cop.margin_survival(u, r),
                            y,
                            lo,
                            hi,
                            flo - y,
                            fhi - y,
                        )
                    })
                    .collect()
            }
        }
    }

    /// Draws a full bootstrap resample of `n` variates.
    ///
    /// Ties across rows are a measure-zero event; should floating-point
    /// collision produce one anyway, the resample is redrawn (the
    /// generator simply continues, keeping determinism).
    ///
    /// # Errors
    ///
    /// As for [`BootstrapSampler::draw`]; [`Error::Tie`] only if redraws
    /// are exhausted.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<Sample> {
        let n = self.n();
        let mut last_err = None;
        for _ in 0..TIE_RETRIES {
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| self.draw(rng))
                .collect::<Result<_>>()?;
            match Sample::new(rows) {
                Ok(sample) => return Ok(sample),
                Err(e @ Error::Tie { .. }) => last_err = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last_err.expect("retry loop only repeats on tie errors"))
    }
}

/// Draws one bootstrap resample from a fitted smooth empirical copula.
///
/// Convenience wrapper building a [`BootstrapSampler`] for a single use;
/// construct the sampler directly when drawing repeatedly.
///
/// # Errors
///
/// As for [`BootstrapSampler::new`] and [`BootstrapSampler::sample`].
pub fn draw_bootstrap_sample<R: Rng>(cop: &SmoothEmpiricalCopula, rng: &mut R) -> Result<Sample> {
    BootstrapSampler::new(cop)?.sample(rng)
}

/// Confidence-interval construction method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CiMethod {
    /// `[q_{(1-level)/2}, q_{(1+level)/2}]` of the bootstrap statistics.
    #[default]
    Percentile,
    /// `[2 t - q_{(1+level)/2}, 2 t - q_{(1-level)/2}]` around the sample
    /// statistic `t` (the "basic" bootstrap interval).
    Basic,
}

/// The percentile interval of a set of bootstrap statistics: the order
/// statistics of ranks `ceil((B+1)(1-level)/2)` and `ceil((B+1)(1+level)/2)`
/// (clamped to `1..=B`).
///
/// # Errors
///
/// [`Error::Range`] for an empty value set, a non-finite value, or a level
/// outside `(0, 1)`.
pub fn percentile_interval(values: &[f64], level: f64) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Range("percentile interval of no values".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Range(format!(
            "confidence level must lie in (0,1), got {level}"
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Range("non-finite bootstrap statistic".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let b = sorted.len();
    let rank = |q: f64| -> usize {
        (((b + 1) as f64 * q).ceil() as usize).clamp(1, b)
    };
    let lo = sorted[rank((1.0 - level) / 2.0) - 1];
    let hi = sorted[rank((1.0 + level) / 2.0) - 1];
    Ok((lo, hi))
}

/// Assembles an interval from bootstrap statistics per the chosen method.
fn assemble_interval(
    stats: &[f64],
    point: f64,
    level: f64,
    method: CiMethod,
    clamp: Option<(f64, f64)>,
) -> Result<(f64, f64)> {
    let (qlo, qhi) = percentile_interval(stats, level)?;
    let (mut lo, mut hi) = match method {
        CiMethod::Percentile => (qlo, qhi),
        CiMethod::Basic => (2.0 * point - qhi, 2.0 * point - qlo),
    };
    if let Some((a, b)) = clamp {
        lo = lo.clamp(a, b);
        hi = hi.clamp(a, b);
    }
    Ok((lo, hi))
}

/// Runs `b` bootstrap replicates of a statistic over smooth resamples,
/// one deterministic generator stream per replicate index.
fn bootstrap_statistics(
    sample: &Sample,
    family: SmoothingFamily,
    b: usize,
    seed: u64,
    stat: &(dyn Fn(&Sample) -> Result<f64> + Sync),
) -> Result<Vec<f64>> {
    if b < 100 {
        return Err(Error::Config(format!(
            "bootstrap confidence intervals need at least 100 replicates, got {b}"
        )));
    }
    let n = sample.n();
    let ranks = RankMatrix::from_window(sample, Window::full(n))?;
    let cop = SmoothEmpiricalCopula::new(ranks, family)?;
    let sampler = BootstrapSampler::new(&cop)?;
    (0..b)
        .into_par_iter()
        .map(|idx| {
            let mut rng = stream_rng(seed, idx as u64);
            stat(&sampler.sample(&mut rng)?)
        })
        .collect()
}

/// Smooth-bootstrap percentile confidence interval for Kendall's tau.
///
/// Fits the smooth empirical copula of `sample`, draws `b` resamples,
/// recomputes the plain sample tau on each, and returns the percentile
/// interval of the `b` statistics.
///
/// # Errors
///
/// [`Error::Config`] for `b < 100`; [`Error::Range`] for an invalid level;
/// family and sampling errors propagated.
pub fn ci_kendall(
    sample: &Sample,
    family: SmoothingFamily,
    b: usize,
    level: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    ci_kendall_with(sample, family, b, level, CiMethod::Percentile, seed)
}

/// [`ci_kendall`] with an explicit interval-construction method. Intervals
/// are clamped to `[-1, 1]`, the range of tau.
///
/// # Errors
///
/// As for [`ci_kendall`].
pub fn ci_kendall_with(
    sample: &Sample,
    family: SmoothingFamily,
    b: usize,
    level: f64,
    method: CiMethod,
    seed: u64,
) -> Result<(f64, f64)> {
    let stats = bootstrap_statistics(sample, family, b, seed, &kendall_tau)?;
    let point = kendall_tau(sample)?;
    assemble_interval(&stats, point, level, method, Some((-1.0, 1.0)))
}

/// Fits the Frank copula parameter to pseudo-observations by maximum
/// pseudo-likelihood: maximizes `theta -> sum_i log c_theta(u_i, v_i)`
/// over `theta in [-40, 40]` (coarse scan plus golden-section refinement
/// to width 1e-8). `theta = 0` denotes independence with log-likelihood 0.
///
/// # Errors
///
/// [`Error::Optim`] if the likelihood is non-finite across the whole
/// bracket; [`Error::Range`] for empty input or points outside `(0,1)^2`.
pub fn frank_mpl_fit(pseudo: &[(f64, f64)]) -> Result<f64> {
    if pseudo.is_empty() {
        return Err(Error::Range("empty pseudo-observation set".into()));
    }
    for &(u, v) in pseudo {
        if !(0.0 < u && u < 1.0 && 0.0 < v && v < 1.0) {
            return Err(Error::Range(format!(
                "pseudo-observations must lie in the open square, got ({u}, {v})"
            )));
        }
    }
    let objective = |theta: f64| -> f64 {
        if theta.abs() < 1e-9 {
            return 0.0;
        }
        let mut total = 0.0;
        for &(u, v) in pseudo {
            match frank_log_density(theta, u, v) {
                Ok(ll) => total += ll,
                Err(_) => return f64::NEG_INFINITY,
            }
        }
        // A non-finite sum means floating-point degeneracy, not a real
        // likelihood value; treat the point as unusable.
        if total.is_finite() {
            total
        } else {
            f64::NEG_INFINITY
        }
    };
    // Coarse scan to locate the mode's neighborhood.
    const LIMIT: f64 = 40.0;
    const COARSE: usize = 41;
    let mut best_k = 0usize;
    let mut best_val = f64::NEG_INFINITY;
    let coarse: Vec<f64> = (0..COARSE)
        .map(|k| -LIMIT + 2.0 * LIMIT * k as f64 / (COARSE - 1) as f64)
        .collect();
    for (k, &theta) in coarse.iter().enumerate() {
        let v = objective(theta);
        if v > best_val {
            best_val = v;
            best_k = k;
        }
    }
    if !best_val.is_finite() {
        return Err(Error::Optim(
            "Frank pseudo-likelihood non-finite across the parameter bracket".into(),
        ));
    }
    let mut lo = coarse[best_k.saturating_sub(1)];
    let mut hi = coarse[(best_k + 1).min(COARSE - 1)];
    // Golden-section maximization on [lo, hi].
    let inv_phi = 0.5 * (5.0f64.sqrt() - 1.0);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = objective(x1);
    let mut f2 = objective(x2);
    while hi - lo > 1e-8 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = objective(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = objective(x1);
        }
    }
    let theta = 0.5 * (lo + hi);
    // Snap to exact independence when the bracket collapsed onto 0.
    Ok(if theta.abs() < 1e-9 { 0.0 } else { theta })
}

/// Fits the Frank parameter to a bivariate sample via its rank
/// pseudo-observations `R_ij / (n+1)` (the `n/(n+1)` rescale keeps the
/// log-density away from the unit-square boundary).
///
/// # Errors
///
/// [`Error::Range`] for non-bivariate input; fitting errors propagated.
pub fn frank_mpl_fit_sample(sample: &Sample) -> Result<f64> {
    if sample.d() != 2 {
        return Err(Error::Range(format!(
            "Frank fitting needs a bivariate sample, got d = {}",
            sample.d()
        )));
    }
    let n = sample.n();
    let ranks = RankMatrix::from_window(sample, Window::full(n))?;
    let scale = (n + 1) as f64;
    let pseudo: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            (
                f64::from(ranks.get(i, 0)) / scale,
                f64::from(ranks.get(i, 1)) / scale,
            )
        })
        .collect();
    frank_mpl_fit(&pseudo)
}

/// Smooth-bootstrap percentile confidence interval for the Frank
/// parameter: `b` resamples, each refitted by maximum pseudo-likelihood.
///
/// # Errors
///
/// As for [`ci_kendall`], plus fitting errors.
pub fn ci_frank_mpl(
    sample: &Sample,
    family: SmoothingFamily,
    b: usize,
    level: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    ci_frank_mpl_with(sample, family, b, level, CiMethod::Percentile, seed)
}

/// [`ci_frank_mpl`] with an explicit interval-construction method.
///
/// # Errors
///
/// As for [`ci_frank_mpl`].
pub fn ci_frank_mpl_with(
    sample: &Sample,
    family: SmoothingFamily,
    b: usize,
    level: f64,
    method: CiMethod,
    seed: u64,
) -> Result<(f64, f64)> {
    let stats = bootstrap_statistics(sample, family, b, seed, &frank_mpl_fit_sample)?;
    let point = frank_mpl_fit_sample(sample)?;
    assemble_interval(&stats, point, level, method, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{frank_tau, tau_to_theta, CopulaFamily, CopulaModel};
    use approx::assert_abs_diff_eq;
    use statrs::distribution::{Beta as StatBeta, ContinuousCDF};

    fn fitted(
        n: usize,
        family: SmoothingFamily,
        seed: u64,
    ) -> (Sample, SmoothEmpiricalCopula) {
        let model = CopulaModel::from_tau(CopulaFamily::Clayton, 0.5, 2).unwrap();
        let sample = model.sample(n, &mut stream_rng(seed, 0)).unwrap();
        let ranks = RankMatrix::from_window(&sample, Window::full(n)).unwrap();
        let cop = SmoothEmpiricalCopula::new(ranks, family).unwrap();
        (sample, cop)
    }

    #[test]
    fn inversion_hits_exact_endpoints() {
        for family in [SmoothingFamily::Binomial, SmoothingFamily::beta_binomial4()] {
            let (_, cop) = fitted(12, family, 1);
            for r in [1u32, 5, 12] {
                assert_eq!(margin_quantile_invert(&cop, r, 0.0).unwrap(), 0.0);
                assert_eq!(margin_quantile_invert(&cop, r, 1.0).unwrap(), 1.0);
            }
        }
    }

    #[test]
    fn inversion_rejects_dirac_and_bad_arguments() {
        let (_, cop) = fitted(8, SmoothingFamily::Binomial, 2);
        assert!(matches!(
            margin_quantile_invert(&cop, 0, 0.5),
            Err(Error::Range(_))
        ));
        assert!(matches!(
            margin_quantile_invert(&cop, 9, 0.5),
            Err(Error::Range(_))
        ));
        assert!(matches!(
            margin_quantile_invert(&cop, 1, 1.5),
            Err(Error::Range(_))
        ));
        let (_, dirac) = fitted(8, SmoothingFamily::Dirac, 2);
        assert!(matches!(
            margin_quantile_invert(&dirac, 1, 0.5),
            Err(Error::UnsupportedFamily(_))
        ));
        assert!(matches!(
            draw_bootstrap_sample(&dirac, &mut stream_rng(2, 1)),
            Err(Error::UnsupportedFamily(_))
        ));
    }

    #[test]
    fn single_observation_binomial_margin_is_identity() {
        // m = 1, r = 1: K(u) = P(Binomial(1, u) >= 1) = u.
        let sample = Sample::new(vec![vec![0.3, 0.7]]).unwrap();
        let ranks = RankMatrix::from_window(&sample, Window::full(1)).unwrap();
        let cop = SmoothEmpiricalCopula::new(ranks, SmoothingFamily::Binomial).unwrap();
        let mut rng = stream_rng(3, 0);
        for _ in 0..50 {
            let y: f64 = rng.gen();
            let u = margin_quantile_invert(&cop, 1, y).unwrap();
            assert_abs_diff_eq!(u, y, epsilon = 1e-9);
        }
    }

    #[test]
    fn inversion_round_trips_through_the_margin() {
        for family in [SmoothingFamily::Binomial, SmoothingFamily::beta_binomial4()] {
            let (_, cop) = fitted(17, family, 4);
            let mut rng = stream_rng(4, 1);
            for _ in 0..100 {
                let y: f64 = rng.gen();
                let r = rng.gen_range(1..=17u32);
                let u = margin_quantile_invert(&cop, r, y).unwrap();
                assert_abs_diff_eq!(cop.margin_survival(u, r), y, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn binomial_margin_inverse_matches_beta_quantile() {
        // For the Binomial family K_r is the Beta(r, m+1-r) cdf, so
        // pushing the numeric inverse back through a reference Beta cdf
        // must recover the level.
        let (_, cop) = fitted(11, SmoothingFamily::Binomial, 5);
        let mut rng = stream_rng(5, 1);
        for _ in 0..60 {
            let y: f64 = rng.gen();
            let r = rng.gen_range(1..=11u32);
            let u = margin_quantile_invert(&cop, r, y).unwrap();
            let reference = StatBeta::new(f64::from(r), f64::from(12 - r)).unwrap();
            assert_abs_diff_eq!(reference.cdf(u), y, epsilon = 1e-9);
        }
    }

    #[test]
    fn fast_sampler_inversion_satisfies_the_same_tolerance() {
        let (_, cop) = fitted(17, SmoothingFamily::beta_binomial4(), 6);
        let table = BracketTable::new(&cop);
        let mut rng = stream_rng(6, 1);
        for _ in 0..200 {
            let y: f64 = rng.gen();
            let r = rng.gen_range(1..=17u32);
            let (lo, hi, flo, fhi) = table.bracket(r, y);
            let u = refine_bracket(|x| cop.margin_survival(x, r), y, lo, hi, flo - y, fhi - y)
                .unwrap();
            assert!(
                (cop.margin_survival(u, r) - y).abs() <= INVERSION_TOLERANCE,
                "fast path violated tolerance at r={r}, y={y}"
            );
            let slow = margin_quantile_invert(&cop, r, y).unwrap();
            assert_abs_diff_eq!(cop.margin_survival(slow, r), y, epsilon = 1e-10);
        }
    }

    #[test]
    fn single_row_binomial_draws_are_uniform() {
        let sample = Sample::new(vec![vec![0.4, 0.6]]).unwrap();
        let ranks = RankMatrix::from_window(&sample, Window::full(1)).unwrap();
        let cop = SmoothEmpiricalCopula::new(ranks, SmoothingFamily::Binomial).unwrap();
        let sampler = BootstrapSampler::new(&cop).unwrap();
        let mut rng = stream_rng(7, 0);
        let mut xs: Vec<f64> = (0..10_000).map(|_| sampler.draw(&mut rng).unwrap()[0]).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let ks = xs
            .iter()
            .enumerate()
            .fold(0.0f64, |acc, (i, &x)| {
                acc.max((x - i as f64 / 10_000.0).abs())
                    .max((x - (i + 1) as f64 / 10_000.0).abs())
            });
        assert!(ks < 0.02, "KS distance from uniform: {ks}");
    }

    /// Sup-distance between the empirical cdf of draws and the smooth
    /// estimator over an interior grid.
    fn draw_discrepancy(
        cop: &SmoothEmpiricalCopula,
        draws: usize,
        grid: usize,
        seed: u64,
    ) -> f64 {
        let sampler = BootstrapSampler::new(cop).unwrap();
        let mut rng = stream_rng(seed, 0);
        let rows: Vec<Vec<f64>> = (0..draws).map(|_| sampler.draw(&mut rng).unwrap()).collect();
        let points = crate::data::unit_grid(2, grid);
        let mut worst = 0.0f64;
        for pt in &points {
            let hits = rows
                .iter()
                .filter(|row| row.iter().zip(pt).all(|(x, u)| x <= u))
                .count();
            let ecdf = hits as f64 / draws as f64;
            worst = worst.max((ecdf - cop.eval(pt).unwrap()).abs());
        }
        worst
    }

    #[test]
    fn binomial_draws_reproduce_the_estimator() {
        let (_, cop) = fitted(50, SmoothingFamily::Binomial, 8);
        let worst = draw_discrepancy(&cop, 20_000, 10, 8);
        assert!(worst < 0.03, "sup-distance {worst}");
    }

    #[test]
    fn beta_binomial_draws_reproduce_the_estimator() {
        let (_, cop) = fitted(30, SmoothingFamily::beta_binomial4(), 9);
        let worst = draw_discrepancy(&cop, 10_000, 8, 9);
        assert!(worst < 0.04, "sup-distance {worst}");
    }

    #[test]
    fn resamples_are_tie_free_and_sized() {
        let (_, cop) = fitted(25, SmoothingFamily::Binomial, 10);
        let mut rng = stream_rng(10, 1);
        let resample = draw_bootstrap_sample(&cop, &mut rng).unwrap();
        assert_eq!(resample.n(), 25);
        assert_eq!(resample.d(), 2);
        assert!(resample
            .row(0)
            .iter()
            .all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn percentile_interval_follows_the_ceiling_convention() {
        let values: Vec<f64> = (1..=10).map(f64::from).collect();
        // B=10, level 0.9: ranks ceil(11*0.05)=1 and ceil(11*0.95)=11 -> 10.
        assert_eq!(percentile_interval(&values, 0.9).unwrap(), (1.0, 10.0));
        // level 0.5: ranks ceil(2.75)=3 and ceil(8.25)=9.
        assert_eq!(percentile_interval(&values, 0.5).unwrap(), (3.0, 9.0));
        // Degenerate identical statistics collapse to a zero-length interval.
        let constant = vec![0.37; 8];
        assert_eq!(percentile_interval(&constant, 0.95).unwrap(), (0.37, 0.37));
        assert!(percentile_interval(&[], 0.9).is_err());
        assert!(percentile_interval(&values, 1.0).is_err());
    }

    #[test]
    fn kendall_intervals_are_ordered_and_deterministic() {
        let (sample, _) = fitted(40, SmoothingFamily::Binomial, 11);
        let a = ci_kendall(&sample, SmoothingFamily::Binomial, 150, 0.95, 42).unwrap();
        let b = ci_kendall(&sample, SmoothingFamily::Binomial, 150, 0.95, 42).unwrap();
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert_eq!(a.1.to_bits(), b.1.to_bits());
        assert!(a.0 <= a.1);
        assert!((-1.0..=1.0).contains(&a.0) && (-1.0..=1.0).contains(&a.1));
        // The basic method gives a (generally different) ordered interval.
        let c = ci_kendall_with(
            &sample,
            SmoothingFamily::Binomial,
            150,
            0.95,
            CiMethod::Basic,
            42,
        )
        .unwrap();
        assert!(c.0 <= c.1);
        assert!(matches!(
            ci_kendall(&sample, SmoothingFamily::Binomial, 99, 0.95, 42),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn beta_binomial_interval_runs_end_to_end() {
        let (sample, _) = fitted(30, SmoothingFamily::beta_binomial4(), 12);
        let (lo, hi) =
            ci_kendall(&sample, SmoothingFamily::beta_binomial4(), 120, 0.95, 13).unwrap();
        assert!(lo <= hi);
        assert!((-1.0..=1.0).contains(&lo) && (-1.0..=1.0).contains(&hi));
    }

    #[test]
    fn frank_fit_recovers_independence() {
        let model = CopulaModel::new(CopulaFamily::Independence, 0.0, 2).unwrap();
        let sample = model.sample(200, &mut stream_rng(14, 0)).unwrap();
        let theta = frank_mpl_fit_sample(&sample).unwrap();
        assert!(theta.abs() < 1.0, "theta {theta} too far from 0");
    }

    #[test]
    fn frank_fit_recovers_a_strong_parameter() {
        let theta_true = tau_to_theta(CopulaFamily::Frank, 0.5).unwrap();
        assert_abs_diff_eq!(frank_tau(theta_true), 0.5, epsilon = 1e-9);
        let model = CopulaModel::new(CopulaFamily::Frank, theta_true, 2).unwrap();
        let sample = model.sample(2000, &mut stream_rng(15, 0)).unwrap();
        let theta = frank_mpl_fit_sample(&sample).unwrap();
        assert!(
            (theta - theta_true).abs() < 0.5,
            "theta {theta} vs truth {theta_true}"
        );
    }

    #[test]
    fn frank_interval_covers_the_point_estimate_shape() {
        let theta_true = tau_to_theta(CopulaFamily::Frank, 0.4).unwrap();
        let model = CopulaModel::new(CopulaFamily::Frank, theta_true, 2).unwrap();
        let sample = model.sample(60, &mut stream_rng(16, 0)).unwrap();
        let (lo, hi) = ci_frank_mpl(&sample, SmoothingFamily::Binomial, 120, 0.9, 17).unwrap();
        assert!(lo <= hi);
        assert!(lo >= -40.0 && hi <= 40.0);
    }

    #[test]
    fn frank_fit_validates_input() {
        assert!(matches!(frank_mpl_fit(&[]), Err(Error::Range(_))));
        assert!(matches!(
            frank_mpl_fit(&[(0.5, 1.0)]),
            Err(Error::Range(_))
        ));
    }
}

