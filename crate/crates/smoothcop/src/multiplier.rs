//! Multiplier replicates of the sequential (smooth) empirical copula
//! process.
//!
//! The sequential process `B_n(s, t, u) = sqrt(n) * lambda_n(s,t) *
//! (C_window(u) - C(u))` has a Gaussian limit whose law can be simulated by
//! *multiplier replicates*: random signed re-weightings of the centered
//! kernel terms,
//!
//! ```text
//! B[xi](s, t, u) = (1/sqrt(n)) * sum_{i=floor(ns)+1}^{floor(nt)}
//!                  xi_i * { K_{R_i}(u) - C_scope(u) }
//! ```
//!
//! where the ranks, kernels and copula estimate are taken either from the
//! full sample ([`Scope::Global`]) or from the sub-window itself
//! ([`Scope::Local`]). Replicates of the *copula* process additionally
//! subtract the first-order margin terms weighted by partial-derivative
//! estimates.
//!
//! Serial dependence in the data is handled by dependent multiplier
//! sequences: moving averages of i.i.d. standard normals over a window of
//! `ell` lags, which are `ell`-dependent with exact autocorrelation
//! `bartlett(h / ell)`. Independent data use i.i.d. Rademacher signs.

use crate::data::{RankMatrix, Sample, SequentialWindow, Window};
use crate::derivatives::{pd_eval_grid, PdEstimatorSpec};
use crate::models::CopulaModel;
use crate::smoothing::{SmoothEmpiricalCopula, SmoothingFamily};
use crate::{Error, Result};
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use std::collections::HashMap;

/// The Bartlett (triangular) kernel `(1 - |x|)+`.
pub fn bartlett(x: f64) -> f64 {
    (1.0 - x.abs()).max(0.0)
}

/// The default dependent-multiplier bandwidth `max(1, floor(1.25 n^{1/3}))`,
/// which grows slowly enough (`O(n^{1/2 - gamma})`) for the sequential
/// multiplier theory and fast enough to cover short-range dependence.
pub fn default_dependent_ell(n: usize) -> usize {
    ((1.25 * (n as f64).powf(1.0 / 3.0)).floor() as usize).max(1)
}

/// Which multiplier law to draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MultiplierKind {
    /// Independent Rademacher signs (mean 0, variance 1).
    Iid,
    /// `ell`-dependent moving averages of standard normals:
    /// `xi_i = (Z_i + ... + Z_{i+ell-1}) / sqrt(ell)`, so that
    /// `E(xi_0 xi_h) = bartlett(h / ell)` exactly.
    Dependent {
        /// Moving-average window length, at least 1 and below `n`.
        ell: usize,
    },
}

/// Multiplier sequence configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MultiplierConfig {
    /// The law of the sequence.
    pub kind: MultiplierKind,
}

impl MultiplierConfig {
    /// Independent Rademacher multipliers.
    pub fn iid() -> Self {
        Self {
            kind: MultiplierKind::Iid,
        }
    }

    /// Dependent multipliers with the default bandwidth for sample size `n`.
    pub fn dependent_default(n: usize) -> Self {
        Self {
            kind: MultiplierKind::Dependent {
                ell: default_dependent_ell(n),
            },
        }
    }
}

/// Draws one multiplier sequence of length `n`.
///
/// # Errors
///
/// [`Error::Config`] if `n = 0`, or for a dependent bandwidth outside
/// `1 <= ell < n`.
pub fn gen_multipliers<R: Rng>(cfg: &MultiplierConfig, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Config("multiplier sequence needs n >= 1".into()));
    }
    match cfg.kind {
        MultiplierKind::Iid => Ok((0..n)
            .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
            .collect()),
        MultiplierKind::Dependent { ell } => {
            if ell == 0 || ell >= n {
                return Err(Error::Config(format!(
                    "dependent multiplier bandwidth must satisfy 1 <= ell < n, got ell={ell}, n={n}"
                )));
            }
            let z: Vec<f64> = (0..n + ell - 1).map(|_| rng.sample(StandardNormal)).collect();
            let norm = (ell as f64).sqrt();
            Ok((0..n).map(|i| z[i..i + ell].iter().sum::<f64>() / norm).collect())
        }
    }
}

/// Whether replicates use full-sample or sub-window ranks and copula.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    /// Ranks, kernels and the copula estimate come from the whole sample.
    Global,
    /// Ranks, kernels and the copula estimate come from the sub-window.
    Local,
}

/// Resolves the scoped rank matrix for a non-empty window `a..b`
/// (zero-based, half-open) of the sample.
fn scoped_ranks(sample: &Sample, scope: Scope, a: usize, b: usize) -> Result<RankMatrix> {
    let window = match scope {
        Scope::Global => Window::full(sample.n()),
        Scope::Local => Window { k: a + 1, l: b },
    };
    RankMatrix::from_window(sample, window)
}

/// The rank row (within the scoped rank matrix) for sample row `i`.
fn scoped_row(scope: Scope, a: usize, i: usize) -> usize {
    match scope {
        Scope::Global => i,
        Scope::Local => i - a,
    }
}

/// One multiplier replicate of the sequential empirical-copula deviation
/// process at `u`:
/// `(1/sqrt(n)) sum_i xi_i { K_{R_i}(u) - C_scope(u) }` over the window's
/// rows, with ranks and copula scoped per `scope`. The Dirac family turns
/// the kernel into a rank indicator, recovering the non-smooth replicate.
///
/// An empty window evaluates to exactly 0.
///
/// # Errors
///
/// [`Error::Range`] if the multiplier vector length differs from the
/// sample size, plus evaluation errors.
pub fn replicate_b(
    sample: &Sample,
    window: SequentialWindow,
    xi: &[f64],
    family: SmoothingFamily,
    scope: Scope,
    u: &[f64],
) -> Result<f64> {
    let n = sample.n();
    if xi.len() != n {
        return Err(Error::Range(format!(
            "multiplier vector has length {}, sample has {n} rows",
            xi.len()
        )));
    }
    let (a, b) = window.bounds(n);
    if a == b {
        return Ok(0.0);
    }
    let ranks = scoped_ranks(sample, scope, a, b)?;
    let cop = SmoothEmpiricalCopula::new(ranks, family)?;
    let c = cop.eval(u)?;
    let mut sum = 0.0;
    for i in a..b {
        let row = cop.ranks().row(scoped_row(scope, a, i)).to_vec();
        sum += xi[i] * (cop.kernel(&row, u)? - c);
    }
    Ok(sum / (n as f64).sqrt())
}

/// Where the partial-derivative weights of copula-process replicates come
/// from.
#[derive(Debug, Clone, Copy)]
pub enum PdSource<'a> {
    /// Estimated from the scoped window ranks by the given specification.
    Estimated(&'a PdEstimatorSpec),
    /// The exact partial derivatives of a known model (for experiments
    /// that isolate resampling error from derivative-estimation error).
    Oracle(&'a CopulaModel),
}

impl PdSource<'_> {
    fn eval(&self, ranks: &RankMatrix, j: usize, points: &[Vec<f64>]) -> Result<Vec<f64>> {
        match self {
            Self::Estimated(spec) => pd_eval_grid(spec, ranks, j, points),
            Self::Oracle(model) => points
                .iter()
                .map(|u| model.partial_derivative(j, u))
                .collect(),
        }
    }
}

/// One multiplier replicate of the sequential *copula* process at `u`:
/// the [`replicate_b`] value minus the first-order margin corrections
/// `sum_j pd_j(u) * replicate_b(u^{(j)})`, where `u^{(j)}` replaces every
/// coordinate but the `j`-th by 1 and `pd_j` comes from `pd`.
///
/// An empty window evaluates to exactly 0.
///
/// # Errors
///
/// As for [`replicate_b`], plus partial-derivative evaluation errors.
pub fn replicate_c(
    sample: &Sample,
    window: SequentialWindow,
    xi: &[f64],
    family: SmoothingFamily,
    scope: Scope,
    pd: PdSource<'_>,
    u: &[f64],
) -> Result<f64> {
    let n = sample.n();
    let (a, b) = window.bounds(n);
    if a == b {
        return Ok(0.0);
    }
    let d = sample.d();
    let mut value = replicate_b(sample, window, xi, family, scope, u)?;
    let ranks = scoped_ranks(sample, scope, a, b)?;
    for j in 0..d {
        let pd_j = pd.eval(&ranks, j, std::slice::from_ref(&u.to_vec()))?[0];
        let mut proj = vec![1.0; d];
        proj[j] = u[j];
        value -= pd_j * replicate_b(sample, window, xi, family, scope, &proj)?;
    }
    Ok(value)
}

/// All `B` full-window replicates of the deviation process at all points
/// at once: row `b` holds `replicate_b` with multiplier vector `xi.row(b)`
/// over the full window, where Global and Local scopes coincide.
///
/// One kernel-matrix evaluation is shared across replicates, so the cost
/// is `O(n * points)` plus one `(B x n) . (n x points)` matrix product.
///
/// # Errors
///
/// [`Error::Range`] on a multiplier-column/sample-size mismatch, plus
/// evaluation errors.
pub fn replicate_b_field(
    sample: &Sample,
    family: SmoothingFamily,
    xi: &Array2<f64>,
    points: &[Vec<f64>],
) -> Result<Array2<f64>> {
    let n = sample.n();
    if xi.ncols() != n {
        return Err(Error::Range(format!(
            "multiplier matrix has {} columns, sample has {n} rows",
            xi.ncols()
        )));
    }
    let ranks = RankMatrix::from_window(sample, Window::full(n))?;
    let cop = SmoothEmpiricalCopula::new(ranks, family)?;
    let kernels = cop.kernel_matrix(points)?;
    let c = cop.eval_grid(points)?;
    let mut deviations = kernels;
    for (mut col, &cv) in deviations.columns_mut().into_iter().zip(&c) {
        col.mapv_inplace(|k| k - cv);
    }
    Ok(xi.dot(&deviations) / (n as f64).sqrt())
}

/// All `B` full-window replicates of the *copula* process at all points:
/// [`replicate_b_field`] values corrected by partial-derivative-weighted
/// replicates at the margin projections `u^{(j)}`.
///
/// # Errors
///
/// As for [`replicate_b_field`], plus partial-derivative errors.
pub fn replicate_c_field(
    sample: &Sample,
    family: SmoothingFamily,
    xi: &Array2<f64>,
    points: &[Vec<f64>],
    pd: PdSource<'_>,
) -> Result<Array2<f64>> {
    let n = sample.n();
    let d = sample.d();
    // Deduplicated evaluation list: the points followed by any missing
    // margin projections.
    let key = |p: &[f64]| -> Vec<u64> { p.iter().map(|x| x.to_bits()).collect() };
    let mut all: Vec<Vec<f64>> = Vec::with_capacity(points.len() * (d + 1));
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let push = |p: Vec<f64>, all: &mut Vec<Vec<f64>>, index: &mut HashMap<Vec<u64>, usize>| {
        let k = key(&p);
        *index.entry(k).or_insert_with(|| {
            all.push(p);
            all.len() - 1
        })
    };
    let point_idx: Vec<usize> = points
        .iter()
        .map(|p| push(p.clone(), &mut all, &mut index))
        .collect();
    let mut proj_idx = vec![vec![0usize; points.len()]; d];
    for (e, p) in points.iter().enumerate() {
        for j in 0..d {
            let mut proj = vec![1.0; d];
            proj[j] = p[j];
            proj_idx[j][e] = push(proj, &mut all, &mut index);
        }
    }
    let field = replicate_b_field(sample, family, xi, &all)?;
    let ranks = RankMatrix::from_window(sample, Window::full(n))?;
    let pd_vals: Vec<Vec<f64>> = (0..d)
        .map(|j| pd.eval(&ranks, j, points))
        .collect::<Result<_>>()?;
    let b_reps = xi.nrows();
    let mut out = Array2::zeros((b_reps, points.len()));
    for bi in 0..b_reps {
        for e in 0..points.len() {
            let mut v = field[(bi, point_idx[e])];
            for j in 0..d {
                v -= pd_vals[j][e] * field[(bi, proj_idx[j][e])];
            }
            out[(bi, e)] = v;
        }
    }
    Ok(out)
}

/// Sample covariance matrix of replicate trajectories: entry `(e, f)` is
/// the covariance of columns `e` and `f` over the `B` rows, with the
/// unbiased `B - 1` denominator.
///
/// # Panics
///
/// If fewer than two replicates are supplied.
pub fn estimate_covariance(reps: &Array2<f64>) -> Array2<f64> {
    let b = reps.nrows();
    let p = reps.ncols();
    assert!(b >= 2, "covariance needs at least two replicates, got {b}");
    let means: Vec<f64> = (0..p).map(|e| reps.column(e).sum() / b as f64).collect();
    let mut out = Array2::zeros((p, p));
    for e in 0..p {
        for f in e..p {
            let mut acc = 0.0;
            for bi in 0..b {
                acc += (reps[(bi, e)] - means[e]) * (reps[(bi, f)] - means[f]);
            }
            let v = acc / (b - 1) as f64;
            out[(e, f)] = v;
            out[(f, e)] = v;
        }
    }
    out
}

/// Scalar summaries of a trajectory over its evaluation points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Functional {
    /// Supremum of absolute values (Kolmogorov-Smirnov form).
    Ks,
    /// Mean of squared values over the grid (Cramer-von Mises form).
    Cvm,
}

/// Supremum of absolute values of a trajectory.
pub fn ks_functional(traj: &[f64]) -> f64 {
    traj.iter().fold(0.0, |m, &x| m.max(x.abs()))
}

/// Mean of squared values of a trajectory.
pub fn cvm_functional(traj: &[f64]) -> f64 {
    traj.iter().map(|&x| x * x).sum::<f64>() / traj.len() as f64
}

/// The empirical `q`-quantile of a value set: the `ceil(q * B)`-th
/// smallest value (clamped to the observed range).
///
/// # Panics
///
/// If `values` is empty or `q` lies outside `(0, 1)`.
pub fn empirical_quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of an empty set");
    assert!(q > 0.0 && q < 1.0, "quantile level must lie in (0,1), got {q}");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite functional values"));
    let k = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[k - 1]
}

/// The empirical `q`-quantile of a functional over *centered* replicates:
/// each column's replicate mean is subtracted before the functional is
/// applied row-wise.
///
/// # Panics
///
/// As for [`empirical_quantile`].
pub fn estimate_functional_quantile(reps: &Array2<f64>, functional: Functional, q: f64) -> f64 {
    let b = reps.nrows();
    assert!(b >= 1, "quantile needs at least one replicate");
    let p = reps.ncols();
    let means: Vec<f64> = (0..p).map(|e| reps.column(e).sum() / b as f64).collect();
    let values: Vec<f64> = (0..b)
        .map(|bi| {
            let centered: Vec<f64> = (0..p).map(|e| reps[(bi, e)] - means[e]).collect();
            match functional {
                Functional::Ks => ks_functional(&centered),
                Functional::Cvm => cvm_functional(&centered),
            }
        })
        .collect();
    empirical_quantile(&values, q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::CopulaFamily;
    use crate::rng::stream_rng;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn toy_sample() -> Sample {
        // Ranks (1,1), (2,3), (3,2), (4,4).
        Sample::new(vec![
            vec![0.1, 0.05],
            vec![0.2, 0.35],
            vec![0.3, 0.25],
            vec![0.4, 0.45],
        ])
        .unwrap()
    }

    fn clayton_sample(n: usize, seed: u64) -> Sample {
        let model = CopulaModel::from_tau(CopulaFamily::Clayton, 0.5, 2).unwrap();
        model.sample(n, &mut stream_rng(seed, 0)).unwrap()
    }

    fn full() -> SequentialWindow {
        SequentialWindow::new(0.0, 1.0).unwrap()
    }

    #[test]
    fn iid_multipliers_have_unit_moments() {
        let mut rng = stream_rng(1, 0);
        let xi = gen_multipliers(&MultiplierConfig::iid(), 100_000, &mut rng).unwrap();
        let mean = xi.iter().sum::<f64>() / xi.len() as f64;
        let var = xi.iter().map(|x| x * x).sum::<f64>() / xi.len() as f64 - mean * mean;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "variance {var}");
        assert!(xi.iter().all(|&x| x == 1.0 || x == -1.0));
    }

    #[test]
    fn dependent_multipliers_match_bartlett_autocovariance() {
        let cfg = MultiplierConfig {
            kind: MultiplierKind::Dependent { ell: 5 },
        };
        let mut rng = stream_rng(2, 0);
        let xi = gen_multipliers(&cfg, 100_000, &mut rng).unwrap();
        let n = xi.len();
        let mean = xi.iter().sum::<f64>() / n as f64;
        let autocov = |h: usize| {
            (0..n - h)
                .map(|i| (xi[i] - mean) * (xi[i + h] - mean))
                .sum::<f64>()
                / (n - h) as f64
        };
        assert!((autocov(0) - 1.0).abs() < 0.02, "variance {}", autocov(0));
        // Bartlett(2/5) = 0.6 at lag 2; zero beyond the window length.
        assert!((autocov(2) - 0.6).abs() < 0.03, "lag-2 {}", autocov(2));
        assert!(autocov(6).abs() < 0.02, "lag-6 {}", autocov(6));
        assert!(autocov(5).abs() < 0.02, "lag-5 {}", autocov(5));
    }

    #[test]
    fn dependent_bandwidth_is_validated() {
        let mut rng = stream_rng(3, 0);
        for (ell, n) in [(5usize, 5usize), (9, 5), (0, 5)] {
            let cfg = MultiplierConfig {
                kind: MultiplierKind::Dependent { ell },
            };
            assert!(matches!(
                gen_multipliers(&cfg, n, &mut rng),
                Err(Error::Config(_))
            ));
        }
        assert!(matches!(
            gen_multipliers(&MultiplierConfig::iid(), 0, &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn default_bandwidth_grows_like_cube_root() {
        assert_eq!(default_dependent_ell(1), 1);
        assert_eq!(default_dependent_ell(8), 2);
        assert_eq!(default_dependent_ell(100), 5);
        assert_eq!(default_dependent_ell(200), 7);
    }

    #[test]
    fn replicate_matches_hand_enumeration() {
        let sample = toy_sample();
        let xi = [1.0, -1.0, 1.0, -1.0];
        let v = replicate_b(
            &sample,
            full(),
            &xi,
            SmoothingFamily::Dirac,
            Scope::Global,
            &[0.5, 0.5],
        )
        .unwrap();
        // Indicators at (0.5, 0.5): rows contribute 1, 0, 0, 0; C = 1/4.
        // (1/2) * [1*(3/4) - 1*(-1/4) + 1*(-1/4) - 1*(-1/4)] = 1/2.
        assert_abs_diff_eq!(v, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn zero_multipliers_give_zero_everywhere() {
        let sample = clayton_sample(20, 4);
        let xi = vec![0.0; 20];
        for family in [
            SmoothingFamily::Dirac,
            SmoothingFamily::Binomial,
            SmoothingFamily::beta_binomial4(),
        ] {
            let v = replicate_b(&sample, full(), &xi, family, Scope::Local, &[0.3, 0.7]).unwrap();
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn empty_window_evaluates_to_exact_zero() {
        let sample = clayton_sample(10, 5);
        let xi = vec![1.0; 10];
        let window = SequentialWindow::new(0.42, 0.48).unwrap(); // floor(4.2) = floor(4.8)
        for scope in [Scope::Global, Scope::Local] {
            let b = replicate_b(
                &sample,
                window,
                &xi,
                SmoothingFamily::Binomial,
                scope,
                &[0.5, 0.5],
            )
            .unwrap();
            assert_eq!(b, 0.0);
            let c = replicate_c(
                &sample,
                window,
                &xi,
                SmoothingFamily::Binomial,
                scope,
                PdSource::Estimated(&PdEstimatorSpec::delta_truncated(SmoothingFamily::Binomial)),
                &[0.5, 0.5],
            )
            .unwrap();
            assert_eq!(c, 0.0);
        }
    }

    #[test]
    fn global_and_local_coincide_on_the_full_window() {
        let sample = clayton_sample(15, 6);
        let mut rng = stream_rng(6, 1);
        let xi = gen_multipliers(&MultiplierConfig::iid(), 15, &mut rng).unwrap();
        for family in [SmoothingFamily::Dirac, SmoothingFamily::Binomial] {
            for u in [[0.2, 0.9], [0.55, 0.35]] {
                let g = replicate_b(&sample, full(), &xi, family, Scope::Global, &u).unwrap();
                let l = replicate_b(&sample, full(), &xi, family, Scope::Local, &u).unwrap();
                assert_eq!(g, l);
            }
        }
    }

    #[test]
    fn dirac_replicate_is_bit_identical_to_indicator_formula() {
        let sample = clayton_sample(12, 7);
        let n = 12usize;
        let mut rng = stream_rng(7, 1);
        let xi = gen_multipliers(&MultiplierConfig::iid(), n, &mut rng).unwrap();
        let window = SequentialWindow::new(0.25, 0.9).unwrap();
        let (a, b) = window.bounds(n);
        let u = [0.35, 0.65];
        for scope in [Scope::Global, Scope::Local] {
            let got = replicate_b(&sample, window, &xi, SmoothingFamily::Dirac, scope, &u).unwrap();
            // Direct non-smooth formula with the same summation order.
            let ranks = match scope {
                Scope::Global => RankMatrix::from_window(&sample, Window::full(n)).unwrap(),
                Scope::Local => {
                    RankMatrix::from_window(&sample, Window { k: a + 1, l: b }).unwrap()
                }
            };
            let m = ranks.m() as f64;
            let c = ranks.empirical_copula(&u).unwrap();
            let mut sum = 0.0;
            for i in a..b {
                let row = match scope {
                    Scope::Global => i,
                    Scope::Local => i - a,
                };
                let ind = (0..2)
                    .map(|j| f64::from(ranks.get(row, j) as f64 <= m * u[j]))
                    .product::<f64>();
                sum += xi[i] * (ind - c);
            }
            let want = sum / (n as f64).sqrt();
            assert_eq!(got.to_bits(), want.to_bits());
        }
    }

    #[test]
    fn replicates_are_linear_in_the_multipliers() {
        let sample = clayton_sample(18, 8);
        let mut rng = stream_rng(8, 1);
        let xi1 = gen_multipliers(&MultiplierConfig::iid(), 18, &mut rng).unwrap();
        let xi2: Vec<f64> = (0..18).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let sum_xi: Vec<f64> = xi1.iter().zip(&xi2).map(|(a, b)| a + b).collect();
        let window = SequentialWindow::new(0.1, 0.8).unwrap();
        let u = [0.4, 0.6];
        let v1 = replicate_b(
            &sample,
            window,
            &xi1,
            SmoothingFamily::Binomial,
            Scope::Local,
            &u,
        )
        .unwrap();
        let v2 = replicate_b(
            &sample,
            window,
            &xi2,
            SmoothingFamily::Binomial,
            Scope::Local,
            &u,
        )
        .unwrap();
        let vs = replicate_b(
            &sample,
            window,
            &sum_xi,
            SmoothingFamily::Binomial,
            Scope::Local,
            &u,
        )
        .unwrap();
        assert_abs_diff_eq!(vs, v1 + v2, epsilon = 1e-12);
    }

    #[test]
    fn replicates_have_zero_conditional_mean() {
        let sample = clayton_sample(30, 9);
        let u = [0.45, 0.55];
        let mut values = Vec::with_capacity(10_000);
        for k in 0..10_000u64 {
            let mut rng = stream_rng(9, k + 1);
            let xi = gen_multipliers(&MultiplierConfig::iid(), 30, &mut rng).unwrap();
            values.push(
                replicate_b(
                    &sample,
                    full(),
                    &xi,
                    SmoothingFamily::Binomial,
                    Scope::Global,
                    &u,
                )
                .unwrap(),
            );
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let sd = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (values.len() - 1) as f64)
            .sqrt();
        assert!(
            mean.abs() < 3.0 * sd / 100.0,
            "mean {mean} too large for sd {sd}"
        );
    }

    #[test]
    fn corner_identity_for_copula_replicates() {
        let sample = clayton_sample(16, 10);
        let mut rng = stream_rng(10, 1);
        let xi = gen_multipliers(&MultiplierConfig::iid(), 16, &mut rng).unwrap();
        let spec = PdEstimatorSpec::delta_truncated(SmoothingFamily::Binomial);
        let u = [1.0, 1.0];
        // At the corner every projection u^{(j)} equals u itself.
        let b = replicate_b(
            &sample,
            full(),
            &xi,
            SmoothingFamily::Binomial,
            Scope::Global,
            &u,
        )
        .unwrap();
        let c = replicate_c(
            &sample,
            full(),
            &xi,
            SmoothingFamily::Binomial,
            Scope::Global,
            PdSource::Estimated(&spec),
            &u,
        )
        .unwrap();
        let ranks = RankMatrix::from_window(&sample, Window::full(16)).unwrap();
        let mut want = b;
        for j in 0..2 {
            let pd = pd_eval_grid(&spec, &ranks, j, &[u.to_vec()]).unwrap()[0];
            want -= pd * b;
        }
        assert_abs_diff_eq!(c, want, epsilon = 1e-14);
    }

    #[test]
    fn oracle_derivatives_reproduce_the_independence_identity() {
        let model = CopulaModel::new(CopulaFamily::Independence, 0.0, 2).unwrap();
        let sample = model.sample(25, &mut stream_rng(11, 0)).unwrap();
        let mut rng = stream_rng(11, 1);
        let xi = gen_multipliers(&MultiplierConfig::iid(), 25, &mut rng).unwrap();
        let u = [0.5, 0.5];
        let c = replicate_c(
            &sample,
            full(),
            &xi,
            SmoothingFamily::Dirac,
            Scope::Global,
            PdSource::Oracle(&model),
            &u,
        )
        .unwrap();
        let b = |point: &[f64]| {
            replicate_b(
                &sample,
                full(),
                &xi,
                SmoothingFamily::Dirac,
                Scope::Global,
                point,
            )
            .unwrap()
        };
        // Partial derivatives of the product copula at (0.5, 0.5) are 0.5.
        let want = b(&u) - 0.5 * b(&[0.5, 1.0]) - 0.5 * b(&[1.0, 0.5]);
        assert_abs_diff_eq!(c, want, epsilon = 1e-14);
    }

    #[test]
    fn field_evaluation_matches_scalar_replicates() {
        let sample = clayton_sample(14, 12);
        let b_reps = 3usize;
        let mut xi = Array2::zeros((b_reps, 14));
        for bi in 0..b_reps {
            let mut rng = stream_rng(12, bi as u64 + 1);
            let row = gen_multipliers(&MultiplierConfig::iid(), 14, &mut rng).unwrap();
            for (k, v) in row.into_iter().enumerate() {
                xi[(bi, k)] = v;
            }
        }
        let points = vec![vec![0.25, 0.5], vec![0.75, 0.3], vec![1.0, 1.0]];
        let model = CopulaModel::from_tau(CopulaFamily::Clayton, 0.5, 2).unwrap();
        for family in [SmoothingFamily::Binomial, SmoothingFamily::Dirac] {
            let field = replicate_b_field(&sample, family, &xi, &points).unwrap();
            let cfield =
                replicate_c_field(&sample, family, &xi, &points, PdSource::Oracle(&model))
                    .unwrap();
            for bi in 0..b_reps {
                let row: Vec<f64> = xi.row(bi).to_vec();
                for (e, pt) in points.iter().enumerate() {
                    let b = replicate_b(&sample, full(), &row, family, Scope::Global, pt).unwrap();
                    assert_abs_diff_eq!(field[(bi, e)], b, epsilon = 1e-12);
                    let c = replicate_c(
                        &sample,
                        full(),
                        &row,
                        family,
                        Scope::Global,
                        PdSource::Oracle(&model),
                        pt,
                    )
                    .unwrap();
                    assert_abs_diff_eq!(cfield[(bi, e)], c, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn covariance_matches_hand_oracle() {
        let reps = array![[1.0, 2.0], [3.0, 5.0], [2.0, 2.0]];
        let cov = estimate_covariance(&reps);
        assert_abs_diff_eq!(cov[(0, 0)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(cov[(0, 1)], 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(cov[(1, 0)], 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(cov[(1, 1)], 3.0, epsilon = 1e-15);
        // Identical replicates: zero matrix (exact for dyadic values, where
        // the column mean itself is exact).
        let same = array![[0.75, 0.125], [0.75, 0.125], [0.75, 0.125]];
        let cov = estimate_covariance(&same);
        assert_eq!(cov, Array2::zeros((2, 2)));
        let near = array![[0.7, 0.1], [0.7, 0.1], [0.7, 0.1]];
        for v in estimate_covariance(&near) {
            assert!(v.abs() < 1e-30);
        }
    }

    #[test]
    fn functionals_match_definitions() {
        assert_eq!(ks_functional(&[0.0, 0.0, 0.0]), 0.0);
        assert_abs_diff_eq!(ks_functional(&[0.2, -0.9, 0.4]), 0.9, epsilon = 1e-15);
        let c = 0.3;
        assert_abs_diff_eq!(cvm_functional(&[c, c, c, c]), c * c, epsilon = 1e-15);
    }

    #[test]
    fn quantiles_use_the_ceiling_order_statistic() {
        let values: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(empirical_quantile(&values, 0.9), 9.0);
        assert_eq!(empirical_quantile(&values, 0.95), 10.0);
        assert_eq!(empirical_quantile(&values, 0.05), 1.0);
        // Centering wipes out constant trajectories entirely (dyadic value,
        // so the column mean is exact).
        let reps = array![[0.5, 0.5], [0.5, 0.5], [0.5, 0.5]];
        assert_eq!(estimate_functional_quantile(&reps, Functional::Ks, 0.9), 0.0);
        assert_eq!(estimate_functional_quantile(&reps, Functional::Cvm, 0.9), 0.0);
        // Hand case: rows center to (-1,0), (0,0), (1,0), so the KS values
        // are {1, 0, 1} and the sorted order statistics are [0, 1, 1].
        let reps = array![[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]];
        assert_eq!(estimate_functional_quantile(&reps, Functional::Ks, 0.3), 0.0);
        assert_eq!(estimate_functional_quantile(&reps, Functional::Ks, 0.5), 1.0);
        assert_eq!(estimate_functional_quantile(&reps, Functional::Ks, 0.95), 1.0);
    }

    #[test]
    fn smooth_and_plain_replicates_converge_together() {
        // The smooth and non-smooth copula-process replicates estimate the
        // same limit; their sup-distance over a grid should shrink with n.
        let grid = crate::data::unit_grid(2, 10);
        let mut sups = Vec::new();
        for &n in &[50usize, 400] {
            let sample = clayton_sample(n, 13);
            let mut rng = stream_rng(13, 1);
            let xi_vec = gen_multipliers(&MultiplierConfig::iid(), n, &mut rng).unwrap();
            let mut xi = Array2::<f64>::zeros((1, n));
            for (k, &v) in xi_vec.iter().enumerate() {
                xi[(0, k)] = v;
            }
            let smooth =
                replicate_b_field(&sample, SmoothingFamily::Binomial, &xi, &grid).unwrap();
            let plain = replicate_b_field(&sample, SmoothingFamily::Dirac, &xi, &grid).unwrap();
            let sup = smooth
                .iter()
                .zip(plain.iter())
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            sups.push(sup);
        }
        assert!(
            sups[1] < sups[0],
            "sup-distance should shrink with n: {sups:?}"
        );
    }
}
