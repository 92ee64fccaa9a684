//! First-order partial-derivative estimators for copulas.
//!
//! The copula's partial derivative `Ċ_j(u) = ∂C(u)/∂u_j` enters every
//! multiplier replicate, so its estimation quality drives the quality of
//! resampling-based inference. This module implements the full estimator
//! family:
//!
//! - **Finite differences** of the empirical copula, in two flavours: the
//!   [`DiffKind::Nabla`] form divides by the nominal bandwidth `h + h'`,
//!   while the [`DiffKind::Delta`] form divides by the *effective* step
//!   `(u_j+h)∧1 − (u_j−h')∨0` after clipping the evaluation points to the
//!   cube, which removes most of the boundary bias.
//! - **Smooth-then-difference**: the same finite differences applied to a
//!   [`SmoothEmpiricalCopula`] instead of the raw empirical copula.
//! - **Difference-then-smooth**: the raw finite-difference estimator
//!   integrated against the smoothing law of the point `u`. Binomial and
//!   beta-binomial smoothing laws are discrete with `(m+1)^d` atoms, so the
//!   integral is computed by exact enumeration (atoms below
//!   [`ATOM_PROBABILITY_CUTOFF`] are skipped).
//! - **Bernstein form**: the closed-form derivative of the Bernstein
//!   copula estimator of chosen degree, which is itself an integral of
//!   one-sided finite differences and stays uniformly bounded.
//!
//! Truncated variants clamp values into `[0,1]`, the range of any genuine
//! partial derivative. Adaptive bandwidth and degree rules plug an estimate
//! of Kendall's tau into simple formulas calibrated so that stronger
//! dependence gets smaller bandwidths and higher degrees.

use crate::data::{check_unit_point, rank_kendall_tau, unit_grid, RankMatrix, Window};
use crate::models::CopulaModel;
use crate::rng::stream_rng;
use crate::smoothing::{
    beta_binomial_shapes, beta_binomial_survival_column, binomial_pmf_column,
    binomial_survival_column, SmoothEmpiricalCopula, SmoothingFamily,
};
use crate::{Error, Result};
use rayon::prelude::*;

/// Atoms of a discrete smoothing law with probability below this bound are
/// skipped when computing difference-then-smooth integrals. The bound is
/// conservative: a joint atom probability never exceeds any of its margin
/// probabilities, and the skipped mass is far below every tolerance used
/// elsewhere in the crate.
pub const ATOM_PROBABILITY_CUTOFF: f64 = 1e-14;

/// Which finite-difference denominator to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffKind {
    /// Divide by the nominal bandwidth `h + h'`.
    Nabla,
    /// Divide by the effective step `(u_j+h)∧1 − (u_j−h')∨0`.
    Delta,
}

/// What the finite differences act on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Placement {
    /// Differences of the raw empirical copula.
    Plain,
    /// Differences of the smooth empirical copula for this family.
    SmoothThenDiff(SmoothingFamily),
    /// Raw differences integrated against the smoothing law at `u`.
    DiffThenSmooth(SmoothingFamily),
    /// Bernstein closed form of the given degree rule.
    Bernstein(DegreeRule),
}

/// How the Bernstein degree is chosen from a window of length `p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DegreeRule {
    /// A fixed degree (must be at least 2).
    Fixed(usize),
    /// `max(floor(l * sqrt(p)), 2)`; the square-root scaling keeps the
    /// estimator uniformly bounded by `1 + max(l, 2)`.
    Scaled {
        /// Scale constant, must be positive.
        l: f64,
    },
    /// [`adaptive_bernstein_degree`]: tau-driven scale constant.
    Adaptive,
}

impl DegreeRule {
    /// Resolves the rule on a window of ranks.
    ///
    /// # Errors
    ///
    /// [`Error::Config`] for a fixed degree below 2 or a non-positive
    /// scale; [`Error::Range`] if an adaptive rule meets a window of fewer
    /// than two observations.
    pub fn resolve(&self, ranks: &RankMatrix) -> Result<usize> {
        match *self {
            Self::Fixed(m) => {
                if m < 2 {
                    return Err(Error::Config(format!(
                        "Bernstein degree must be at least 2, got {m}"
                    )));
                }
                Ok(m)
            }
            Self::Scaled { l } => {
                if !(l > 0.0) || !l.is_finite() {
                    return Err(Error::Config(format!(
                        "Bernstein degree scale must be positive, got {l}"
                    )));
                }
                Ok(((l * (ranks.m() as f64).sqrt()).floor() as usize).max(2))
            }
            Self::Adaptive => adaptive_bernstein_degree(ranks),
        }
    }
}

/// How the bandwidth pair `(h, h')` is chosen from a window of length `m`.
///
/// Both rules produce `h = h'` and respect the bandwidth condition
/// `h, h' ∈ [0, 1/2]`, `h + h' ≥ m^{-1/2}` as long as their constants are
/// at least `1/2` (the adaptive rule's factor lies in `[1/2, 4.5]`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthRule {
    /// `h = h' = (l * m^{-1/2}) ∧ 1/2`.
    Fixed {
        /// Scale constant, must be positive.
        l: f64,
    },
    /// `h = h' = ([m2 * (1-|τ|)^a + m1] * m^{-1/2}) ∧ 1/2` with τ the
    /// window's Kendall tau; see [`adaptive_bandwidth`] for the default
    /// constants.
    Adaptive {
        /// Additive floor of the scale factor.
        m1: f64,
        /// Multiplier of the dependence-driven part.
        m2: f64,
        /// Exponent on `1 - |τ|`.
        a: f64,
    },
}

impl BandwidthRule {
    /// The default adaptive rule: `m1 = 1/2`, `m2 = 4`, `a = 6`.
    pub fn adaptive() -> Self {
        Self::Adaptive {
            m1: 0.5,
            m2: 4.0,
            a: 6.0,
        }
    }

    /// Resolves the rule on a window of ranks.
    ///
    /// # Errors
    ///
    /// [`Error::Bandwidth`] for a non-positive scale; [`Error::Range`] if
    /// an adaptive rule meets a window of fewer than two observations.
    pub fn resolve(&self, ranks: &RankMatrix) -> Result<(f64, f64)> {
        let factor = match *self {
            Self::Fixed { l } => l,
            Self::Adaptive { m1, m2, a } => {
                let tau = rank_kendall_tau(ranks)?;
                m2 * (1.0 - tau.abs()).powf(a) + m1
            }
        };
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(Error::Bandwidth(format!(
                "bandwidth scale factor must be positive, got {factor}"
            )));
        }
        let h = (factor / (ranks.m() as f64).sqrt()).min(0.5);
        Ok((h, h))
    }
}

/// A complete partial-derivative estimator specification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdEstimatorSpec {
    /// Finite-difference denominator.
    pub diff: DiffKind,
    /// What the differences act on.
    pub placement: Placement,
    /// Clamp outputs into `[0, 1]` (for difference-then-smooth: clamp the
    /// inner raw differences before integrating).
    pub truncate: bool,
    /// Bandwidth rule (ignored by the Bernstein placement).
    pub bandwidth: BandwidthRule,
}

impl PdEstimatorSpec {
    /// The workhorse replicate-correction estimator: truncated effective-step
    /// differences of the smooth empirical copula, `h = h' = m^{-1/2} ∧ 1/2`.
    pub fn delta_truncated(family: SmoothingFamily) -> Self {
        Self {
            diff: DiffKind::Delta,
            placement: Placement::SmoothThenDiff(family),
            truncate: true,
            bandwidth: BandwidthRule::Fixed { l: 1.0 },
        }
    }

    /// Untruncated nominal-step differences of the smooth empirical copula.
    pub fn nabla(family: SmoothingFamily) -> Self {
        Self {
            diff: DiffKind::Nabla,
            placement: Placement::SmoothThenDiff(family),
            truncate: false,
            bandwidth: BandwidthRule::Fixed { l: 1.0 },
        }
    }

    /// A short label naming the estimator, used in result tables.
    pub fn label(&self) -> String {
        let kind = match self.diff {
            DiffKind::Nabla => "nabla",
            DiffKind::Delta => "delta",
        };
        let body = match &self.placement {
            Placement::Plain => format!("{kind}-plain"),
            Placement::SmoothThenDiff(f) => format!("{kind}-{}", f.label()),
            Placement::DiffThenSmooth(f) => format!("{kind}-into-{}", f.label()),
            Placement::Bernstein(DegreeRule::Fixed(m)) => format!("bernstein-{m}"),
            Placement::Bernstein(DegreeRule::Scaled { l }) => format!("bernstein-scaled{l}"),
            Placement::Bernstein(DegreeRule::Adaptive) => "bernstein-adaptive".into(),
        };
        if self.truncate {
            format!("{body}-trunc")
        } else {
            body
        }
    }
}

/// Clip `u + h e_j` and `u − h' e_j` to the unit cube.
fn shifted_points(u: &[f64], j: usize, h: f64, hp: f64) -> (Vec<f64>, Vec<f64>) {
    let mut up = u.to_vec();
    let mut dn = u.to_vec();
    up[j] = (u[j] + h).min(1.0);
    dn[j] = (u[j] - hp).max(0.0);
    (up, dn)
}

/// The finite-difference denominator; errors if it degenerates to zero.
fn diff_denominator(kind: DiffKind, u_j: f64, h: f64, hp: f64) -> Result<f64> {
    let denom = match kind {
        DiffKind::Nabla => h + hp,
        DiffKind::Delta => (u_j + h).min(1.0) - (u_j - hp).max(0.0),
    };
    if denom <= 0.0 {
        return Err(Error::Bandwidth(format!(
            "degenerate finite-difference denominator at u_j = {u_j} with (h, h') = ({h}, {hp})"
        )));
    }
    Ok(denom)
}

fn clamp_unit(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Evaluates a partial-derivative estimator at one point.
///
/// `ranks` are the within-window ranks of the data stretch the estimator
/// acts on, `j` is the zero-based coordinate, and `u` a point of the
/// closed unit cube.
///
/// # Errors
///
/// [`Error::Bandwidth`] if the bandwidth rule degenerates, plus the
/// resolution errors of [`BandwidthRule::resolve`] / [`DegreeRule::resolve`]
/// and domain errors for invalid `u` or `j`.
pub fn pd_eval(spec: &PdEstimatorSpec, ranks: &RankMatrix, j: usize, u: &[f64]) -> Result<f64> {
    Ok(pd_eval_grid(spec, ranks, j, std::slice::from_ref(&u.to_vec()))?[0])
}

/// Evaluates a partial-derivative estimator at many points at once.
///
/// Equivalent to mapping [`pd_eval`] over `points`, but smooth-copula
/// evaluations share their per-coordinate survival columns across points.
///
/// # Errors
///
/// As for [`pd_eval`].
pub fn pd_eval_grid(
    spec: &PdEstimatorSpec,
    ranks: &RankMatrix,
    j: usize,
    points: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let d = ranks.d();
    if j >= d {
        return Err(Error::Range(format!("coordinate {j} out of 0..{d}")));
    }
    for u in points {
        check_unit_point(u, d)?;
    }
    match &spec.placement {
        Placement::Plain => diff_grid(spec, ranks, SmoothingFamily::Dirac, j, points),
        Placement::SmoothThenDiff(fam) => diff_grid(spec, ranks, *fam, j, points),
        Placement::DiffThenSmooth(fam) => points
            .iter()
            .map(|u| diff_then_smooth(spec, ranks, *fam, j, u))
            .collect(),
        Placement::Bernstein(rule) => {
            let degree = rule.resolve(ranks)?;
            Ok(points
                .iter()
                .map(|u| {
                    let v = pd_bernstein(ranks, j, u, degree);
                    if spec.truncate {
                        clamp_unit(v)
                    } else {
                        v
                    }
                })
                .collect())
        }
    }
}

/// Finite differences of a (possibly smooth) empirical copula over a batch
/// of points.
fn diff_grid(
    spec: &PdEstimatorSpec,
    ranks: &RankMatrix,
    family: SmoothingFamily,
    j: usize,
    points: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let (h, hp) = spec.bandwidth.resolve(ranks)?;
    let cop = SmoothEmpiricalCopula::new(ranks.clone(), family)?;
    let mut ups = Vec::with_capacity(points.len());
    let mut dns = Vec::with_capacity(points.len());
    for u in points {
        let (up, dn) = shifted_points(u, j, h, hp);
        ups.push(up);
        dns.push(dn);
    }
    let hi = cop.eval_grid(&ups)?;
    let lo = cop.eval_grid(&dns)?;
    points
        .iter()
        .zip(hi.iter().zip(lo.iter()))
        .map(|(u, (a, b))| {
            let denom = diff_denominator(spec.diff, u[j], h, hp)?;
            let v = (a - b) / denom;
            Ok(if spec.truncate { clamp_unit(v) } else { v })
        })
        .collect()
}

/// The raw finite-difference estimator of the empirical copula at `w`.
fn raw_diff(
    ranks: &RankMatrix,
    kind: DiffKind,
    truncate: bool,
    j: usize,
    w: &[f64],
    h: f64,
    hp: f64,
) -> Result<f64> {
    let (up, dn) = shifted_points(w, j, h, hp);
    let denom = diff_denominator(kind, w[j], h, hp)?;
    let v = (ranks.empirical_copula(&up)? - ranks.empirical_copula(&dn)?) / denom;
    Ok(if truncate { clamp_unit(v) } else { v })
}

/// Difference-then-smooth: integrate the raw finite-difference estimator
/// against the discrete smoothing law at `u`.
fn diff_then_smooth(
    spec: &PdEstimatorSpec,
    ranks: &RankMatrix,
    family: SmoothingFamily,
    j: usize,
    u: &[f64],
) -> Result<f64> {
    let (h, hp) = spec.bandwidth.resolve(ranks)?;
    let m = ranks.m();
    let d = ranks.d();
    let weights: Vec<f64> = match family {
        // The Dirac law is the point mass at u: the integral collapses.
        SmoothingFamily::Dirac => {
            return raw_diff(ranks, spec.diff, spec.truncate, j, u, h, hp);
        }
        // Independent binomial margins: the joint atom probability is the
        // product of the margin probabilities.
        SmoothingFamily::Binomial => {
            let cols: Vec<Vec<f64>> = u.iter().map(|&x| binomial_pmf_column(m, x)).collect();
            lattice_products(&cols, m, d)
        }
        SmoothingFamily::BetaBinomial { rho } => beta_binomial_joint_pmf(ranks, u, rho)?,
    };
    let mut total = 0.0;
    let mut idx = vec![0usize; d];
    let mut w = vec![0.0; d];
    for (flat, &weight) in weights.iter().enumerate() {
        if weight >= ATOM_PROBABILITY_CUTOFF {
            decode_lattice(flat, m, &mut idx);
            for (t, &s) in idx.iter().enumerate() {
                w[t] = s as f64 / m as f64;
            }
            total += weight * raw_diff(ranks, spec.diff, spec.truncate, j, &w, h, hp)?;
        }
    }
    Ok(total)
}

/// Products of per-coordinate columns over the lattice `{0..=m}^d`,
/// row-major with the last coordinate fastest.
fn lattice_products(cols: &[Vec<f64>], m: usize, d: usize) -> Vec<f64> {
    let size = (m + 1).pow(d as u32);
    let mut out = vec![0.0; size];
    let mut idx = vec![0usize; d];
    for (flat, slot) in out.iter_mut().enumerate() {
        decode_lattice(flat, m, &mut idx);
        *slot = idx.iter().zip(cols).map(|(&s, c)| c[s]).product();
    }
    out
}

/// Decode a flat row-major index over `{0..=m}^d` (last coordinate fastest).
fn decode_lattice(mut flat: usize, m: usize, idx: &mut [usize]) {
    for slot in idx.iter_mut().rev() {
        *slot = flat % (m + 1);
        flat /= m + 1;
    }
}

/// Joint probabilities of the beta-binomial smoothing law at `u`: margins
/// `BetaBinomial(m, shapes(u_j))/m` coupled through the empirical beta
/// copula of the window, as flat row-major atoms over `{0..=m}^d`.
///
/// The joint survival function `S(x) = P(all margins > x_j)` is evaluated
/// on the threshold lattice `{-1..=m}^d` and atom probabilities follow by
/// inclusion-exclusion differencing over the `2^d` adjacent corners; small
/// negative rounding residues are clamped to zero.
fn beta_binomial_joint_pmf(ranks: &RankMatrix, u: &[f64], rho: f64) -> Result<Vec<f64>> {
    let m = ranks.m();
    let d = ranks.d();
    // Margin survival values at integer thresholds x = -1..=m.
    let mut margin_survival = Vec::with_capacity(d);
    for &x in u {
        let mut col = vec![0.0; m + 2];
        col[0] = 1.0;
        if x == 0.0 {
            // Point mass at 0: survival jumps to 0 from threshold 0 on.
        } else if x == 1.0 {
            // Point mass at m: survival stays 1 below threshold m.
            for slot in col.iter_mut().take(m + 1) {
                *slot = 1.0;
            }
            col[m + 1] = 0.0;
        } else {
            let (alpha, beta) = beta_binomial_shapes(m, x, rho);
            let sv = beta_binomial_survival_column(m, alpha, beta)?;
            col[1..].copy_from_slice(&sv);
        }
        margin_survival.push(col);
    }
    // Coupling through the empirical beta copula: for each threshold level,
    // the per-row survival factors B̄_{m, v}(R_ij - 1).
    let mut factors: Vec<Vec<f64>> = Vec::with_capacity(d);
    for (jm, col) in margin_survival.iter().enumerate() {
        let mut f = vec![0.0; (m + 2) * m];
        for (t, &v) in col.iter().enumerate() {
            let bcol = binomial_survival_column(m, v);
            for i in 0..m {
                f[t * m + i] = bcol[(ranks.get(i, jm) - 1) as usize];
            }
        }
        factors.push(f);
    }
    // Joint survival over the threshold lattice {-1..=m}^d.
    let levels = m + 2;
    let lattice = levels.pow(d as u32);
    let mut survival = vec![0.0; lattice];
    let mut idx = vec![0usize; d];
    for (flat, slot) in survival.iter_mut().enumerate() {
        let mut rem = flat;
        for s in idx.iter_mut().rev() {
            *s = rem % levels;
            rem /= levels;
        }
        let mut acc = 0.0;
        for i in 0..m {
            let mut prod = 1.0;
            for (jm, &t) in idx.iter().enumerate() {
                prod *= factors[jm][t * m + i];
                if prod == 0.0 {
                    break;
                }
            }
            acc += prod;
        }
        *slot = acc / m as f64;
    }
    // Atom probabilities by inclusion-exclusion over the 2^d corners.
    let size = (m + 1).pow(d as u32);
    let mut pmf = vec![0.0; size];
    let mut widx = vec![0usize; d];
    for (flat, slot) in pmf.iter_mut().enumerate() {
        decode_lattice(flat, m, &mut widx);
        let mut p = 0.0;
        for corner in 0..(1usize << d) {
            let mut sflat = 0usize;
            for (jm, &wj) in widx.iter().enumerate() {
                let eps = (corner >> jm) & 1;
                // Threshold w_j - 1 + eps maps to lattice level w_j + eps.
                sflat = sflat * levels + (wj + eps);
            }
            let sign = if corner.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
            p += sign * survival[sflat];
        }
        *slot = p.max(0.0);
    }
    Ok(pmf)
}

/// The closed-form Bernstein partial-derivative estimator of degree
/// `m_degree` on a window of `p` ranks:
/// `(m/p) Σ_i b_{m-1, u_j}(s_ij) Π_{t≠j} B̄_{m, u_t}(s_it)` with
/// `s_it = ⌈m R_it / p⌉ - 1`, where `b` is the binomial probability mass
/// and `B̄` the binomial survival function.
///
/// The value always lies in `[0, m/√p]`; with the degree rule
/// `m = ⌊l√p⌋ ∨ 2` it is bounded by `1 + max(l, 2)` uniformly in the data.
///
/// # Panics
///
/// If `m_degree < 2`, `j` is out of range, or `u` leaves the unit cube.
pub fn pd_bernstein(ranks: &RankMatrix, j: usize, u: &[f64], m_degree: usize) -> f64 {
    let p = ranks.m();
    let d = ranks.d();
    assert!(m_degree >= 2, "Bernstein degree must be at least 2");
    assert!(j < d, "coordinate {j} out of 0..{d}");
    check_unit_point(u, d).expect("point must lie in the unit cube");
    let m = m_degree;
    let pmf_j = binomial_pmf_column(m - 1, u[j]);
    let survival: Vec<Vec<f64>> = (0..d)
        .map(|t| {
            if t == j {
                Vec::new()
            } else {
                binomial_survival_column(m, u[t])
            }
        })
        .collect();
    let cell = |r: u32| (m * r as usize).div_ceil(p) - 1;
    let mut total = 0.0;
    for i in 0..p {
        let mut term = pmf_j[cell(ranks.get(i, j))];
        if term == 0.0 {
            continue;
        }
        for (t, sv) in survival.iter().enumerate() {
            if t != j {
                term *= sv[cell(ranks.get(i, t))];
                if term == 0.0 {
                    break;
                }
            }
        }
        total += term;
    }
    (m as f64 / p as f64) * total
}

/// Reference evaluation of the Bernstein estimator as the integral it is
/// defined to be: one-sided nominal-step differences `(h, h') = (1/m, 0)`
/// of the empirical copula, integrated against the product law with
/// coordinate `j` drawn as `Binomial(m-1, u_j)/m` and every other
/// coordinate as `Binomial(m, u_t)/m`.
///
/// Exact full-support enumeration over `m(m+1)^{d-1}` atoms — a test and
/// acceptance oracle for [`pd_bernstein`], not a production path.
///
/// # Panics
///
/// As for [`pd_bernstein`].
pub fn pd_bernstein_enumerated(ranks: &RankMatrix, j: usize, u: &[f64], m_degree: usize) -> f64 {
    let d = ranks.d();
    assert!(m_degree >= 2, "Bernstein degree must be at least 2");
    assert!(j < d, "coordinate {j} out of 0..{d}");
    check_unit_point(u, d).expect("point must lie in the unit cube");
    let m = m_degree;
    let cols: Vec<Vec<f64>> = (0..d)
        .map(|t| {
            if t == j {
                binomial_pmf_column(m - 1, u[t])
            } else {
                binomial_pmf_column(m, u[t])
            }
        })
        .collect();
    let radix: Vec<usize> = (0..d).map(|t| if t == j { m } else { m + 1 }).collect();
    let total: usize = radix.iter().product();
    let mut sum = 0.0;
    let mut idx = vec![0usize; d];
    let mut w = vec![0.0; d];
    for mut flat in 0..total {
        for t in (0..d).rev() {
            idx[t] = flat % radix[t];
            flat /= radix[t];
        }
        let weight: f64 = idx.iter().zip(&cols).map(|(&s, c)| c[s]).product();
        if weight == 0.0 {
            continue;
        }
        for (t, &s) in idx.iter().enumerate() {
            w[t] = s as f64 / m as f64;
        }
        let mut up = w.clone();
        up[j] = (w[j] + 1.0 / m as f64).min(1.0);
        let hi = ranks.empirical_copula(&up).expect("point in cube");
        let lo = ranks.empirical_copula(&w).expect("point in cube");
        sum += weight * m as f64 * (hi - lo);
    }
    sum
}

/// The tau-adaptive bandwidth pair for a window of length `m`:
/// `h = h' = ([4 (1-|τ|)^6 + 1/2] m^{-1/2}) ∧ 1/2`.
///
/// The bracket lies in `[1/2, 4.5]`, so the pair always satisfies the
/// bandwidth condition `h + h' ≥ m^{-1/2}`.
pub fn adaptive_bandwidth_for(tau: f64, m: usize) -> (f64, f64) {
    let factor = 4.0 * (1.0 - tau.abs()).powi(6) + 0.5;
    let h = (factor / (m as f64).sqrt()).min(0.5);
    (h, h)
}

/// [`adaptive_bandwidth_for`] with tau estimated from the window ranks.
///
/// # Errors
///
/// [`Error::Range`] for windows of fewer than two observations.
pub fn adaptive_bandwidth(ranks: &RankMatrix) -> Result<(f64, f64)> {
    let tau = rank_kendall_tau(ranks)?;
    Ok(adaptive_bandwidth_for(tau, ranks.m()))
}

/// The tau-adaptive Bernstein degree for a window of length `m`:
/// `⌊(4 |τ|^{3/2} + 1/2) √m⌋ ∨ 2`.
pub fn adaptive_bernstein_degree_for(tau: f64, m: usize) -> usize {
    let factor = 4.0 * tau.abs().powf(1.5) + 0.5;
    ((factor * (m as f64).sqrt()).floor() as usize).max(2)
}

/// [`adaptive_bernstein_degree_for`] with tau estimated from the window
/// ranks.
///
/// # Errors
///
/// [`Error::Range`] for windows of fewer than two observations.
pub fn adaptive_bernstein_degree(ranks: &RankMatrix) -> Result<usize> {
    let tau = rank_kendall_tau(ranks)?;
    Ok(adaptive_bernstein_degree_for(tau, ranks.m()))
}

/// Integrated mean squared error of an estimator specification against the
/// true partial derivative of a copula model.
///
/// Draws `reps` independent samples of size `n` (one deterministic
/// generator stream per replication), evaluates the estimator on the
/// interior grid with `grid_per_dim` points per coordinate, and averages
/// the squared error over grid and replications.
///
/// # Errors
///
/// [`Error::Config`] for `reps = 0`, plus sampling and evaluation errors.
pub fn imse(
    spec: &PdEstimatorSpec,
    model: &CopulaModel,
    j: usize,
    n: usize,
    reps: usize,
    grid_per_dim: usize,
    seed: u64,
) -> Result<f64> {
    let points = unit_grid(model.d(), grid_per_dim);
    let truth = points
        .iter()
        .map(|u| model.partial_derivative(j, u))
        .collect::<Result<Vec<f64>>>()?;
    imse_core(
        &|ranks, pts| pd_eval_grid(spec, ranks, j, pts),
        model,
        n,
        reps,
        &points,
        &truth,
        seed,
    )
}

/// IMSE core shared with tests: `estimate` maps window ranks and grid
/// points to estimator values.
fn imse_core(
    estimate: &(dyn Fn(&RankMatrix, &[Vec<f64>]) -> Result<Vec<f64>> + Sync),
    model: &CopulaModel,
    n: usize,
    reps: usize,
    points: &[Vec<f64>],
    truth: &[f64],
    seed: u64,
) -> Result<f64> {
    if reps == 0 {
        return Err(Error::Config("IMSE needs at least one replication".into()));
    }
    let per_rep: Result<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream_rng(seed, rep as u64);
            let sample = model.sample(n, &mut rng)?;
            let ranks = RankMatrix::from_window(&sample, Window::full(n))?;
            let est = estimate(&ranks, points)?;
            let mse = est
                .iter()
                .zip(truth)
                .map(|(e, t)| (e - t) * (e - t))
                .sum::<f64>()
                / points.len() as f64;
            Ok(mse)
        })
        .collect();
    let per_rep = per_rep?;
    Ok(per_rep.iter().sum::<f64>() / reps as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::CopulaFamily;
    use crate::smoothing::beta_binomial_pmf_column;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn ranks_from(rows: &[[u32; 2]]) -> RankMatrix {
        RankMatrix::from_ranks(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    fn random_ranks(m: usize, d: usize, seed: u64) -> RankMatrix {
        let mut rng = stream_rng(seed, 0);
        let model = CopulaModel::from_tau(CopulaFamily::Clayton, 0.5, d).unwrap();
        let sample = model.sample(m, &mut rng).unwrap();
        RankMatrix::from_window(&sample, Window::full(m)).unwrap()
    }

    fn plain_spec(diff: DiffKind, truncate: bool, l: f64) -> PdEstimatorSpec {
        PdEstimatorSpec {
            diff,
            placement: Placement::Plain,
            truncate,
            bandwidth: BandwidthRule::Fixed { l },
        }
    }

    #[test]
    fn finite_differences_match_hand_arithmetic() {
        // Two perfectly concordant observations; h = h' = (1/sqrt(2)) ∧ 1/2 = 1/2.
        let ranks = ranks_from(&[[1, 1], [2, 2]]);
        let u = [0.5, 0.5];
        // C_emp(1.0, 0.5) = 1/2 (only rank row (1,1) fits), C_emp(0.0, 0.5) = 0.
        let nab = pd_eval(&plain_spec(DiffKind::Nabla, false, 1.0), &ranks, 0, &u).unwrap();
        assert_abs_diff_eq!(nab, 0.5 / 1.0, epsilon = 1e-15);
        // Effective step (0.5+0.5)∧1 − (0.5−0.5)∨0 = 1.
        let del = pd_eval(&plain_spec(DiffKind::Delta, false, 1.0), &ranks, 0, &u).unwrap();
        assert_abs_diff_eq!(del, 0.5, epsilon = 1e-15);
        // Near the upper face the effective step shrinks and Delta rescales.
        let v = [0.9, 1.0];
        let nab = pd_eval(&plain_spec(DiffKind::Nabla, false, 1.0), &ranks, 0, &v).unwrap();
        let del = pd_eval(&plain_spec(DiffKind::Delta, false, 1.0), &ranks, 0, &v).unwrap();
        // C_emp(1, 1) − C_emp(0.4, 1) = 1 − 0 = 1; steps: nominal 1, effective 0.6.
        assert_abs_diff_eq!(nab, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(del, 1.0 / 0.6, epsilon = 1e-15);
    }

    #[test]
    fn zero_bandwidth_scale_is_rejected() {
        let ranks = ranks_from(&[[1, 1], [2, 2]]);
        let err = pd_eval(
            &plain_spec(DiffKind::Nabla, false, 0.0),
            &ranks,
            0,
            &[0.5, 0.5],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Bandwidth(_)));
    }

    #[test]
    fn delta_estimate_near_true_value_under_independence() {
        let model = CopulaModel::new(CopulaFamily::Independence, 0.0, 2).unwrap();
        let mut rng = stream_rng(41, 0);
        let sample = model.sample(1000, &mut rng).unwrap();
        let ranks = RankMatrix::from_window(&sample, Window::full(1000)).unwrap();
        let v = pd_eval(
            &plain_spec(DiffKind::Delta, false, 1.0),
            &ranks,
            0,
            &[0.5, 0.5],
        )
        .unwrap();
        // The true partial derivative of the product copula is u_2 = 0.5.
        assert!((v - 0.5).abs() < 0.1, "estimate {v} too far from 0.5");
    }

    #[test]
    fn delta_on_margin_face_is_exactly_one() {
        // With a genuine-copula smoothing family the margins are uniform,
        // so at u = (x, 1) the numerator equals the effective step.
        let ranks = random_ranks(20, 2, 7);
        for x in [0.3, 0.62, 0.9] {
            let v = pd_eval(
                &PdEstimatorSpec::delta_truncated(SmoothingFamily::Binomial),
                &ranks,
                0,
                &[x, 1.0],
            )
            .unwrap();
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
            let w = pd_eval(
                &PdEstimatorSpec {
                    truncate: false,
                    ..PdEstimatorSpec::delta_truncated(SmoothingFamily::beta_binomial4())
                },
                &ranks,
                0,
                &[x, 1.0],
            )
            .unwrap();
            assert_abs_diff_eq!(w, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn truncated_estimators_stay_in_unit_interval() {
        let ranks = random_ranks(25, 2, 11);
        let specs = [
            plain_spec(DiffKind::Nabla, true, 1.0),
            plain_spec(DiffKind::Delta, true, 1.0),
            PdEstimatorSpec::delta_truncated(SmoothingFamily::Binomial),
            PdEstimatorSpec::delta_truncated(SmoothingFamily::beta_binomial4()),
            PdEstimatorSpec {
                diff: DiffKind::Delta,
                placement: Placement::DiffThenSmooth(SmoothingFamily::Binomial),
                truncate: true,
                bandwidth: BandwidthRule::Fixed { l: 1.0 },
            },
            PdEstimatorSpec {
                diff: DiffKind::Nabla,
                placement: Placement::Bernstein(DegreeRule::Scaled { l: 1.0 }),
                truncate: true,
                bandwidth: BandwidthRule::Fixed { l: 1.0 },
            },
        ];
        let mut rng = stream_rng(13, 1);
        for _ in 0..40 {
            let u = [rng.gen::<f64>(), rng.gen::<f64>()];
            for spec in &specs {
                for j in 0..2 {
                    let v = pd_eval(spec, &ranks, j, &u).unwrap();
                    assert!(
                        (0.0..=1.0).contains(&v),
                        "{} at {u:?} returned {v}",
                        spec.label()
                    );
                }
            }
        }
    }

    #[test]
    fn nominal_step_differences_are_nonnegative_untruncated() {
        let ranks = random_ranks(30, 2, 17);
        let specs = [
            plain_spec(DiffKind::Nabla, false, 1.0),
            PdEstimatorSpec::nabla(SmoothingFamily::Binomial),
            PdEstimatorSpec::nabla(SmoothingFamily::beta_binomial4()),
        ];
        let mut rng = stream_rng(19, 2);
        for _ in 0..40 {
            let u = [rng.gen::<f64>(), rng.gen::<f64>()];
            for spec in &specs {
                let v = pd_eval(spec, &ranks, 1, &u).unwrap();
                assert!(v >= 0.0, "{} at {u:?} returned {v}", spec.label());
            }
        }
    }

    #[test]
    fn effective_step_with_genuine_family_needs_no_truncation() {
        let ranks = random_ranks(24, 2, 23);
        let specs = [
            PdEstimatorSpec {
                truncate: false,
                ..PdEstimatorSpec::delta_truncated(SmoothingFamily::Binomial)
            },
            PdEstimatorSpec {
                truncate: false,
                ..PdEstimatorSpec::delta_truncated(SmoothingFamily::beta_binomial4())
            },
        ];
        let mut rng = stream_rng(29, 3);
        for _ in 0..25 {
            let u = [rng.gen::<f64>(), rng.gen::<f64>()];
            for spec in &specs {
                for j in 0..2 {
                    let v = pd_eval(spec, &ranks, j, &u).unwrap();
                    assert!(
                        (-1e-12..=1.0 + 1e-12).contains(&v),
                        "{} at {u:?} returned {v}",
                        spec.label()
                    );
                }
            }
        }
    }

    #[test]
    fn bernstein_closed_form_matches_enumeration() {
        let mut rng = stream_rng(31, 4);
        for p in 1..=6usize {
            for m in 2..=5usize {
                for _ in 0..3 {
                    // A random permutation pair as the rank matrix.
                    let mut c0: Vec<u32> = (1..=p as u32).collect();
                    let mut c1 = c0.clone();
                    for k in (1..p).rev() {
                        c0.swap(k, rng.gen_range(0..=k));
                        c1.swap(k, rng.gen_range(0..=k));
                    }
                    let rows = (0..p).map(|i| vec![c0[i], c1[i]]).collect();
                    let ranks = RankMatrix::from_ranks(rows).unwrap();
                    let u = [rng.gen::<f64>(), rng.gen::<f64>()];
                    for j in 0..2 {
                        let fast = pd_bernstein(&ranks, j, &u, m);
                        let slow = pd_bernstein_enumerated(&ranks, j, &u, m);
                        assert_abs_diff_eq!(fast, slow, epsilon = 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn bernstein_single_observation_case() {
        let ranks = ranks_from(&[[1, 1]]);
        let u = [0.5, 0.5];
        let fast = pd_bernstein(&ranks, 0, &u, 2);
        let slow = pd_bernstein_enumerated(&ranks, 0, &u, 2);
        assert_abs_diff_eq!(fast, slow, epsilon = 1e-14);
    }

    #[test]
    fn bernstein_degenerate_coordinate_collapses() {
        let ranks = random_ranks(9, 2, 37);
        for m in [2usize, 4] {
            let fast = pd_bernstein(&ranks, 0, &[0.0, 0.7], m);
            let slow = pd_bernstein_enumerated(&ranks, 0, &[0.0, 0.7], m);
            assert_abs_diff_eq!(fast, slow, epsilon = 1e-13);
            // b_{m-1, 0}(s) = 1(s = 0): only rows whose scaled rank cell is
            // the first contribute, each weighted by the survival factors.
            let cell = |r: u32| (m * r as usize).div_ceil(9) - 1;
            let sv = binomial_survival_column(m, 0.7);
            let direct: f64 = (0..9)
                .filter(|&i| cell(ranks.get(i, 0)) == 0)
                .map(|i| sv[cell(ranks.get(i, 1))])
                .sum();
            assert_abs_diff_eq!(fast, m as f64 / 9.0 * direct, epsilon = 1e-13);
        }
    }

    #[test]
    fn bernstein_values_respect_uniform_bound() {
        let mut rng = stream_rng(41, 5);
        for &p in &[5usize, 30] {
            for &l in &[0.5f64, 1.0, 4.0] {
                let ranks = random_ranks(p, 2, 1000 + p as u64);
                let degree = DegreeRule::Scaled { l }.resolve(&ranks).unwrap();
                let bound = 1.0 + l.max(2.0) + 1e-12;
                for _ in 0..50 {
                    let u = [rng.gen::<f64>(), rng.gen::<f64>()];
                    for j in 0..2 {
                        let v = pd_bernstein(&ranks, j, &u, degree);
                        assert!(v.abs() <= bound, "p={p} l={l} value {v} exceeds {bound}");
                    }
                }
            }
        }
    }

    #[test]
    fn adaptive_rules_match_plugin_arithmetic() {
        // |tau| = 0, window 100: h = (4 + 1/2)/10 = 0.45.
        assert_abs_diff_eq!(adaptive_bandwidth_for(0.0, 100).0, 0.45, epsilon = 1e-15);
        // |tau| = 1, window 100: h = (0 + 1/2)/10 = 0.05 and degree 4.5*10 = 45.
        assert_abs_diff_eq!(adaptive_bandwidth_for(1.0, 100).0, 0.05, epsilon = 1e-15);
        assert_eq!(adaptive_bernstein_degree_for(1.0, 100), 45);
        assert_eq!(adaptive_bernstein_degree_for(-1.0, 100), 45);
        // tau = 0.5, window 64: 0.5^6 = 1/64, so h = (1/16 + 1/2)/8 = 9/128.
        assert_abs_diff_eq!(
            adaptive_bandwidth_for(0.5, 64).0,
            9.0 / 128.0,
            epsilon = 1e-15
        );
        // Small windows cap at 1/2.
        assert_abs_diff_eq!(adaptive_bandwidth_for(0.0, 4).0, 0.5, epsilon = 1e-15);
        // Degree floor of 2 and rank-based wrappers.
        assert_eq!(adaptive_bernstein_degree_for(0.0, 4), 2);
        let concordant =
            RankMatrix::from_ranks((1..=100).map(|i| vec![i, i]).collect()).unwrap();
        assert_abs_diff_eq!(
            adaptive_bandwidth(&concordant).unwrap().0,
            0.05,
            epsilon = 1e-15
        );
        assert_eq!(adaptive_bernstein_degree(&concordant).unwrap(), 45);
    }

    #[test]
    fn dirac_smoothing_law_collapses_to_plain_differences() {
        let ranks = random_ranks(15, 2, 43);
        let mut rng = stream_rng(47, 6);
        for _ in 0..20 {
            let u = [rng.gen::<f64>(), rng.gen::<f64>()];
            for kind in [DiffKind::Nabla, DiffKind::Delta] {
                let smoothed = pd_eval(
                    &PdEstimatorSpec {
                        diff: kind,
                        placement: Placement::DiffThenSmooth(SmoothingFamily::Dirac),
                        truncate: false,
                        bandwidth: BandwidthRule::Fixed { l: 1.0 },
                    },
                    &ranks,
                    0,
                    &u,
                )
                .unwrap();
                let plain = pd_eval(&plain_spec(kind, false, 1.0), &ranks, 0, &u).unwrap();
                assert_eq!(smoothed, plain);
            }
        }
    }

    #[test]
    fn binomial_smoothing_integral_matches_direct_enumeration() {
        let ranks = random_ranks(3, 2, 53);
        let u = [0.35, 0.8];
        let spec = PdEstimatorSpec {
            diff: DiffKind::Delta,
            placement: Placement::DiffThenSmooth(SmoothingFamily::Binomial),
            truncate: true,
            bandwidth: BandwidthRule::Fixed { l: 1.0 },
        };
        let got = pd_eval(&spec, &ranks, 0, &u).unwrap();
        // Independent test-local enumeration over the 4x4 lattice.
        let m = 3usize;
        let h = (1.0 / (m as f64).sqrt()).min(0.5);
        let pmf0 = binomial_pmf_column(m, u[0]);
        let pmf1 = binomial_pmf_column(m, u[1]);
        let mut want = 0.0;
        for s0 in 0..=m {
            for s1 in 0..=m {
                let w = [s0 as f64 / m as f64, s1 as f64 / m as f64];
                let up = [(w[0] + h).min(1.0), w[1]];
                let dn = [(w[0] - h).max(0.0), w[1]];
                let denom = (w[0] + h).min(1.0) - (w[0] - h).max(0.0);
                let raw = (ranks.empirical_copula(&up).unwrap()
                    - ranks.empirical_copula(&dn).unwrap())
                    / denom;
                want += pmf0[s0] * pmf1[s1] * raw.clamp(0.0, 1.0);
            }
        }
        assert_abs_diff_eq!(got, want, epsilon = 1e-13);
    }

    #[test]
    fn joint_smoothing_law_has_consistent_margins() {
        let ranks = random_ranks(8, 2, 59);
        let u = [0.4, 0.75];
        let pmf = beta_binomial_joint_pmf(&ranks, &u, 4.0).unwrap();
        let m = 8usize;
        let total: f64 = pmf.iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-10);
        assert!(pmf.iter().all(|&p| p >= 0.0));
        for (j, &x) in u.iter().enumerate() {
            let (alpha, beta) = beta_binomial_shapes(m, x, 4.0);
            let want = beta_binomial_pmf_column(m, alpha, beta).unwrap();
            for s in 0..=m {
                let mut got = 0.0;
                for (flat, &p) in pmf.iter().enumerate() {
                    let mut idx = [0usize; 2];
                    decode_lattice(flat, m, &mut idx);
                    if idx[j] == s {
                        got += p;
                    }
                }
                assert_abs_diff_eq!(got, want[s], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn joint_smoothing_law_handles_degenerate_coordinates() {
        let ranks = random_ranks(5, 2, 61);
        let pmf = beta_binomial_joint_pmf(&ranks, &[0.0, 1.0], 4.0).unwrap();
        let m = 5usize;
        // All mass on (0, m).
        for (flat, &p) in pmf.iter().enumerate() {
            let mut idx = [0usize; 2];
            decode_lattice(flat, m, &mut idx);
            if idx == [0, m] {
                assert_abs_diff_eq!(p, 1.0, epsilon = 1e-12);
            } else {
                assert_abs_diff_eq!(p, 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn grid_evaluation_matches_pointwise_evaluation() {
        let ranks = random_ranks(12, 2, 67);
        let points = unit_grid(2, 4);
        let specs = [
            plain_spec(DiffKind::Delta, true, 1.0),
            PdEstimatorSpec::delta_truncated(SmoothingFamily::Binomial),
            PdEstimatorSpec::delta_truncated(SmoothingFamily::beta_binomial4()),
            PdEstimatorSpec {
                diff: DiffKind::Nabla,
                placement: Placement::Bernstein(DegreeRule::Fixed(4)),
                truncate: false,
                bandwidth: BandwidthRule::Fixed { l: 1.0 },
            },
            PdEstimatorSpec {
                diff: DiffKind::Delta,
                placement: Placement::DiffThenSmooth(SmoothingFamily::beta_binomial4()),
                truncate: true,
                bandwidth: BandwidthRule::adaptive(),
            },
        ];
        for spec in &specs {
            let batch = pd_eval_grid(spec, &ranks, 1, &points).unwrap();
            for (pt, &b) in points.iter().zip(&batch) {
                let single = pd_eval(spec, &ranks, 1, pt).unwrap();
                assert_abs_diff_eq!(single, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn error_at_center_shrinks_with_sample_size() {
        let model = CopulaModel::from_tau(CopulaFamily::Clayton, 0.5, 2).unwrap();
        let truth = model.partial_derivative(0, &[0.5, 0.5]).unwrap();
        let spec = PdEstimatorSpec {
            diff: DiffKind::Delta,
            placement: Placement::SmoothThenDiff(SmoothingFamily::Binomial),
            truncate: false,
            bandwidth: BandwidthRule::Fixed { l: 1.0 },
        };
        let mut maes = Vec::new();
        for (level, &n) in [50usize, 200, 800].iter().enumerate() {
            let mut abs_err = 0.0;
            for rep in 0..200u64 {
                let mut rng = stream_rng(71 + level as u64, rep);
                let sample = model.sample(n, &mut rng).unwrap();
                let ranks = RankMatrix::from_window(&sample, Window::full(n)).unwrap();
                let v = pd_eval(&spec, &ranks, 0, &[0.5, 0.5]).unwrap();
                abs_err += (v - truth).abs();
            }
            maes.push(abs_err / 200.0);
        }
        assert!(
            maes[0] > maes[1] && maes[1] > maes[2],
            "mean absolute errors should decrease: {maes:?}"
        );
    }

    #[test]
    fn imse_of_oracle_estimator_is_zero() {
        let model = CopulaModel::from_tau(CopulaFamily::Clayton, 0.5, 2).unwrap();
        let points = unit_grid(2, 5);
        let truth: Vec<f64> = points
            .iter()
            .map(|u| model.partial_derivative(0, u).unwrap())
            .collect();
        let truth_clone = truth.clone();
        let got = imse_core(
            &move |_, pts| {
                assert_eq!(pts.len(), truth_clone.len());
                Ok(truth_clone.clone())
            },
            &model,
            30,
            5,
            &points,
            &truth,
            3,
        )
        .unwrap();
        assert_eq!(got, 0.0);
    }

    #[test]
    fn imse_is_positive_and_deterministic_for_real_estimators() {
        let model = CopulaModel::from_tau(CopulaFamily::Clayton, 0.5, 2).unwrap();
        let spec = PdEstimatorSpec::delta_truncated(SmoothingFamily::Binomial);
        let a = imse(&spec, &model, 0, 40, 8, 9, 123).unwrap();
        let b = imse(&spec, &model, 0, 40, 8, 9, 123).unwrap();
        assert_eq!(a, b);
        assert!(a > 0.0);
        assert!(imse(&spec, &model, 0, 40, 0, 9, 1).is_err());
    }

    #[test]
    fn labels_distinguish_specs() {
        let a = PdEstimatorSpec::delta_truncated(SmoothingFamily::Binomial).label();
        let b = PdEstimatorSpec::delta_truncated(SmoothingFamily::Dirac).label();
        let c = PdEstimatorSpec::nabla(SmoothingFamily::Dirac).label();
        assert_ne!(a, b);
        assert_ne!(b, c);
        assert!(a.contains("delta") && a.contains("binomial") && a.ends_with("trunc"));
    }
}
