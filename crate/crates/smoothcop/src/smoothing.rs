//! Smooth empirical copulas.
//!
//! The classical empirical copula of a window averages rank indicators
//! `1(R_i/m <= u)`. Smoothing replaces each indicator with a kernel
//! `K_r(u)` built from a smoothing distribution centred at `u`:
//!
//! - `Dirac`: the kernel stays the indicator; nothing is smoothed.
//! - `Binomial`: margins smooth along scaled binomial laws, coupled
//!   independently. The resulting estimator is the empirical beta copula,
//!   a genuine copula with a closed form as a mixture of beta cdfs.
//! - `BetaBinomial` (dispersion `rho`, default 4): margins smooth along
//!   scaled beta-binomial laws, coupled by the empirical beta copula of
//!   the same window. Wider kernels where the data are sparse; also a
//!   genuine copula.
//!
//! Every kernel factors through margin survival functions evaluated at
//! scaled ranks, so the numerical core of this module is fast, stable
//! evaluation of binomial and beta-binomial survival functions. Two
//! routes are implemented: scalar special-function forms (regularized
//! incomplete beta, log-gamma summation) and whole-column evaluation via
//! mode-centred probability recurrences; tests pin them against each
//! other.

use crate::data::{check_unit_point, RankMatrix};
use crate::error::{Error, Result};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::ln_gamma;
use std::collections::HashMap;

/// Dispersion parameter of the default beta-binomial smoothing family.
pub const DEFAULT_RHO: f64 = 4.0;

/// The smoothing law placed around each evaluation point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SmoothingFamily {
    /// No smoothing; reproduces the classical empirical copula.
    Dirac,
    /// Scaled-binomial margins, independence coupling: the empirical beta copula.
    Binomial,
    /// Scaled beta-binomial margins with dispersion `rho`, coupled by the
    /// empirical beta copula of the window. Requires `1 < rho < m`.
    BetaBinomial {
        /// Dispersion: the margin variance is `rho` times the binomial one.
        rho: f64,
    },
}

impl SmoothingFamily {
    /// The beta-binomial family at the default dispersion 4.
    pub fn beta_binomial4() -> Self {
        Self::BetaBinomial { rho: DEFAULT_RHO }
    }

    /// Compact label used in CSV output and CLI flags.
    pub fn label(&self) -> String {
        match self {
            Self::Dirac => "dirac".into(),
            Self::Binomial => "binomial".into(),
            Self::BetaBinomial { rho } => {
                if (rho - rho.round()).abs() < 1e-12 {
                    format!("betab{}", rho.round() as i64)
                } else {
                    format!("betab{rho}")
                }
            }
        }
    }
}

impl std::fmt::Display for SmoothingFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

impl std::str::FromStr for SmoothingFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "dirac" => return Ok(Self::Dirac),
            "binomial" | "bin" => return Ok(Self::Binomial),
            "betabinomial" | "beta-binomial" | "betab4" => {
                return Ok(Self::beta_binomial4());
            }
            _ => {}
        }
        if let Some(rest) = lower.strip_prefix("betab") {
            if let Ok(rho) = rest.parse::<f64>() {
                return Ok(Self::BetaBinomial { rho });
            }
        }
        Err(Error::Config(format!("unknown smoothing family '{s}'")))
    }
}

/// Survival function of the binomial law: `P(Binomial(p, u) > w)`.
///
/// Computed through the regularized incomplete beta function, exact at the
/// degenerate ends (`u` equal to 0 or 1, `w >= p`).
pub fn binomial_survival(p: usize, u: f64, w: u32) -> f64 {
    assert!((0.0..=1.0).contains(&u), "binomial survival needs u in [0,1], got {u}");
    if w as usize >= p {
        return 0.0;
    }
    if u == 0.0 {
        return 0.0;
    }
    if u == 1.0 {
        return 1.0;
    }
    // P(Bin(p,u) > w) = I_u(w+1, p-w).
    beta_reg(w as f64 + 1.0, (p - w as usize) as f64, u)
}

/// Lower tail of the binomial law: `P(Binomial(p, u) <= w)`.
///
/// Evaluated on the complementary side so that values near 0 keep full
/// relative precision where the survival function saturates at 1.
pub fn binomial_cdf(p: usize, u: f64, w: u32) -> f64 {
    assert!((0.0..=1.0).contains(&u), "binomial cdf needs u in [0,1], got {u}");
    if w as usize >= p {
        return 1.0;
    }
    if u == 0.0 {
        return 1.0;
    }
    if u == 1.0 {
        return 0.0;
    }
    beta_reg((p - w as usize) as f64, w as f64 + 1.0, 1.0 - u)
}

/// Binomial probabilities `t_k` proportional to `P(Binomial(p,u) = k)`,
/// built outward from the mode so every entry is at most 1, plus their sum.
fn scaled_binomial_pmf(p: usize, u: f64) -> (Vec<f64>, f64) {
    debug_assert!(u > 0.0 && u < 1.0);
    let mut t = vec![0.0; p + 1];
    let mode = (((p + 1) as f64) * u).floor().clamp(0.0, p as f64) as usize;
    t[mode] = 1.0;
    let odds = u / (1.0 - u);
    for k in mode..p {
        t[k + 1] = t[k] * ((p - k) as f64 / (k + 1) as f64) * odds;
    }
    for k in (0..mode).rev() {
        t[k] = t[k + 1] * ((k + 1) as f64 / (p - k) as f64) / odds;
    }
    let sum = t.iter().sum();
    (t, sum)
}

/// All binomial survival values `P(Binomial(p, u) > w)` for `w = 0..=p`,
/// in `O(p)` via the probability recurrence and suffix sums.
pub fn binomial_survival_column(p: usize, u: f64) -> Vec<f64> {
    assert!((0.0..=1.0).contains(&u), "binomial survival needs u in [0,1], got {u}");
    let mut out = vec![0.0; p + 1];
    if u == 0.0 {
        return out;
    }
    if u == 1.0 {
        for w in 0..p {
            out[w] = 1.0;
        }
        return out;
    }
    let (t, sum) = scaled_binomial_pmf(p, u);
    let mut acc = 0.0;
    for w in (0..p).rev() {
        acc += t[w + 1];
        out[w] = acc / sum;
    }
    out
}

/// Normalized binomial probabilities `P(Binomial(p, u) = k)` for `k = 0..=p`.
pub fn binomial_pmf_column(p: usize, u: f64) -> Vec<f64> {
    assert!((0.0..=1.0).contains(&u), "binomial pmf needs u in [0,1], got {u}");
    if u == 0.0 {
        let mut out = vec![0.0; p + 1];
        out[0] = 1.0;
        return out;
    }
    if u == 1.0 {
        let mut out = vec![0.0; p + 1];
        out[p] = 1.0;
        return out;
    }
    let (mut t, sum) = scaled_binomial_pmf(p, u);
    for v in &mut t {
        *v /= sum;
    }
    t
}

/// Survival function of the beta-binomial law: `P(S > w)` where
/// `S ~ BetaBinomial(p, alpha, beta)`, by log-gamma probability summation.
///
/// # Errors
///
/// [`Error::Domain`] if `alpha <= 0` or `beta <= 0` (callers smoothing at
/// a margin value `t` must map `t = 0` and `t = 1` to the continuity
/// limits 0 and 1 themselves), or if `p = 0`.
pub fn beta_binomial_survival(p: usize, alpha: f64, beta: f64, w: u32) -> Result<f64> {
    check_beta_binomial(p, alpha, beta)?;
    if w as usize >= p {
        return Ok(0.0);
    }
    let ln_norm = ln_beta(alpha, beta);
    let mut sum = 0.0;
    for k in (w as usize + 1)..=p {
        sum += (ln_choose(p, k) + ln_beta(k as f64 + alpha, (p - k) as f64 + beta) - ln_norm).exp();
    }
    Ok(sum.min(1.0))
}

/// Lower tail `P(S <= w)` of the beta-binomial law, summed on its own side
/// to keep relative precision near 0.
pub fn beta_binomial_cdf(p: usize, alpha: f64, beta: f64, w: u32) -> Result<f64> {
    check_beta_binomial(p, alpha, beta)?;
    if w as usize >= p {
        return Ok(1.0);
    }
    let ln_norm = ln_beta(alpha, beta);
    let mut sum = 0.0;
    for k in 0..=(w as usize) {
        sum += (ln_choose(p, k) + ln_beta(k as f64 + alpha, (p - k) as f64 + beta) - ln_norm).exp();
    }
    Ok(sum.min(1.0))
}

fn check_beta_binomial(p: usize, alpha: f64, beta: f64) -> Result<()> {
    if p == 0 {
        return Err(Error::Domain("beta-binomial needs p >= 1".into()));
    }
    if !(alpha > 0.0 && beta > 0.0) || !alpha.is_finite() || !beta.is_finite() {
        return Err(Error::Domain(format!(
            "beta-binomial shape parameters must be positive, got alpha={alpha}, beta={beta}"
        )));
    }
    Ok(())
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

fn ln_choose(n: usize, k: usize) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Beta-binomial probabilities proportional to `P(S = k)` via the ratio
/// recurrence `p_{k+1}/p_k = (p-k)(k+alpha) / ((k+1)(p-1-k+beta))`,
/// started at the mean, plus their sum. Falls back to log-gamma terms if
/// the recurrence leaves the floating range.
fn scaled_beta_binomial_pmf(p: usize, alpha: f64, beta: f64) -> (Vec<f64>, f64) {
    let mut t = vec![0.0; p + 1];
    let start = ((p as f64) * alpha / (alpha + beta))
        .floor()
        .clamp(0.0, p as f64) as usize;
    t[start] = 1.0;
    for k in start..p {
        let ratio = ((p - k) as f64 * (k as f64 + alpha))
            / ((k + 1) as f64 * ((p - 1 - k) as f64 + beta));
        t[k + 1] = t[k] * ratio;
    }
    for k in (0..start).rev() {
        let ratio = ((p - k) as f64 * (k as f64 + alpha))
            / ((k + 1) as f64 * ((p - 1 - k) as f64 + beta));
        t[k] = t[k + 1] / ratio;
    }
    let max = t.iter().cloned().fold(0.0, f64::max);
    if !max.is_finite() {
        // Extremely U-shaped law (tiny shapes): recompute stably in logs.
        let ln_norm = ln_beta(alpha, beta);
        for (k, v) in t.iter_mut().enumerate() {
            *v = (ln_choose(p, k) + ln_beta(k as f64 + alpha, (p - k) as f64 + beta) - ln_norm)
                .exp();
        }
        let sum = t.iter().sum();
        return (t, sum);
    }
    if max > 0.0 && max != 1.0 {
        for v in &mut t {
            *v /= max;
        }
    }
    let sum = t.iter().sum();
    (t, sum)
}

/// All beta-binomial survival values `P(S > w)` for `w = 0..=p` in `O(p)`.
///
/// # Errors
///
/// Same domain requirements as [`beta_binomial_survival`].
pub fn beta_binomial_survival_column(p: usize, alpha: f64, beta: f64) -> Result<Vec<f64>> {
    check_beta_binomial(p, alpha, beta)?;
    let (t, sum) = scaled_beta_binomial_pmf(p, alpha, beta);
    let mut out = vec![0.0; p + 1];
    let mut acc = 0.0;
    for w in (0..p).rev() {
        acc += t[w + 1];
        out[w] = (acc / sum).min(1.0);
    }
    Ok(out)
}

/// Normalized beta-binomial probabilities `P(S = k)` for `k = 0..=p`.
///
/// # Errors
///
/// Same domain requirements as [`beta_binomial_survival`].
pub fn beta_binomial_pmf_column(p: usize, alpha: f64, beta: f64) -> Result<Vec<f64>> {
    check_beta_binomial(p, alpha, beta)?;
    let (mut t, sum) = scaled_beta_binomial_pmf(p, alpha, beta);
    for v in &mut t {
        *v /= sum;
    }
    Ok(t)
}

/// A smooth empirical copula: window ranks plus a smoothing family.
#[derive(Debug, Clone)]
pub struct SmoothEmpiricalCopula {
    ranks: RankMatrix,
    family: SmoothingFamily,
}

impl SmoothEmpiricalCopula {
    /// Binds a smoothing family to window ranks.
    ///
    /// # Errors
    ///
    /// [`Error::Domain`] for a beta-binomial dispersion outside
    /// `1 < rho < m`; smoothing wider than the window is undefined.
    pub fn new(ranks: RankMatrix, family: SmoothingFamily) -> Result<Self> {
        if let SmoothingFamily::BetaBinomial { rho } = family {
            let m = ranks.m() as f64;
            if !(rho > 1.0 && rho < m) || !rho.is_finite() {
                return Err(Error::Domain(format!(
                    "beta-binomial dispersion must satisfy 1 < rho < m, got rho={rho}, m={m}"
                )));
            }
        }
        Ok(Self { ranks, family })
    }

    /// The underlying window ranks.
    pub fn ranks(&self) -> &RankMatrix {
        &self.ranks
    }

    /// The smoothing family.
    pub fn family(&self) -> SmoothingFamily {
        self.family
    }

    /// Window length.
    pub fn m(&self) -> usize {
        self.ranks.m()
    }

    /// Dimension.
    pub fn d(&self) -> usize {
        self.ranks.d()
    }

    /// Margin survival value `P(W_u > (r-1)/m)` of the smoothing law at
    /// margin position `u` and rank `r` (identical across coordinates).
    ///
    /// For the beta-binomial family the endpoint values `u = 0` and
    /// `u = 1` are the monotone continuity limits 0 and 1.
    pub fn margin_survival(&self, u: f64, r: u32) -> f64 {
        let m = self.m();
        debug_assert!((1..=m as u32).contains(&r));
        match self.family {
            SmoothingFamily::Dirac => {
                if r as f64 <= m as f64 * u {
                    1.0
                } else {
                    0.0
                }
            }
            SmoothingFamily::Binomial => binomial_survival(m, u, r - 1),
            SmoothingFamily::BetaBinomial { rho } => {
                if u == 0.0 {
                    0.0
                } else if u == 1.0 {
                    1.0
                } else {
                    let (alpha, beta) = beta_binomial_shapes(m, u, rho);
                    beta_binomial_survival(m, alpha, beta, r - 1).expect("validated dispersion")
                }
            }
        }
    }

    /// Margin survival values for every rank `r = 1..=m` at position `u`,
    /// indexed by `r - 1`; the column analogue of [`Self::margin_survival`].
    pub fn margin_survival_column(&self, u: f64) -> Vec<f64> {
        let m = self.m();
        match self.family {
            SmoothingFamily::Dirac => (1..=m as u32)
                .map(|r| if r as f64 <= m as f64 * u { 1.0 } else { 0.0 })
                .collect(),
            SmoothingFamily::Binomial => {
                let mut col = binomial_survival_column(m, u);
                col.truncate(m);
                col
            }
            SmoothingFamily::BetaBinomial { rho } => {
                if u == 0.0 {
                    vec![0.0; m]
                } else if u == 1.0 {
                    vec![1.0; m]
                } else {
                    let (alpha, beta) = beta_binomial_shapes(m, u, rho);
                    let mut col = beta_binomial_survival_column(m, alpha, beta)
                        .expect("validated dispersion");
                    col.truncate(m);
                    col
                }
            }
        }
    }

    /// The kernel `K_r(u)`: the weight the smoothing law at `u` assigns to
    /// the rank vector `r`.
    ///
    /// Dirac: the indicator `1(r/m <= u)`. Binomial: the product of margin
    /// survivals. Beta-binomial: the empirical beta copula of the window,
    /// evaluated at the margin survivals.
    ///
    /// # Errors
    ///
    /// [`Error::Range`] for a rank outside `1..=m`, wrong lengths, or `u`
    /// outside the cube.
    pub fn kernel(&self, r: &[u32], u: &[f64]) -> Result<f64> {
        let m = self.m();
        check_unit_point(u, self.d())?;
        if r.len() != self.d() || r.iter().any(|&rj| rj < 1 || rj as usize > m) {
            return Err(Error::Range(format!(
                "rank vector must have {} entries in 1..={m}",
                self.d()
            )));
        }
        match self.family {
            SmoothingFamily::Dirac => Ok(r
                .iter()
                .zip(u)
                .all(|(&rj, &uj)| rj as f64 <= m as f64 * uj)
                .then_some(1.0)
                .unwrap_or(0.0)),
            SmoothingFamily::Binomial => Ok(r
                .iter()
                .zip(u)
                .map(|(&rj, &uj)| binomial_survival(m, uj, rj - 1))
                .product()),
            SmoothingFamily::BetaBinomial { .. } => {
                let v: Vec<f64> = r
                    .iter()
                    .zip(u)
                    .map(|(&rj, &uj)| self.margin_survival(uj, rj))
                    .collect();
                empirical_beta_copula(&self.ranks, &v)
            }
        }
    }

    /// The smooth empirical copula at `u`: the average of [`Self::kernel`]
    /// over the rows of the rank matrix. Values lie in `[0, 1]`; the Dirac
    /// family reproduces the classical empirical copula exactly.
    ///
    /// # Errors
    ///
    /// [`Error::Range`] for `u` outside `[0,1]^d`.
    pub fn eval(&self, u: &[f64]) -> Result<f64> {
        check_unit_point(u, self.d())?;
        let m = self.m();
        let d = self.d();
        match self.family {
            SmoothingFamily::Dirac => self.ranks.empirical_copula(u),
            SmoothingFamily::Binomial => {
                let cols: Vec<Vec<f64>> =
                    (0..d).map(|j| self.margin_survival_column(u[j])).collect();
                let mut sum = 0.0;
                for i in 0..m {
                    let row = self.ranks.row(i);
                    let mut prod = 1.0;
                    for j in 0..d {
                        prod *= cols[j][row[j] as usize - 1];
                    }
                    sum += prod;
                }
                Ok(sum / m as f64)
            }
            SmoothingFamily::BetaBinomial { .. } => {
                let wcols: Vec<Vec<f64>> =
                    (0..d).map(|j| self.margin_survival_column(u[j])).collect();
                let mut sum = 0.0;
                // Inner binomial columns are shared across the outer mixture
                // row by margin, so build them once per (row, margin).
                let mut inner: Vec<Vec<f64>> = Vec::with_capacity(d);
                for i in 0..m {
                    let row = self.ranks.row(i);
                    inner.clear();
                    for j in 0..d {
                        inner.push(binomial_survival_column(m, wcols[j][row[j] as usize - 1]));
                    }
                    for ip in 0..m {
                        let rowp = self.ranks.row(ip);
                        let mut prod = 1.0;
                        for j in 0..d {
                            prod *= inner[j][rowp[j] as usize - 1];
                        }
                        sum += prod;
                    }
                }
                Ok(sum / (m * m) as f64)
            }
        }
    }

    /// Evaluates the copula at many points, amortizing margin-survival
    /// work across points that share coordinate values (grids). Pure:
    /// identical to calling [`Self::eval`] point by point.
    ///
    /// # Errors
    ///
    /// [`Error::Range`] as for [`Self::eval`].
    pub fn eval_grid(&self, points: &[Vec<f64>]) -> Result<Vec<f64>> {
        let m = self.m();
        let d = self.d();
        for u in points {
            check_unit_point(u, d)?;
        }
        match self.family {
            SmoothingFamily::Dirac => points
                .iter()
                .map(|u| self.ranks.empirical_copula(u))
                .collect(),
            SmoothingFamily::Binomial => {
                let cache = self.margin_column_cache(points);
                let mut out = Vec::with_capacity(points.len());
                for u in points {
                    let mut sum = 0.0;
                    for i in 0..m {
                        let row = self.ranks.row(i);
                        let mut prod = 1.0;
                        for j in 0..d {
                            prod *= cache[j][&u[j].to_bits()][row[j] as usize - 1];
                        }
                        sum += prod;
                    }
                    out.push(sum / m as f64);
                }
                Ok(out)
            }
            SmoothingFamily::BetaBinomial { .. } => {
                let wcache = self.margin_column_cache(points);
                // Pair matrices G_j(u)[ip, i] depend on one coordinate each;
                // cache them when the footprint stays modest.
                let distinct: usize = wcache.iter().map(|c| c.len()).sum();
                if distinct * m * m <= 16_000_000 {
                    let mut gcache: Vec<HashMap<u64, Vec<f64>>> = vec![HashMap::new(); d];
                    for j in 0..d {
                        for (&bits, wcol) in &wcache[j] {
                            gcache[j].insert(bits, self.pair_matrix(j, wcol));
                        }
                    }
                    let mut out = Vec::with_capacity(points.len());
                    let mut acc = vec![0.0; m * m];
                    for u in points {
                        acc.copy_from_slice(&gcache[0][&u[0].to_bits()]);
                        for j in 1..d {
                            let g = &gcache[j][&u[j].to_bits()];
                            for (a, &b) in acc.iter_mut().zip(g) {
                                *a *= b;
                            }
                        }
                        out.push(acc.iter().sum::<f64>() / (m * m) as f64);
                    }
                    Ok(out)
                } else {
                    points.iter().map(|u| self.eval(u)).collect()
                }
            }
        }
    }

    /// Kernel values for every window row at every point: entry `(i, e)`
    /// is `K_{R_i}(points[e])`. The workhorse behind multiplier replicates.
    ///
    /// # Errors
    ///
    /// [`Error::Range`] as for [`Self::eval`].
    pub fn kernel_matrix(&self, points: &[Vec<f64>]) -> Result<ndarray::Array2<f64>> {
        let m = self.m();
        let d = self.d();
        for u in points {
            check_unit_point(u, d)?;
        }
        let mut out = ndarray::Array2::<f64>::zeros((m, points.len()));
        match self.family {
            SmoothingFamily::Dirac | SmoothingFamily::Binomial => {
                let cache = self.margin_column_cache(points);
                for (e, u) in points.iter().enumerate() {
                    for i in 0..m {
                        let row = self.ranks.row(i);
                        let mut prod = 1.0;
                        for j in 0..d {
                            prod *= cache[j][&u[j].to_bits()][row[j] as usize - 1];
                        }
                        out[(i, e)] = prod;
                    }
                }
            }
            SmoothingFamily::BetaBinomial { .. } => {
                let wcache = self.margin_column_cache(points);
                let mut gcols: Vec<Vec<f64>> = Vec::new();
                for (e, u) in points.iter().enumerate() {
                    gcols.clear();
                    for j in 0..d {
                        gcols.push(self.pair_matrix(j, &wcache[j][&u[j].to_bits()]));
                    }
                    // K_{R_i}(u) = (1/m) sum_ip prod_j G_j[ip, i].
                    for i in 0..m {
                        let mut sum = 0.0;
                        for ip in 0..m {
                            let mut prod = 1.0;
                            for g in &gcols {
                                prod *= g[ip * m + i];
                            }
                            sum += prod;
                        }
                        out[(i, e)] = sum / m as f64;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Margin survival columns for the distinct coordinate values of each
    /// margin among `points`, keyed by the f64 bit pattern.
    fn margin_column_cache(&self, points: &[Vec<f64>]) -> Vec<HashMap<u64, Vec<f64>>> {
        let d = self.d();
        let mut cache: Vec<HashMap<u64, Vec<f64>>> = vec![HashMap::new(); d];
        for u in points {
            for j in 0..d {
                cache[j]
                    .entry(u[j].to_bits())
                    .or_insert_with(|| self.margin_survival_column(u[j]));
            }
        }
        cache
    }

    /// Flat `m x m` matrix `G[ip, i] = P(Binomial(m, wcol[R_ij - 1]) > R_ipj - 1)`
    /// coupling the outer beta-copula mixture with margin `j`'s survivals.
    fn pair_matrix(&self, j: usize, wcol: &[f64]) -> Vec<f64> {
        let m = self.m();
        let mut g = vec![0.0; m * m];
        for i in 0..m {
            let v = wcol[self.ranks.get(i, j) as usize - 1];
            let bcol = binomial_survival_column(m, v);
            for ip in 0..m {
                g[ip * m + i] = bcol[self.ranks.get(ip, j) as usize - 1];
            }
        }
        g
    }
}

/// Shape parameters of the beta mixing law behind the beta-binomial margin
/// at position `u`: `alpha = u (m - rho) / (rho - 1)`, `beta` symmetric.
pub fn beta_binomial_shapes(m: usize, u: f64, rho: f64) -> (f64, f64) {
    let scale = (m as f64 - rho) / (rho - 1.0);
    (u * scale, (1.0 - u) * scale)
}

/// Closed form of the empirical beta copula of a window:
/// the mixture `(1/m) sum_i prod_j F_{m, R_ij}(u_j)` where `F_{m,r}` is
/// the `Beta(r, m+1-r)` distribution function.
///
/// Equals the binomial-family [`SmoothEmpiricalCopula::eval`] exactly in
/// real arithmetic; computed here through the regularized incomplete beta
/// function as an independent route.
///
/// # Errors
///
/// [`Error::Range`] for `u` outside `[0,1]^d`.
pub fn empirical_beta_copula(ranks: &RankMatrix, u: &[f64]) -> Result<f64> {
    check_unit_point(u, ranks.d())?;
    let m = ranks.m();
    let d = ranks.d();
    let mut sum = 0.0;
    for i in 0..m {
        let row = ranks.row(i);
        let mut prod = 1.0;
        for j in 0..d {
            let r = row[j] as f64;
            let x = u[j];
            prod *= if x == 0.0 {
                0.0
            } else if x == 1.0 {
                1.0
            } else {
                beta_reg(r, m as f64 + 1.0 - r, x)
            };
            if prod == 0.0 {
                break;
            }
        }
        sum += prod;
    }
    Ok(sum / m as f64)
}
