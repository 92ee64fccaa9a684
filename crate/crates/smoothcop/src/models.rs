//! Parametric copulas used as data generators and experiment ground truth.
//!
//! Four families: independence, Clayton, Gumbel-Hougaard and Frank. Each
//! provides exact sampling, the distribution function, the exact first
//! partial derivatives, and a map from Kendall's tau to the parameter.
//! The Frank family additionally exposes its log-density for maximum
//! pseudo-likelihood fitting.
//!
//! Sampling uses the Marshall-Olkin frailty construction for the three
//! Archimedean families (gamma, positive-stable and logarithmic-series
//! frailties), which is exact and costs `O(m d)` per sample. Bivariate
//! Frank with negative parameter falls back to conditional inversion,
//! which is closed-form in that case.

use crate::data::Sample;
use crate::error::{Error, Result};
use rand::distributions::Open01;
use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma};

/// Copula family tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CopulaFamily {
    /// Product copula; no parameter.
    Independence,
    /// Clayton, lower-tail dependent; `theta > 0`.
    Clayton,
    /// Gumbel-Hougaard, upper-tail dependent; `theta >= 1`.
    GumbelHougaard,
    /// Frank, radially symmetric; `theta != 0`, and `theta > 0` for `d >= 3`.
    Frank,
}

impl CopulaFamily {
    /// Canonical lowercase name, as accepted by [`std::str::FromStr`].
    pub fn name(&self) -> &'static str {
        match self {
            Self::Independence => "independence",
            Self::Clayton => "clayton",
            Self::GumbelHougaard => "gumbel",
            Self::Frank => "frank",
        }
    }
}

impl std::str::FromStr for CopulaFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "independence" | "indep" => Ok(Self::Independence),
            "clayton" => Ok(Self::Clayton),
            "gumbel" | "gumbel-hougaard" | "gumbelhougaard" => Ok(Self::GumbelHougaard),
            "frank" => Ok(Self::Frank),
            other => Err(Error::Config(format!("unknown copula family '{other}'"))),
        }
    }
}

/// A fully specified data-generating copula.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CopulaModel {
    family: CopulaFamily,
    theta: f64,
    d: usize,
}

impl CopulaModel {
    /// Validates the parameter against the family's domain.
    ///
    /// # Errors
    ///
    /// [`Error::Domain`] when `d < 2`, or the parameter violates the
    /// family constraint (Clayton `theta > 0`, Gumbel-Hougaard
    /// `theta >= 1`, Frank `theta != 0` and positive when `d >= 3`).
    pub fn new(family: CopulaFamily, theta: f64, d: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::Domain(format!("copula dimension must be >= 2, got {d}")));
        }
        if !theta.is_finite() {
            return Err(Error::Domain(format!("non-finite parameter {theta}")));
        }
        let ok = match family {
            CopulaFamily::Independence => true,
            CopulaFamily::Clayton => theta > 0.0,
            CopulaFamily::GumbelHougaard => theta >= 1.0,
            CopulaFamily::Frank => theta != 0.0 && (d == 2 || theta > 0.0),
        };
        if !ok {
            return Err(Error::Domain(format!(
                "parameter {theta} outside the domain of the {} family in dimension {d}",
                family.name()
            )));
        }
        let theta = if family == CopulaFamily::Independence {
            0.0
        } else {
            theta
        };
        Ok(Self { family, theta, d })
    }

    /// Builds the model whose population Kendall's tau equals `tau`.
    pub fn from_tau(family: CopulaFamily, tau: f64, d: usize) -> Result<Self> {
        Self::new(family, tau_to_theta(family, tau)?, d)
    }

    /// Family tag.
    pub fn family(&self) -> CopulaFamily {
        self.family
    }

    /// Parameter value (0 for independence).
    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Dimension.
    pub fn d(&self) -> usize {
        self.d
    }

    /// The copula at `u` in `[0,1]^d`.
    ///
    /// # Errors
    ///
    /// [`Error::Range`] if `u` has the wrong length or leaves the cube.
    pub fn cdf(&self, u: &[f64]) -> Result<f64> {
        crate::data::check_unit_point(u, self.d)?;
        if u.iter().any(|&x| x == 0.0) {
            return Ok(0.0);
        }
        let theta = self.theta;
        Ok(match self.family {
            CopulaFamily::Independence => u.iter().product(),
            CopulaFamily::Clayton => {
                let s: f64 = u.iter().map(|&x| x.powf(-theta)).sum::<f64>() - (self.d as f64 - 1.0);
                s.powf(-1.0 / theta)
            }
            CopulaFamily::GumbelHougaard => {
                let s: f64 = u.iter().map(|&x| (-x.ln()).powf(theta)).sum();
                (-s.powf(1.0 / theta)).exp()
            }
            CopulaFamily::Frank => {
                let denom = f64::exp_m1(-theta).powi(self.d as i32 - 1);
                let prod: f64 = u.iter().map(|&x| f64::exp_m1(-theta * x)).product();
                -f64::ln_1p(prod / denom) / theta
            }
        })
    }

    /// Exact first partial derivative of the copula in coordinate `j`
    /// (zero-based), a value in `[0, 1]`.
    ///
    /// Defined as 0 when `u_j` is 0 or 1; this boundary convention matches
    /// how estimated partial derivatives enter the multiplier replicates.
    ///
    /// # Errors
    ///
    /// [`Error::Range`] for `j >= d` or `u` outside the cube.
    pub fn partial_derivative(&self, j: usize, u: &[f64]) -> Result<f64> {
        crate::data::check_unit_point(u, self.d)?;
        if j >= self.d {
            return Err(Error::Range(format!("coordinate {j} out of 0..{}", self.d)));
        }
        if u[j] == 0.0 || u[j] == 1.0 {
            return Ok(0.0);
        }
        if u.iter().any(|&x| x == 0.0) {
            return Ok(0.0);
        }
        let theta = self.theta;
        let value = match self.family {
            CopulaFamily::Independence => u
                .iter()
                .enumerate()
                .filter(|&(t, _)| t != j)
                .map(|(_, &x)| x)
                .product(),
            CopulaFamily::Clayton => {
                let s: f64 = u.iter().map(|&x| x.powf(-theta)).sum::<f64>() - (self.d as f64 - 1.0);
                u[j].powf(-theta - 1.0) * s.powf(-1.0 / theta - 1.0)
            }
            CopulaFamily::GumbelHougaard => {
                let s: f64 = u.iter().map(|&x| (-x.ln()).powf(theta)).sum();
                if s == 0.0 {
                    // All coordinates are 1: margin slope.
                    return Ok(1.0);
                }
                let c = (-s.powf(1.0 / theta)).exp();
                c * s.powf(1.0 / theta - 1.0) * (-u[j].ln()).powf(theta - 1.0) / u[j]
            }
            CopulaFamily::Frank => {
                let denom = f64::exp_m1(-theta).powi(self.d as i32 - 1);
                let others: f64 = u
                    .iter()
                    .enumerate()
                    .filter(|&(t, _)| t != j)
                    .map(|(_, &x)| f64::exp_m1(-theta * x))
                    .product();
                let prod = others * f64::exp_m1(-theta * u[j]);
                (-theta * u[j]).exp() * others / (denom + prod)
            }
        };
        Ok(value.clamp(0.0, 1.0))
    }

    /// Draws `m` i.i.d. observations from the copula.
    ///
    /// The returned [`Sample`] lives in `(0,1)^d`. Draws that round onto
    /// the cube boundary are redrawn; in the measure-zero event that two
    /// rows collide after rounding, the whole batch is redrawn.
    pub fn sample<R: Rng>(&self, m: usize, rng: &mut R) -> Result<Sample> {
        if m == 0 {
            return Err(Error::Range("cannot draw an empty sample".into()));
        }
        for _ in 0..64 {
            let mut rows = Vec::with_capacity(m);
            for _ in 0..m {
                rows.push(self.draw_row(rng)?);
            }
            match Sample::new(rows) {
                Ok(sample) => return Ok(sample),
                Err(Error::Tie { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
        Err(Error::Domain(
            "sampling repeatedly produced tied rows; parameter is numerically degenerate".into(),
        ))
    }

    fn draw_row<R: Rng>(&self, rng: &mut R) -> Result<Vec<f64>> {
        for _ in 0..1000 {
            let row = self.draw_row_unchecked(rng)?;
            if row.iter().all(|&x| x > 0.0 && x < 1.0) {
                return Ok(row);
            }
        }
        Err(Error::Domain(
            "copula draws kept rounding onto the cube boundary".into(),
        ))
    }

    fn draw_row_unchecked<R: Rng>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let d = self.d;
        let theta = self.theta;
        let row = match self.family {
            CopulaFamily::Independence => (0..d).map(|_| rng.sample(Open01)).collect(),
            CopulaFamily::Clayton => {
                let gamma = Gamma::new(1.0 / theta, 1.0)
                    .map_err(|e| Error::Domain(format!("gamma frailty: {e}")))?;
                let mut v: f64 = gamma.sample(rng);
                while v <= 0.0 {
                    v = gamma.sample(rng);
                }
                (0..d)
                    .map(|_| {
                        let e: f64 = Exp1.sample(rng);
                        (1.0 + e / v).powf(-1.0 / theta)
                    })
                    .collect()
            }
            CopulaFamily::GumbelHougaard => {
                if theta == 1.0 {
                    (0..d).map(|_| rng.sample(Open01)).collect()
                } else {
                    let alpha = 1.0 / theta;
                    let v = positive_stable(alpha, rng);
                    (0..d)
                        .map(|_| {
                            let e: f64 = Exp1.sample(rng);
                            (-(e / v).powf(alpha)).exp()
                        })
                        .collect()
                }
            }
            CopulaFamily::Frank => {
                if theta > 0.0 {
                    let p = -f64::exp_m1(-theta);
                    let v = log_series(p, rng);
                    (0..d)
                        .map(|_| {
                            let e: f64 = Exp1.sample(rng);
                            -f64::ln_1p(-p * (-e / v).exp()) / theta
                        })
                        .collect()
                } else {
                    // Bivariate, theta < 0: conditional inversion is closed-form.
                    let u1: f64 = rng.sample(Open01);
                    let w: f64 = rng.sample(Open01);
                    let a = (-theta * u1).exp();
                    let d1 = f64::exp_m1(-theta);
                    let b = w * d1 / (a - w * (a - 1.0));
                    let u2 = -f64::ln_1p(b) / theta;
                    vec![u1, u2]
                }
            }
        };
        Ok(row)
    }
}

/// Samples a positive alpha-stable variate with Laplace transform
/// `exp(-t^alpha)`, `alpha` in `(0,1)`, by the Kanter construction:
/// `V = (A(T)/W)^((1-alpha)/alpha)` with `T` uniform on `(0, pi)`,
/// `W` standard exponential and `A` the Zolotarev function.
fn positive_stable<R: Rng>(alpha: f64, rng: &mut R) -> f64 {
    debug_assert!(alpha > 0.0 && alpha < 1.0);
    let t: f64 = std::f64::consts::PI * rng.sample::<f64, _>(Open01);
    let mut w: f64 = Exp1.sample(rng);
    while w <= 0.0 {
        w = Exp1.sample(rng);
    }
    let ln_a = (alpha * (alpha * t).sin().ln() + (1.0 - alpha) * ((1.0 - alpha) * t).sin().ln()
        - t.sin().ln())
        / (1.0 - alpha);
    ((1.0 - alpha) / alpha * (ln_a - w.ln())).exp()
}

/// Samples from the logarithmic series distribution with parameter
/// `p` in `(0,1)`: `P(X = k) = p^k / (-k ln(1-p))`. Kemp's second
/// accelerated algorithm.
fn log_series<R: Rng>(p: f64, rng: &mut R) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    let u: f64 = rng.sample(Open01);
    if u > p {
        return 1.0;
    }
    let v: f64 = rng.sample(Open01);
    // q = 1 - (1-p)^v, computed via the log of 1-p for accuracy near p = 1.
    let h = f64::ln_1p(-p);
    let q = -f64::exp_m1(v * h);
    if u < q * q {
        let k = (1.0 + u.ln() / q.ln()).floor();
        if k >= 1.0 {
            k
        } else {
            1.0
        }
    } else if u > q {
        1.0
    } else {
        2.0
    }
}

/// Maps Kendall's tau to the family parameter.
///
/// Clayton `theta = 2 tau / (1 - tau)`; Gumbel-Hougaard
/// `theta = 1 / (1 - tau)`; Frank inverts
/// `tau(theta) = 1 - 4/theta + 4 D1(theta)/theta` by bisection to
/// `|tau(theta) - tau| <= 1e-10`. Independence only accepts `tau = 0`.
///
/// # Errors
///
/// [`Error::Range`] when `tau` is outside the family's attainable range
/// (Clayton needs `tau` in `(0,1)`, Gumbel-Hougaard `[0,1)`, Frank
/// nonzero in `(-1,1)`).
pub fn tau_to_theta(family: CopulaFamily, tau: f64) -> Result<f64> {
    if !tau.is_finite() || tau.abs() >= 1.0 {
        return Err(Error::Range(format!("tau must lie in (-1, 1), got {tau}")));
    }
    match family {
        CopulaFamily::Independence => {
            if tau == 0.0 {
                Ok(0.0)
            } else {
                Err(Error::Range(format!(
                    "independence copula has tau 0, requested {tau}"
                )))
            }
        }
        CopulaFamily::Clayton => {
            if tau > 0.0 {
                Ok(2.0 * tau / (1.0 - tau))
            } else {
                Err(Error::Range(format!(
                    "clayton requires tau in (0, 1), got {tau}"
                )))
            }
        }
        CopulaFamily::GumbelHougaard => {
            if tau >= 0.0 {
                Ok(1.0 / (1.0 - tau))
            } else {
                Err(Error::Range(format!(
                    "gumbel-hougaard requires tau in [0, 1), got {tau}"
                )))
            }
        }
        CopulaFamily::Frank => {
            if tau == 0.0 {
                return Err(Error::Range(
                    "frank requires nonzero tau; use the independence family".into(),
                ));
            }
            let target = tau.abs();
            let mut lo = 1e-12;
            let mut hi = 1.0;
            while frank_tau(hi) < target {
                hi *= 2.0;
                if hi > 1e8 {
                    return Err(Error::Tolerance(format!(
                        "frank parameter search diverged for tau = {tau}"
                    )));
                }
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let t = frank_tau(mid);
                if (t - target).abs() <= 1e-10 {
                    return Ok(tau.signum() * mid);
                }
                if t < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Err(Error::Tolerance(format!(
                "frank parameter bisection did not reach 1e-10 for tau = {tau}"
            )))
        }
    }
}

/// Population Kendall's tau of the Frank copula:
/// `tau(theta) = 1 - 4/theta + 4 D1(theta)/theta`, odd in `theta`.
pub fn frank_tau(theta: f64) -> f64 {
    if theta == 0.0 {
        return 0.0;
    }
    let x = theta.abs();
    let tau = 1.0 - 4.0 / x + 4.0 * debye_one(x) / x;
    theta.signum() * tau
}

/// First Debye function `D1(x) = (1/x) * integral of t/(e^t - 1) on [0, x]`
/// for `x > 0`, by adaptive Simpson quadrature to 1e-12.
fn debye_one(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let f = |t: f64| {
        if t < 1e-8 {
            // t/(e^t - 1) -> 1 - t/2 as t -> 0.
            1.0 - 0.5 * t
        } else {
            t * (-t).exp() / (-f64::exp_m1(-t))
        }
    };
    adaptive_simpson(&f, 0.0, x, 1e-12) / x
}

/// Adaptive Simpson quadrature with Richardson acceptance test.
fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, fa, m, fm, left, lm, flm, 0.5 * tol, depth - 1)
                + recurse(f, m, fm, b, fb, right, rm, frm, 0.5 * tol, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, whole, m, fm, tol, 48)
}

/// Log-density of the bivariate Frank copula at `(u, v)` in `(0,1)^2`,
/// numerically stable for `|theta|` up to about 40.
///
/// # Errors
///
/// [`Error::Domain`] for `theta = 0`; [`Error::Range`] when `(u, v)` is
/// not strictly inside the unit square.
pub fn frank_log_density(theta: f64, u: f64, v: f64) -> Result<f64> {
    if theta == 0.0 || !theta.is_finite() {
        return Err(Error::Domain(format!("frank density needs theta != 0, got {theta}")));
    }
    if !(0.0 < u && u < 1.0 && 0.0 < v && v < 1.0) {
        return Err(Error::Range(format!(
            "frank density needs (u, v) strictly inside (0,1)^2, got ({u}, {v})"
        )));
    }
    // c(u,v) = theta (1 - e^{-theta}) e^{-theta(u+v)} / B^2 with
    // B = (1 - e^{-theta}) - (1 - e^{-theta u})(1 - e^{-theta v}).
    // Expanding B avoids the 1 - 1 cancellation that overwhelms the
    // factored form for large |theta|:
    let one_minus = -f64::exp_m1(-theta);
    let bracket = (-theta * u).exp() + (-theta * v).exp()
        - (-theta).exp()
        - (-theta * (u + v)).exp();
    Ok((theta * one_minus).ln() - theta * (u + v) - 2.0 * bracket.abs().ln())
}
