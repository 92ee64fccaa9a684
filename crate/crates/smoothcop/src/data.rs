//! Samples, window ranks, pseudo-observations, Kendall's tau and the
//! classical empirical copula.
//!
//! All estimators in this crate are rank-based: a sub-stretch `k:l` of the
//! sample is reduced to its per-column ranks `R_ij`, and every quantity
//! downstream is a function of `R_ij / m` with `m = l - k + 1`. Ranks are
//! only well defined without ties, so [`Sample`] rejects tied columns at
//! construction instead of breaking ties arbitrarily.

use crate::error::{Error, Result};
use std::path::Path;

/// An `n x d` data matrix with finite entries and tie-free columns.
#[derive(Debug, Clone)]
pub struct Sample {
    values: Vec<f64>,
    n: usize,
    d: usize,
}

impl Sample {
    /// Validates and wraps a row-major `n x d` matrix.
    ///
    /// # Errors
    ///
    /// [`Error::Data`] if the matrix is empty, has fewer than two columns,
    /// is ragged, or contains non-finite entries; [`Error::Tie`] if any
    /// column contains a duplicated value.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Data("sample must contain at least one row".into()));
        }
        let d = rows[0].len();
        if d < 2 {
            return Err(Error::Data(format!(
                "sample must have at least two columns, got {d}"
            )));
        }
        let mut values = Vec::with_capacity(n * d);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::Data(format!(
                    "row {i} has {} fields, expected {d}",
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::Data(format!(
                        "non-finite value {v} at row {i}, column {j}"
                    )));
                }
            }
            values.extend_from_slice(row);
        }
        let sample = Self { values, n, d };
        sample.check_ties()?;
        Ok(sample)
    }

    /// Reads a sample from a CSV file.
    ///
    /// A header row is optional: the first record is treated as data when
    /// every field parses as a decimal number, and as a header otherwise.
    /// Decimal points are locale-independent (`.`); NaN and infinities are
    /// rejected.
    pub fn from_csv<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_path(path.as_ref())
            .map_err(|e| match e.kind() {
                csv::ErrorKind::Io(_) => {
                    Error::Data(format!("cannot open {}: {e}", path.as_ref().display()))
                }
                _ => Error::Data(format!("csv error: {e}")),
            })?;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (idx, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::Data(format!("csv parse error: {e}")))?;
            let parsed: std::result::Result<Vec<f64>, _> = record
                .iter()
                .map(|field| field.trim().parse::<f64>())
                .collect();
            match parsed {
                Ok(row) => {
                    for (j, &v) in row.iter().enumerate() {
                        if !v.is_finite() {
                            return Err(Error::Data(format!(
                                "non-finite value in record {idx}, field {j}"
                            )));
                        }
                    }
                    rows.push(row);
                }
                Err(e) if idx == 0 => {
                    // Non-numeric first record: header row, skip it.
                    let _ = e;
                }
                Err(e) => {
                    return Err(Error::Data(format!(
                        "record {idx} is not numeric: {e}"
                    )));
                }
            }
        }
        Self::new(rows)
    }

    /// Number of observations.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of coordinates per observation.
    pub fn d(&self) -> usize {
        self.d
    }

    /// Entry at zero-based row `i`, column `j`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.d + j]
    }

    /// Zero-based row `i` as a slice of length `d`.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    /// Column `j` copied into a fresh vector.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, j)).collect()
    }

    fn check_ties(&self) -> Result<()> {
        let mut idx: Vec<usize> = (0..self.n).collect();
        for j in 0..self.d {
            idx.sort_unstable_by(|&a, &b| {
                self.get(a, j).partial_cmp(&self.get(b, j)).expect("finite")
            });
            for w in idx.windows(2) {
                if self.get(w[0], j) == self.get(w[1], j) {
                    return Err(Error::Tie {
                        column: j,
                        value: self.get(w[0], j),
                        row_a: w[0].min(w[1]),
                        row_b: w[0].max(w[1]),
                    });
                }
            }
        }
        Ok(())
    }
}

/// A one-based inclusive index window `k:l` into a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    /// First index (one-based).
    pub k: usize,
    /// Last index (one-based, inclusive).
    pub l: usize,
}

impl Window {
    /// The full window `1:n`.
    pub fn full(n: usize) -> Self {
        Self { k: 1, l: n }
    }

    /// Number of observations covered.
    pub fn len(&self) -> usize {
        self.l + 1 - self.k
    }

    /// Whether the window covers no observations (never true for a valid window).
    pub fn is_empty(&self) -> bool {
        self.l < self.k
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.k < 1 || self.k > self.l || self.l > n {
            return Err(Error::Window {
                k: self.k,
                l: self.l,
                n,
            });
        }
        Ok(())
    }
}

/// A window given by fractions `(s, t)` of the sample size.
///
/// For a sample of size `n` it covers the observations
/// `floor(n*s)+1 ..= floor(n*t)` and is empty when both floors agree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequentialWindow {
    /// Lower fraction in `[0, 1]`.
    pub s: f64,
    /// Upper fraction in `[s, 1]`.
    pub t: f64,
}

impl SequentialWindow {
    /// Validates `0 <= s <= t <= 1`.
    pub fn new(s: f64, t: f64) -> Result<Self> {
        if !(s.is_finite() && t.is_finite() && (0.0..=1.0).contains(&s) && s <= t && t <= 1.0) {
            return Err(Error::Range(format!(
                "sequential window needs 0 <= s <= t <= 1, got ({s}, {t})"
            )));
        }
        Ok(Self { s, t })
    }

    /// Boundary indices `(floor(n*s), floor(n*t))`.
    ///
    /// Products within 1e-9 of an integer are snapped to it, so that
    /// fractions like `k/n` recover `k` despite rounding in `n * (k/n)`.
    pub fn bounds(&self, n: usize) -> (usize, usize) {
        (floor_snap(n as f64 * self.s), floor_snap(n as f64 * self.t))
    }

    /// The covered index window, or `None` when no observation falls inside.
    pub fn window(&self, n: usize) -> Option<Window> {
        let (a, b) = self.bounds(n);
        (a < b).then_some(Window { k: a + 1, l: b })
    }

    /// Fraction of the sample covered, `(floor(n*t) - floor(n*s)) / n`.
    pub fn lambda(&self, n: usize) -> f64 {
        let (a, b) = self.bounds(n);
        (b - a) as f64 / n as f64
    }
}

fn floor_snap(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.floor() as usize
    }
}

/// Per-column ranks of a sample window; the basis of every estimator here.
#[derive(Debug, Clone)]
pub struct RankMatrix {
    ranks: Vec<u32>,
    m: usize,
    d: usize,
    window: Window,
}

impl RankMatrix {
    /// Ranks each column of the sub-stretch `window.k ..= window.l`.
    ///
    /// Entry `(i, j)` is the number of observations `t` in the window with
    /// `X_tj <= X_ij`; each column is a permutation of `1..=m`. Uses
    /// `O(m log m)` sorting per column.
    ///
    /// # Errors
    ///
    /// [`Error::Window`] unless `1 <= k <= l <= n`. Ties are impossible
    /// because [`Sample`] construction rejects them.
    pub fn from_window(sample: &Sample, window: Window) -> Result<Self> {
        window.validate(sample.n())?;
        let m = window.len();
        let d = sample.d();
        let offset = window.k - 1;
        let mut ranks = vec![0u32; m * d];
        let mut idx: Vec<usize> = Vec::with_capacity(m);
        for j in 0..d {
            idx.clear();
            idx.extend(0..m);
            idx.sort_unstable_by(|&a, &b| {
                sample
                    .get(offset + a, j)
                    .partial_cmp(&sample.get(offset + b, j))
                    .expect("finite")
            });
            for (pos, &i) in idx.iter().enumerate() {
                ranks[i * d + j] = (pos + 1) as u32;
            }
        }
        Ok(Self {
            ranks,
            m,
            d,
            window,
        })
    }

    /// Builds a rank matrix directly from per-row rank vectors (each column
    /// must be a permutation of `1..=m`). Intended for tests and examples.
    pub fn from_ranks(rows: Vec<Vec<u32>>) -> Result<Self> {
        let m = rows.len();
        if m == 0 {
            return Err(Error::Data("rank matrix must be non-empty".into()));
        }
        let d = rows[0].len();
        let mut ranks = vec![0u32; m * d];
        let mut seen = vec![false; m];
        for j in 0..d {
            seen.fill(false);
            for (i, row) in rows.iter().enumerate() {
                if row.len() != d {
                    return Err(Error::Data(format!("row {i} has wrong length")));
                }
                let r = row[j];
                if r < 1 || r as usize > m || seen[r as usize - 1] {
                    return Err(Error::Data(format!(
                        "column {j} is not a permutation of 1..={m}"
                    )));
                }
                seen[r as usize - 1] = true;
                ranks[i * d + j] = r;
            }
        }
        Ok(Self {
            ranks,
            m,
            d,
            window: Window { k: 1, l: m },
        })
    }

    /// Window length `m = l - k + 1`.
    pub fn m(&self) -> usize {
        self.m
    }

    /// Dimension.
    pub fn d(&self) -> usize {
        self.d
    }

    /// The originating window.
    pub fn window(&self) -> Window {
        self.window
    }

    /// Rank entry at zero-based row `i`, column `j` (value in `1..=m`).
    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.ranks[i * self.d + j]
    }

    /// Zero-based row `i` of ranks.
    pub fn row(&self, i: usize) -> &[u32] {
        &self.ranks[i * self.d..(i + 1) * self.d]
    }

    /// Pseudo-observations `R_ij / m`, entries in `(0, 1]`.
    pub fn pseudo_observations(&self) -> Vec<Vec<f64>> {
        (0..self.m)
            .map(|i| {
                self.row(i)
                    .iter()
                    .map(|&r| r as f64 / self.m as f64)
                    .collect()
            })
            .collect()
    }

    /// The empirical copula of the window at `u`:
    /// the fraction of rows with `R_ij / m <= u_j` for every coordinate.
    ///
    /// A right-continuous step function of `u` with values in
    /// `{0, 1/m, ..., 1}` and step margins `floor(m * u_j) / m`.
    ///
    /// # Errors
    ///
    /// [`Error::Range`] if `u` has the wrong length or leaves `[0,1]^d`.
    pub fn empirical_copula(&self, u: &[f64]) -> Result<f64> {
        check_unit_point(u, self.d)?;
        let m = self.m as f64;
        let mut count = 0usize;
        for i in 0..self.m {
            let row = self.row(i);
            if row.iter().zip(u).all(|(&r, &uj)| r as f64 <= uj * m) {
                count += 1;
            }
        }
        Ok(count as f64 / m)
    }
}

pub(crate) fn check_unit_point(u: &[f64], d: usize) -> Result<()> {
    if u.len() != d {
        return Err(Error::Range(format!(
            "point has {} coordinates, expected {d}",
            u.len()
        )));
    }
    for &uj in u {
        if !(0.0..=1.0).contains(&uj) {
            return Err(Error::Range(format!(
                "coordinate {uj} outside [0,1]"
            )));
        }
    }
    Ok(())
}

/// The uniform interior grid `{i/(g+1) : i = 1..=g}^d` on `(0,1)^d`,
/// in row-major order (last coordinate fastest).
///
/// Shared by integrated-error and test-functional computations; interior
/// points avoid the degenerate cube boundary.
pub fn unit_grid(d: usize, per_dim: usize) -> Vec<Vec<f64>> {
    assert!(d >= 1 && per_dim >= 1, "grid needs d >= 1 and per_dim >= 1");
    let step: Vec<f64> = (1..=per_dim)
        .map(|i| i as f64 / (per_dim + 1) as f64)
        .collect();
    let total = per_dim.pow(d as u32);
    let mut out = Vec::with_capacity(total);
    for mut idx in 0..total {
        let mut point = vec![0.0; d];
        for j in (0..d).rev() {
            point[j] = step[idx % per_dim];
            idx /= per_dim;
        }
        out.push(point);
    }
    out
}

/// Kendall's tau of the within-window ranks: identical to the tau of the
/// underlying window data, since ranks are a strictly increasing transform.
///
/// # Errors
///
/// [`Error::Range`] for fewer than two observations.
pub fn rank_kendall_tau(ranks: &RankMatrix) -> Result<f64> {
    let d = ranks.d();
    let column = |j: usize| -> Vec<f64> {
        (0..ranks.m()).map(|i| ranks.get(i, j) as f64).collect()
    };
    let mut total = 0.0;
    let mut pairs = 0usize;
    for a in 0..d {
        for b in (a + 1)..d {
            total += kendall_tau_pair(&column(a), &column(b))?;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Kendall's tau of a sample: the tau-a statistic for `d = 2`, and the
/// unweighted average of the `d(d-1)/2` pairwise statistics for `d > 2`.
///
/// # Errors
///
/// [`Error::Range`] for fewer than two observations. Ties cannot occur in a
/// validated [`Sample`].
pub fn kendall_tau(sample: &Sample) -> Result<f64> {
    let d = sample.d();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for a in 0..d {
        for b in (a + 1)..d {
            total += kendall_tau_pair(&sample.column(a), &sample.column(b))?;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Kendall's tau-a of two tie-free vectors:
/// `(concordant - discordant) / (m(m-1)/2)`.
///
/// Counts discordant pairs as merge-sort inversions in `O(m log m)`.
///
/// # Errors
///
/// [`Error::Range`] if the vectors differ in length or have fewer than two
/// entries; [`Error::Tie`] on tied values (column 0 refers to `x`, 1 to `y`).
pub fn kendall_tau_pair(x: &[f64], y: &[f64]) -> Result<f64> {
    let m = x.len();
    if y.len() != m {
        return Err(Error::Range(format!(
            "length mismatch: {} vs {}",
            m,
            y.len()
        )));
    }
    if m < 2 {
        return Err(Error::Range("kendall tau needs at least two points".into()));
    }
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_unstable_by(|&a, &b| x[a].partial_cmp(&x[b]).expect("finite"));
    for w in idx.windows(2) {
        if x[w[0]] == x[w[1]] {
            return Err(Error::Tie {
                column: 0,
                value: x[w[0]],
                row_a: w[0].min(w[1]),
                row_b: w[0].max(w[1]),
            });
        }
    }
    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    {
        let mut sorted = ys.clone();
        sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite"));
        for w in sorted.windows(2) {
            if w[0] == w[1] {
                return Err(Error::Tie {
                    column: 1,
                    value: w[0],
                    row_a: 0,
                    row_b: 0,
                });
            }
        }
    }
    let mut buf = vec![0.0; m];
    let inversions = count_inversions(&mut ys, &mut buf);
    let total_pairs = m * (m - 1) / 2;
    Ok(1.0 - 2.0 * (inversions as f64) / total_pairs as f64)
}

fn count_inversions(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n <= 1 {
        return 0;
    }
    let mid = n / 2;
    let (left, right) = v.split_at_mut(mid);
    let mut inv = count_inversions(left, &mut buf[..mid]) + count_inversions(right, &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, 0, 0);
    while i < left.len() && j < right.len() {
        if left[i] <= right[j] {
            buf[k] = left[i];
            i += 1;
        } else {
            buf[k] = right[j];
            inv += (left.len() - i) as u64;
            j += 1;
        }
        k += 1;
    }
    buf[k..k + left.len() - i].copy_from_slice(&left[i..]);
    buf[k + left.len() - i..n].copy_from_slice(&right[j..]);
    v.copy_from_slice(&buf[..n]);
    inv
}
