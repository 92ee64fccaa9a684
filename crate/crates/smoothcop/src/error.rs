//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by construction, evaluation and estimation routines.
#[derive(Debug, Error)]
#[non_exhaustive]
pub enum Error {
    /// Two observations share a value within a column, so ranks are not unique.
    #[error("tied values in column {column}: value {value} occurs at rows {row_a} and {row_b}")]
    Tie {
        /// Zero-based column index containing the tie.
        column: usize,
        /// The duplicated value.
        value: f64,
        /// Zero-based row of the first occurrence.
        row_a: usize,
        /// Zero-based row of the second occurrence.
        row_b: usize,
    },

    /// A window `k:l` does not satisfy `1 <= k <= l <= n`.
    #[error("invalid window {k}:{l} for sample of size {n}")]
    Window {
        /// One-based first index.
        k: usize,
        /// One-based last index.
        l: usize,
        /// Sample size.
        n: usize,
    },

    /// An argument lies outside its admissible range.
    #[error("argument out of range: {0}")]
    Range(String),

    /// A parameter combination puts a distribution outside its domain.
    #[error("domain violation: {0}")]
    Domain(String),

    /// An iterative routine stopped without reaching its tolerance.
    #[error("tolerance not reached: {0}")]
    Tolerance(String),

    /// The requested operation is not defined for this smoothing family.
    #[error("unsupported family: {0}")]
    UnsupportedFamily(String),

    /// An experiment or command configuration is inconsistent.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A bandwidth pair `(h, h')` is degenerate for the requested estimator.
    #[error("invalid bandwidth: {0}")]
    Bandwidth(String),

    /// Numerical optimization failed to produce a finite optimum.
    #[error("optimization failed: {0}")]
    Optim(String),

    /// Input data could not be parsed into a sample.
    #[error("invalid data: {0}")]
    Data(String),

    /// Underlying I/O failure while reading input files.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
