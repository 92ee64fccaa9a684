//! Experiment front end for the smoothcop library.
//!
//! Every subcommand is a pure function of its parameters and the master
//! seed: repetitions derive per-index generator streams, so `--workers`
//! (the thread count) never changes a byte of the output. Results go to
//! stdout, or — with `--out` — to a file written atomically (temp file
//! plus rename) together with a `<file>.manifest.json` sibling recording
//! the resolved parameters, seed, library version, and wall time. A JSON
//! object passed with `--config` supplies parameter defaults keyed by
//! long flag name; explicit flags win.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error (ties,
//! non-numeric or non-finite input).

use std::collections::BTreeSet;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use smoothcop::bootstrap::{draw_bootstrap_sample, CiMethod};
use smoothcop::changepoint::{generate_ar1, run_test, Ar1Config, ChangeSpec};
use smoothcop::data::{RankMatrix, Sample, Window};
use smoothcop::derivatives::PdEstimatorSpec;
use smoothcop::experiments::{
    ci_coverage, cov_mse, cpd_rejection_rate, default_cov_points, frank_or_independence,
    pd_imse_rows, quantile_mse, CiCoverageConfig, CiTarget, CovMseConfig, CpdMcConfig,
    QuantileMseConfig,
};
use smoothcop::models::{tau_to_theta, CopulaFamily, CopulaModel};
use smoothcop::multiplier::{Functional, MultiplierConfig, MultiplierKind};
use smoothcop::rng::{derived_seed, stream_rng};
use smoothcop::smoothing::{SmoothEmpiricalCopula, SmoothingFamily};
use smoothcop::Error;

/// Seed-derivation labels keeping the CLI's generator streams disjoint
/// from the per-replicate streams of the routines it calls.
const DATA_LABEL: u64 = 101;
const RESAMPLE_LABEL: u64 = 102;
const TEST_LABEL: u64 = 103;

#[derive(Parser)]
#[command(
    name = "smoothcop",
    version,
    about = "Smooth empirical copulas: bootstrap intervals, multiplier \
             experiments, derivative benchmarks, and changepoint tests"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    global: GlobalArgs,
}

#[derive(Args)]
struct GlobalArgs {
    /// Master seed [default: 42]; identical (command, parameters, seed)
    /// triples give byte-identical output
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads, 0 = one per core [default: 0]; affects wall time
    /// only, never the numbers
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Output file (stdout when absent); written atomically with a
    /// <FILE>.manifest.json sibling describing the run
    #[arg(long, global = true, value_name = "FILE")]
    out: Option<PathBuf>,

    /// JSON object of parameter defaults keyed by long flag name;
    /// explicit flags override it
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write one smooth-bootstrap resample of a model sample as CSV
    Draw(DrawArgs),
    /// Coverage of smooth-bootstrap confidence intervals for Kendall's tau
    CiKendall(CiKendallArgs),
    /// Coverage of smooth-bootstrap confidence intervals for the Frank parameter
    CiFrank(CiFrankArgs),
    /// Accuracy of the multiplier estimate of the process covariance
    MultCov(MultCovArgs),
    /// Accuracy of the multiplier estimate of a functional quantile
    MultQuantile(MultQuantileArgs),
    /// Integrated-MSE benchmark of partial-derivative estimators
    PdImse(PdImseArgs),
    /// Changepoint test on a CSV file or a simulated AR(1) stretch
    Cpd(CpdArgs),
    /// Monte Carlo rejection rates of the changepoint test
    CpdMc(CpdMcArgs),
}

#[derive(Args)]
struct DrawArgs {
    /// Copula family: clayton | gumbel | frank | indep [default: clayton]
    #[arg(long)]
    copula: Option<String>,
    /// Kendall's tau of the model [default: 0.5]
    #[arg(long)]
    tau: Option<f64>,
    /// Copula parameter; overrides --tau
    #[arg(long)]
    theta: Option<f64>,
    /// Dimension [default: 2]
    #[arg(long)]
    d: Option<usize>,
    /// Sample size [default: 20]
    #[arg(long)]
    n: Option<usize>,
    /// Smoothing family: bin | betab<rho> (dirac is not resampled) [default: bin]
    #[arg(long)]
    family: Option<String>,
}

#[derive(Args)]
struct CiKendallArgs {
    /// Copula family: clayton | gumbel | frank | indep [default: clayton]
    #[arg(long)]
    copula: Option<String>,
    /// Kendall's tau of the model, the covered truth [default: 0.5]
    #[arg(long)]
    tau: Option<f64>,
    /// Sample size [default: 80]
    #[arg(long)]
    n: Option<usize>,
    /// Monte Carlo repetitions [default: 500]
    #[arg(long)]
    reps: Option<usize>,
    /// Bootstrap resamples per interval [default: 250]
    #[arg(long = "B")]
    b: Option<usize>,
    /// Nominal confidence level [default: 0.95]
    #[arg(long)]
    level: Option<f64>,
    /// Smoothing family: bin | betab<rho> [default: bin]
    #[arg(long)]
    family: Option<String>,
    /// Interval method: percentile | basic [default: percentile]
    #[arg(long)]
    method: Option<String>,
}

#[derive(Args)]
struct CiFrankArgs {
    /// Kendall's tau of the Frank model [default: 0.75]
    #[arg(long)]
    tau: Option<f64>,
    /// Sample size [default: 80]
    #[arg(long)]
    n: Option<usize>,
    /// Monte Carlo repetitions [default: 500]
    #[arg(long)]
    reps: Option<usize>,
    /// Bootstrap resamples per interval [default: 250]
    #[arg(long = "B")]
    b: Option<usize>,
    /// Nominal confidence level [default: 0.95]
    #[arg(long)]
    level: Option<f64>,
    /// Smoothing family: bin | betab<rho> [default: bin]
    #[arg(long)]
    family: Option<String>,
    /// Interval method: percentile | basic [default: percentile]
    #[arg(long)]
    method: Option<String>,
}

#[derive(Args)]
struct MultCovArgs {
    /// Copula family [default: clayton]
    #[arg(long)]
    copula: Option<String>,
    /// Kendall's tau of the model [default: 0.25]
    #[arg(long)]
    tau: Option<f64>,
    /// Sample size [default: 80]
    #[arg(long)]
    n: Option<usize>,
    /// Monte Carlo repetitions [default: 300]
    #[arg(long)]
    reps: Option<usize>,
    /// Multiplier replicates per repetition [default: 300]
    #[arg(long = "B")]
    b: Option<usize>,
    /// Independent samples behind the reference covariance [default: 100000]
    #[arg(long)]
    truth_draws: Option<usize>,
    /// Smoothing family of the target process [default: bin]
    #[arg(long)]
    target_family: Option<String>,
    /// Smoothing family of the replicates [default: bin]
    #[arg(long)]
    replicate_family: Option<String>,
}

#[derive(Args)]
struct MultQuantileArgs {
    /// Copula family [default: clayton]
    #[arg(long)]
    copula: Option<String>,
    /// Kendall's tau of the model [default: 0.25]
    #[arg(long)]
    tau: Option<f64>,
    /// Dimension [default: 2]
    #[arg(long)]
    d: Option<usize>,
    /// Sample size [default: 80]
    #[arg(long)]
    n: Option<usize>,
    /// Monte Carlo repetitions [default: 300]
    #[arg(long)]
    reps: Option<usize>,
    /// Multiplier replicates per repetition [default: 300]
    #[arg(long = "B")]
    b: Option<usize>,
    /// Independent samples behind the reference quantile [default: 100000]
    #[arg(long)]
    truth_draws: Option<usize>,
    /// Smoothing family of the target process [default: bin]
    #[arg(long)]
    target_family: Option<String>,
    /// Smoothing family of the replicates [default: bin]
    #[arg(long)]
    replicate_family: Option<String>,
    /// Trajectory functional: ks | cvm [default: ks]
    #[arg(long)]
    functional: Option<String>,
    /// Estimated quantile order [default: 0.95]
    #[arg(long)]
    q: Option<f64>,
    /// Interior grid points per coordinate [default: 10 for d=2, 5 for d=3]
    #[arg(long)]
    grid: Option<usize>,
}

#[derive(Args)]
struct PdImseArgs {
    /// Copula family [default: clayton]
    #[arg(long)]
    copula: Option<String>,
    /// Kendall's tau of the model [default: 0.5]
    #[arg(long)]
    tau: Option<f64>,
    /// Sample size [default: 40]
    #[arg(long)]
    n: Option<usize>,
    /// Monte Carlo repetitions [default: 200]
    #[arg(long)]
    reps: Option<usize>,
    /// Interior grid points per coordinate [default: 10]
    #[arg(long)]
    grid: Option<usize>,
    /// Differentiated coordinate, 1-based [default: 1]
    #[arg(long)]
    coord: Option<usize>,
    /// Comma-separated smoothing families [default: dirac,bin,betab4]
    #[arg(long)]
    families: Option<String>,
    /// Comma-separated difference kinds: nabla | delta [default: nabla,delta]
    #[arg(long)]
    diffs: Option<String>,
}

#[derive(Args)]
struct CpdArgs {
    /// CSV file of observations (rows = time, columns = coordinates);
    /// when absent, a stretch is simulated from the AR(1) flags
    #[arg(long, value_name = "FILE")]
    input: Option<PathBuf>,
    /// Simulated stretch length [default: 200]
    #[arg(long)]
    n: Option<usize>,
    /// AR(1) coefficient of the simulated margins [default: 0]
    #[arg(long)]
    beta: Option<f64>,
    /// Kendall's tau of the simulated Frank innovations (0 = independence)
    /// [default: 0.33]
    #[arg(long)]
    tau: Option<f64>,
    /// Change fraction in (0,1); requires --tau2
    #[arg(long)]
    t: Option<f64>,
    /// Post-change innovation tau; requires --t
    #[arg(long)]
    tau2: Option<f64>,
    /// Smoothing family: dirac | bin | betab<rho> [default: bin]
    #[arg(long)]
    family: Option<String>,
    /// Multiplier replicates [default: 250]
    #[arg(long = "B")]
    b: Option<usize>,
    /// Multiplier law: dep | iid [default: dep]
    #[arg(long)]
    multipliers: Option<String>,
    /// Moving-average length of dependent multipliers
    /// [default: max(1, floor(1.25 n^(1/3)))]
    #[arg(long)]
    ell: Option<usize>,
    /// Also write the replicate statistics as CSV to this file
    #[arg(long, value_name = "FILE")]
    replicates_out: Option<PathBuf>,
}

#[derive(Args)]
struct CpdMcArgs {
    /// Stretch length [default: 200]
    #[arg(long)]
    n: Option<usize>,
    /// AR(1) coefficient of the margins [default: 0]
    #[arg(long)]
    beta: Option<f64>,
    /// Kendall's tau of the Frank innovations (0 = independence) [default: 0.33]
    #[arg(long)]
    tau: Option<f64>,
    /// Change fraction in (0,1); requires --tau2
    #[arg(long)]
    t: Option<f64>,
    /// Post-change innovation tau; requires --t
    #[arg(long)]
    tau2: Option<f64>,
    /// Smoothing family: dirac | bin | betab<rho> [default: bin]
    #[arg(long)]
    family: Option<String>,
    /// Multiplier replicates per test [default: 250]
    #[arg(long = "B")]
    b: Option<usize>,
    /// Monte Carlo repetitions [default: 100]
    #[arg(long)]
    reps: Option<usize>,
    /// Significance level [default: 0.05]
    #[arg(long)]
    level: Option<f64>,
    /// Multiplier law: dep | iid [default: dep]
    #[arg(long)]
    multipliers: Option<String>,
    /// Moving-average length of dependent multipliers
    /// [default: max(1, floor(1.25 n^(1/3)))]
    #[arg(long)]
    ell: Option<usize>,
}

/// What a failed run reports and which exit code it maps to.
enum Failure {
    /// Invalid flags, config, or parameter combinations (exit 2).
    Config(String),
    /// Unusable input data: ties, NaN, unparseable records (exit 3).
    Data(String),
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        match err {
            Error::Data(_) | Error::Tie { .. } => Failure::Data(err.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Flag values merged over the optional JSON config file; tracks which
/// keys were consulted so leftovers can be reported as unknown.
struct ParamSource {
    file: Map<String, Value>,
    origin: String,
    used: BTreeSet<String>,
}

impl ParamSource {
    fn load(path: Option<&Path>) -> CliResult<Self> {
        let (file, origin) = match path {
            None => (Map::new(), String::new()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    Failure::Config(format!("cannot read config {}: {e}", p.display()))
                })?;
                let value: Value = serde_json::from_str(&text).map_err(|e| {
                    Failure::Config(format!("config {}: {e}", p.display()))
                })?;
                match value {
                    Value::Object(map) => (map, p.display().to_string()),
                    other => {
                        return Err(Failure::Config(format!(
                            "config {} must be a JSON object, got {other}",
                            p.display()
                        )))
                    }
                }
            }
        };
        Ok(Self {
            file,
            origin,
            used: BTreeSet::new(),
        })
    }

    fn lookup(&mut self, key: &str) -> Option<Value> {
        self.used.insert(key.to_string());
        self.file.get(key).cloned()
    }

    fn type_error(&self, key: &str, want: &str, got: &Value) -> Failure {
        Failure::Config(format!(
            "config {}: field `{key}` must be {want}, got {got}",
            self.origin
        ))
    }

    fn f64(&mut self, flag: Option<f64>, key: &str, default: f64) -> CliResult<f64> {
        match (flag, self.lookup(key)) {
            (Some(v), _) => Ok(v),
            (None, Some(v)) => v.as_f64().ok_or_else(|| self.type_error(key, "a number", &v)),
            (None, None) => Ok(default),
        }
    }

    fn opt_f64(&mut self, flag: Option<f64>, key: &str) -> CliResult<Option<f64>> {
        match (flag, self.lookup(key)) {
            (Some(v), _) => Ok(Some(v)),
            (None, Some(v)) => v
                .as_f64()
                .map(Some)
                .ok_or_else(|| self.type_error(key, "a number", &v)),
            (None, None) => Ok(None),
        }
    }

    fn usize(&mut self, flag: Option<usize>, key: &str, default: usize) -> CliResult<usize> {
        match (flag, self.lookup(key)) {
            (Some(v), _) => Ok(v),
            (None, Some(v)) => v
                .as_u64()
                .map(|x| x as usize)
                .ok_or_else(|| self.type_error(key, "a nonnegative integer", &v)),
            (None, None) => Ok(default),
        }
    }

    fn opt_usize(&mut self, flag: Option<usize>, key: &str) -> CliResult<Option<usize>> {
        match (flag, self.lookup(key)) {
            (Some(v), _) => Ok(Some(v)),
            (None, Some(v)) => v
                .as_u64()
                .map(|x| Some(x as usize))
                .ok_or_else(|| self.type_error(key, "a nonnegative integer", &v)),
            (None, None) => Ok(None),
        }
    }

    fn u64(&mut self, flag: Option<u64>, key: &str, default: u64) -> CliResult<u64> {
        match (flag, self.lookup(key)) {
            (Some(v), _) => Ok(v),
            (None, Some(v)) => v
                .as_u64()
                .ok_or_else(|| self.type_error(key, "a nonnegative integer", &v)),
            (None, None) => Ok(default),
        }
    }

    fn string(&mut self, flag: Option<&str>, key: &str, default: &str) -> CliResult<String> {
        match (flag, self.lookup(key)) {
            (Some(v), _) => Ok(v.to_string()),
            (None, Some(v)) => v
                .as_str()
                .map(str::to_string)
                .ok_or_else(|| self.type_error(key, "a string", &v)),
            (None, None) => Ok(default.to_string()),
        }
    }

    fn opt_string(&mut self, flag: Option<&str>, key: &str) -> CliResult<Option<String>> {
        match (flag, self.lookup(key)) {
            (Some(v), _) => Ok(Some(v.to_string())),
            (None, Some(v)) => v
                .as_str()
                .map(|s| Some(s.to_string()))
                .ok_or_else(|| self.type_error(key, "a string", &v)),
            (None, None) => Ok(None),
        }
    }

    fn finish(&self) -> CliResult<()> {
        let unknown: Vec<&str> = self
            .file
            .keys()
            .filter(|k| !self.used.contains(*k))
            .map(String::as_str)
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Failure::Config(format!(
                "config {}: keys not used by this command: {}",
                self.origin,
                unknown.join(", ")
            )))
        }
    }
}

/// A finished run: the main document plus manifest ingredients.
struct Prepared {
    command: &'static str,
    main: String,
    resolved: Map<String, Value>,
    extra: Option<(PathBuf, String)>,
}

fn parse_copula(name: &str) -> CliResult<CopulaFamily> {
    Ok(name.parse::<CopulaFamily>()?)
}

fn parse_smoothing(name: &str) -> CliResult<SmoothingFamily> {
    Ok(name.parse::<SmoothingFamily>()?)
}

fn parse_method(name: &str) -> CliResult<CiMethod> {
    match name.to_ascii_lowercase().as_str() {
        "percentile" => Ok(CiMethod::Percentile),
        "basic" => Ok(CiMethod::Basic),
        other => Err(Failure::Config(format!(
            "unknown interval method '{other}' (expected percentile or basic)"
        ))),
    }
}

fn parse_functional(name: &str) -> CliResult<Functional> {
    match name.to_ascii_lowercase().as_str() {
        "ks" => Ok(Functional::Ks),
        "cvm" => Ok(Functional::Cvm),
        other => Err(Failure::Config(format!(
            "unknown functional '{other}' (expected ks or cvm)"
        ))),
    }
}

/// Resolves the multiplier law; `ell` applies to the dependent law only.
fn parse_multipliers(kind: &str, ell: Option<usize>, n: usize) -> CliResult<MultiplierConfig> {
    match kind.to_ascii_lowercase().as_str() {
        "iid" => {
            if ell.is_some() {
                return Err(Failure::Config(
                    "--ell applies to dependent multipliers only".into(),
                ));
            }
            Ok(MultiplierConfig::iid())
        }
        "dep" | "dependent" => Ok(match ell {
            Some(ell) => MultiplierConfig {
                kind: MultiplierKind::Dependent { ell },
            },
            None => MultiplierConfig::dependent_default(n),
        }),
        other => Err(Failure::Config(format!(
            "unknown multiplier law '{other}' (expected dep or iid)"
        ))),
    }
}

fn multiplier_columns(cfg: &MultiplierConfig) -> (&'static str, Value) {
    match cfg.kind {
        MultiplierKind::Iid => ("iid", Value::Null),
        MultiplierKind::Dependent { ell } => ("dep", Value::from(ell as u64)),
    }
}

/// A model from a family name plus either an explicit parameter or a tau.
fn build_model(family: &str, theta: Option<f64>, tau: f64, d: usize) -> CliResult<CopulaModel> {
    let family = parse_copula(family)?;
    Ok(match theta {
        Some(theta) => CopulaModel::new(family, theta, d)?,
        None => CopulaModel::from_tau(family, tau, d)?,
    })
}

/// The optional change specification; `t` and `tau2` come together.
fn change_pair(t: Option<f64>, tau2: Option<f64>) -> CliResult<Option<(f64, f64)>> {
    match (t, tau2) {
        (None, None) => Ok(None),
        (Some(t), Some(tau2)) => {
            if !(0.0 < t && t < 1.0) {
                return Err(Failure::Config(format!(
                    "change fraction --t must lie in (0,1), got {t}"
                )));
            }
            Ok(Some((t, tau2)))
        }
        _ => Err(Failure::Config(
            "--t and --tau2 must be given together".into(),
        )),
    }
}

/// Renders records under a header line; every column is named, with
/// units or scaling in the name where applicable.
fn csv_document(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(header)
        .expect("in-memory CSV write cannot fail");
    for row in rows {
        writer
            .write_record(row)
            .expect("in-memory CSV write cannot fail");
    }
    String::from_utf8(writer.into_inner().expect("in-memory CSV flush cannot fail"))
        .expect("CSV output is UTF-8")
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn rec(map: &mut Map<String, Value>, key: &str, value: impl Into<Value>) {
    map.insert(key.to_string(), value.into());
}

fn draw_cmd(a: &DrawArgs, p: &mut ParamSource, seed: u64) -> CliResult<Prepared> {
    let copula = p.string(a.copula.as_deref(), "copula", "clayton")?;
    let theta = p.opt_f64(a.theta, "theta")?;
    let tau = p.f64(a.tau, "tau", 0.5)?;
    let d = p.usize(a.d, "d", 2)?;
    let n = p.usize(a.n, "n", 20)?;
    let family_name = p.string(a.family.as_deref(), "family", "bin")?;
    let family = parse_smoothing(&family_name)?;
    let model = build_model(&copula, theta, tau, d)?;

    let mut data_rng = stream_rng(derived_seed(seed, DATA_LABEL, 0), 0);
    let sample = model.sample(n, &mut data_rng)?;
    let ranks = RankMatrix::from_window(&sample, Window::full(n))?;
    let cop = SmoothEmpiricalCopula::new(ranks, family)?;
    let mut boot_rng = stream_rng(derived_seed(seed, RESAMPLE_LABEL, 0), 0);
    let resample = draw_bootstrap_sample(&cop, &mut boot_rng)?;

    let header: Vec<String> = (1..=d).map(|j| format!("u{j}")).collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = (0..resample.n())
        .map(|i| resample.row(i).iter().copied().map(fmt).collect())
        .collect();

    let mut resolved = Map::new();
    rec(&mut resolved, "copula", copula);
    rec(&mut resolved, "theta", model.theta());
    rec(&mut resolved, "d", d as u64);
    rec(&mut resolved, "n", n as u64);
    rec(&mut resolved, "family", family.label());
    Ok(Prepared {
        command: "draw",
        main: csv_document(&header_refs, &rows),
        resolved,
        extra: None,
    })
}

/// Shared body of the two interval-coverage commands.
#[allow(clippy::too_many_arguments)]
fn coverage_cmd(
    command: &'static str,
    target: CiTarget,
    model: CopulaModel,
    truth: f64,
    family_name: &str,
    method_name: &str,
    n: usize,
    reps: usize,
    b: usize,
    level: f64,
    tau: f64,
    seed: u64,
) -> CliResult<Prepared> {
    let family = parse_smoothing(family_name)?;
    let method = parse_method(method_name)?;
    let cfg = CiCoverageConfig {
        model,
        truth,
        target,
        smoothing: family,
        n,
        reps,
        b,
        level,
        method,
    };
    let result = ci_coverage(&cfg, seed)?;

    let target_name = match target {
        CiTarget::KendallTau => "kendall_tau",
        CiTarget::FrankTheta => "frank_theta",
    };
    let header = [
        "target", "copula", "tau", "theta", "family", "n", "reps", "B", "level", "method",
        "coverage", "avg_length",
    ];
    let row = vec![
        target_name.to_string(),
        model.family().name().to_string(),
        fmt(tau),
        fmt(model.theta()),
        family.label(),
        n.to_string(),
        reps.to_string(),
        b.to_string(),
        fmt(level),
        method_name.to_string(),
        fmt(result.coverage),
        fmt(result.avg_length),
    ];

    let mut resolved = Map::new();
    rec(&mut resolved, "target", target_name);
    rec(&mut resolved, "copula", model.family().name());
    rec(&mut resolved, "tau", tau);
    rec(&mut resolved, "theta", model.theta());
    rec(&mut resolved, "family", family.label());
    rec(&mut resolved, "n", n as u64);
    rec(&mut resolved, "reps", reps as u64);
    rec(&mut resolved, "B", b as u64);
    rec(&mut resolved, "level", level);
    rec(&mut resolved, "method", method_name);
    Ok(Prepared {
        command,
        main: csv_document(&header, &[row]),
        resolved,
        extra: None,
    })
}

fn ci_kendall_cmd(a: &CiKendallArgs, p: &mut ParamSource, seed: u64) -> CliResult<Prepared> {
    let copula = p.string(a.copula.as_deref(), "copula", "clayton")?;
    let tau = p.f64(a.tau, "tau", 0.5)?;
    let n = p.usize(a.n, "n", 80)?;
    let reps = p.usize(a.reps, "reps", 500)?;
    let b = p.usize(a.b, "B", 250)?;
    let level = p.f64(a.level, "level", 0.95)?;
    let family = p.string(a.family.as_deref(), "family", "bin")?;
    let method = p.string(a.method.as_deref(), "method", "percentile")?;
    let model = build_model(&copula, None, tau, 2)?;
    coverage_cmd(
        "ci-kendall",
        CiTarget::KendallTau,
        model,
        tau,
        &family,
        &method,
        n,
        reps,
        b,
        level,
        tau,
        seed,
    )
}

fn ci_frank_cmd(a: &CiFrankArgs, p: &mut ParamSource, seed: u64) -> CliResult<Prepared> {
    let tau = p.f64(a.tau, "tau", 0.75)?;
    let n = p.usize(a.n, "n", 80)?;
    let reps = p.usize(a.reps, "reps", 500)?;
    let b = p.usize(a.b, "B", 250)?;
    let level = p.f64(a.level, "level", 0.95)?;
    let family = p.string(a.family.as_deref(), "family", "bin")?;
    let method = p.string(a.method.as_deref(), "method", "percentile")?;
    let theta = tau_to_theta(CopulaFamily::Frank, tau)?;
    let model = CopulaModel::new(CopulaFamily::Frank, theta, 2)?;
    coverage_cmd(
        "ci-frank",
        CiTarget::FrankTheta,
        model,
        theta,
        &family,
        &method,
        n,
        reps,
        b,
        level,
        tau,
        seed,
    )
}

fn mult_cov_cmd(a: &MultCovArgs, p: &mut ParamSource, seed: u64) -> CliResult<Prepared> {
    let copula = p.string(a.copula.as_deref(), "copula", "clayton")?;
    let tau = p.f64(a.tau, "tau", 0.25)?;
    let n = p.usize(a.n, "n", 80)?;
    let reps = p.usize(a.reps, "reps", 300)?;
    let b = p.usize(a.b, "B", 300)?;
    let truth_draws = p.usize(a.truth_draws, "truth_draws", 100_000)?;
    let target_family = parse_smoothing(&p.string(a.target_family.as_deref(), "target_family", "bin")?)?;
    let replicate_family =
        parse_smoothing(&p.string(a.replicate_family.as_deref(), "replicate_family", "bin")?)?;
    let model = build_model(&copula, None, tau, 2)?;

    let cfg = CovMseConfig {
        model,
        target_family,
        replicate_family,
        n,
        reps,
        b,
        truth_draws,
        points: default_cov_points(),
    };
    let mse = cov_mse(&cfg, seed)?;

    let header = [
        "copula", "tau", "n", "reps", "B", "truth_draws", "target_family", "replicate_family",
        "mse_x1e4",
    ];
    let row = vec![
        model.family().name().to_string(),
        fmt(tau),
        n.to_string(),
        reps.to_string(),
        b.to_string(),
        truth_draws.to_string(),
        target_family.label(),
        replicate_family.label(),
        fmt(mse),
    ];

    let mut resolved = Map::new();
    rec(&mut resolved, "copula", model.family().name());
    rec(&mut resolved, "tau", tau);
    rec(&mut resolved, "n", n as u64);
    rec(&mut resolved, "reps", reps as u64);
    rec(&mut resolved, "B", b as u64);
    rec(&mut resolved, "truth_draws", truth_draws as u64);
    rec(&mut resolved, "target_family", target_family.label());
    rec(&mut resolved, "replicate_family", replicate_family.label());
    Ok(Prepared {
        command: "mult-cov",
        main: csv_document(&header, &[row]),
        resolved,
        extra: None,
    })
}

fn mult_quantile_cmd(a: &MultQuantileArgs, p: &mut ParamSource, seed: u64) -> CliResult<Prepared> {
    let copula = p.string(a.copula.as_deref(), "copula", "clayton")?;
    let tau = p.f64(a.tau, "tau", 0.25)?;
    let d = p.usize(a.d, "d", 2)?;
    let n = p.usize(a.n, "n", 80)?;
    let reps = p.usize(a.reps, "reps", 300)?;
    let b = p.usize(a.b, "B", 300)?;
    let truth_draws = p.usize(a.truth_draws, "truth_draws", 100_000)?;
    let target_family = parse_smoothing(&p.string(a.target_family.as_deref(), "target_family", "bin")?)?;
    let replicate_family =
        parse_smoothing(&p.string(a.replicate_family.as_deref(), "replicate_family", "bin")?)?;
    let functional_name = p.string(a.functional.as_deref(), "functional", "ks")?;
    let functional = parse_functional(&functional_name)?;
    let q = p.f64(a.q, "q", 0.95)?;
    let default_grid = if d == 3 { 5 } else { 10 };
    let grid = p.usize(a.grid, "grid", default_grid)?;
    let model = build_model(&copula, None, tau, d)?;

    let cfg = QuantileMseConfig {
        model,
        target_family,
        replicate_family,
        n,
        reps,
        b,
        truth_draws,
        functional,
        q,
        grid_per_dim: grid,
    };
    let mse = quantile_mse(&cfg, seed)?;

    let header = [
        "copula", "tau", "d", "n", "reps", "B", "truth_draws", "target_family",
        "replicate_family", "functional", "q", "grid", "mse_x1e4",
    ];
    let row = vec![
        model.family().name().to_string(),
        fmt(tau),
        d.to_string(),
        n.to_string(),
        reps.to_string(),
        b.to_string(),
        truth_draws.to_string(),
        target_family.label(),
        replicate_family.label(),
        functional_name.to_ascii_lowercase(),
        fmt(q),
        grid.to_string(),
        fmt(mse),
    ];

    let mut resolved = Map::new();
    rec(&mut resolved, "copula", model.family().name());
    rec(&mut resolved, "tau", tau);
    rec(&mut resolved, "d", d as u64);
    rec(&mut resolved, "n", n as u64);
    rec(&mut resolved, "reps", reps as u64);
    rec(&mut resolved, "B", b as u64);
    rec(&mut resolved, "truth_draws", truth_draws as u64);
    rec(&mut resolved, "target_family", target_family.label());
    rec(&mut resolved, "replicate_family", replicate_family.label());
    rec(&mut resolved, "functional", functional_name.to_ascii_lowercase());
    rec(&mut resolved, "q", q);
    rec(&mut resolved, "grid", grid as u64);
    Ok(Prepared {
        command: "mult-quantile",
        main: csv_document(&header, &[row]),
        resolved,
        extra: None,
    })
}

fn pd_imse_cmd(a: &PdImseArgs, p: &mut ParamSource, seed: u64) -> CliResult<Prepared> {
    let copula = p.string(a.copula.as_deref(), "copula", "clayton")?;
    let tau = p.f64(a.tau, "tau", 0.5)?;
    let n = p.usize(a.n, "n", 40)?;
    let reps = p.usize(a.reps, "reps", 200)?;
    let grid = p.usize(a.grid, "grid", 10)?;
    let coord = p.usize(a.coord, "coord", 1)?;
    let families = p.string(a.families.as_deref(), "families", "dirac,bin,betab4")?;
    let diffs = p.string(a.diffs.as_deref(), "diffs", "nabla,delta")?;
    let model = build_model(&copula, None, tau, 2)?;
    if coord == 0 || coord > model.d() {
        return Err(Failure::Config(format!(
            "--coord must name a coordinate between 1 and {}, got {coord}",
            model.d()
        )));
    }

    let mut specs = Vec::new();
    for diff in diffs.split(',') {
        for family_name in families.split(',') {
            let family = parse_smoothing(family_name.trim())?;
            specs.push(match diff.trim().to_ascii_lowercase().as_str() {
                "nabla" => PdEstimatorSpec::nabla(family),
                "delta" => PdEstimatorSpec::delta_truncated(family),
                other => {
                    return Err(Failure::Config(format!(
                        "unknown difference kind '{other}' (expected nabla or delta)"
                    )))
                }
            });
        }
    }
    let rows_out = pd_imse_rows(&specs, &model, coord - 1, n, reps, grid, seed)?;

    let header = ["estimator", "imse"];
    let rows: Vec<Vec<String>> = rows_out
        .iter()
        .map(|r| vec![r.estimator.clone(), fmt(r.imse)])
        .collect();

    let mut resolved = Map::new();
    rec(&mut resolved, "copula", model.family().name());
    rec(&mut resolved, "tau", tau);
    rec(&mut resolved, "n", n as u64);
    rec(&mut resolved, "reps", reps as u64);
    rec(&mut resolved, "grid", grid as u64);
    rec(&mut resolved, "coord", coord as u64);
    rec(&mut resolved, "families", families);
    rec(&mut resolved, "diffs", diffs);
    Ok(Prepared {
        command: "pd-imse",
        main: csv_document(&header, &rows),
        resolved,
        extra: None,
    })
}

fn cpd_cmd(a: &CpdArgs, p: &mut ParamSource, seed: u64) -> CliResult<Prepared> {
    let input = p.opt_string(a.input.as_deref().and_then(Path::to_str), "input")?;
    let family_name = p.string(a.family.as_deref(), "family", "bin")?;
    let family = parse_smoothing(&family_name)?;
    let b = p.usize(a.b, "B", 250)?;
    let multipliers = p.string(a.multipliers.as_deref(), "multipliers", "dep")?;
    let ell = p.opt_usize(a.ell, "ell")?;

    let mut resolved = Map::new();
    let sample = match &input {
        Some(path) => {
            for key in ["n", "beta", "tau", "t", "tau2"] {
                if p.lookup(key).is_some() || has_dgp_flag(a, key) {
                    return Err(Failure::Config(format!(
                        "--input replaces the simulation flags; drop --{key}"
                    )));
                }
            }
            rec(&mut resolved, "input", path.as_str());
            Sample::from_csv(path)?
        }
        None => {
            let n = p.usize(a.n, "n", 200)?;
            let beta = p.f64(a.beta, "beta", 0.0)?;
            let tau = p.f64(a.tau, "tau", 0.33)?;
            let change = change_pair(p.opt_f64(a.t, "t")?, p.opt_f64(a.tau2, "tau2")?)?;
            rec(&mut resolved, "n", n as u64);
            rec(&mut resolved, "beta", beta);
            rec(&mut resolved, "tau", tau);
            if let Some((t, tau2)) = change {
                rec(&mut resolved, "t", t);
                rec(&mut resolved, "tau2", tau2);
            }
            let cfg = Ar1Config {
                beta,
                innovation_copula: frank_or_independence(tau)?,
                n,
                change: match change {
                    None => None,
                    Some((t, tau2)) => Some(ChangeSpec {
                        k_star: (n as f64 * t).floor() as usize,
                        post_copula: frank_or_independence(tau2)?,
                    }),
                },
            };
            let mut rng = stream_rng(derived_seed(seed, DATA_LABEL, 0), 0);
            generate_ar1(&cfg, &mut rng)?
        }
    };

    let mult_cfg = parse_multipliers(&multipliers, ell, sample.n())?;
    let result = run_test(
        &sample,
        family,
        b,
        &mult_cfg,
        derived_seed(seed, TEST_LABEL, 0),
    )?;

    let main = serde_json::to_string_pretty(&json!({
        "statistic": result.statistic,
        "p_value": result.p_value,
        "argmax_s": result.argmax_s,
    }))
    .expect("JSON encoding of finite numbers cannot fail")
        + "\n";

    let extra = match &a.replicates_out {
        None => None,
        Some(path) => {
            let rows: Vec<Vec<String>> = result
                .replicate_values
                .iter()
                .map(|&v| vec![fmt(v)])
                .collect();
            Some((path.clone(), csv_document(&["s_replicate"], &rows)))
        }
    };

    let (mult_name, ell_value) = multiplier_columns(&mult_cfg);
    rec(&mut resolved, "family", family.label());
    rec(&mut resolved, "B", b as u64);
    rec(&mut resolved, "multipliers", mult_name);
    resolved.insert("ell".to_string(), ell_value);
    Ok(Prepared {
        command: "cpd",
        main,
        resolved,
        extra,
    })
}

/// Whether a simulation flag was given alongside `--input`.
fn has_dgp_flag(a: &CpdArgs, key: &str) -> bool {
    match key {
        "n" => a.n.is_some(),
        "beta" => a.beta.is_some(),
        "tau" => a.tau.is_some(),
        "t" => a.t.is_some(),
        "tau2" => a.tau2.is_some(),
        _ => false,
    }
}

fn cpd_mc_cmd(a: &CpdMcArgs, p: &mut ParamSource, seed: u64) -> CliResult<Prepared> {
    let n = p.usize(a.n, "n", 200)?;
    let beta = p.f64(a.beta, "beta", 0.0)?;
    let tau = p.f64(a.tau, "tau", 0.33)?;
    let change = change_pair(p.opt_f64(a.t, "t")?, p.opt_f64(a.tau2, "tau2")?)?;
    let family_name = p.string(a.family.as_deref(), "family", "bin")?;
    let family = parse_smoothing(&family_name)?;
    let b = p.usize(a.b, "B", 250)?;
    let reps = p.usize(a.reps, "reps", 100)?;
    let level = p.f64(a.level, "level", 0.05)?;
    let multipliers = p.string(a.multipliers.as_deref(), "multipliers", "dep")?;
    let ell = p.opt_usize(a.ell, "ell")?;
    let mult_cfg = parse_multipliers(&multipliers, ell, n)?;

    let cfg = CpdMcConfig {
        n,
        beta,
        tau1: tau,
        change,
        smoothing: family,
        b,
        reps,
        mult: mult_cfg,
        level,
    };
    let rate = cpd_rejection_rate(&cfg, seed)?;

    let (mult_name, ell_value) = multiplier_columns(&mult_cfg);
    let ell_text = match &ell_value {
        Value::Null => String::new(),
        v => v.to_string(),
    };
    let header = [
        "n", "beta", "tau1", "t", "tau2", "family", "B", "reps", "level", "multipliers", "ell",
        "rejection_rate",
    ];
    let row = vec![
        n.to_string(),
        fmt(beta),
        fmt(tau),
        change.map(|(t, _)| fmt(t)).unwrap_or_default(),
        change.map(|(_, tau2)| fmt(tau2)).unwrap_or_default(),
        family.label(),
        b.to_string(),
        reps.to_string(),
        fmt(level),
        mult_name.to_string(),
        ell_text,
        fmt(rate),
    ];

    let mut resolved = Map::new();
    rec(&mut resolved, "n", n as u64);
    rec(&mut resolved, "beta", beta);
    rec(&mut resolved, "tau", tau);
    if let Some((t, tau2)) = change {
        rec(&mut resolved, "t", t);
        rec(&mut resolved, "tau2", tau2);
    }
    rec(&mut resolved, "family", family.label());
    rec(&mut resolved, "B", b as u64);
    rec(&mut resolved, "reps", reps as u64);
    rec(&mut resolved, "level", level);
    rec(&mut resolved, "multipliers", mult_name);
    resolved.insert("ell".to_string(), ell_value);
    Ok(Prepared {
        command: "cpd-mc",
        main: csv_document(&header, &[row]),
        resolved,
        extra: None,
    })
}

/// Writes `bytes` to `path` atomically: a sibling temp file is renamed
/// into place, so readers never observe a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let context = |e: &dyn std::fmt::Display| {
        Failure::Config(format!("cannot write {}: {e}", path.display()))
    };
    let mut tmp = tempfile::Builder::new()
        .prefix(".smoothcop.")
        .tempfile_in(dir)
        .map_err(|e| context(&e))?;
    tmp.write_all(bytes).map_err(|e| context(&e))?;
    tmp.persist(path).map_err(|e| context(&e))?;
    Ok(())
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_os_string();
    name.push(".manifest.json");
    PathBuf::from(name)
}

fn emit(
    out: Option<&Path>,
    prepared: Prepared,
    seed: u64,
    workers: usize,
    started: Instant,
) -> CliResult<()> {
    if let Some((path, content)) = &prepared.extra {
        write_atomic(path, content.as_bytes())?;
    }
    match out {
        None => {
            print!("{}", prepared.main);
            Ok(())
        }
        Some(path) => {
            write_atomic(path, prepared.main.as_bytes())?;
            let manifest = json!({
                "command": prepared.command,
                "parameters": Value::Object(prepared.resolved),
                "seed": seed,
                "workers": workers,
                "version": env!("CARGO_PKG_VERSION"),
                "wall_time_s": started.elapsed().as_secs_f64(),
            });
            let text = serde_json::to_string_pretty(&manifest)
                .expect("JSON encoding of the manifest cannot fail")
                + "\n";
            write_atomic(&manifest_path(path), text.as_bytes())
        }
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    let started = Instant::now();
    let mut params = ParamSource::load(cli.global.config.as_deref())?;
    let seed = params.u64(cli.global.seed, "seed", 42)?;
    let workers = params.usize(cli.global.workers, "workers", 0)?;
    if workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .map_err(|e| Failure::Config(format!("cannot size the worker pool: {e}")))?;
    }
    let prepared = match &cli.command {
        Command::Draw(a) => draw_cmd(a, &mut params, seed)?,
        Command::CiKendall(a) => ci_kendall_cmd(a, &mut params, seed)?,
        Command::CiFrank(a) => ci_frank_cmd(a, &mut params, seed)?,
        Command::MultCov(a) => mult_cov_cmd(a, &mut params, seed)?,
        Command::MultQuantile(a) => mult_quantile_cmd(a, &mut params, seed)?,
        Command::PdImse(a) => pd_imse_cmd(a, &mut params, seed)?,
        Command::Cpd(a) => cpd_cmd(a, &mut params, seed)?,
        Command::CpdMc(a) => cpd_mc_cmd(a, &mut params, seed)?,
    };
    params.finish()?;
    emit(cli.global.out.as_deref(), prepared, seed, workers, started)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
