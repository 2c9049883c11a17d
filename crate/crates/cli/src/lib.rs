//! Command-line front end: `fit`, `kernel-table`, `bandwidth` and
//! `simulate`. Each command renders its full stdout payload as a string so
//! the binary stays a thin shell around [`run`].

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use mlr_core::asymptotics::{optimal_bandwidth, oracle_quantities};
use mlr_core::estimator::{default_starts, fit_multistart, Dataset, FitConfig};
use mlr_core::numerics::DenseMatrix;
use mlr_core::simulation::{run_experiment, DgpSpec, ExperimentConfig};
use mlr_core::{Kernel, MlrError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Model(#[from] MlrError),
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Input(String),
}

impl CliError {
    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Model(e) => match e {
                MlrError::InvalidInput(_) => 2,
                MlrError::NotQuadraticallyMinorizable(_) | MlrError::ZeroBias | MlrError::NotNegativeDefinite => 3,
                MlrError::ExperimentFailed { .. } => 5,
                MlrError::AllStartsFailed(_)
                | MlrError::EmptySupport
                | MlrError::SingularSystem { .. }
                | MlrError::NoConvergence { .. } => 4,
            },
            CliError::Io { .. } | CliError::Csv(_) | CliError::Input(_) => 2,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "mlr", version, about = "Modal linear regression with quadratically minorizable kernels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a modal linear regression to a CSV file and print JSON.
    Fit(FitArgs),
    /// Print the kernel constants and AMSE criterion as TSV.
    KernelTable,
    /// Print the oracle-optimal bandwidth for the built-in benchmark as JSON.
    Bandwidth(BandwidthArgs),
    /// Run the Monte Carlo benchmark and print TSV.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// CSV with header `x1,...,xp,y`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub kernel: String,
    #[arg(long)]
    pub bandwidth: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Headerless CSV with one starting point (p values) per line.
    #[arg(long)]
    pub starts: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct BandwidthArgs {
    #[arg(long)]
    pub kernel: String,
    #[arg(long)]
    pub n: usize,
    /// Use the numerically located residual mode instead of 0.9897.
    #[arg(long)]
    pub exact_mode: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_delimiter = ',', default_value = "100,200,400,800,1600,3200,6400")]
    pub ns: Vec<usize>,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, value_delimiter = ',', default_value = "epanechnikov,biweight,gaussian,laplace")]
    pub kernels: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; 0 uses every core. Output does not depend on it.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Measure wall-clock fit time (otherwise the column is NA).
    #[arg(long)]
    pub timing: bool,
    /// Use the numerically located residual mode instead of 0.9897.
    #[arg(long)]
    pub exact_mode: bool,
}

/// Executes a parsed command and returns its stdout payload.
pub fn run(cli: &Cli) -> CliResult<String> {
    match &cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::KernelTable => Ok(cmd_kernel_table()),
        Command::Bandwidth(args) => cmd_bandwidth(args),
        Command::Simulate(args) => cmd_simulate(args),
    }
}

/// Rounds to six significant digits.
pub fn sig6(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.5e}").parse().expect("formatted float parses")
}

fn parse_kernel(name: &str) -> CliResult<Kernel> {
    Ok(name.parse::<Kernel>()?)
}

fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

/// Reads a CSV with header `x1,...,xp,y`.
pub fn read_dataset<R: Read>(reader: R) -> CliResult<Dataset> {
    let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = csv.headers()?.clone();
    let width = header.len();
    let expected: Vec<String> = (1..width).map(|j| format!("x{j}")).chain(["y".to_string()]).collect();
    if width < 2 || header.iter().map(str::trim).ne(expected.iter().map(String::as_str)) {
        return Err(CliError::Input(format!(
            "header must be `x1,...,xp,y`, got `{}`",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (line, record) in csv.records().enumerate() {
        let record = record?;
        let values = parse_row(&record, line + 2)?;
        x.extend_from_slice(&values[..width - 1]);
        y.push(values[width - 1]);
    }
    let n = y.len();
    Ok(Dataset::new(DenseMatrix::new(n, width - 1, x)?, y)?)
}

fn parse_row(record: &csv::StringRecord, line: usize) -> CliResult<Vec<f64>> {
    record
        .iter()
        .map(|field| {
            field
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::Input(format!("line {line}: `{field}` is not a finite number")))
        })
        .collect()
}

/// Reads a headerless CSV of starting points, each of length `p`.
pub fn read_starts<R: Read>(reader: R, p: usize) -> CliResult<Vec<Vec<f64>>> {
    let mut csv = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    let mut starts = Vec::new();
    for (line, record) in csv.records().enumerate() {
        let row = parse_row(&record?, line + 1)?;
        if row.len() != p {
            return Err(CliError::Input(format!("start on line {} has {} values, expected {p}", line + 1, row.len())));
        }
        starts.push(row);
    }
    if starts.is_empty() {
        return Err(CliError::Input("starts file is empty".into()));
    }
    Ok(starts)
}

#[derive(Debug, Serialize)]
struct FitReport {
    theta: Vec<f64>,
    objective: f64,
    iterations: usize,
    termination: &'static str,
    kernel: &'static str,
    bandwidth: f64,
}

pub fn cmd_fit(args: &FitArgs) -> CliResult<String> {
    let kernel = parse_kernel(&args.kernel)?;
    let config = FitConfig::new(kernel, args.bandwidth).with_tol(args.tol);
    config.validate()?;
    let data = read_dataset(open(&args.input)?)?;
    let starts = match &args.starts {
        Some(path) => read_starts(open(path)?, data.p())?,
        None => default_starts(&data, 10, 0.1, &mut ChaCha8Rng::seed_from_u64(args.seed))?,
    };
    let result = fit_multistart(&data, &config.with_starts(starts))?;
    let report = FitReport {
        theta: result.theta.iter().map(|v| sig6(*v)).collect(),
        objective: sig6(result.objective),
        iterations: result.iterations,
        termination: result.termination.as_str(),
        kernel: kernel.name(),
        bandwidth: sig6(args.bandwidth),
    };
    Ok(serde_json::to_string(&report).expect("report serializes") + "\n")
}

pub fn cmd_kernel_table() -> String {
    let base = Kernel::Biweight.amse_criterion();
    let mut out = String::from("kernel\tU\tV\tcriterion\tratio_to_biweight\tqm_status\n");
    for k in Kernel::ALL {
        let (u, v) = k.constants();
        let c = k.amse_criterion();
        out.push_str(&format!("{}\t{u:.4}\t{v:.4}\t{c:.4}\t{:.4}\t{}\n", k.name(), c / base, k.qm_status()));
    }
    out
}

fn dgp(exact_mode: bool) -> DgpSpec {
    let mut dgp = DgpSpec::default();
    if exact_mode {
        dgp.reference_mode = None;
    }
    dgp
}

pub fn cmd_bandwidth(args: &BandwidthArgs) -> CliResult<String> {
    let kernel = parse_kernel(&args.kernel)?;
    if args.n == 0 {
        return Err(CliError::Input("n must be at least 1".into()));
    }
    let oracle = oracle_quantities(&dgp(args.exact_mode))?;
    let h = optimal_bandwidth(kernel, args.n, &oracle)?;
    let matrix = |m: &DenseMatrix| -> Vec<Vec<f64>> {
        m.to_rows().into_iter().map(|r| r.into_iter().map(sig6).collect()).collect()
    };
    let body = json!({
        "kernel": kernel.name(),
        "n": args.n,
        "h_opt": sig6(h),
        "oracle": {
            "A": matrix(&oracle.a),
            "b": oracle.b.iter().map(|v| sig6(*v)).collect::<Vec<_>>(),
            "C": matrix(&oracle.c),
        },
    });
    Ok(body.to_string() + "\n")
}

fn cell(value: Option<f64>) -> String {
    value.map_or_else(|| "NA".to_string(), |v| sig6(v).to_string())
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<String> {
    let kernels = args.kernels.iter().map(|k| parse_kernel(k)).collect::<CliResult<Vec<_>>>()?;
    let mut config = ExperimentConfig::new(args.ns.clone(), args.trials, kernels, args.seed);
    config.jobs = args.jobs;
    config.timing = args.timing;
    config.dgp = dgp(args.exact_mode);
    let rows = run_experiment(&config)?;
    let mut out = String::from("kernel\tn\tmse_x100\tstd_x100\tmean_fit_seconds\n");
    for r in &rows {
        if r.failed > 0 {
            eprintln!("{} n={}: {} of {} trials failed", r.kernel, r.n, r.failed, args.trials);
        }
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            r.kernel,
            r.n,
            sig6(r.mse_x100),
            cell(r.mse_std_x100),
            cell(r.mean_fit_seconds)
        ));
    }
    Ok(out)
}
