//! `segpoint` command-line interface.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use manifest::Manifest;

pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_INTERNAL: u8 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "segpoint",
    version,
    about = "Change-point detection for clustered simulation input data"
)]
struct Cli {
    /// Write the run manifest to this file instead of stderr.
    #[arg(long, global = true, value_name = "FILE")]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Detect change points in a series.
    Detect(DetectArgs),
    /// Calibrate per-level thresholds on simulated null series.
    Calibrate(CalibrateArgs),
    /// Generate a synthetic exponential series with mean shifts.
    Gen(GenArgs),
    /// Dump the simulated null expectation of the likelihood ratio.
    Elrt(ElrtArgs),
    /// Box-Cox transform a series.
    Boxcox(BoxcoxArgs),
    /// Anderson-Darling test of exponentiality.
    Gof(GofArgs),
    /// Run the accuracy and precision experiment grid.
    Bench(BenchArgs),
    /// Simulate the two-carhop drive-in.
    Carhop(CarhopArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Cluster,
    Lrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantArg {
    Agglo,
    Divisive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleArg {
    Floor,
    MovingRange,
    Pooled,
    Zero,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InputArgs {
    /// Series file: one value per line, or CSV with --column. `-` reads stdin.
    #[arg(long, value_name = "FILE", default_value = "-")]
    pub input: PathBuf,
    /// CSV column holding the series.
    #[arg(long, value_name = "NAME")]
    pub column: Option<String>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DetectArgs {
    #[arg(long, value_enum)]
    pub method: MethodArg,
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value = "agglo")]
    pub variant: VariantArg,
    /// Box-Cox exponent: auto, off, or a number.
    #[arg(long, default_value = "auto")]
    pub transform: String,
    /// Variance used in distances for short or flat clusters.
    #[arg(long, value_enum, default_value = "floor")]
    pub rule: RuleArg,
    /// Threshold profile from `calibrate`; calibrated on the fly when absent.
    #[arg(long, value_name = "FILE")]
    pub thresholds: Option<PathBuf>,
    /// Use only the first G threshold levels.
    #[arg(long, value_name = "G")]
    pub max_changes: Option<usize>,
    /// Per-level alphas for on-the-fly calibration.
    #[arg(long, default_value = "0.03,0.02,0.02,0.01,0.01,0.01,0.01")]
    pub alphas: String,
    /// Null series per set for on-the-fly calibration.
    #[arg(long, default_value_t = 100)]
    pub cal_reps: usize,
    #[arg(long, default_value_t = 100)]
    pub cal_sets: usize,
    #[arg(long, default_value_t = 4000)]
    pub elrt_runs: usize,
    #[arg(long, default_value_t = 2)]
    pub min_seg: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also report every segment test (likelihood-ratio method).
    #[arg(long)]
    pub segments: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CalibrateArgs {
    #[arg(long, value_enum)]
    pub method: MethodArg,
    #[arg(long, default_value_t = 200)]
    pub m: usize,
    #[arg(long, default_value_t = 7)]
    pub g: usize,
    #[arg(long, default_value = "0.03,0.02,0.02,0.01,0.01,0.01,0.01")]
    pub alphas: String,
    /// Null series per set (total = reps x sets).
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, default_value_t = 100)]
    pub sets: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Box-Cox exponent applied to the nulls (clustering): off or a number.
    #[arg(long, default_value = "off")]
    pub transform: String,
    #[arg(long, value_enum, default_value = "agglo")]
    pub variant: VariantArg,
    #[arg(long, value_enum, default_value = "floor")]
    pub rule: RuleArg,
    #[arg(long, default_value_t = 4000)]
    pub elrt_runs: usize,
    #[arg(long, default_value_t = 2)]
    pub min_seg: usize,
    /// Profile JSON destination; stdout when absent.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenArgs {
    #[arg(long, default_value_t = 200)]
    pub m: usize,
    #[arg(long, default_value_t = 1)]
    pub changes: usize,
    #[arg(long, default_value_t = 1.0)]
    pub lambda0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `equal` or explicit 1-based change points `i,j,k`.
    #[arg(long, default_value = "equal")]
    pub placement: String,
    /// Series destination (plus FILE.json sidecar); stdout when absent.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Emit `index,value` run-chart pairs (to FILE.runchart.csv with --out).
    #[arg(long)]
    pub emit_runchart: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ElrtArgs {
    #[arg(long)]
    pub m: usize,
    #[arg(long, default_value_t = 4000)]
    pub runs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub min_seg: usize,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BoxcoxArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InputArgs,
    /// `auto` or a fixed exponent.
    #[arg(long, default_value = "auto")]
    pub eta: String,
    /// Also write the transformed series, one value per line.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GofArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BenchArgs {
    #[arg(long, value_enum)]
    pub method: MethodArg,
    #[arg(long, value_enum, default_value = "agglo")]
    pub variant: VariantArg,
    /// `auto` fits one exponent to the grid's mixture; `off` disables it.
    #[arg(long, default_value = "auto")]
    pub transform: String,
    #[arg(long, value_enum, default_value = "floor")]
    pub rule: RuleArg,
    /// Fraction of the default 1000 replications per cell.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "FILE")]
    pub thresholds: Option<PathBuf>,
    /// How estimates are matched to true change points.
    #[arg(long, default_value = "significance")]
    pub pairing: String,
    #[arg(long, default_value = "1,2,3,4")]
    pub changes: String,
    #[arg(long, default_value = "0.5,1,2,3,4,5")]
    pub deltas: String,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum CarhopMode {
    #[value(name = "I")]
    I,
    #[value(name = "II")]
    II,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CarhopArgs {
    #[arg(long, value_enum)]
    pub mode: CarhopMode,
    #[arg(long, default_value_t = 3.329)]
    pub pooled_mean: f64,
    /// Case II: pool a case-I realization drawn from the seed instead.
    #[arg(long)]
    pub pool_from_seed: bool,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, default_value_t = 200)]
    pub customers: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the event audit trail of one replication to DIR/audit.csv.
    #[arg(long, requires = "out")]
    pub audit: bool,
    /// 1-based replication to audit.
    #[arg(long, default_value_t = 1)]
    pub audit_rep: usize,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

/// A failure carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_VALIDATION,
            message: message.into(),
        }
    }

    pub fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        Self {
            code: EXIT_IO,
            message: format!("{}: {err}", path.display()),
        }
    }
}

impl From<segpoint::Error> for Failure {
    fn from(e: segpoint::Error) -> Self {
        let code = match e {
            segpoint::Error::Io { .. } => EXIT_IO,
            _ => EXIT_VALIDATION,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("SEGPOINT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Failure::validation(format!(
            "SEGPOINT_THREADS must be a positive integer, got {raw:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure {
            code: EXIT_INTERNAL,
            message: e.to_string(),
        })
}

fn dispatch(command: &Command, manifest: &mut Manifest) -> Result<(), Failure> {
    match command {
        Command::Detect(a) => commands::detect(a, manifest),
        Command::Calibrate(a) => commands::calibrate(a, manifest),
        Command::Gen(a) => commands::gen(a, manifest),
        Command::Elrt(a) => commands::elrt(a, manifest),
        Command::Boxcox(a) => commands::boxcox(a, manifest),
        Command::Gof(a) => commands::gof(a, manifest),
        Command::Bench(a) => commands::bench(a, manifest),
        Command::Carhop(a) => commands::carhop(a, manifest),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Err(f) = configure_threads() {
        eprintln!("error: {}", f.message);
        return ExitCode::from(f.code);
    }

    let mut manifest = Manifest::start(&cli.command);
    let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
        dispatch(&cli.command, &mut manifest)
    }))
    .unwrap_or_else(|_| {
        Err(Failure {
            code: EXIT_INTERNAL,
            message: "internal error".into(),
        })
    });
    let code = match &outcome {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    };
    manifest.finish(code);
    if let Err(f) = manifest.emit(cli.manifest.as_deref()) {
        eprintln!("error: {}", f.message);
        return ExitCode::from(if code == 0 { f.code } else { code });
    }
    ExitCode::from(code)
}
