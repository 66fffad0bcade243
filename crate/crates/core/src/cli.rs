//! `qgr` command line: `verify`, `sweep` and `selftest`.
//!
//! Exit codes: 0 all checks pass, 1 an identity failed, 2 usage, config
//! or I/O error.

use std::ffi::OsString;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::error::QgrError;
use crate::geobracket::IdentityResidual;
use crate::geomertainty::{InnerProductMode, LiftMode};
use crate::scenarios::{
    build_scenario, load_config, run_selftest, run_suite, sweep, ScenarioConfig, SelftestReport,
    SuiteResult, Summary, SweepRow,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "qgr",
    version,
    about = "Verify geometric commutator and uncertainty identities on a grid"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the identity suite on one scenario.
    Verify(VerifyArgs),
    /// Tabulate the QGR report over a range of one config parameter.
    Sweep(SweepArgs),
    /// Run the built-in scenario matrix.
    Selftest(SelftestArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    #[value(name = "paper-literal")]
    Literal,
    AdjointConsistent,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LiftArg {
    Composition,
    Function,
}

#[derive(clap::Args, Debug)]
struct VerifyArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    lift: Option<LiftArg>,
    /// Include wall time in the report (makes output run-dependent).
    #[arg(long)]
    timings: bool,
}

#[derive(clap::Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    param: String,
    #[arg(long, allow_hyphen_values = true)]
    from: f64,
    #[arg(long, allow_hyphen_values = true)]
    to: f64,
    #[arg(long)]
    steps: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct SelftestArgs {
    /// Use n = 128 instead of 512.
    #[arg(long)]
    quick: bool,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Write the full JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override every tolerance (negative-control runs).
    #[arg(long)]
    tolerance: Option<f64>,
}

/// Full `verify` output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub version: String,
    pub seed: u64,
    pub scenario: ScenarioConfig,
    pub results: SuiteResult,
    pub summary: Summary,
}

/// Pretty JSON with every float written as 17 significant digits.
struct Digits17(PrettyFormatter<'static>);

impl Formatter for Digits17 {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        write!(w, "{v:.16e}")
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Serialize with 17-digit floats. Non-finite floats become `null`.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser =
        serde_json::Serializer::with_formatter(&mut buf, Digits17(PrettyFormatter::new()));
    value.serialize(&mut ser).expect("in-memory serialization");
    buf.push(b'\n');
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

/// Residual table as CSV.
pub fn residuals_csv(residuals: &[IdentityResidual]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "name",
        "kind",
        "lhs_norm",
        "rhs_norm",
        "abs_residual",
        "rel_residual",
        "tolerance",
        "pass",
    ])
    .expect("in-memory csv");
    for r in residuals {
        let kind = match r.kind {
            crate::geobracket::ResidualKind::Algebraic => "algebraic",
            crate::geobracket::ResidualKind::Continuum => "continuum",
        };
        w.write_record([
            r.name.clone(),
            kind.to_string(),
            format!("{:.16e}", r.lhs_norm),
            format!("{:.16e}", r.rhs_norm),
            format!("{:.16e}", r.abs_residual),
            format!("{:.16e}", r.rel_residual),
            format!("{:.16e}", r.tolerance),
            r.pass.to_string(),
        ])
        .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

pub const SWEEP_HEADER: [&str; 10] = [
    "param",
    "sigma_x",
    "sigma_p",
    "product",
    "qgr_value",
    "Theta",
    "Xi",
    "epsilon",
    "robertson_C",
    "herm_defect",
];

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SWEEP_HEADER).expect("in-memory csv");
    for r in rows {
        let vals = [
            r.param,
            r.sigma_x,
            r.sigma_p,
            r.product,
            r.qgr_value,
            r.theta,
            r.xi,
            r.epsilon,
            r.robertson_c,
            r.herm_defect,
        ];
        w.write_record(vals.iter().map(|v| format!("{v:.16e}")))
            .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

#[derive(Debug)]
enum CliError {
    Qgr(QgrError),
    Io(PathBuf, io::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Qgr(e) => write!(f, "{e}"),
            CliError::Io(p, e) => write!(f, "{}: {e}", p.display()),
        }
    }
}

impl From<QgrError> for CliError {
    fn from(e: QgrError) -> Self {
        CliError::Qgr(e)
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Io(p.to_path_buf(), e)),
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Io(PathBuf::from("<stdout>"), e)),
    }
}

fn cmd_verify(args: VerifyArgs) -> Result<i32, CliError> {
    let mut cfg = load_config(&read(&args.config)?)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(m) = args.mode {
        cfg.modes.inner_product = match m {
            ModeArg::Literal => InnerProductMode::Literal,
            ModeArg::AdjointConsistent => InnerProductMode::AdjointConsistent,
        };
    }
    if let Some(l) = args.lift {
        cfg.modes.lift = match l {
            LiftArg::Composition => LiftMode::Composition,
            LiftArg::Function => LiftMode::Function,
        };
    }
    let start = Instant::now();
    let bundle = build_scenario(&cfg)?;
    let mut results = run_suite(&bundle, &cfg)?;
    if args.timings {
        results.wall_time_s = Some(start.elapsed().as_secs_f64());
    }
    for w in &results.warnings {
        eprintln!("warning: {w}");
    }
    let summary = Summary::of(&results.residuals);
    let text = match args.format {
        Format::Json => to_json(&ReportDocument {
            version: crate::VERSION.to_string(),
            seed: cfg.seed,
            scenario: cfg.clone(),
            results: results.clone(),
            summary: summary.clone(),
        }),
        Format::Csv => residuals_csv(&results.residuals),
    };
    emit(args.out.as_deref(), &text)?;
    eprintln!(
        "verify: {} pass, {} fail (worst: {} at {:.3e})",
        summary.pass, summary.fail, summary.worst_residual_name, summary.worst_rel_residual
    );
    for r in results.residuals.iter().filter(|r| !r.pass) {
        eprintln!(
            "  FAIL {}: rel {:.3e} > tol {:.3e}",
            r.name, r.rel_residual, r.tolerance
        );
    }
    Ok(if results.all_pass() {
        EXIT_OK
    } else {
        EXIT_FAIL
    })
}

fn cmd_sweep(args: SweepArgs) -> Result<i32, CliError> {
    if args.steps < 2 {
        return Err(QgrError::TooFewSteps.into());
    }
    let cfg = load_config(&read(&args.config)?)?;
    let rows = sweep(&cfg, &args.param, args.from, args.to, args.steps)?;
    emit(args.out.as_deref(), &sweep_csv(&rows))?;
    Ok(EXIT_OK)
}

fn print_selftest(report: &SelftestReport) {
    println!("{:<40} {:>6} {:>6}  worst", "scenario", "pass", "fail");
    for e in &report.entries {
        let s = Summary::of(&e.result.residuals);
        println!(
            "{:<40} {:>6} {:>6}  {} ({:.2e})",
            e.name, s.pass, s.fail, s.worst_residual_name, s.worst_rel_residual
        );
        for r in e.result.residuals.iter().filter(|r| !r.pass) {
            println!(
                "    FAIL {}: rel {:.3e} > tol {:.3e}",
                r.name, r.rel_residual, r.tolerance
            );
        }
    }
    println!(
        "total: {} pass, {} fail, {} distinct checks",
        report.summary.pass, report.summary.fail, report.distinct_checks
    );
}

fn cmd_selftest(args: SelftestArgs) -> Result<i32, CliError> {
    if let Some(t) = args.tolerance {
        if !(t.is_finite() && t > 0.0) {
            return Err(QgrError::Validation {
                path: "--tolerance".into(),
                reason: "must be positive".into(),
            }
            .into());
        }
    }
    let report = run_selftest(args.quick, args.seed, args.tolerance)?;
    print_selftest(&report);
    if let Some(p) = &args.out {
        emit(Some(p), &to_json(&report))?;
    }
    Ok(if report.summary.fail == 0 {
        EXIT_OK
    } else {
        EXIT_FAIL
    })
}

/// Parse `args` (program name first) and run; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let out = match cli.command {
        Command::Verify(a) => cmd_verify(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Selftest(a) => cmd_selftest(a),
    };
    match out {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}
