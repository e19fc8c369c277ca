//! Command-line front end for `etest-core`.
//!
//! Each subcommand reads a JSON problem document (see [`spec`]), delegates
//! to the library and writes JSON or CSV. Errors map to exit codes through
//! [`CliError::exit_code`]: 1 for bad input, 2 for mathematically infeasible
//! problems and 3 for solver non-convergence.

pub mod spec;

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use etest_core::bridge::{self, cross_level_audit, markov_chain_values, p_from_family};
use etest_core::composite_opt::{self, duality_gap, solve_composite, CompositeProblem, CompositeSolution};
use etest_core::evidence::{check_validity_exact, check_validity_mc, Sampler};
use etest_core::gaussian::{figure_data, linear_grid, FigureRow, GaussianTest};
use etest_core::sequential::{optional_stopping_audit, simulate};
use etest_core::simple_opt::{self, optimal_simple_tol, SimpleSolution};
use etest_core::utility::{admissibility, AdmissibilityReport};
use etest_core::{ContinuousTest, ErrorCategory, EtestError, Level, UtilitySpec};
use log::info;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::spec::{
    AuditSpec, CompositeSpec, ConvertSpec, FigureSpec, NullInput, OneOrMany, SequentialSpec, SimpleSpec,
};

/// Errors surfaced by the command-line tool.
#[derive(Debug, Error)]
pub enum CliError {
    /// The library rejected the problem.
    #[error(transparent)]
    Core(#[from] EtestError),
    /// Reading or writing a file failed.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    /// The problem document does not match its schema.
    #[error("invalid problem document: {0}")]
    Schema(#[from] serde_json::Error),
    /// A CSV input or output failed.
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    /// Missing or conflicting flags.
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    /// Process exit code: 1 input, 2 infeasible, 3 non-convergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => match e.category() {
                ErrorCategory::Input => 1,
                ErrorCategory::Infeasible => 2,
                ErrorCategory::NonConvergence => 3,
            },
            _ => 1,
        }
    }
}

/// Result alias for the front end.
pub type CliResult<T> = std::result::Result<T, CliError>;

/// Continuous tests on the evidence scale.
#[derive(Debug, Parser)]
#[command(name = "etest", version, about)]
pub struct Cli {
    /// Subcommand.
    #[command(subcommand)]
    pub command: Command,
}

/// Subcommands.
#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimal test for a simple null against a simple alternative.
    SolveSimple(CommonArgs),
    /// Optimal test for a finite composite null.
    SolveComposite(CommonArgs),
    /// CSV curves of the optimal Gaussian location tests.
    GaussianFigure(CommonArgs),
    /// Monte Carlo paths of a sequential test martingale.
    SequentialSim(CommonArgs),
    /// Convert level-0 evidence to a level-alpha continuous test and a binary decision.
    Convert(ConvertArgs),
    /// Validity, stopping-time and p-value audits.
    Audit(CommonArgs),
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Problem document: a path, or `-` for standard input.
    #[arg(long = "in", value_name = "PATH")]
    pub input: Option<String>,
    /// Output path; standard output when omitted.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Seed for every random choice. Required by commands that sample.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Solver tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
}

/// Flags of `convert`.
#[derive(Debug, Clone, Default, Args)]
pub struct ConvertArgs {
    /// Shared flags.
    #[command(flatten)]
    pub common: CommonArgs,
    /// Level-0 evidence value, instead of a document.
    #[arg(long)]
    pub e: Option<f64>,
    /// Target level, with `--e`.
    #[arg(long)]
    pub alpha: Option<f64>,
}

/// What a command produced.
#[derive(Debug, Clone, PartialEq)]
pub enum Output {
    /// A JSON document.
    Json(Value),
    /// Raw text, e.g. CSV.
    Text(String),
}

impl Output {
    /// Rendered output, always ending in a newline.
    pub fn render(&self) -> String {
        match self {
            Output::Json(v) => {
                let mut s = serde_json::to_string_pretty(v).expect("values always serialize");
                s.push('\n');
                s
            }
            Output::Text(s) => s.clone(),
        }
    }
}

/// Runs a parsed command line, reading `-` documents from `stdin` and
/// writing results to `--out` or `stdout`.
pub fn run(cli: &Cli, stdin: &mut dyn Read, stdout: &mut dyn Write) -> CliResult<()> {
    let (common, output) = match &cli.command {
        Command::SolveSimple(a) => (a, cmd_solve_simple(&read_payload(a, stdin, "simple")?, a.tol)?),
        Command::SolveComposite(a) => {
            let seed = require_seed(a, "solve-composite")?;
            (a, cmd_composite(&read_payload(a, stdin, "composite")?, a.tol, seed)?)
        }
        Command::GaussianFigure(a) => {
            let spec = match &a.input {
                Some(_) => read_payload(a, stdin, "gaussian")?,
                None => FigureSpec::default(),
            };
            (a, cmd_figure(&spec, a.out.as_deref())?)
        }
        Command::SequentialSim(a) => {
            let seed = require_seed(a, "sequential-sim")?;
            (a, cmd_sequential(&read_payload(a, stdin, "sequential")?, seed)?)
        }
        Command::Convert(c) => (&c.common, convert_entry(c, stdin)?),
        Command::Audit(a) => (a, cmd_audit(&read_payload(a, stdin, "audit")?, a.seed)?),
    };
    // The figure command writes its own files when `--out` is a directory.
    let figure_dir = matches!(cli.command, Command::GaussianFigure(_));
    match (&common.out, figure_dir) {
        (Some(path), false) => fs::write(path, output.render())?,
        _ => stdout.write_all(output.render().as_bytes())?,
    }
    Ok(())
}

fn require_seed(args: &CommonArgs, command: &str) -> CliResult<u64> {
    args.seed
        .ok_or_else(|| CliError::Usage(format!("{command} draws random numbers; pass --seed <u64>")))
}

fn read_source(args: &CommonArgs, stdin: &mut dyn Read) -> CliResult<String> {
    match args.input.as_deref() {
        None => Err(CliError::Usage("missing --in <path|->".into())),
        Some("-") => {
            let mut s = String::new();
            stdin.read_to_string(&mut s)?;
            Ok(s)
        }
        Some(path) => Ok(fs::read_to_string(path)?),
    }
}

/// Parses a payload, accepting and checking an optional `"command"` tag.
pub fn parse_payload<T: for<'de> Deserialize<'de>>(text: &str, command: &str) -> CliResult<T> {
    let mut value: Value = serde_json::from_str(text)?;
    if let Some(obj) = value.as_object_mut() {
        if let Some(tag) = obj.remove("command") {
            if tag.as_str() != Some(command) {
                return Err(CliError::Usage(format!("document is for command {tag}, expected \"{command}\"")));
            }
        }
    }
    Ok(serde_json::from_value(value)?)
}

fn read_payload<T: for<'de> Deserialize<'de>>(args: &CommonArgs, stdin: &mut dyn Read, command: &str) -> CliResult<T> {
    parse_payload(&read_source(args, stdin)?, command)
}

fn to_json<T: Serialize>(value: &T) -> CliResult<Output> {
    Ok(Output::Json(serde_json::to_value(value)?))
}

/// Output of `solve-simple`.
#[derive(Debug, Clone, Serialize)]
pub struct SimpleReport {
    /// Level.
    pub alpha: f64,
    /// Utility.
    pub utility: UtilitySpec,
    /// Whether an optimum is guaranteed to exist.
    pub admissibility: AdmissibilityReport,
    /// The solution.
    #[serde(flatten)]
    pub solution: SimpleSolution,
}

/// `solve-simple`: the optimal test for `spec`, or the Neyman-Pearson test at `h = 1`.
pub fn cmd_solve_simple(spec: &SimpleSpec, tol: Option<f64>) -> CliResult<Output> {
    let (p, q) = (spec.p.build()?, spec.q.build()?);
    let level = Level::new(spec.alpha)?;
    let u = spec.utility.build()?;
    info!("solve-simple: {} outcomes, alpha = {}", p.len(), spec.alpha);
    let solution = optimal_simple_tol(&p, &q, &u, level, tol.unwrap_or(simple_opt::DEFAULT_TOL))?;
    to_json(&SimpleReport {
        alpha: spec.alpha,
        utility: spec.utility,
        admissibility: admissibility(&u, spec.alpha),
        solution,
    })
}

/// Output of `solve-composite`.
#[derive(Debug, Clone, Serialize)]
pub struct CompositeReport {
    /// Level.
    pub alpha: f64,
    /// Utility.
    pub utility: UtilitySpec,
    /// Primal minus dual objective, when the projection exists.
    #[serde(with = "etest_core::ext_float::option")]
    pub duality_gap: Option<f64>,
    /// The solution.
    #[serde(flatten)]
    pub solution: CompositeSolution,
}

/// `solve-composite`: the optimal test against a finite composite null.
pub fn cmd_composite(spec: &CompositeSpec, tol: Option<f64>, seed: u64) -> CliResult<Output> {
    let nulls = spec.nulls.iter().map(|d| d.build()).collect::<Result<Vec<_>, _>>()?;
    let prob = CompositeProblem::new(nulls, spec.q.build()?, Level::new(spec.alpha)?, spec.utility.build()?)?;
    info!("solve-composite: {} members, alpha = {}", prob.nulls().len(), spec.alpha);
    let solution = solve_composite(
        &prob,
        tol.unwrap_or(composite_opt::DEFAULT_TOL),
        spec.max_iter.unwrap_or(composite_opt::DEFAULT_MAX_ITER),
        seed,
    )?;
    let gap = match solution.ripr {
        Some(_) => duality_gap(solution.values(), &prob).ok(),
        None => None,
    };
    to_json(&CompositeReport {
        alpha: spec.alpha,
        utility: spec.utility,
        duality_gap: gap,
        solution,
    })
}

/// Formats a float with 17 significant digits.
pub fn fmt_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Renders figure rows as CSV with header `x,h,value`.
pub fn figure_csv(rows: &[FigureRow]) -> CliResult<String> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(["x", "h", "value"])?;
    for r in rows {
        w.write_record([fmt_float(r.x), fmt_float(r.h), fmt_float(r.value)])?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is ascii"))
}

/// File name of the figure at level `alpha`.
pub fn figure_file_name(alpha: f64) -> String {
    format!("figure_alpha_{alpha}.csv")
}

/// One figure of `gaussian-figure`.
#[derive(Debug, Clone, Serialize)]
pub struct FigureSummary {
    /// Level.
    pub alpha: f64,
    /// Written file.
    pub file: String,
    /// The plotted tests, in `h` order.
    pub tests: Vec<GaussianTest>,
}

/// Rows and tests of the figure at `alpha`.
pub fn figure_rows(spec: &FigureSpec, alpha: f64) -> CliResult<(Vec<GaussianTest>, Vec<FigureRow>)> {
    if spec.n_points == 0 || !(spec.x_min <= spec.x_max) {
        return Err(CliError::Usage(format!(
            "need n_points >= 1 and x_min <= x_max, got {} on [{}, {}]",
            spec.n_points, spec.x_min, spec.x_max
        )));
    }
    let grid = linear_grid(spec.x_min, spec.x_max, spec.n_points);
    Ok(figure_data(spec.mu, spec.sigma, alpha, &spec.h_values(alpha), &grid)?)
}

/// `gaussian-figure`: one CSV per level. With a single level and no output
/// directory the CSV goes to standard output; otherwise files named by
/// [`figure_file_name`] are written into `out` (or the document's
/// `out_path`) and a JSON summary is returned.
pub fn cmd_figure(spec: &FigureSpec, out: Option<&Path>) -> CliResult<Output> {
    let alphas = spec.alpha.to_vec();
    if alphas.is_empty() {
        return Err(CliError::Usage("alpha list is empty".into()));
    }
    let dir = out.map(Path::to_path_buf).or_else(|| spec.out_path.as_ref().map(PathBuf::from));
    let Some(dir) = dir else {
        if alphas.len() == 1 {
            return Ok(Output::Text(figure_csv(&figure_rows(spec, alphas[0])?.1)?));
        }
        return Err(CliError::Usage(format!(
            "{} figures requested; pass --out <dir> or set out_path",
            alphas.len()
        )));
    };
    fs::create_dir_all(&dir)?;
    let mut summary = Vec::with_capacity(alphas.len());
    for alpha in alphas {
        let (tests, rows) = figure_rows(spec, alpha)?;
        let path = dir.join(figure_file_name(alpha));
        fs::write(&path, figure_csv(&rows)?)?;
        info!("gaussian-figure: wrote {}", path.display());
        summary.push(FigureSummary {
            alpha,
            file: path.display().to_string(),
            tests,
        });
    }
    to_json(&summary)
}

/// `sequential-sim`: simulation summary, plus an optional per-path CSV.
pub fn cmd_sequential(spec: &SequentialSpec, seed: u64) -> CliResult<Output> {
    let stream = spec.stream()?;
    let strategy = spec.strategy.build()?;
    info!("sequential-sim: {} paths of length {}", spec.n_paths, spec.horizon);
    let (summary, paths) = simulate(
        &stream,
        strategy.as_ref(),
        spec.alpha,
        spec.n_paths,
        spec.horizon,
        spec.under,
        seed,
    )?;
    if let Some(path) = &spec.paths_out {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
        w.write_record(["path", "max_wealth", "terminal"])?;
        for r in &paths {
            w.write_record([r.path.to_string(), fmt_float(r.max_wealth), fmt_float(r.terminal)])?;
        }
        w.flush()?;
    }
    to_json(&summary)
}

/// Decision of a binary test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    /// The binary test is at its cap.
    Reject,
    /// The binary test is zero.
    Accept,
}

/// One conversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Conversion {
    /// `min(e, 1/alpha)`.
    pub continuous: f64,
    /// `reject` when `e >= 1/alpha`.
    pub binary: Decision,
}

/// Converts one level-0 value.
pub fn convert_one(e: f64, alpha: f64) -> CliResult<Conversion> {
    let continuous = bridge::e_to_continuous(e, alpha)?;
    let binary = if bridge::e_to_binary(e, alpha)? > 0.0 {
        Decision::Reject
    } else {
        Decision::Accept
    };
    Ok(Conversion { continuous, binary })
}

/// `convert`: a scalar gives one object, a list gives an array.
pub fn cmd_convert(spec: &ConvertSpec) -> CliResult<Output> {
    match &spec.e {
        OneOrMany::One(e) => to_json(&convert_one(*e, spec.alpha)?),
        OneOrMany::Many(es) => to_json(&es.iter().map(|&e| convert_one(e, spec.alpha)).collect::<CliResult<Vec<_>>>()?),
    }
}

#[derive(Deserialize)]
struct CsvRow {
    e: f64,
    alpha: f64,
}

/// `convert` on CSV text with columns `e` and `alpha`; returns CSV with
/// columns `e,alpha,continuous,binary`.
pub fn convert_csv(text: &str) -> CliResult<String> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(["e", "alpha", "continuous", "binary"])?;
    for row in r.deserialize::<CsvRow>() {
        let row = row?;
        let c = convert_one(row.e, row.alpha)?;
        let decision = match c.binary {
            Decision::Reject => "reject",
            Decision::Accept => "accept",
        };
        w.write_record([fmt_float(row.e), fmt_float(row.alpha), fmt_float(c.continuous), decision.into()])?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is ascii"))
}

fn convert_entry(args: &ConvertArgs, stdin: &mut dyn Read) -> CliResult<Output> {
    match (args.e, args.alpha, &args.common.input) {
        (Some(e), Some(alpha), None) => cmd_convert(&ConvertSpec {
            e: OneOrMany::One(e),
            alpha,
        }),
        (None, None, Some(path)) if path.ends_with(".csv") => {
            Ok(Output::Text(convert_csv(&read_source(&args.common, stdin)?)?))
        }
        (None, None, Some(_)) => {
            let text = read_source(&args.common, stdin)?;
            if text.trim_start().starts_with(['{', '[']) {
                cmd_convert(&parse_payload(&text, "convert")?)
            } else {
                Ok(Output::Text(convert_csv(&text)?))
            }
        }
        _ => Err(CliError::Usage("convert needs either --e and --alpha, or --in".into())),
    }
}

fn mc_under<F, T>(null: &NullInput, f: F) -> CliResult<T>
where
    F: FnOnce(&dyn SamplerRef) -> CliResult<T>,
{
    match null {
        NullInput::Gaussian(g) => f(g),
        NullInput::Finite(d) => f(&d.build()?),
    }
}

/// Object-safe view of a null sampler for the Monte Carlo audits.
trait SamplerRef {
    fn validity(&self, test: &ContinuousTest, n: usize, seed: u64) -> CliResult<Value>;
    fn cross_level(&self, test: &ContinuousTest, n: usize, seed: u64) -> CliResult<Value>;
}

impl<S: Sampler> SamplerRef for S {
    fn validity(&self, test: &ContinuousTest, n: usize, seed: u64) -> CliResult<Value> {
        Ok(serde_json::to_value(check_validity_mc(test, self, n, seed)?)?)
    }

    fn cross_level(&self, test: &ContinuousTest, n: usize, seed: u64) -> CliResult<Value> {
        Ok(serde_json::to_value(cross_level_audit(test, self, n, seed)?)?)
    }
}

/// `audit`: a JSON report for the selected audit. Monte Carlo audits need `seed`.
pub fn cmd_audit(spec: &AuditSpec, seed: Option<u64>) -> CliResult<Output> {
    let need_seed = || seed.ok_or_else(|| CliError::Usage("this audit draws random numbers; pass --seed <u64>".into()));
    match spec {
        AuditSpec::Validity { test, nulls } => {
            let nulls = nulls.iter().map(|d| d.build()).collect::<Result<Vec<_>, _>>()?;
            to_json(&check_validity_exact(test, &nulls)?)
        }
        AuditSpec::McValidity { test, null, n } => {
            let seed = need_seed()?;
            Ok(Output::Json(mc_under(null, |s| s.validity(test, *n, seed))?))
        }
        AuditSpec::CrossLevel { test, null, n } => {
            let seed = need_seed()?;
            Ok(Output::Json(mc_under(null, |s| s.cross_level(test, *n, seed))?))
        }
        AuditSpec::Stopping {
            null,
            alt,
            strategy,
            alpha,
            horizon,
        } => {
            let stream = etest_core::sequential::StreamModel::new(null.build()?, alt.build()?)?;
            to_json(&optional_stopping_audit(&stream, strategy.build()?.as_ref(), *alpha, *horizon)?)
        }
        AuditSpec::Family { family } => to_json(&p_from_family(family)?),
        AuditSpec::Markov { x, alpha } => to_json(&markov_chain_values(*x, *alpha)?),
    }
}
