//! Command-line front end: JSON run configs in, CSV curves and JSON reports out.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 config or validation error,
//! 3 numerical failure (no convergence, HJB check failed, ill-conditioned),
//! 4 an `example` assertion failed.

use std::ffi::OsString;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::closed_form::{self, ClosedFormError};
use crate::exppoly::{linspace, PiecewiseExpPoly};
use crate::model::{expected_discount, ModelError, ModelParams, RateState};
use crate::recursion::{self, RecursionError, Solution, SolverSettings};
use crate::simulator::{self, BarrierStrategy, Estimator, SimConfig, SimError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_ASSERTION: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Recursion(#[from] RecursionError),
    #[error(transparent)]
    ClosedForm(#[from] ClosedFormError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("HJB residual {violation:e} exceeds {tol:e}")]
    HjbFailed { violation: f64, tol: f64 },
    #[error("assertions failed: {0}")]
    Assertion(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Model(_) => EXIT_VALIDATION,
            CliError::Recursion(RecursionError::Model(_) | RecursionError::BadSetting(_)) => {
                EXIT_VALIDATION
            }
            CliError::Recursion(_) | CliError::HjbFailed { .. } => EXIT_NUMERICAL,
            CliError::ClosedForm(ClosedFormError::Model(_)) => EXIT_VALIDATION,
            CliError::ClosedForm(_) => EXIT_NUMERICAL,
            CliError::Sim(SimError::Model(_) | SimError::InvalidConfig(_)) => EXIT_VALIDATION,
            CliError::Sim(SimError::ClosedForm(ClosedFormError::Model(_))) => EXIT_VALIDATION,
            CliError::Sim(SimError::ClosedForm(_)) => EXIT_NUMERICAL,
            CliError::Sim(SimError::Pool(_)) => EXIT_IO,
            CliError::Assertion(_) => EXIT_ASSERTION,
            CliError::Io { .. } | CliError::Csv(_) | CliError::Json(_) => EXIT_IO,
        }
    }
}

/// Sampling grid for curve files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveGrid {
    pub x_max: f64,
    pub points: usize,
}

impl Default for CurveGrid {
    fn default() -> Self {
        Self {
            x_max: 8.0,
            points: 801,
        }
    }
}

impl CurveGrid {
    fn check(&self) -> Result<(), CliError> {
        if !(self.x_max > 0.0 && self.x_max.is_finite()) || self.points < 2 {
            return Err(CliError::Config("grid needs x_max > 0 and points >= 2".into()));
        }
        Ok(())
    }

    fn xs(&self) -> Vec<f64> {
        linspace(0.0, self.x_max, self.points)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct V0Block {
    pub grid: CurveGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveBlock {
    pub tol: f64,
    pub tol_b: f64,
    pub tol_hjb: f64,
    pub max_iter: usize,
    pub grid_points: usize,
    pub curve: CurveGrid,
}

impl Default for SolveBlock {
    fn default() -> Self {
        let s = SolverSettings::default();
        Self {
            tol: s.tol,
            tol_b: s.tol_b,
            tol_hjb: s.tol_hjb,
            max_iter: s.max_iter,
            grid_points: s.grid_points,
            curve: CurveGrid::default(),
        }
    }
}

impl SolveBlock {
    fn settings(&self) -> SolverSettings {
        SolverSettings {
            tol: self.tol,
            tol_b: self.tol_b,
            tol_hjb: self.tol_hjb,
            max_iter: self.max_iter,
            grid_points: self.grid_points,
            ..SolverSettings::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscountCheck {
    pub eta0: RateState,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateBlock {
    pub config: SimConfig,
    /// Strategy to simulate; the solved barrier strategy when absent.
    #[serde(default)]
    pub strategy: Option<BarrierStrategy>,
    /// Offsets around the solved barrier for an optimality probe.
    #[serde(default)]
    pub offsets: Vec<f64>,
    #[serde(default)]
    pub discount_check: Option<DiscountCheck>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    pub dir: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("."),
            formats: vec![Format::Csv, Format::Json],
        }
    }
}

impl OutputBlock {
    fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub params: Option<ModelParams>,
    #[serde(default)]
    pub v0: V0Block,
    #[serde(default)]
    pub solve: SolveBlock,
    #[serde(default)]
    pub simulate: Option<SimulateBlock>,
    #[serde(default)]
    pub output: OutputBlock,
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self, CliError> {
        serde_json::from_str(s).map_err(|e| CliError::Config(e.to_string()))
    }

    fn params(&self) -> Result<ModelParams, CliError> {
        let p = self
            .params
            .ok_or_else(|| CliError::Config("no params given (use --config or --params-file)".into()))?;
        p.validate()?;
        Ok(p)
    }

    fn check(&self) -> Result<(), CliError> {
        self.v0.grid.check()?;
        self.solve.curve.check()?;
        let s = &self.solve;
        if !(s.tol > 0.0 && s.tol_b > 0.0 && s.tol_hjb > 0.0) {
            return Err(CliError::Config("tolerances must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Parser)]
#[command(name = "barrier-solver", version, about = "Optimal capital injection barriers under a switching interest rate")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON run config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// JSON model parameters; replaces `params` from the config.
    #[arg(long, global = true)]
    pub params_file: Option<PathBuf>,
    /// Output directory; replaces `output.dir`.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Simulation seed; replaces `simulate.config.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StateArg {
    Low,
    High,
}

impl From<StateArg> for RateState {
    fn from(s: StateArg) -> Self {
        match s {
            StateArg::Low => RateState::Low,
            StateArg::High => RateState::High,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SourceArg {
    /// The minimal-amount strategy's value.
    V0,
    /// The converged value function.
    Solution,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Minimal-amount strategy value and its optimality verdicts.
    V0,
    /// Run the barrier recursion to convergence and certify it.
    Solve,
    /// Monte Carlo estimates for a barrier strategy.
    Simulate,
    /// Worked example end to end with hard-wired parameters.
    Example {
        /// Paths per probe cell; 0 skips the simulation probe.
        #[arg(long, default_value_t = 20_000)]
        probe_paths: usize,
    },
    /// Write a value function as JSON.
    DumpFunction {
        #[arg(long, value_enum, default_value_t = SourceArg::Solution)]
        source: SourceArg,
        #[arg(long, value_enum, default_value_t = StateArg::Low)]
        state: StateArg,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a JSON value function.
    EvalFunction {
        #[arg(long)]
        function: PathBuf,
        #[arg(long, allow_hyphen_values = true, conflicts_with = "points")]
        x: Option<f64>,
        /// Evaluate on `points` equally spaced nodes of [0, x-max].
        #[arg(long, requires = "x_max")]
        points: Option<usize>,
        #[arg(long)]
        x_max: Option<f64>,
        #[arg(long, default_value_t = 0)]
        derivative: u8,
    },
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Builds the effective config from `--config` plus overriding flags.
pub fn load_config(global: &GlobalArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &global.config {
        Some(path) => RunConfig::from_json(&read(path)?)?,
        None => RunConfig::from_json("{}")?,
    };
    if let Some(path) = &global.params_file {
        let p: ModelParams =
            serde_json::from_str(&read(path)?).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.params = Some(p);
    }
    if let Some(dir) = &global.out_dir {
        cfg.output.dir = dir.clone();
    }
    if let (Some(seed), Some(sim)) = (global.seed, cfg.simulate.as_mut()) {
        sim.config.seed = seed;
    }
    cfg.check()?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    if let Command::EvalFunction {
        function,
        x,
        points,
        x_max,
        derivative,
    } = &cli.command
    {
        return eval_function(function, *x, *points, *x_max, *derivative);
    }
    let cfg = load_config(&cli.global)?;
    if !matches!(cli.command, Command::DumpFunction { out: None, .. }) {
        fs::create_dir_all(&cfg.output.dir).map_err(|source| CliError::Io {
            path: cfg.output.dir.clone(),
            source,
        })?;
    }
    match &cli.command {
        Command::V0 => cmd_v0(&cfg).map(|_| ()),
        Command::Solve => cmd_solve(&cfg).map(|_| ()),
        Command::Simulate => cmd_simulate(&cfg),
        Command::Example { probe_paths } => cmd_example(&cfg.output, *probe_paths),
        Command::DumpFunction { source, state, out } => {
            dump_function(&cfg, *source, (*state).into(), out.as_deref())
        }
        Command::EvalFunction { .. } => unreachable!(),
    }
}

/// Scalars in CSV files carry 17 significant digits.
pub fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    write(path, &serde_json::to_string_pretty(value)?)
}

fn function_rows(grid: &[f64], low: &PiecewiseExpPoly, high: &PiecewiseExpPoly) -> Vec<Vec<String>> {
    grid.iter()
        .map(|&x| {
            vec![
                fmt(x),
                fmt(low.eval(x, 0)),
                fmt(high.eval(x, 0)),
                fmt(low.eval(x, 1)),
                fmt(high.eval(x, 1)),
                fmt(low.eval(x, 2)),
                fmt(high.eval(x, 2)),
            ]
        })
        .collect()
}

const CURVE_HEADER: [&str; 7] = ["x", "v_low", "v_high", "d1_low", "d1_high", "d2_low", "d2_high"];

pub fn cmd_v0(cfg: &RunConfig) -> Result<closed_form::V0Result, CliError> {
    let params = cfg.params()?;
    let r = closed_form::v0(&params)?;
    let out = &cfg.output;
    if out.wants(Format::Csv) {
        let rows = function_rows(&cfg.v0.grid.xs(), &r.v_low, &r.v_high);
        write_csv(&out.dir.join("v0_curve.csv"), &CURVE_HEADER, &rows)?;
    }
    if out.wants(Format::Json) {
        write_json(&out.dir.join("v0_report.json"), &json!({ "params": params, "v0": r }))?;
    }
    println!("minimal-amount strategy value");
    println!("  V0(0, low)  = {:.10}", r.v_low.eval(0.0, 0));
    println!("  V0(0, high) = {:.10}", r.v_high.eval(0.0, 0));
    println!("  V0''(0, low)  = {:.6}  optimal_low  = {}", r.d2_low_at_0, r.optimal_low);
    println!("  V0''(0, high) = {:.6}  optimal_high = {}", r.d2_high_at_0, r.optimal_high);
    println!("  optimal = {}", r.optimal);
    Ok(r)
}

fn solve_checked(params: &ModelParams, block: &SolveBlock) -> Result<Solution, CliError> {
    let sol = recursion::solve(params, &block.settings())?;
    if !sol.residuals.passed {
        return Err(CliError::HjbFailed {
            violation: sol.residuals.max_violation(),
            tol: sol.residuals.tol,
        });
    }
    Ok(sol)
}

pub fn cmd_solve(cfg: &RunConfig) -> Result<Solution, CliError> {
    let params = cfg.params()?;
    let sol = match recursion::solve(&params, &cfg.solve.settings()) {
        Ok(s) => s,
        Err(e) => {
            if let RecursionError::NoConvergence { last, .. } = &e {
                eprintln!(
                    "last iterate n = {}: barrier {:.6}, sup delta {:e}",
                    last.n, last.barrier, last.sup_delta
                );
            }
            return Err(e.into());
        }
    };
    let out = &cfg.output;
    if out.wants(Format::Csv) {
        let rows = function_rows(&cfg.solve.curve.xs(), &sol.v_low, &sol.v_high);
        write_csv(&out.dir.join("value_curve.csv"), &CURVE_HEADER, &rows)?;
    }
    if out.wants(Format::Json) {
        write_json(
            &out.dir.join("solution.json"),
            &json!({ "params": params, "settings": cfg.solve.settings(), "solution": sol }),
        )?;
    }
    println!("barrier recursion");
    println!("  barrier (low state) = {:.10}", sol.barrier);
    println!("  iterations          = {}", sol.iterations);
    println!("  V(0, low)  = {:.10}", sol.v_low.eval(0.0, 0));
    println!("  V(0, high) = {:.10}", sol.v_high.eval(0.0, 0));
    println!(
        "  HJB residual max = {:.3e} (tol {:.1e}) {}",
        sol.residuals.max_violation(),
        sol.residuals.tol,
        if sol.residuals.passed { "passed" } else { "FAILED" }
    );
    if sol.max_barrier_increase > 0.0 {
        println!("  odd barriers increased by up to {:.3e}", sol.max_barrier_increase);
    }
    if !sol.residuals.passed {
        return Err(CliError::HjbFailed {
            violation: sol.residuals.max_violation(),
            tol: sol.residuals.tol,
        });
    }
    Ok(sol)
}

const SIM_HEADER: [&str; 15] = [
    "kind",
    "barrier_low",
    "barrier_high",
    "x0",
    "eta0",
    "t",
    "mean",
    "stderr",
    "n_paths",
    "dt",
    "seed",
    "truncation_bound",
    "reference",
    "diff_mean",
    "diff_stderr",
];

fn opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let params = cfg.params()?;
    let block = cfg
        .simulate
        .as_ref()
        .ok_or_else(|| CliError::Config("simulate block missing".into()))?;
    let sc = block.config;
    let solution = if block.strategy.is_none() || !block.offsets.is_empty() {
        Some(solve_checked(&params, &cfg.solve)?)
    } else {
        None
    };
    let strategy = block.strategy.unwrap_or_else(|| {
        BarrierStrategy::new(solution.as_ref().map_or(0.0, |s| s.barrier), 0.0)
    });
    let mut rows = Vec::new();
    let est = simulator::simulate_value(&params, &strategy, &sc)?;
    let reference = solution
        .as_ref()
        .filter(|s| block.strategy.is_none() || block.strategy == Some(BarrierStrategy::new(s.barrier, 0.0)))
        .map(|s| s.value(sc.eta0).eval(sc.x0, 0));
    println!("simulation ({} paths, dt {}, seed {})", sc.n_paths, sc.dt, sc.seed);
    println!(
        "  value at x0 = {}, {}: {:.6} +- {:.6}{}",
        sc.x0,
        sc.eta0.label(),
        est.mean,
        est.stderr,
        reference.map_or(String::new(), |r| format!("  (analytic {r:.6})"))
    );
    rows.push(vec![
        "value".to_string(),
        fmt(strategy.barrier_low),
        fmt(strategy.barrier_high),
        fmt(sc.x0),
        sc.eta0.label().to_string(),
        fmt(est.horizon),
        fmt(est.mean),
        fmt(est.stderr),
        est.n_paths.to_string(),
        fmt(est.dt),
        est.seed.to_string(),
        fmt(est.truncation_bound),
        opt(reference),
        String::new(),
        String::new(),
    ]);
    if let Some(sol) = solution.as_ref().filter(|_| !block.offsets.is_empty()) {
        let probe = simulator::optimality_probe(&params, sol.barrier, &block.offsets, &sc)?;
        for r in probe {
            println!(
                "  probe offset {:+.3}: {:.6} +- {:.6}, vs reference {:+.6} +- {:.6}",
                r.offset, r.estimate.mean, r.estimate.stderr, r.diff_mean, r.diff_stderr
            );
            rows.push(vec![
                "probe".to_string(),
                fmt(r.barrier_low),
                fmt(0.0),
                fmt(sc.x0),
                sc.eta0.label().to_string(),
                fmt(r.estimate.horizon),
                fmt(r.estimate.mean),
                fmt(r.estimate.stderr),
                r.estimate.n_paths.to_string(),
                fmt(r.estimate.dt),
                r.estimate.seed.to_string(),
                fmt(r.estimate.truncation_bound),
                String::new(),
                fmt(r.diff_mean),
                fmt(r.diff_stderr),
            ]);
        }
    }
    if let Some(d) = block.discount_check {
        let dc = SimConfig {
            estimator: Estimator::Pathwise,
            ..sc
        };
        let e = simulator::simulate_discount(&params, d.eta0, d.t, &dc)?;
        let exact = expected_discount(&params, d.eta0, d.t)?;
        println!(
            "  discount E[exp(-int r)] at t = {}: {:.6} +- {:.6} (closed form {:.6})",
            d.t, e.mean, e.stderr, exact
        );
        rows.push(vec![
            "discount".to_string(),
            String::new(),
            String::new(),
            String::new(),
            d.eta0.label().to_string(),
            fmt(d.t),
            fmt(e.mean),
            fmt(e.stderr),
            e.n_paths.to_string(),
            String::new(),
            e.seed.to_string(),
            fmt(0.0),
            fmt(exact),
            String::new(),
            String::new(),
        ]);
    }
    write_csv(&cfg.output.dir.join("sim_report.csv"), &SIM_HEADER, &rows)
}

fn dump_function(
    cfg: &RunConfig,
    source: SourceArg,
    state: RateState,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let params = cfg.params()?;
    let f = match source {
        SourceArg::V0 => {
            let r = closed_form::v0(&params)?;
            match state {
                RateState::Low => r.v_low,
                RateState::High => r.v_high,
            }
        }
        SourceArg::Solution => solve_checked(&params, &cfg.solve)?.value(state).clone(),
    };
    match out {
        Some(path) => write(path, &f.to_json()),
        None => {
            println!("{}", f.to_json());
            Ok(())
        }
    }
}

fn eval_function(
    path: &Path,
    x: Option<f64>,
    points: Option<usize>,
    x_max: Option<f64>,
    derivative: u8,
) -> Result<(), CliError> {
    let f = PiecewiseExpPoly::from_json(&read(path)?).map_err(|e| CliError::Config(e.to_string()))?;
    let xs = match (x, points, x_max) {
        (Some(x), None, _) => vec![x],
        (None, Some(n), Some(m)) => {
            CurveGrid { x_max: m, points: n }.check()?;
            linspace(0.0, m, n)
        }
        _ => return Err(CliError::Config("give --x or --points with --x-max".into())),
    };
    if let Some(&bad) = xs.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(CliError::Config(format!("x = {bad} must be finite and >= 0")));
    }
    let mut w = csv::Writer::from_writer(io::stdout());
    w.write_record(["x", "value"])?;
    for x in xs {
        w.write_record([fmt(x), fmt(f.eval(x, derivative))])?;
    }
    w.flush().map_err(|source| CliError::Io {
        path: PathBuf::from("<stdout>"),
        source,
    })
}

/// Worked-example targets.
pub const EXAMPLE_BARRIER: f64 = 1.4248;
pub const EXAMPLE_D2: f64 = -3.3077;
pub const EXAMPLE_OFFSETS: [f64; 5] = [-0.4, -0.2, 0.0, 0.2, 0.4];
pub const EXAMPLE_SEED: u64 = 20_240_601;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn curve_csv(path: &Path, grid: &[f64], f: &PiecewiseExpPoly) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = grid
        .iter()
        .map(|&x| vec![fmt(x), fmt(f.eval(x, 0)), fmt(f.eval(x, 1)), fmt(f.eval(x, 2))])
        .collect();
    write_csv(path, &["x", "value", "d1", "d2"], &rows)
}

/// Runs the worked example and writes `example_report.json` plus curve files
/// on [0, 8]. Returns the checks; fails with exit code 4 when one fails.
pub fn cmd_example(out: &OutputBlock, probe_paths: usize) -> Result<(), CliError> {
    let params = ModelParams::worked_example();
    let v0 = closed_form::v0(&params)?;
    let b_closed = closed_form::example_barrier_lambda2_zero(&params)?;
    let sol = recursion::solve(&params, &SolverSettings::default())?;
    let grid = linspace(0.0, 8.0, 801);

    let mut checks = vec![
        Check {
            name: "closed_form_barrier",
            passed: (b_closed - EXAMPLE_BARRIER).abs() <= 5e-4,
            detail: format!("b* = {b_closed:.6}"),
        },
        Check {
            name: "recursion_barrier",
            passed: (sol.barrier - b_closed).abs() <= 1e-3
                && (sol.barrier - EXAMPLE_BARRIER).abs() <= 1e-3,
            detail: format!("b = {:.6} after {} iterations", sol.barrier, sol.iterations),
        },
        Check {
            name: "v0_second_derivative",
            passed: (v0.d2_low_at_0 - EXAMPLE_D2).abs() <= 1e-3 && !v0.optimal,
            detail: format!("V0''(0, low) = {:.6}, optimal = {}", v0.d2_low_at_0, v0.optimal),
        },
    ];

    let pieces = sol.v_low.pieces();
    let tail = pieces.last().expect("at least one piece");
    let linear_below = grid
        .iter()
        .filter(|&&x| x < sol.barrier)
        .all(|&x| sol.v_low.eval(x, 2).abs() <= 1e-12);
    let two_exponentials = sol.v_low.breakpoints().last() == Some(&sol.barrier)
        && tail.len() == 2
        && tail.iter().all(|t| t.power == 0 && t.rate < 0.0);
    checks.push(Check {
        name: "curve_structure",
        passed: linear_below && two_exponentials && sol.residuals.passed,
        detail: format!(
            "linear on [0, b*]: {linear_below}, {} terms on (b*, 8]: {two_exponentials}",
            tail.len()
        ),
    });

    curve_csv(&out.dir.join("v0_low_curve.csv"), &grid, &v0.v_low)?;
    curve_csv(&out.dir.join("value_low_curve.csv"), &grid, &sol.v_low)?;
    write(&out.dir.join("value_low.json"), &sol.v_low.to_json())?;

    let probe = if probe_paths > 0 {
        let cfg = SimConfig {
            estimator: Estimator::SwitchConditioned,
            ..SimConfig::new(0.0, RateState::Low, probe_paths, EXAMPLE_SEED)
        };
        Some(simulator::optimality_probe(&params, sol.barrier, &EXAMPLE_OFFSETS, &cfg)?)
    } else {
        None
    };

    println!("worked example (mu 0.05, sigma 0.45, delta -0.56/0.1, lambda 0.57/0)");
    for c in &checks {
        println!("  [{}] {}: {}", if c.passed { "ok" } else { "FAIL" }, c.name, c.detail);
    }
    if let Some(rows) = &probe {
        println!("  simulation probe ({probe_paths} paths per cell, informational):");
        for r in rows {
            println!(
                "    b {:+.1}: {:.5} +- {:.5}, vs b {:+.5} +- {:.5}",
                r.offset, r.estimate.mean, r.estimate.stderr, r.diff_mean, r.diff_stderr
            );
        }
    }

    write_json(
        &out.dir.join("example_report.json"),
        &json!({
            "params": params,
            "closed_form_barrier": b_closed,
            "recursion_barrier": sol.barrier,
            "iterations": sol.iterations,
            "d2_low_at_0": v0.d2_low_at_0,
            "d2_high_at_0": v0.d2_high_at_0,
            "optimal_low": v0.optimal_low,
            "optimal_high": v0.optimal_high,
            "v_low_at_0": sol.v_low.eval(0.0, 0),
            "v0_low_at_0": v0.v_low.eval(0.0, 0),
            "hjb": sol.residuals,
            "checks": checks,
            "probe": probe,
            "curve_files": ["v0_low_curve.csv", "value_low_curve.csv", "value_low.json"],
        }),
    )?;

    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Assertion(failed.join(", ")))
    }
}
