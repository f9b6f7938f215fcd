//! Command-line front end.
//!
//! Exit statuses: 0 success, 1 configuration error, 2 numeric or I/O failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::accuracy::{self, Benchmark};
use crate::collocation::{self, CollocationConfig, ExpansionPoint, MAX_DEGREE};
use crate::config::{ConfigError, RunConfig};
use crate::dsa::{DsaConfig, StochasticContext};
use crate::kernel::{KernelError, KernelSpec, VolterraProblem};
use crate::load_leveling::{self, LevelingOptions, LoadError, ProbeHorizon};
use crate::scalar::Arithmetic;

pub const SEED_ENV: &str = "TAYLOR_VOLTERRA_SEED";

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Failure(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Failure(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => CliError::Failure(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<KernelError> for CliError {
    fn from(e: KernelError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<LoadError> for CliError {
    fn from(e: LoadError) -> Self {
        match e {
            LoadError::BadTarget(_) | LoadError::BadProbe { .. } | LoadError::Kernel(_) => CliError::Config(e.to_string()),
            _ => CliError::Failure(e.to_string()),
        }
    }
}

fn failure(e: impl std::fmt::Display) -> CliError {
    CliError::Failure(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "taylor-volterra", version, about = "Taylor-collocation for first-kind Volterra equations with stochastic accuracy control")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one equation and print the solution on a grid
    Solve(SolveArgs),
    /// Compute a storage charge/discharge strategy for a load series
    Level(LevelArgs),
    /// Interval-halving convergence study on a built-in benchmark
    Converge(ConvergeArgs),
    /// Check a kernel (or a whole run configuration) without solving
    ValidateKernel(ValidateArgs),
    /// Check zero detection of the stochastic arithmetic over many seeds
    DsaSelftest(SelftestArgs),
}

fn parse_degree(s: &str) -> Result<usize, String> {
    let v: i64 = s.trim().parse().map_err(|_| format!("expected an integer, got {s:?}"))?;
    if v < 0 {
        return Err(format!("degree must be non-negative, got {v}"));
    }
    if v as usize > MAX_DEGREE {
        return Err(format!("degree {v} exceeds the maximum {MAX_DEGREE}"));
    }
    Ok(v as usize)
}

fn parse_interval(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected a,b, got {s:?}"))?;
    let a: f64 = a.trim().parse().map_err(|_| format!("bad interval start {a:?}"))?;
    let b: f64 = b.trim().parse().map_err(|_| format!("bad interval end {b:?}"))?;
    if !(a >= 0.0 && b > a && b.is_finite()) {
        return Err(format!("need 0 <= a < b, got {a},{b}"));
    }
    Ok((a, b))
}

/// Right-hand side mini-syntax: `poly:c0,c1,…`, `exp`, `sin` or `csv:path`.
#[derive(Debug, Clone, PartialEq)]
pub enum RhsSpec {
    Poly(Vec<f64>),
    Exp,
    Sin,
    Csv(PathBuf),
}

impl std::str::FromStr for RhsSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exp" => return Ok(RhsSpec::Exp),
            "sin" => return Ok(RhsSpec::Sin),
            _ => {}
        }
        if let Some(list) = s.strip_prefix("poly:") {
            let coeffs = list
                .split(',')
                .map(|c| c.trim().parse::<f64>().map_err(|_| format!("bad coefficient {c:?} in {s:?}")))
                .collect::<Result<Vec<_>, _>>()?;
            return Ok(RhsSpec::Poly(coeffs));
        }
        if let Some(path) = s.strip_prefix("csv:") {
            return Ok(RhsSpec::Csv(PathBuf::from(path)));
        }
        Err(format!("unknown right-hand side {s:?} (expected poly:c0,c1,..., exp, sin or csv:path)"))
    }
}

impl RhsSpec {
    fn function(&self) -> Result<Box<dyn Fn(f64) -> f64 + Send + Sync>, CliError> {
        Ok(match self {
            RhsSpec::Poly(c) => {
                let c = c.clone();
                Box::new(move |t| c.iter().rev().fold(0.0, |acc, k| acc * t + k))
            }
            RhsSpec::Exp => Box::new(f64::exp_m1),
            RhsSpec::Sin => Box::new(f64::sin),
            RhsSpec::Csv(path) => {
                let table = read_table(path)?;
                Box::new(move |t| interpolate(&table, t))
            }
        })
    }
}

fn read_table(path: &Path) -> Result<Vec<(f64, f64)>, CliError> {
    let series = load_leveling::load_csv(path)?;
    Ok(series.times().iter().copied().zip(series.values().iter().copied()).collect())
}

fn interpolate(table: &[(f64, f64)], t: f64) -> f64 {
    let i = table.partition_point(|&(x, _)| x <= t).clamp(1, table.len() - 1);
    let (x0, y0) = table[i - 1];
    let (x1, y1) = table[i];
    y0 + (y1 - y0) * (t - x0) / (x1 - x0)
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Kernel as values@fractions, e.g. [1,0.9,0.85]@[0.25,0.75]
    #[arg(long, default_value = "[1]")]
    pub kernel: String,
    /// poly:c0,c1,... | exp | sin | csv:path
    #[arg(long)]
    pub rhs: String,
    #[arg(long, default_value = "4", value_parser = parse_degree, allow_negative_numbers = true)]
    pub degree: usize,
    #[arg(long, default_value = "0,1", value_parser = parse_interval)]
    pub interval: (f64, f64),
    /// "midpoint" or a number
    #[arg(long, default_value = "midpoint")]
    pub expansion_point: String,
    /// Number of output grid points
    #[arg(long, default_value_t = 11)]
    pub points: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LevelArgs {
    /// TOML or JSON run configuration; flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Load CSV (time_hours,load_mw); the bundled synthetic day by default
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub kernel: Option<String>,
    #[arg(long, value_parser = parse_degree, allow_negative_numbers = true)]
    pub degree: Option<usize>,
    #[arg(long)]
    pub expansion_point: Option<String>,
    /// Flat level in MW; the mean load by default
    #[arg(long, allow_negative_numbers = true)]
    pub target: Option<f64>,
    /// Choose the degree with the stochastic stopping rule and write the report
    #[arg(long)]
    pub dsa: bool,
    #[arg(long, env = SEED_ENV)]
    pub seed: Option<u64>,
    /// Series index of the accuracy probe
    #[arg(long)]
    pub probe_index: Option<usize>,
    /// up-to-probe | full
    #[arg(long)]
    pub probe_horizon: Option<String>,
    /// Strategy CSV; stdout by default
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// CESTAC report CSV; stderr by default
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConvergeArgs {
    /// exp | sin | poly
    #[arg(long)]
    pub bench: String,
    #[arg(long, default_value = "2", value_parser = parse_degree, allow_negative_numbers = true)]
    pub degree: usize,
    #[arg(long, default_value_t = 4)]
    pub halvings: usize,
    /// Length of the first interval [0, h]
    #[arg(long, default_value_t = 1.0)]
    pub length: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long, conflicts_with = "config")]
    pub kernel: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "0,1", value_parser = parse_interval)]
    pub interval: (f64, f64),
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = 100)]
    pub seeds: u64,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = crate::dsa::DEFAULT_SAMPLES)]
    pub samples: usize,
}

/// Parses `args` (program name first), runs the command and returns the
/// exit status. Diagnostics go to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{e}");
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        Command::Solve(a) => cmd_solve(a, out, err),
        Command::Level(a) => cmd_level(a, out, err),
        Command::Converge(a) => cmd_converge(a, out, err),
        Command::ValidateKernel(a) => cmd_validate(a, out, err),
        Command::DsaSelftest(a) => cmd_selftest(a, out),
    }
}

fn emit(text: &str, path: Option<&Path>, fallback: &mut dyn Write) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| failure(format!("cannot write {}: {e}", p.display()))),
        None => fallback.write_all(text.as_bytes()).map_err(failure),
    }
}

fn parse_kernel(s: &str) -> Result<KernelSpec, CliError> {
    s.parse::<KernelSpec>()
        .map_err(|e| CliError::Config(format!("--kernel: {e}")))
}

fn parse_expansion(s: &str, flag: &str) -> Result<ExpansionPoint, CliError> {
    s.parse::<ExpansionPoint>()
        .map_err(|e| CliError::Config(format!("{flag}: {e}")))
}

fn cmd_solve(a: SolveArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let kernel = parse_kernel(&a.kernel)?.build()?;
    let rhs: RhsSpec = a.rhs.parse().map_err(|e| CliError::Config(format!("--rhs: {e}")))?;
    let cfg = CollocationConfig::new(a.degree, a.interval)
        .with_expansion_point(parse_expansion(&a.expansion_point, "--expansion-point")?);
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    if a.points < 2 {
        return Err(CliError::Config("--points: need at least 2".into()));
    }
    let f = rhs.function()?;
    let problem = VolterraProblem::new(kernel, f, a.interval)?;
    let sol = collocation::solve_plain(&problem, &cfg).map_err(failure)?;

    let (lo, hi) = a.interval;
    let mut csv = String::from("s,x\n");
    for i in 0..a.points {
        let s = lo + (hi - lo) * i as f64 / (a.points - 1) as f64;
        csv.push_str(&format!("{s},{}\n", sol.eval(s)));
    }
    emit(&csv, a.out.as_deref(), out)?;
    let residual = collocation::collocation_residual(&problem, &cfg, &sol);
    let _ = writeln!(err, "residual_max={residual:e}");
    Ok(())
}

fn cmd_level(a: LevelArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(k) = &a.kernel {
        cfg.kernel = parse_kernel(k)?;
    }
    if let Some(d) = a.degree {
        cfg.collocation.degree = d;
    }
    if let Some(c) = &a.expansion_point {
        cfg.collocation.expansion_point = parse_expansion(c, "--expansion-point")?;
    }
    if let Some(t) = a.target {
        cfg.level.target = Some(t);
    }
    if let Some(i) = a.probe_index {
        cfg.level.probe_index = i;
    }
    if let Some(h) = &a.probe_horizon {
        cfg.level.probe_horizon = match h.as_str() {
            "up-to-probe" => ProbeHorizon::UpToProbe,
            "full" => ProbeHorizon::Full,
            other => {
                return Err(CliError::Config(format!(
                    "--probe-horizon: expected up-to-probe or full, got {other:?}"
                )))
            }
        };
    }
    if a.dsa && cfg.dsa.is_none() {
        cfg.dsa = Some(DsaConfig::default());
    }
    if let (Some(seed), Some(d)) = (a.seed, cfg.dsa.as_mut()) {
        d.seed = seed;
    }
    if let Some(p) = &a.input {
        cfg.io.input = Some(p.clone());
    }
    if let Some(p) = &a.out {
        cfg.io.output = Some(p.clone());
    }
    if let Some(p) = &a.report {
        cfg.io.report = Some(p.clone());
    }
    cfg.validate()?;

    let series = match &cfg.io.input {
        Some(p) => load_leveling::load_csv(p)?,
        None => load_leveling::parse_csv(load_leveling::FIXTURE_CSV.as_bytes(), "synthetic-ireland-24h")?,
    };
    let kernel = cfg.kernel.build()?;
    let coll = CollocationConfig {
        degree: cfg.collocation.degree,
        expansion_point: cfg.collocation.expansion_point,
        interval: series.horizon(),
        min_quadrature_order: cfg.collocation.min_quadrature_order,
    };
    coll.validate().map_err(|e| CliError::Config(format!("collocation: {e}")))?;
    let opts = LevelingOptions {
        target: cfg.level.target,
        dsa: cfg.dsa,
        probe_index: cfg.level.probe_index,
        probe_horizon: cfg.level.probe_horizon,
        min_degree: cfg.level.min_degree,
        max_degree: cfg.level.max_degree,
    };
    let outcome = load_leveling::compute_strategy(&series, &kernel, &coll, &opts)?;

    emit(&outcome.strategy.to_csv(), cfg.io.output.as_deref(), out)?;
    let _ = writeln!(err, "series={} points={}", series.label, series.len());
    if let Some(t) = outcome.target {
        let _ = writeln!(err, "target_mw={t}");
    }
    let _ = writeln!(err, "degree={}", outcome.degree);
    let _ = writeln!(err, "energy_balance_rel={:e}", outcome.energy_balance(20));
    if let Some(report) = &outcome.report {
        let _ = writeln!(
            err,
            "optimal_degree={} converged={} optimal_value={}",
            report.optimal_degree,
            report.converged,
            report.optimal_value()
        );
        emit(&report.to_csv(), cfg.io.report.as_deref(), err)?;
    }
    Ok(())
}

fn cmd_converge(a: ConvergeArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let bench: Benchmark = a.bench.parse().map_err(|e| CliError::Config(format!("--bench: {e}")))?;
    if !(a.length > 0.0 && a.length.is_finite()) {
        return Err(CliError::Config("--length: must be positive".into()));
    }
    let table = accuracy::convergence_study(bench, a.degree, a.length, a.halvings).map_err(failure)?;
    emit(&table.to_csv(), a.out.as_deref(), out)?;
    if table.is_exact() {
        let _ = writeln!(err, "observed_order=exact");
    } else if let Some(o) = table.orders().last() {
        let _ = writeln!(err, "observed_order={o:.4} expected={}", a.degree + 1);
    }
    Ok(())
}

fn cmd_validate(a: ValidateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let spec = match (&a.kernel, &a.config) {
        (_, Some(p)) => {
            let cfg = RunConfig::from_file(p)?;
            cfg.validate()?;
            cfg.kernel
        }
        (Some(k), None) => parse_kernel(k)?,
        (None, None) => return Err(CliError::Config("give --kernel or --config".into())),
    };
    let kernel = spec.build()?;
    let violations = kernel.validate(a.interval, 64);
    if let Some(v) = violations.first() {
        return Err(CliError::Config(format!("kernel: {v}")));
    }
    let mut csv = String::from("piece,lower,upper,value\n");
    for (i, p) in kernel.pieces().iter().enumerate() {
        csv.push_str(&format!("{i},{},{},{}\n", p.lower.label(), p.upper.label(), spec.values[i]));
    }
    emit(&csv, None, out)?;
    let _ = writeln!(err, "kernel {spec} is valid on [{}, {}]", a.interval.0, a.interval.1);
    Ok(())
}

/// One line of the self-test table.
#[derive(Debug, Clone, PartialEq)]
pub struct SelftestRow {
    pub check: &'static str,
    pub zeros: u64,
    pub seeds: u64,
    pub expect_zero: bool,
}

impl SelftestRow {
    /// At least 99 % agreement with the expectation.
    pub fn passed(&self) -> bool {
        let agree = if self.expect_zero { self.zeros } else { self.seeds - self.zeros };
        agree * 100 >= self.seeds * 99
    }
}

pub fn selftest(seeds: u64, first_seed: u64, samples: usize) -> Result<Vec<SelftestRow>, CliError> {
    type Check = fn(&mut StochasticContext) -> Result<crate::dsa::StochasticValue, crate::dsa::DsaError>;
    let checks: [(&'static str, bool, Check); 4] = [
        ("x-x", true, |c| {
            let x = c.div(&c.exact(1.0), &c.exact(7.0))?;
            c.sub(&x, &x)
        }),
        ("(1/3)*3-1", true, |c| {
            let third = c.div(&c.exact(1.0), &c.exact(3.0))?;
            let one = c.mul(&third, &c.exact(3.0))?;
            c.sub(&one, &c.exact(1.0))
        }),
        ("2*3", false, |c| c.mul(&c.exact(2.0), &c.exact(3.0))),
        ("7-3", false, |c| c.sub(&c.exact(7.0), &c.exact(3.0))),
    ];
    let mut rows = Vec::new();
    for (name, expect_zero, f) in checks {
        let mut zeros = 0;
        for k in 0..seeds {
            let cfg = DsaConfig {
                samples,
                seed: first_seed.wrapping_add(k),
                ..DsaConfig::default()
            };
            let mut ctx = StochasticContext::new(cfg).map_err(|e| CliError::Config(e.to_string()))?;
            let v = f(&mut ctx).map_err(failure)?;
            if ctx.is_zero(&v) {
                zeros += 1;
            }
        }
        rows.push(SelftestRow {
            check: name,
            zeros,
            seeds,
            expect_zero,
        });
    }
    Ok(rows)
}

fn cmd_selftest(a: SelftestArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if a.seeds == 0 {
        return Err(CliError::Config("--seeds: must be positive".into()));
    }
    let rows = selftest(a.seeds, a.seed, a.samples)?;
    let mut csv = String::from("check,seeds,informatical_zeros,expected,pass\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.check,
            r.seeds,
            r.zeros,
            if r.expect_zero { "zero" } else { "nonzero" },
            r.passed()
        ));
    }
    emit(&csv, None, out)?;
    if rows.iter().all(SelftestRow::passed) {
        Ok(())
    } else {
        Err(failure("self-test failed"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_str(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(std::iter::once("taylor-volterra").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn rhs_grammar() {
        assert_eq!("poly:0,0.9125".parse::<RhsSpec>().unwrap(), RhsSpec::Poly(vec![0.0, 0.9125]));
        assert_eq!("exp".parse::<RhsSpec>().unwrap(), RhsSpec::Exp);
        assert_eq!("csv:a.csv".parse::<RhsSpec>().unwrap(), RhsSpec::Csv("a.csv".into()));
        assert!("poly:1,x".parse::<RhsSpec>().is_err());
        assert!("cosh".parse::<RhsSpec>().is_err());
    }

    #[test]
    fn interpolation_is_linear_and_clamped_to_the_end_segments() {
        let t = vec![(0.0, 0.0), (1.0, 2.0), (2.0, 2.0)];
        assert_eq!(interpolate(&t, 0.5), 1.0);
        assert_eq!(interpolate(&t, 1.5), 2.0);
        assert_eq!(interpolate(&t, 3.0), 2.0);
    }

    #[test]
    fn storage_kernel_recovers_one() {
        let (code, out, err) = run_str(&["solve", "--kernel", "[1,0.9,0.85]@[0.25,0.75]", "--rhs", "poly:0,0.9125", "--degree", "2"]);
        assert_eq!(code, 0, "{err}");
        for line in out.lines().skip(1) {
            let x: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
            assert!((x - 1.0).abs() < 1e-8, "{line}");
        }
        assert!(err.starts_with("residual_max="));
    }

    #[test]
    fn negative_degree_is_a_config_error() {
        let (code, _, err) = run_str(&["solve", "--rhs", "sin", "--degree", "-1"]);
        assert_eq!(code, 1);
        assert!(err.contains("non-negative"), "{err}");
    }

    #[test]
    fn unknown_benchmark_is_a_config_error() {
        let (code, _, err) = run_str(&["converge", "--bench", "cosh"]);
        assert_eq!(code, 1);
        assert!(err.contains("unknown benchmark"));
    }

    #[test]
    fn missing_file_names_the_path() {
        let (code, _, err) = run_str(&["solve", "--rhs", "csv:/no/such/table.csv"]);
        assert_eq!(code, 2);
        assert!(err.contains("/no/such/table.csv"), "{err}");
    }

    #[test]
    fn selftest_passes() {
        let (code, out, _) = run_str(&["dsa-selftest", "--seeds", "100"]);
        assert_eq!(code, 0, "{out}");
        assert_eq!(out.lines().count(), 5);
    }

    #[test]
    fn validate_reports_violations() {
        let (code, out, _) = run_str(&["validate-kernel", "--kernel", "[1,0.9,0.85]@[0.25,0.75]"]);
        assert_eq!(code, 0);
        assert_eq!(out.lines().count(), 4);
        let (code, _, err) = run_str(&["validate-kernel", "--kernel", "[1,0]@[0.5]"]);
        assert_eq!(code, 1, "{err}");
    }

    #[test]
    fn help_is_not_an_error() {
        assert_eq!(run_str(&["--help"]).0, 0);
        assert_eq!(run_str(&["frobnicate"]).0, 1);
    }
}
