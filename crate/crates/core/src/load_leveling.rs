//! Load leveling with a storage fleet.
//!
//! A load series is approximated window by window with low-degree
//! polynomials. The storage power `x` must absorb the deviation of the load
//! from a flat target, seen through the efficiency kernel:
//!
//! ```text
//! ∫_0^t K(t, s) x(s) ds = f(t),   f(t) = ∫_0^t (target − load(τ)) dτ
//! ```
//!
//! so `f(0) = 0` and `x > 0` means charging. This mapping from load to
//! right-hand side is this crate's modeling choice. The state of charge is
//! the plain running integral of `x`; efficiency losses live in the kernel.

use std::fmt;
use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::accuracy::{self, AccuracyError, OptimalResult, Probe};
use crate::collocation::{self, CollocationConfig, CollocationError, TaylorSolution};
use crate::dsa::DsaConfig;
use crate::kernel::{KernelError, PiecewiseKernel, VolterraProblem};
use crate::linalg::{lu_solve, DenseSystem, LinalgError};
use crate::quadrature::QuadratureRule;
use crate::scalar::Plain;

pub const FIT_DEGREE: usize = 4;
pub const FIT_WINDOW: usize = 10;
/// Index of the series sample used as the accuracy probe.
pub const DEFAULT_PROBE_INDEX: usize = 7;
pub const MIN_ORACLE_STEPS: usize = 100;
/// Fixed degree used for a strategy when no stochastic selection is asked for.
pub const DEFAULT_LEVEL_DEGREE: usize = 8;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: time {time} does not increase")]
    NonMonotonicTime { line: usize, time: f64 },
    #[error("series has {len} points, at least {need} are needed")]
    TooShort { len: usize, need: usize },
    #[error("series has {times} times but {values} values")]
    LengthMismatch { times: usize, values: usize },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("least-squares fit of window {window} is rank deficient")]
    RankDeficientFit { window: usize },
    #[error("target level {0} is not finite")]
    BadTarget(f64),
    #[error("probe index {index} is outside the series ({len} points)")]
    BadProbe { index: usize, len: usize },
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Collocation(#[from] CollocationError),
    #[error(transparent)]
    Accuracy(#[from] AccuracyError),
}

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("need at least {MIN_ORACLE_STEPS} steps, got {0}")]
    TooFewSteps(usize),
    #[error("kernel vanishes on the diagonal at t = {t}")]
    ZeroDiagonal { t: f64 },
}

/// Load samples in MW at times in hours.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadSeries {
    times: Vec<f64>,
    values: Vec<f64>,
    pub label: String,
}

impl LoadSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>, label: impl Into<String>) -> Result<Self, LoadError> {
        if times.len() != values.len() {
            return Err(LoadError::LengthMismatch {
                times: times.len(),
                values: values.len(),
            });
        }
        if times.len() < FIT_WINDOW {
            return Err(LoadError::TooShort {
                len: times.len(),
                need: FIT_WINDOW,
            });
        }
        if let Some(index) = times.iter().chain(&values).position(|v| !v.is_finite()) {
            return Err(LoadError::NonFinite {
                index: index % times.len(),
            });
        }
        if let Some(i) = (1..times.len()).find(|&i| times[i] <= times[i - 1]) {
            return Err(LoadError::NonMonotonicTime {
                line: i + 1,
                time: times[i],
            });
        }
        Ok(Self {
            times,
            values,
            label: label.into(),
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn horizon(&self) -> (f64, f64) {
        (self.times[0], self.times[self.times.len() - 1])
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// `time_hours,load_mw` with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_hours,load_mw\n");
        for (t, v) in self.times.iter().zip(&self.values) {
            out.push_str(&format!("{t},{v:.3}\n"));
        }
        out
    }
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<LoadSeries, LoadError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| LoadError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_csv(file, label)
}

/// Two columns, time then MW. A first line that does not parse as numbers
/// is taken as a header.
pub fn parse_csv(reader: impl Read, label: impl Into<String>) -> Result<LoadSeries, LoadError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| LoadError::Parse {
            line: e.position().map_or(k + 1, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(k + 1, |p| p.line() as usize);
        if record.len() != 2 {
            return Err(LoadError::Parse {
                line,
                message: format!("expected 2 columns, found {}", record.len()),
            });
        }
        let parsed: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) => {
                if let Some(&prev) = times.last() {
                    if v[0] <= prev {
                        return Err(LoadError::NonMonotonicTime { line, time: v[0] });
                    }
                }
                times.push(v[0]);
                values.push(v[1]);
            }
            Err(_) if k == 0 => continue,
            Err(e) => {
                return Err(LoadError::Parse {
                    line,
                    message: e.to_string(),
                })
            }
        }
    }
    if times.is_empty() {
        return Err(LoadError::Parse {
            line: 1,
            message: "no data rows".into(),
        });
    }
    LoadSeries::new(times, values, label)
}

pub const FIXTURE_SEED: u64 = 2020;
/// The bundled fixture file, byte for byte what [`synthetic_fixture`] writes.
pub const FIXTURE_CSV: &str = include_str!("../fixtures/synthetic_ireland_24h.csv");
pub const FIXTURE_NOISE_MW: f64 = 5.0;

/// The bundled synthetic day: 48 half-hourly samples of
/// `3000 + 600·sin(2π(t − 6)/24)` plus Gaussian noise, values rounded to
/// 1 kW so that the CSV file is an exact image of the series.
pub fn synthetic_fixture() -> LoadSeries {
    synthetic_series(FIXTURE_NOISE_MW, FIXTURE_SEED)
}

/// Same generator with another noise level or seed.
pub fn synthetic_series(noise_mw: f64, seed: u64) -> LoadSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_mw).expect("valid noise level");
    let times: Vec<f64> = (0..48).map(|k| k as f64 * 0.5).collect();
    let values = times
        .iter()
        .map(|&t| {
            let v = fixture_baseline(t) + noise.sample(&mut rng);
            (v * 1000.0).round() / 1000.0
        })
        .collect();
    LoadSeries::new(times, values, "synthetic-ireland-24h").expect("fixture is well formed")
}

pub fn fixture_baseline(t: f64) -> f64 {
    3000.0 + 600.0 * (2.0 * std::f64::consts::PI * (t - 6.0) / 24.0).sin()
}

/// Least-squares polynomial on one window, in the local variable
/// `u = (t − center) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct FitWindow {
    /// First sample index of the window.
    pub first: usize,
    /// Samples from `owned_from` on are evaluated with this window.
    pub owned_from: usize,
    pub start: f64,
    pub end: f64,
    center: f64,
    scale: f64,
    coeffs: Vec<f64>,
}

impl FitWindow {
    pub fn eval(&self, t: f64) -> f64 {
        let u = (t - self.center) / self.scale;
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * u + c)
    }

    /// `∫_lo^hi p(τ) dτ` from the antiderivative.
    pub fn integral(&self, lo: f64, hi: f64) -> f64 {
        let prim = |t: f64| {
            let u = (t - self.center) / self.scale;
            self.coeffs
                .iter()
                .enumerate()
                .rev()
                .fold(0.0, |acc, (k, c)| acc * u + c / (k + 1) as f64)
                * u
                * self.scale
        };
        prim(hi) - prim(lo)
    }
}

/// Piecewise polynomial load model over the series horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadModel {
    windows: Vec<FitWindow>,
    /// Time at which each window takes over.
    breaks: Vec<f64>,
    horizon: (f64, f64),
}

impl LoadModel {
    pub fn windows(&self) -> &[FitWindow] {
        &self.windows
    }

    pub fn horizon(&self) -> (f64, f64) {
        self.horizon
    }

    /// Breakpoints belong to the window on their right.
    pub fn window_index(&self, t: f64) -> usize {
        self.breaks.partition_point(|&b| b <= t).saturating_sub(1)
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.windows[self.window_index(t)].eval(t)
    }

    /// Window-by-window `∫_lo^hi model`, with `lo ≤ hi` inside the horizon.
    pub fn integral(&self, lo: f64, hi: f64) -> f64 {
        let mut total = 0.0;
        for (k, w) in self.windows.iter().enumerate() {
            let from = if k == 0 { f64::NEG_INFINITY } else { self.breaks[k] };
            let to = self.breaks.get(k + 1).copied().unwrap_or(f64::INFINITY);
            let (l, h) = (lo.max(from), hi.min(to));
            if h > l {
                total += w.integral(l, h);
            }
        }
        total
    }

    pub fn mean(&self) -> f64 {
        let (a, b) = self.horizon;
        self.integral(a, b) / (b - a)
    }
}

/// Independent least-squares fits on consecutive disjoint windows. When the
/// length is not a multiple of `window`, the last window is right-aligned
/// and owns only the samples not covered before it.
pub fn fit_windows(series: &LoadSeries, degree: usize, window: usize) -> Result<LoadModel, LoadError> {
    let len = series.len();
    if len < window || window == 0 {
        return Err(LoadError::TooShort { len, need: window });
    }
    let mut windows = Vec::new();
    let mut breaks = Vec::new();
    let mut owned_from = 0;
    while owned_from < len {
        let first = owned_from.min(len - window);
        let idx = windows.len();
        let fit = fit_one(series, first, window, degree).ok_or(LoadError::RankDeficientFit { window: idx })?;
        breaks.push(series.times[owned_from]);
        windows.push(FitWindow { owned_from, ..fit });
        owned_from += if first == owned_from { window } else { len - owned_from };
    }
    Ok(LoadModel {
        windows,
        breaks,
        horizon: series.horizon(),
    })
}

fn fit_one(series: &LoadSeries, first: usize, window: usize, degree: usize) -> Option<FitWindow> {
    let ts = &series.times[first..first + window];
    let ys = &series.values[first..first + window];
    let (start, end) = (ts[0], ts[window - 1]);
    let center = 0.5 * (start + end);
    let scale = (0.5 * (end - start)).max(f64::MIN_POSITIVE);
    let m = degree + 1;
    let us: Vec<f64> = ts.iter().map(|&t| (t - center) / scale).collect();
    let mut normal = vec![vec![0.0; m]; m];
    let mut rhs = vec![0.0; m];
    for (&u, &y) in us.iter().zip(ys) {
        let powers: Vec<f64> = (0..m).map(|k| u.powi(k as i32)).collect();
        for i in 0..m {
            rhs[i] += powers[i] * y;
            for j in 0..m {
                normal[i][j] += powers[i] * powers[j];
            }
        }
    }
    let sys = DenseSystem::new(normal, rhs).ok()?;
    let coeffs = match lu_solve(&mut Plain, sys) {
        Ok(c) => c,
        Err(LinalgError::SingularMatrix { .. }) => return None,
        Err(_) => return None,
    };
    Some(FitWindow {
        first,
        owned_from: first,
        start,
        end,
        center,
        scale,
        coeffs,
    })
}

/// `f(t) = ∫_0^t (target − model)` measured from the horizon start.
#[derive(Clone)]
pub struct RightHandSide {
    model: Arc<LoadModel>,
    pub target: f64,
}

impl RightHandSide {
    pub fn eval(&self, t: f64) -> f64 {
        let a = self.model.horizon.0;
        let (lo, hi) = if t >= a { (a, t) } else { (t, a) };
        let v = self.target * (hi - lo) - self.model.integral(lo, hi);
        if t >= a {
            v
        } else {
            -v
        }
    }

    pub fn model(&self) -> &LoadModel {
        &self.model
    }
}

impl fmt::Debug for RightHandSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RightHandSide").field("target", &self.target).finish_non_exhaustive()
    }
}

/// The default target is the time average of the model.
pub fn build_rhs(model: LoadModel, target: Option<f64>) -> Result<RightHandSide, LoadError> {
    let target = target.unwrap_or_else(|| model.mean());
    if !target.is_finite() {
        return Err(LoadError::BadTarget(target));
    }
    Ok(RightHandSide {
        model: Arc::new(model),
        target,
    })
}

/// Storage schedule on the series grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyResult {
    pub times: Vec<f64>,
    /// MW, positive when charging.
    pub acpf: Vec<f64>,
    /// MWh, `soc[0] = 0`.
    pub soc: Vec<f64>,
}

impl StrategyResult {
    pub fn from_acpf(times: Vec<f64>, acpf: Vec<f64>) -> Self {
        let soc = cumulative_trapezoid(&times, &acpf);
        Self { times, acpf, soc }
    }

    pub fn peak_acpf(&self) -> f64 {
        self.acpf.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `time_hours,acpf_mw,soc_mwh`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_hours,acpf_mw,soc_mwh\n");
        for ((t, x), q) in self.times.iter().zip(&self.acpf).zip(&self.soc) {
            out.push_str(&format!("{t},{x:.9},{q:.9}\n"));
        }
        out
    }
}

pub fn cumulative_trapezoid(times: &[f64], values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(times.len());
    let mut acc = 0.0;
    for i in 0..times.len() {
        if i > 0 {
            acc += 0.5 * (times[i] - times[i - 1]) * (values[i] + values[i - 1]);
        }
        out.push(acc);
    }
    out
}

/// Where the stochastic degree selection is solved.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeHorizon {
    /// From the horizon start up to the probe time. The solution at `t`
    /// only depends on `f` over `[0, t]`.
    #[default]
    UpToProbe,
    /// The whole series horizon.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelingOptions {
    /// Flat level in MW; the model mean when absent.
    pub target: Option<f64>,
    /// When present the degree is chosen by the stochastic stopping rule.
    pub dsa: Option<DsaConfig>,
    pub probe_index: usize,
    /// Interval of the degree-selection runs.
    pub probe_horizon: ProbeHorizon,
    pub min_degree: usize,
    pub max_degree: usize,
}

impl Default for LevelingOptions {
    fn default() -> Self {
        Self {
            target: None,
            dsa: None,
            probe_index: DEFAULT_PROBE_INDEX,
            probe_horizon: ProbeHorizon::default(),
            min_degree: accuracy::DEFAULT_MIN_DEGREE,
            max_degree: collocation::MAX_DEGREE,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StrategyOutcome {
    pub strategy: StrategyResult,
    pub degree: usize,
    pub solution: TaylorSolution<f64>,
    pub report: Option<OptimalResult>,
    pub problem: VolterraProblem,
    pub config: CollocationConfig,
    /// Level the load was flattened to, when the problem came from a series.
    pub target: Option<f64>,
}

impl StrategyOutcome {
    /// Largest `|∫ K x̄ − f|` over `probes` evenly spaced times, relative to
    /// `max |f|` on the same times.
    pub fn energy_balance(&self, probes: usize) -> f64 {
        let (a, b) = self.config.interval;
        let order = self.config.quadrature_order();
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for k in 1..=probes {
            let t = a + (b - a) * k as f64 / probes as f64;
            let f = self.problem.rhs(t);
            let lhs = self.problem.kernel.apply(t, |s| self.solution.eval(s), order);
            worst = worst.max((lhs - f).abs());
            scale = scale.max(f.abs());
        }
        if scale == 0.0 {
            worst
        } else {
            worst / scale
        }
    }
}

/// Fits the series, forms the right-hand side and solves for the storage
/// power on the series horizon.
pub fn compute_strategy(
    series: &LoadSeries,
    kernel: &PiecewiseKernel,
    cfg: &CollocationConfig,
    opts: &LevelingOptions,
) -> Result<StrategyOutcome, LoadError> {
    let model = fit_windows(series, FIT_DEGREE, FIT_WINDOW)?;
    let rhs = build_rhs(model, opts.target)?;
    let target = rhs.target;
    let problem = VolterraProblem::new(kernel.clone(), move |t| rhs.eval(t), series.horizon())?;
    let mut out = solve_strategy(&problem, series.times(), cfg, opts)?;
    out.target = Some(target);
    Ok(out)
}

/// Solves `problem` on its interval and samples the strategy at `times`.
/// `opts.target` is not used here; the probe is `times[opts.probe_index]`.
pub fn solve_strategy(
    problem: &VolterraProblem,
    times: &[f64],
    cfg: &CollocationConfig,
    opts: &LevelingOptions,
) -> Result<StrategyOutcome, LoadError> {
    let interval = problem.interval;
    let base = CollocationConfig { interval, ..*cfg };

    let (degree, report) = match &opts.dsa {
        Some(dsa) => {
            let probe = times
                .get(opts.probe_index)
                .copied()
                .filter(|&t| t > interval.0 && t <= interval.1)
                .ok_or(LoadError::BadProbe {
                    index: opts.probe_index,
                    len: times.len(),
                })?;
            let (sub_problem, sub_base) = match opts.probe_horizon {
                ProbeHorizon::Full => (problem.clone(), base),
                ProbeHorizon::UpToProbe => {
                    let i = (interval.0, probe);
                    (problem.on_interval(i)?, CollocationConfig { interval: i, ..base })
                }
            };
            let r = accuracy::optimal_solve(
                &sub_problem,
                &Probe::Point(probe),
                opts.min_degree,
                opts.max_degree,
                &sub_base,
                dsa,
            )?;
            (r.optimal_degree, Some(r))
        }
        None => (base.degree, None),
    };
    let config = base.with_degree(degree);
    let solution = collocation::solve_plain(problem, &config)?;
    let acpf = times.iter().map(|&t| solution.eval(t)).collect();
    Ok(StrategyOutcome {
        strategy: StrategyResult::from_acpf(times.to_vec(), acpf),
        degree,
        solution,
        report,
        problem: problem.clone(),
        config,
        target: None,
    })
}

/// Midpoint product-integration solution on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub step: f64,
    pub start: f64,
    /// `x` at the cell midpoints `start + (j + ½)·step`.
    pub values: Vec<f64>,
}

impl OracleSolution {
    pub fn midpoints(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(|j| self.start + (j as f64 + 0.5) * self.step)
    }

    /// Linear interpolation between midpoints, constant beyond the first and
    /// last ones.
    pub fn eval(&self, t: f64) -> f64 {
        let u = (t - self.start) / self.step - 0.5;
        let n = self.values.len();
        if u <= 0.0 {
            return self.values[0];
        }
        let j = u.floor() as usize;
        if j + 1 >= n {
            return self.values[n - 1];
        }
        let w = u - j as f64;
        self.values[j] * (1.0 - w) + self.values[j + 1] * w
    }
}

/// Independent reference solver.
///
/// With `x` constant on each cell, the equation at `t_k` reads
/// `Σ_{j≤k} w_kj x_j = f(t_k)` with `w_kj = ∫_cell_j K(t_k, s) ds`.
/// Subtracting consecutive rows gives a lower-triangular system whose
/// right-hand side is the difference quotient of `f` at the cell midpoint;
/// it is solved by forward substitution. Kernel integrals over each cell
/// are split at the piece boundaries and done by 2-point Gauss.
pub fn brute_force_oracle(problem: &VolterraProblem, steps: usize) -> Result<OracleSolution, OracleError> {
    if steps < MIN_ORACLE_STEPS {
        return Err(OracleError::TooFewSteps(steps));
    }
    // the equation holds from 0, so the grid starts there whatever the interval
    let start = 0.0;
    let b = problem.interval.1;
    let h = (b - start) / steps as f64;
    let rule = QuadratureRule::gauss_legendre(2);
    let mut x = vec![0.0; steps];
    let mut prev_row = vec![0.0; steps];
    let mut row = vec![0.0; steps];
    let mut f_prev = problem.rhs(start);
    for k in 1..=steps {
        let t = start + k as f64 * h;
        row[..k].iter_mut().for_each(|w| *w = 0.0);
        for (lo, hi, piece) in problem.kernel.ordered_pieces(t) {
            let (lo, hi) = (lo.max(start), hi.min(t));
            if hi <= lo {
                continue;
            }
            let j0 = (((lo - start) / h).floor() as usize).min(k - 1);
            let j1 = ((((hi - start) / h).ceil() as usize).max(1)).min(k);
            for j in j0..j1 {
                let cl = (start + j as f64 * h).max(lo);
                let ch = (start + (j + 1) as f64 * h).min(hi);
                if ch > cl {
                    row[j] += rule.mapped(cl, ch).map(|(s, w)| w * piece.value(t, s)).sum::<f64>();
                }
            }
        }
        let diag = row[k - 1];
        if diag.abs() <= 1e-14 * h {
            return Err(OracleError::ZeroDiagonal { t });
        }
        let f_now = problem.rhs(t);
        let mut acc = (f_now - f_prev) / h;
        for j in 0..k - 1 {
            acc -= (row[j] - prev_row[j]) / h * x[j];
        }
        x[k - 1] = acc / (diag / h);
        std::mem::swap(&mut row, &mut prev_row);
        f_prev = f_now;
    }
    Ok(OracleSolution {
        step: h,
        start,
        values: x,
    })
}
