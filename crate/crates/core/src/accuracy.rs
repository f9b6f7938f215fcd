//! CESTAC-driven choice of the Taylor degree.
//!
//! The solver is re-run under stochastic arithmetic at increasing degree
//! `n`. The run stops once two successive approximations at the probe
//! point differ by an informatical zero, i.e. once the change from one degree
//! to the next is pure round-off. No tolerance and no exact solution are
//! involved.

use std::fmt::Write as _;

use thiserror::Error;

use crate::collocation::{self, CollocationConfig, CollocationError, MAX_DEGREE};
use crate::dsa::{DiagnosticLog, DsaConfig, DsaError, StochasticContext, StochasticValue, INFORMATICAL_ZERO};
use crate::kernel::VolterraProblem;
use crate::scalar::Arithmetic;

pub const DEFAULT_MIN_DEGREE: usize = 2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AccuracyError {
    #[error("probe point {probe} is outside ({a}, {b}]")]
    ProbeOutside { probe: f64, a: f64, b: f64 },
    #[error("degree range {n_min}..={n_max} is invalid (need n_max >= n_min + 1 and n_max <= {MAX_DEGREE})")]
    BadDegreeRange { n_min: usize, n_max: usize },
    #[error("no degree in the range could be solved")]
    NothingSolved,
    #[error(transparent)]
    Collocation(#[from] CollocationError),
    #[error(transparent)]
    Arithmetic(#[from] DsaError),
}

/// Where successive approximations are compared.
#[derive(Debug, Clone, PartialEq)]
pub enum Probe {
    /// One point, as in the classical protocol.
    Point(f64),
    /// Every listed point must have settled before stopping; the reported
    /// row value is the one at the point with the largest change.
    Points(Vec<f64>),
}

impl Probe {
    fn points(&self) -> &[f64] {
        match self {
            Probe::Point(p) => std::slice::from_ref(p),
            Probe::Points(ps) => ps,
        }
    }
}

/// One row of the degree-escalation report.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub degree: usize,
    pub value: StochasticValue,
    /// `v_n − v_prev` against the previous solved degree; absent on the first row.
    pub diff: Option<StochasticValue>,
    pub value_text: String,
    pub diff_text: Option<String>,
    pub diff_is_zero: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalResult {
    pub optimal_degree: usize,
    pub rows: Vec<TableRow>,
    pub converged: bool,
    /// Degrees whose system was singular, with the reason.
    pub skipped: Vec<(usize, String)>,
    pub log: DiagnosticLog,
}

impl OptimalResult {
    pub fn row(&self, degree: usize) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.degree == degree)
    }

    pub fn approximations(&self) -> Vec<&StochasticValue> {
        self.rows.iter().map(|r| &r.value).collect()
    }

    pub fn successive_diffs(&self) -> Vec<&StochasticValue> {
        self.rows.iter().filter_map(|r| r.diff.as_ref()).collect()
    }

    pub fn optimal_value(&self) -> &str {
        &self
            .row(self.optimal_degree)
            .expect("optimal degree has a row")
            .value_text
    }

    /// Last nonzero successive difference before the optimal degree.
    pub fn optimal_error(&self) -> Option<&TableRow> {
        self.rows
            .iter()
            .filter(|r| r.degree < self.optimal_degree || (!self.converged && r.degree == self.optimal_degree))
            .rfind(|r| r.diff.is_some() && !r.diff_is_zero)
    }

    /// `n,v_n,diff` with significant-digit strings.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,v_n,diff\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", r.degree, r.value_text, r.diff_text.as_deref().unwrap_or(""));
        }
        out
    }
}

/// Escalates the degree from `n_min` until successive approximations at the
/// probe agree to an informatical zero.
///
/// An informatical-zero difference found before `n_min + 3` is only
/// accepted once the following degree confirms it; later ones stop at once.
/// The optimal degree is the later degree of the first accepted pair.
pub fn optimal_solve(
    problem: &VolterraProblem,
    probe: &Probe,
    n_min: usize,
    n_max: usize,
    base: &CollocationConfig,
    dsa: &DsaConfig,
) -> Result<OptimalResult, AccuracyError> {
    let (a, b) = base.interval;
    for &p in probe.points() {
        if !(p > a && p <= b) {
            return Err(AccuracyError::ProbeOutside { probe: p, a, b });
        }
    }
    if n_max < n_min + 1 || n_max > MAX_DEGREE {
        return Err(AccuracyError::BadDegreeRange { n_min, n_max });
    }
    let mut ctx = StochasticContext::new(*dsa)?;
    let mut rows: Vec<TableRow> = Vec::new();
    let mut skipped = Vec::new();
    let mut previous: Option<Vec<StochasticValue>> = None;
    let mut pending: Option<usize> = None;
    let mut stop: Option<usize> = None;

    for n in n_min..=n_max {
        let cfg = base.with_degree(n);
        let sol = match collocation::solve(&mut ctx, problem, &cfg) {
            Ok(sol) => sol,
            Err(e) if e.is_singular() => {
                skipped.push((n, e.to_string()));
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let values = probe
            .points()
            .iter()
            .map(|&p| collocation::evaluate_solution(&mut ctx, &sol, p))
            .collect::<Result<Vec<_>, _>>()?;

        let row = match &previous {
            None => TableRow {
                degree: n,
                value_text: ctx.significant(&values[0]),
                value: values[0].clone(),
                diff: None,
                diff_text: None,
                diff_is_zero: false,
            },
            Some(prev) => {
                ctx.locate("successive_difference");
                let mut diffs = Vec::with_capacity(values.len());
                for (v, p) in values.iter().zip(prev) {
                    diffs.push(ctx.sub(v, p)?);
                }
                let all_zero = diffs.iter().all(|d| ctx.is_zero(d));
                let worst = (0..diffs.len())
                    .max_by(|&i, &j| diffs[i].mean().abs().total_cmp(&diffs[j].mean().abs()))
                    .expect("at least one probe point");
                let diff = diffs.swap_remove(worst).abs();
                TableRow {
                    degree: n,
                    value_text: ctx.significant(&values[worst]),
                    value: values[worst].clone(),
                    diff_text: Some(if all_zero {
                        INFORMATICAL_ZERO.to_string()
                    } else {
                        ctx.significant(&diff)
                    }),
                    diff: Some(diff),
                    diff_is_zero: all_zero,
                }
            }
        };
        let prev_degree = rows.last().map(|r| r.degree);
        let zero = row.diff_is_zero;
        rows.push(row);
        previous = Some(values);

        if zero {
            let from = prev_degree.expect("a difference implies a previous row");
            if let Some(first) = pending {
                stop = Some(first);
                break;
            }
            if from >= n_min + 3 {
                stop = Some(n);
                break;
            }
            pending = Some(n);
        } else {
            pending = None;
        }
    }

    if rows.is_empty() {
        return Err(AccuracyError::NothingSolved);
    }
    let (optimal_degree, converged) = match stop {
        Some(n) => (n, true),
        None => {
            // Best so far: the degree reached by the smallest change.
            let best = rows
                .iter()
                .filter_map(|r| r.diff.as_ref().map(|d| (r.degree, d.mean().abs())))
                .min_by(|x, y| x.1.total_cmp(&y.1))
                .map(|(n, _)| n)
                .unwrap_or(rows[0].degree);
            (best, false)
        }
    };
    Ok(OptimalResult {
        optimal_degree,
        rows,
        converged,
        skipped,
        log: ctx.take_log(),
    })
}

/// Per-degree comparison of the two digit counts `C_{x_n, x}` and
/// `C_{x_n, x_{n+1}}` at a probe point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapRow {
    pub degree: usize,
    pub exact_digits: f64,
    pub successive_digits: f64,
    pub gap: f64,
}

/// Plain-double harness for problems with a known solution.
///
/// Rows cover `degrees`; each needs the solution at the next degree too.
pub fn ncsd_gap(
    problem: &VolterraProblem,
    exact: impl Fn(f64) -> f64,
    probe: f64,
    degrees: std::ops::RangeInclusive<usize>,
    base: &CollocationConfig,
) -> Result<Vec<GapRow>, CollocationError> {
    let (lo, hi) = (*degrees.start(), *degrees.end());
    let values = (lo..=hi + 1)
        .map(|n| collocation::solve_plain(problem, &base.with_degree(n)).map(|s| s.eval(probe)))
        .collect::<Result<Vec<_>, _>>()?;
    let x = exact(probe);
    Ok((lo..=hi)
        .map(|n| {
            let vn = values[n - lo];
            let vnext = values[n - lo + 1];
            let exact_digits = crate::dsa::ncsd_pair(vn, x);
            let successive_digits = crate::dsa::ncsd_pair(vn, vnext);
            let gap = if exact_digits.is_infinite() && successive_digits.is_infinite() {
                0.0
            } else {
                (exact_digits - successive_digits).abs()
            };
            GapRow {
                degree: n,
                exact_digits,
                successive_digits,
                gap,
            }
        })
        .collect())
}

/// Built-in problems with a known solution and `K ≡ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Benchmark {
    /// `x = e^s`, `f = e^t − 1`
    Exp,
    /// `x = cos s`, `f = sin t`
    Sin,
    /// `x = 1 + s − s²/2 + s³/3 − s⁴/4`, exact from degree 4 on.
    Poly,
}

impl Benchmark {
    pub fn solution(self, s: f64) -> f64 {
        match self {
            Benchmark::Exp => s.exp(),
            Benchmark::Sin => s.cos(),
            Benchmark::Poly => 1.0 + s - s * s / 2.0 + s.powi(3) / 3.0 - s.powi(4) / 4.0,
        }
    }

    pub fn rhs(self, t: f64) -> f64 {
        match self {
            Benchmark::Exp => t.exp_m1(),
            Benchmark::Sin => t.sin(),
            Benchmark::Poly => t + t * t / 2.0 - t.powi(3) / 6.0 + t.powi(4) / 12.0 - t.powi(5) / 20.0,
        }
    }

    pub fn problem(self, interval: (f64, f64)) -> Result<VolterraProblem, crate::kernel::KernelError> {
        VolterraProblem::new(crate::kernel::PiecewiseKernel::unit(), move |t| self.rhs(t), interval)
    }
}

impl std::str::FromStr for Benchmark {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exp" => Ok(Benchmark::Exp),
            "sin" => Ok(Benchmark::Sin),
            "poly" => Ok(Benchmark::Poly),
            other => Err(format!("unknown benchmark {other:?} (expected exp, sin or poly)")),
        }
    }
}

/// Errors below this are treated as round-off.
pub const EXACT_ERROR_FLOOR: f64 = 1e-11;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub length: f64,
    pub max_error: f64,
    /// `log2(e_prev / e)` against the previous, twice as long interval.
    pub order: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub degree: usize,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    /// Every error is at round-off level, so no order can be observed.
    pub fn is_exact(&self) -> bool {
        self.rows.iter().all(|r| r.max_error < EXACT_ERROR_FLOOR)
    }

    pub fn orders(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.order).collect()
    }

    /// `length,max_error,order`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("length,max_error,order\n");
        for r in &self.rows {
            let order = match r.order {
                _ if self.is_exact() => "exact".to_string(),
                Some(o) => format!("{o:.4}"),
                None => String::new(),
            };
            let _ = writeln!(out, "{},{:.6e},{}", r.length, r.max_error, order);
        }
        out
    }
}

/// Solves on `[0, h]`, `[0, h/2]`, … and measures the maximum error on 51
/// equispaced points of each interval.
pub fn convergence_study(
    bench: Benchmark,
    degree: usize,
    initial_length: f64,
    halvings: usize,
) -> Result<ConvergenceTable, CollocationError> {
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(halvings + 1);
    for k in 0..=halvings {
        let h = initial_length / 2f64.powi(k as i32);
        let problem = bench.problem((0.0, h))?;
        let sol = collocation::solve_plain(&problem, &CollocationConfig::new(degree, (0.0, h)))?;
        let max_error = (0..=50)
            .map(|i| {
                let s = h * i as f64 / 50.0;
                (sol.eval(s) - bench.solution(s)).abs()
            })
            .fold(0.0, f64::max);
        let order = rows.last().map(|p| (p.max_error / max_error).log2());
        rows.push(ConvergenceRow {
            length: h,
            max_error,
            order,
        });
    }
    Ok(ConvergenceTable { degree, rows })
}
