//! Piecewise-discontinuous Volterra kernels and the first-kind problem.
//!
//! A kernel `K(t, s)` on `0 ≤ s ≤ t` is split into pieces by boundary
//! curves `0 = α_0(t) ≤ α_1(t) ≤ … ≤ α_m(t) = t`; piece `p` carries its own
//! smooth function `K_p` on `[α_{p-1}(t), α_p(t)]`. The integral operator is
//! the sum of the per-piece integrals, so jump discontinuities along the
//! curves never fall inside a quadrature panel.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature::{integrate_f64, QuadratureRule};

/// Absolute slack, scaled by `max(1, |t|)`, used when comparing curves.
pub const CURVE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("point (t = {t}, s = {s}) is outside 0 <= s <= t")]
    OutOfDomain { t: f64, s: f64 },
    #[error("no kernel piece covers (t = {t}, s = {s})")]
    Uncovered { t: f64, s: f64 },
    #[error("bad fractions: {0}")]
    BadFractions(String),
    #[error("a kernel needs at least one piece")]
    NoPieces,
    #[error("invalid kernel spec `{0}`: expected `[v1,v2,...]@[f1,...]`")]
    Syntax(String),
    #[error("interval [{a}, {b}] is invalid: need 0 <= a < b")]
    BadInterval { a: f64, b: f64 },
    #[error("right-hand side is {value} at t = 0 (must vanish, relative tolerance 1e-10)")]
    RhsNotZeroAtOrigin { value: f64 },
    #[error("kernel is invalid: {0}")]
    Invalid(Violation),
}

/// A boundary curve `s = α(t)`.
#[derive(Clone)]
pub struct BoundaryCurve {
    rule: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    label: String,
}

impl BoundaryCurve {
    pub fn new(label: impl Into<String>, rule: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            rule: Arc::new(rule),
            label: label.into(),
        }
    }

    pub fn zero() -> Self {
        Self::new("0", |_| 0.0)
    }

    /// The diagonal `α(t) = t`.
    pub fn diagonal() -> Self {
        Self::new("t", |t| t)
    }

    /// `α(t) = q t`
    pub fn fraction(q: f64) -> Self {
        Self::new(format!("{q}*t"), move |t| q * t)
    }

    pub fn at(&self, t: f64) -> f64 {
        (self.rule)(t)
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

impl fmt::Debug for BoundaryCurve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BoundaryCurve({})", self.label)
    }
}

type KernelFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// One piece `K_p` on `[lower(t), upper(t)]`.
#[derive(Clone)]
pub struct KernelPiece {
    pub lower: BoundaryCurve,
    pub upper: BoundaryCurve,
    value: KernelFn,
    label: String,
}

impl KernelPiece {
    pub fn new(
        lower: BoundaryCurve,
        upper: BoundaryCurve,
        label: impl Into<String>,
        value: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            lower,
            upper,
            value: Arc::new(value),
            label: label.into(),
        }
    }

    pub fn constant(lower: BoundaryCurve, upper: BoundaryCurve, k: f64) -> Self {
        Self::new(lower, upper, format!("{k}"), move |_, _| k)
    }

    pub fn value(&self, t: f64, s: f64) -> f64 {
        (self.value)(t, s)
    }

    /// `(lower(t), upper(t))`
    pub fn bounds(&self, t: f64) -> (f64, f64) {
        (self.lower.at(t), self.upper.at(t))
    }
}

impl fmt::Debug for KernelPiece {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "KernelPiece({} on [{}, {}])",
            self.label,
            self.lower.label(),
            self.upper.label()
        )
    }
}

/// A problem with the kernel found at validation time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// `α_0(t) ≠ 0`
    FirstCurveNonzero { t: f64, value: f64 },
    /// Piece `piece` has its lower curve above its upper curve.
    Misordered { t: f64, piece: usize },
    /// Piece `piece` does not start where piece `piece - 1` ends.
    Gap { t: f64, piece: usize },
    /// `α_m(t) ≠ t`
    LastCurveNotDiagonal { t: f64, value: f64 },
    /// `K_m(t, t) = 0`, which makes the first-kind equation unsolvable.
    ZeroDiagonal { t: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::FirstCurveNonzero { t, value } => write!(f, "t = {t}: first curve is {value}, not 0"),
            Violation::Misordered { t, piece } => write!(f, "t = {t}: piece {piece} has lower bound above upper bound"),
            Violation::Gap { t, piece } => write!(f, "t = {t}: piece {piece} does not start where piece {} ends", piece - 1),
            Violation::LastCurveNotDiagonal { t, value } => write!(f, "t = {t}: last curve is {value}, not t"),
            Violation::ZeroDiagonal { t } => write!(f, "t = {t}: K(t, t) = 0"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PiecewiseKernel {
    pieces: Vec<KernelPiece>,
}

fn tol(t: f64) -> f64 {
    CURVE_TOLERANCE * t.abs().max(1.0)
}

impl PiecewiseKernel {
    pub fn new(pieces: Vec<KernelPiece>) -> Result<Self, KernelError> {
        if pieces.is_empty() {
            return Err(KernelError::NoPieces);
        }
        Ok(Self { pieces })
    }

    /// Single-piece kernel on `[0, t]`.
    pub fn classical(label: impl Into<String>, k: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            pieces: vec![KernelPiece::new(BoundaryCurve::zero(), BoundaryCurve::diagonal(), label, k)],
        }
    }

    /// `K ≡ 1`
    pub fn unit() -> Self {
        Self::piecewise_constant(&[1.0], &[]).expect("unit kernel is valid")
    }

    /// Kernel with `α_p(t) = fractions[p-1] · t` and `K_p = values[p]`.
    pub fn piecewise_constant(values: &[f64], fractions: &[f64]) -> Result<Self, KernelError> {
        if values.is_empty() {
            return Err(KernelError::NoPieces);
        }
        if fractions.len() + 1 != values.len() {
            return Err(KernelError::BadFractions(format!(
                "{} values need {} fractions, got {}",
                values.len(),
                values.len() - 1,
                fractions.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(KernelError::BadFractions(format!("kernel value {v} is not finite")));
        }
        if fractions.iter().any(|&q| !(q > 0.0 && q < 1.0)) {
            return Err(KernelError::BadFractions("fractions must lie strictly inside (0, 1)".into()));
        }
        if fractions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(KernelError::BadFractions("fractions must be strictly increasing".into()));
        }
        let mut curves = Vec::with_capacity(values.len() + 1);
        curves.push(BoundaryCurve::zero());
        curves.extend(fractions.iter().map(|&q| BoundaryCurve::fraction(q)));
        curves.push(BoundaryCurve::diagonal());
        let pieces = values
            .iter()
            .enumerate()
            .map(|(p, &k)| KernelPiece::constant(curves[p].clone(), curves[p + 1].clone(), k))
            .collect();
        Ok(Self { pieces })
    }

    /// Storage-efficiency kernel: 1 on `[0, t/4)`, 0.9 on `[t/4, 3t/4)` and
    /// 0.85 on `[3t/4, t]`.
    ///
    /// The last piece ends at `t`, the upper limit of the Volterra integral.
    pub fn storage_efficiency() -> Self {
        Self::piecewise_constant(&[1.0, 0.9, 0.85], &[0.25, 0.75]).expect("storage kernel is valid")
    }

    pub fn pieces(&self) -> &[KernelPiece] {
        &self.pieces
    }

    /// Pieces with their bounds at `t`, sorted along `s`.
    pub fn ordered_pieces(&self, t: f64) -> Vec<(f64, f64, &KernelPiece)> {
        let mut out: Vec<_> = self
            .pieces
            .iter()
            .map(|p| {
                let (lo, hi) = p.bounds(t);
                (lo, hi, p)
            })
            .collect();
        out.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
        out
    }

    pub fn piece_count(&self) -> usize {
        self.pieces.len()
    }

    /// Index of the piece adjacent to the diagonal (largest upper bound).
    fn diagonal_piece(&self, t: f64) -> usize {
        (0..self.pieces.len())
            .max_by(|&a, &b| self.pieces[a].upper.at(t).total_cmp(&self.pieces[b].upper.at(t)))
            .expect("kernel has pieces")
    }

    /// `K(t, s)` with half-open pieces `[α_{p-1}(t), α_p(t))`; `s = t`
    /// belongs to the diagonal piece.
    pub fn evaluate(&self, t: f64, s: f64) -> Result<f64, KernelError> {
        if !(s >= 0.0 && s <= t) {
            return Err(KernelError::OutOfDomain { t, s });
        }
        if let Some(p) = self.pieces.iter().find(|p| {
            let (lo, hi) = p.bounds(t);
            lo <= s && s < hi
        }) {
            return Ok(p.value(t, s));
        }
        let d = &self.pieces[self.diagonal_piece(t)];
        if (s - d.upper.at(t)).abs() <= tol(t) {
            return Ok(d.value(t, s));
        }
        Err(KernelError::Uncovered { t, s })
    }

    /// Checks the chain ordering and the diagonal at `n_check` points of
    /// `(a, b]`. Pieces may be listed in any order; at each `t` they are
    /// chained by their bounds. An empty result means the kernel is valid.
    pub fn validate(&self, interval: (f64, f64), n_check: usize) -> Vec<Violation> {
        let n_check = n_check.max(2);
        let (a, b) = interval;
        let mut out = Vec::new();
        for k in 1..=n_check {
            let t = a + (b - a) * k as f64 / n_check as f64;
            let eps = tol(t);
            let mut order: Vec<usize> = (0..self.pieces.len()).collect();
            order.sort_by(|&i, &j| {
                let (li, ui) = self.pieces[i].bounds(t);
                let (lj, uj) = self.pieces[j].bounds(t);
                li.total_cmp(&lj).then(ui.total_cmp(&uj))
            });
            let first = self.pieces[order[0]].lower.at(t);
            if first.abs() > eps {
                out.push(Violation::FirstCurveNonzero { t, value: first });
            }
            for (q, &p) in order.iter().enumerate() {
                let (lo, hi) = self.pieces[p].bounds(t);
                if lo > hi + eps {
                    out.push(Violation::Misordered { t, piece: p });
                }
                if q > 0 && (lo - self.pieces[order[q - 1]].upper.at(t)).abs() > eps {
                    out.push(Violation::Gap { t, piece: p });
                }
            }
            let last = self.pieces[order[order.len() - 1]].upper.at(t);
            if (last - t).abs() > eps {
                out.push(Violation::LastCurveNotDiagonal { t, value: last });
            }
            let d = &self.pieces[self.diagonal_piece(t)];
            if d.value(t, t) == 0.0 {
                out.push(Violation::ZeroDiagonal { t });
            }
        }
        out
    }

    /// `Σ_p ∫_{α_{p-1}(t)}^{α_p(t)} K_p(t, s) x(s) ds` with `order`-point
    /// Gauss–Legendre on every piece.
    pub fn apply(&self, t: f64, x: impl Fn(f64) -> f64, order: usize) -> f64 {
        let rule = QuadratureRule::gauss_legendre(order);
        self.apply_with(t, &x, &rule)
    }

    pub fn apply_with(&self, t: f64, x: &dyn Fn(f64) -> f64, rule: &QuadratureRule) -> f64 {
        self.ordered_pieces(t)
            .into_iter()
            .map(|(lo, hi, p)| {
                if hi > lo {
                    integrate_f64(|s| p.value(t, s) * x(s), lo, hi, rule)
                } else {
                    0.0
                }
            })
            .sum()
    }
}

/// Serializable description of a piecewise-constant kernel.
///
/// Textual form: `[1,0.9,0.85]@[0.25,0.75]`; a single value needs no `@`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub values: Vec<f64>,
    #[serde(default)]
    pub fractions: Vec<f64>,
}

impl KernelSpec {
    pub fn storage_efficiency() -> Self {
        Self {
            values: vec![1.0, 0.9, 0.85],
            fractions: vec![0.25, 0.75],
        }
    }

    pub fn build(&self) -> Result<PiecewiseKernel, KernelError> {
        PiecewiseKernel::piecewise_constant(&self.values, &self.fractions)
    }
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self::storage_efficiency()
    }
}

fn parse_list(s: &str, whole: &str) -> Result<Vec<f64>, KernelError> {
    let s = s.trim();
    let inner = s
        .strip_prefix('[')
        .and_then(|r| r.strip_suffix(']'))
        .unwrap_or(s)
        .trim();
    if inner.is_empty() {
        return Ok(Vec::new());
    }
    inner
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| KernelError::Syntax(whole.to_string())))
        .collect()
}

impl FromStr for KernelSpec {
    type Err = KernelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (values, fractions) = match s.split_once('@') {
            Some((v, f)) => (parse_list(v, s)?, parse_list(f, s)?),
            None => (parse_list(s, s)?, Vec::new()),
        };
        if values.is_empty() {
            return Err(KernelError::Syntax(s.to_string()));
        }
        Ok(Self { values, fractions })
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        write!(f, "[{}]@[{}]", join(&self.values), join(&self.fractions))
    }
}

/// `∫_0^t K(t, s) x(s) ds = f(t)` on `[a, b]`.
#[derive(Clone)]
pub struct VolterraProblem {
    pub kernel: PiecewiseKernel,
    rhs: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub interval: (f64, f64),
}

impl VolterraProblem {
    /// Builds the problem, rejecting kernels that fail [`PiecewiseKernel::validate`]
    /// and right-hand sides with `f(0) ≠ 0`.
    pub fn new(
        kernel: PiecewiseKernel,
        rhs: impl Fn(f64) -> f64 + Send + Sync + 'static,
        interval: (f64, f64),
    ) -> Result<Self, KernelError> {
        let (a, b) = interval;
        if !(a >= 0.0 && b > a && b.is_finite()) {
            return Err(KernelError::BadInterval { a, b });
        }
        if let Some(v) = kernel.validate(interval, 64).first() {
            return Err(KernelError::Invalid(*v));
        }
        if a == 0.0 {
            let scale = (0..=100)
                .map(|k| rhs(b * k as f64 / 100.0).abs())
                .fold(0.0, f64::max);
            let f0 = rhs(0.0);
            if f0.abs() > 1e-10 * scale.max(f64::MIN_POSITIVE) {
                return Err(KernelError::RhsNotZeroAtOrigin { value: f0 });
            }
        }
        Ok(Self {
            kernel,
            rhs: Arc::new(rhs),
            interval,
        })
    }

    pub fn rhs(&self, t: f64) -> f64 {
        (self.rhs)(t)
    }

    /// Same kernel and right-hand side on another interval.
    pub fn on_interval(&self, interval: (f64, f64)) -> Result<Self, KernelError> {
        let rhs = Arc::clone(&self.rhs);
        Self::new(self.kernel.clone(), move |t| rhs(t), interval)
    }
}

impl fmt::Debug for VolterraProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VolterraProblem")
            .field("kernel", &self.kernel)
            .field("interval", &self.interval)
            .finish_non_exhaustive()
    }
}
