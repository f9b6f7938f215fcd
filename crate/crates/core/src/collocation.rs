//! Taylor-collocation for first-kind Volterra equations.
//!
//! The unknown is replaced by its degree-`n` Taylor polynomial at `c`,
//! `x̄(s) = Σ_j x^(j)(c) (s − c)^j / j!`, and the integral equation is
//! enforced at `n + 1` collocation points `r_i`. This gives the dense
//! system `A V = F` with
//!
//! ```text
//! A_ij = (1/j!) Σ_p ∫_{α_{p-1}(r_i)}^{α_p(r_i)} K_p(r_i, s) (s − c)^j ds,   F_i = f(r_i),
//! ```
//!
//! whose solution `V` holds the raw derivatives `x^(j)(c)`.
//!
//! The collocation points are `r_i = a + (b − a)(i + 1)/(n + 1)`. Starting
//! the uniform grid at `a` instead would, for `a = 0`, produce a row of
//! zeros (every integral over `[0, 0]` vanishes and `f(0) = 0`), so the grid
//! is shifted one step to the right.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsa::DsaError;
use crate::kernel::{KernelError, VolterraProblem};
use crate::linalg::{lu_solve, DenseSystem, LinalgError};
use crate::quadrature::QuadratureRule;
use crate::scalar::{Arithmetic, Plain};

/// Highest supported Taylor degree.
pub const MAX_DEGREE: usize = 25;

/// Minimum Gauss–Legendre order per kernel piece.
pub const MIN_QUADRATURE_ORDER: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CollocationError {
    #[error("degree {0} exceeds the maximum of {MAX_DEGREE}")]
    DegreeTooHigh(usize),
    #[error("interval [{a}, {b}] is invalid")]
    BadInterval { a: f64, b: f64 },
    #[error("expansion point {c} lies outside [{a}, {b}]")]
    ExpansionPointOutside { c: f64, a: f64, b: f64 },
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Arithmetic(#[from] DsaError),
}

impl CollocationError {
    pub fn is_singular(&self) -> bool {
        matches!(self, CollocationError::Linalg(LinalgError::SingularMatrix { .. }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ExpansionPoint {
    #[default]
    Midpoint,
    At(f64),
}

impl Serialize for ExpansionPoint {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ExpansionPoint::Midpoint => s.serialize_str("midpoint"),
            ExpansionPoint::At(c) => s.serialize_f64(*c),
        }
    }
}

impl<'de> Deserialize<'de> for ExpansionPoint {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(c) => Ok(ExpansionPoint::At(c)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl std::str::FromStr for ExpansionPoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "midpoint" {
            return Ok(ExpansionPoint::Midpoint);
        }
        s.parse::<f64>()
            .map(ExpansionPoint::At)
            .map_err(|_| format!("expected \"midpoint\" or a number, got {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollocationConfig {
    pub degree: usize,
    #[serde(default)]
    pub expansion_point: ExpansionPoint,
    pub interval: (f64, f64),
    #[serde(default = "default_min_order")]
    pub min_quadrature_order: usize,
}

fn default_min_order() -> usize {
    MIN_QUADRATURE_ORDER
}

impl CollocationConfig {
    pub fn new(degree: usize, interval: (f64, f64)) -> Self {
        Self {
            degree,
            expansion_point: ExpansionPoint::Midpoint,
            interval,
            min_quadrature_order: MIN_QUADRATURE_ORDER,
        }
    }

    pub fn with_expansion_point(mut self, c: ExpansionPoint) -> Self {
        self.expansion_point = c;
        self
    }

    pub fn with_degree(mut self, degree: usize) -> Self {
        self.degree = degree;
        self
    }

    pub fn center(&self) -> f64 {
        match self.expansion_point {
            ExpansionPoint::Midpoint => 0.5 * (self.interval.0 + self.interval.1),
            ExpansionPoint::At(c) => c,
        }
    }

    /// Gauss–Legendre order used on each kernel piece.
    pub fn quadrature_order(&self) -> usize {
        self.min_quadrature_order.max(self.degree + 2)
    }

    pub fn validate(&self) -> Result<(), CollocationError> {
        let (a, b) = self.interval;
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(CollocationError::BadInterval { a, b });
        }
        if self.degree > MAX_DEGREE {
            return Err(CollocationError::DegreeTooHigh(self.degree));
        }
        let c = self.center();
        if !(c >= a && c <= b) {
            return Err(CollocationError::ExpansionPointOutside { c, a, b });
        }
        Ok(())
    }
}

/// Derivatives `x^(j)(c)`, `j = 0..=n`, of the collocation solution.
#[derive(Debug, Clone, PartialEq)]
pub struct TaylorSolution<T> {
    pub derivs: Vec<T>,
    pub center: f64,
}

impl<T> TaylorSolution<T> {
    pub fn degree(&self) -> usize {
        self.derivs.len() - 1
    }
}

impl TaylorSolution<f64> {
    pub fn eval(&self, s: f64) -> f64 {
        evaluate_solution(&mut Plain, self, s).expect("plain Horner evaluation")
    }
}

pub fn collocation_points(a: f64, b: f64, n: usize) -> Vec<f64> {
    let m = (n + 1) as f64;
    (0..=n).map(|i| a + (b - a) * (i + 1) as f64 / m).collect()
}

fn factorial(j: usize) -> f64 {
    (1..=j).map(|k| k as f64).product()
}

/// Builds `A` and `F` for the given degree.
pub fn assemble<A: Arithmetic>(
    ar: &mut A,
    problem: &VolterraProblem,
    cfg: &CollocationConfig,
) -> Result<DenseSystem<A::Value>, CollocationError> {
    cfg.validate()?;
    ar.locate("assemble");
    let (a, b) = cfg.interval;
    let n = cfg.degree;
    let c = cfg.center();
    let rule = QuadratureRule::gauss_legendre(cfg.quadrature_order());
    let center = ar.constant(c);
    let one = ar.constant(1.0);

    let points = collocation_points(a, b, n);
    let mut matrix = Vec::with_capacity(n + 1);
    let mut rhs = Vec::with_capacity(n + 1);
    for &r in &points {
        let mut acc: Vec<A::Value> = vec![ar.constant(0.0); n + 1];
        for (lo, hi, piece) in problem.kernel.ordered_pieces(r) {
            if hi <= lo {
                continue;
            }
            for (s, w) in rule.mapped(lo, hi) {
                let weight = ar.constant(w * piece.value(r, s));
                let ds = ar.sub(&ar.constant(s), &center)?;
                let mut power = one.clone();
                for slot in acc.iter_mut() {
                    let term = ar.mul(&weight, &power)?;
                    *slot = ar.add(slot, &term)?;
                    power = ar.mul(&power, &ds)?;
                }
            }
        }
        let row = acc
            .iter()
            .enumerate()
            .map(|(j, v)| ar.div(v, &ar.constant(factorial(j))))
            .collect::<Result<Vec<_>, _>>()?;
        matrix.push(row);
        rhs.push(ar.constant(problem.rhs(r)));
    }
    Ok(DenseSystem::new(matrix, rhs)?)
}

pub fn solve<A: Arithmetic>(
    ar: &mut A,
    problem: &VolterraProblem,
    cfg: &CollocationConfig,
) -> Result<TaylorSolution<A::Value>, CollocationError> {
    let sys = assemble(ar, problem, cfg)?;
    let derivs = lu_solve(ar, sys)?;
    Ok(TaylorSolution {
        derivs,
        center: cfg.center(),
    })
}

pub fn solve_plain(problem: &VolterraProblem, cfg: &CollocationConfig) -> Result<TaylorSolution<f64>, CollocationError> {
    solve(&mut Plain, problem, cfg)
}

/// Horner evaluation of `Σ_j x^(j)(c) (s − c)^j / j!`.
pub fn evaluate_solution<A: Arithmetic>(ar: &mut A, sol: &TaylorSolution<A::Value>, s: f64) -> Result<A::Value, DsaError> {
    ar.locate("evaluate_solution");
    let ds = ar.sub(&ar.constant(s), &ar.constant(sol.center))?;
    let n = sol.derivs.len() - 1;
    let mut acc = sol.derivs[n].clone();
    for j in (0..n).rev() {
        let t = ar.mul(&acc, &ds)?;
        let t = ar.div(&t, &ar.constant((j + 1) as f64))?;
        acc = ar.add(&sol.derivs[j], &t)?;
    }
    Ok(acc)
}

/// `max_i |Σ_p ∫ K_p(r_i, s) x̄(s) ds − f(r_i)|` over the collocation points.
pub fn collocation_residual(problem: &VolterraProblem, cfg: &CollocationConfig, sol: &TaylorSolution<f64>) -> f64 {
    let (a, b) = cfg.interval;
    let order = cfg.quadrature_order();
    collocation_points(a, b, sol.degree())
        .into_iter()
        .map(|r| (problem.kernel.apply(r, |s| sol.eval(s), order) - problem.rhs(r)).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::PiecewiseKernel;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn collocation_point_examples() {
        assert_eq!(collocation_points(0.0, 1.0, 0), vec![1.0]);
        assert_eq!(collocation_points(0.0, 24.0, 2), vec![8.0, 16.0, 24.0]);
        assert_eq!(collocation_points(0.0, 1.0, 3), vec![0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn assemble_degree_zero_unit_kernel() {
        let p = VolterraProblem::new(PiecewiseKernel::unit(), |t| t, (0.0, 1.0)).unwrap();
        let cfg = CollocationConfig::new(0, (0.0, 1.0)).with_expansion_point(ExpansionPoint::At(0.0));
        let sys = assemble(&mut Plain, &p, &cfg).unwrap();
        assert!(close(sys.matrix[0][0], 1.0, 1e-15));
        assert_eq!(sys.rhs, vec![1.0]);
    }

    #[test]
    fn assemble_degree_one_by_hand() {
        // r = [0.5, 1]; A_i0 = r_i, A_i1 = ∫_0^{r_i} s ds = r_i^2 / 2
        let p = VolterraProblem::new(PiecewiseKernel::unit(), |t| t * t / 2.0, (0.0, 1.0)).unwrap();
        let cfg = CollocationConfig::new(1, (0.0, 1.0)).with_expansion_point(ExpansionPoint::At(0.0));
        let sys = assemble(&mut Plain, &p, &cfg).unwrap();
        let expected = [[0.5, 0.125], [1.0, 0.5]];
        for i in 0..2 {
            for j in 0..2 {
                assert!(close(sys.matrix[i][j], expected[i][j], 1e-15), "{:?}", sys.matrix);
            }
        }
    }

    #[test]
    fn storage_kernel_first_column() {
        let p = VolterraProblem::new(PiecewiseKernel::storage_efficiency(), |t| t, (0.0, 24.0)).unwrap();
        let cfg = CollocationConfig::new(4, (0.0, 24.0));
        let sys = assemble(&mut Plain, &p, &cfg).unwrap();
        for (row, r) in sys.matrix.iter().zip(collocation_points(0.0, 24.0, 4)) {
            assert!(close(row[0], 0.9125 * r, 1e-12 * r));
        }
    }

    #[test]
    fn solve_constant_solution() {
        let p = VolterraProblem::new(PiecewiseKernel::unit(), |t| t, (0.0, 1.0)).unwrap();
        let sol = solve_plain(&p, &CollocationConfig::new(0, (0.0, 1.0))).unwrap();
        assert!(close(sol.derivs[0], 1.0, 1e-14));
    }

    #[test]
    fn solve_linear_solution_at_origin() {
        let p = VolterraProblem::new(PiecewiseKernel::unit(), |t| t * t / 2.0, (0.0, 1.0)).unwrap();
        let cfg = CollocationConfig::new(1, (0.0, 1.0)).with_expansion_point(ExpansionPoint::At(0.0));
        let sol = solve_plain(&p, &cfg).unwrap();
        assert!(close(sol.derivs[0], 0.0, 1e-14));
        assert!(close(sol.derivs[1], 1.0, 1e-14));
    }

    #[test]
    fn storage_kernel_recovers_constant() {
        let k = PiecewiseKernel::storage_efficiency();
        let p = VolterraProblem::new(k, |t| 0.9125 * t, (0.0, 24.0)).unwrap();
        let sol = solve_plain(&p, &CollocationConfig::new(2, (0.0, 24.0))).unwrap();
        for i in 0..=24 {
            assert!(close(sol.eval(i as f64), 1.0, 1e-8));
        }
    }

    #[test]
    fn horner_examples() {
        let s = |d: Vec<f64>, c| TaylorSolution { derivs: d, center: c };
        assert_eq!(s(vec![5.0], 0.0).eval(17.0), 5.0);
        assert_eq!(s(vec![0.0, 1.0], 0.0).eval(3.5), 3.5);
        assert_eq!(s(vec![1.0, 1.0, 1.0], 0.0).eval(1.0), 2.5);
    }

    #[test]
    fn config_validation() {
        assert!(matches!(
            CollocationConfig::new(26, (0.0, 1.0)).validate(),
            Err(CollocationError::DegreeTooHigh(26))
        ));
        assert!(CollocationConfig::new(3, (1.0, 1.0)).validate().is_err());
        assert!(CollocationConfig::new(3, (0.0, 1.0))
            .with_expansion_point(ExpansionPoint::At(2.0))
            .validate()
            .is_err());
        assert_eq!(CollocationConfig::new(3, (0.0, 24.0)).center(), 12.0);
        assert_eq!(CollocationConfig::new(3, (0.0, 24.0)).quadrature_order(), 16);
        assert_eq!(CollocationConfig::new(20, (0.0, 24.0)).quadrature_order(), 22);
    }

    #[test]
    fn expansion_point_serde() {
        let m: ExpansionPoint = serde_json::from_str("\"midpoint\"").unwrap();
        assert_eq!(m, ExpansionPoint::Midpoint);
        let x: ExpansionPoint = serde_json::from_str("0.5").unwrap();
        assert_eq!(x, ExpansionPoint::At(0.5));
        assert!(serde_json::from_str::<ExpansionPoint>("\"left\"").is_err());
        assert_eq!(serde_json::to_string(&ExpansionPoint::Midpoint).unwrap(), "\"midpoint\"");
    }
}
