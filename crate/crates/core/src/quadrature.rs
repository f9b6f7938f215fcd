//! Gauss–Legendre quadrature, generic over the arithmetic back end.

use crate::dsa::DsaError;
use crate::scalar::{Arithmetic, Plain};

/// Nodes and weights of an `order`-point Gauss–Legendre rule on [−1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    /// Computes the rule by Newton iteration on the Legendre recurrence.
    ///
    /// Exact for polynomials of degree `2 * order - 1`.
    pub fn gauss_legendre(order: usize) -> Self {
        assert!(order >= 1, "quadrature order must be positive");
        let n = order;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, z);
                dp = d;
                let step = p / d;
                z -= step;
                if step.abs() <= 1e-16 {
                    break;
                }
            }
            // Refresh the derivative at the converged node.
            let (_, d) = legendre_with_derivative(n, z);
            if d.is_finite() {
                dp = d;
            }
            let w = 2.0 / ((1.0 - z * z) * dp * dp);
            nodes[i] = -z;
            nodes[n - 1 - i] = z;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Nodes and weights mapped onto `[lo, hi]`.
    pub fn mapped(&self, lo: f64, hi: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, w * half))
    }
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p1 = 1.0;
    let mut p2 = 0.0;
    for j in 1..=n {
        let jf = j as f64;
        let p3 = p2;
        p2 = p1;
        p1 = ((2.0 * jf - 1.0) * z * p2 - (jf - 1.0) * p3) / jf;
    }
    let d = n as f64 * (z * p1 - p2) / (z * z - 1.0);
    (p1, d)
}

/// Integrates `f` over `[lo, hi]`; an empty interval integrates to zero.
///
/// Node positions and weights are data and enter the arithmetic as exact
/// constants; everything `f` computes and the weighted sum itself go
/// through `ar`.
pub fn integrate<A, F>(ar: &mut A, mut f: F, lo: f64, hi: f64, rule: &QuadratureRule) -> Result<A::Value, DsaError>
where
    A: Arithmetic,
    F: FnMut(&mut A, f64) -> Result<A::Value, DsaError>,
{
    let mut acc = ar.constant(0.0);
    if lo == hi {
        return Ok(acc);
    }
    for (s, w) in rule.mapped(lo, hi) {
        let fs = f(ar, s)?;
        let term = ar.mul(&ar.constant(w), &fs)?;
        acc = ar.add(&acc, &term)?;
    }
    Ok(acc)
}

/// Plain-double convenience wrapper around [`integrate`].
pub fn integrate_f64(f: impl Fn(f64) -> f64, lo: f64, hi: f64, rule: &QuadratureRule) -> f64 {
    integrate(&mut Plain, |_, s| Ok(f(s)), lo, hi, rule).expect("plain quadrature of finite values")
}
