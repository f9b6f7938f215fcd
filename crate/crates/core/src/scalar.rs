//! Arithmetic back ends shared by the quadrature, linear-algebra and
//! collocation code.
//!
//! Generic routines take `&mut A where A: Arithmetic` and never touch the
//! scalar representation directly, so the same code path runs in ordinary
//! double precision ([`Plain`]) or under stochastic arithmetic
//! ([`StochasticContext`]).

use std::fmt::Debug;

use crate::dsa::{DsaError, DsaOp, Instability, StochasticContext, StochasticValue};

pub trait Arithmetic {
    type Value: Clone + Debug;

    /// Lifts exactly known data into the scalar type.
    fn constant(&self, x: f64) -> Self::Value;

    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value, DsaError>;
    fn sub(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value, DsaError>;
    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value, DsaError>;
    fn div(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value, DsaError>;

    /// Best point estimate as a double (the sample mean for stochastic values).
    fn approx(&self, v: &Self::Value) -> f64;

    /// Whether `pivot` must be treated as zero given the magnitude `scale`
    /// of the column it was taken from.
    fn is_negligible_pivot(&mut self, pivot: &Self::Value, scale: f64) -> bool;

    /// Location tag for diagnostics. No-op for plain arithmetic.
    fn locate(&mut self, _tag: &'static str) {}
}

/// Relative pivot threshold for plain double precision.
pub const PLAIN_PIVOT_TOLERANCE: f64 = 1e-13;

/// Ordinary IEEE double arithmetic.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Plain;

fn finite(x: f64) -> Result<f64, DsaError> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(DsaError::Overflow)
    }
}

impl Arithmetic for Plain {
    type Value = f64;

    fn constant(&self, x: f64) -> f64 {
        x
    }

    fn add(&mut self, a: &f64, b: &f64) -> Result<f64, DsaError> {
        finite(a + b)
    }

    fn sub(&mut self, a: &f64, b: &f64) -> Result<f64, DsaError> {
        finite(a - b)
    }

    fn mul(&mut self, a: &f64, b: &f64) -> Result<f64, DsaError> {
        finite(a * b)
    }

    fn div(&mut self, a: &f64, b: &f64) -> Result<f64, DsaError> {
        finite(a / b)
    }

    fn approx(&self, v: &f64) -> f64 {
        *v
    }

    fn is_negligible_pivot(&mut self, pivot: &f64, scale: f64) -> bool {
        pivot.abs() < PLAIN_PIVOT_TOLERANCE * scale || *pivot == 0.0
    }
}

impl Arithmetic for StochasticContext {
    type Value = StochasticValue;

    fn constant(&self, x: f64) -> StochasticValue {
        self.exact(x)
    }

    fn add(&mut self, a: &StochasticValue, b: &StochasticValue) -> Result<StochasticValue, DsaError> {
        self.apply(DsaOp::Add, a, b)
    }

    fn sub(&mut self, a: &StochasticValue, b: &StochasticValue) -> Result<StochasticValue, DsaError> {
        self.apply(DsaOp::Sub, a, b)
    }

    fn mul(&mut self, a: &StochasticValue, b: &StochasticValue) -> Result<StochasticValue, DsaError> {
        self.apply(DsaOp::Mul, a, b)
    }

    fn div(&mut self, a: &StochasticValue, b: &StochasticValue) -> Result<StochasticValue, DsaError> {
        self.apply(DsaOp::Div, a, b)
    }

    fn approx(&self, v: &StochasticValue) -> f64 {
        v.mean()
    }

    fn is_negligible_pivot(&mut self, pivot: &StochasticValue, _scale: f64) -> bool {
        if self.is_zero(pivot) {
            self.note(Instability::StochasticZeroPivot);
            true
        } else {
            false
        }
    }

    fn locate(&mut self, tag: &'static str) {
        self.set_location(tag);
    }
}
