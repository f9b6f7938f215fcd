//! Taylor-collocation for first-kind Volterra integral equations with
//! piecewise-discontinuous kernels, validated by discrete stochastic
//! arithmetic, plus a storage load-leveling application built on top.

pub mod accuracy;
pub mod cli;
pub mod collocation;
pub mod config;
pub mod dsa;
pub mod kernel;
pub mod linalg;
pub mod load_leveling;
pub mod quadrature;
pub mod scalar;

pub use collocation::{CollocationConfig, ExpansionPoint, TaylorSolution};
pub use dsa::{DsaConfig, StochasticContext, StochasticValue};
pub use kernel::{KernelSpec, PiecewiseKernel, VolterraProblem};
pub use scalar::{Arithmetic, Plain};
