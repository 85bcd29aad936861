//! Regularized exp-concave empirical minimization over a Euclidean ball.
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below fix the precision the acceptance thresholds assume.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bounds;
pub mod calculus;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod problem;
pub mod rng;
pub mod scalar;
pub mod solver;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Domain64 = problem::Domain<f64>;
pub type Sample64 = problem::Sample<f64>;
pub type Loss64 = problem::Loss<f64>;
pub type Regularizer64 = problem::Regularizer<f64>;
pub type Constants64 = problem::Constants<f64>;
pub type ProblemSpec64 = problem::ProblemSpec<f64>;
pub type Certificate64 = calculus::Certificate<f64>;
pub type SamplingPlan64 = calculus::SamplingPlan<f64>;

pub type SolverConfig64 = solver::SolverConfig<f64>;
pub type SolverResult64 = solver::SolverResult<f64>;
pub type BoundReport64 = bounds::BoundReport<f64>;
pub type FiniteDistribution64 = experiments::FiniteDistribution<f64>;
pub type ExperimentConfig64 = experiments::ExperimentConfig<f64>;

pub type Domain32 = problem::Domain<f32>;
pub type Loss32 = problem::Loss<f32>;
pub type ProblemSpec32 = problem::ProblemSpec<f32>;
pub type SolverConfig32 = solver::SolverConfig<f32>;
