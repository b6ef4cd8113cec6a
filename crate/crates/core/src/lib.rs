//! Certainty-equivalent control versus optimal stochastic control on
//! scenario trees.
//!
//! The crate builds the nominal (certainty-equivalent) MPC problem and the
//! tree-structured stochastic OCP for a finite disturbance set, evaluates
//! the certainty-equivalent policy exactly by enumeration, cross-checks both
//! against a grid dynamic-programming oracle and measures how the
//! suboptimality and the root-control gap scale with the uncertainty level.

// `!(a > b)` is how the validators reject NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod cec;
pub mod dp;
pub mod model;
pub mod solver;
pub mod study;
pub mod summation;
pub mod tree;
pub mod verify;

pub use autodiff::{Dual, Dual1, Dual2, Scalar, ScalarField};
pub use model::{BenchmarkModel, BenchmarkParams, LqModel, ModelSpec, NoiseSet, OcpModel};
pub use solver::{solve_nominal, solve_tree, NominalSolution, SolverOptions, TreeSolution};
pub use tree::ScenarioTree;
