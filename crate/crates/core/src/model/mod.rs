//! Optimal-control problem data: dynamics, stage cost, terminal cost, horizon
//! and the finite disturbance distribution.
//!
//! Models are evaluated through the generic [`OcpModel`] methods, so the same
//! definition serves plain simulation, gradients and Hessian-vector products.

mod benchmark;
mod lq;
mod riccati;

pub use benchmark::{
    benchmark_dynamics, benchmark_ode, benchmark_stage_cost, benchmark_terminal_cost, linearize_at_origin,
    smoothed_penalty, BenchmarkModel, BenchmarkParams,
};
pub use lq::{make_lq_model, LqModel};
pub use riccati::{dare_fixed_point, riccati_terminal_weight, RICCATI_MAX_ITERS, RICCATI_TOL};

use serde::Serialize;
use thiserror::Error;

use crate::autodiff::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("noise distribution: {0}")]
    Noise(String),
    #[error("Riccati iteration did not converge after {iters} iterations (residual {residual:e}); is the pair stabilizable?")]
    RiccatiDivergence { iters: usize, residual: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Finite disturbance support with probabilities.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoiseSet {
    values: Vec<Vec<f64>>,
    probs: Vec<f64>,
}

impl NoiseSet {
    /// Checks shapes and that the probabilities form a distribution.
    pub fn new(values: Vec<Vec<f64>>, probs: Vec<f64>) -> Result<Self, ModelError> {
        if values.is_empty() {
            return Err(ModelError::Noise("support must not be empty".into()));
        }
        if values.len() != probs.len() {
            return Err(ModelError::Noise(format!(
                "{} support points but {} probabilities",
                values.len(),
                probs.len()
            )));
        }
        let dim = values[0].len();
        if values.iter().any(|w| w.len() != dim) {
            return Err(ModelError::Noise("support points have differing dimensions".into()));
        }
        if probs.iter().any(|&p| !(p >= 0.0)) {
            return Err(ModelError::Noise("probabilities must be nonnegative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-15 {
            return Err(ModelError::Noise(format!("probabilities sum to {total}, not 1")));
        }
        Ok(NoiseSet { values, probs })
    }

    /// `{-1, 1}` with probability ½ each.
    pub fn symmetric_binary() -> Self {
        NoiseSet { values: vec![vec![-1.0], vec![1.0]], probs: vec![0.5, 0.5] }
    }

    /// All sign patterns in `dim` dimensions, uniformly weighted: zero mean,
    /// identity covariance.
    pub fn product_binary(dim: usize) -> Self {
        let m = 1usize << dim;
        let values = (0..m)
            .map(|bits| (0..dim).map(|j| if bits >> j & 1 == 1 { 1.0 } else { -1.0 }).collect())
            .collect();
        NoiseSet { values, probs: vec![1.0 / m as f64; m] }
    }

    /// `{-a, 0, a}` with `a = √(3/2)` and uniform weights: unit variance.
    pub fn symmetric_ternary() -> Self {
        let a = 1.5f64.sqrt();
        NoiseSet { values: vec![vec![-a], vec![0.0], vec![a]], probs: vec![1.0 / 3.0; 3] }
    }

    /// The single point zero (the nominal problem).
    pub fn singleton_zero(dim: usize) -> Self {
        NoiseSet { values: vec![vec![0.0; dim]], probs: vec![1.0] }
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn is_uniform(&self) -> bool {
        let p = 1.0 / self.len() as f64;
        self.probs.iter().all(|&q| (q - p).abs() <= 1e-15)
    }

    /// True when `-w` is in the support with the same weight for every `w`.
    pub fn is_symmetric(&self) -> bool {
        self.values.iter().zip(&self.probs).all(|(w, p)| {
            self.values
                .iter()
                .zip(&self.probs)
                .any(|(v, q)| v.iter().zip(w).all(|(a, b)| *a == -*b) && p == q)
        })
    }

    /// Zero mean and identity covariance, to `tol`.
    pub fn check_moments(&self, tol: f64) -> Result<(), ModelError> {
        let d = self.dim();
        for i in 0..d {
            let mean: f64 = self.values.iter().zip(&self.probs).map(|(w, p)| p * w[i]).sum();
            if mean.abs() > tol {
                return Err(ModelError::Noise(format!("component {i} has mean {mean}")));
            }
            for j in 0..d {
                let cov: f64 = self.values.iter().zip(&self.probs).map(|(w, p)| p * w[i] * w[j]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                if (cov - target).abs() > tol {
                    return Err(ModelError::Noise(format!("second moment ({i},{j}) is {cov}")));
                }
            }
        }
        Ok(())
    }
}

/// A time-invariant discrete-time optimal control problem with additive
/// scaling of a finite disturbance.
pub trait OcpModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn horizon(&self) -> usize;
    fn noise(&self) -> &NoiseSet;

    /// Writes `f(x, u, w)` into `next`; `w` is the already-scaled disturbance.
    fn dynamics<S: Scalar>(&self, x: &[S], u: &[S], w: &[f64], next: &mut [S]);

    fn stage_cost<S: Scalar>(&self, x: &[S], u: &[S]) -> S;

    fn terminal_cost<S: Scalar>(&self, x: &[S]) -> S;

    /// Zero-disturbance forward simulation of a control trajectory; returns
    /// `len(u)/n_u + 1` states, flattened.
    fn simulate_nominal(&self, x0: &[f64], u: &[f64]) -> Vec<f64> {
        let (nx, nu) = (self.state_dim(), self.control_dim());
        let steps = u.len() / nu;
        let zero_w = vec![0.0; self.noise_dim()];
        let mut xs = Vec::with_capacity((steps + 1) * nx);
        xs.extend_from_slice(x0);
        for k in 0..steps {
            let mut next = vec![0.0; nx];
            self.dynamics(&xs[k * nx..(k + 1) * nx], &u[k * nu..(k + 1) * nu], &zero_w, &mut next);
            xs.extend_from_slice(&next);
        }
        xs
    }
}

/// The model selected at run time.
#[derive(Clone, Debug)]
pub enum ModelSpec {
    Benchmark(BenchmarkModel),
    Lq(LqModel),
}

impl From<BenchmarkModel> for ModelSpec {
    fn from(m: BenchmarkModel) -> Self {
        ModelSpec::Benchmark(m)
    }
}

impl From<LqModel> for ModelSpec {
    fn from(m: LqModel) -> Self {
        ModelSpec::Lq(m)
    }
}

macro_rules! delegate {
    ($self:ident, $m:ident => $e:expr) => {
        match $self {
            ModelSpec::Benchmark($m) => $e,
            ModelSpec::Lq($m) => $e,
        }
    };
}

impl OcpModel for ModelSpec {
    fn state_dim(&self) -> usize {
        delegate!(self, m => m.state_dim())
    }
    fn control_dim(&self) -> usize {
        delegate!(self, m => m.control_dim())
    }
    fn noise_dim(&self) -> usize {
        delegate!(self, m => m.noise_dim())
    }
    fn horizon(&self) -> usize {
        delegate!(self, m => m.horizon())
    }
    fn noise(&self) -> &NoiseSet {
        delegate!(self, m => m.noise())
    }
    #[inline]
    fn dynamics<S: Scalar>(&self, x: &[S], u: &[S], w: &[f64], next: &mut [S]) {
        delegate!(self, m => m.dynamics(x, u, w, next))
    }
    #[inline]
    fn stage_cost<S: Scalar>(&self, x: &[S], u: &[S]) -> S {
        delegate!(self, m => m.stage_cost(x, u))
    }
    #[inline]
    fn terminal_cost<S: Scalar>(&self, x: &[S]) -> S {
        delegate!(self, m => m.terminal_cost(x))
    }
}
