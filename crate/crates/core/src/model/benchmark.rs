//! Scalar benchmark: `ẋ = x + x³ + u` discretized by one RK4 step, quadratic
//! costs with a smoothed penalty enforcing the soft bound `x ≥ x_lb`, and an
//! LQR terminal weight from the linearization at the origin.

use serde::{Deserialize, Serialize};

use super::{riccati_terminal_weight, ModelError, NoiseSet, OcpModel};
use crate::autodiff::{Dual, Dual1, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkParams {
    /// Continuous-time span covered by the horizon.
    pub t_span: f64,
    /// Number of discrete steps.
    pub steps: usize,
    pub x_lb: f64,
    pub q: f64,
    pub r: f64,
    pub rho: f64,
    pub eps: f64,
}

impl Default for BenchmarkParams {
    fn default() -> Self {
        BenchmarkParams { t_span: 2.0, steps: 10, x_lb: -0.1, q: 5.0, r: 1.0, rho: 10.0, eps: 1e-2 }
    }
}

impl BenchmarkParams {
    /// Step size `T/N`.
    pub fn h(&self) -> f64 {
        self.t_span / self.steps as f64
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidParameter(msg));
        if !(self.t_span > 0.0) {
            return bad(format!("t_span must be positive, got {}", self.t_span));
        }
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if !(self.r > 0.0) {
            return bad(format!("r must be positive, got {}", self.r));
        }
        if !(self.q >= 0.0) {
            return bad(format!("q must be nonnegative, got {}", self.q));
        }
        if !(self.rho >= 0.0) {
            return bad(format!("rho must be nonnegative, got {}", self.rho));
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if !self.x_lb.is_finite() {
            return bad("x_lb must be finite".into());
        }
        Ok(())
    }
}

/// `ẋ = x + x³ + u`.
#[inline]
pub fn benchmark_ode<S: Scalar>(x: S, u: S) -> S {
    x + x * x * x + u
}

/// Classical RK4 step with `u` held constant, scalar state.
#[inline]
pub fn rk4_scalar<S: Scalar>(ode: impl Fn(S, S) -> S, x: S, u: S, h: f64) -> S {
    let k1 = ode(x, u);
    let k2 = ode(x + k1 * (0.5 * h), u);
    let k3 = ode(x + k2 * (0.5 * h), u);
    let k4 = ode(x + k3 * h, u);
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// One RK4 step of `x_{k+1} = x + x³ + u` plus the additive disturbance `σw`.
#[inline]
pub fn benchmark_dynamics<S: Scalar>(x: S, u: S, w: f64, sigma: f64, h: f64) -> S {
    rk4_scalar(benchmark_ode, x, u, h) + sigma * w
}

/// `φ_ε(x) = ½√(x² + ε²) − ½x`, a smooth upper bound of `max(0, −x)`.
#[inline]
pub fn smoothed_penalty<S: Scalar>(x: S, eps: f64) -> S {
    (x * x + eps * eps).sqrt() * 0.5 - x * 0.5
}

#[inline]
pub fn benchmark_stage_cost<S: Scalar>(x: S, u: S, params: &BenchmarkParams) -> S {
    x * x * params.q + u * u * params.r + smoothed_penalty(x - params.x_lb, params.eps) * params.rho
}

#[inline]
pub fn benchmark_terminal_cost<S: Scalar>(x: S, params: &BenchmarkParams, q_terminal: f64) -> S {
    x * x * q_terminal + smoothed_penalty(x - params.x_lb, params.eps) * params.rho
}

/// `(∂f/∂x, ∂f/∂u)` of the undisturbed RK4 map at the origin, by AD.
pub fn linearize_at_origin(h: f64) -> (f64, f64) {
    let a = rk4_scalar(benchmark_ode, Dual1::var(0.0), Dual::constant(0.0), h).eps;
    let b = rk4_scalar(benchmark_ode, Dual1::constant(0.0), Dual::var(0.0), h).eps;
    (a, b)
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchmarkModel {
    params: BenchmarkParams,
    q_terminal: f64,
    #[serde(skip)]
    noise: NoiseSet,
}

impl BenchmarkModel {
    /// Validates `params`, linearizes at the origin and solves the DARE for
    /// the terminal weight. Noise is `{-1, 1}` with equal weights.
    pub fn new(params: BenchmarkParams) -> Result<Self, ModelError> {
        Self::with_noise(params, NoiseSet::symmetric_binary())
    }

    pub fn with_noise(params: BenchmarkParams, noise: NoiseSet) -> Result<Self, ModelError> {
        params.validate()?;
        if noise.dim() != 1 {
            return Err(ModelError::Dimension(format!("benchmark noise must be scalar, got dim {}", noise.dim())));
        }
        noise.check_moments(1e-12)?;
        let (a, b) = linearize_at_origin(params.h());
        let q_terminal = riccati_terminal_weight(params.q, params.r, a, b)?;
        Ok(BenchmarkModel { params, q_terminal, noise })
    }

    pub fn params(&self) -> &BenchmarkParams {
        &self.params
    }

    /// Riccati terminal weight `q̃`.
    pub fn terminal_weight(&self) -> f64 {
        self.q_terminal
    }
}

impl OcpModel for BenchmarkModel {
    fn state_dim(&self) -> usize {
        1
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn horizon(&self) -> usize {
        self.params.steps
    }
    fn noise(&self) -> &NoiseSet {
        &self.noise
    }
    #[inline]
    fn dynamics<S: Scalar>(&self, x: &[S], u: &[S], w: &[f64], next: &mut [S]) {
        next[0] = rk4_scalar(benchmark_ode, x[0], u[0], self.params.h()) + w[0];
    }
    #[inline]
    fn stage_cost<S: Scalar>(&self, x: &[S], u: &[S]) -> S {
        benchmark_stage_cost(x[0], u[0], &self.params)
    }
    #[inline]
    fn terminal_cost<S: Scalar>(&self, x: &[S]) -> S {
        benchmark_terminal_cost(x[0], &self.params, self.q_terminal)
    }
}
