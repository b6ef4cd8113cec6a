//! Grid dynamic programming for scalar models, used as an independent oracle
//! for the tree solver and the CEC evaluator.
//!
//! The Bellman operator is split the same way as in the analysis:
//! [`q_value`] is `T^{V→Q}`, [`minimize_q`] is `T^{V→π}` at one state, and
//! storing `V(x) = Q(x, π(x))` is `T^{Q×π→V}`. [`dp_policy_backup`] skips the
//! minimization and plugs in a given policy.

mod grid;

pub use grid::{interpolate, Grid1D, Interpolant};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::autodiff::{Dual2, Scalar};
use crate::model::OcpModel;
use crate::summation::CompensatedSum;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DpError {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("table has {got} entries, grid has {expected} points")]
    TableSize { expected: usize, got: usize },
    #[error("grid DP needs a scalar model, got n_x = {nx}, n_u = {nu}")]
    NotScalar { nx: usize, nu: usize },
    #[error("uncertainty level must be finite, got {0}")]
    Sigma(f64),
}

/// `L(x, u) + Σ_i p_i V_next(f(x, u, σ w_i))`.
pub fn q_value<S: Scalar, M: OcpModel>(model: &M, v_next: &Interpolant, x: f64, u: S, sigma: f64) -> S {
    let xs = [S::cst(x)];
    let us = [u];
    let mut next = [S::zero()];
    let noise = model.noise();
    let mut total = CompensatedSum::new();
    total.add(model.stage_cost(&xs, &us));
    for (w, &p) in noise.values().iter().zip(noise.probs()) {
        model.dynamics(&xs, &us, &[sigma * w[0]], &mut next);
        total.add(v_next.eval(next[0]) * p);
    }
    total.total()
}

/// Result of one inner minimization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InnerMinimum {
    pub u: f64,
    pub q: f64,
    /// `∂²Q/∂u²` at `u`.
    pub curvature: f64,
    /// Positive curvature at a stationary point.
    pub second_order_ok: bool,
}

const NEWTON_MAX_ITERS: usize = 100;
const SEEDS: [f64; 5] = [-2.0, -1.0, 0.0, 1.0, 2.0];

struct Newton1D<'a, M> {
    model: &'a M,
    v_next: &'a Interpolant,
    x: f64,
    sigma: f64,
}

impl<M: OcpModel> Newton1D<'_, M> {
    fn q(&self, u: f64) -> f64 {
        q_value(self.model, self.v_next, self.x, u, self.sigma)
    }

    fn q2(&self, u: f64) -> Dual2 {
        q_value(self.model, self.v_next, self.x, Dual2::seed(u, 1.0), self.sigma)
    }

    fn gtol(q: f64) -> f64 {
        1e-12 * (1.0 + q.abs())
    }

    /// Safeguarded Newton: Newton steps where the curvature is positive,
    /// scaled gradient steps elsewhere, Armijo backtracking on both.
    /// Returns the final point and whether it is stationary.
    fn newton(&self, mut u: f64) -> (f64, bool) {
        for _ in 0..NEWTON_MAX_ITERS {
            let d = self.q2(u);
            if !d.value.is_finite() || !d.d1.is_finite() {
                return (u, false);
            }
            let (q, g, h) = (d.value, d.d1, d.d2);
            if g.abs() <= Self::gtol(q) {
                return (u, true);
            }
            let scale = u.abs().max(1.0);
            let mut step = if h > 0.0 && h.is_finite() { -g / h } else { -g.signum() * 0.5 * scale };
            step = step.clamp(-10.0 * scale, 10.0 * scale);
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..60 {
                let un = u + t * step;
                let qn = self.q(un);
                if qn.is_finite() && qn <= q + 1e-4 * t * g * step {
                    accepted = Some(un);
                    break;
                }
                t *= 0.5;
            }
            match accepted {
                Some(un) if (un - u).abs() > 1e-15 * scale => u = un,
                // no resolvable decrease: roundoff floor around a minimizer
                Some(un) => return (un, h > 0.0),
                None => return (u, h > 0.0 && (t * step).abs() <= 1e-12 * scale),
            }
        }
        (u, false)
    }

    fn successor(&self, u: f64) -> f64 {
        let mut next = [0.0];
        self.model.dynamics(&[self.x], &[u], &[0.0], &mut next);
        next[0]
    }

    /// A control with undisturbed successor `target`, if bisection finds a
    /// sign change within `±scale·2^60`.
    fn control_reaching(&self, target: f64, scale: f64) -> Option<f64> {
        let r = |u: f64| self.successor(u) - target;
        let r0 = r(0.0);
        if r0 == 0.0 {
            return Some(0.0);
        }
        let mut span = scale;
        let (mut a, mut b) = loop {
            if r(-span).is_finite() && r(-span).signum() != r0.signum() {
                break (-span, 0.0);
            }
            if r(span).is_finite() && r(span).signum() != r0.signum() {
                break (0.0, span);
            }
            span *= 2.0;
            if span > scale * 2f64.powi(60) {
                return None;
            }
        };
        let ra = r(a);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                break;
            }
            if r(m).signum() == ra.signum() {
                a = m;
            } else {
                b = m;
            }
        }
        Some(0.5 * (a + b))
    }

    /// Starting points from a scan of `u`: the lowest discrete local minima
    /// of the sampled `Q`. Controls that push the next state off the grid
    /// see a flat clamped `V_next`, where Newton stalls in spurious
    /// stationary points, and the basin of the true minimizer can be narrow
    /// on unstable dynamics. The scan covers a geometric ladder plus a
    /// uniform sweep of the controls whose undisturbed successor stays on
    /// the grid.
    fn scan(&self, scale: f64) -> Vec<f64> {
        const SWEEP: usize = 64;
        const KEEP: usize = 3;
        let mut us = vec![0.0];
        for k in -12..=36 {
            let mag = scale * 2f64.powf(0.25 * k as f64);
            us.push(-mag);
            us.push(mag);
        }
        let grid = self.v_next.grid();
        if let (Some(a), Some(b)) = (self.control_reaching(grid.lo, scale), self.control_reaching(grid.hi, scale)) {
            us.extend((0..=SWEEP).map(|i| a + (b - a) * i as f64 / SWEEP as f64));
        }
        us.sort_by(f64::total_cmp);
        us.dedup();
        let qs: Vec<f64> = us.iter().map(|&u| self.q(u)).collect();
        let lower = |i: usize, j: usize| !qs[j].is_finite() || qs[i] <= qs[j];
        let mut minima: Vec<usize> = (0..us.len())
            .filter(|&i| qs[i].is_finite() && (i == 0 || lower(i, i - 1)) && (i + 1 == us.len() || lower(i, i + 1)))
            .collect();
        minima.sort_by(|&i, &j| qs[i].total_cmp(&qs[j]).then(i.cmp(&j)));
        minima.into_iter().take(KEEP).map(|i| us[i]).collect()
    }

    /// Bisection on `∂Q/∂u` after expanding a bracket around `u`.
    fn bisect(&self, u: f64) -> Option<f64> {
        let g = |v: f64| self.q2(v).d1;
        let mut delta = 0.5 * u.abs().max(1.0);
        let (mut a, mut b) = (u - delta, u + delta);
        let mut expansions = 0;
        while !(g(a) < 0.0 && g(b) > 0.0) {
            if expansions == 60 {
                return None;
            }
            delta *= 2.0;
            a = u - delta;
            b = u + delta;
            expansions += 1;
        }
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                break;
            }
            let gm = g(m);
            if !gm.is_finite() {
                return None;
            }
            if gm > 0.0 {
                b = m;
            } else {
                a = m;
            }
        }
        Some(0.5 * (a + b))
    }
}

/// `argmin_u Q(x, u)` by multi-start safeguarded Newton on exact first and
/// second derivatives, with a bisection fallback when no start converges.
/// Starts are `{−2, −1, 0, 1, 2}·max(1, |x|)` plus the lowest local minima of
/// a scan over `u`.
pub fn minimize_q<M: OcpModel>(model: &M, v_next: &Interpolant, x: f64, sigma: f64) -> InnerMinimum {
    let solver = Newton1D { model, v_next, x, sigma };
    let scale = x.abs().max(1.0);
    let mut best: Option<(f64, f64, bool)> = None;
    let seeds = SEEDS.iter().map(|s| s * scale).chain(solver.scan(scale));
    for seed in seeds {
        let (u, stationary) = solver.newton(seed);
        let q = solver.q(u);
        if !q.is_finite() {
            continue;
        }
        // lowest Q wins, whether or not Newton certified it: the clamped
        // plateau at the grid ends is stationary too. Ties keep the earliest
        // seed.
        let better = match best {
            None => true,
            Some((_, bq, _)) => q < bq,
        };
        if better {
            best = Some((u, q, stationary));
        }
    }
    let (mut u, mut q, stationary) = best.unwrap_or((0.0, solver.q(0.0), false));
    if !stationary {
        if let Some(ub) = solver.bisect(u) {
            let qb = solver.q(ub);
            if qb <= q || !q.is_finite() {
                u = ub;
                q = qb;
            }
        }
    }
    let d = solver.q2(u);
    let ok = d.d2 > 0.0 && d.d1.abs() <= 1e-6 * (1.0 + q.abs());
    InnerMinimum { u, q, curvature: d.d2, second_order_ok: ok }
}

/// Output of one Bellman backup.
#[derive(Clone, Debug, PartialEq)]
pub struct Backup {
    pub values: Vec<f64>,
    pub policy: Vec<f64>,
    /// Grid indices where the inner minimization failed the second-order
    /// check.
    pub failures: Vec<usize>,
    /// Interpolation calls clamped to the grid ends.
    pub clamped: usize,
}

fn check_scalar<M: OcpModel>(model: &M) -> Result<(), DpError> {
    if model.state_dim() != 1 || model.control_dim() != 1 || model.noise_dim() != 1 {
        return Err(DpError::NotScalar { nx: model.state_dim(), nu: model.control_dim() });
    }
    Ok(())
}

fn check_sigma(sigma: f64) -> Result<(), DpError> {
    if sigma.is_finite() {
        Ok(())
    } else {
        Err(DpError::Sigma(sigma))
    }
}

/// `T_σ[V_next]` on the grid.
pub fn dp_backup<M: OcpModel>(v_next: &[f64], model: &M, grid: &Grid1D, sigma: f64) -> Result<Backup, DpError> {
    check_scalar(model)?;
    check_sigma(sigma)?;
    let it = Interpolant::new(grid, v_next)?;
    let mins: Vec<InnerMinimum> = (0..grid.n_points).into_par_iter().map(|j| minimize_q(model, &it, grid.node(j), sigma)).collect();
    let policy: Vec<f64> = mins.iter().map(|m| m.u).collect();
    let failures: Vec<usize> = mins.iter().enumerate().filter(|(_, m)| !m.second_order_ok).map(|(j, _)| j).collect();
    // V = Q(x, π(x)), the same evaluation the policy backup uses; a fresh
    // interpolant so that only the chosen controls count towards clamping
    let it = Interpolant::new(grid, v_next)?;
    let values = (0..grid.n_points).into_par_iter().map(|j| q_value(model, &it, grid.node(j), policy[j], sigma)).collect();
    Ok(Backup { values, policy, failures, clamped: it.clamped() })
}

/// `T̃_σ[V_next, π]` on the grid.
pub fn dp_policy_backup<M: OcpModel>(
    v_next: &[f64],
    policy: &[f64],
    model: &M,
    grid: &Grid1D,
    sigma: f64,
) -> Result<Vec<f64>, DpError> {
    check_scalar(model)?;
    check_sigma(sigma)?;
    if policy.len() != grid.n_points {
        return Err(DpError::TableSize { expected: grid.n_points, got: policy.len() });
    }
    let it = Interpolant::new(grid, v_next)?;
    let values = (0..grid.n_points).into_par_iter().map(|j| q_value(model, &it, grid.node(j), policy[j], sigma)).collect();
    if it.clamped() > 0 {
        log::debug!("policy backup at sigma = {sigma}: {} interpolations clamped to the grid", it.clamped());
    }
    Ok(values)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DpKind {
    Optimal,
    PolicyEvaluation,
}

impl DpKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DpKind::Optimal => "optimal",
            DpKind::PolicyEvaluation => "policy-evaluation",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct InnerFailure {
    pub stage: usize,
    pub x: f64,
}

/// Value tables for stages `0..=N` and policy tables for `0..N`.
#[derive(Clone, Debug, PartialEq)]
pub struct DpTables {
    pub grid: Grid1D,
    pub sigma: f64,
    pub kind: DpKind,
    pub values: Vec<Vec<f64>>,
    pub policy: Vec<Vec<f64>>,
    pub failures: Vec<InnerFailure>,
    pub clamped: usize,
}

/// One CSV row: `x, V, π, stage, σ, kind`; `π` is `NaN` at stage `N`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DpRow {
    pub x: f64,
    #[serde(rename = "V")]
    pub v: f64,
    #[serde(rename = "π")]
    pub pi: f64,
    pub stage: usize,
    #[serde(rename = "σ")]
    pub sigma: f64,
    pub kind: &'static str,
}

impl DpTables {
    pub fn horizon(&self) -> usize {
        self.policy.len()
    }

    /// Interpolated `V_k(x)`.
    pub fn value_at(&self, k: usize, x: f64) -> f64 {
        Interpolant::new(&self.grid, &self.values[k]).expect("tables match their grid").eval(x)
    }

    /// Interpolated `π_k(x)`.
    pub fn policy_at(&self, k: usize, x: f64) -> f64 {
        Interpolant::new(&self.grid, &self.policy[k]).expect("tables match their grid").eval(x)
    }

    pub fn rows(&self) -> Vec<DpRow> {
        let n = self.horizon();
        let xs = self.grid.points();
        let mut rows = Vec::with_capacity((n + 1) * xs.len());
        for k in 0..=n {
            for (j, &x) in xs.iter().enumerate() {
                rows.push(DpRow {
                    x,
                    v: self.values[k][j],
                    pi: if k < n { self.policy[k][j] } else { f64::NAN },
                    stage: k,
                    sigma: self.sigma,
                    kind: self.kind.as_str(),
                });
            }
        }
        rows
    }
}

fn terminal_table<M: OcpModel>(model: &M, grid: &Grid1D) -> Vec<f64> {
    grid.points().into_iter().map(|x| model.terminal_cost(&[x])).collect()
}

/// `N` backups from the terminal cost: `V*_{σ,k}` and `π*_{σ,k}`.
pub fn dp_solve<M: OcpModel>(model: &M, grid: &Grid1D, sigma: f64, horizon: usize) -> Result<DpTables, DpError> {
    check_scalar(model)?;
    check_sigma(sigma)?;
    let mut values = vec![terminal_table(model, grid)];
    let mut policy = Vec::with_capacity(horizon);
    let mut failures = Vec::new();
    let mut clamped = 0;
    for k in (0..horizon).rev() {
        let b = dp_backup(values.last().expect("terminal table"), model, grid, sigma)?;
        failures.extend(b.failures.iter().map(|&j| InnerFailure { stage: k, x: grid.node(j) }));
        clamped += b.clamped;
        values.push(b.values);
        policy.push(b.policy);
    }
    values.reverse();
    policy.reverse();
    if clamped > 0 {
        // expected next to the grid ends, where optimal successors leave it
        log::info!("dp_solve at sigma = {sigma}: {clamped} interpolations clamped to the grid");
    }
    if !failures.is_empty() {
        log::warn!("dp_solve at sigma = {sigma}: second-order check failed at {} grid points", failures.len());
    }
    Ok(DpTables { grid: *grid, sigma, kind: DpKind::Optimal, values, policy, failures, clamped })
}

/// Policy evaluation of the certainty-equivalent policy `π*_{0,k}` at level
/// `σ`.
pub fn dp_evaluate_cec<M: OcpModel>(model: &M, grid: &Grid1D, sigma: f64, horizon: usize) -> Result<DpTables, DpError> {
    let nominal = dp_solve(model, grid, 0.0, horizon)?;
    dp_evaluate_policy(model, &nominal, sigma)
}

/// Evaluates the policy tables of `policy_source` at level `σ`.
pub fn dp_evaluate_policy<M: OcpModel>(model: &M, policy_source: &DpTables, sigma: f64) -> Result<DpTables, DpError> {
    let grid = &policy_source.grid;
    let horizon = policy_source.horizon();
    let mut values = vec![terminal_table(model, grid)];
    for k in (0..horizon).rev() {
        let v = dp_policy_backup(values.last().expect("terminal table"), &policy_source.policy[k], model, grid, sigma)?;
        values.push(v);
    }
    values.reverse();
    Ok(DpTables {
        grid: *grid,
        sigma,
        kind: DpKind::PolicyEvaluation,
        values,
        policy: policy_source.policy.clone(),
        failures: policy_source.failures.clone(),
        clamped: policy_source.clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{linearize_at_origin, riccati_terminal_weight, BenchmarkModel, BenchmarkParams, LqModel};
    use crate::solver::{solve_nominal, SolverOptions};

    fn benchmark() -> BenchmarkModel {
        BenchmarkModel::new(BenchmarkParams::default()).unwrap()
    }

    #[test]
    fn zero_continuation_gives_stage_cost() {
        // V_next ≡ 0 and L = q x² + r u²: nothing couples u to the future
        let lq = LqModel::scalar(1.3, 0.7, 5.0, 1.0, 1).unwrap();
        let g = Grid1D::new(-1.0, 1.0, 41).unwrap();
        let b = dp_backup(&vec![0.0; 41], &lq, &g, 0.3).unwrap();
        for (j, x) in g.points().into_iter().enumerate() {
            assert!(b.policy[j].abs() <= 1e-12);
            assert!((b.values[j] - 5.0 * x * x).abs() <= 1e-12);
        }
        assert!(b.failures.is_empty());
    }

    #[test]
    fn riccati_fixed_point_on_grid() {
        let (a, bb) = linearize_at_origin(0.2);
        let qt = riccati_terminal_weight(5.0, 1.0, a, bb).unwrap();
        let lq = LqModel::scalar(a, bb, 5.0, 1.0, 10).unwrap();
        let g = Grid1D::new(-2.0, 2.0, 201).unwrap();
        let v_next: Vec<f64> = g.points().iter().map(|x| qt * x * x).collect();
        let b = dp_backup(&v_next, &lq, &g, 0.0).unwrap();
        let gain = a * bb * qt / (1.0 + bb * bb * qt);
        for (j, x) in g.points().into_iter().enumerate() {
            // states leaving [−2, 2] are clamped; the bound only holds where
            // the closed loop stays inside
            if ((a - bb * gain) * x).abs() <= 2.0 {
                assert!((b.values[j] - qt * x * x).abs() <= 1e-9, "{x}: {} vs {}", b.values[j], qt * x * x);
                assert!((b.policy[j] + gain * x).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn policy_backup_reproduces_optimal_backup_bitwise() {
        let m = benchmark();
        let g = Grid1D::new(-2.0, 2.0, 201).unwrap();
        let e: Vec<f64> = g.points().iter().map(|&x| m.terminal_cost(&[x])).collect();
        let b = dp_backup(&e, &m, &g, 0.1).unwrap();
        let v = dp_policy_backup(&e, &b.policy, &m, &g, 0.1).unwrap();
        assert_eq!(v, b.values);
    }

    #[test]
    fn horizon_zero_and_validation() {
        let m = benchmark();
        let g = Grid1D::new(-2.0, 2.0, 11).unwrap();
        let t = dp_solve(&m, &g, 0.2, 0).unwrap();
        assert_eq!(t.values.len(), 1);
        assert!(t.policy.is_empty());
        for (j, x) in g.points().into_iter().enumerate() {
            assert_eq!(t.values[0][j], m.terminal_cost(&[x]));
        }
        assert!(dp_backup(&[0.0; 3], &m, &g, 0.1).is_err());
        assert!(dp_solve(&m, &g, f64::NAN, 2).is_err());
        let wide = crate::model::make_lq_model(
            nalgebra::DMatrix::identity(2, 2),
            nalgebra::DMatrix::identity(2, 2),
            1.0,
            1.0,
            2,
        )
        .unwrap();
        assert!(matches!(dp_solve(&wide, &g, 0.1, 2), Err(DpError::NotScalar { .. })));
    }

    #[test]
    fn uncontrolled_equilibrium_without_penalty() {
        let m = BenchmarkModel::new(BenchmarkParams { rho: 0.0, ..Default::default() }).unwrap();
        let g = Grid1D::new(-2.0, 2.0, 101).unwrap();
        let zero = DpTables {
            grid: g,
            sigma: 0.0,
            kind: DpKind::Optimal,
            values: vec![],
            policy: vec![vec![0.0; 101]; 10],
            failures: vec![],
            clamped: 0,
        };
        let t = dp_evaluate_policy(&m, &zero, 0.0).unwrap();
        for k in 0..=10 {
            assert_eq!(t.value_at(k, 0.0), 0.0);
        }
    }

    #[test]
    fn nominal_dp_matches_shooting_solver() {
        let m = benchmark();
        let g = Grid1D::new(-2.0, 2.0, 2001).unwrap();
        let t = dp_solve(&m, &g, 0.0, 10).unwrap();
        assert!(t.failures.is_empty());
        let opts = SolverOptions::default();
        for i in 0..20 {
            let x = -0.1 + 1.3 * i as f64 / 19.0;
            let sol = solve_nominal(&m, &[x], 10, &opts, None).unwrap();
            assert!((t.value_at(0, x) - sol.value).abs() <= 1e-4, "{x}: {} vs {}", t.value_at(0, x), sol.value);
        }
    }

    #[test]
    fn cec_tables_bound_optimal_tables() {
        let m = benchmark();
        let g = Grid1D::new(-2.0, 2.0, 401).unwrap();
        let star = dp_solve(&m, &g, 0.2, 10).unwrap();
        let cec = dp_evaluate_cec(&m, &g, 0.2, 10).unwrap();
        assert_eq!(cec.kind, DpKind::PolicyEvaluation);
        for k in 0..=10 {
            for (a, b) in cec.values[k].iter().zip(&star.values[k]) {
                assert!(*a >= b - 1e-9);
            }
        }
        // and at σ = 0 the two coincide exactly
        let nominal = dp_solve(&m, &g, 0.0, 10).unwrap();
        let cec0 = dp_evaluate_cec(&m, &g, 0.0, 10).unwrap();
        assert_eq!(nominal.values, cec0.values);
        assert_eq!(nominal.policy, cec0.policy);
    }

    #[test]
    fn tables_are_even_in_sigma() {
        let m = benchmark();
        let g = Grid1D::new(-2.0, 2.0, 201).unwrap();
        let plus = dp_solve(&m, &g, 0.1, 4).unwrap();
        let minus = dp_solve(&m, &g, -0.1, 4).unwrap();
        for k in 0..=4 {
            for (a, b) in plus.values[k].iter().zip(&minus.values[k]) {
                assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
            }
        }
    }

    #[test]
    fn lq_sigma_shift_is_state_independent() {
        let (a, bb) = linearize_at_origin(0.2);
        let lq = LqModel::scalar(a, bb, 5.0, 1.0, 3).unwrap();
        let g = Grid1D::new(-1.0, 1.0, 201).unwrap();
        let v0 = dp_solve(&lq, &g, 0.0, 3).unwrap();
        let vs = dp_solve(&lq, &g, 0.2, 3).unwrap();
        // away from the ends, where clamping distorts the tables
        let diffs: Vec<f64> = (50..=150).map(|j| vs.values[0][j] - v0.values[0][j]).collect();
        let range = diffs.iter().cloned().fold(f64::MIN, f64::max) - diffs.iter().cloned().fold(f64::MAX, f64::min);
        assert!(range <= 1e-6, "{range}");
        assert!(diffs[0] > 0.0);
    }

    #[test]
    fn rows_layout() {
        let m = benchmark();
        let g = Grid1D::new(-1.0, 1.0, 5).unwrap();
        let t = dp_solve(&m, &g, 0.05, 2).unwrap();
        let rows = t.rows();
        assert_eq!(rows.len(), 15);
        assert_eq!(rows[0].stage, 0);
        assert!(rows[14].pi.is_nan());
        assert_eq!(rows[14].kind, "optimal");
    }
}
