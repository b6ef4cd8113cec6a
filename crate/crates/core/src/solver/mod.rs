//! Nominal and tree-structured OCP solvers.

mod newton;
mod objective;

pub use newton::{newton_minimize, AdObjective, IterationRecord, Minimum, Objective};
pub use objective::{GradientMode, NominalObjective, TreeObjective, FORWARD_MODE_MAX_NODES};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::OcpModel;
use crate::tree::ScenarioTree;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("invalid solver options: {0}")]
    Options(String),
    #[error("initial point has {got} entries, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("objective or gradient is not finite at the initial point")]
    NonFinite,
    #[error("line search failed at iteration {iter} (value {value:e}, gradient max norm {grad_norm:e})")]
    LineSearch { iter: usize, value: f64, grad_norm: f64 },
    #[error("precondition violated: {0}")]
    Precondition(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Stop when the gradient max norm is at or below this.
    pub grad_tol: f64,
    pub max_iters: usize,
    pub armijo_c1: f64,
    pub backtrack: f64,
    /// Upper bound on the CG forcing term `min(factor, √‖g‖)`.
    pub cg_tol_factor: f64,
    pub damping_floor: f64,
    /// Keep a per-iteration trace in the result.
    pub record_trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            grad_tol: 1e-10,
            max_iters: 200,
            armijo_c1: 1e-4,
            backtrack: 0.5,
            cg_tol_factor: 0.5,
            damping_floor: 1e-10,
            record_trace: false,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: &str| Err(SolverError::Options(m.to_string()));
        if !(self.grad_tol > 0.0) {
            return bad("grad_tol must be positive");
        }
        if !(self.armijo_c1 > 0.0 && self.armijo_c1 < 1.0) {
            return bad("armijo_c1 must lie in (0, 1)");
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return bad("backtrack must lie in (0, 1)");
        }
        if !(self.cg_tol_factor > 0.0 && self.cg_tol_factor < 1.0) {
            return bad("cg_tol_factor must lie in (0, 1)");
        }
        if !(self.damping_floor > 0.0) {
            return bad("damping_floor must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NominalSolution {
    /// Controls for stages `0..horizon`, `n_u` entries each.
    pub u_traj: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iters: usize,
    pub converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<IterationRecord>>,
}

impl NominalSolution {
    /// First control, `n_u` entries (empty for a zero horizon).
    pub fn first_control(&self, nu: usize) -> &[f64] {
        &self.u_traj[..nu.min(self.u_traj.len())]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TreeSolution {
    /// One control per control node, flat node order.
    pub u_tree: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iters: usize,
    pub converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<IterationRecord>>,
}

impl TreeSolution {
    pub fn root_control(&self, nu: usize) -> &[f64] {
        &self.u_tree[..nu]
    }
}

/// Minimizes the nominal objective over `horizon` steps. The initial guess is
/// the cheapest of zero controls, the one-step lookahead rollout and the warm
/// start, if one is given.
pub fn solve_nominal<M: OcpModel>(
    model: &M,
    x0: &[f64],
    horizon: usize,
    opts: &SolverOptions,
    warm_start: Option<&[f64]>,
) -> Result<NominalSolution, SolverError> {
    if horizon > model.horizon() {
        return Err(SolverError::Precondition(format!(
            "horizon {horizon} exceeds the model horizon {}",
            model.horizon()
        )));
    }
    if x0.len() != model.state_dim() {
        return Err(SolverError::Dimension { expected: model.state_dim(), got: x0.len() });
    }
    if horizon == 0 {
        let value = model.terminal_cost(x0);
        return Ok(NominalSolution { u_traj: Vec::new(), value, grad_norm: 0.0, iters: 0, converged: true, trace: None });
    }
    let obj = NominalObjective::new(model, x0, horizon);
    let n = obj.dim();
    let cold = || {
        // Zero controls overflow on unstable dynamics; keep whichever of
        // zero and the one-step lookahead rollout is cheaper.
        let zero = vec![0.0; n];
        let zero_cost = obj.value(&zero);
        let greedy = lookahead_guess(model, x0, horizon, opts);
        if !zero_cost.is_finite() || obj.value(&greedy) < zero_cost {
            greedy
        } else {
            zero
        }
    };
    // A shifted plan from a nearby state can still run away on unstable
    // dynamics, so the warm start has to beat the cold guess to be used.
    let u0 = match warm_start {
        Some(w) if w.len() != n => return Err(SolverError::Dimension { expected: n, got: w.len() }),
        Some(w) => {
            let warm_cost = obj.value(w);
            let cold = cold();
            if warm_cost.is_finite() && warm_cost <= obj.value(&cold) {
                w.to_vec()
            } else {
                cold
            }
        }
        None => cold(),
    };
    let m = newton_minimize(&obj, u0, opts)?;
    Ok(NominalSolution {
        u_traj: m.u,
        value: m.value,
        grad_norm: m.grad_norm,
        iters: m.iters,
        converged: m.converged,
        trace: m.trace,
    })
}

/// Rollout of the one-step problems `min_u L(x, u) + E(f(x, u, 0))`,
/// each solved from zero.
fn lookahead_guess<M: OcpModel>(model: &M, x0: &[f64], horizon: usize, opts: &SolverOptions) -> Vec<f64> {
    let (nx, nu) = (model.state_dim(), model.control_dim());
    let zero_w = vec![0.0; model.noise_dim()];
    let mut x = x0.to_vec();
    let mut next = vec![0.0; nx];
    let mut u = Vec::with_capacity(horizon * nu);
    let relaxed = SolverOptions { record_trace: false, max_iters: 50, ..opts.clone() };
    for _ in 0..horizon {
        let step = NominalObjective::new(model, &x, 1);
        let uk = match newton_minimize(&step, vec![0.0; nu], &relaxed) {
            Ok(m) => m.u,
            Err(_) => vec![0.0; nu],
        };
        model.dynamics(&x, &uk, &zero_w, &mut next);
        if next.iter().any(|v| !v.is_finite()) {
            break;
        }
        x.copy_from_slice(&next);
        u.extend_from_slice(&uk);
    }
    u.resize(horizon * nu, 0.0);
    u
}

/// Broadcasts a stage-wise control trajectory to every node of each stage.
pub fn broadcast_controls(tree: &ScenarioTree, u_traj: &[f64], nu: usize) -> Vec<f64> {
    let mut u = Vec::with_capacity(tree.control_node_count() * nu);
    for k in 0..tree.horizon() {
        for _ in 0..tree.stage_len(k) {
            u.extend_from_slice(&u_traj[k * nu..(k + 1) * nu]);
        }
    }
    u
}

/// Minimizes the expected cost over the full control tree, starting from
/// the nominal solution broadcast over the tree. The value is `V*_σ(x0)`.
///
/// On unstable dynamics the open-loop broadcast can diverge on the perturbed
/// branches; if Newton fails from it, the solve restarts from the
/// certainty-equivalent feedback controls.
pub fn solve_tree<M: OcpModel>(
    model: &M,
    tree: &ScenarioTree,
    x0: &[f64],
    sigma: f64,
    opts: &SolverOptions,
) -> Result<TreeSolution, SolverError> {
    check_tree(model, tree)?;
    let nominal = solve_nominal(model, x0, model.horizon(), opts, None)?;
    let obj = TreeObjective::new(model, tree, x0, sigma);
    let u0 = broadcast_controls(tree, &nominal.u_traj, model.control_dim());
    let first = if obj.value(&u0).is_finite() { Some(newton_minimize(&obj, u0, opts)) } else { None };
    let m = match first {
        Some(Ok(m)) if m.converged => m,
        first => {
            log::debug!("broadcast guess failed at sigma = {sigma}; restarting from CEC controls");
            let cec = match crate::cec::evaluate_cec(model, tree, x0, sigma, opts) {
                Ok(c) => c,
                Err(e) => {
                    return match first {
                        Some(r) => r.map(tree_solution),
                        None => Err(SolverError::Precondition(format!("no finite initial guess: {e}"))),
                    }
                }
            };
            newton_minimize(&obj, cec.controls, opts)?
        }
    };
    Ok(tree_solution(m))
}

fn tree_solution(m: Minimum) -> TreeSolution {
    TreeSolution { u_tree: m.u, value: m.value, grad_norm: m.grad_norm, iters: m.iters, converged: m.converged, trace: m.trace }
}

pub(crate) fn check_tree<M: OcpModel>(model: &M, tree: &ScenarioTree) -> Result<(), SolverError> {
    if tree.horizon() != model.horizon() || tree.w_values() != model.noise().values() {
        return Err(SolverError::Precondition("scenario tree was not built for this model's horizon and disturbance set".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BenchmarkModel, BenchmarkParams, LqModel};
    use approx::assert_relative_eq;

    fn benchmark() -> BenchmarkModel {
        BenchmarkModel::new(BenchmarkParams::default()).unwrap()
    }

    fn binary_tree(model: &BenchmarkModel) -> ScenarioTree {
        ScenarioTree::build(model.horizon(), model.noise().values(), model.noise().probs()).unwrap()
    }

    #[test]
    fn nominal_objective_examples() {
        let lq = LqModel::scalar(0.0, 1.0, 5.0, 1.0, 3).unwrap();
        assert_eq!(NominalObjective::new(&lq, &[1.0], 1).eval(&[0.0]), 5.0);

        let m = benchmark();
        let stage0 = m.stage_cost(&[0.0], &[0.0]);
        let obj = NominalObjective::new(&m, &[0.0], 10);
        assert_relative_eq!(obj.eval(&[0.0; 10]), 11.0 * stage0, max_relative = 1e-14);
        assert_relative_eq!(obj.eval(&[0.0; 10]), 0.02744, max_relative = 1e-3);

        let empty = NominalObjective::new(&m, &[0.7], 0);
        assert_eq!(empty.eval::<f64>(&[]), m.terminal_cost(&[0.7]));
    }

    #[test]
    fn tree_objective_examples() {
        let m = benchmark();
        let tree = binary_tree(&m);
        let obj = TreeObjective::new(&m, &tree, &[0.0], 0.0);
        assert_relative_eq!(obj.eval(&vec![0.0; 1023]), 0.02744, max_relative = 1e-3);

        // stage-tied controls at σ = 0 reproduce the nominal objective
        // perturbed optimal controls: arbitrary ones overflow on x + x³
        let base = solve_nominal(&m, &[0.3], 10, &SolverOptions::default(), None).unwrap().u_traj;
        let u: Vec<f64> = base.iter().enumerate().map(|(k, b)| b + 0.01 * k as f64).collect();
        let tied = broadcast_controls(&tree, &u, 1);
        let nominal = NominalObjective::new(&m, &[0.3], 10).eval(&u);
        assert_relative_eq!(TreeObjective::new(&m, &tree, &[0.3], 0.0).eval(&tied), nominal, max_relative = 1e-14);

        // two-leaf expectation by definition
        let one = BenchmarkModel::new(BenchmarkParams { steps: 1, t_span: 0.2, ..Default::default() }).unwrap();
        let t1 = binary_tree(&one);
        let (x0, u0, sigma) = (0.6, -0.3, 0.1);
        let xn = crate::model::benchmark_dynamics(x0, u0, 0.0, 0.0, 0.2);
        let expect = one.stage_cost(&[x0], &[u0])
            + 0.5 * one.terminal_cost(&[xn + sigma])
            + 0.5 * one.terminal_cost(&[xn - sigma]);
        assert_relative_eq!(TreeObjective::new(&one, &t1, &[x0], sigma).eval(&[u0]), expect, max_relative = 1e-14);
    }

    #[test]
    fn forward_and_adjoint_gradients_agree() {
        let m = BenchmarkModel::new(BenchmarkParams { steps: 5, t_span: 1.0, ..Default::default() }).unwrap();
        let tree = binary_tree(&m);
        let u: Vec<f64> = (0..tree.control_node_count()).map(|j| ((j * 37 % 11) as f64 - 5.0) * 0.07).collect();
        let fwd = TreeObjective::new(&m, &tree, &[0.4], 0.15).with_mode(GradientMode::Forward);
        let adj = TreeObjective::new(&m, &tree, &[0.4], 0.15).with_mode(GradientMode::Adjoint);
        let (vf, gf) = fwd.value_and_gradient(&u);
        let (va, ga) = adj.value_and_gradient(&u);
        assert_eq!(vf, va);
        for (a, b) in gf.iter().zip(&ga) {
            assert_relative_eq!(a, b, epsilon = 1e-15, max_relative = 1e-12);
        }
        let v: Vec<f64> = (0..u.len()).map(|j| ((j * 13 % 7) as f64 - 3.0) * 0.2).collect();
        let hf = fwd.hessian_vector(&u, &v);
        let ha = adj.hessian_vector(&u, &v);
        for (a, b) in hf.iter().zip(&ha) {
            assert_relative_eq!(a, b, epsilon = 1e-14, max_relative = 1e-11);
        }
    }

    #[test]
    fn hessian_vector_matches_gradient_differences() {
        let m = benchmark();
        let obj = NominalObjective::new(&m, &[0.35], 10);
        let base = solve_nominal(&m, &[0.35], 10, &SolverOptions::default(), None).unwrap().u_traj;
        let u: Vec<f64> = base.iter().enumerate().map(|(k, b)| b + (k as f64 * 0.61).sin() * 0.05).collect();
        let v: Vec<f64> = (0..10).map(|k| (k as f64 * 1.7).cos()).collect();
        let hv = obj.hessian_vector(&u, &v);
        let h = 1e-5;
        let up: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + h * b).collect();
        let um: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - h * b).collect();
        let (_, gp) = obj.value_and_gradient(&up);
        let (_, gm) = obj.value_and_gradient(&um);
        for i in 0..10 {
            let fd = (gp[i] - gm[i]) / (2.0 * h);
            assert!((hv[i] - fd).abs() <= 1e-6 * hv[i].abs().max(1.0), "{i}: {} vs {fd}", hv[i]);
        }
    }

    #[test]
    fn lq_nominal_matches_riccati() {
        let lq = LqModel::scalar(1.0, 1.0, 1.0, 1.0, 3).unwrap();
        let sol = solve_nominal(&lq, &[1.0], 3, &SolverOptions::default(), None).unwrap();
        let (p0, k0) = lq.riccati_recursion(3);
        assert!(sol.converged);
        assert_relative_eq!(sol.value, p0[(0, 0)], max_relative = 1e-10);
        assert_relative_eq!(sol.u_traj[0], -k0[(0, 0)], epsilon = 1e-8);

        let dead = LqModel::scalar(0.0, 1.0, 1.0, 1.0, 4).unwrap();
        let sol = solve_nominal(&dead, &[2.5], 4, &SolverOptions::default(), None).unwrap();
        assert!(sol.u_traj.iter().all(|u| u.abs() < 1e-12));
        let zero = solve_nominal(&lq, &[0.0], 3, &SolverOptions::default(), None).unwrap();
        assert_eq!(zero.value, 0.0);
    }

    #[test]
    fn nominal_edge_cases() {
        let m = benchmark();
        let opts = SolverOptions::default();
        let empty = solve_nominal(&m, &[0.4], 0, &opts, None).unwrap();
        assert!(empty.u_traj.is_empty());
        assert_eq!(empty.value, m.terminal_cost(&[0.4]));
        assert!(solve_nominal(&m, &[0.4], 11, &opts, None).is_err());
        assert!(solve_nominal(&m, &[0.4], 3, &opts, Some(&[0.0; 2])).is_err());

        let no_pen = BenchmarkModel::new(BenchmarkParams { rho: 0.0, ..Default::default() }).unwrap();
        let sol = solve_nominal(&no_pen, &[0.0], 10, &opts, None).unwrap();
        assert!(sol.u_traj.iter().all(|&u| u == 0.0));
        assert_eq!(sol.value, 0.0);
    }

    #[test]
    fn benchmark_nominal_converges() {
        let m = benchmark();
        let opts = SolverOptions { record_trace: true, ..Default::default() };
        let sol = solve_nominal(&m, &[1.0], 10, &opts, None).unwrap();
        assert!(sol.converged);
        assert!(sol.grad_norm <= 1e-10);
        assert!(sol.u_traj[0] < 0.0);
        let trace = sol.trace.unwrap();
        for pair in trace.windows(2) {
            assert!(pair[1].value <= pair[0].value + 1e-14 * (1.0 + pair[0].value.abs()));
        }
    }

    #[test]
    fn tree_at_zero_sigma_equals_nominal() {
        let m = benchmark();
        let tree = binary_tree(&m);
        let opts = SolverOptions::default();
        let nominal = solve_nominal(&m, &[1.0], 10, &opts, None).unwrap();
        let sol = solve_tree(&m, &tree, &[1.0], 0.0, &opts).unwrap();
        assert!(sol.converged);
        assert!((sol.value - nominal.value).abs() <= 1e-10);
        for k in 0..10 {
            for i in 1..=tree.stage_len(k) {
                assert!((sol.u_tree[tree.flat(k, i)] - nominal.u_traj[k]).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn tree_sigma_symmetry_and_optimality() {
        let m = benchmark();
        let tree = binary_tree(&m);
        let opts = SolverOptions::default();
        let plus = solve_tree(&m, &tree, &[1.0], 0.2, &opts).unwrap();
        let minus = solve_tree(&m, &tree, &[1.0], -0.2, &opts).unwrap();
        assert!(plus.converged && minus.converged);
        assert!((plus.value - minus.value).abs() <= 1e-9 * (1.0 + plus.value.abs()));
        let obj = TreeObjective::new(&m, &tree, &[1.0], 0.2);
        let (_, g) = obj.value_and_gradient(&plus.u_tree);
        assert!(g.iter().all(|v| v.abs() <= opts.grad_tol));
        // the certainty-equivalent feedback is one feasible tree policy
        let cec = crate::cec::evaluate_cec(&m, &tree, &[1.0], 0.2, &opts).unwrap();
        assert!(plus.value <= obj.eval(&cec.controls));
    }

    #[test]
    fn lq_tree_root_matches_nominal() {
        let (a, b) = crate::model::linearize_at_origin(0.2);
        let lq = LqModel::scalar(a, b, 5.0, 1.0, 10).unwrap();
        let tree = ScenarioTree::build(10, lq.noise().values(), lq.noise().probs()).unwrap();
        let opts = SolverOptions::default();
        let nominal = solve_nominal(&lq, &[1.0], 10, &opts, None).unwrap();
        let sol = solve_tree(&lq, &tree, &[1.0], 0.1, &opts).unwrap();
        assert!((sol.u_tree[0] - nominal.u_traj[0]).abs() <= 1e-8);
    }

    #[test]
    fn tree_must_match_model() {
        let m = benchmark();
        let wrong = ScenarioTree::build(3, m.noise().values(), m.noise().probs()).unwrap();
        assert!(matches!(
            solve_tree(&m, &wrong, &[0.0], 0.1, &SolverOptions::default()),
            Err(SolverError::Precondition(_))
        ));
    }
}
