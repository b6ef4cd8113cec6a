//! Exact evaluation of the certainty-equivalent policy (shrinking-horizon
//! nominal MPC) on the stochastic system, by enumerating every disturbance
//! sequence of the scenario tree.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::model::OcpModel;
use crate::solver::{check_tree, solve_nominal, NominalSolution, SolverError, SolverOptions};
use crate::summation::compensated_sum;
use crate::tree::ScenarioTree;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CecError {
    #[error("nominal solve at stage {stage}, node {index} failed: {source}")]
    Solver {
        stage: usize,
        index: usize,
        #[source]
        source: SolverError,
    },
    #[error("nominal solve at stage {stage}, node {index} did not converge (gradient max norm {grad_norm:e})")]
    NotConverged { stage: usize, index: usize, grad_norm: f64 },
    #[error(transparent)]
    Precondition(SolverError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NodeDiagnostics {
    pub iters: usize,
    pub grad_norm: f64,
}

/// One row of the per-node export.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NodeRow {
    pub stage: usize,
    pub node: usize,
    pub x: f64,
    /// `NaN` at leaves.
    pub u: f64,
    /// Unweighted stage (or terminal) cost at the node.
    pub cost: f64,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CecEvaluation {
    /// Expected closed-loop cost `V^cec_σ(x0)`.
    pub value: f64,
    /// First control of the nominal problem at `x0`; independent of `σ`.
    pub root_control: Vec<f64>,
    /// Flat node states, `n_x` per state node.
    pub states: Vec<f64>,
    /// Flat node controls, `n_u` per control node.
    pub controls: Vec<f64>,
    /// Probability-weighted cost contribution per state node.
    pub weighted_costs: Vec<f64>,
    /// One entry per control node.
    pub diagnostics: Vec<NodeDiagnostics>,
}

impl CecEvaluation {
    /// Per-node rows for scalar models (first state/control component).
    pub fn node_rows(&self, tree: &ScenarioTree, nx: usize, nu: usize) -> Vec<NodeRow> {
        let n = tree.horizon();
        let mut rows = Vec::with_capacity(tree.state_node_count());
        for k in 0..=n {
            let pk = tree.stage_prob(k);
            for i in 1..=tree.stage_len(k) {
                let j = tree.flat(k, i);
                rows.push(NodeRow {
                    stage: k,
                    node: i,
                    x: self.states[j * nx],
                    u: if k < n { self.controls[j * nu] } else { f64::NAN },
                    cost: self.weighted_costs[j] / pk,
                    probability: pk,
                });
            }
        }
        rows
    }
}

fn check_solution(stage: usize, index: usize, result: Result<NominalSolution, SolverError>) -> Result<NominalSolution, CecError> {
    let sol = result.map_err(|source| CecError::Solver { stage, index, source })?;
    if !sol.converged {
        return Err(CecError::NotConverged { stage, index, grad_norm: sol.grad_norm });
    }
    Ok(sol)
}

/// Simulates shrinking-horizon nominal MPC over every scenario: at each node
/// the nominal OCP over the remaining `N − k` steps is solved from the node's
/// state (warm-started from the parent's plan shifted by one step) and its
/// first control applied. Nodes of a stage are solved in parallel; all
/// reductions run in flat node order.
pub fn evaluate_cec<M: OcpModel>(
    model: &M,
    tree: &ScenarioTree,
    x0: &[f64],
    sigma: f64,
    opts: &SolverOptions,
) -> Result<CecEvaluation, CecError> {
    check_tree(model, tree).map_err(CecError::Precondition)?;
    if x0.len() != model.state_dim() {
        return Err(CecError::Precondition(SolverError::Dimension { expected: model.state_dim(), got: x0.len() }));
    }
    let (nx, nu) = (model.state_dim(), model.control_dim());
    let n = tree.horizon();
    let mut states = vec![0.0; tree.state_node_count() * nx];
    states[..nx].copy_from_slice(x0);
    let mut controls = vec![0.0; tree.control_node_count() * nu];
    let mut diagnostics = Vec::with_capacity(tree.control_node_count());
    let mut plans: Vec<Vec<f64>> = Vec::new();
    let mut w = vec![0.0; model.noise_dim()];

    for k in 0..n {
        let remaining = n - k;
        let offset = tree.stage_offset(k);
        let parent_plans = &plans;
        let states_ref = &states;
        let solved: Vec<Result<NominalSolution, CecError>> = (1..=tree.stage_len(k))
            .into_par_iter()
            .map(|i| {
                let j = offset + i - 1;
                let warm = (k > 0).then(|| {
                    let parent = parent_plans[i.div_ceil(tree.branching()) - 1].as_slice();
                    &parent[nu..]
                });
                let x = &states_ref[j * nx..(j + 1) * nx];
                check_solution(k, i, solve_nominal(model, x, remaining, opts, warm))
            })
            .collect();
        let mut stage_plans = Vec::with_capacity(solved.len());
        for (idx, result) in solved.into_iter().enumerate() {
            let sol = result?;
            let j = offset + idx;
            controls[j * nu..(j + 1) * nu].copy_from_slice(&sol.u_traj[..nu]);
            diagnostics.push(NodeDiagnostics { iters: sol.iters, grad_norm: sol.grad_norm });
            stage_plans.push(sol.u_traj);
        }
        for i in 1..=tree.stage_len(k) {
            let parent = tree.flat(k, i);
            for c in tree.children(i) {
                let child = tree.flat(k + 1, c);
                for (wj, &dj) in w.iter_mut().zip(tree.disturbance(c)) {
                    *wj = sigma * dj;
                }
                let (head, tail) = states.split_at_mut(child * nx);
                model.dynamics(
                    &head[parent * nx..(parent + 1) * nx],
                    &controls[parent * nu..(parent + 1) * nu],
                    &w,
                    &mut tail[..nx],
                );
            }
        }
        plans = stage_plans;
    }

    let mut weighted_costs = Vec::with_capacity(tree.state_node_count());
    for k in 0..=n {
        let pk = tree.stage_prob(k);
        for i in 1..=tree.stage_len(k) {
            let j = tree.flat(k, i);
            let x = &states[j * nx..(j + 1) * nx];
            let cost = if k < n { model.stage_cost(x, &controls[j * nu..(j + 1) * nu]) } else { model.terminal_cost(x) };
            weighted_costs.push(cost * pk);
        }
    }
    let value = compensated_sum(weighted_costs.iter().copied());
    let root_control = if n > 0 { controls[..nu].to_vec() } else { Vec::new() };
    Ok(CecEvaluation { value, root_control, states, controls, weighted_costs, diagnostics })
}

/// First control of the nominal problem over the full horizon.
pub fn cec_root_control<M: OcpModel>(model: &M, x0: &[f64], opts: &SolverOptions) -> Result<Vec<f64>, CecError> {
    let sol = check_solution(0, 1, solve_nominal(model, x0, model.horizon(), opts, None))?;
    Ok(sol.first_control(model.control_dim()).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BenchmarkModel, BenchmarkParams, LqModel};
    use crate::solver::solve_tree;

    fn setup() -> (BenchmarkModel, ScenarioTree) {
        let m = BenchmarkModel::new(BenchmarkParams::default()).unwrap();
        let t = ScenarioTree::build(10, m.noise().values(), m.noise().probs()).unwrap();
        (m, t)
    }

    #[test]
    fn zero_sigma_reproduces_nominal() {
        let (m, t) = setup();
        let opts = SolverOptions::default();
        let nominal = solve_nominal(&m, &[1.0], 10, &opts, None).unwrap();
        let cec = evaluate_cec(&m, &t, &[1.0], 0.0, &opts).unwrap();
        assert!((cec.value - nominal.value).abs() <= 1e-10);
        assert_eq!(cec.root_control[0], nominal.u_traj[0]);
    }

    #[test]
    fn value_is_leaf_weighted_path_cost() {
        let (m, t) = setup();
        let opts = SolverOptions::default();
        let cec = evaluate_cec(&m, &t, &[0.5], 0.1, &opts).unwrap();
        // expectation over leaves of the accumulated path cost
        let pn = t.stage_prob(10);
        let mut total = 0.0;
        for leaf in 1..=t.stage_len(10) {
            let mut path_cost = m.terminal_cost(&[cec.states[t.flat(10, leaf)]]);
            let mut i = leaf;
            for k in (0..10).rev() {
                i = crate::tree::parent_index(i, 2, t.stage_len(k + 1)).unwrap();
                let j = t.flat(k, i);
                path_cost += m.stage_cost(&[cec.states[j]], &[cec.controls[j]]);
            }
            total += pn * path_cost;
        }
        assert!((total - cec.value).abs() <= 1e-12 * cec.value.abs());
        assert!(cec.diagnostics.iter().all(|d| d.grad_norm <= opts.grad_tol));
    }

    #[test]
    fn cec_is_suboptimal_and_even() {
        let (m, t) = setup();
        let opts = SolverOptions::default();
        let star = solve_tree(&m, &t, &[1.0], 0.2, &opts).unwrap();
        let plus = evaluate_cec(&m, &t, &[1.0], 0.2, &opts).unwrap();
        let minus = evaluate_cec(&m, &t, &[1.0], -0.2, &opts).unwrap();
        assert!(plus.value >= star.value - 1e-9 * (1.0 + star.value.abs()));
        assert!((plus.value - minus.value).abs() <= 1e-9 * (1.0 + plus.value.abs()));
        assert_eq!(plus.root_control, minus.root_control);
    }

    #[test]
    fn lq_cec_is_optimal() {
        let (a, b) = crate::model::linearize_at_origin(0.2);
        let lq = LqModel::scalar(a, b, 5.0, 1.0, 10).unwrap();
        let t = ScenarioTree::build(10, lq.noise().values(), lq.noise().probs()).unwrap();
        let opts = SolverOptions::default();
        let star = solve_tree(&lq, &t, &[0.5], 0.2, &opts).unwrap();
        let cec = evaluate_cec(&lq, &t, &[0.5], 0.2, &opts).unwrap();
        assert!((cec.value - star.value).abs() <= 1e-8);
    }

    #[test]
    fn policy_depends_on_state_and_stage_only() {
        // x0 = 0 with σ: nodes at stage 2 reached by (+,−) and (−,+) differ,
        // but re-solving from a copied state must give the same control
        let (m, t) = setup();
        let opts = SolverOptions::default();
        let cec = evaluate_cec(&m, &t, &[0.3], 0.1, &opts).unwrap();
        for i in 1..=t.stage_len(3) {
            let j = t.flat(3, i);
            let fresh = solve_nominal(&m, &[cec.states[j]], 7, &opts, None).unwrap();
            assert!((fresh.u_traj[0] - cec.controls[j]).abs() <= 1e-9);
        }
    }

    #[test]
    fn root_control_helper() {
        let (m, _) = setup();
        let opts = SolverOptions::default();
        let no_pen = BenchmarkModel::new(BenchmarkParams { rho: 0.0, ..Default::default() }).unwrap();
        assert_eq!(cec_root_control(&no_pen, &[0.0], &opts).unwrap(), vec![0.0]);
        let lq = LqModel::scalar(1.0, 1.0, 1.0, 1.0, 3).unwrap();
        let (_, k0) = lq.riccati_recursion(3);
        let u = cec_root_control(&lq, &[1.0], &opts).unwrap();
        assert!((u[0] + k0[(0, 0)]).abs() <= 1e-8);
        let u1 = cec_root_control(&m, &[1.0], &opts).unwrap();
        let nominal = solve_nominal(&m, &[1.0], 10, &opts, None).unwrap();
        assert_eq!(u1[0], nominal.u_traj[0]);
    }

    #[test]
    fn node_rows_layout() {
        let (m, t) = setup();
        let cec = evaluate_cec(&m, &t, &[1.0], 0.05, &SolverOptions::default()).unwrap();
        let rows = cec.node_rows(&t, 1, 1);
        assert_eq!(rows.len(), 2047);
        assert_eq!(rows.iter().filter(|r| r.u.is_nan()).count(), 1024);
    }
}
