//! Single-shooting objectives for the nominal and the tree-structured OCP.
//!
//! States are eliminated by forward simulation, leaving an unconstrained
//! problem in the controls. One generic routine computes cost and gradient
//! for any [`Scalar`]: on `f64` it is the gradient, on `Dual1` seeded with a
//! direction `v` its derivative part is `H·v`.

use std::borrow::Cow;

use super::newton::Objective;
use crate::autodiff::{Dual, Dual1, Scalar};
use crate::model::OcpModel;
use crate::summation::CompensatedSum;
use crate::tree::ScenarioTree;

/// Above this many control nodes the gradient is always taken by an adjoint
/// sweep; at or below it [`GradientMode::Auto`] uses forward passes.
pub const FORWARD_MODE_MAX_NODES: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum GradientMode {
    #[default]
    Auto,
    Forward,
    Adjoint,
}

/// Expected cost over a scenario tree as a function of one control per
/// control node:
/// `Σ_k p^k Σ_i L(x_k^i, u_k^i) + p^N Σ_i E(x_N^i)`.
pub struct TreeObjective<'a, M> {
    model: &'a M,
    tree: Cow<'a, ScenarioTree>,
    x0: Vec<f64>,
    sigma: f64,
    mode: GradientMode,
}

impl<'a, M: OcpModel> TreeObjective<'a, M> {
    pub fn new(model: &'a M, tree: &'a ScenarioTree, x0: &[f64], sigma: f64) -> Self {
        TreeObjective { model, tree: Cow::Borrowed(tree), x0: x0.to_vec(), sigma, mode: GradientMode::Auto }
    }

    pub fn with_mode(mut self, mode: GradientMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn tree(&self) -> &ScenarioTree {
        &self.tree
    }

    fn uses_adjoint(&self) -> bool {
        match self.mode {
            GradientMode::Forward => false,
            GradientMode::Adjoint => true,
            GradientMode::Auto => self.tree.control_node_count() > FORWARD_MODE_MAX_NODES,
        }
    }

    /// Node states for controls of any scalar type.
    pub fn rollout<S: Scalar>(&self, u: &[S]) -> Vec<S> {
        let (nx, nu) = (self.model.state_dim(), self.model.control_dim());
        let tree = &*self.tree;
        let mut states = vec![S::zero(); tree.state_node_count() * nx];
        for (s, &x) in states.iter_mut().zip(&self.x0) {
            *s = S::cst(x);
        }
        let mut w = vec![0.0; self.model.noise_dim()];
        for k in 0..tree.horizon() {
            for i in 1..=tree.stage_len(k) {
                let parent = tree.flat(k, i);
                for c in tree.children(i) {
                    let child = tree.flat(k + 1, c);
                    for (wj, &dj) in w.iter_mut().zip(tree.disturbance(c)) {
                        *wj = self.sigma * dj;
                    }
                    let (head, tail) = states.split_at_mut(child * nx);
                    self.model.dynamics(
                        &head[parent * nx..(parent + 1) * nx],
                        &u[parent * nu..(parent + 1) * nu],
                        &w,
                        &mut tail[..nx],
                    );
                }
            }
        }
        states
    }

    fn cost_from_states<S: Scalar>(&self, u: &[S], states: &[S]) -> S {
        let (nx, nu) = (self.model.state_dim(), self.model.control_dim());
        let tree = &*self.tree;
        let n = tree.horizon();
        let mut total = CompensatedSum::new();
        for k in 0..n {
            let pk = tree.stage_prob(k);
            for i in 1..=tree.stage_len(k) {
                let j = tree.flat(k, i);
                total.add(self.model.stage_cost(&states[j * nx..(j + 1) * nx], &u[j * nu..(j + 1) * nu]) * pk);
            }
        }
        let pn = tree.stage_prob(n);
        for i in 1..=tree.stage_len(n) {
            let j = tree.flat(n, i);
            total.add(self.model.terminal_cost(&states[j * nx..(j + 1) * nx]) * pn);
        }
        total.total()
    }

    /// Objective value for controls of any scalar type.
    pub fn eval<S: Scalar>(&self, u: &[S]) -> S {
        let states = self.rollout(u);
        self.cost_from_states(u, &states)
    }

    /// Cost and gradient, by forward passes or an adjoint sweep.
    pub fn cost_and_gradient<S: Scalar>(&self, u: &[S]) -> (S, Vec<S>) {
        if self.uses_adjoint() {
            self.adjoint_gradient(u)
        } else {
            self.forward_gradient(u)
        }
    }

    fn forward_gradient<S: Scalar>(&self, u: &[S]) -> (S, Vec<S>) {
        let mut seeded: Vec<Dual<S>> = u.iter().map(|&v| Dual::constant(v)).collect();
        let mut grad = Vec::with_capacity(u.len());
        if u.is_empty() {
            return (self.eval(u), grad);
        }
        let mut value = S::zero();
        for j in 0..u.len() {
            seeded[j].eps = S::cst(1.0);
            let out = self.eval(&seeded);
            seeded[j].eps = S::zero();
            value = out.re;
            grad.push(out.eps);
        }
        (value, grad)
    }

    fn adjoint_gradient<S: Scalar>(&self, u: &[S]) -> (S, Vec<S>) {
        let (nx, nu) = (self.model.state_dim(), self.model.control_dim());
        let tree = &*self.tree;
        let n = tree.horizon();
        let states = self.rollout(u);
        let value = self.cost_from_states(u, &states);

        let mut lambda = vec![S::zero(); tree.state_node_count() * nx];
        let mut grad = vec![S::zero(); u.len()];
        let mut z: Vec<Dual<S>> = vec![Dual::constant(S::zero()); nx + nu];
        let mut next: Vec<Dual<S>> = vec![Dual::constant(S::zero()); nx];

        let pn = tree.stage_prob(n);
        for i in 1..=tree.stage_len(n) {
            let j = tree.flat(n, i);
            for d in 0..nx {
                z[d] = Dual::constant(states[j * nx + d]);
            }
            for d in 0..nx {
                z[d].eps = S::cst(1.0);
                lambda[j * nx + d] = self.model.terminal_cost(&z[..nx]).eps * pn;
                z[d].eps = S::zero();
            }
        }

        let mut w = vec![0.0; self.model.noise_dim()];
        for k in (0..n).rev() {
            let pk = tree.stage_prob(k);
            for i in 1..=tree.stage_len(k) {
                let j = tree.flat(k, i);
                for d in 0..nx {
                    z[d] = Dual::constant(states[j * nx + d]);
                }
                for d in 0..nu {
                    z[nx + d] = Dual::constant(u[j * nu + d]);
                }
                // stage-cost partials, then transposed Jacobian products
                // with each child's adjoint
                for d in 0..nx + nu {
                    z[d].eps = S::cst(1.0);
                    let mut acc = self.model.stage_cost(&z[..nx], &z[nx..]).eps * pk;
                    for c in tree.children(i) {
                        let child = tree.flat(k + 1, c);
                        for (wj, &dj) in w.iter_mut().zip(tree.disturbance(c)) {
                            *wj = self.sigma * dj;
                        }
                        self.model.dynamics(&z[..nx], &z[nx..], &w, &mut next);
                        for r in 0..nx {
                            acc += next[r].eps * lambda[child * nx + r];
                        }
                    }
                    z[d].eps = S::zero();
                    if d < nx {
                        lambda[j * nx + d] = acc;
                    } else {
                        grad[j * nu + d - nx] = acc;
                    }
                }
            }
        }
        (value, grad)
    }
}

impl<M: OcpModel> Objective for TreeObjective<'_, M> {
    fn dim(&self) -> usize {
        self.tree.control_node_count() * self.model.control_dim()
    }

    fn value(&self, u: &[f64]) -> f64 {
        self.eval(u)
    }

    fn value_and_gradient(&self, u: &[f64]) -> (f64, Vec<f64>) {
        self.cost_and_gradient(u)
    }

    fn hessian_vector(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let seeded: Vec<Dual1> = u.iter().zip(v).map(|(&a, &b)| Dual::new(a, b)).collect();
        let (_, grad) = self.cost_and_gradient(&seeded);
        grad.into_iter().map(|g| g.eps).collect()
    }

    /// Stage probabilities: the Hessian block of a stage-`k` control scales
    /// with `p^k`.
    fn scaling(&self) -> Option<Vec<f64>> {
        let nu = self.model.control_dim();
        let tree = &*self.tree;
        let mut d = Vec::with_capacity(self.dim());
        for k in 0..tree.horizon() {
            d.extend(std::iter::repeat_n(tree.stage_prob(k), tree.stage_len(k) * nu));
        }
        Some(d)
    }
}

/// Nominal OCP (zero disturbance) over `horizon` steps from `x0`.
pub struct NominalObjective<'a, M>(pub TreeObjective<'a, M>);

impl<'a, M: OcpModel> NominalObjective<'a, M> {
    pub fn new(model: &'a M, x0: &[f64], horizon: usize) -> Self {
        let tree = ScenarioTree::nominal(horizon, model.noise_dim());
        NominalObjective(TreeObjective {
            model,
            tree: Cow::Owned(tree),
            x0: x0.to_vec(),
            sigma: 0.0,
            mode: GradientMode::Auto,
        })
    }

    pub fn with_mode(self, mode: GradientMode) -> Self {
        NominalObjective(self.0.with_mode(mode))
    }

    pub fn horizon(&self) -> usize {
        self.0.tree.horizon()
    }

    pub fn eval<S: Scalar>(&self, u: &[S]) -> S {
        self.0.eval(u)
    }

    pub fn cost_and_gradient<S: Scalar>(&self, u: &[S]) -> (S, Vec<S>) {
        self.0.cost_and_gradient(u)
    }
}

impl<M: OcpModel> Objective for NominalObjective<'_, M> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn value(&self, u: &[f64]) -> f64 {
        self.0.value(u)
    }
    fn value_and_gradient(&self, u: &[f64]) -> (f64, Vec<f64>) {
        self.0.value_and_gradient(u)
    }
    fn hessian_vector(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        self.0.hessian_vector(u, v)
    }
}
