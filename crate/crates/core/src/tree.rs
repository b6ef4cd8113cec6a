//! Scenario trees over a finite disturbance set.
//!
//! Stage `k` holds `m^k` nodes, numbered `1..=m^k` within the stage and stored
//! flat with per-stage offsets. Child `i` at stage `k+1` hangs off parent
//! `⌈i/m⌉` and sees disturbance branch `((i−1) mod m) + 1`. Control nodes are
//! the state nodes of stages `0..N`, so both share flat indices.

use serde::Serialize;
use thiserror::Error;

use crate::model::OcpModel;

pub const DEFAULT_NODE_BUDGET: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("node index {index} out of range 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },
    #[error("tree with branching {branching} and horizon {horizon} exceeds the node budget of {budget}")]
    TooLarge { branching: usize, horizon: usize, budget: usize },
    #[error("disturbance set must not be empty")]
    EmptyDisturbanceSet,
    #[error("only uniform branch probabilities are supported")]
    NonUniform,
    #[error("control tree has {got} entries, expected {expected}")]
    ControlSize { got: usize, expected: usize },
}

/// Parent of 1-based node `i` one stage up: `⌈i/m⌉`.
pub fn parent_index(i: usize, m: usize, stage_len: usize) -> Result<usize, TreeError> {
    if i == 0 || i > stage_len {
        return Err(TreeError::IndexOutOfRange { index: i, max: stage_len });
    }
    Ok(i.div_ceil(m))
}

/// Disturbance branch of 1-based node `i`: `((i−1) mod m) + 1`.
pub fn disturbance_index(i: usize, m: usize) -> usize {
    debug_assert!(i >= 1);
    (i - 1) % m + 1
}

#[derive(Clone, Debug, Serialize)]
pub struct ScenarioTree {
    branching: usize,
    horizon: usize,
    /// Flat index of the first node of each stage, plus one past the end.
    stage_offsets: Vec<usize>,
    w_values: Vec<Vec<f64>>,
    stage_prob: Vec<f64>,
}

impl ScenarioTree {
    pub fn build(horizon: usize, w_values: &[Vec<f64>], probs: &[f64]) -> Result<Self, TreeError> {
        Self::build_with_budget(horizon, w_values, probs, DEFAULT_NODE_BUDGET)
    }

    pub fn build_with_budget(
        horizon: usize,
        w_values: &[Vec<f64>],
        probs: &[f64],
        budget: usize,
    ) -> Result<Self, TreeError> {
        let m = w_values.len();
        if m == 0 {
            return Err(TreeError::EmptyDisturbanceSet);
        }
        let p = 1.0 / m as f64;
        if probs.len() != m || probs.iter().any(|&q| (q - p).abs() > 1e-15) {
            return Err(TreeError::NonUniform);
        }
        let too_large = TreeError::TooLarge { branching: m, horizon, budget };
        let mut stage_offsets = Vec::with_capacity(horizon + 2);
        let mut offset = 0usize;
        let mut stage_len = 1usize;
        for k in 0..=horizon {
            stage_offsets.push(offset);
            offset = offset.checked_add(stage_len).ok_or(too_large.clone())?;
            if offset > budget {
                return Err(too_large);
            }
            if k < horizon {
                stage_len = stage_len.checked_mul(m).ok_or(too_large.clone())?;
            }
        }
        stage_offsets.push(offset);
        let stage_prob = (0..=horizon).map(|k| p.powi(k as i32)).collect();
        Ok(ScenarioTree { branching: m, horizon, stage_offsets, w_values: w_values.to_vec(), stage_prob })
    }

    /// A single path with zero disturbance: the nominal problem.
    pub fn nominal(horizon: usize, noise_dim: usize) -> Self {
        Self::build(horizon, &[vec![0.0; noise_dim]], &[1.0]).expect("a path always fits the budget")
    }

    pub fn branching(&self) -> usize {
        self.branching
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn w_values(&self) -> &[Vec<f64>] {
        &self.w_values
    }

    /// Probability weight `p^k` of a single stage-`k` node.
    pub fn stage_prob(&self, k: usize) -> f64 {
        self.stage_prob[k]
    }

    pub fn stage_len(&self, k: usize) -> usize {
        self.stage_offsets[k + 1] - self.stage_offsets[k]
    }

    pub fn stage_offset(&self, k: usize) -> usize {
        self.stage_offsets[k]
    }

    pub fn state_node_count(&self) -> usize {
        self.stage_offsets[self.horizon + 1]
    }

    pub fn control_node_count(&self) -> usize {
        self.stage_offsets[self.horizon]
    }

    /// Flat index of 1-based node `i` in stage `k`.
    #[inline]
    pub fn flat(&self, k: usize, i: usize) -> usize {
        debug_assert!(i >= 1 && i <= self.stage_len(k));
        self.stage_offsets[k] + i - 1
    }

    /// Stage and 1-based position of a flat index.
    pub fn locate(&self, flat: usize) -> (usize, usize) {
        let k = self.stage_offsets.partition_point(|&o| o <= flat) - 1;
        (k, flat - self.stage_offsets[k] + 1)
    }

    /// 1-based children of node `i` in stage `k`, in branch order.
    #[inline]
    pub fn children(&self, i: usize) -> std::ops::RangeInclusive<usize> {
        let m = self.branching;
        (m * (i - 1) + 1)..=(m * i)
    }

    /// Disturbance (unscaled) seen by 1-based node `i`.
    #[inline]
    pub fn disturbance(&self, i: usize) -> &[f64] {
        &self.w_values[disturbance_index(i, self.branching) - 1]
    }

    /// Forward simulation over the whole tree; returns every node's state,
    /// flattened with `n_x` entries per node.
    pub fn rollout<M: OcpModel>(&self, model: &M, x0: &[f64], u_tree: &[f64], sigma: f64) -> Result<Vec<f64>, TreeError> {
        let (nx, nu) = (model.state_dim(), model.control_dim());
        let expected = self.control_node_count() * nu;
        if u_tree.len() != expected {
            return Err(TreeError::ControlSize { got: u_tree.len(), expected });
        }
        let mut states = vec![0.0; self.state_node_count() * nx];
        states[..nx].copy_from_slice(x0);
        let mut w = vec![0.0; model.noise_dim()];
        for k in 0..self.horizon {
            for i in 1..=self.stage_len(k) {
                let parent = self.flat(k, i);
                for c in self.children(i) {
                    let child = self.flat(k + 1, c);
                    for (wj, &dj) in w.iter_mut().zip(self.disturbance(c)) {
                        *wj = sigma * dj;
                    }
                    let (head, tail) = states.split_at_mut(child * nx);
                    model.dynamics(
                        &head[parent * nx..(parent + 1) * nx],
                        &u_tree[parent * nu..(parent + 1) * nu],
                        &w,
                        &mut tail[..nx],
                    );
                }
            }
        }
        Ok(states)
    }
}
