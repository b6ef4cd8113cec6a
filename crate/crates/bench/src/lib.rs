//! Shared fixtures for the criterion benches.

use cecsub::model::{BenchmarkModel, BenchmarkParams, OcpModel};
use cecsub::tree::ScenarioTree;

pub fn benchmark() -> BenchmarkModel {
    BenchmarkModel::new(BenchmarkParams::default()).expect("default parameters")
}

pub fn benchmark_tree(model: &BenchmarkModel) -> ScenarioTree {
    ScenarioTree::build(model.horizon(), model.noise().values(), model.noise().probs()).expect("fits the node budget")
}
