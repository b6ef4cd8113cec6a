//! Run configuration: TOML with dotted sections (`solver.grad_tol = 1e-10`),
//! every key optional, unknown keys rejected.

use std::path::{Path, PathBuf};

use cecsub::dp::Grid1D;
use cecsub::model::{linearize_at_origin, BenchmarkModel, BenchmarkParams, LqModel, ModelSpec};
use cecsub::tree::DEFAULT_NODE_BUDGET;
use cecsub::SolverOptions;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Benchmark,
    Lq,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LqSection {
    /// Defaults to the linearization of the benchmark at the origin.
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub q: f64,
    pub r: f64,
    pub horizon: usize,
}

impl Default for LqSection {
    fn default() -> Self {
        LqSection { a: None, b: None, q: 5.0, r: 1.0, horizon: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    /// Range used for the summary gap and the plots.
    pub view_lo: f64,
    pub view_hi: f64,
    /// Re-solve on the refined grid and report the change.
    pub refinement_check: bool,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { lo: -2.0, hi: 2.0, points: 2001, view_lo: -0.1, view_hi: 1.2, refinement_check: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySection {
    pub slope_lo: f64,
    pub slope_hi: f64,
}

impl Default for StudySection {
    fn default() -> Self {
        StudySection { slope_lo: 0.01, slope_hi: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeSection {
    pub node_budget: usize,
}

impl Default for TreeSection {
    fn default() -> Self {
        TreeSection { node_budget: DEFAULT_NODE_BUDGET }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelKind,
    pub benchmark: BenchmarkParams,
    pub lq: LqSection,
    pub grid: GridSection,
    pub solver: SolverOptions,
    pub study: StudySection,
    pub tree: TreeSection,
    /// Per-command defaults apply when unset.
    pub sigma: Option<Vec<f64>>,
    pub x: Option<Vec<f64>>,
    pub out: Option<PathBuf>,
    pub plot: bool,
    /// 0 lets the pool pick.
    pub workers: usize,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Checks every precondition the commands rely on.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        self.benchmark.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.solver.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.lq.r > 0.0) || !(self.lq.q >= 0.0) {
            return bad(format!("lq: need r > 0 and q ≥ 0, got q = {}, r = {}", self.lq.q, self.lq.r));
        }
        Grid1D::new(self.grid.lo, self.grid.hi, self.grid.points).map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.grid.view_lo < self.grid.view_hi) {
            return bad(format!("grid: view range [{}, {}] is empty", self.grid.view_lo, self.grid.view_hi));
        }
        if !(self.study.slope_lo > 0.0 && self.study.slope_lo < self.study.slope_hi) {
            return bad(format!("study: need 0 < slope_lo < slope_hi, got [{}, {}]", self.study.slope_lo, self.study.slope_hi));
        }
        if let Some(s) = &self.sigma {
            if s.is_empty() {
                return bad("sigma list is empty".into());
            }
            if let Some(v) = s.iter().find(|v| !v.is_finite()) {
                return bad(format!("sigma values must be finite, got {v}"));
            }
        }
        if let Some(x) = &self.x {
            if x.is_empty() {
                return bad("x list is empty".into());
            }
            if let Some(v) = x.iter().find(|v| !v.is_finite()) {
                return bad(format!("x values must be finite, got {v}"));
            }
        }
        Ok(())
    }

    pub fn model(&self) -> Result<ModelSpec, CliError> {
        let m = match self.model {
            ModelKind::Benchmark => BenchmarkModel::new(self.benchmark.clone()).map(ModelSpec::from),
            ModelKind::Lq => {
                let (a0, b0) = linearize_at_origin(BenchmarkParams::default().h());
                LqModel::scalar(self.lq.a.unwrap_or(a0), self.lq.b.unwrap_or(b0), self.lq.q, self.lq.r, self.lq.horizon)
                    .map(ModelSpec::from)
            }
        };
        m.map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn grid(&self) -> Grid1D {
        Grid1D::new(self.grid.lo, self.grid.hi, self.grid.points).expect("validated")
    }

    pub fn sigmas_or(&self, default: &[f64]) -> Vec<f64> {
        self.sigma.clone().unwrap_or_else(|| default.to_vec())
    }

    pub fn xs_or(&self, default: &[f64]) -> Vec<f64> {
        self.x.clone().unwrap_or_else(|| default.to_vec())
    }
}

/// Parses `0.01,0.05, 0.2`.
pub fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|t| t.trim().parse::<f64>().map_err(|e| format!("'{}': {e}", t.trim()))).collect()
}
