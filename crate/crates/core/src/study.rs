//! Suboptimality of certainty-equivalent control as a function of the
//! uncertainty level: per-point records, log-log slope fits, and the
//! breakdown scan.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::cec::{evaluate_cec, CecError};
use crate::model::OcpModel;
use crate::solver::{solve_tree, SolverError, SolverOptions};
use crate::tree::{ScenarioTree, TreeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StudyError {
    #[error("{0}")]
    Precondition(String),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("tree solve at x = {x}, sigma = {sigma}: {source}")]
    TreeSolve {
        x: f64,
        sigma: f64,
        #[source]
        source: SolverError,
    },
    #[error("tree solve at x = {x}, sigma = {sigma} did not converge (gradient max norm {grad_norm:e})")]
    NotConverged { x: f64, sigma: f64, grad_norm: f64 },
    #[error("CEC evaluation at x = {x}, sigma = {sigma}: {source}")]
    Cec {
        x: f64,
        sigma: f64,
        #[source]
        source: CecError,
    },
    #[error("slope fit needs at least 3 points in the window, got {0}")]
    InsufficientPoints(usize),
    #[error("every value in the fit window is nonpositive (solver noise floor?)")]
    NonPositive,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScalingRecord {
    pub x: f64,
    pub sigma: f64,
    pub v_star: f64,
    pub v_cec: f64,
    pub delta_v: f64,
    pub u_star_root: f64,
    pub u_cec_root: f64,
    pub control_gap: f64,
}

/// A record that could not be computed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecordFailure {
    pub x: f64,
    pub sigma: f64,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StudyResult {
    /// Ordered by `x`, then `σ`, as given.
    pub records: Vec<ScalingRecord>,
    pub failures: Vec<RecordFailure>,
}

impl StudyResult {
    pub fn records_at(&self, x: f64) -> Vec<ScalingRecord> {
        self.records.iter().filter(|r| r.x == x).copied().collect()
    }
}

/// The scenario tree of `model`.
pub fn model_tree<M: OcpModel>(model: &M) -> Result<ScenarioTree, StudyError> {
    Ok(ScenarioTree::build(model.horizon(), model.noise().values(), model.noise().probs())?)
}

/// Convergence evidence behind one record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SolveDiagnostics {
    pub tree_iters: usize,
    pub tree_grad_norm: f64,
    /// Number of nominal solves in the CEC evaluation.
    pub cec_solves: usize,
    /// Largest final gradient norm over those solves.
    pub cec_max_grad_norm: f64,
}

/// `V*_σ(x)` and `V^cec_σ(x)` with their root controls, for any `σ`.
pub fn scaling_record<M: OcpModel>(
    model: &M,
    tree: &ScenarioTree,
    x: f64,
    sigma: f64,
    opts: &SolverOptions,
) -> Result<ScalingRecord, StudyError> {
    scaling_record_with_diagnostics(model, tree, x, sigma, opts).map(|(r, _)| r)
}

pub fn scaling_record_with_diagnostics<M: OcpModel>(
    model: &M,
    tree: &ScenarioTree,
    x: f64,
    sigma: f64,
    opts: &SolverOptions,
) -> Result<(ScalingRecord, SolveDiagnostics), StudyError> {
    if model.state_dim() != 1 || model.control_dim() != 1 {
        return Err(StudyError::Precondition("scaling records need a scalar state and control".into()));
    }
    let star = solve_tree(model, tree, &[x], sigma, opts).map_err(|source| StudyError::TreeSolve { x, sigma, source })?;
    if !star.converged {
        return Err(StudyError::NotConverged { x, sigma, grad_norm: star.grad_norm });
    }
    let cec = evaluate_cec(model, tree, &[x], sigma, opts).map_err(|source| StudyError::Cec { x, sigma, source })?;
    let (u_star_root, u_cec_root) = (star.u_tree[0], cec.root_control[0]);
    let record = ScalingRecord {
        x,
        sigma,
        v_star: star.value,
        v_cec: cec.value,
        delta_v: cec.value - star.value,
        u_star_root,
        u_cec_root,
        control_gap: (u_cec_root - u_star_root).abs(),
    };
    let diagnostics = SolveDiagnostics {
        tree_iters: star.iters,
        tree_grad_norm: star.grad_norm,
        cec_solves: cec.diagnostics.len(),
        cec_max_grad_norm: cec.diagnostics.iter().map(|d| d.grad_norm).fold(0.0, f64::max),
    };
    Ok((record, diagnostics))
}

/// One record per `(x, σ)`, computed in parallel. A failing point is
/// reported in `failures` and does not stop the others.
pub fn run_scaling_study<M: OcpModel>(
    model: &M,
    x_values: &[f64],
    sigma_values: &[f64],
    opts: &SolverOptions,
) -> Result<StudyResult, StudyError> {
    if let Some(s) = sigma_values.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(StudyError::Precondition(format!("sigma values must be positive, got {s}")));
    }
    if let Some(x) = x_values.iter().find(|x| !x.is_finite()) {
        return Err(StudyError::Precondition(format!("x values must be finite, got {x}")));
    }
    opts.validate().map_err(|e| StudyError::Precondition(e.to_string()))?;
    let tree = model_tree(model)?;
    let points: Vec<(f64, f64)> = x_values.iter().flat_map(|&x| sigma_values.iter().map(move |&s| (x, s))).collect();
    let results: Vec<Result<ScalingRecord, StudyError>> =
        points.par_iter().map(|&(x, s)| scaling_record(model, &tree, x, s, opts)).collect();
    let mut out = StudyResult { records: Vec::new(), failures: Vec::new() };
    for ((x, sigma), r) in points.into_iter().zip(results) {
        match r {
            Ok(rec) => out.records.push(rec),
            Err(e) => {
                log::warn!("study point x = {x}, sigma = {sigma} failed: {e}");
                out.failures.push(RecordFailure { x, sigma, message: e.to_string() });
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub sigma_window: (f64, f64),
    pub n_points: usize,
}

/// Least-squares line through `(ln σ, ln y)` over the pairs with `σ` in the
/// window and `y > 0`.
pub fn fit_loglog_slope(pairs: &[(f64, f64)], window: (f64, f64)) -> Result<SlopeFit, StudyError> {
    let (lo, hi) = window;
    // window ends computed from log-spacing may miss by an ulp or two
    let tol = 1e-12;
    let inside: Vec<(f64, f64)> =
        pairs.iter().copied().filter(|&(s, _)| s > 0.0 && s >= lo * (1.0 - tol) && s <= hi * (1.0 + tol)).collect();
    let pts: Vec<(f64, f64)> = inside.iter().filter(|&&(_, y)| y > 0.0).map(|&(s, y)| (s.ln(), y.ln())).collect();
    if !inside.is_empty() && pts.is_empty() {
        return Err(StudyError::NonPositive);
    }
    if pts.len() < 3 {
        return Err(StudyError::InsufficientPoints(pts.len()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(StudyError::InsufficientPoints(1));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(SlopeFit { slope, intercept, r_squared, sigma_window: window, n_points: pts.len() })
}

/// `(π*_σ(x) − π*_{−σ}(x)) / (2σ)` for each `σ`, which vanishes as `σ → 0`
/// when the first σ-derivative of the optimal policy is zero.
pub fn policy_sensitivity_check<M: OcpModel>(
    model: &M,
    tree: &ScenarioTree,
    x: f64,
    sigma_list: &[f64],
    opts: &SolverOptions,
) -> Result<Vec<(f64, f64)>, StudyError> {
    if sigma_list.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(StudyError::Precondition("sensitivity levels must be positive".into()));
    }
    if sigma_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(StudyError::Precondition("sensitivity levels must be strictly decreasing".into()));
    }
    sigma_list
        .iter()
        .map(|&s| {
            let root = |sigma: f64| -> Result<f64, StudyError> {
                let sol = solve_tree(model, tree, &[x], sigma, opts).map_err(|source| StudyError::TreeSolve { x, sigma, source })?;
                if !sol.converged {
                    return Err(StudyError::NotConverged { x, sigma, grad_norm: sol.grad_norm });
                }
                Ok(sol.u_tree[0])
            };
            Ok((s, (root(s)? - root(-s)?) / (2.0 * s)))
        })
        .collect()
}

pub const BREAKDOWN_SLOPE: f64 = 3.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LocalSlope {
    pub sigma_lo: f64,
    pub sigma_hi: f64,
    /// `NaN` when either `ΔV` is not positive.
    pub delta_v_slope: f64,
    pub control_gap_slope: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BreakdownScan {
    pub x: f64,
    pub records: Vec<ScalingRecord>,
    pub local_slopes: Vec<LocalSlope>,
    /// Upper end of the first σ interval whose local `ΔV` slope is below
    /// [`BREAKDOWN_SLOPE`].
    pub breakdown_sigma: Option<f64>,
}

fn local_slope(s0: f64, y0: f64, s1: f64, y1: f64) -> f64 {
    if y0 > 0.0 && y1 > 0.0 {
        (y1 / y0).ln() / (s1 / s0).ln()
    } else {
        f64::NAN
    }
}

/// Local log-log slopes between consecutive levels and the first level
/// where the fourth-order law visibly stops holding.
pub fn breakdown_from_records(x: f64, records: Vec<ScalingRecord>) -> BreakdownScan {
    let local_slopes: Vec<LocalSlope> = records
        .windows(2)
        .map(|w| LocalSlope {
            sigma_lo: w[0].sigma,
            sigma_hi: w[1].sigma,
            delta_v_slope: local_slope(w[0].sigma, w[0].delta_v, w[1].sigma, w[1].delta_v),
            control_gap_slope: local_slope(w[0].sigma, w[0].control_gap, w[1].sigma, w[1].control_gap),
        })
        .collect();
    let breakdown_sigma = local_slopes.iter().find(|l| l.delta_v_slope < BREAKDOWN_SLOPE).map(|l| l.sigma_hi);
    BreakdownScan { x, records, local_slopes, breakdown_sigma }
}

/// Runs the study at one `x` over increasing `σ` levels (at least 8) and
/// flags the breakdown of the fourth-order law.
pub fn breakdown_scan<M: OcpModel>(model: &M, x: f64, sigma_values: &[f64], opts: &SolverOptions) -> Result<BreakdownScan, StudyError> {
    if sigma_values.len() < 8 {
        return Err(StudyError::Precondition(format!("breakdown scan needs at least 8 levels, got {}", sigma_values.len())));
    }
    if sigma_values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(StudyError::Precondition("breakdown scan levels must be increasing".into()));
    }
    let study = run_scaling_study(model, &[x], sigma_values, opts)?;
    if let Some(f) = study.failures.first() {
        return Err(StudyError::Precondition(format!("breakdown scan point sigma = {} failed: {}", f.sigma, f.message)));
    }
    Ok(breakdown_from_records(x, study.records))
}

/// `n` log-spaced levels from `lo` to `hi`, endpoints exact.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n)
                .map(|i| match i {
                    0 => lo,
                    i if i + 1 == n => hi,
                    i => (a + (b - a) * i as f64 / (n - 1) as f64).exp(),
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{linearize_at_origin, BenchmarkModel, BenchmarkParams, LqModel};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn benchmark() -> BenchmarkModel {
        BenchmarkModel::new(BenchmarkParams::default()).unwrap()
    }

    #[test]
    fn exact_power_laws() {
        let quartic: Vec<(f64, f64)> = [0.01, 0.02, 0.04].iter().map(|&s: &f64| (s, s.powi(4))).collect();
        let fit = fit_loglog_slope(&quartic, (0.01, 0.04)).unwrap();
        assert_relative_eq!(fit.slope, 4.0, epsilon = 1e-12);
        assert_relative_eq!(fit.r_squared, 1.0, epsilon = 1e-12);
        assert_eq!(fit.n_points, 3);

        let quad: Vec<(f64, f64)> = log_spaced(0.01, 0.1, 6).into_iter().map(|s| (s, 3.0 * s * s)).collect();
        let fit = fit_loglog_slope(&quad, (0.01, 0.1)).unwrap();
        assert_relative_eq!(fit.slope, 2.0, epsilon = 1e-12);
        assert_relative_eq!(fit.intercept, 3f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn perturbed_quartic() {
        let pairs: Vec<(f64, f64)> = log_spaced(0.01, 0.05, 9).into_iter().map(|s| (s, s.powi(4) * (1.0 + s))).collect();
        let fit = fit_loglog_slope(&pairs, (0.01, 0.05)).unwrap();
        assert!(fit.slope > 4.0 && fit.slope < 4.1, "{}", fit.slope);
    }

    #[test]
    fn fit_errors() {
        let pairs = [(0.01, 1.0), (0.02, 2.0), (0.5, 3.0)];
        assert_eq!(fit_loglog_slope(&pairs, (0.01, 0.05)), Err(StudyError::InsufficientPoints(2)));
        let floor = [(0.01, 0.0), (0.02, -1e-12), (0.03, 0.0)];
        assert_eq!(fit_loglog_slope(&floor, (0.01, 0.05)), Err(StudyError::NonPositive));
        // nonpositive values are dropped, not fitted
        let mixed = [(0.01, 1e-8), (0.02, -1.0), (0.03, 8.1e-7), (0.04, 2.56e-6)];
        assert_eq!(fit_loglog_slope(&mixed, (0.01, 0.05)).unwrap().n_points, 3);
    }

    #[test]
    fn log_spacing() {
        let s = log_spaced(0.01, 0.3, 12);
        assert_eq!(s.len(), 12);
        assert_eq!((s[0], s[11]), (0.01, 0.3));
        for w in s.windows(3) {
            assert_relative_eq!(w[1] / w[0], w[2] / w[1], max_relative = 1e-12);
        }
    }

    #[test]
    fn synthetic_power_law_never_breaks_down() {
        let rec = |s: f64| ScalingRecord {
            x: 1.0,
            sigma: s,
            v_star: 1.0,
            v_cec: 1.0 + s.powi(4),
            delta_v: s.powi(4),
            u_star_root: 0.0,
            u_cec_root: s * s,
            control_gap: s * s,
        };
        let scan = breakdown_from_records(1.0, log_spaced(0.01, 0.3, 10).into_iter().map(rec).collect());
        assert_eq!(scan.breakdown_sigma, None);
        assert!(scan.local_slopes.iter().all(|l| (l.delta_v_slope - 4.0).abs() < 1e-9));
        assert!(scan.local_slopes.iter().all(|l| (l.control_gap_slope - 2.0).abs() < 1e-9));
    }

    #[test]
    fn lq_study_is_certainty_equivalent() {
        let (a, b) = linearize_at_origin(0.2);
        let lq = LqModel::scalar(a, b, 5.0, 1.0, 10).unwrap();
        let res = run_scaling_study(&lq, &[0.0, 0.5, 1.0], &[0.05, 0.2], &SolverOptions::default()).unwrap();
        assert!(res.failures.is_empty());
        assert_eq!(res.records.len(), 6);
        assert_eq!((res.records[1].x, res.records[1].sigma), (0.0, 0.2));
        for r in &res.records {
            assert!(r.delta_v.abs() <= 1e-8 * (1.0 + r.v_star.abs()), "{r:?}");
        }
        let tree = model_tree(&lq).unwrap();
        let sens = policy_sensitivity_check(&lq, &tree, 0.7, &[0.2, 0.1, 0.05], &SolverOptions::default()).unwrap();
        assert!(sens.iter().all(|(_, d)| d.abs() <= 1e-8));
    }

    #[test]
    fn benchmark_small_sigma_ratios() {
        let m = benchmark();
        let res = run_scaling_study(&m, &[1.0], &[0.01, 0.02], &SolverOptions::default()).unwrap();
        let (a, b) = (res.records[0], res.records[1]);
        let dv = b.delta_v / a.delta_v;
        let gap = b.control_gap / a.control_gap;
        assert!((dv / 16.0 - 1.0).abs() <= 0.3, "{dv}");
        assert!((gap / 4.0 - 1.0).abs() <= 0.2, "{gap}");
    }

    #[test]
    fn benchmark_policy_sensitivity_is_even() {
        let m = benchmark();
        let tree = model_tree(&m).unwrap();
        let sens = policy_sensitivity_check(&m, &tree, 1.0, &[0.1, 0.05, 0.02], &SolverOptions::default()).unwrap();
        assert!(sens.iter().all(|(_, d)| d.abs() <= 1e-8), "{sens:?}");
    }

    #[test]
    fn preconditions() {
        let m = benchmark();
        let opts = SolverOptions::default();
        assert!(run_scaling_study(&m, &[1.0], &[0.0], &opts).is_err());
        assert!(run_scaling_study(&m, &[1.0], &[-0.1], &opts).is_err());
        let tree = model_tree(&m).unwrap();
        assert!(policy_sensitivity_check(&m, &tree, 1.0, &[0.0], &opts).is_err());
        assert!(policy_sensitivity_check(&m, &tree, 1.0, &[0.05, 0.1], &opts).is_err());
        assert!(breakdown_scan(&m, 1.0, &[0.01, 0.02, 0.03], &opts).is_err());
    }

    #[test]
    fn zero_sigma_record_is_exact() {
        let m = benchmark();
        let tree = model_tree(&m).unwrap();
        let r = scaling_record(&m, &tree, 0.5, 0.0, &SolverOptions::default()).unwrap();
        assert!(r.delta_v.abs() <= 1e-9 * (1.0 + r.v_star.abs()));
        assert!(r.control_gap <= 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn slope_recovers_any_power_law(alpha in -1.0f64..6.0, c in 1e-3f64..1e3) {
            let pairs: Vec<(f64, f64)> = log_spaced(0.01, 0.05, 5).into_iter().map(|s| (s, c * s.powf(alpha))).collect();
            let fit = fit_loglog_slope(&pairs, (0.01, 0.05)).unwrap();
            prop_assert!((fit.slope - alpha).abs() <= 1e-9);
            prop_assert!((fit.intercept - c.ln()).abs() <= 1e-8);
        }
    }
}
