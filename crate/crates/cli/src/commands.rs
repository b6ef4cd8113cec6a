//! One function per subcommand. Each validates, computes, then writes; no
//! file is touched before the configuration has been accepted.

use cecsub::cec::evaluate_cec;
use cecsub::dp::{dp_evaluate_policy, dp_solve, DpError, DpTables, Grid1D};
use cecsub::model::{ModelSpec, OcpModel};
use cecsub::study::{
    breakdown_from_records, fit_loglog_slope, log_spaced, run_scaling_study, LocalSlope, RecordFailure, ScalingRecord,
    BREAKDOWN_SLOPE,
};
use cecsub::tree::{ScenarioTree, TreeError};
use cecsub::verify::{CriterionResult, Verifier, VerifyOptions};
use cecsub::{solve_nominal, solve_tree};
use serde::Serialize;

use crate::config::RunConfig;
use crate::output::{finite, tag, OutDir};
use crate::svg::{Plot, Series};
use crate::CliError;

pub struct Context {
    pub cfg: RunConfig,
    pub out: OutDir,
    pub model: ModelSpec,
    pub seedless: bool,
}

fn tree_for(ctx: &Context) -> Result<ScenarioTree, CliError> {
    let m = &ctx.model;
    ScenarioTree::build_with_budget(m.horizon(), m.noise().values(), m.noise().probs(), ctx.cfg.tree.node_budget).map_err(
        |e| match e {
            TreeError::TooLarge { .. } => CliError::Config(e.to_string()),
            e => CliError::Solver(e.to_string()),
        },
    )
}

fn scalar_only(ctx: &Context, what: &str) -> Result<(), CliError> {
    if ctx.model.state_dim() != 1 || ctx.model.control_dim() != 1 {
        return Err(CliError::Config(format!("{what} needs a scalar model")));
    }
    Ok(())
}

// ---- solve-nominal ----

#[derive(Serialize)]
struct TrajectoryRow {
    stage: usize,
    x: f64,
    u: Option<f64>,
}

#[derive(Serialize)]
struct NominalReport<'a> {
    x0: f64,
    value: f64,
    grad_norm: f64,
    iters: usize,
    converged: bool,
    trace: &'a Option<Vec<cecsub::solver::IterationRecord>>,
}

pub fn solve_nominal_cmd(ctx: &Context) -> Result<(), CliError> {
    scalar_only(ctx, "solve-nominal")?;
    let n = ctx.model.horizon();
    let mut plot = Plot { title: "Nominal OCP solution".into(), x_label: "stage k".into(), y_label: "x, u".into(), ..Default::default() };
    for x0 in ctx.cfg.xs_or(&[1.0]) {
        let sol = solve_nominal(&ctx.model, &[x0], n, &ctx.cfg.solver, None).map_err(|e| CliError::Solver(format!("x0 = {x0}: {e}")))?;
        if !sol.converged {
            return Err(CliError::Solver(format!("x0 = {x0}: no convergence (gradient max norm {:e})", sol.grad_norm)));
        }
        let xs = ctx.model.simulate_nominal(&[x0], &sol.u_traj);
        let rows: Vec<TrajectoryRow> =
            (0..=n).map(|k| TrajectoryRow { stage: k, x: xs[k], u: sol.u_traj.get(k).copied() }).collect();
        let t = tag(x0);
        ctx.out.csv(&format!("nominal_x{t}.csv"), &["stage", "x", "u"], &rows)?;
        let report = NominalReport { x0, value: sol.value, grad_norm: sol.grad_norm, iters: sol.iters, converged: sol.converged, trace: &sol.trace };
        ctx.out.json(&format!("nominal_x{t}.json"), &report)?;
        println!("x0 = {x0}: V = {:.12e}, u_0 = {:.12e}, {} iterations", sol.value, sol.u_traj[0], sol.iters);
        plot.series.push(Series::line(format!("x, x0={x0}"), rows.iter().map(|r| (r.stage as f64, r.x)).collect()).with_markers());
        plot.series.push(Series::line(format!("u, x0={x0}"), rows.iter().filter_map(|r| Some((r.stage as f64, r.u?))).collect()).dashed());
    }
    if ctx.cfg.plot {
        ctx.out.text("nominal.svg", &plot.render())?;
    }
    Ok(())
}

// ---- solve-tree ----

#[derive(Serialize)]
struct TreeRow {
    stage: usize,
    node: usize,
    x: f64,
    u: Option<f64>,
    probability: f64,
}

#[derive(Serialize)]
struct TreeReport {
    x0: f64,
    sigma: f64,
    value: f64,
    root_control: f64,
    grad_norm: f64,
    iters: usize,
    converged: bool,
    state_nodes: usize,
    control_nodes: usize,
}

/// One polyline per scenario, root to leaf.
fn fan_plot(title: String, tree: &ScenarioTree, states: &[f64]) -> Plot {
    let n = tree.horizon();
    let series = (1..=tree.stage_len(n))
        .map(|leaf| {
            let mut path = Vec::with_capacity(n + 1);
            let mut i = leaf;
            for k in (0..=n).rev() {
                path.push((k as f64, states[tree.flat(k, i)]));
                i = i.div_ceil(tree.branching().max(1));
            }
            path.reverse();
            Series::line("", path).colored("#1f77b4")
        })
        .collect();
    Plot { title, x_label: "stage k".into(), y_label: "x".into(), series, ..Default::default() }
}

pub fn solve_tree_cmd(ctx: &Context) -> Result<(), CliError> {
    scalar_only(ctx, "solve-tree")?;
    let tree = tree_for(ctx)?;
    for x0 in ctx.cfg.xs_or(&[1.0]) {
        for sigma in ctx.cfg.sigmas_or(&[0.2]) {
            let what = format!("x0 = {x0}, sigma = {sigma}");
            let sol = solve_tree(&ctx.model, &tree, &[x0], sigma, &ctx.cfg.solver).map_err(|e| CliError::Solver(format!("{what}: {e}")))?;
            if !sol.converged {
                return Err(CliError::Solver(format!("{what}: no convergence (gradient max norm {:e})", sol.grad_norm)));
            }
            let states = tree.rollout(&ctx.model, &[x0], &sol.u_tree, sigma).map_err(|e| CliError::Solver(e.to_string()))?;
            let n = tree.horizon();
            let mut rows = Vec::with_capacity(tree.state_node_count());
            for k in 0..=n {
                for i in 1..=tree.stage_len(k) {
                    let j = tree.flat(k, i);
                    rows.push(TreeRow { stage: k, node: i, x: states[j], u: (k < n).then(|| sol.u_tree[j]), probability: tree.stage_prob(k) });
                }
            }
            let t = format!("x{}_sigma{}", tag(x0), tag(sigma));
            ctx.out.csv(&format!("tree_{t}.csv"), &["stage", "node", "x", "u", "probability"], &rows)?;
            let report = TreeReport {
                x0,
                sigma,
                value: sol.value,
                root_control: sol.u_tree[0],
                grad_norm: sol.grad_norm,
                iters: sol.iters,
                converged: sol.converged,
                state_nodes: tree.state_node_count(),
                control_nodes: tree.control_node_count(),
            };
            ctx.out.json(&format!("tree_{t}.json"), &report)?;
            println!("{what}: V* = {:.12e}, root control {:.12e}, {} iterations", sol.value, sol.u_tree[0], sol.iters);
            if ctx.cfg.plot {
                let plot = fan_plot(format!("Tree OCP solution, x0 = {x0}, σ = {sigma}"), &tree, &states);
                ctx.out.text(&format!("tree_{t}.svg"), &plot.render())?;
            }
        }
    }
    Ok(())
}

// ---- evaluate-cec ----

#[derive(Serialize)]
struct CecRow {
    stage: usize,
    node: usize,
    x: f64,
    u: Option<f64>,
    cost: f64,
    probability: f64,
}

#[derive(Serialize)]
struct CecReport {
    x0: f64,
    sigma: f64,
    value: f64,
    root_control: f64,
    nominal_solves: usize,
    max_grad_norm: f64,
    max_iters: usize,
}

pub fn evaluate_cec_cmd(ctx: &Context) -> Result<(), CliError> {
    scalar_only(ctx, "evaluate-cec")?;
    let tree = tree_for(ctx)?;
    for x0 in ctx.cfg.xs_or(&[1.0]) {
        for sigma in ctx.cfg.sigmas_or(&[0.2]) {
            let what = format!("x0 = {x0}, sigma = {sigma}");
            let ev = evaluate_cec(&ctx.model, &tree, &[x0], sigma, &ctx.cfg.solver).map_err(|e| CliError::Solver(format!("{what}: {e}")))?;
            let rows: Vec<CecRow> = ev
                .node_rows(&tree, 1, 1)
                .into_iter()
                .map(|r| CecRow { stage: r.stage, node: r.node, x: r.x, u: finite(r.u), cost: r.cost, probability: r.probability })
                .collect();
            let t = format!("x{}_sigma{}", tag(x0), tag(sigma));
            ctx.out.csv(&format!("cec_{t}.csv"), &["stage", "node", "x", "u", "cost", "probability"], &rows)?;
            let report = CecReport {
                x0,
                sigma,
                value: ev.value,
                root_control: ev.root_control[0],
                nominal_solves: ev.diagnostics.len(),
                max_grad_norm: ev.diagnostics.iter().map(|d| d.grad_norm).fold(0.0, f64::max),
                max_iters: ev.diagnostics.iter().map(|d| d.iters).max().unwrap_or(0),
            };
            ctx.out.json(&format!("cec_{t}.json"), &report)?;
            println!("{what}: V^cec = {:.12e}, root control {:.12e}", ev.value, ev.root_control[0]);
            if ctx.cfg.plot {
                let plot = fan_plot(format!("Certainty-equivalent closed loop, x0 = {x0}, σ = {sigma}"), &tree, &ev.states);
                ctx.out.text(&format!("cec_{t}.svg"), &plot.render())?;
            }
        }
    }
    Ok(())
}

// ---- dp-tables ----

#[derive(Serialize)]
struct DpCsvRow {
    x: f64,
    #[serde(rename = "V")]
    v: f64,
    #[serde(rename = "π")]
    pi: Option<f64>,
    stage: usize,
    #[serde(rename = "σ")]
    sigma: f64,
    kind: &'static str,
}

#[derive(Serialize)]
struct Refinement {
    status: &'static str,
    refined_points: Option<usize>,
    /// Largest change of `V*_0` at the coarse nodes inside the view range.
    max_change: Option<f64>,
}

#[derive(Serialize)]
struct DpSummary {
    sigma: f64,
    grid_points: usize,
    view: (f64, f64),
    max_gap: f64,
    max_v_star: f64,
    /// `max_gap / max_v_star`; at most 0.01 counts as barely distinguishable.
    relative_gap: f64,
    barely_distinguishable: bool,
    tables_identical: bool,
    clamped_interpolations: usize,
    inner_failures: usize,
    refinement: Refinement,
}

fn dp_err(e: DpError) -> CliError {
    match e {
        DpError::NotScalar { .. } | DpError::Grid(_) | DpError::Sigma(_) => CliError::Config(e.to_string()),
        e => CliError::Solver(e.to_string()),
    }
}

fn write_tables(out: &OutDir, name: &str, t: &DpTables) -> Result<(), CliError> {
    let rows: Vec<DpCsvRow> = t
        .rows()
        .into_iter()
        .map(|r| DpCsvRow { x: r.x, v: r.v, pi: finite(r.pi), stage: r.stage, sigma: r.sigma, kind: r.kind })
        .collect();
    out.csv(name, &["x", "V", "π", "stage", "σ", "kind"], &rows)?;
    Ok(())
}

pub fn dp_tables_cmd(ctx: &Context) -> Result<(), CliError> {
    scalar_only(ctx, "dp-tables")?;
    let grid = ctx.cfg.grid();
    let n = ctx.model.horizon();
    let (lo, hi) = (ctx.cfg.grid.view_lo, ctx.cfg.grid.view_hi);
    let nominal = dp_solve(&ctx.model, &grid, 0.0, n).map_err(dp_err)?;
    let inside: Vec<usize> = (0..grid.n_points).filter(|&j| (lo..=hi).contains(&grid.node(j))).collect();
    let mut summaries = Vec::new();
    for sigma in ctx.cfg.sigmas_or(&[0.05, 0.2]) {
        let star = if sigma == 0.0 { nominal.clone() } else { dp_solve(&ctx.model, &grid, sigma, n).map_err(dp_err)? };
        let cec = dp_evaluate_policy(&ctx.model, &nominal, sigma).map_err(dp_err)?;
        let t = tag(sigma);
        write_tables(&ctx.out, &format!("dp_optimal_sigma{t}.csv"), &star)?;
        write_tables(&ctx.out, &format!("dp_cec_sigma{t}.csv"), &cec)?;
        let max_gap = inside.iter().map(|&j| cec.values[0][j] - star.values[0][j]).fold(f64::NEG_INFINITY, f64::max);
        let max_v_star = inside.iter().map(|&j| star.values[0][j]).fold(f64::NEG_INFINITY, f64::max);
        let refinement = if !ctx.cfg.grid.refinement_check {
            Refinement { status: "disabled", refined_points: None, max_change: None }
        } else if grid.n_points < 5 {
            log::warn!("grid of {} points is too coarse for the refinement check; skipped", grid.n_points);
            Refinement { status: "skipped", refined_points: None, max_change: None }
        } else {
            let fine_grid: Grid1D = grid.refined();
            let fine = dp_solve(&ctx.model, &fine_grid, sigma, n).map_err(dp_err)?;
            // coarse node j is fine node 2j
            let change = inside.iter().map(|&j| (fine.values[0][2 * j] - star.values[0][j]).abs()).fold(0.0, f64::max);
            Refinement { status: "ok", refined_points: Some(fine_grid.n_points), max_change: Some(change) }
        };
        let tables_identical = star.values.iter().flatten().zip(cec.values.iter().flatten()).all(|(a, b)| a.to_bits() == b.to_bits());
        let relative_gap = max_gap / max_v_star;
        println!("sigma = {sigma}: max V^cec − V* on [{lo}, {hi}] = {max_gap:.6e} ({:.3}% of max V*)", 100.0 * relative_gap);
        if ctx.cfg.plot {
            let pts = |t: &DpTables| inside.iter().map(|&j| (grid.node(j), t.values[0][j])).collect::<Vec<_>>();
            let stage = inside.iter().map(|&j| (grid.node(j), ctx.model.stage_cost(&[grid.node(j)], &[0.0]))).collect();
            let plot = Plot {
                title: format!("Value functions, σ = {sigma}"),
                x_label: "x".into(),
                y_label: "value".into(),
                series: vec![Series::line("V^cec", pts(&cec)), Series::line("V*", pts(&star)).dashed(), Series::line("L(x, 0)", stage)],
                ..Default::default()
            };
            ctx.out.text(&format!("dp_sigma{t}.svg"), &plot.render())?;
        }
        summaries.push(DpSummary {
            sigma,
            grid_points: grid.n_points,
            view: (lo, hi),
            max_gap,
            max_v_star,
            relative_gap,
            barely_distinguishable: relative_gap <= 0.01,
            tables_identical,
            clamped_interpolations: star.clamped,
            inner_failures: star.failures.len(),
            refinement,
        });
    }
    ctx.out.json("dp_summary.json", &summaries)?;
    Ok(())
}

// ---- scaling-study ----

#[derive(Serialize)]
struct FitReport {
    slope: Option<f64>,
    r_squared: Option<f64>,
    n_points: usize,
    band: (f64, f64),
    in_band: bool,
    note: Option<String>,
}

#[derive(Serialize)]
struct XReport {
    x: f64,
    delta_v: FitReport,
    control_gap: FitReport,
    breakdown_sigma: Option<f64>,
    local_slopes: Vec<LocalSlope>,
}

#[derive(Serialize)]
struct Invariant {
    passed: bool,
    worst: f64,
}

#[derive(Serialize)]
struct StudySummary {
    x_values: Vec<f64>,
    sigma_values: Vec<f64>,
    slope_window: (f64, f64),
    breakdown_threshold: f64,
    fits: Vec<XReport>,
    nonnegativity: Invariant,
    records: usize,
    failures: Vec<RecordFailure>,
    seedless: bool,
}

fn fit_report(pairs: &[(f64, f64)], window: (f64, f64), band: (f64, f64)) -> FitReport {
    match fit_loglog_slope(pairs, window) {
        Ok(f) => FitReport {
            slope: Some(f.slope),
            r_squared: Some(f.r_squared),
            n_points: f.n_points,
            band,
            in_band: f.slope >= band.0 && f.slope <= band.1 && f.r_squared >= 0.98,
            note: None,
        },
        Err(e) => FitReport { slope: None, r_squared: None, n_points: 0, band, in_band: false, note: Some(e.to_string()) },
    }
}

pub fn scaling_study_cmd(ctx: &Context) -> Result<(), CliError> {
    scalar_only(ctx, "scaling-study")?;
    let xs = ctx.cfg.xs_or(&[0.0, 0.5, 1.0]);
    let sigmas = ctx.cfg.sigmas_or(&log_spaced(0.01, 0.3, 12));
    if let Some(s) = sigmas.iter().find(|s| !(**s > 0.0)) {
        return Err(CliError::Config(format!("scaling-study needs positive sigma values, got {s}")));
    }
    tree_for(ctx)?;
    let study = run_scaling_study(&ctx.model, &xs, &sigmas, &ctx.cfg.solver).map_err(|e| CliError::Solver(e.to_string()))?;
    let header = ["x", "sigma", "v_star", "v_cec", "delta_v", "u_star_root", "u_cec_root", "control_gap"];
    ctx.out.csv("scaling_records.csv", &header, &study.records)?;
    let window = (ctx.cfg.study.slope_lo, ctx.cfg.study.slope_hi);
    let mut increasing = sigmas.clone();
    increasing.sort_by(f64::total_cmp);
    increasing.dedup();
    let scan_ok = increasing.len() >= 8 && increasing == sigmas;
    let fits: Vec<XReport> = xs
        .iter()
        .map(|&x| {
            let recs: Vec<ScalingRecord> = study.records_at(x);
            let dv: Vec<(f64, f64)> = recs.iter().map(|r| (r.sigma, r.delta_v)).collect();
            let gap: Vec<(f64, f64)> = recs.iter().map(|r| (r.sigma, r.control_gap)).collect();
            let scan = (scan_ok && recs.len() == sigmas.len()).then(|| breakdown_from_records(x, recs));
            XReport {
                x,
                delta_v: fit_report(&dv, window, (3.6, 4.4)),
                control_gap: fit_report(&gap, window, (1.85, 2.15)),
                breakdown_sigma: scan.as_ref().and_then(|s| s.breakdown_sigma),
                local_slopes: scan.map(|s| s.local_slopes).unwrap_or_default(),
            }
        })
        .collect();
    let worst = study.records.iter().map(|r| r.delta_v / (1.0 + r.v_star.abs())).fold(f64::INFINITY, f64::min);
    for f in &fits {
        println!(
            "x = {}: ΔV slope {}, control-gap slope {}, breakdown at {}",
            f.x,
            f.delta_v.slope.map_or("n/a".into(), |s| format!("{s:.3}")),
            f.control_gap.slope.map_or("n/a".into(), |s| format!("{s:.3}")),
            f.breakdown_sigma.map_or("none".into(), |s| format!("σ = {s:.4}"))
        );
    }
    if ctx.cfg.plot {
        for (name, title, pick, order) in [
            ("study_delta_v.svg", "Suboptimality of CEC", (|r: &ScalingRecord| r.delta_v) as fn(&ScalingRecord) -> f64, 4),
            ("study_control_gap.svg", "Root-control gap", |r: &ScalingRecord| r.control_gap, 2),
        ] {
            let mut series = Vec::new();
            for &x in &xs {
                let recs = study.records_at(x);
                if let Some(first) = recs.iter().find(|r| pick(r) > 0.0) {
                    let (s0, y0) = (first.sigma, pick(first));
                    series.push(Series::line(format!("x = {x}"), recs.iter().map(|r| (r.sigma, pick(r))).collect()).with_markers());
                    series.push(Series::line("", recs.iter().map(|r| (r.sigma, y0 * (r.sigma / s0).powi(order))).collect()).dashed().colored("#999999"));
                }
            }
            let plot = Plot { title: format!("{title} (dashed: σ^{order})"), x_label: "σ".into(), y_label: title.into(), log_x: true, log_y: true, series };
            ctx.out.text(name, &plot.render())?;
        }
    }
    let n_ok = study.records.len();
    let summary = StudySummary {
        x_values: xs,
        sigma_values: sigmas,
        slope_window: window,
        breakdown_threshold: BREAKDOWN_SLOPE,
        fits,
        nonnegativity: Invariant { passed: worst >= -1e-9, worst },
        records: n_ok,
        failures: study.failures,
        seedless: ctx.seedless,
    };
    ctx.out.json("study_summary.json", &summary)?;
    if n_ok == 0 {
        return Err(CliError::Partial("no study record succeeded".into()));
    }
    if !summary.failures.is_empty() {
        eprintln!("warning: {} of {} study points failed; see study_summary.json", summary.failures.len(), n_ok + summary.failures.len());
    }
    Ok(())
}

// ---- verify ----

#[derive(Serialize)]
struct VerifyReport<'a> {
    passed: usize,
    total: usize,
    criteria: &'a [CriterionResult],
    options: &'a VerifyOptions,
    seedless: bool,
}

pub fn verify_cmd(ctx: &Context, only: &[u8]) -> Result<(), CliError> {
    if ctx.cfg.sigma.is_some() || ctx.cfg.x.is_some() {
        log::warn!("verify uses its fixed reference levels; --sigma and --x are ignored");
    }
    let opts = VerifyOptions {
        solver: ctx.cfg.solver.clone(),
        slope_window: (ctx.cfg.study.slope_lo, ctx.cfg.study.slope_hi),
        dp_grid: ctx.cfg.grid(),
        ..VerifyOptions::default()
    };
    let verifier = Verifier::new(opts);
    let ids: Vec<u8> = if only.is_empty() { (1..=9).collect() } else { only.to_vec() };
    if let Some(bad) = ids.iter().find(|i| !(1..=9).contains(*i)) {
        return Err(CliError::Config(format!("no criterion {bad}; criteria are 1 to 9")));
    }
    let mut results = Vec::new();
    for id in ids {
        let r = verifier.run(id);
        println!("{}", r.line());
        results.push(r);
    }
    let passed = results.iter().filter(|r| r.passed).count();
    let report = VerifyReport { passed, total: results.len(), criteria: &results, options: verifier.options(), seedless: ctx.seedless };
    ctx.out.json("verify.json", &report)?;
    println!("{passed}/{} criteria passed", results.len());
    if passed < results.len() {
        return Err(CliError::Partial(format!("{} criteria failed", results.len() - passed)));
    }
    Ok(())
}
