//! `cecsub`: nominal and tree OCP solves, exact CEC evaluation, DP tables,
//! the scaling study and the acceptance suite from the command line.

// `!(a > b)` is how the validators reject NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod output;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::commands::Context;
use crate::config::{parse_list, RunConfig};
use crate::output::OutDir;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("output error: {0}")]
    Io(String),
    #[error("{0}")]
    Partial(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Solver(_) | CliError::Io(_) => 2,
            CliError::Partial(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(name = "cecsub", version, about = "Certainty-equivalent control versus stochastic optimal control on scenario trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML configuration (dotted keys such as solver.grad_tol).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory [default: results].
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Comma-separated uncertainty levels.
    #[arg(long, global = true, value_name = "LIST", allow_hyphen_values = true)]
    sigma: Option<String>,
    /// Comma-separated initial states.
    #[arg(long, global = true, value_name = "LIST", allow_hyphen_values = true)]
    x: Option<String>,
    /// Also write SVG figures.
    #[arg(long, global = true)]
    plot: bool,
    /// Worker threads (0: one per core).
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    /// Assert a fully deterministic run. Every algorithm here already is; the
    /// acceptance suite's sample points come from a fixed-seed generator.
    #[arg(long, global = true)]
    seedless: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Nominal OCP from each x: trajectory CSV and diagnostics.
    SolveNominal,
    /// Tree OCP for each (x, σ): per-node CSV and diagnostics.
    SolveTree,
    /// Exact closed-loop value of certainty-equivalent MPC for each (x, σ).
    EvaluateCec,
    /// Grid DP tables of V* and V^cec for each σ.
    DpTables,
    /// Suboptimality and control gap over x × σ, with slope fits.
    ScalingStudy,
    /// Run the acceptance suite.
    Verify {
        /// Only these criteria (comma-separated, 1–9).
        #[arg(long, value_name = "LIST")]
        criteria: Option<String>,
    },
}

fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let list = |s: &str, what: &str| parse_list(s).map_err(|e| CliError::Config(format!("--{what}: {e}")));
    if let Some(s) = &common.sigma {
        cfg.sigma = Some(list(s, "sigma")?);
    }
    if let Some(s) = &common.x {
        cfg.x = Some(list(s, "x")?);
    }
    if let Some(o) = &common.out {
        cfg.out = Some(o.clone());
    }
    cfg.plot |= common.plot;
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = load_config(&cli.common)?;
    let criteria: Vec<u8> = match &cli.command {
        Command::Verify { criteria: Some(c) } => c
            .split(',')
            .map(|t| t.trim().parse::<u8>().map_err(|e| CliError::Config(format!("--criteria '{t}': {e}"))))
            .collect::<Result<_, _>>()?,
        _ => Vec::new(),
    };
    let model = cfg.model()?;
    if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build_global()
            .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
    }
    if cli.common.seedless {
        log::info!("seedless run: no random number generation outside fixed-seed verification samples");
    }
    let out = OutDir::create(cfg.out.as_deref().unwrap_or("results".as_ref()))?;
    let ctx = Context { cfg, out, model, seedless: cli.common.seedless };
    match cli.command {
        Command::SolveNominal => commands::solve_nominal_cmd(&ctx),
        Command::SolveTree => commands::solve_tree_cmd(&ctx),
        Command::EvaluateCec => commands::evaluate_cec_cmd(&ctx),
        Command::DpTables => commands::dp_tables_cmd(&ctx),
        Command::ScalingStudy => commands::scaling_study_cmd(&ctx),
        Command::Verify { .. } => commands::verify_cmd(&ctx, &criteria),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
