mod artifacts;
mod commands;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use horizon_abs::planner::Strategy;
use horizon_abs::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Choose the discretization and report the per-agent abstractions.
    Abstract,
    /// Synthesize a plan for the model's goals.
    Plan,
    /// Replay the plan on the continuous system and check every cell visit.
    Validate,
    /// Draw regions, cells, goals and trajectories as SVG.
    Render,
    /// Write the model for the next horizon, starting where the trajectory ended.
    Chain,
}

#[derive(Debug, Parser)]
#[command(
    name = "horizon-abs",
    version,
    about = "Finite-horizon abstractions and timed-reachability planning for coupled agents"
)]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// Model file (JSON).
    #[arg(long)]
    pub model: PathBuf,
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Overrides {
    /// Exact number of time steps over the horizon.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Per-agent lambda, as AGENT=VALUE; repeatable.
    #[arg(long, value_parser = parse_assignment)]
    pub lambda: Vec<(usize, f64)>,
    /// Fraction of the diameter bound used for each agent's cells.
    #[arg(long)]
    pub margin: Option<f64>,
    /// Per-agent cell diameter, as AGENT=VALUE; repeatable.
    #[arg(long, value_parser = parse_assignment)]
    pub dmax: Vec<(usize, f64)>,
    /// RK4 steps per transition interval.
    #[arg(long)]
    pub substeps: Option<usize>,
    /// Largest accepted step-doubling error estimate.
    #[arg(long)]
    pub integ_tol: Option<f64>,
    /// Paths tried per agent before the cascade gives up on it.
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Largest number of product states the product search may generate.
    #[arg(long)]
    pub cap: Option<usize>,
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Option<Strategy>,
    /// Fail when sampling finds the declared speed or Lipschitz bounds violated.
    #[arg(long)]
    pub strict_bounds: bool,
    /// Samples per agent for the bound check.
    #[arg(long, default_value_t = 2000)]
    pub bounds_samples: usize,
}

fn parse_assignment(s: &str) -> Result<(usize, f64), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected AGENT=VALUE, got {s:?}"))?;
    let k: usize = k
        .trim()
        .parse()
        .map_err(|e| format!("agent id {k:?}: {e}"))?;
    let v: f64 = v.trim().parse().map_err(|e| format!("value {v:?}: {e}"))?;
    Ok((k, v))
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse()
}

/// Failure carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn io(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Failure {
            code: 4,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Unsatisfiable(_) | Error::CapExceeded { .. } | Error::CyclicGraph => 2,
            Error::Infeasible { .. }
            | Error::InfeasibleGlobal(_)
            | Error::BallEscapesRegion { .. }
            | Error::NonInitiating { .. }
            | Error::Integration { .. } => 3,
            Error::OutOfRange { what, .. }
                if matches!(*what, "lambda" | "mu" | "margin" | "steps" | "d_max") =>
            {
                3
            }
            Error::InconsistentPlan { .. } | Error::NotASuccessor { .. } => 4,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn configure_threads() {
    if let Ok(v) = std::env::var("HORIZON_ABS_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
