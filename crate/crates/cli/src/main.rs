//! `rcrl` binary: duality-gap analysis, training runs, policy evaluation,
//! and model diagnostics for the tabular robust constrained RL toolkit.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "rcrl",
    version,
    about = "Tabular robust constrained RL experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare closed-form primal/dual values of the two-state counterexample
    /// with a brute-force grid oracle.
    DualityGap(DualityArgs),
    /// Train RRPO or CRPO and write per-seed traces, policies, and a summary.
    Train(TrainArgs),
    /// Evaluate a saved policy under nominal, worst-case, and slippery kernels.
    Evaluate(EvaluateArgs),
    /// Report visitation floor, diameter bound, and reward bounds for a model.
    Diagnostics(DiagnosticsArgs),
}

#[derive(Args)]
pub struct CommonArgs {
    /// Key-value config file; command-line flags override file entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for output artifacts.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EnvArgs {
    /// Environment: `counterexample` or `gridworld`.
    #[arg(long)]
    pub env: Option<String>,
    /// Norm order of the uncertainty set: `1`, `2`, `inf`, or any q > 1.
    #[arg(long)]
    pub p: Option<String>,
    /// Uncertainty radius applied to every state-action row.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Constraint threshold (counterexample environment only).
    #[arg(long)]
    pub rho: Option<f64>,
}

#[derive(Args)]
pub struct DualityArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Lower endpoint of the uncertain transition probability.
    #[arg(long)]
    pub p_lo: Option<f64>,
    /// Upper endpoint of the uncertain transition probability.
    #[arg(long)]
    pub p_hi: Option<f64>,
    /// Nominal transition probability (defaults to the interval midpoint).
    #[arg(long)]
    pub p: Option<f64>,
    /// Discount factor.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Constraint threshold.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Policy-axis resolution of the numeric oracle.
    #[arg(long)]
    pub pi_grid: Option<usize>,
    /// Multiplier-axis resolution of the numeric oracle.
    #[arg(long)]
    pub lambda_grid: Option<usize>,
    /// Upper end of the multiplier grid (defaults to four times the
    /// analytic multiplier).
    #[arg(long)]
    pub lambda_max: Option<f64>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub env: EnvArgs,
    /// Algorithm: `rrpo` or `crpo`.
    #[arg(long)]
    pub algo: Option<String>,
    /// Natural-gradient step size.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Feasibility slack for branch selection and the summary flag.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Number of policy updates; 0 evaluates the initial policy only.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Policy evaluation mode inside training: `exact` or `td`.
    #[arg(long)]
    pub eval_mode: Option<String>,
    /// Rule for picking among violated constraints: `first` or `random`.
    #[arg(long)]
    pub pick: Option<String>,
    /// Scale of the seeded Gaussian logit noise at initialization.
    #[arg(long)]
    pub init_noise: Option<f64>,
    /// Seeds to run, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub env: EnvArgs,
    /// Path to a saved policy file.
    #[arg(long)]
    pub policy: PathBuf,
    /// Kernels to evaluate, comma-separated subset of
    /// `nominal,worst-case,slippery`.
    #[arg(long, value_delimiter = ',')]
    pub kernels: Vec<String>,
    /// Also write the induced worst-case kernel for each reward signal.
    #[arg(long)]
    pub dump_kernels: bool,
}

#[derive(Args)]
pub struct DiagnosticsArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub env: EnvArgs,
    /// Policy file to analyze (defaults to the uniform policy).
    #[arg(long)]
    pub policy: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::DualityGap(args) => commands::run_duality(args),
        Command::Train(args) => commands::run_train(args),
        Command::Evaluate(args) => commands::run_evaluate(args),
        Command::Diagnostics(args) => commands::run_diagnostics(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(commands::exit_code(&err))
        }
    }
}
