//! `pgflow`: steady-state flows, gradients and descent from the command line.
//!
//! Exit codes: 0 success, 2 input or schema error, 3 numeric failure. Errors
//! are printed to stderr as a JSON object.

mod commands;
mod output;

use clap::{Args, Parser, Subcommand, ValueEnum};

use output::{CmdResult, Failure};

#[derive(Debug, Parser)]
#[command(name = "pgflow", version, about = "Steady-state flow optimization for product-form queueing networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the flow fixed point at θ.
    Solve(SolveArgs),
    /// Gradient of the objective at θ.
    Grad(GradArgs),
    /// Projected gradient descent with a CSV trace.
    Optimize(OptimizeArgs),
    /// Emit a random forward-DAG Jackson model.
    Generate(GenerateArgs),
    /// Compare gradient engines on generated DAGs.
    Benchmark(BenchmarkArgs),
    /// Simulate a Jackson network and compare with product-form metrics.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Method {
    Auto,
    Dense,
    Picard,
    Anderson,
    Acyclic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
enum Engine {
    Analytic,
    Numeric,
    Fdj,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Rule {
    Constant,
    Armijo,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Model document (JSON).
    #[arg(long)]
    model: std::path::PathBuf,
    /// Comma-separated parameters; defaults to the centre of the feasible set.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
struct SolverArgs {
    #[arg(long, value_enum, default_value = "auto")]
    method: Method,
    #[arg(long, default_value_t = 1e-10)]
    fp_tol: f64,
    #[arg(long, default_value_t = 10_000)]
    max_fp_iter: usize,
    #[arg(long, default_value_t = 5)]
    anderson_depth: usize,
}

#[derive(Debug, Args)]
struct GradientArgs {
    #[arg(long, value_enum, default_value = "analytic")]
    engine: Engine,
    #[arg(long, default_value_t = 1e-8)]
    fd_step: f64,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Debug, Args)]
struct GradArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    gradient: GradientArgs,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Debug, Args)]
struct StepArgs {
    #[arg(long, value_enum, default_value = "constant")]
    step_rule: Rule,
    /// Constant step, or the initial Armijo step.
    #[arg(long, default_value_t = 0.05)]
    eta: f64,
    #[arg(long, default_value_t = 0.5)]
    armijo_shrink: f64,
    #[arg(long, default_value_t = 1e-4)]
    armijo_slope: f64,
    #[arg(long, default_value_t = 1e-6)]
    eps_j: f64,
    #[arg(long, default_value_t = 1e-4)]
    eps_grad: f64,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
}

#[derive(Debug, Args)]
struct OptimizeArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    step: StepArgs,
    #[command(flatten)]
    gradient: GradientArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Where to write the CSV trace.
    #[arg(long, default_value = "pgflow_trace.csv")]
    trace: std::path::PathBuf,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    d: usize,
    #[arg(long)]
    p: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4.0)]
    lambda0: f64,
    #[arg(long, default_value_t = 8.0)]
    mu_slow: f64,
    #[arg(long, default_value_t = 12.0)]
    mu_fast: f64,
    /// Emit the `dag_spec` document instead of the expanded network.
    #[arg(long)]
    spec_only: bool,
    /// Also write every sampled choice to this file.
    #[arg(long)]
    record: Option<std::path::PathBuf>,
}

#[derive(Debug, Args)]
struct BenchmarkArgs {
    /// Queue counts; paired with `--p` element-wise (a single value broadcasts).
    #[arg(long, value_delimiter = ',', required = true)]
    d: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    p: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "analytic,numeric,fdj")]
    engines: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Instances per (d, p): seeds `seed..seed + seeds`.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[command(flatten)]
    step: StepArgs,
    /// Write the table here instead of stdout.
    #[arg(long)]
    output: Option<std::path::PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 2e5)]
    horizon: f64,
    #[arg(long, default_value_t = 2e4)]
    warmup: f64,
    #[arg(long, default_value_t = 10)]
    replications: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn configure_threads() -> CmdResult {
    let Ok(raw) = std::env::var("PGFLOW_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| Failure::input("Environment", format!("PGFLOW_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::input("Environment", e.to_string()))
}

fn run(cli: Cli) -> CmdResult {
    configure_threads()?;
    match cli.command {
        Command::Solve(a) => commands::solve(a),
        Command::Grad(a) => commands::grad(a),
        Command::Optimize(a) => commands::optimize(a),
        Command::Generate(a) => commands::generate(a),
        Command::Benchmark(a) => commands::benchmark(a),
        Command::Simulate(a) => commands::simulate(a),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return;
        }
        Err(e) => {
            let f = Failure::input("Usage", e.to_string().trim_end().to_string());
            eprintln!("{}", f.to_json());
            std::process::exit(f.code);
        }
    };
    if let Err(f) = run(cli) {
        eprintln!("{}", f.to_json());
        std::process::exit(f.code);
    }
}
