//! `scenopt`: scenario generation, optimization runs, cluster workers,
//! timing-model fits and topology plans from the command line.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation or unusable input; exit code 2.
    Usage(String),
    /// Failure while running; exit code 1.
    Runtime(String),
}

impl From<scenopt::Error> for CliError {
    fn from(e: scenopt::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "scenopt", version, about = "Distributed scenario-based portfolio optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct ConfigArg {
    /// Experiment config (TOML with model, tabu, transport and run sections).
    #[arg(long, short, env = "SCENOPT_CONFIG", global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a scenario set from the config's model and write it in binary form.
    Generate(GenerateArgs),
    /// Run the search locally, or across a cluster when a topology is given.
    Optimize(OptimizeArgs),
    /// Run the search as node 0 of a cluster (topology required).
    Master(OptimizeArgs),
    /// Serve one worker node until the master shuts the cluster down.
    Worker(WorkerArgs),
    /// Fit transaction times from measured runs and emit efficiency curves.
    Perf(PerfArgs),
    /// Build topologies and print their broadcast schedules.
    #[command(subcommand)]
    Topology(TopologyCommand),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Number of scenarios.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub count: u64,
    /// Output scenario file.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the levels as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Override the model seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Scenario file from `generate`; otherwise scenarios come from the model.
    #[arg(long)]
    pub scenarios: Option<PathBuf>,
    /// Scenario count when generating from the model (overrides `run.scenarios`).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub count: Option<u64>,
    /// Cluster layout file: one `id parent host:port` line per node.
    #[arg(long)]
    pub topology: Option<PathBuf>,
    /// Transport mode override.
    #[arg(long, value_parser = ["tcp", "udp", "sim", "sim-udp"])]
    pub transport: Option<String>,
    /// Iteration budget override.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Search seed override.
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON report output.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Trace CSV output (iteration, objective, best_objective).
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct WorkerArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Cluster layout file shared with the master.
    #[arg(long)]
    pub topology: PathBuf,
    /// This worker's node id.
    #[arg(long)]
    pub id: usize,
    #[arg(long, value_parser = ["tcp", "udp"])]
    pub transport: Option<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ProtocolArg {
    Tcp,
    Udp,
}

#[derive(Args, Debug)]
pub struct PerfArgs {
    /// Measurements CSV (`scen,machines,duration,protocol`); the bundled
    /// cluster runs are used when omitted.
    #[arg(long)]
    pub measurements: Option<PathBuf>,
    /// Protocol whose fitted transaction time drives the curves.
    #[arg(long, value_enum, default_value = "tcp")]
    pub protocol: ProtocolArg,
    /// Scenario counts for the curves.
    #[arg(long, value_delimiter = ',', default_values_t = vec![6000usize, 10000])]
    pub scen: Vec<usize>,
    /// Largest machine count on the curves.
    #[arg(long, default_value_t = 16)]
    pub max_machines: usize,
    /// Per-scenario time override (minutes).
    #[arg(long)]
    pub rate: Option<f64>,
    /// Transaction time override (minutes).
    #[arg(long)]
    pub tt: Option<f64>,
    /// Extra break-even queries as `TIME:TT`.
    #[arg(long = "break-even")]
    pub break_even: Vec<String>,
    /// Efficiency curves CSV output.
    #[arg(long)]
    pub curves: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
pub enum KindArg {
    Star,
    Tree,
    Ring,
    RingOfRings,
    Optimal,
}

#[derive(Subcommand, Debug)]
enum TopologyCommand {
    /// Build a topology and print its edges, degrees and schedule.
    Plan(PlanArgs),
}

#[derive(Args, Debug)]
pub struct PlanArgs {
    #[arg(long, value_enum)]
    pub kind: KindArg,
    /// Node count (star, ring, optimal).
    #[arg(long)]
    pub size: Option<usize>,
    /// Children per level for trees, e.g. `3,2`.
    #[arg(long, value_delimiter = ',')]
    pub fanouts: Vec<usize>,
    /// Ring-of-rings shape, e.g. `[4,4,4]`.
    #[arg(long)]
    pub spec: Option<String>,
    /// Edge list CSV output.
    #[arg(long)]
    pub edges: Option<PathBuf>,
    /// Broadcast schedule CSV output.
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    /// Cluster layout output with loopback endpoints.
    #[arg(long)]
    pub layout: Option<PathBuf>,
    /// First port for `--layout`.
    #[arg(long, default_value_t = 7400)]
    pub base_port: u16,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Optimize(a) => commands::optimize(a, false),
        Command::Master(a) => commands::optimize(a, true),
        Command::Worker(a) => commands::worker(a),
        Command::Perf(a) => commands::perf(a),
        Command::Topology(TopologyCommand::Plan(a)) => commands::topology_plan(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
