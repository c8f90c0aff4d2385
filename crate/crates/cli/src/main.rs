use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wra::problems::{MatrixKind, ProblemId, ProblemSpec};
use wra_cli::commands::{self, EvalArgs, Overrides};
use wra_cli::config::{ExperimentConfig, Format};
use wra_cli::runner::default_jobs;
use wra_cli::CliError;

#[derive(Parser)]
#[command(name = "wra", version, about = "Derivative-free min-max benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the trials of one configuration.
    Run(BatchArgs),
    /// Run every sweep point; completed points are skipped on re-runs.
    Bench(BatchArgs),
    /// Certify the worst-case value of a solution vector.
    Eval(EvalCli),
    /// List the test problems.
    List {
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
}

#[derive(Args)]
struct BatchArgs {
    #[arg(long)]
    config: PathBuf,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    jobs: Option<usize>,
    /// Overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Args)]
struct EvalCli {
    /// File with the solution vector.
    #[arg(long)]
    solution: PathBuf,
    /// Take the problem from this experiment config instead of the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "f5")]
    problem: String,
    /// Sets dx = dy.
    #[arg(long, default_value_t = 20)]
    dim: usize,
    #[arg(long)]
    dx: Option<usize>,
    #[arg(long)]
    dy: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    b: f64,
    #[arg(long, default_value_t = 3.0)]
    by: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long)]
    band: bool,
    #[arg(long)]
    unbounded: bool,
    /// Multistart protocol: number of maximizations.
    #[arg(long, default_value_t = 10)]
    starts: usize,
    /// Multistart protocol: f-calls per maximization (default 200 * dy).
    #[arg(long)]
    budget_per_start: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

impl EvalCli {
    fn into_args(self) -> Result<EvalArgs, CliError> {
        let problem = match &self.config {
            Some(path) => ExperimentConfig::load(path)?.problem,
            None => {
                let id: ProblemId = self.problem.parse()?;
                ProblemSpec {
                    dx: self.dx.unwrap_or(self.dim),
                    dy: self.dy.unwrap_or(self.dim),
                    matrix: if self.band { MatrixKind::Band } else { MatrixKind::Diag },
                    by: self.by,
                    gamma: self.gamma,
                    bounded: !self.unbounded,
                    ..ProblemSpec::new(id, self.dim, self.b)
                }
            }
        };
        Ok(EvalArgs {
            solution: self.solution,
            problem,
            n_starts: self.starts,
            budget_per_start: self.budget_per_start,
            seed: self.seed,
            format: self.format,
        })
    }
}

fn batch(args: BatchArgs, bench: bool) -> Result<String, CliError> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let ov = Overrides {
        seed: args.seed,
        out: args.out,
        format: args.format,
        jobs: args.jobs.unwrap_or_else(default_jobs).max(1),
    };
    if bench {
        commands::bench(cfg, &ov)
    } else {
        commands::run(cfg, &ov)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => batch(a, false),
        Command::Bench(a) => batch(a, true),
        Command::Eval(a) => a.into_args().and_then(|a| commands::eval(&a)),
        Command::List { format } => Ok(commands::list(format)),
    };
    match result {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
