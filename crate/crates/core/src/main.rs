use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mclab::runner::{merged_solver_config, run_sweep_to_dir, solve_file, ExperimentConfig};
use mclab::solvers::SolverKind;
use mclab::Error;

const DEMOS: [(&str, &str); 4] = [
    ("nnls-relu", include_str!("../configs/nnls-relu.json")),
    ("relu", include_str!("../configs/relu.json")),
    ("mean-centric", include_str!("../configs/mean-centric.json")),
    (
        "group-specific",
        include_str!("../configs/group-specific.json"),
    ),
];

#[derive(Parser)]
#[command(
    name = "mclab",
    version,
    about = "Matrix completion under value-dependent sampling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep described by a JSON config and write CSV results.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config's `output`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Complete a single matrix from a mask file.
    Solve {
        /// Matrix file fixing the shape; if it holds the full ground truth
        /// the reported error is meaningful.
        #[arg(long)]
        matrix: PathBuf,
        /// Observed entries, one `i j value` per line.
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        solver: String,
        #[arg(long)]
        rank: usize,
        #[arg(long)]
        out: PathBuf,
        /// JSON object merged over the solver's default parameters.
        #[arg(long)]
        params: Option<String>,
    },
    /// Run one of the bundled sweeps.
    Demo {
        #[arg(long, value_parser = ["nnls-relu", "relu", "mean-centric", "group-specific"])]
        preset: String,
        #[arg(long, default_value = "demo-output")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        workers: usize,
        /// Replace the bundled trial count, for a quicker look.
        #[arg(long)]
        trials: Option<usize>,
    },
}

fn exit_code(err: &Error) -> u8 {
    if err.is_input_error() {
        1
    } else {
        2
    }
}

fn sweep(cfg: &ExperimentConfig, out: PathBuf, workers: usize) -> Result<(), Error> {
    let result = run_sweep_to_dir(cfg, &out, workers)?;
    let failed = result.records.iter().filter(|r| r.error.is_some()).count();
    println!(
        "{} trials, {} groups written to {}",
        result.records.len(),
        result.aggregates.len(),
        out.display()
    );
    if failed > 0 {
        eprintln!("{failed} trials ended with a solver error (recorded as nrmse = inf)");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Sweep {
            config,
            out,
            workers,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = out
                .or_else(|| cfg.output.clone())
                .ok_or_else(|| Error::Config("no output directory (use --out)".into()))?;
            sweep(&cfg, out, workers)
        }
        Command::Solve {
            matrix,
            mask,
            solver,
            rank,
            out,
            params,
        } => {
            let kind: SolverKind = solver.parse()?;
            let patch = params
                .map(|p| serde_json::from_str(&p))
                .transpose()
                .map_err(|e| Error::Config(format!("--params: {e}")))?;
            let cfg = merged_solver_config(kind, patch.as_ref())?;
            let summary = solve_file(&matrix, &mask, &cfg, rank, &out)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(())
        }
        Command::Demo {
            preset,
            out,
            workers,
            trials,
        } => {
            let (_, text) = DEMOS
                .iter()
                .find(|(name, _)| *name == preset)
                .ok_or_else(|| Error::Config(format!("unknown preset '{preset}'")))?;
            let mut cfg = ExperimentConfig::from_json(text)?;
            if trials.is_some() {
                cfg.trials = trials;
                cfg.validate()?;
            }
            sweep(&cfg, out.join(&preset), workers)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
