use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use grgcn_cli::*;

/// Graph-regression GCN toolkit: learn skeleton graphs, train and evaluate
/// the Chebyshev network, sweep the polynomial order.
#[derive(Parser)]
#[command(name = "grgcn", version)]
struct Cli {
    /// Worker threads (falls back to LR_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic skeleton-action dataset.
    Generate {
        #[command(flatten)]
        config: GenerateConfig,
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn a classified spatio-temporal graph from sampled frames.
    LearnGraph {
        #[command(flatten)]
        config: LearnGraphConfig,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a fixed template graph.
    BuildGraph {
        #[command(flatten)]
        config: BuildGraphConfig,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the network and write a checkpoint plus epoch log.
    Train {
        #[command(flatten)]
        config: TrainRunConfig,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        config: EvalConfig,
        /// Output directory for metrics.json and confusion.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model per Chebyshev order and tabulate test accuracy.
    SweepK {
        #[command(flatten)]
        config: SweepConfig,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run the command embedded in an artifact.
    Replay {
        #[arg(long)]
        from: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> grgcn_core::Result<String> {
    configure_threads(cli.threads)?;
    let (config, out) = match cli.command {
        Command::Generate { config, out } => (RunConfig::Generate(config), out),
        Command::LearnGraph { config, out } => (RunConfig::LearnGraph(config), out),
        Command::BuildGraph { config, out } => (RunConfig::BuildGraph(config), out),
        Command::Train { config, out } => (RunConfig::Train(config), out),
        Command::Eval { config, out } => (RunConfig::Eval(config), out),
        Command::SweepK { config, out } => (RunConfig::SweepK(config), out),
        Command::Replay { from, out } => return cmd_replay(&from, &out),
    };
    config.execute(&out)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            eprintln!("{}", format_error("E_CONFIG", first.trim_start_matches("error: ")));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(summary) => {
            write_stdout(&summary);
            ExitCode::SUCCESS
        }
        Err(e) => {
            let (code, status) = error_code(&e);
            eprintln!("{}", format_error(code, &e.to_string()));
            ExitCode::from(status as u8)
        }
    }
}
