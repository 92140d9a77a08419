use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hca_cli::config::Config;
use hca_cli::{pipeline, CliError};

#[derive(Parser)]
#[command(
    name = "hca",
    about = "Hierarchical classification adjustment for imbalanced regression",
    version
)]
struct Cli {
    /// Path to a TOML config; defaults apply when omitted.
    #[arg(short = 'c', long, global = true)]
    config: Option<PathBuf>,

    /// Override a config value, e.g. --set train.epochs=200 (repeatable).
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured dataset and write it as CSV.
    Gen,
    /// Train the per-level classifier stack and write a checkpoint.
    Train,
    /// Distill the trained stack into a single head (needs `train` first).
    Distill,
    /// Evaluate one method from the checkpoint on the test split.
    Eval {
        /// cls | average | hca-add | hca-mul | hca-d
        #[arg(long)]
        method: String,
    },
    /// Train everything and compare all methods in one report.
    Compare,
    /// Emit per-level error/consistency series as plot-ready CSV.
    Analyze,
    /// Run the balanced/imbalanced x sufficient/insufficient grid.
    Table5,
    /// Print the resolved config.
    PrintConfig,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = Config::load(cli.config.as_deref(), &cli.set)?;
    match cli.command {
        Command::Gen => {
            let path = pipeline::cmd_gen(&cfg)?;
            println!("dataset written to {}", path.display());
        }
        Command::Train => {
            let path = pipeline::cmd_train(&cfg)?;
            println!("checkpoint written to {}", path.display());
        }
        Command::Distill => {
            let path = pipeline::cmd_distill(&cfg)?;
            println!("checkpoint updated at {}", path.display());
        }
        Command::Eval { method } => {
            let path = pipeline::cmd_eval(&cfg, &method)?;
            println!("report written to {}", path.display());
        }
        Command::Compare => {
            let outcome = pipeline::cmd_compare(&cfg)?;
            println!("report written to {}", outcome.markdown.display());
        }
        Command::Analyze => {
            let path = pipeline::cmd_analyze(&cfg)?;
            println!("series written to {}", path.display());
        }
        Command::Table5 => {
            let outcome = pipeline::cmd_table5(&cfg)?;
            println!("grid written to {}", outcome.markdown.display());
        }
        Command::PrintConfig => {
            print!("{}", cfg.to_toml());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
