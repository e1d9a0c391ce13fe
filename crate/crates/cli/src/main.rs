mod backend;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use backend::StoreArg;
use commands::Command;

/// Keyword search over blob storage with a statistical inverted index.
#[derive(Debug, Parser)]
#[command(name = "iou", version)]
pub struct Cli {
    /// Blob store: dir:<path>, sim:<config.toml> or cloud (IOU_S3_* variables).
    #[arg(long, global = true, default_value = "dir:.")]
    store: StoreArg,
    /// Print machine-readable JSON.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

/// Exit status when the accuracy budget is below the achievable lower bound.
const EXIT_INFEASIBLE: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli.store, cli.json, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<iou_sketch::Error>() {
                Some(iou_sketch::Error::InfeasibleBudget { .. }) => ExitCode::from(EXIT_INFEASIBLE),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
