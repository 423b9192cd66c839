mod commands;
mod error;
mod manifest;
mod settings;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{CliError, Kind};

#[derive(Parser, Debug)]
#[command(name = "trajaudit", version, about = "Trajectory audit pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// TOML config with one section per stage.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config value, e.g. `--set tracker.gate_radius=2.0`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic detections and ground truth.
    Gen(commands::GenArgs),
    /// Track detections into identities.
    Track(commands::TrackArgs),
    /// Apply a refinement branch to tracks.
    Refine(commands::RefineArgs),
    /// Smooth positions and headings and fix per-track dimensions.
    Stabilize(commands::StabilizeArgs),
    /// Screen pairs and extract near-miss events.
    Mine(commands::MineArgs),
    /// Match predictions against ground truth.
    Eval(commands::EvalArgs),
    /// Export pending events into a review round.
    QaExport(commands::QaExportArgs),
    /// Serve the review API over a QA store.
    Serve(commands::ServeArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Track(a) => commands::track(a),
        Command::Refine(a) => commands::refine(a),
        Command::Stabilize(a) => commands::stabilize(a),
        Command::Mine(a) => commands::mine(a),
        Command::Eval(a) => commands::eval(a),
        Command::QaExport(a) => commands::qa_export(a),
        Command::Serve(a) => commands::serve(a),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return;
        }
        Err(e) => {
            let err = CliError::new(Kind::Usage, e.to_string().trim().to_string());
            eprintln!("{}", err.to_line());
            std::process::exit(err.kind.exit_code());
        }
    };
    if let Err(err) = run(cli) {
        eprintln!("{}", err.to_line());
        std::process::exit(err.kind.exit_code());
    }
}
