//! Command line entry point.

use canids_cli::{exit_code, load_config, Runner, Stage};
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "canids",
    about = "Federated CAN intrusion detection testbed with adversarial hardening",
    version
)]
struct Cli {
    /// Experiment configuration file.
    #[arg(short, long, global = true, default_value = "experiment.toml")]
    config: PathBuf,

    /// Override the config's output directory.
    #[arg(short, long, global = true)]
    output: Option<PathBuf>,

    /// Override the config's master seed.
    #[arg(short, long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic CAN logs.
    Synth,
    /// Load the traffic source and summarize it.
    Ingest,
    /// Extract features and persist train/test datasets.
    Features,
    /// Train the federated model through the registry.
    Train,
    /// Craft adversarial batches and measure their transfer.
    Attack,
    /// Run the two-sample detector and its scans.
    Detect,
    /// Capture flagged batches, retrain with the extra class.
    Augment,
    /// Write reports and per-user splits.
    Evaluate,
    /// Run every stage in order.
    Pipeline,
    /// Registry inspection.
    Registry {
        #[command(subcommand)]
        action: RegistryAction,
    },
}

#[derive(Subcommand)]
enum RegistryAction {
    /// Verify chain links and stored model digests.
    Verify,
    /// Print the chain.
    Show,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let loaded = match load_config(&cli.config, cli.output.as_deref(), cli.seed) {
        Ok(loaded) => loaded,
        Err(violations) => {
            eprintln!("invalid config:");
            for v in &violations {
                eprintln!("  {v}");
            }
            return ExitCode::from(1);
        }
    };

    let mut runner = Runner::new(loaded);
    let result = match cli.command {
        Command::Synth => runner.run(Stage::Synth),
        Command::Ingest => runner.run(Stage::Ingest),
        Command::Features => runner.run(Stage::Features),
        Command::Train => runner.run(Stage::Train),
        Command::Attack => runner.run(Stage::Attack),
        Command::Detect => runner.run(Stage::Detect),
        Command::Augment => runner.run(Stage::Augment),
        Command::Evaluate => runner.run(Stage::Evaluate),
        Command::Pipeline => runner.run(Stage::Pipeline),
        Command::Registry { action } => match action {
            RegistryAction::Verify => runner.registry_verify(),
            RegistryAction::Show => runner.registry_show(),
        },
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
