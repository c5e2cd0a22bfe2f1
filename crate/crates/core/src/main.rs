use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cinerecon::harness::{run, Command, RunConfig};

#[derive(Parser)]
#[command(
    name = "cinerecon",
    version,
    about = "Cine MRI reconstruction on synthetic phantoms"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the phantom dataset and manifest.
    GenData(Common),
    /// Train a CRNN or U-Net on mixed accelerations.
    Train(Common),
    /// Score a checkpoint against zero-filled (and optionally U-Net) inputs.
    Eval(Common),
    /// Reconstruct k-space files to images and error maps.
    Reconstruct(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set model.cascades=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Cmd::GenData(c) => (Command::GenData, c),
        Cmd::Train(c) => (Command::Train, c),
        Cmd::Eval(c) => (Command::Eval, c),
        Cmd::Reconstruct(c) => (Command::Reconstruct, c),
    };
    let result = RunConfig::load(common.config.as_deref(), &common.overrides)
        .and_then(|cfg| run(command, &cfg));
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let body =
                serde_json::json!({"error": {"category": e.category(), "message": e.to_string()}});
            eprintln!("{body}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
