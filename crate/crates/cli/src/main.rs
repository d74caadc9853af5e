use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use serialtrack_cli::commands::{run, Overrides};
use serialtrack_cli::config::{Command, RunConfig};
use serialtrack_cli::error::CliError;

/// Particle tracking for 2D and 3D image sequences.
#[derive(Parser, Debug)]
#[command(name = "serialtrack", version)]
struct Args {
    command: Command,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_parallel: Option<usize>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let outcome = RunConfig::load(&args.config).and_then(|cfg| {
        if cfg.command != args.command {
            return Err(CliError::ConfigInvalid(format!(
                "config is for `{}`, not `{}`",
                cfg.command.name(),
                args.command.name()
            )));
        }
        run(&cfg, &Overrides { out: args.out.clone(), seed: args.seed, max_parallel: args.max_parallel })
    });
    match outcome {
        Ok(summary) if summary.status == "ok" => {
            println!("{} finished in {:.2} s; {} artifacts", summary.command.name(), summary.wall_clock_s, summary.artifacts.len());
            ExitCode::SUCCESS
        }
        Ok(summary) => {
            let err = summary.error.expect("failed summaries carry an error");
            eprintln!("{}: {}", err.code, err.message);
            ExitCode::from(1)
        }
        Err(e) => {
            // nothing was written; the record goes to stdout for callers to parse
            println!("{}", serde_json::to_string(&e.record()).expect("record serializes"));
            ExitCode::from(2)
        }
    }
}
