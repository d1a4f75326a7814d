use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use evsci_cli::pipeline::{cmd_densify, cmd_evaluate, cmd_events, cmd_reconstruct, cmd_register, cmd_simulate};
use evsci_cli::{Overrides, PipelineConfig, Result};
use evsci_core::{EventFormat, FrameFormat};

/// Event-enhanced snapshot compressive imaging pipeline.
///
/// Exit codes: 0 success, 2 invalid config, 3 io error or missing artifact,
/// 4 solver divergence.
#[derive(Parser, Debug)]
#[command(name = "evsci", version)]
struct Cli {
    /// TOML config with sections scene, sensor, camera, recon, interp,
    /// registration and io.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override one key, e.g. `--set recon.tv_weight=0.05`. Repeatable;
    /// applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true, value_name = "DIR")]
    output: Option<PathBuf>,

    /// Reconstruct from the snapshot alone (event weight 0).
    #[arg(long, global = true)]
    no_events: bool,

    /// Frame format: pgm_dir or raw_f32.
    #[arg(long, global = true)]
    format: Option<FrameFormat>,

    /// Event format: bin16 or csv.
    #[arg(long, global = true)]
    events_format: Option<EventFormat>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render ground truth, code a snapshot and simulate events.
    Simulate,
    /// Decode the snapshot (with events unless --no-events).
    Reconstruct,
    /// Interpolate interp.n_out frames across the exposure.
    Densify,
    /// Score one frame sequence against another.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Estimate per-patch event-to-snapshot transforms.
    Register,
    /// Convert an event file to --events-format.
    Events {
        #[arg(long)]
        input: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    let cfg = PipelineConfig::resolve(&Overrides {
        config: cli.config,
        sets: cli.sets,
        seed: cli.seed,
        output: cli.output,
        no_events: cli.no_events,
        format: cli.format,
        events_format: cli.events_format,
    })?;
    let files = match &cli.command {
        Command::Simulate => cmd_simulate(&cfg)?.files,
        Command::Reconstruct => cmd_reconstruct(&cfg)?.files,
        Command::Densify => cmd_densify(&cfg)?.files,
        Command::Evaluate { pred, gt } => cmd_evaluate(&cfg, pred, gt)?.files,
        Command::Register => cmd_register(&cfg)?.files,
        Command::Events { input } => cmd_events(&cfg, input)?.files,
    };
    for f in files {
        println!("{}", cfg.output_dir.join(f).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
