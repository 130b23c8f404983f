use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use dxformer::model::Variant;
use dxformer_cli::commands::{self, Split};
use dxformer_cli::{exit_code, Overrides};

/// Wind-farm power forecasting with dual exogenous transformer blocks.
#[derive(Parser)]
#[command(name = "dxformer", version)]
struct Cli {
    /// INI run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for initialization and batch order
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Model variant (full, rep_by_attn, no_dev, no_edv, no_esc, no_esvc, no_evc)
    #[arg(long, global = true)]
    variant: Option<Variant>,

    /// Forecast horizon in steps
    #[arg(long, global = true, value_parser = ["12", "24", "36"])]
    horizon: Option<String>,

    /// Run directory (overrides [run] out)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic farm as CSV
    Synth,
    /// Train, checkpoint the best epoch and score it on test
    Train {
        /// Continue from the run directory's saved state
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint on one split
    Eval {
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        /// Checkpoint directory (default: <out>/checkpoint)
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Forecast in kW from the latest window
    Predict {
        /// Telemetry CSV (default: the configured data)
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Forecast from every window instead of the last one
        #[arg(long)]
        all: bool,
    },
    /// Finite-difference check of every parameter gradient at toy scale
    Gradcheck {
        /// Negative control: corrupt one backward rule
        #[arg(long, hide = true)]
        corrupt_backward: bool,
    },
    /// Train the full model and every ablation variant
    Ablate,
}

fn run(cli: Cli) -> Result<()> {
    let config = cli
        .config
        .ok_or_else(|| dxformer_cli::ConfigError::Invalid("--config PATH is required".into()))?;
    let ov = Overrides {
        seed: cli.seed,
        variant: cli.variant,
        horizon: cli.horizon.map(|h| h.parse().expect("validated by clap")),
        out: cli.out,
    };
    let mut cfg = commands::resolve(&config, &ov)?;
    match cli.command {
        Command::Synth => {
            let path = commands::synth(&cfg)?;
            println!("{}", path.display());
        }
        Command::Train { resume } => {
            let report = commands::train(&mut cfg, resume)?;
            println!(
                "best epoch {:?}, val MAE {:.3} kW, {:.0}s",
                report.outcome.best_epoch, report.outcome.best_val_mae, report.seconds
            );
        }
        Command::Eval { split, checkpoint } => {
            commands::eval(&cfg, checkpoint.as_deref(), split)?;
        }
        Command::Predict { input, checkpoint, all } => {
            let path = commands::predict(&cfg, checkpoint.as_deref(), input.as_deref(), all)?;
            println!("{}", path.display());
        }
        Command::Gradcheck { corrupt_backward } => {
            commands::gradcheck(&cfg, cli.seed, corrupt_backward)?;
        }
        Command::Ablate => {
            commands::ablate(&cfg)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
