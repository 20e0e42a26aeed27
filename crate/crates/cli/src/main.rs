mod commands;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use run::{Failure, RunSpec};

#[derive(Parser, Debug)]
#[command(name = "convivit", version, about = "CNN-stem video transformer with factorized attention: training, inference and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Config file of `section.key=value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; created if absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for initialization, data order and synthetic data.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override one config key, e.g. `--set model.depth=2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Allow writing into a non-empty output directory.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train on the configured dataset; writes a checkpoint and metrics.log.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Train the variant x CNN-block matrix with a shared budget.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// Classify one clip (CVVTC file or directory of PPM frames).
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        clip: PathBuf,
    },
    /// Finite-difference check of every parameter group of the configured model.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Scalars checked per layer group (0 = all).
        #[arg(long, default_value_t = 8)]
        samples: usize,
    },
    /// Per-frame spatial attention heatmaps and stem feature maps for one clip.
    ExportAttention {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        clip: PathBuf,
        #[arg(long, default_value_t = 0)]
        layer: usize,
        #[arg(long, default_value_t = 0)]
        head: usize,
    },
    /// MAC counts per stage (CSV) and forward timings.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        batch: usize,
    },
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Train { common } => commands::train(&RunSpec::resolve("train", common, true)?),
        Command::Ablate { common } => commands::ablate(&RunSpec::resolve("ablate", common, true)?),
        Command::Infer { common, checkpoint, clip } => {
            commands::infer(&RunSpec::resolve("infer", common, false)?, &checkpoint, &clip)
        }
        Command::Gradcheck { common, samples } => commands::gradcheck(&RunSpec::resolve("gradcheck", common, true)?, samples),
        Command::ExportAttention { common, checkpoint, clip, layer, head } => {
            commands::export_attention(&RunSpec::resolve("export-attention", common, true)?, &checkpoint, &clip, layer, head)
        }
        Command::Bench { common, batch } => commands::bench(&RunSpec::resolve("bench", common, true)?, batch),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
