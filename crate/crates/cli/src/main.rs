//! `click2mask`: click-driven local image editing and its evaluation tools.

mod commands;
mod error;
mod imageio;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use click2mask::metrics::ExtractParams;

use commands::edit::EditArgs;
use commands::extract::ExtractArgs;
use error::CliResult;

#[derive(Parser, Debug)]
#[command(name = "click2mask", version, about = "Local image edits from a single click and a prompt")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Edit an image around a clicked point.
    Edit {
        /// Input PNG.
        #[arg(long)]
        image: PathBuf,
        /// Click position in pixels.
        #[arg(long, value_name = "X,Y", value_parser = parse_point)]
        point: (usize, usize),
        /// What to add at the click.
        #[arg(long)]
        prompt: String,
        /// JSON config; every field optional.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Master seed (overridden by C2M_SEED).
        #[arg(long)]
        seed: Option<u64>,
        /// Output PNG [default: <image>_edited.png].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write per-evolution JSONL traces here.
        #[arg(long)]
        trace_dir: Option<PathBuf>,
        /// Also write mask frames under the trace directory.
        #[arg(long, requires = "trace_dir")]
        frames: bool,
        #[arg(long, default_value = "synthetic")]
        backend: String,
    },
    /// Recover the edited region from an input/output pair.
    ExtractMask {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = ExtractParams::default().threshold)]
        threshold: f64,
        #[arg(long, default_value_t = ExtractParams::default().pool_radius)]
        pool_radius: usize,
        /// Smallest kept component, in pixels.
        #[arg(long, default_value_t = ExtractParams::default().min_component)]
        min_size: usize,
        /// Mask PNG [default: <output>.mask.png].
        #[arg(long)]
        mask_out: Option<PathBuf>,
    },
    /// Summarize pairwise preference votes.
    Stats {
        /// CSV of item_id,rater_id,choice (a, b or tie).
        #[arg(long)]
        votes: PathBuf,
    },
}

fn parse_point(s: &str) -> Result<(usize, usize), String> {
    let (x, y) = s
        .split_once(',')
        .ok_or_else(|| format!("expected X,Y, got {s:?}"))?;
    let coord = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| format!("{v:?} is not a non-negative integer"))
    };
    Ok((coord(x)?, coord(y)?))
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Edit {
            image,
            point,
            prompt,
            config,
            seed,
            out,
            trace_dir,
            frames,
            backend,
        } => commands::edit::run(EditArgs {
            image,
            point,
            prompt,
            config,
            seed,
            out,
            trace_dir,
            frames,
            backend,
        }),
        Command::ExtractMask {
            input,
            output,
            threshold,
            pool_radius,
            min_size,
            mask_out,
        } => commands::extract::run(ExtractArgs {
            input,
            output,
            params: ExtractParams {
                threshold,
                pool_radius,
                min_component: min_size,
            },
            mask_out,
        }),
        Command::Stats { votes } => commands::stats::run(votes),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
