//! Command-line entry point binding the pipeline end to end.

mod commands;
mod manifest;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "fouriernet", version, about = "Shape-descriptor segmentation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute contour Fourier descriptors of a mask as CSV.
    Descriptors {
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        order: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate per-pixel descriptor maps of a mask as an FDM file.
    Maps {
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        order: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write per-channel min-max normalized PGM visualizations here.
        #[arg(long)]
        pgm_dir: Option<PathBuf>,
    },
    /// Generate a synthetic dataset (paired PGMs plus a JSONL manifest).
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 30)]
        groups: usize,
        #[arg(long, default_value_t = 49)]
        per_group: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 128)]
        width: usize,
        #[arg(long, default_value_t = 0.15)]
        noise: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a synthesized dataset directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run inference on one image with a trained checkpoint.
    Predict {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate predicted masks against reference masks (pixel metrics,
    /// nine-sector metrics, volume/thickness).
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Optional key=value grid config (center, scales, eye side).
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train at several descriptor counts, multiple seeds each, and
    /// tabulate test metrics per count.
    SweepN {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated descriptor counts, e.g. 1,2,3.
        #[arg(long, default_value = "1,2,3")]
        n_list: String,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    let started = std::time::Instant::now();
    let result = match cli.command {
        Command::Descriptors { mask, order, out } => commands::descriptors(&mask, order, &out),
        Command::Maps { mask, order, out, pgm_dir } => {
            commands::maps(&mask, order, &out, pgm_dir.as_deref())
        }
        Command::Synth { seed, groups, per_group, height, width, noise, out } => {
            commands::synth(seed, groups, per_group, height, width, noise, &out)
        }
        Command::Train { config, data, out } => commands::train(&config, &data, &out),
        Command::Predict { config, checkpoint, image, out } => {
            commands::predict(&config, &checkpoint, &image, &out)
        }
        Command::Eval { pred, reference, grid, out } => {
            commands::eval(&pred, &reference, grid.as_deref(), &out)
        }
        Command::SweepN { config, data, n_list, seeds, out } => {
            commands::sweep_n(&config, &data, &n_list, seeds, &out)
        }
    };
    match result {
        Ok(record) => {
            if let Err(e) = record.finalize(started.elapsed()) {
                eprintln!("error: failed to write run manifest: {e:#}");
                std::process::exit(1);
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}
