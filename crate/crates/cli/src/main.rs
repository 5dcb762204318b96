//! `setlab`: the experiment runner. Every subcommand writes its results and
//! a config snapshot under `--out`.

mod commands;
mod output;
mod resolve;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "setlab", version, about = "Reproducible set-learning experiments")]
struct Cli {
    /// Config file of `key = value` lines under `[section]` headers.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the `seed` key.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for independent runs.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// `key=value` override, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write multi-view and scene datasets with a manifest.
    Synth,
    /// Compare tape gradients with central differences.
    Gradcheck,
    /// Two-stage versus joint training and pooling baselines over view counts.
    Faset,
    /// Train or evaluate the point-cloud instance segmenter.
    Bonet {
        #[arg(value_enum)]
        mode: BonetMode,
        /// Evaluate through block partition and merge.
        #[arg(long)]
        blocks: bool,
    },
    /// Adversarial loss demo with a gradient penalty.
    Gandemo,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum BonetMode {
    Train,
    Eval,
}

/// Exit status of a finished command.
pub enum Outcome {
    Success,
    /// A check ran and did not hold.
    CheckFailed(String),
}

fn main() -> ExitCode {
    let mut cli = Cli::parse();
    if let Some(seed) = cli.seed {
        cli.overrides.push(format!("seed={seed}"));
    }
    let result = resolve::load_settings(cli.config.as_deref(), &cli.overrides).and_then(|settings| {
        let ctx = commands::Context {
            settings,
            out: cli.out.clone(),
            jobs: cli.jobs.max(1),
        };
        match cli.command {
            Command::Synth => commands::synth(ctx),
            Command::Gradcheck => commands::gradcheck(ctx),
            Command::Faset => commands::faset(ctx),
            Command::Bonet { mode, blocks } => match mode {
                BonetMode::Train => commands::bonet_train(ctx),
                BonetMode::Eval => commands::bonet_eval(ctx, blocks),
            },
            Command::Gandemo => commands::gandemo(ctx),
        }
    });
    match result {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                setlab_core::Error::Config(_) | setlab_core::Error::Parse { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
