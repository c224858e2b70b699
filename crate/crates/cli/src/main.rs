use std::path::PathBuf;
use std::process::ExitCode;

use aligned_cli::{eval_cmd, gen_data, rerun, train_cmd, RunManifest, Task};
use clap::{Parser, Subcommand};

/// Tri-modal aligned representations: data, training and evaluation.
#[derive(Parser)]
#[command(name = "aligned", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic (image, sound, text) dataset.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a network; `--checkpoint` resumes from an earlier state.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a checkpoint; all tasks run unless `--tasks` is given.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, value_delimiter = ',')]
        tasks: Vec<Task>,
    },
    /// Re-execute a run manifest and compare every artifact bitwise.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn summarize(m: &RunManifest) {
    println!("{}: {} artifacts in {}", m.command, m.artifacts.len(), m.out.display());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData { config, out } => gen_data(&config, &out).map(|m| summarize(&m)),
        Command::Train { config, data, out, checkpoint } => {
            train_cmd(&config, &data, &out, checkpoint.as_deref()).map(|m| summarize(&m))
        }
        Command::Eval { config, data, checkpoint, out, tasks } => {
            eval_cmd(&config, &data, &checkpoint, &out, &tasks).map(|m| summarize(&m))
        }
        Command::Rerun { manifest, out } => rerun(&manifest, &out).map(|(m, diff)| {
            summarize(&m);
            if diff.is_empty() {
                println!("all artifacts reproduced bitwise");
            } else {
                for p in &diff {
                    println!("differs: {}", p.display());
                }
            }
            diff.is_empty()
        })
        .and_then(|same| {
            if same {
                Ok(())
            } else {
                Err(aligned_core::CoreError::data("rerun did not reproduce every artifact"))
            }
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
