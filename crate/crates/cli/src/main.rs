use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use docre_core::config::{RunConfig, THREADS_ENV};
use docre_core::pipeline::{self, Split};

#[derive(Parser)]
#[command(
    name = "docre",
    version,
    about = "Document-level relation extraction pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the configured corpora and write corpus statistics.
    Prepare {
        #[arg(long, required_unless_present = "synthetic")]
        config: Option<PathBuf>,
        /// Write the synthetic dataset and a matching config into this directory instead.
        #[arg(long, conflicts_with = "config")]
        synthetic: Option<PathBuf>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Train the teacher on the annotated split.
    TrainTeacher {
        #[arg(long)]
        config: PathBuf,
    },
    /// Pretrain a student on the distant split, with soft labels for KD strategies.
    Distill {
        #[arg(long)]
        config: PathBuf,
        /// Teacher checkpoint; defaults to the one in the output directory.
        #[arg(long)]
        teacher: Option<PathBuf>,
        /// Regenerate the soft-label store even if one exists.
        #[arg(long)]
        regenerate: bool,
    },
    /// Fine-tune a checkpoint on the annotated split.
    Finetune {
        #[arg(long)]
        config: PathBuf,
        /// Starting checkpoint; defaults to the pretrained student.
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Score a checkpoint on a split and write report and predictions.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to the fine-tuned checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "dev")]
        split: String,
        /// Also report relation-agnostic pair F1.
        #[arg(long)]
        binary: bool,
        /// Print the report as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Categorize a prediction file into C, W, MS and MR against a gold split.
    ErrorReport {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, default_value = "dev")]
        split: String,
    },
    /// Predict relations for a corpus file with a checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

fn load_config(path: &Path) -> Result<RunConfig> {
    RunConfig::load(path).with_context(|| format!("loading config {}", path.display()))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Ok(threads) = std::env::var(THREADS_ENV) {
        threads.parse::<usize>().with_context(|| {
            format!("{THREADS_ENV} must be a positive integer, got `{threads}`")
        })?;
        // Read by the tensor kernels' thread pool on first use.
        std::env::set_var("RAYON_NUM_THREADS", threads);
    }
    let cli = Cli::parse();
    match cli.command {
        Command::Prepare {
            config,
            synthetic,
            seed,
        } => {
            if let Some(dir) = synthetic {
                let path = pipeline::write_synthetic_dataset(&dir, seed)?;
                println!("wrote synthetic dataset and config {}", path.display());
            } else if let Some(config) = config {
                let summary = pipeline::prepare(&load_config(&config)?)?;
                println!("{}", serde_json::to_string_pretty(&summary)?);
            }
        }
        Command::TrainTeacher { config } => {
            let out = pipeline::cmd_train_teacher(&load_config(&config)?)?;
            if let Some(last) = out.metrics.last() {
                log::info!("final teacher loss {:.4}", last.mean_loss);
            }
            println!("{}", out.checkpoint.display());
        }
        Command::Distill {
            config,
            teacher,
            regenerate,
        } => {
            let out =
                pipeline::cmd_distill(&load_config(&config)?, teacher.as_deref(), regenerate)?;
            match (&out.soft_labels, out.reused_store) {
                (Some(p), true) => log::info!("reused soft labels {}", p.display()),
                (Some(p), false) => log::info!("wrote soft labels {}", p.display()),
                (None, _) => log::info!("strategy needs no soft labels"),
            }
            println!("{}", out.checkpoint.display());
        }
        Command::Finetune { config, from } => {
            let out = pipeline::cmd_finetune(&load_config(&config)?, from.as_deref())?;
            println!("{}", out.checkpoint.display());
        }
        Command::Evaluate {
            config,
            checkpoint,
            split,
            binary,
            json,
        } => {
            let split: Split = split.parse()?;
            let out = pipeline::cmd_evaluate(
                &load_config(&config)?,
                checkpoint.as_deref(),
                split,
                binary,
            )?;
            if json {
                println!("{}", serde_json::to_string_pretty(&out.report)?);
            } else {
                print!("{}", out.report.to_table());
            }
            log::info!("predictions written to {}", out.predictions_path.display());
        }
        Command::ErrorReport {
            config,
            predictions,
            split,
        } => {
            let split: Split = split.parse()?;
            let report = pipeline::cmd_error_report(&load_config(&config)?, &predictions, split)?;
            print!("{}", report.to_table());
            for (category, triples) in &report.samples {
                for t in triples {
                    println!(
                        "{category}\t{}\t{}\t{}\t{}",
                        t.doc_id, t.head, t.relation, t.tail
                    );
                }
            }
        }
        Command::Predict {
            checkpoint,
            input,
            output,
        } => {
            let n = pipeline::cmd_predict(&checkpoint, &input, &output)?;
            println!("{n} triples written to {}", output.display());
        }
    }
    Ok(())
}
