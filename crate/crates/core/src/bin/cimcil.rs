use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cimcil::harness::{self, ExperimentConfig};
use cimcil::model::checkpoint::Checkpoint;
use cimcil::Result;

#[derive(Parser)]
#[command(name = "cimcil", version, about = "Class-incremental learning with compressed exemplars")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated seeds; each gets its own run directory.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Output directory (defaults to `runs/<name>`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test split of a dataset directory.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory, or `synthetic` for the built-in set (the run's own
        /// settings when the checkpoint sits in a run directory).
        #[arg(long)]
        data: String,
    },
    /// Write original, soft mask, box overlay and compressed PNGs for one image.
    CompressPreview {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0.6)]
        tau: f64,
        #[arg(long, default_value_t = 4.0)]
        eta: f64,
        /// Classifier row to explain; defaults to the predicted class.
        #[arg(long)]
        class: Option<usize>,
        #[arg(long, default_value = "preview")]
        out: PathBuf,
    },
    /// Draw accuracy and cost charts from a results directory.
    Plot {
        #[arg(long)]
        results: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, seeds, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = out.unwrap_or_else(|| PathBuf::from("runs").join(&cfg.name));
            match seeds {
                Some(seeds) if !seeds.is_empty() => {
                    for r in harness::run_seeds(&cfg, &seeds, &out)? {
                        println!(
                            "seed {}: average accuracy {:.4}, last {:.4}",
                            r.seed, r.average_accuracy, r.last_accuracy
                        );
                    }
                }
                _ => {
                    let r = harness::run_experiment(&cfg, &out)?;
                    for p in &r.phases {
                        println!(
                            "phase {}: {} classes, accuracy {:.4}, {} exemplars, mean cost {:.4}",
                            p.phase, p.seen_classes, p.accuracy, p.exemplars_stored, p.mean_cost
                        );
                    }
                    println!("average accuracy {:.4}, last {:.4}", r.average_accuracy, r.last_accuracy);
                }
            }
            println!("results in {}", out.display());
        }
        Command::Eval { checkpoint, data } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let size = ckpt.state.arch.height;
            let dataset = if data == "synthetic" {
                // a checkpoint inside a run directory regenerates that run's data
                let run_config = checkpoint.parent().and_then(|d| d.parent()).map(|d| d.join("config.toml"));
                let cfg = match run_config.filter(|p| p.is_file()) {
                    Some(p) => ExperimentConfig::load(&p)?,
                    None => ExperimentConfig {
                        image_size: size,
                        ..ExperimentConfig::default()
                    },
                };
                harness::synthetic_dataset(&cfg.synthetic_spec())?
            } else {
                harness::ingest_dataset(&PathBuf::from(data), size, ckpt.state.arch.width)?
            };
            let acc = harness::eval_checkpoint(&ckpt, &dataset)?;
            println!("accuracy {acc:.4} on {} classes", ckpt.class_order.len());
        }
        Command::CompressPreview {
            image,
            checkpoint,
            tau,
            eta,
            class,
            out,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let r = harness::compress_preview(&image, &ckpt, tau, eta, class, &out)?;
            println!(
                "class {} (row {}), box {:?}, cost {:.4}{}; images in {}",
                r.class_id,
                r.class_index,
                r.bbox,
                r.cost,
                if r.degenerate { ", degenerate map" } else { "" },
                out.display()
            );
        }
        Command::Plot { results } => {
            for p in harness::plot_results(&results)? {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}
