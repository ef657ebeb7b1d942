//! `hoi`: train, evaluate and inspect dual-branch HOI detection models.

mod report;

use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};

use hoi_core::data::checkpoint::load_checkpoint;
use hoi_core::data::train::{build_model, evaluate_scenes, load_scenes};
use hoi_core::data::{generate_synthetic, load_dataset, visualize, RunConfig, SynthSpec};
use hoi_core::eval::read_subset;

#[derive(Parser)]
#[command(
    name = "hoi",
    version,
    about = "Dual-branch set-prediction toolkit for human-object interaction detection"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model described by a TOML config. Resumes automatically when
    /// the output directory holds a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset and print the mAP report as JSON.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Restrict scoring to the image ids in this file (one per line).
        #[arg(long)]
        subset: Option<PathBuf>,
    },
    /// Generate a synthetic dataset from a generator spec.
    GenerateSynthetic {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render the three attention panels for one image.
    Visualize {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Image id within the dataset.
        #[arg(long)]
        image: String,
        #[arg(long)]
        out: PathBuf,
        /// Dataset root; defaults to the one recorded in the checkpoint.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Summarize a metrics stream into a JSON digest and curve plots.
    Report {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().cmd {
        Cmd::Train { config } => {
            let mut cfg = RunConfig::load(&config)?;
            cfg.apply_process_env()?;
            let outcome = hoi_core::data::train(&cfg)?;
            println!(
                "trained {} epochs ({} steps), final loss {:.4}",
                outcome.epochs_run, outcome.steps, outcome.final_loss
            );
            if let Some(eval) = &outcome.final_eval {
                println!(
                    "final eval: mAP {:.4}, verb accuracy {:.4}",
                    eval.map.full,
                    eval.verb_accuracy()
                );
            }
            println!("checkpoint: {}", outcome.checkpoint.display());
            println!("metrics: {}", outcome.metrics_path.display());
        }
        Cmd::Eval {
            checkpoint,
            data,
            subset,
        } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let cfg = RunConfig::from_toml(&ckpt.config_toml)?;
            let ds = load_dataset(&data)?;
            let (mut store, model) = build_model(&cfg, &ds.objects, &ds.verbs, &ds.meta)?;
            ckpt.restore_params(&mut store)?;
            let scenes = load_scenes(&ds)?;
            let subset_ids = subset.as_deref().map(read_subset).transpose()?;
            let (summary, _dets) = evaluate_scenes(
                &model,
                &store,
                &scenes,
                &ds.gts,
                &ds.meta,
                &cfg.branches,
                &cfg.eval,
                subset_ids.as_deref(),
            )?;
            let out = serde_json::json!({
                "map": summary.map.full,
                "map_rare": summary.map.rare,
                "map_non_rare": summary.map.non_rare,
                "verb_accuracy": summary.verb_accuracy(),
                "verb_correct": summary.verb_correct,
                "verb_total": summary.verb_total,
                "evaluated_images": summary.map.evaluated_images,
                "gt_instances": summary.map.gt_instances,
            });
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
        Cmd::GenerateSynthetic { spec, out } => {
            let mut spec = SynthSpec::load(&spec)?;
            if let Ok(seed) = std::env::var("HOI_SEED") {
                spec.seed = seed
                    .trim()
                    .parse()
                    .context("HOI_SEED must be an unsigned integer")?;
            }
            let ds = generate_synthetic(&spec, &out)?;
            println!(
                "generated {} scenes ({} interaction classes) in {}",
                ds.len(),
                ds.meta.n_hoi(),
                out.display()
            );
        }
        Cmd::Visualize {
            checkpoint,
            image,
            out,
            data,
        } => {
            let root = match data {
                Some(d) => d,
                None => {
                    let ckpt = load_checkpoint(&checkpoint)?;
                    RunConfig::from_toml(&ckpt.config_toml)?.data
                }
            };
            let panels = visualize(&checkpoint, &root, &image, &out)?;
            for p in panels {
                println!("{}", p.display());
            }
        }
        Cmd::Report { metrics, out } => {
            let rendered = report::render_report(&metrics, &out)?;
            println!("{}", rendered.summary_path.display());
            for p in rendered.plots {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}
