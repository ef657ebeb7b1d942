//! Training loop: batched gradient steps over one shared tape per batch,
//! deterministic data order, periodic evaluation and resumable checkpoints.

use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rand::seq::SliceRandom;

use crate::data::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::data::config::{EvalSettings, RunConfig};
use crate::data::dataset::{load_dataset, load_image, DatasetIndex};
use crate::data::metrics::{MetricRecord, MetricsWriter};
use crate::error::{Error, Result};
use crate::eval::{
    compute_map, score_predictions, top1_verb_accuracy, CategoryMeta, DetectionRecord, MapReport,
};
use crate::loss::{ensure_finite, hoi_loss, spatial_losses, total_loss, PredVars};
use crate::matching::{match_predictions, GroundTruthSet};
use crate::model::encoder::PixelImage;
use crate::model::full::{snapshot, BranchConfig, HoiModel, RunMode};
use crate::model::{ParamStore, Session};
use crate::optim::AdamW;
use crate::rng::{self, save_state, streams};
use crate::teacher;

pub const LATEST_CHECKPOINT: &str = "checkpoint_latest.bin";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CONFIG_FILE: &str = "config.toml";

/// One image with its annotations, decoded and resident.
pub struct LoadedScene {
    pub id: String,
    pub img: PixelImage,
    pub gt: GroundTruthSet,
}

pub fn load_scenes(ds: &DatasetIndex) -> Result<Vec<LoadedScene>> {
    ds.images
        .iter()
        .map(|info| {
            Ok(LoadedScene {
                id: info.id.clone(),
                img: load_image(&ds.root, info)?,
                gt: ds.gts[&info.id].clone(),
            })
        })
        .collect()
}

/// Initializes a model whose category space matches the dataset, seeds the
/// explorer heads from the teacher and returns the parameter store.
pub fn build_model(
    cfg: &RunConfig,
    objects: &[String],
    verbs: &[String],
    meta: &CategoryMeta,
) -> Result<(ParamStore, HoiModel)> {
    if cfg.model.n_obj != objects.len()
        || cfg.model.n_verb != verbs.len()
        || cfg.model.n_hoi != meta.n_hoi()
    {
        return Err(Error::Config(format!(
            "model expects {} objects / {} verbs / {} interactions but the dataset has {} / {} / {}",
            cfg.model.n_obj,
            cfg.model.n_verb,
            cfg.model.n_hoi,
            objects.len(),
            verbs.len(),
            meta.n_hoi()
        )));
    }
    let teacher = teacher::provider(&cfg.teacher_provider, cfg.model.teacher_dim, cfg.seed)?;
    let mut store = ParamStore::new();
    let mut init_rng = rng::stream(cfg.seed, streams::INIT);
    let model = HoiModel::init(
        cfg.model.clone(),
        cfg.constraints.tau_init,
        Some(teacher),
        &mut store,
        &mut init_rng,
    );
    model.init_explorer_from_teacher(&mut store, &cfg.templates, objects, verbs, cfg.seed);
    Ok((store, model))
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub map: MapReport,
    pub verb_correct: usize,
    pub verb_total: usize,
}

impl EvalSummary {
    pub fn verb_accuracy(&self) -> f64 {
        if self.verb_total == 0 {
            0.0
        } else {
            self.verb_correct as f64 / self.verb_total as f64
        }
    }
}

/// Runs inference over the scenes and scores the detections against the
/// ground truth.
pub fn evaluate_scenes(
    model: &HoiModel,
    store: &ParamStore,
    scenes: &[LoadedScene],
    gts: &IndexMap<String, GroundTruthSet>,
    meta: &CategoryMeta,
    branches: &BranchConfig,
    settings: &EvalSettings,
    subset: Option<&[String]>,
) -> Result<(EvalSummary, Vec<DetectionRecord>)> {
    let mut dets = Vec::new();
    for scene in scenes {
        let mut s = Session::new(store);
        let out = model.forward(&mut s, &scene.img, branches, 1.0, RunMode::Eval)?;
        let snaps = snapshot(&s, &out);
        dets.extend(score_predictions(&scene.id, &snaps, meta, settings.top_k));
    }
    let map = compute_map(
        &dets,
        gts,
        meta,
        settings.iou_thresh,
        subset,
        settings.scheme,
    )?;
    let (verb_correct, verb_total) = top1_verb_accuracy(&dets, gts, meta, subset)?;
    Ok((
        EvalSummary {
            map,
            verb_correct,
            verb_total,
        },
        dets,
    ))
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub epochs_run: usize,
    pub steps: u64,
    pub final_loss: f64,
    pub final_eval: Option<EvalSummary>,
    pub checkpoint: PathBuf,
    pub metrics_path: PathBuf,
}

fn due(every: usize, epoch: usize, total: usize) -> bool {
    epoch + 1 == total || (every > 0 && (epoch + 1) % every == 0)
}

fn resume_compatible(current: &RunConfig, saved: &RunConfig) -> Result<()> {
    if saved.model != current.model {
        return Err(Error::Config(
            "cannot resume: checkpoint was trained with different model dimensions".into(),
        ));
    }
    if saved.seed != current.seed {
        return Err(Error::Config(format!(
            "cannot resume: checkpoint used seed {} but the config says {}",
            saved.seed, current.seed
        )));
    }
    if saved.branches != current.branches {
        return Err(Error::Config(
            "cannot resume: checkpoint was trained with different branch switches".into(),
        ));
    }
    Ok(())
}

fn nan_abort(err: Error, last_good: Option<&Path>, step: u64) -> Error {
    let hint = match last_good {
        Some(p) => format!("restart from the last good checkpoint at {}", p.display()),
        None => "no checkpoint has been written yet; restart from scratch".to_string(),
    };
    Error::Numeric(format!("{err} at optimizer step {step}; {hint}"))
}

/// Trains according to the config. If `out_dir` already holds a
/// `checkpoint_latest.bin` the run resumes from it: parameters, optimizer
/// moments and both generator streams are restored, so the continued
/// trajectory is identical to an uninterrupted run.
pub fn train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::Io {
        path: cfg.out_dir.clone(),
        source: e,
    })?;
    let ds = load_dataset(&cfg.data)?;
    if ds.is_empty() {
        return Err(Error::Config(format!(
            "dataset at {} has no images",
            cfg.data.display()
        )));
    }
    let (mut store, model) = build_model(cfg, &ds.objects, &ds.verbs, &ds.meta)?;
    let scenes = load_scenes(&ds)?;
    let val_ds = if cfg.val_root() == cfg.data {
        None
    } else {
        Some(load_dataset(cfg.val_root())?)
    };
    let val_scenes = match &val_ds {
        Some(v) => Some(load_scenes(v)?),
        None => None,
    };

    let config_text = cfg.to_toml()?;
    cfg.save(&cfg.out_dir.join(CONFIG_FILE))?;

    let mut opt = AdamW::new(cfg.optim.clone());
    let mut rng_data = rng::stream(cfg.seed, streams::DATA_ORDER);
    let mut rng_gumbel = rng::stream(cfg.seed, streams::GUMBEL);
    let mut start_epoch = 0usize;
    let mut global_step = 0u64;
    let latest = cfg.out_dir.join(LATEST_CHECKPOINT);
    let mut last_good: Option<PathBuf> = None;
    if latest.is_file() {
        let ckpt = load_checkpoint(&latest)?;
        let saved_cfg = RunConfig::from_toml(&ckpt.config_toml)?;
        resume_compatible(cfg, &saved_cfg)?;
        ckpt.restore_params(&mut store)?;
        ckpt.restore_optimizer(&mut opt);
        rng_data = rng::restore_state(&ckpt.rng_data);
        rng_gumbel = rng::restore_state(&ckpt.rng_gumbel);
        start_epoch = ckpt.epoch as usize;
        global_step = ckpt.step;
        last_good = Some(latest.clone());
        log::info!(
            "resuming from {} at epoch {start_epoch}, step {global_step}",
            latest.display()
        );
    }
    if start_epoch >= cfg.train.epochs {
        return Err(Error::Config(format!(
            "checkpoint is already at epoch {start_epoch}; nothing to train (epochs = {})",
            cfg.train.epochs
        )));
    }

    let metrics_path = cfg.out_dir.join(METRICS_FILE);
    let mut metrics = MetricsWriter::open(&metrics_path)?;
    let mut final_loss = f64::NAN;
    let mut final_eval = None;

    for epoch in start_epoch..cfg.train.epochs {
        let lr = opt.lr_at(epoch);
        let use_spatial = epoch >= cfg.train.warmup_epochs
            && cfg.branches.context
            && (cfg.constraints.fc || cfg.constraints.rc || cfg.constraints.ic);
        let mut order: Vec<usize> = (0..scenes.len()).collect();
        order.shuffle(&mut rng_data);

        for chunk in order.chunks(cfg.train.batch_size) {
            let mut s = Session::new(&store);
            let mut batch_total = None;
            let mut hoi_sum = 0.0;
            let mut fc_sum = 0.0;
            let mut rc_sum = 0.0;
            let mut ic_sum = 0.0;
            for &idx in chunk {
                let scene = &scenes[idx];
                let out = model.forward(
                    &mut s,
                    &scene.img,
                    &cfg.branches,
                    cfg.train.temperature,
                    RunMode::Train {
                        gumbel: &mut rng_gumbel,
                    },
                )?;
                let snaps = snapshot(&s, &out);
                let m = match_predictions(&snaps, &scene.gt, &cfg.matching);
                let preds = PredVars::from_output(&out);
                let hoi = hoi_loss(&mut s.tape, &preds, &scene.gt, &m, &cfg.loss);
                hoi_sum += s.tape.value(hoi.total).item();
                let total = if use_spatial {
                    let sc = spatial_losses(&mut s, &model, &out, &scene.gt, &m, &cfg.constraints);
                    fc_sum += s.tape.value(sc.fc).item();
                    rc_sum += s.tape.value(sc.rc).item();
                    ic_sum += s.tape.value(sc.ic).item();
                    total_loss(&mut s.tape, hoi.total, sc.total)
                } else {
                    hoi.total
                };
                batch_total = Some(match batch_total {
                    None => total,
                    Some(acc) => s.tape.add(acc, total),
                });
            }
            let n = chunk.len() as f64;
            let mean = s.tape.scale(batch_total.expect("non-empty batch"), 1.0 / n);
            let loss_val = ensure_finite(&s.tape, mean, "training loss")
                .map_err(|e| nan_abort(e, last_good.as_deref(), global_step))?;
            let grads = s.tape.backward(mean);
            let named = s.param_grads(&grads);
            drop(s);
            opt.apply(&mut store, &named, lr);
            global_step += 1;
            final_loss = loss_val;

            let mut rec = MetricRecord::new(global_step, epoch, "train")
                .with("loss", loss_val)
                .with("hoi", hoi_sum / n);
            if use_spatial {
                rec = rec
                    .with("fc", fc_sum / n)
                    .with("rc", rc_sum / n)
                    .with("ic", ic_sum / n);
            }
            metrics.append(&rec.with("lr", lr))?;
        }

        if due(cfg.train.eval_every, epoch, cfg.train.epochs) {
            let (eval_scenes, eval_gts, eval_meta) = match (&val_scenes, &val_ds) {
                (Some(vs), Some(vd)) => (vs.as_slice(), &vd.gts, &vd.meta),
                _ => (scenes.as_slice(), &ds.gts, &ds.meta),
            };
            let (summary, _) = evaluate_scenes(
                &model,
                &store,
                eval_scenes,
                eval_gts,
                eval_meta,
                &cfg.branches,
                &cfg.eval,
                None,
            )?;
            let mut rec = MetricRecord::new(global_step, epoch, "eval")
                .with("map", summary.map.full)
                .with("verb_acc", summary.verb_accuracy());
            if let Some(r) = summary.map.rare {
                rec = rec.with("map_rare", r);
            }
            if let Some(nr) = summary.map.non_rare {
                rec = rec.with("map_non_rare", nr);
            }
            metrics.append(&rec)?;
            final_eval = Some(summary);
        }

        if due(cfg.train.checkpoint_every, epoch, cfg.train.epochs) {
            let ckpt = Checkpoint::capture(
                &config_text,
                &store,
                &opt,
                save_state(&rng_data),
                save_state(&rng_gumbel),
                (epoch + 1) as u64,
                global_step,
            );
            let path = cfg
                .out_dir
                .join(format!("checkpoint_epoch_{:04}.bin", epoch + 1));
            save_checkpoint(&path, &ckpt)?;
            save_checkpoint(&latest, &ckpt)?;
            last_good = Some(path);
        }
    }

    Ok(TrainOutcome {
        epochs_run: cfg.train.epochs - start_epoch,
        steps: global_step,
        final_loss,
        final_eval,
        checkpoint: latest,
        metrics_path,
    })
}
