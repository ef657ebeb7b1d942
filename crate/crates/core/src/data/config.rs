//! Run configuration: a single TOML document describes the model, the losses,
//! the optimizer and the training schedule. Round-tripping a config through
//! serialize -> parse -> serialize is byte-identical, which keeps checkpoints
//! and experiment dirs self-describing.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::constraints::ConstraintConfig;
use crate::error::{Error, Result};
use crate::eval::ApScheme;
use crate::loss::HoiLossConfig;
use crate::matching::CostWeights;
use crate::model::full::{BranchConfig, ModelDims};
use crate::optim::OptimConfig;

/// Epoch schedule and batching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs trained with the detection loss only before the spatial
    /// constraints are switched on.
    pub warmup_epochs: usize,
    /// Gumbel-softmax temperature used by the explorer during training.
    pub temperature: f64,
    /// Write a checkpoint every this many epochs (0 = only at the end).
    pub checkpoint_every: usize,
    /// Run evaluation every this many epochs (0 = only at the end).
    pub eval_every: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            epochs: 30,
            batch_size: 4,
            warmup_epochs: 0,
            temperature: 1.0,
            checkpoint_every: 10,
            eval_every: 0,
        }
    }
}

/// Inference-time scoring knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub top_k: usize,
    pub iou_thresh: f64,
    pub scheme: ApScheme,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            top_k: 100,
            iou_thresh: 0.5,
            scheme: ApScheme::AllPoints,
        }
    }
}

/// Everything one run needs, in declaration order so the TOML output is
/// stable: scalars first, then the nested sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Training dataset root (a dir holding dataset.jsonl and images/).
    pub data: PathBuf,
    /// Optional held-out set evaluated during training; defaults to `data`.
    pub val_data: Option<PathBuf>,
    /// Pretrained vision-language teacher backing the explorer and the
    /// visual stream ("stub" is the deterministic built-in).
    pub teacher_provider: String,
    /// Prompt templates; `{}` is replaced by the category name.
    pub templates: Vec<String>,
    pub model: ModelDims,
    pub branches: BranchConfig,
    pub loss: HoiLossConfig,
    pub constraints: ConstraintConfig,
    pub matching: CostWeights,
    pub optim: OptimConfig,
    pub train: TrainSchedule,
    pub eval: EvalSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::desk()
    }
}

impl RunConfig {
    /// Small profile for laptop-scale experiments and tests.
    pub fn desk() -> Self {
        RunConfig {
            seed: 7,
            out_dir: PathBuf::from("runs/desk"),
            data: PathBuf::from("data/synth"),
            val_data: None,
            teacher_provider: "stub".into(),
            templates: vec!["a photo of a person and a {}".into()],
            model: ModelDims::desk(),
            branches: BranchConfig::default(),
            loss: HoiLossConfig::default(),
            constraints: ConstraintConfig::default(),
            matching: CostWeights::default(),
            optim: OptimConfig {
                lr: 1e-3,
                ..OptimConfig::default()
            },
            train: TrainSchedule::default(),
            eval: EvalSettings::default(),
        }
    }

    /// Full-scale profile: 60 epochs at 1e-4 with a 10x drop at epoch 40,
    /// batch 16, 64 queries at width 256.
    pub fn paper() -> Self {
        RunConfig {
            seed: 7,
            out_dir: PathBuf::from("runs/paper"),
            data: PathBuf::from("data/hico"),
            val_data: None,
            teacher_provider: "stub".into(),
            templates: vec!["a photo of a person and a {}".into()],
            model: ModelDims::paper(),
            branches: BranchConfig::default(),
            loss: HoiLossConfig::default(),
            constraints: ConstraintConfig::default(),
            matching: CostWeights::default(),
            optim: OptimConfig {
                lr: 1e-4,
                lr_drop_epoch: Some(40),
                lr_drop_factor: 0.1,
                ..OptimConfig::default()
            },
            train: TrainSchedule {
                epochs: 60,
                batch_size: 16,
                warmup_epochs: 0,
                temperature: 1.0,
                checkpoint_every: 5,
                eval_every: 5,
            },
            eval: EvalSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model
            .validate()
            .and_then(|_| self.constraints.validate())?;
        if self.templates.is_empty() {
            return Err(Error::Config("at least one prompt template is required".into()));
        }
        if self.train.epochs == 0 {
            return Err(Error::Config("train.epochs must be at least 1".into()));
        }
        if self.train.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        if !(self.train.temperature > 0.0) {
            return Err(Error::Config(format!(
                "train.temperature must be positive, got {}",
                self.train.temperature
            )));
        }
        if self.eval.top_k == 0 {
            return Err(Error::Config("eval.top_k must be at least 1".into()));
        }
        if !(self.eval.iou_thresh > 0.0 && self.eval.iou_thresh < 1.0) {
            return Err(Error::Config(format!(
                "eval.iou_thresh must lie in (0, 1), got {}",
                self.eval.iou_thresh
            )));
        }
        if !(self.optim.lr > 0.0) {
            return Err(Error::Config(format!(
                "optim.lr must be positive, got {}",
                self.optim.lr
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("serialize config: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("parse config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }

    /// Applies overrides from an environment lookup. `HOI_SEED` replaces the
    /// seed, `HOI_OUT_DIR` the output directory. Injected as a closure so
    /// tests do not have to mutate process state.
    pub fn apply_env_overrides<F>(&mut self, get: F) -> Result<()>
    where
        F: Fn(&str) -> Option<String>,
    {
        if let Some(raw) = get("HOI_SEED") {
            self.seed = raw.trim().parse().map_err(|_| {
                Error::Config(format!("HOI_SEED must be an unsigned integer, got {raw:?}"))
            })?;
        }
        if let Some(dir) = get("HOI_OUT_DIR") {
            self.out_dir = PathBuf::from(dir);
        }
        Ok(())
    }

    /// Same as [`apply_env_overrides`] but reading the process environment.
    pub fn apply_process_env(&mut self) -> Result<()> {
        self.apply_env_overrides(|k| std::env::var(k).ok())
    }

    /// Validation dataset root, falling back to the training set.
    pub fn val_root(&self) -> &Path {
        self.val_data.as_deref().unwrap_or(&self.data)
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "model.dim {} must be a positive multiple of model.heads {}",
                self.dim, self.heads
            )));
        }
        if self.queries == 0 {
            return Err(Error::Config("model.queries must be at least 1".into()));
        }
        if self.stride == 0 {
            return Err(Error::Config("model.stride must be at least 1".into()));
        }
        if self.n_obj == 0 || self.n_verb == 0 || self.n_hoi == 0 {
            return Err(Error::Config(
                "model.n_obj, model.n_verb and model.n_hoi must be at least 1".into(),
            ));
        }
        Ok(())
    }
}
