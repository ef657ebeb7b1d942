//! Configuration, dataset IO, synthetic scenes, metrics and training.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod hico;
pub mod metrics;
pub mod synth;
pub mod train;
pub mod visualize;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{EvalSettings, RunConfig, TrainSchedule};
pub use dataset::{load_dataset, load_image, DatasetIndex, ImageInfo};
pub use metrics::{read_metrics, MetricRecord, MetricsWriter};
pub use synth::{generate_synthetic, DifficultyMix, SynthSpec, SynthTask};
pub use train::{train, TrainOutcome};
pub use visualize::visualize;
