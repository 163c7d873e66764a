//! Dataset ingestion, stratified splitting, training, evaluation, spline
//! export and checkpoints.

mod checkpoint;
mod config;
mod dataset;
mod export;
mod metrics;
mod split;
pub mod synthetic;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use config::{config_value, parse_config_map, RunConfig, DEFAULT_SEED};
pub use dataset::{load_dataset, Dataset, Record};
pub use export::{export_splines, write_splines, SPLINE_CSV_HEADER};
pub use metrics::{metrics_from_predictions, ClassMetrics, MetricsReport};
pub use split::stratified_split;
pub use train::{evaluate, predict, train, Classifier, EpochRecord, RunManifest, Timings, TrainOutcome, MANIFEST_VERSION};
