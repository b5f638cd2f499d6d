//! Training, evaluation and persistence of the full classifier.

mod adam;
mod bundle;
mod data;
mod manifest;
mod metrics;
mod model;
mod sweep;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use bundle::{BundleHeader, ModelBundle, BUNDLE_MAGIC};
pub use data::{extract_record, Dataset, EmbeddingStats, Example};
pub use manifest::{Manifest, ManifestRecord, Split};
pub use metrics::{argmax, Metrics};
pub use model::{mlp_head, Architecture, BatchInput, BoundNet, Branch, MlpHead, ModelConfig, SslNet};
pub use sweep::{label_budget_sweep, min_train_per_class, Arm, SweepRow};
pub use train::{evaluate, train, training_indices, EpochRecord, History, ModelSetup, TrainConfig};
