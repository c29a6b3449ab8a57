//! Training and evaluation protocol: patient-level folds, minibatch Adam
//! with best-validation checkpointing, macro metrics, explanation dumps and
//! multi-config comparisons.

mod bench;
mod checkpoint;
mod data;
mod folds;
mod metrics;
mod optim;
mod train;

pub use bench::{bench, render_table, BenchPlan, BenchRow, MeanStd};
pub use checkpoint::{Checkpoint, CheckpointManifest};
pub use data::{prepare, prepare_all, Case, Dataset};
pub use folds::{check_plan, make_folds, Fold, FoldPlan, Split, FOLDS};
pub use metrics::{ClassMetrics, MetricsReport};
pub use optim::{Adam, AdamConfig};
pub use train::{evaluate, explain, select_best, train, train_fold, EpochLog, Selection, TrainConfig, TrainLog};
