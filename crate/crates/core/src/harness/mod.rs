//! Training, checkpointing, evaluation and ablation.

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod evaluate;
pub mod train;

pub use ablation::{run_ablation, AblationRow, AblationTable, RowKind};
pub use checkpoint::{Checkpoint, Dtype};
pub use config::{DataConfig, ExperimentConfig, OptimizerConfig, OptimizerKind};
pub use evaluate::{evaluate_model, evaluate_predictions, EdgeMapSource, EdgeReport, EvaluationReport};
pub use train::{train, write_log_csv, TrainState, Trainer, UpdateLog};
