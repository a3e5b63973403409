//! Synthetic two-modality task, model assembly, training, evaluation and
//! run aggregation.

mod config;
mod experiment;
mod metrics;
mod model;
mod report;
mod synthetic;
mod train;

pub use config::{Alignment, ExperimentConfig, ModelConfig, Optimizer, SyntheticTaskConfig, TrainConfig};
pub use experiment::{ablation_harness, ablation_variants, run_experiment, run_on_dataset, verify_ones_mask, AblationAxis};
pub use metrics::{classification_metrics, evaluate_predictions, ConfusionMatrix, Evaluation, Metrics};
pub use model::{assemble_model, orthogonal_matrix, ForwardOutput, InputShape, Model, TransportWeights};
pub use report::{aggregate, config_fingerprint, reports_to_csv, table_header, RunFailure, RunReport};
pub use synthetic::{generate_task, stratified_split, Dataset, Sample};
pub use train::{
    evaluate, run_single, sample_loss, split_loss, train, EarlyStopping, EpochLog, RunResult, TrainOutcome,
};
