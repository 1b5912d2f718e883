//! Run configuration, metrics, the end-to-end pipeline, ablations and the
//! statistics oracle.

pub mod ablate;
pub mod config;
pub mod metrics;
pub mod oracle;
pub mod pipeline;

pub use ablate::{ablate, direction_checks, median, AblationRow, AblationTable, DirectionCheck, Variant, VariantRun};
pub use config::{OptimConfig, RunConfig, Task, TextConfig, TextSourceKind};
pub use metrics::{binary_label, f1_per_class, macro_f1, ClassMetrics, ConfusionMatrix, MetricsReport};
pub use oracle::{log_likelihood, oracle_predict};
pub use pipeline::{
    evaluate, export_embeddings, load_model, obtain_dataset, run_all, synthesize, test_set, train, train_set, Phase,
    RunPaths, TrainOutcome,
};
