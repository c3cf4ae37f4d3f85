//! Joint training of both views, evaluation and ablation.

mod ablate;
mod config;
mod data;
mod metrics;
mod train;

pub use ablate::{ablate, ablation_csv, summarize, AblationRow, ABLATION_HEADER};
pub use config::{TrainConfig, Variant};
pub use data::{
    assign_roles, generate_scans, prepare_scan, scan_seed, synthetic_dataset, Dataset, PreparedScan, Role,
    HELDOUT_FRACTION,
};
pub use metrics::{
    evaluate, fuse_predictions, hard_labels, iou_report, point_probabilities, ConfusionMatrix, EvalReport,
    IouReport, Protocol,
};
pub use train::{
    first_labelled_gradients, initial_bank, initial_model, metrics_jsonl, parse_metrics, train, train_observed,
    EpochRecord, IterationRecord, StepLosses, TrainOutcome,
};
