//! Training loop, ablation presets, run artifacts and reports.

mod check;
mod config;
mod optim;
mod report;
mod run;

pub use check::{tiny_backbone, tiny_model_gradient_check, CheckedLoss};
pub use config::{Preset, TrainConfig};
pub use optim::Sgd;
pub use report::{emit_report, export_seg, ReportOutput, SegExport, EMBEDDINGS_FILE, REPORT_FILE};
pub use run::{
    apply_style, build_datasets, evaluate_checkpoint, load_model, load_run_config, run_dir_of, train, EpochRecord,
    RunSummary, TrainOutcome, BEST_CHECKPOINT, CONFIG_FILE, ITERATIONS_FILE, LAST_CHECKPOINT, METRICS_FILE,
    NONFINITE_DUMP, SUMMARY_FILE,
};
