//! Training, cross-validation, prediction and evaluation pipelines with
//! configuration, checkpoint persistence and the synthetic benchmark cohort.

mod checkpoint;
mod commands;
mod config;
mod data;
pub mod gradcheck;
pub mod synth;
mod train;

pub use checkpoint::{Checkpoint, FORMAT_VERSION};
pub use commands::{
    cmd_cv, cmd_evaluate, cmd_predict, cmd_synth, cmd_train, cross_validate, train_and_validate, write_report,
    CvOutcome, TrainOutcome, CHECKPOINT_FILE, REPORT_KV_FILE, REPORT_TEXT_FILE,
};
pub use config::ModelConfig;
pub use data::{
    build_windows, load_dir, psv_files, split_records, stratified_folds, write_dir, WeightedSampler,
    TRAIN_HELD_RATIO, TRAIN_TEST_RATIO,
};
pub use train::{predict_cohort, predict_record, train_model, TrainLog};
