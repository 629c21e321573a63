//! Early sepsis prediction from hourly ICU records using heterogeneous event
//! aggregation (per-hour attention over clinical events) followed by a
//! bidirectional LSTM.
//!
//! The crate is organised bottom-up:
//!
//! * [`psv`] reads and writes challenge-format pipe-separated files.
//! * [`preprocess`] normalises records and cuts fixed-length windows.
//! * [`numcore`] is a small reverse-mode autodiff tape with an Adam optimizer.
//! * [`hea`] embeds each hour's events and aggregates them with multi-head attention.
//! * [`seq`] holds the BiLSTM readout, the prediction head and the baselines.
//! * [`metrics`] computes AUROC, AUPRC and the normalized utility score.
//! * [`harness`] wires training, cross-validation, prediction and evaluation together.

pub mod error;
pub mod harness;
pub mod hea;
pub mod metrics;
pub mod numcore;
pub mod preprocess;
pub mod psv;
pub mod seq;

pub use error::{Error, Result};
