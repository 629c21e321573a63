//! Record preprocessing: categorical relabeling, z-score normalization and
//! fixed-length sliding windows with one-hour step.

use crate::error::{Error, Result};
use crate::psv::{PatientRecord, N_CATEGORICAL, N_NUMERIC, NUMERIC_NAMES};

/// Category index reserved for a missing binary variable.
pub const CAT_MISSING: u8 = 6;
pub const N_CATEGORIES: usize = 7;
pub const STD_FLOOR: f64 = 1e-6;

/// Maps binary variable `var_index` (Gender, Unit1, Unit2) to one of the six
/// clinical categories `2 * var_index + raw`, or [`CAT_MISSING`].
pub fn relabel_categorical(var_index: usize, raw: Option<u8>) -> Result<u8> {
    if var_index >= N_CATEGORICAL {
        return Err(Error::contract(format!("categorical index {var_index} out of range")));
    }
    match raw {
        None => Ok(CAT_MISSING),
        Some(v @ (0 | 1)) => Ok(2 * var_index as u8 + v),
        Some(v) => Err(Error::contract(format!("binary variable value {v} not in {{0,1}}"))),
    }
}

/// Per-variable mean and population standard deviation over observed training values.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: [f64; N_NUMERIC],
    pub std: [f64; N_NUMERIC],
}

impl NormStats {
    pub fn identity() -> Self {
        NormStats {
            mean: [0.0; N_NUMERIC],
            std: [1.0; N_NUMERIC],
        }
    }
}

pub fn fit_normalizer(train: &[PatientRecord]) -> NormStats {
    let mut count = [0usize; N_NUMERIC];
    let mut sum = [0.0f64; N_NUMERIC];
    for row in train.iter().flat_map(|r| &r.rows) {
        for (j, v) in row.numeric.iter().enumerate() {
            if let Some(v) = v {
                count[j] += 1;
                sum[j] += v;
            }
        }
    }
    let mut stats = NormStats::identity();
    for j in 0..N_NUMERIC {
        if count[j] > 0 {
            stats.mean[j] = sum[j] / count[j] as f64;
        }
    }
    let mut sq = [0.0f64; N_NUMERIC];
    for row in train.iter().flat_map(|r| &r.rows) {
        for (j, v) in row.numeric.iter().enumerate() {
            if let Some(v) = v {
                let d = v - stats.mean[j];
                sq[j] += d * d;
            }
        }
    }
    for j in 0..N_NUMERIC {
        if count[j] == 0 {
            log::warn!(
                "variable {} has no observed training values; using mean 0, std 1",
                NUMERIC_NAMES[j]
            );
            continue;
        }
        stats.std[j] = (sq[j] / count[j] as f64).sqrt().max(STD_FLOOR);
    }
    stats
}

pub fn apply_normalizer(record: &PatientRecord, stats: &NormStats) -> PatientRecord {
    let mut out = record.clone();
    for row in &mut out.rows {
        for (j, v) in row.numeric.iter_mut().enumerate() {
            if let Some(x) = v {
                *x = (*x - stats.mean[j]) / stats.std[j];
            }
        }
    }
    out
}

/// One fixed-length history ending at hour `t_end`. Row `L-1` is hour `t_end`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub values: Vec<[f64; N_NUMERIC]>,
    pub cat_idx: Vec<[u8; N_CATEGORICAL]>,
    pub obs_mask: Vec<[bool; N_NUMERIC]>,
    pub pad_mask: Vec<bool>,
    pub label: bool,
    pub patient_id: String,
    pub t_end: usize,
}

impl WindowSample {
    pub fn len(&self) -> usize {
        self.pad_mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pad_mask.is_empty()
    }

    /// Raw per-hour 40-vector for the baselines: normalized numeric values with
    /// missing as 0, then the three binary variables as 0/1 with 0.5 for missing.
    pub fn raw_row(&self, t: usize) -> [f64; N_NUMERIC + N_CATEGORICAL] {
        let mut out = [0.0; N_NUMERIC + N_CATEGORICAL];
        out[..N_NUMERIC].copy_from_slice(&self.values[t]);
        for c in 0..N_CATEGORICAL {
            let idx = self.cat_idx[t][c];
            out[N_NUMERIC + c] = if idx == CAT_MISSING {
                0.5
            } else {
                f64::from(idx - 2 * c as u8)
            };
        }
        out
    }
}

/// Builds the window ending at hour `t` (rows before hour 0 are padding).
pub fn window_at(record: &PatientRecord, t: usize, len: usize) -> Result<WindowSample> {
    if len == 0 {
        return Err(Error::contract("window length must be at least 1"));
    }
    if t >= record.n_hours() {
        return Err(Error::contract(format!(
            "hour {t} outside record of {} hours",
            record.n_hours()
        )));
    }
    let mut w = WindowSample {
        values: vec![[0.0; N_NUMERIC]; len],
        cat_idx: vec![[CAT_MISSING; N_CATEGORICAL]; len],
        obs_mask: vec![[false; N_NUMERIC]; len],
        pad_mask: vec![true; len],
        label: record.rows[t].label,
        patient_id: record.patient_id.clone(),
        t_end: t,
    };
    for k in 0..len {
        // Row k of the window holds hour t + k + 1 - len.
        let Some(hour) = (t + k + 1).checked_sub(len) else {
            continue;
        };
        let row = &record.rows[hour];
        w.pad_mask[k] = false;
        for (j, v) in row.numeric.iter().enumerate() {
            if let Some(v) = v {
                w.values[k][j] = *v;
                w.obs_mask[k][j] = true;
            }
        }
        for c in 0..N_CATEGORICAL {
            w.cat_idx[k][c] = relabel_categorical(c, row.categorical[c])?;
        }
    }
    Ok(w)
}

/// One window per hour of the record, in hour order.
pub fn make_windows(record: &PatientRecord, len: usize) -> Result<Vec<WindowSample>> {
    (0..record.n_hours())
        .map(|t| window_at(record, t, len))
        .collect()
}
