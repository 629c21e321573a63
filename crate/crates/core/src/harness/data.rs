use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::preprocess::{apply_normalizer, make_windows, NormStats, WindowSample};
use crate::psv::{parse_patient_file, patient_id_from_filename, write_patient_file, PatientRecord};

/// Train : test ratio for a fresh dataset.
pub const TRAIN_TEST_RATIO: f64 = 0.7;
/// Train : held-out ratio inside a training set.
pub const TRAIN_HELD_RATIO: f64 = 0.9;

/// `*.psv` file names in `dir`, sorted.
pub fn psv_files(dir: &Path) -> Result<Vec<String>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".psv") && entry.path().is_file() {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

/// Parses every `*.psv` file in `dir`, in file-name order.
pub fn load_dir(dir: &Path) -> Result<Vec<PatientRecord>> {
    psv_files(dir)?
        .into_iter()
        .map(|name| {
            let path = dir.join(&name);
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            parse_patient_file(&patient_id_from_filename(&name), &text).map_err(|e| e.in_file(name))
        })
        .collect()
}

pub fn write_dir(dir: &Path, records: &[PatientRecord]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for r in records {
        let path = dir.join(format!("{}.psv", r.patient_id));
        std::fs::write(&path, write_patient_file(r)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Septic and non-septic positions, each sorted by patient id and then shuffled.
fn shuffled_strata(records: &[PatientRecord], seed: u64) -> [Vec<usize>; 2] {
    let mut idx: Vec<usize> = (0..records.len()).collect();
    idx.sort_by(|&a, &b| records[a].patient_id.cmp(&records[b].patient_id));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut septic, mut healthy): (Vec<usize>, Vec<usize>) =
        idx.into_iter().partition(|&i| records[i].is_septic());
    septic.shuffle(&mut rng);
    healthy.shuffle(&mut rng);
    [septic, healthy]
}

/// Stratified patient split: `ratio` of each class goes to the first part.
/// Assignment depends only on the seed and the patient ids.
pub fn split_records(
    records: Vec<PatientRecord>,
    ratio: f64,
    seed: u64,
) -> Result<(Vec<PatientRecord>, Vec<PatientRecord>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} must lie in (0, 1)")));
    }
    let mut first_part = vec![false; records.len()];
    for stratum in shuffled_strata(&records, seed) {
        let take = (ratio * stratum.len() as f64).round() as usize;
        for &i in &stratum[..take] {
            first_part[i] = true;
        }
    }
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (r, first) in records.into_iter().zip(first_part) {
        if first {
            a.push(r);
        } else {
            b.push(r);
        }
    }
    Ok((a, b))
}

/// Fold index per record, stratified by septic status.
pub fn stratified_folds(records: &[PatientRecord], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Config("cross-validation needs at least 2 folds".into()));
    }
    let strata = shuffled_strata(records, seed);
    if strata.iter().any(|s| s.len() < k) {
        return Err(Error::Data(format!(
            "{k}-fold cross-validation needs at least {k} septic and {k} non-septic patients \
             (have {} and {})",
            strata[0].len(),
            strata[1].len()
        )));
    }
    let mut fold = vec![0; records.len()];
    // Deal the septic patients round-robin, then continue dealing the rest so
    // fold sizes also stay within one of each other.
    for (pos, &i) in strata[0].iter().chain(&strata[1]).enumerate() {
        fold[i] = pos % k;
    }
    Ok(fold)
}

/// Normalized windows for every hour of every record, in record order.
pub fn build_windows(records: &[PatientRecord], norm: &NormStats, len: usize) -> Result<Vec<WindowSample>> {
    let mut out = Vec::new();
    for r in records {
        out.extend(make_windows(&apply_normalizer(r, norm), len)?);
    }
    Ok(out)
}

/// Draws window indices with a target share of positives.
#[derive(Debug, Clone)]
pub struct WeightedSampler {
    positives: Vec<usize>,
    negatives: Vec<usize>,
    positive_fraction: f64,
}

impl WeightedSampler {
    pub fn new(windows: &[WindowSample], positive_fraction: f64) -> Self {
        let (positives, negatives) = (0..windows.len()).partition(|&i| windows[i].label);
        WeightedSampler {
            positives,
            negatives,
            positive_fraction,
        }
    }

    /// `n` indices drawn with replacement. With only one class present,
    /// draws uniformly from it.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<usize> {
        (0..n)
            .map(|_| {
                let pool = if self.negatives.is_empty() {
                    &self.positives
                } else if self.positives.is_empty() || !rng.random_bool(self.positive_fraction) {
                    &self.negatives
                } else {
                    &self.positives
                };
                pool[rng.random_range(0..pool.len())]
            })
            .collect()
    }
}
