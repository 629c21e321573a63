use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::checkpoint::Checkpoint;
use super::config::ModelConfig;
use super::data::{build_windows, load_dir, psv_files, split_records, stratified_folds, write_dir, TRAIN_HELD_RATIO};
use super::synth::{generate, SynthConfig};
use super::train::{predict_cohort, predict_record, train_model};
use crate::error::{Error, Result};
use crate::metrics::{
    auprc, auroc, average_probs, ensemble, select_threshold, utility_normalized, utility_normalized_raw,
    EnsembleMode, FoldScore, PatientPrediction, ScoreReport, UtilityConstants,
};
use crate::preprocess::fit_normalizer;
use crate::psv::{parse_prediction_file, patient_id_from_filename, write_prediction_file, PatientRecord};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const REPORT_KV_FILE: &str = "report.kv";

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `report.txt` and `report.kv` into `dir`.
pub fn write_report(dir: &Path, report: &ScoreReport) -> Result<()> {
    create_dir(dir)?;
    for (name, body) in [(REPORT_TEXT_FILE, report.to_text()), (REPORT_KV_FILE, report.to_kv())] {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Fits the normalizer on `train`, trains, and picks the threshold on `val`.
pub fn train_and_validate(
    config: &ModelConfig,
    train: &[PatientRecord],
    val: &[PatientRecord],
) -> Result<(Checkpoint, ScoreReport)> {
    if train.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if val.is_empty() {
        return Err(Error::Data("validation set is empty".into()));
    }
    let norm = fit_normalizer(train);
    let windows = build_windows(train, &norm, config.window_len)?;
    log::info!("training {} on {} windows from {} patients", config.kind, windows.len(), train.len());
    let (model, log) = train_model(config, &windows)?;

    let c = UtilityConstants::default();
    let mut preds = predict_cohort(&model, &norm, val, None)?;
    let choice = select_threshold(&preds, &c)?;
    for p in &mut preds {
        p.rethreshold(choice.theta);
    }
    let mut config = config.clone();
    config.threshold = Some(choice.theta);

    let mut report = ScoreReport::evaluate(&preds, Some(choice.theta), &c)?;
    report.config = config.to_pairs();
    report.extra = log.to_meta();
    report.extra.push(("train_patients".into(), train.len().to_string()));
    report.extra.push(("validation_patients".into(), val.len().to_string()));

    let checkpoint = Checkpoint {
        config,
        norm,
        meta: log.to_meta(),
        model,
    };
    Ok((checkpoint, report))
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint_path: PathBuf,
    pub checkpoint: Checkpoint,
    pub report: ScoreReport,
}

/// Trains on `train_dir`, validates on `val_dir` (or a stratified 10% of the
/// training patients), and writes the checkpoint and reports into `out_dir`.
pub fn cmd_train(config: &ModelConfig, train_dir: &Path, val_dir: Option<&Path>, out_dir: &Path) -> Result<TrainOutcome> {
    config.validate()?;
    let train = load_dir(train_dir)?;
    if train.is_empty() {
        return Err(Error::Data(format!("no .psv files in {}", train_dir.display())));
    }
    let (train, val) = match val_dir {
        Some(dir) => (train, load_dir(dir)?),
        None => split_records(train, TRAIN_HELD_RATIO, config.seed)?,
    };
    let (checkpoint, report) = train_and_validate(config, &train, &val)?;
    create_dir(out_dir)?;
    let checkpoint_path = out_dir.join(CHECKPOINT_FILE);
    checkpoint.save(&checkpoint_path)?;
    write_report(out_dir, &report)?;
    Ok(TrainOutcome {
        checkpoint_path,
        checkpoint,
        report,
    })
}

#[derive(Debug)]
pub struct CvOutcome {
    pub checkpoints: Vec<Checkpoint>,
    pub report: ScoreReport,
    /// Fold index per pool patient, in pool order.
    pub folds: Vec<usize>,
}

/// `k`-fold cross-validation over `pool`, then a vote-ensembled evaluation on `test`.
///
/// Each fold model gets its own threshold from its validation fold. The
/// ensemble threshold comes from the pooled out-of-fold predictions.
pub fn cross_validate(config: &ModelConfig, pool: &[PatientRecord], test: &[PatientRecord], k: usize) -> Result<CvOutcome> {
    config.validate()?;
    if test.is_empty() {
        return Err(Error::Data("test set is empty".into()));
    }
    let folds = stratified_folds(pool, k, config.seed)?;
    let c = UtilityConstants::default();
    let mut checkpoints = Vec::with_capacity(k);
    let mut fold_scores = Vec::with_capacity(k);
    let mut oof: Vec<PatientPrediction> = Vec::with_capacity(pool.len());
    for f in 0..k {
        let (train, val): (Vec<_>, Vec<_>) = pool.iter().zip(&folds).partition(|(_, &g)| g != f);
        let train: Vec<PatientRecord> = train.into_iter().map(|(r, _)| r.clone()).collect();
        let val: Vec<PatientRecord> = val.into_iter().map(|(r, _)| r.clone()).collect();
        log::info!("fold {}/{k}: {} train, {} validation patients", f + 1, train.len(), val.len());
        let fold_config = ModelConfig {
            seed: config.seed.wrapping_add(f as u64),
            ..config.clone()
        };
        let (ck, rep) = train_and_validate(&fold_config, &train, &val)?;
        fold_scores.push(FoldScore {
            fold: f,
            auroc: rep.auroc,
            auprc: rep.auprc,
            utility: rep.utility,
            threshold: rep.threshold.unwrap_or(f64::NAN),
        });
        oof.extend(predict_cohort(&ck.model, &ck.norm, &val, None)?);
        checkpoints.push(ck);
    }
    let theta = select_threshold(&oof, &c)?.theta;

    // Per test patient, one probability vector per fold model.
    let mut per_patient: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(k); test.len()];
    for ck in &checkpoints {
        for (slot, r) in per_patient.iter_mut().zip(test) {
            slot.push(predict_record(&ck.model, &ck.norm, r)?);
        }
    }
    let labels: Vec<Vec<bool>> = test.iter().map(PatientRecord::labels).collect();
    let mut ensemble_utility = Vec::new();
    for mode in EnsembleMode::ALL {
        let preds = per_patient
            .iter()
            .map(|folds| ensemble(folds, mode, theta))
            .collect::<Result<Vec<_>>>()?;
        ensemble_utility.push((mode, utility_normalized_raw(&labels, &preds, &c)?));
    }
    let avg: Vec<f64> = per_patient.iter().flat_map(|f| average_probs(f)).collect();
    let flat_labels: Vec<bool> = labels.iter().flatten().copied().collect();

    let mut config = config.clone();
    config.threshold = Some(theta);
    let report = ScoreReport {
        auroc: auroc(&avg, &flat_labels)?,
        auprc: auprc(&avg, &flat_labels)?,
        utility: ensemble_utility[0].1,
        threshold: Some(theta),
        folds: fold_scores,
        ensemble: ensemble_utility,
        config: config.to_pairs(),
        extra: vec![
            ("folds".into(), k.to_string()),
            ("pool_patients".into(), pool.len().to_string()),
            ("test_patients".into(), test.len().to_string()),
            ("out_of_fold_utility".into(), {
                let mut o = oof;
                for p in &mut o {
                    p.rethreshold(theta);
                }
                utility_normalized(&o, &c)?.to_string()
            }),
        ],
    };
    Ok(CvOutcome {
        checkpoints,
        report,
        folds,
    })
}

/// Runs [`cross_validate`] on `data_dir`, holding out `test_dir` (or a
/// stratified 10% of `data_dir`). Writes `fold<i>.ckpt` and reports to `out_dir`.
pub fn cmd_cv(config: &ModelConfig, data_dir: &Path, test_dir: Option<&Path>, k: usize, out_dir: &Path) -> Result<CvOutcome> {
    config.validate()?;
    let records = load_dir(data_dir)?;
    if records.is_empty() {
        return Err(Error::Data(format!("no .psv files in {}", data_dir.display())));
    }
    let (pool, test) = match test_dir {
        Some(dir) => (records, load_dir(dir)?),
        None => split_records(records, TRAIN_HELD_RATIO, config.seed)?,
    };
    let outcome = cross_validate(config, &pool, &test, k)?;
    create_dir(out_dir)?;
    for (i, ck) in outcome.checkpoints.iter().enumerate() {
        ck.save(&out_dir.join(format!("fold{i}.ckpt")))?;
    }
    write_report(out_dir, &outcome.report)?;
    Ok(outcome)
}

/// Writes one prediction file per input patient; returns how many were written.
pub fn cmd_predict(checkpoint: &Path, input_dir: &Path, output_dir: &Path) -> Result<usize> {
    let ck = Checkpoint::load(checkpoint)?;
    let theta = ck
        .config
        .threshold
        .ok_or_else(|| Error::Checkpoint("checkpoint has no decision threshold".into()))?;
    let records = load_dir(input_dir)?;
    create_dir(output_dir)?;
    for r in &records {
        let probs = predict_record(&ck.model, &ck.norm, r)?;
        let preds: Vec<bool> = probs.iter().map(|&p| p >= theta).collect();
        let path = output_dir.join(format!("{}.psv", r.patient_id));
        std::fs::write(&path, write_prediction_file(&probs, &preds)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(records.len())
}

/// Scores prediction files against labeled patient files, matched by patient id.
pub fn cmd_evaluate(label_dir: &Path, prediction_dir: &Path) -> Result<ScoreReport> {
    let records = load_dir(label_dir)?;
    let mut predictions = BTreeMap::new();
    for name in psv_files(prediction_dir)? {
        let path = prediction_dir.join(&name);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let parsed = parse_prediction_file(&text).map_err(|e| e.in_file(name.clone()))?;
        predictions.insert(patient_id_from_filename(&name), parsed);
    }
    let label_ids: Vec<&str> = records.iter().map(|r| r.patient_id.as_str()).collect();
    let missing: Vec<&str> = label_ids
        .iter()
        .copied()
        .filter(|id| !predictions.contains_key(*id))
        .collect();
    let extra: Vec<&str> = predictions
        .keys()
        .map(String::as_str)
        .filter(|id| !label_ids.contains(id))
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::Data(format!(
            "unmatched patients; without predictions: [{}]; without labels: [{}]",
            missing.join(", "),
            extra.join(", ")
        )));
    }
    let cohort = records
        .into_iter()
        .map(|r| {
            let (probs, preds) = predictions.remove(&r.patient_id).expect("matched above");
            if probs.len() != r.n_hours() {
                return Err(Error::Data(format!(
                    "patient {}: {} predictions for {} hours",
                    r.patient_id,
                    probs.len(),
                    r.n_hours()
                )));
            }
            Ok(PatientPrediction {
                labels: r.labels(),
                patient_id: r.patient_id,
                probs,
                predictions: preds,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ScoreReport::evaluate(&cohort, None, &UtilityConstants::default())
}

/// Writes a synthetic planted-signal cohort; returns the number of patients.
pub fn cmd_synth(config: &SynthConfig, out_dir: &Path) -> Result<usize> {
    let records = generate(config)?;
    write_dir(out_dir, &records)?;
    Ok(records.len())
}
