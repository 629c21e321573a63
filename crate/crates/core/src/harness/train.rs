use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::data::WeightedSampler;
use crate::error::{Error, Result};
use crate::metrics::PatientPrediction;
use crate::numcore::{Adam, AdamConfig, StepOutcome, Tape};
use crate::preprocess::{apply_normalizer, make_windows, NormStats, WindowSample};
use crate::psv::PatientRecord;
use crate::seq::Model;

/// Windows per inference batch.
const PREDICT_CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub epoch_losses: Vec<f64>,
    pub skipped_steps: usize,
}

impl TrainLog {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(f64::NAN)
    }

    pub fn to_meta(&self) -> Vec<(String, String)> {
        let losses: Vec<String> = self.epoch_losses.iter().map(f64::to_string).collect();
        vec![
            ("epochs_run".into(), self.epoch_losses.len().to_string()),
            ("final_loss".into(), self.final_loss().to_string()),
            ("epoch_losses".into(), losses.join(",")),
            ("skipped_steps".into(), self.skipped_steps.to_string()),
        ]
    }
}

/// Trains a fresh model on `windows`. All randomness comes from `config.seed`.
///
/// Parameters are rounded to `f32` at the end so the in-memory model matches
/// what a checkpoint stores.
pub fn train_model(config: &ModelConfig, windows: &[WindowSample]) -> Result<(Model, TrainLog)> {
    config.validate()?;
    if windows.is_empty() {
        return Err(Error::Data("no training windows".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Model::new(config.architecture(), &mut rng)?;
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        &model.store,
    );
    let sampler = WeightedSampler::new(windows, config.positive_fraction);
    let per_epoch = if config.epoch_samples == 0 {
        windows.len()
    } else {
        config.epoch_samples
    };
    let mut log = TrainLog {
        epoch_losses: Vec::with_capacity(config.epochs),
        skipped_steps: 0,
    };
    for epoch in 0..config.epochs {
        let started = Instant::now();
        let draws = sampler.draw(&mut rng, per_epoch);
        let mut total = 0.0;
        for (b, chunk) in draws.chunks(config.batch_size).enumerate() {
            let batch: Vec<&WindowSample> = chunk.iter().map(|&i| &windows[i]).collect();
            let mut tape = Tape::new();
            let loss = model.loss(&mut tape, &batch)?;
            let value = tape.value(loss).item()?;
            if !value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss {value} at epoch {epoch}, batch {b}; windows ending at {}",
                    batch
                        .iter()
                        .take(4)
                        .map(|w| format!("{}@{}", w.patient_id, w.t_end))
                        .collect::<Vec<_>>()
                        .join(", ")
                )));
            }
            total += value * batch.len() as f64;
            let grads = tape.backward(loss)?;
            model.store.accumulate(&grads);
            if adam.step(&mut model.store) == StepOutcome::SkippedNonFinite {
                log::warn!("epoch {epoch} batch {b}: non-finite gradient, update skipped");
                log.skipped_steps += 1;
            }
        }
        let mean = total / per_epoch as f64;
        log::info!(
            "epoch {}/{}: loss {mean:.5} ({:.1}s)",
            epoch + 1,
            config.epochs,
            started.elapsed().as_secs_f64()
        );
        log.epoch_losses.push(mean);
    }
    model.store.round_to_f32();
    Ok((model, log))
}

/// Hourly probabilities for one raw (unnormalized) record.
pub fn predict_record(model: &Model, norm: &NormStats, record: &PatientRecord) -> Result<Vec<f64>> {
    let windows = make_windows(&apply_normalizer(record, norm), model.arch.window_len)?;
    let mut probs = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(PREDICT_CHUNK) {
        let refs: Vec<&WindowSample> = chunk.iter().collect();
        probs.extend(model.predict_batch(&refs)?.into_iter().map(|p| p.prob));
    }
    Ok(probs)
}

/// Predictions for a cohort, thresholded at `theta` (0.5 when unset).
pub fn predict_cohort(
    model: &Model,
    norm: &NormStats,
    records: &[PatientRecord],
    theta: Option<f64>,
) -> Result<Vec<PatientPrediction>> {
    records
        .iter()
        .map(|r| {
            let probs = predict_record(model, norm, r)?;
            PatientPrediction::from_probs(r.patient_id.clone(), probs, r.labels(), theta.unwrap_or(0.5))
        })
        .collect()
}
