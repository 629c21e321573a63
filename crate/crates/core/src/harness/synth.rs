//! Synthetic cohort with one planted sepsis signal.
//!
//! Every patient carries noisy vitals, sparse labs and fixed demographics.
//! In septic patients the planted lab steps up sharply from the first
//! labeled hour on, starting from a patient-specific baseline, so the label
//! is recoverable from the variable's recent history but not from its level
//! alone.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::psv::{HourRow, PatientRecord, NUMERIC_NAMES, N_NUMERIC};

/// The variable that carries the signal.
pub const PLANTED_VARIABLE: &str = "Lactate";
/// Hours from the first labeled hour until the ramp plateaus.
pub const RAMP_HOURS: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub septic_fraction: f64,
    pub min_hours: usize,
    pub max_hours: usize,
    /// Per-hour chance the planted variable is measured.
    pub planted_obs_prob: f64,
    /// Rise per hour of the ramp.
    pub ramp_step: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_patients: 200,
            septic_fraction: 0.3,
            min_hours: 20,
            max_hours: 60,
            planted_obs_prob: 0.8,
            ramp_step: 1.0,
            seed: 0,
        }
    }
}

fn var(name: &str) -> usize {
    NUMERIC_NAMES
        .iter()
        .position(|n| *n == name)
        .expect("known variable name")
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// (name, population mean, between-patient sd, within-patient sd)
const VITALS: [(&str, f64, f64, f64); 6] = [
    ("HR", 80.0, 10.0, 4.0),
    ("O2Sat", 97.0, 1.5, 1.0),
    ("Temp", 37.0, 0.4, 0.2),
    ("SBP", 120.0, 12.0, 6.0),
    ("MAP", 80.0, 8.0, 4.0),
    ("Resp", 18.0, 2.5, 1.5),
];

pub fn generate(config: &SynthConfig) -> Result<Vec<PatientRecord>> {
    if config.n_patients == 0 || config.min_hours == 0 || config.min_hours > config.max_hours {
        return Err(Error::Config("synthetic cohort needs patients and a valid stay range".into()));
    }
    if !(0.0..=1.0).contains(&config.septic_fraction) || !(0.0..=1.0).contains(&config.planted_obs_prob) {
        return Err(Error::Config("fractions must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let n_septic = (config.septic_fraction * config.n_patients as f64).round() as usize;
    let mut septic: Vec<bool> = (0..config.n_patients).map(|i| i < n_septic).collect();
    septic.shuffle(&mut rng);

    let planted = var(PLANTED_VARIABLE);
    let vitals: Vec<(usize, f64, f64, f64)> = VITALS.iter().map(|&(n, m, b, w)| (var(n), m, b, w)).collect();
    let fixed = [var("Age"), var("HospAdmTime"), var("ICULOS")];

    let mut records = Vec::with_capacity(config.n_patients);
    for (i, &is_septic) in septic.iter().enumerate() {
        // First labeled hour, and a stay long enough to cover the scored window after it.
        let (first_label, n_hours) = if is_septic {
            let h0 = rng.random_range(4..=config.max_hours.saturating_sub(16).max(4));
            (Some(h0), h0 + rng.random_range(10..=16))
        } else {
            (None, rng.random_range(config.min_hours..=config.max_hours))
        };
        let age = round2(rng.random_range(20.0..90.0));
        let adm = round2(-rng.random_range(0.0..50.0));
        let gender = rng.random_range(0..2u8);
        let unit1 = (!rng.random_bool(0.3)).then(|| rng.random_range(0..2u8));
        let planted_base = 1.5 + 0.6 * std_normal.sample(&mut rng);
        let vital_base: Vec<f64> = vitals
            .iter()
            .map(|&(_, m, b, _)| m + b * std_normal.sample(&mut rng))
            .collect();
        let lab_base: Vec<f64> = (0..N_NUMERIC)
            .map(|_| 10.0 + 2.0 * std_normal.sample(&mut rng))
            .collect();

        let mut rows = Vec::with_capacity(n_hours);
        for t in 0..n_hours {
            let mut row = HourRow::empty();
            row.label = first_label.is_some_and(|h0| t >= h0);
            for (k, &(j, _, _, within)) in vitals.iter().enumerate() {
                if rng.random_bool(0.9) {
                    row.numeric[j] = Some(round2(vital_base[k] + within * std_normal.sample(&mut rng)));
                }
            }
            for j in 0..N_NUMERIC {
                let is_vital = vitals.iter().any(|v| v.0 == j);
                if j == planted || is_vital || fixed.contains(&j) {
                    continue;
                }
                if rng.random_bool(0.05) {
                    row.numeric[j] = Some(round2(lab_base[j] + std_normal.sample(&mut rng)));
                }
            }
            if rng.random_bool(config.planted_obs_prob) {
                let rise = first_label.map_or(0.0, |h0| {
                    if t >= h0 {
                        config.ramp_step * (t - h0 + 1).min(RAMP_HOURS) as f64
                    } else {
                        0.0
                    }
                });
                row.numeric[planted] = Some(round2(planted_base + rise + 0.1 * std_normal.sample(&mut rng)));
            }
            row.numeric[fixed[0]] = Some(age);
            row.numeric[fixed[1]] = Some(adm);
            row.numeric[fixed[2]] = Some((t + 1) as f64);
            row.categorical = [Some(gender), unit1, unit1.map(|u| 1 - u)];
            rows.push(row);
        }
        records.push(PatientRecord {
            patient_id: format!("s{i:05}"),
            rows,
        });
    }
    Ok(records)
}
