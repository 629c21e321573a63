//! Evaluation metrics: AUROC, average precision, the challenge's normalized
//! utility score, threshold selection and fold ensembling.

use std::cmp::Ordering;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::error::{Error, Result};

fn check_lengths(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::contract(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::NonFinite(format!("score {s}")));
    }
    Ok(())
}

/// Indices sorted by descending score.
fn order_desc(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    idx
}

/// Probability that a random positive outscores a random negative, ties counting half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let n_pos = labels.iter().filter(|l| **l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Data("AUROC needs both classes".into()));
    }
    // Walk tie groups from the highest score down, counting negatives ranked below.
    let order = order_desc(scores);
    let mut wins = 0.0;
    let mut neg_above = 0usize;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0usize, 0usize);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        let below = n_neg - neg_above - neg;
        wins += pos as f64 * below as f64 + 0.5 * pos as f64 * neg as f64;
        neg_above += neg;
        i = j;
    }
    Ok(wins / (n_pos as f64 * n_neg as f64))
}

/// Average precision: sum over thresholds of (recall gained) x (precision there).
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let n_pos = labels.iter().filter(|l| **l).count();
    if n_pos == 0 {
        return Err(Error::Data("AUPRC needs at least one positive".into()));
    }
    let order = order_desc(scores);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut gained = 0usize;
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                gained += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        tp += gained;
        if gained > 0 {
            ap += (gained as f64 / n_pos as f64) * (tp as f64 / (tp + fp) as f64);
        }
        i = j;
    }
    Ok(ap)
}

/// Rewards and timing of the challenge utility function, in hours relative to onset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilityConstants {
    pub dt_early: f64,
    pub dt_optimal: f64,
    pub dt_late: f64,
    pub max_u_tp: f64,
    pub min_u_fn: f64,
    pub u_fp: f64,
    pub u_tn: f64,
}

impl Default for UtilityConstants {
    fn default() -> Self {
        UtilityConstants {
            dt_early: -12.0,
            dt_optimal: -6.0,
            dt_late: 3.0,
            max_u_tp: 1.0,
            min_u_fn: -2.0,
            u_fp: -0.05,
            u_tn: 0.0,
        }
    }
}

/// Per-patient timing resolved from the labels.
#[derive(Debug, Clone, Copy)]
struct Onset {
    /// `None` for a patient who never has a positive label.
    t_sepsis: Option<f64>,
}

impl Onset {
    fn from_labels(labels: &[bool], c: &UtilityConstants) -> Self {
        Onset {
            t_sepsis: labels.iter().position(|l| *l).map(|i| i as f64 - c.dt_optimal),
        }
    }
}

fn hour_utility(t: usize, predicted: bool, onset: Onset, c: &UtilityConstants) -> f64 {
    let t = t as f64;
    let Some(ts) = onset.t_sepsis else {
        return if predicted { c.u_fp } else { c.u_tn };
    };
    if t > ts + c.dt_late {
        return 0.0;
    }
    let m1 = c.max_u_tp / (c.dt_optimal - c.dt_early);
    let b1 = -m1 * c.dt_early;
    let m2 = -c.max_u_tp / (c.dt_late - c.dt_optimal);
    let b2 = -m2 * c.dt_late;
    let m3 = c.min_u_fn / (c.dt_late - c.dt_optimal);
    let b3 = -m3 * c.dt_optimal;
    let rel = t - ts;
    match (predicted, t <= ts + c.dt_optimal) {
        (true, true) => (m1 * rel + b1).max(c.u_fp),
        (true, false) => m2 * rel + b2,
        (false, true) => 0.0,
        (false, false) => m3 * rel + b3,
    }
}

/// Total utility of one patient's hourly binary predictions.
pub fn patient_utility(labels: &[bool], predictions: &[bool], c: &UtilityConstants) -> Result<f64> {
    if labels.len() != predictions.len() {
        return Err(Error::contract(format!(
            "{} labels but {} predictions",
            labels.len(),
            predictions.len()
        )));
    }
    let onset = Onset::from_labels(labels, c);
    Ok(predictions
        .iter()
        .enumerate()
        .map(|(t, &p)| hour_utility(t, p, onset, c))
        .sum())
}

/// The best-scoring policy: positive on `[t_sepsis + dt_early, t_sepsis + dt_late]`
/// for a septic patient, all negative otherwise.
pub fn optimal_predictions(labels: &[bool], c: &UtilityConstants) -> Vec<bool> {
    let onset = Onset::from_labels(labels, c);
    (0..labels.len())
        .map(|t| match onset.t_sepsis {
            Some(ts) => {
                let t = t as f64;
                t >= ts + c.dt_early && t <= ts + c.dt_late
            }
            None => false,
        })
        .collect()
}

/// Hourly predictions for one patient.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientPrediction {
    pub patient_id: String,
    pub probs: Vec<f64>,
    pub predictions: Vec<bool>,
    pub labels: Vec<bool>,
}

impl PatientPrediction {
    /// Thresholds `probs` at `theta` (`prob >= theta` predicts sepsis).
    pub fn from_probs(patient_id: impl Into<String>, probs: Vec<f64>, labels: Vec<bool>, theta: f64) -> Result<Self> {
        if probs.len() != labels.len() {
            return Err(Error::contract("probabilities and labels differ in length"));
        }
        let predictions = probs.iter().map(|&p| p >= theta).collect();
        Ok(PatientPrediction {
            patient_id: patient_id.into(),
            probs,
            predictions,
            labels,
        })
    }

    pub fn rethreshold(&mut self, theta: f64) {
        self.predictions = self.probs.iter().map(|&p| p >= theta).collect();
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct CohortTotals {
    observed: f64,
    optimal: f64,
    inaction: f64,
}

fn cohort_totals<'a, I>(cohort: I, c: &UtilityConstants) -> Result<CohortTotals>
where
    I: IntoIterator<Item = (&'a [bool], &'a [bool])>,
{
    let mut totals = CohortTotals {
        observed: 0.0,
        optimal: 0.0,
        inaction: 0.0,
    };
    let mut any = false;
    for (labels, preds) in cohort {
        any = true;
        totals.observed += patient_utility(labels, preds, c)?;
        totals.optimal += patient_utility(labels, &optimal_predictions(labels, c), c)?;
        totals.inaction += patient_utility(labels, &vec![false; labels.len()], c)?;
    }
    if !any {
        return Err(Error::Data("empty cohort".into()));
    }
    Ok(totals)
}

fn normalize(t: CohortTotals) -> Result<f64> {
    if t.optimal == t.inaction {
        return Err(Error::Data(
            "degenerate cohort: optimal and inaction utilities coincide".into(),
        ));
    }
    Ok((t.observed - t.inaction) / (t.optimal - t.inaction))
}

/// `(U - U_inaction) / (U_optimal - U_inaction)` summed over patients.
pub fn utility_normalized(cohort: &[PatientPrediction], c: &UtilityConstants) -> Result<f64> {
    normalize(cohort_totals(
        cohort.iter().map(|p| (p.labels.as_slice(), p.predictions.as_slice())),
        c,
    )?)
}

/// Same as [`utility_normalized`] for parallel label / prediction lists.
pub fn utility_normalized_raw(labels: &[Vec<bool>], predictions: &[Vec<bool>], c: &UtilityConstants) -> Result<f64> {
    if labels.len() != predictions.len() {
        return Err(Error::contract("cohort label and prediction counts differ"));
    }
    normalize(cohort_totals(
        labels.iter().zip(predictions).map(|(l, p)| (l.as_slice(), p.as_slice())),
        c,
    )?)
}

/// Threshold chosen on a validation cohort and its utility.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdChoice {
    pub theta: f64,
    pub utility: f64,
}

/// Sweeps every distinct probability as a threshold and keeps the one with
/// the highest normalized utility; ties go to the lowest threshold.
///
/// Utility is a sum over hours, so lowering the threshold past a probability
/// adds `u(hour, 1) - u(hour, 0)` for each hour carrying it. The sweep is one
/// pass over the hours sorted by probability.
pub fn select_threshold(cohort: &[PatientPrediction], c: &UtilityConstants) -> Result<ThresholdChoice> {
    let labels: Vec<(&[bool], &[bool])> = cohort
        .iter()
        .map(|p| (p.labels.as_slice(), p.labels.as_slice()))
        .collect();
    let base = cohort_totals(labels, c)?;
    let span = base.optimal - base.inaction;
    if span == 0.0 {
        return normalize(base).map(|_| unreachable!());
    }
    let mut hours: Vec<(f64, f64)> = Vec::new();
    for p in cohort {
        if p.probs.len() != p.labels.len() {
            return Err(Error::contract(format!("patient {}: probs and labels differ", p.patient_id)));
        }
        let onset = Onset::from_labels(&p.labels, c);
        for (t, &prob) in p.probs.iter().enumerate() {
            if prob.is_nan() {
                return Err(Error::NonFinite(format!("probability for {}", p.patient_id)));
            }
            hours.push((prob, hour_utility(t, true, onset, c) - hour_utility(t, false, onset, c)));
        }
    }
    if hours.is_empty() {
        return Err(Error::Data("validation cohort has no hours".into()));
    }
    hours.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));

    const TIE: f64 = 1e-12;
    let mut gain = 0.0;
    let mut best: Option<ThresholdChoice> = None;
    let mut i = 0;
    while i < hours.len() {
        let theta = hours[i].0;
        while i < hours.len() && hours[i].0 == theta {
            gain += hours[i].1;
            i += 1;
        }
        let utility = gain / span;
        match best {
            Some(b) if utility < b.utility - TIE => {}
            _ => best = Some(ThresholdChoice { theta, utility }),
        }
    }
    let mut choice = best.expect("at least one hour");
    // Report the utility from the direct definition rather than the running sum.
    let preds: Vec<Vec<bool>> = cohort
        .iter()
        .map(|p| p.probs.iter().map(|&q| q >= choice.theta).collect())
        .collect();
    let labels: Vec<Vec<bool>> = cohort.iter().map(|p| p.labels.clone()).collect();
    choice.utility = utility_normalized_raw(&labels, &preds, c)?;
    Ok(choice)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnsembleMode {
    Average,
    MajorVote,
    AnyVote,
}

impl EnsembleMode {
    pub const ALL: [EnsembleMode; 3] = [EnsembleMode::Average, EnsembleMode::MajorVote, EnsembleMode::AnyVote];

    pub fn as_str(self) -> &'static str {
        match self {
            EnsembleMode::Average => "average",
            EnsembleMode::MajorVote => "major_vote",
            EnsembleMode::AnyVote => "any_vote",
        }
    }
}

impl fmt::Display for EnsembleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnsembleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" => Ok(EnsembleMode::Average),
            "major_vote" => Ok(EnsembleMode::MajorVote),
            "any_vote" => Ok(EnsembleMode::AnyVote),
            other => Err(Error::contract(format!("unknown ensemble mode `{other}`"))),
        }
    }
}

/// Combines per-fold hourly probabilities into binary predictions.
pub fn ensemble(fold_probs: &[Vec<f64>], mode: EnsembleMode, theta: f64) -> Result<Vec<bool>> {
    let Some(first) = fold_probs.first() else {
        return Err(Error::contract("ensemble of zero folds"));
    };
    let n = first.len();
    if fold_probs.iter().any(|f| f.len() != n) {
        return Err(Error::contract("fold predictions differ in length"));
    }
    let k = fold_probs.len();
    Ok((0..n)
        .map(|t| match mode {
            EnsembleMode::Average => fold_probs.iter().map(|f| f[t]).sum::<f64>() / k as f64 >= theta,
            EnsembleMode::MajorVote => 2 * fold_probs.iter().filter(|f| f[t] >= theta).count() > k,
            EnsembleMode::AnyVote => fold_probs.iter().any(|f| f[t] >= theta),
        })
        .collect())
}

/// Mean of per-fold probabilities, hour by hour.
pub fn average_probs(fold_probs: &[Vec<f64>]) -> Vec<f64> {
    let k = fold_probs.len() as f64;
    let n = fold_probs.first().map_or(0, Vec::len);
    (0..n).map(|t| fold_probs.iter().map(|f| f[t]).sum::<f64>() / k).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldScore {
    pub fold: usize,
    pub auroc: f64,
    pub auprc: f64,
    pub utility: f64,
    pub threshold: f64,
}

/// Scores plus the resolved configuration that produced them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreReport {
    pub auroc: f64,
    pub auprc: f64,
    pub utility: f64,
    /// `None` when the predictions were thresholded elsewhere.
    pub threshold: Option<f64>,
    pub folds: Vec<FoldScore>,
    pub ensemble: Vec<(EnsembleMode, f64)>,
    pub config: Vec<(String, String)>,
    pub extra: Vec<(String, String)>,
}

impl ScoreReport {
    /// Pooled AUROC / AUPRC over every hour and the cohort utility at `theta`.
    pub fn evaluate(cohort: &[PatientPrediction], theta: Option<f64>, c: &UtilityConstants) -> Result<Self> {
        let scores: Vec<f64> = cohort.iter().flat_map(|p| p.probs.iter().copied()).collect();
        let labels: Vec<bool> = cohort.iter().flat_map(|p| p.labels.iter().copied()).collect();
        Ok(ScoreReport {
            auroc: auroc(&scores, &labels)?,
            auprc: auprc(&scores, &labels)?,
            utility: utility_normalized(cohort, c)?,
            threshold: theta,
            ..ScoreReport::default()
        })
    }

    /// Machine-readable `key=value` lines.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "auroc={}", self.auroc).unwrap();
        writeln!(out, "auprc={}", self.auprc).unwrap();
        writeln!(out, "utility={}", self.utility).unwrap();
        if let Some(t) = self.threshold {
            writeln!(out, "threshold={t}").unwrap();
        }
        for f in &self.folds {
            writeln!(out, "fold{}.auroc={}", f.fold, f.auroc).unwrap();
            writeln!(out, "fold{}.auprc={}", f.fold, f.auprc).unwrap();
            writeln!(out, "fold{}.utility={}", f.fold, f.utility).unwrap();
            writeln!(out, "fold{}.threshold={}", f.fold, f.threshold).unwrap();
        }
        for (mode, u) in &self.ensemble {
            writeln!(out, "ensemble.{mode}.utility={u}").unwrap();
        }
        for (k, v) in &self.extra {
            writeln!(out, "{k}={v}").unwrap();
        }
        for (k, v) in &self.config {
            writeln!(out, "config.{k}={v}").unwrap();
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "AUROC              {:.4}", self.auroc).unwrap();
        writeln!(out, "AUPRC              {:.4}", self.auprc).unwrap();
        writeln!(out, "Normalized utility {:.4}", self.utility).unwrap();
        if let Some(t) = self.threshold {
            writeln!(out, "Threshold          {t:.6}").unwrap();
        }
        if !self.folds.is_empty() {
            writeln!(out, "\nfold  AUROC   AUPRC   utility threshold").unwrap();
            for f in &self.folds {
                writeln!(
                    out,
                    "{:<5} {:.4}  {:.4}  {:.4}  {:.6}",
                    f.fold, f.auroc, f.auprc, f.utility, f.threshold
                )
                .unwrap();
            }
        }
        if !self.ensemble.is_empty() {
            let parts: Vec<String> = self.ensemble.iter().map(|(m, u)| format!("{m} {u:.4}")).collect();
            writeln!(out, "\nEnsemble utility: {}", parts.join(" / ")).unwrap();
        }
        if !self.extra.is_empty() {
            writeln!(out).unwrap();
            for (k, v) in &self.extra {
                writeln!(out, "{k}: {v}").unwrap();
            }
        }
        if !self.config.is_empty() {
            writeln!(out, "\nConfiguration:").unwrap();
            for (k, v) in &self.config {
                writeln!(out, "  {k} = {v}").unwrap();
            }
        }
        out
    }
}
