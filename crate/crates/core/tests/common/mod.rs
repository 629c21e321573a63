//! Independent reference implementations used to cross-check the library.
//! None of these call into `hea_core::metrics`.

#![allow(dead_code)]

use rand::Rng;

/// Challenge utility for one patient, written out case by case.
pub fn utility_oracle(labels: &[bool], preds: &[bool]) -> f64 {
    let (dt_early, dt_optimal, dt_late) = (-12.0, -6.0, 3.0);
    let (max_u_tp, min_u_fn, u_fp, u_tn) = (1.0, -2.0, -0.05, 0.0);
    let n = labels.len();
    let mut first = None;
    for t in 0..n {
        if labels[t] {
            first = Some(t);
            break;
        }
    }
    let mut total = 0.0;
    for t in 0..n {
        let tf = t as f64;
        let u = match first {
            None => {
                if preds[t] {
                    u_fp
                } else {
                    u_tn
                }
            }
            Some(f) => {
                let ts = f as f64 - dt_optimal;
                if tf > ts + dt_late {
                    0.0
                } else if tf <= ts + dt_optimal {
                    if preds[t] {
                        // rises linearly from 0 at dt_early to max at dt_optimal
                        let r = max_u_tp * (tf - ts - dt_early) / (dt_optimal - dt_early);
                        if r < u_fp {
                            u_fp
                        } else {
                            r
                        }
                    } else {
                        0.0
                    }
                } else if preds[t] {
                    // falls linearly from max at dt_optimal to 0 at dt_late
                    max_u_tp * (ts + dt_late - tf) / (dt_late - dt_optimal)
                } else {
                    min_u_fn * (tf - ts - dt_optimal) / (dt_late - dt_optimal)
                }
            }
        };
        total += u;
    }
    total
}

/// Normalized cohort utility from the oracle above.
pub fn normalized_oracle(labels: &[Vec<bool>], preds: &[Vec<bool>]) -> f64 {
    let (mut obs, mut best, mut none) = (0.0, 0.0, 0.0);
    for (l, p) in labels.iter().zip(preds) {
        let n = l.len();
        let optimal: Vec<bool> = match l.iter().position(|x| *x) {
            // t_sepsis = first + 6; reward window [t_sepsis - 12, t_sepsis + 3]
            Some(f) => (0..n).map(|t| t + 6 >= f && t <= f + 9).collect(),
            None => vec![false; n],
        };
        obs += utility_oracle(l, p);
        best += utility_oracle(l, &optimal);
        none += utility_oracle(l, &vec![false; n]);
    }
    (obs - none) / (best - none)
}

/// AUROC by counting every positive/negative pair.
pub fn auroc_pairs(scores: &[f64], labels: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..scores.len() {
        if !labels[i] {
            continue;
        }
        for j in 0..scores.len() {
            if labels[j] {
                continue;
            }
            den += 1.0;
            if scores[i] > scores[j] {
                num += 1.0;
            } else if scores[i] == scores[j] {
                num += 0.5;
            }
        }
    }
    num / den
}

/// Average precision by sweeping each distinct score as a threshold.
pub fn auprc_sweep(scores: &[f64], labels: &[bool]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let n_pos = labels.iter().filter(|l| **l).count() as f64;
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for th in thresholds {
        let tp = (0..scores.len()).filter(|&i| scores[i] >= th && labels[i]).count() as f64;
        let fp = (0..scores.len()).filter(|&i| scores[i] >= th && !labels[i]).count() as f64;
        let recall = tp / n_pos;
        ap += (recall - prev_recall) * (tp / (tp + fp));
        prev_recall = recall;
    }
    ap
}

/// Random cohort: each patient is septic with probability 1/2, onset anywhere in the stay.
pub fn random_cohort<R: Rng>(rng: &mut R, max_patients: usize, max_hours: usize) -> (Vec<Vec<bool>>, Vec<Vec<bool>>) {
    let n = rng.random_range(1..=max_patients);
    let mut labels = Vec::new();
    let mut preds = Vec::new();
    for i in 0..n {
        let hours = rng.random_range(1..=max_hours);
        // Guarantee one septic patient so normalization is defined.
        let septic = i == 0 || rng.random_bool(0.5);
        let first = rng.random_range(0..hours);
        labels.push((0..hours).map(|t| septic && t >= first).collect());
        let p = rng.random_range(0.0..1.0);
        preds.push((0..hours).map(|_| rng.random_bool(p)).collect());
    }
    (labels, preds)
}

/// Random scores with deliberate ties, at least one of each class.
pub fn random_scored<R: Rng>(rng: &mut R, max_n: usize) -> (Vec<f64>, Vec<bool>) {
    let n = rng.random_range(2..=max_n);
    let levels = rng.random_range(1..=n);
    let mut scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
    let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
    labels[0] = true;
    labels[1] = false;
    if rng.random_bool(0.5) {
        for s in &mut scores {
            *s += rng.random_range(0.0..1e-3);
        }
    }
    (scores, labels)
}
