//! Gradient-check suite: every tape primitive in isolation, then whole models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::data::build_windows;
use super::synth::{generate, SynthConfig};
use crate::error::Result;
use crate::numcore::{grad_check, init_uniform, GradCheckReport, ParamStore, Tape, Tensor, Var};
use crate::preprocess::{fit_normalizer, WindowSample};
use crate::seq::{Architecture, Model, ModelKind};

pub const PRIMITIVE_TOLERANCE: f64 = 1e-6;
pub const MODEL_TOLERANCE: f64 = 1e-4;
const PRIMITIVE_EPS: f64 = 1e-5;
// Whole-model losses sum thousands of terms, so a smaller step lets roundoff
// swamp components whose gradient is near the 1e-8 denominator floor.
const MODEL_EPS: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub n_checked: usize,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }

    fn from_report(name: impl Into<String>, r: &GradCheckReport, tolerance: f64) -> Self {
        SuiteEntry {
            name: name.into(),
            max_rel_error: r.max_rel_error,
            tolerance,
            n_checked: r.n_checked,
        }
    }
}

type Op = fn(&mut Tape, Var, Var) -> Result<Var>;
type Shape = (usize, usize);

/// Each primitive as a function of two inputs, with the input shapes it needs.
fn primitives() -> Vec<(&'static str, Shape, Shape, Op)> {
    vec![
        ("matmul", (3, 4), (4, 2), |t, a, b| t.matmul(a, b)),
        ("transpose", (3, 4), (1, 1), |t, a, _| Ok(t.transpose(a))),
        ("add", (3, 4), (3, 4), |t, a, b| t.add(a, b)),
        ("sub", (3, 4), (3, 4), |t, a, b| t.sub(a, b)),
        ("add_row", (3, 4), (1, 4), |t, a, b| t.add_row(a, b)),
        ("mul", (3, 4), (3, 4), |t, a, b| t.mul(a, b)),
        ("scale", (3, 4), (1, 1), |t, a, _| Ok(t.scale(a, -1.7))),
        ("row_scale", (3, 4), (3, 1), |t, a, b| t.row_scale(a, b)),
        ("concat_rows", (2, 3), (4, 3), |t, a, b| t.concat(&[a, b], 0)),
        ("concat_cols", (3, 2), (3, 4), |t, a, b| t.concat(&[a, b], 1)),
        ("slice_rows", (5, 3), (1, 1), |t, a, _| t.slice_rows(a, 1, 3)),
        ("slice_cols", (3, 5), (1, 1), |t, a, _| t.slice_cols(a, 2, 2)),
        ("reshape", (3, 4), (1, 1), |t, a, _| t.reshape(a, 2, 6)),
        ("lookup", (5, 3), (1, 1), |t, a, _| t.lookup(a, &[4, 0, 4, 2])),
        ("softmax_rows", (3, 5), (1, 1), |t, a, _| t.softmax_rows(a)),
        ("masked_softmax", (2, 4), (1, 1), |t, a, _| {
            let m = t.mask_fill(a, &[false, true, false, true, true, false, false, false], f64::NEG_INFINITY)?;
            t.softmax_rows(m)
        }),
        ("sigmoid", (3, 4), (1, 1), |t, a, _| Ok(t.sigmoid(a))),
        ("tanh", (3, 4), (1, 1), |t, a, _| Ok(t.tanh(a))),
        ("sum", (3, 4), (1, 1), |t, a, _| Ok(t.sum(a))),
        ("batched_vecmat", (3, 4), (12, 2), |t, a, b| t.batched_vecmat(a, b)),
        ("bce_mean", (4, 1), (1, 1), |t, a, _| {
            let p = t.sigmoid(a);
            t.bce_mean(p, &[true, false, false, true], 1e-7)
        }),
    ]
}

/// Checks each primitive over `trials` random draws; reports the worst per primitive.
pub fn primitive_checks(seed: u64, trials: usize) -> Result<Vec<SuiteEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (name, sa, sb, op) in primitives() {
        let mut worst = SuiteEntry {
            name: format!("primitive/{name}"),
            max_rel_error: 0.0,
            tolerance: PRIMITIVE_TOLERANCE,
            n_checked: 0,
        };
        for _ in 0..trials {
            let mut store = ParamStore::new();
            let a = store.register("a", init_uniform(&mut rng, sa.0, sa.1, 1.0))?;
            let b = store.register("b", init_uniform(&mut rng, sb.0, sb.1, 1.0))?;
            // Probe shape is only known after a forward pass.
            let mut probe = Tape::new();
            let (va, vb) = (probe.param(&store, a), probe.param(&store, b));
            let y = op(&mut probe, va, vb)?;
            let [rows, cols] = probe.value(y).shape();
            let weights = Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())?;
            let r = grad_check(&mut store, PRIMITIVE_EPS, |t, s| {
                let (va, vb) = (t.param(s, a), t.param(s, b));
                let y = op(t, va, vb)?;
                let w = t.constant(weights.clone());
                let yw = t.mul(y, w)?;
                Ok(t.sum(yw))
            })?;
            worst.n_checked += r.n_checked;
            worst.max_rel_error = worst.max_rel_error.max(r.max_rel_error);
        }
        out.push(worst);
    }
    Ok(out)
}

/// `n` normalized windows of length `len` from a small synthetic cohort,
/// alternating positive and negative labels where possible.
pub fn sample_windows(seed: u64, n: usize, len: usize) -> Result<Vec<WindowSample>> {
    let records = generate(&SynthConfig {
        n_patients: 12,
        septic_fraction: 0.5,
        seed,
        ..SynthConfig::default()
    })?;
    let windows = build_windows(&records, &fit_normalizer(&records), len)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (pos, neg): (Vec<_>, Vec<_>) = windows.into_iter().partition(|w| w.label);
    Ok((0..n)
        .map(|i| {
            let pool = if i % 2 == 0 && !pos.is_empty() { &pos } else { &neg };
            pool[rng.random_range(0..pool.len())].clone()
        })
        .collect())
}

/// End-to-end check of the training loss of a freshly initialized model on one window.
pub fn model_check(arch: Architecture, seed: u64, window: &WindowSample) -> Result<GradCheckReport> {
    let model = Model::new(arch, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let mut store = model.store.clone();
    grad_check(&mut store, MODEL_EPS, |t, s| model.loss_with(t, s, &[window]))
}

/// The full suite: primitives, then HEA-LSTM with 1 and 8 heads on
/// `n_windows` windows, then one window through each baseline.
pub fn run_suite(seed: u64, n_windows: usize) -> Result<Vec<SuiteEntry>> {
    let mut out = primitive_checks(seed, 20)?;
    let windows = sample_windows(seed, n_windows, 24)?;
    for heads in [1, 8] {
        let arch = Architecture {
            kind: ModelKind::HeaLstm,
            window_len: 24,
            d: 16,
            heads,
            hidden: 8,
            mlp_hidden: [16, 8],
        };
        for (i, w) in windows.iter().enumerate() {
            let r = model_check(arch, seed + i as u64, w)?;
            out.push(SuiteEntry::from_report(format!("model/hea_lstm/heads{heads}/window{i}"), &r, MODEL_TOLERANCE));
        }
    }
    for kind in [ModelKind::Mlp, ModelKind::DenseLstm] {
        let arch = Architecture {
            kind,
            window_len: 24,
            d: 16,
            heads: 1,
            hidden: 8,
            mlp_hidden: [16, 8],
        };
        let r = model_check(arch, seed, &windows[0])?;
        out.push(SuiteEntry::from_report(format!("model/{kind}"), &r, MODEL_TOLERANCE));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitives_pass() {
        for e in primitive_checks(5, 5).unwrap() {
            assert!(e.passed(), "{e:?}");
            assert!(e.n_checked > 0);
        }
    }

    #[test]
    fn sample_windows_alternate_labels() {
        let ws = sample_windows(2, 6, 24).unwrap();
        assert_eq!(ws.len(), 6);
        assert!(ws[0].label && !ws[1].label);
        assert!(ws.iter().all(|w| w.len() == 24));
    }
}
