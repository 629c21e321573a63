//! Temporal models over per-hour representations.
//!
//! The main model runs a single-layer bidirectional LSTM over the aggregated
//! hours, sums the final hidden state of each direction and maps it to a
//! probability with a dense layer and a sigmoid. Two baselines share the same
//! interface: an MLP over the flattened raw window, and the same BiLSTM fed by
//! a per-hour dense embedding of the raw 40-vector.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::hea::{encode, HeaParams, StepBatch};
use crate::numcore::{init_uniform, sigmoid, ParamId, ParamStore, Tape, Tensor, Var};
use crate::preprocess::WindowSample;
use crate::psv::N_VARIABLES;

pub use crate::numcore::bce as bce_loss;

/// Probability clamp used by the training loss.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmParams {
    /// `input x 4H`, gate blocks ordered input, forget, candidate, output.
    pub w_x: ParamId,
    /// `H x 4H`.
    pub w_h: ParamId,
    /// `1 x 4H`.
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmParams {
    fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        prefix: &str,
        input: usize,
        hidden: usize,
    ) -> Result<Self> {
        let bound = 1.0 / (hidden as f64).sqrt();
        Ok(LstmParams {
            w_x: store.register(format!("{prefix}.w_x"), init_uniform(rng, input, 4 * hidden, bound))?,
            w_h: store.register(format!("{prefix}.w_h"), init_uniform(rng, hidden, 4 * hidden, bound))?,
            b: store.register(format!("{prefix}.b"), init_uniform(rng, 1, 4 * hidden, bound))?,
            input,
            hidden,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BiLstmParams {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
}

impl BiLstmParams {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        input: usize,
        hidden: usize,
    ) -> Result<Self> {
        if input == 0 || hidden == 0 {
            return Err(Error::contract("LSTM sizes must be positive"));
        }
        Ok(BiLstmParams {
            fwd: LstmParams::register(store, rng, "lstm.fwd", input, hidden)?,
            bwd: LstmParams::register(store, rng, "lstm.bwd", input, hidden)?,
        })
    }

    pub fn hidden(&self) -> usize {
        self.fwd.hidden
    }
}

/// Fully connected layer `x W + b` with `W: in x out`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenseLayer {
    pub w: ParamId,
    pub b: ParamId,
}

impl DenseLayer {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        prefix: &str,
        input: usize,
        output: usize,
    ) -> Result<Self> {
        let bound = 1.0 / (input as f64).sqrt();
        Ok(DenseLayer {
            w: store.register(format!("{prefix}.w"), init_uniform(rng, input, output, bound))?,
            b: store.register(format!("{prefix}.b"), init_uniform(rng, 1, output, bound))?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let z = tape.matmul(x, w)?;
        tape.add_row(z, b)
    }
}

/// One LSTM step on plain vectors; returns `(h, c)`.
pub fn lstm_cell_step(
    store: &ParamStore,
    p: &LstmParams,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let hd = p.hidden;
    if x.len() != p.input || h_prev.len() != hd || c_prev.len() != hd {
        return Err(Error::contract("lstm_cell_step: input or state size mismatch"));
    }
    let w_x = store.value(p.w_x);
    let w_h = store.value(p.w_h);
    let mut z = store.value(p.b).data().to_vec();
    for (k, &xv) in x.iter().enumerate() {
        for (zv, w) in z.iter_mut().zip(w_x.row(k)) {
            *zv += xv * w;
        }
    }
    for (k, &hv) in h_prev.iter().enumerate() {
        for (zv, w) in z.iter_mut().zip(w_h.row(k)) {
            *zv += hv * w;
        }
    }
    let mut h = vec![0.0; hd];
    let mut c = vec![0.0; hd];
    for u in 0..hd {
        let i = sigmoid(z[u]);
        let f = sigmoid(z[hd + u]);
        let g = z[2 * hd + u].tanh();
        let o = sigmoid(z[3 * hd + u]);
        c[u] = f * c_prev[u] + i * g;
        h[u] = o * c[u].tanh();
    }
    Ok((h, c))
}

/// `h_fwd(last) + h_bwd(first)` over the rows of `seq` (one row per hour).
pub fn bilstm_readout(store: &ParamStore, p: &BiLstmParams, seq: &Tensor) -> Result<Vec<f64>> {
    if seq.rows() == 0 {
        return Err(Error::contract("empty sequence"));
    }
    let run = |cell: &LstmParams, order: &mut dyn Iterator<Item = usize>| -> Result<Vec<f64>> {
        let mut h = vec![0.0; cell.hidden];
        let mut c = vec![0.0; cell.hidden];
        for t in order {
            (h, c) = lstm_cell_step(store, cell, seq.row(t), &h, &c)?;
        }
        Ok(h)
    };
    let f = run(&p.fwd, &mut (0..seq.rows()))?;
    let b = run(&p.bwd, &mut (0..seq.rows()).rev())?;
    Ok(f.iter().zip(&b).map(|(x, y)| x + y).collect())
}

fn lstm_pass(
    tape: &mut Tape,
    store: &ParamStore,
    p: &LstmParams,
    seq: Var,
    len: usize,
    batch: usize,
    reverse: bool,
) -> Result<Var> {
    let hd = p.hidden;
    let w_x = tape.param(store, p.w_x);
    let w_h = tape.param(store, p.w_h);
    let b = tape.param(store, p.b);
    // Input projections for every hour in one product; only h feeds back.
    let zx_all = tape.matmul(seq, w_x)?;
    let zx_all = tape.add_row(zx_all, b)?;
    let mut h = tape.constant(Tensor::zeros(batch, hd));
    let mut c = tape.constant(Tensor::zeros(batch, hd));
    for k in 0..len {
        let t = if reverse { len - 1 - k } else { k };
        let zx = tape.slice_rows(zx_all, t * batch, batch)?;
        let zh = tape.matmul(h, w_h)?;
        let z = tape.add(zx, zh)?;
        let zi = tape.slice_cols(z, 0, hd)?;
        let zf = tape.slice_cols(z, hd, hd)?;
        let zg = tape.slice_cols(z, 2 * hd, hd)?;
        let zo = tape.slice_cols(z, 3 * hd, hd)?;
        let i = tape.sigmoid(zi);
        let f = tape.sigmoid(zf);
        let g = tape.tanh(zg);
        let o = tape.sigmoid(zo);
        let keep = tape.mul(f, c)?;
        let write = tape.mul(i, g)?;
        c = tape.add(keep, write)?;
        let squashed = tape.tanh(c);
        h = tape.mul(o, squashed)?;
    }
    Ok(h)
}

/// Records the BiLSTM over a time-major sequence (`len * batch x input`,
/// row `t * batch + b` is hour `t` of sequence `b`); returns `batch x H`.
pub fn bilstm_tape(
    tape: &mut Tape,
    store: &ParamStore,
    p: &BiLstmParams,
    seq: Var,
    len: usize,
    batch: usize,
) -> Result<Var> {
    if len == 0 || batch == 0 {
        return Err(Error::contract("empty sequence"));
    }
    if tape.value(seq).rows() != len * batch {
        return Err(Error::contract(format!(
            "sequence has {} rows, expected {len} x {batch}",
            tape.value(seq).rows()
        )));
    }
    let f = lstm_pass(tape, store, &p.fwd, seq, len, batch, false)?;
    let b = lstm_pass(tape, store, &p.bwd, seq, len, batch, true)?;
    tape.add(f, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    HeaLstm,
    Mlp,
    DenseLstm,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::HeaLstm => "hea_lstm",
            ModelKind::Mlp => "mlp",
            ModelKind::DenseLstm => "dense_lstm",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hea_lstm" => Ok(ModelKind::HeaLstm),
            "mlp" => Ok(ModelKind::Mlp),
            "dense_lstm" => Ok(ModelKind::DenseLstm),
            other => Err(Error::Config(format!("unknown model kind `{other}`"))),
        }
    }
}

/// Shape-determining hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub kind: ModelKind,
    pub window_len: usize,
    pub d: usize,
    pub heads: usize,
    pub hidden: usize,
    pub mlp_hidden: [usize; 2],
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            kind: ModelKind::HeaLstm,
            window_len: 24,
            d: 16,
            heads: 16,
            hidden: 64,
            mlp_hidden: [256, 64],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Parts {
    HeaLstm {
        hea: HeaParams,
        lstm: BiLstmParams,
        head: DenseLayer,
    },
    DenseLstm {
        embed: DenseLayer,
        lstm: BiLstmParams,
        head: DenseLayer,
    },
    Mlp {
        layers: [DenseLayer; 3],
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionOutput {
    pub prob: f64,
    pub logit: f64,
}

/// A model of any kind together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub arch: Architecture,
    pub store: ParamStore,
    parts: Parts,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self> {
        if arch.window_len == 0 || arch.d == 0 || arch.heads == 0 || arch.hidden == 0 {
            return Err(Error::Config("window length, d, heads and hidden size must be positive".into()));
        }
        let mut store = ParamStore::new();
        let parts = match arch.kind {
            ModelKind::HeaLstm => {
                let hea = HeaParams::register(&mut store, rng, arch.d, arch.heads)?;
                let lstm = BiLstmParams::register(&mut store, rng, hea.output_dim(), arch.hidden)?;
                let head = DenseLayer::register(&mut store, rng, "out", arch.hidden, 1)?;
                Parts::HeaLstm { hea, lstm, head }
            }
            ModelKind::DenseLstm => {
                let embed = DenseLayer::register(&mut store, rng, "embed", N_VARIABLES, arch.d)?;
                let lstm = BiLstmParams::register(&mut store, rng, arch.d, arch.hidden)?;
                let head = DenseLayer::register(&mut store, rng, "out", arch.hidden, 1)?;
                Parts::DenseLstm { embed, lstm, head }
            }
            ModelKind::Mlp => {
                let [h1, h2] = arch.mlp_hidden;
                let input = arch.window_len * N_VARIABLES;
                Parts::Mlp {
                    layers: [
                        DenseLayer::register(&mut store, rng, "mlp.l0", input, h1)?,
                        DenseLayer::register(&mut store, rng, "mlp.l1", h1, h2)?,
                        DenseLayer::register(&mut store, rng, "out", h2, 1)?,
                    ],
                }
            }
        };
        Ok(Model { arch, store, parts })
    }

    pub fn hea_params(&self) -> Option<&HeaParams> {
        match &self.parts {
            Parts::HeaLstm { hea, .. } => Some(hea),
            _ => None,
        }
    }

    pub fn bilstm_params(&self) -> Option<&BiLstmParams> {
        match &self.parts {
            Parts::HeaLstm { lstm, .. } | Parts::DenseLstm { lstm, .. } => Some(lstm),
            Parts::Mlp { .. } => None,
        }
    }

    /// The final dense layer producing the logit.
    pub fn output_layer(&self) -> DenseLayer {
        match &self.parts {
            Parts::HeaLstm { head, .. } | Parts::DenseLstm { head, .. } => *head,
            Parts::Mlp { layers } => layers[2],
        }
    }

    fn check_windows(&self, windows: &[&WindowSample]) -> Result<()> {
        if windows.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        if let Some(w) = windows.iter().find(|w| w.len() != self.arch.window_len) {
            return Err(Error::contract(format!(
                "window of length {} for a model expecting {}",
                w.len(),
                self.arch.window_len
            )));
        }
        Ok(())
    }

    /// Records the forward pass; returns the `batch x 1` logits.
    pub fn forward_logits(&self, tape: &mut Tape, windows: &[&WindowSample]) -> Result<Var> {
        self.check_windows(windows)?;
        self.forward_with(tape, &self.store, windows)
    }

    /// Like [`Model::forward_logits`] but reading parameters from `store`,
    /// which must share this model's layout (used by gradient checks).
    pub fn forward_with(&self, tape: &mut Tape, store: &ParamStore, windows: &[&WindowSample]) -> Result<Var> {
        let batch = windows.len();
        let len = self.arch.window_len;
        match &self.parts {
            Parts::HeaLstm { hea, lstm, head } => {
                let steps = StepBatch::from_windows(windows)?;
                let agg = encode(tape, store, hea, &steps)?;
                let readout = bilstm_tape(tape, store, lstm, agg, len, batch)?;
                head.forward(tape, store, readout)
            }
            Parts::DenseLstm { embed, lstm, head } => {
                let mut raw = Vec::with_capacity(len * batch * N_VARIABLES);
                for t in 0..len {
                    for w in windows {
                        raw.extend_from_slice(&w.raw_row(t));
                    }
                }
                let raw = tape.constant(Tensor::new(len * batch, N_VARIABLES, raw)?);
                let emb = embed.forward(tape, store, raw)?;
                let emb = tape.tanh(emb);
                let readout = bilstm_tape(tape, store, lstm, emb, len, batch)?;
                head.forward(tape, store, readout)
            }
            Parts::Mlp { layers } => {
                let mut flat = Vec::with_capacity(batch * len * N_VARIABLES);
                for w in windows {
                    for t in 0..len {
                        flat.extend_from_slice(&w.raw_row(t));
                    }
                }
                let x = tape.constant(Tensor::new(batch, len * N_VARIABLES, flat)?);
                let h1 = layers[0].forward(tape, store, x)?;
                let h1 = tape.tanh(h1);
                let h2 = layers[1].forward(tape, store, h1)?;
                let h2 = tape.tanh(h2);
                layers[2].forward(tape, store, h2)
            }
        }
    }

    /// Mean clamped cross-entropy over the batch.
    pub fn loss(&self, tape: &mut Tape, windows: &[&WindowSample]) -> Result<Var> {
        self.loss_with(tape, &self.store, windows)
    }

    pub fn loss_with(&self, tape: &mut Tape, store: &ParamStore, windows: &[&WindowSample]) -> Result<Var> {
        self.check_windows(windows)?;
        let logits = self.forward_with(tape, store, windows)?;
        let probs = tape.sigmoid(logits);
        let labels: Vec<bool> = windows.iter().map(|w| w.label).collect();
        tape.bce_mean(probs, &labels, PROB_EPS)
    }

    pub fn predict_batch(&self, windows: &[&WindowSample]) -> Result<Vec<PredictionOutput>> {
        let mut tape = Tape::new();
        let logits = self.forward_logits(&mut tape, windows)?;
        let out = tape
            .value(logits)
            .data()
            .iter()
            .map(|&logit| PredictionOutput {
                prob: sigmoid(logit),
                logit,
            })
            .collect();
        Ok(out)
    }

    pub fn predict(&self, window: &WindowSample) -> Result<PredictionOutput> {
        Ok(self.predict_batch(&[window])?[0])
    }
}
