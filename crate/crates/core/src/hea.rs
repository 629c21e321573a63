//! Heterogeneous event aggregation.
//!
//! Every hour holds 40 events: 37 numeric variables and 3 categorical ones.
//! Each event gets an embedding row and a key row:
//!
//! * numeric `j`: embedding `W_ne[j] + x_j * W_vn[j]` (zero when unobserved), key `W_ne[j]`;
//! * categorical `c`: embedding and key both `W_ce[cat_idx[c]]`.
//!
//! Head `i` scores each event as `(W_k_i key) . m_i`, takes a softmax over the
//! observed events and returns `sum_j w_j W_v_i e_j`. The `M` head outputs are
//! concatenated, giving one `M*d` vector per hour.
//!
//! Two routes compute this. [`embed_step`] / [`attend_head`] / [`aggregate_step`]
//! evaluate the formulas literally on plain tensors. [`encode`] records a
//! batched version on a [`Tape`] for training. It reassociates the products, so
//! `W_k_i` and `W_v_i` are applied once per head instead of once per event.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::{init_uniform, softmax_in_place, ParamId, ParamStore, Tape, Tensor, Var};
use crate::preprocess::{WindowSample, N_CATEGORIES};
use crate::psv::{N_CATEGORICAL, N_NUMERIC, N_VARIABLES};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadParams {
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub m: ParamId,
}

/// Parameter handles for the embedding tables and the attention heads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeaParams {
    pub d: usize,
    pub w_ne: ParamId,
    pub w_vn: ParamId,
    pub w_ce: ParamId,
    pub heads: Vec<HeadParams>,
}

impl HeaParams {
    /// Registers `W_ne`, `W_vn` (37 x d), `W_ce` (7 x d) and per-head `W_k`,
    /// `W_v` (d x d) and `m` (1 x d), all uniform in `(-1/sqrt(d), 1/sqrt(d))`.
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        d: usize,
        n_heads: usize,
    ) -> Result<Self> {
        if d == 0 || n_heads == 0 {
            return Err(Error::contract("embedding size and head count must be positive"));
        }
        let bound = 1.0 / (d as f64).sqrt();
        let w_ne = store.register("hea.w_ne", init_uniform(rng, N_NUMERIC, d, bound))?;
        let w_vn = store.register("hea.w_vn", init_uniform(rng, N_NUMERIC, d, bound))?;
        let w_ce = store.register("hea.w_ce", init_uniform(rng, N_CATEGORIES, d, bound))?;
        let mut heads = Vec::with_capacity(n_heads);
        for i in 0..n_heads {
            heads.push(HeadParams {
                w_k: store.register(format!("hea.head{i}.w_k"), init_uniform(rng, d, d, bound))?,
                w_v: store.register(format!("hea.head{i}.w_v"), init_uniform(rng, d, d, bound))?,
                m: store.register(format!("hea.head{i}.m"), init_uniform(rng, 1, d, bound))?,
            });
        }
        Ok(HeaParams {
            d,
            w_ne,
            w_vn,
            w_ce,
            heads,
        })
    }

    pub fn n_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn output_dim(&self) -> usize {
        self.d * self.heads.len()
    }
}

/// Embeddings, keys and attention support for one hour.
#[derive(Debug, Clone, PartialEq)]
pub struct StepEmbedding {
    /// 40 x d; rows of unobserved numeric events are zero.
    pub events: Tensor,
    /// 40 x d.
    pub keys: Tensor,
    pub att_mask: [bool; N_VARIABLES],
}

pub fn embed_step(
    store: &ParamStore,
    params: &HeaParams,
    values: &[f64; N_NUMERIC],
    obs_mask: &[bool; N_NUMERIC],
    cat_idx: &[u8; N_CATEGORICAL],
) -> Result<StepEmbedding> {
    let d = params.d;
    let w_ne = store.value(params.w_ne);
    let w_vn = store.value(params.w_vn);
    let w_ce = store.value(params.w_ce);
    let mut events = Tensor::zeros(N_VARIABLES, d);
    let mut keys = Tensor::zeros(N_VARIABLES, d);
    let mut att_mask = [true; N_VARIABLES];
    for j in 0..N_NUMERIC {
        keys.row_mut(j).copy_from_slice(w_ne.row(j));
        att_mask[j] = obs_mask[j];
        if !obs_mask[j] {
            continue;
        }
        let x = values[j];
        if !x.is_finite() {
            return Err(Error::NonFinite(format!("value of numeric event {j}")));
        }
        for ((e, base), dir) in events.row_mut(j).iter_mut().zip(w_ne.row(j)).zip(w_vn.row(j)) {
            *e = base + x * dir;
        }
    }
    for c in 0..N_CATEGORICAL {
        let idx = usize::from(cat_idx[c]);
        if idx >= N_CATEGORIES {
            return Err(Error::contract(format!("category index {idx} out of range")));
        }
        events.row_mut(N_NUMERIC + c).copy_from_slice(w_ce.row(idx));
        keys.row_mut(N_NUMERIC + c).copy_from_slice(w_ce.row(idx));
    }
    Ok(StepEmbedding {
        events,
        keys,
        att_mask,
    })
}

/// Output of one head: the aggregated vector and the attention weights over the 40 events.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    pub h: Vec<f64>,
    pub weights: Vec<f64>,
}

fn mat_vec(m: &Tensor, v: &[f64]) -> Vec<f64> {
    (0..m.rows())
        .map(|r| m.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

pub fn attend_head(step: &StepEmbedding, store: &ParamStore, head: &HeadParams) -> Result<HeadOutput> {
    let w_k = store.value(head.w_k);
    let w_v = store.value(head.w_v);
    let m = store.value(head.m).data();
    let mut scores: Vec<f64> = (0..N_VARIABLES)
        .map(|j| {
            if step.att_mask[j] {
                mat_vec(w_k, step.keys.row(j)).iter().zip(m).map(|(a, b)| a * b).sum()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    softmax_in_place(&mut scores)?;
    let mut h = vec![0.0; w_v.rows()];
    for (j, &w) in scores.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (acc, v) in h.iter_mut().zip(mat_vec(w_v, step.events.row(j))) {
            *acc += w * v;
        }
    }
    Ok(HeadOutput { h, weights: scores })
}

/// Concatenation of every head's output, in head order.
pub fn aggregate_step(step: &StepEmbedding, store: &ParamStore, params: &HeaParams) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(params.output_dim());
    for head in &params.heads {
        out.extend(attend_head(step, store, head)?.h);
    }
    Ok(out)
}

/// `L x (M*d)` aggregated sequence for one window, computed with the literal formulas.
pub fn aggregate_window(window: &WindowSample, store: &ParamStore, params: &HeaParams) -> Result<Tensor> {
    let mut data = Vec::with_capacity(window.len() * params.output_dim());
    for t in 0..window.len() {
        let step = embed_step(store, params, &window.values[t], &window.obs_mask[t], &window.cat_idx[t])?;
        data.extend(aggregate_step(&step, store, params)?);
    }
    Tensor::new(window.len(), params.output_dim(), data)
}

/// Hours from several equal-length windows, laid out time-major: row
/// `t * n_windows + b` is hour `t` of window `b`.
#[derive(Debug, Clone)]
pub struct StepBatch {
    pub n_windows: usize,
    pub len: usize,
    /// `(len*n_windows) x 37`, zero where unobserved.
    pub values: Tensor,
    /// Row-major `(len*n_windows) x 37`.
    pub obs_mask: Vec<bool>,
    /// `len*n_windows*3` category indices.
    pub cat_idx: Vec<usize>,
}

impl StepBatch {
    pub fn from_windows(windows: &[&WindowSample]) -> Result<Self> {
        let Some(first) = windows.first() else {
            return Err(Error::contract("empty batch"));
        };
        let len = first.len();
        if windows.iter().any(|w| w.len() != len) {
            return Err(Error::contract("windows in a batch must share one length"));
        }
        let n = windows.len() * len;
        let mut values = Vec::with_capacity(n * N_NUMERIC);
        let mut obs_mask = Vec::with_capacity(n * N_NUMERIC);
        let mut cat_idx = Vec::with_capacity(n * N_CATEGORICAL);
        for t in 0..len {
            for w in windows {
                for j in 0..N_NUMERIC {
                    let seen = w.obs_mask[t][j];
                    obs_mask.push(seen);
                    values.push(if seen { w.values[t][j] } else { 0.0 });
                }
                cat_idx.extend(w.cat_idx[t].iter().map(|&c| usize::from(c)));
            }
        }
        Ok(StepBatch {
            n_windows: windows.len(),
            len,
            values: Tensor::new(n, N_NUMERIC, values)?,
            obs_mask,
            cat_idx,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.n_windows * self.len
    }
}

/// Records the aggregation of every hour in `batch`; returns `n_steps x (M*d)`.
pub fn encode(tape: &mut Tape, store: &ParamStore, params: &HeaParams, batch: &StepBatch) -> Result<Var> {
    let n = batch.n_steps();
    if !batch.values.is_finite() {
        return Err(Error::NonFinite("numeric event values".into()));
    }
    let w_ne = tape.param(store, params.w_ne);
    let w_vn = tape.param(store, params.w_vn);
    let w_ce = tape.param(store, params.w_ce);
    let values = tape.constant(batch.values.clone());
    let ones = tape.constant(Tensor::filled(n, 1, 1.0));

    // Categorical embeddings, three rows per hour; they double as keys.
    let cat_emb = tape.lookup(w_ce, &batch.cat_idx)?;

    // Attention support: observed numeric events plus every categorical event.
    let mut excluded = Vec::with_capacity(n * N_VARIABLES);
    for s in 0..n {
        excluded.extend(batch.obs_mask[s * N_NUMERIC..(s + 1) * N_NUMERIC].iter().map(|o| !o));
        excluded.extend([false; N_CATEGORICAL]);
    }

    let mut outputs = Vec::with_capacity(params.n_heads());
    for head in &params.heads {
        let w_k = tape.param(store, head.w_k);
        let w_v = tape.param(store, head.w_v);
        let m = tape.param(store, head.m);
        // (W_k k) . m == k . (m W_k), one query row per head.
        let query = tape.matmul(m, w_k)?;
        let query_col = tape.transpose(query);
        let num_scores = tape.matmul(w_ne, query_col)?;
        let num_scores_row = tape.transpose(num_scores);
        let num_scores = tape.matmul(ones, num_scores_row)?;
        let cat_scores = tape.matmul(cat_emb, query_col)?;
        let cat_scores = tape.reshape(cat_scores, n, N_CATEGORICAL)?;
        let scores = tape.concat(&[num_scores, cat_scores], 1)?;
        let scores = tape.mask_fill(scores, &excluded, f64::NEG_INFINITY)?;
        let weights = tape.softmax_rows(scores)?;

        // sum_j w_j e_j, split by event kind. Unobserved events have weight 0.
        let w_num = tape.slice_cols(weights, 0, N_NUMERIC)?;
        let w_cat = tape.slice_cols(weights, N_NUMERIC, N_CATEGORICAL)?;
        let base = tape.matmul(w_num, w_ne)?;
        let scaled = tape.mul(w_num, values)?;
        let along = tape.matmul(scaled, w_vn)?;
        let cat_part = tape.batched_vecmat(w_cat, cat_emb)?;
        let pooled = tape.add(base, along)?;
        let pooled = tape.add(pooled, cat_part)?;
        // W_v sum_j w_j e_j, with rows as vectors.
        let w_v_t = tape.transpose(w_v);
        outputs.push(tape.matmul(pooled, w_v_t)?);
    }
    tape.concat(&outputs, 1)
}
