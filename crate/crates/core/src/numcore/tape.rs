use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Computes input gradients from `(grad_out, inputs, output, needs_grad)`.
/// Returns one entry per input; `None` where no gradient is needed.
type BackwardFn = Box<dyn Fn(&Tensor, &[&Tensor], &Tensor, &[bool]) -> Vec<Option<Tensor>>>;

struct Node {
    value: Tensor,
    inputs: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn>,
    param: Option<ParamId>,
}

/// Records operations in execution order, so every node's inputs precede it.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// One entry per parameter leaf on the tape. A parameter bound twice shows up twice.
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params
            .iter()
            .filter_map(|&(id, node)| self.grads[node].as_ref().map(|g| (id, g)))
    }
}

fn shape_err(op: &str, a: &Tensor, b: &Tensor) -> Error {
    Error::contract(format!(
        "{op}: incompatible shapes {:?} and {:?}",
        a.shape(),
        b.shape()
    ))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool, param: Option<ParamId>) -> Var {
        self.nodes.push(Node {
            value,
            inputs: Vec::new(),
            requires_grad,
            backward: None,
            param,
        });
        Var(self.nodes.len() - 1)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false, None)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true, None)
    }

    /// Binds a parameter from `store` as a differentiable leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push_leaf(store.value(id).clone(), true, Some(id))
    }

    fn push_op(&mut self, value: Tensor, inputs: &[Var], backward: BackwardFn) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            inputs: inputs.iter().map(|v| v.0).collect(),
            requires_grad,
            backward: requires_grad.then_some(backward),
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse pass from a scalar `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|&j| &self.nodes[j].value).collect();
            let needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|&j| self.nodes[j].requires_grad)
                .collect();
            let input_grads = backward(&g, &inputs, &node.value, &needs);
            for ((&j, ig), need) in node.inputs.iter().zip(input_grads).zip(needs) {
                let (Some(ig), true) = (ig, need) else {
                    continue;
                };
                match &mut grads[j] {
                    Some(acc) => acc.add_assign(&ig),
                    slot => *slot = Some(ig),
                }
            }
            // Keep the gradient of interior nodes available for inspection.
            grads[i] = Some(g);
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|id| (id, i)))
            .collect();
        Ok(Gradients { grads, params })
    }

    // ---- primitives -------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = Tensor::gemm(self.value(a), false, self.value(b), false)?;
        Ok(self.push_op(
            out,
            &[a, b],
            Box::new(|g, x, _, need| {
                vec![
                    need[0].then(|| Tensor::gemm(g, false, x[1], true).expect("shapes checked")),
                    need[1].then(|| Tensor::gemm(x[0], true, g, false).expect("shapes checked")),
                ]
            }),
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push_op(out, &[a], Box::new(|g, _, _, _| vec![Some(g.transpose())]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err("add", x, y));
        }
        let out = x.zip_map(y, |p, q| p + q);
        Ok(self.push_op(
            out,
            &[a, b],
            Box::new(|g, _, _, need| vec![need[0].then(|| g.clone()), need[1].then(|| g.clone())]),
        ))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err("sub", x, y));
        }
        let out = x.zip_map(y, |p, q| p - q);
        Ok(self.push_op(
            out,
            &[a, b],
            Box::new(|g, _, _, need| {
                vec![
                    need[0].then(|| g.clone()),
                    need[1].then(|| g.map(|v| -v)),
                ]
            }),
        ))
    }

    /// Adds the `1 x n` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (x, b) = (self.value(a), self.value(bias));
        if b.rows() != 1 || b.cols() != x.cols() {
            return Err(shape_err("add_row", x, b));
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (o, bv) in out.row_mut(r).iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        Ok(self.push_op(
            out,
            &[a, bias],
            Box::new(|g, _, _, need| {
                let gb = need[1].then(|| {
                    let mut s = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (acc, v) in s.data_mut().iter_mut().zip(g.row(r)) {
                            *acc += v;
                        }
                    }
                    s
                });
                vec![need[0].then(|| g.clone()), gb]
            }),
        ))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err("mul", x, y));
        }
        let out = x.zip_map(y, |p, q| p * q);
        Ok(self.push_op(
            out,
            &[a, b],
            Box::new(|g, x, _, need| {
                vec![
                    need[0].then(|| g.zip_map(x[1], |gv, v| gv * v)),
                    need[1].then(|| g.zip_map(x[0], |gv, v| gv * v)),
                ]
            }),
        ))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|v| v * factor);
        self.push_op(
            out,
            &[a],
            Box::new(move |g, _, _, _| vec![Some(g.map(|v| v * factor))]),
        )
    }

    /// Multiplies row `r` of `a` by `s[r]`, where `s` is `rows x 1`.
    pub fn row_scale(&mut self, a: Var, s: Var) -> Result<Var> {
        let (x, sv) = (self.value(a), self.value(s));
        if sv.cols() != 1 || sv.rows() != x.rows() {
            return Err(shape_err("row_scale", x, sv));
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            let k = sv.data()[r];
            out.row_mut(r).iter_mut().for_each(|v| *v *= k);
        }
        Ok(self.push_op(
            out,
            &[a, s],
            Box::new(|g, x, _, need| {
                let ga = need[0].then(|| {
                    let mut ga = g.clone();
                    for r in 0..ga.rows() {
                        let k = x[1].data()[r];
                        ga.row_mut(r).iter_mut().for_each(|v| *v *= k);
                    }
                    ga
                });
                let gs = need[1].then(|| {
                    Tensor::column_vector(
                        (0..g.rows())
                            .map(|r| g.row(r).iter().zip(x[0].row(r)).map(|(p, q)| p * q).sum())
                            .collect(),
                    )
                });
                vec![ga, gs]
            }),
        ))
    }

    /// Concatenates along rows (`axis = 0`) or columns (`axis = 1`).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::contract("concat of zero tensors"));
        }
        let shapes: Vec<[usize; 2]> = parts.iter().map(|&p| self.value(p).shape()).collect();
        let out = match axis {
            0 => {
                let cols = shapes[0][1];
                if shapes.iter().any(|s| s[1] != cols) {
                    return Err(Error::contract(format!("concat rows: column counts differ {shapes:?}")));
                }
                let mut data = Vec::with_capacity(shapes.iter().map(|s| s[0] * s[1]).sum());
                for &p in parts {
                    data.extend_from_slice(self.value(p).data());
                }
                Tensor::new(data.len() / cols.max(1), cols, data)?
            }
            1 => {
                let rows = shapes[0][0];
                if shapes.iter().any(|s| s[0] != rows) {
                    return Err(Error::contract(format!("concat cols: row counts differ {shapes:?}")));
                }
                let cols: usize = shapes.iter().map(|s| s[1]).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row(r));
                    }
                }
                Tensor::new(rows, cols, data)?
            }
            _ => return Err(Error::contract(format!("concat axis {axis} unsupported"))),
        };
        Ok(self.push_op(
            out,
            parts,
            Box::new(move |g, _, _, need| {
                let mut out = Vec::with_capacity(shapes.len());
                let mut offset = 0;
                for (s, &n) in shapes.iter().zip(need) {
                    let piece = n.then(|| {
                        if axis == 0 {
                            let start = offset * s[1];
                            Tensor::new(s[0], s[1], g.data()[start..start + s[0] * s[1]].to_vec())
                                .expect("slice shape")
                        } else {
                            let mut t = Tensor::zeros(s[0], s[1]);
                            for r in 0..s[0] {
                                t.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + s[1]]);
                            }
                            t
                        }
                    });
                    offset += if axis == 0 { s[0] } else { s[1] };
                    out.push(piece);
                }
                out
            }),
        ))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if start + len > x.rows() {
            return Err(Error::contract(format!(
                "slice_rows {start}..{} of {} rows",
                start + len,
                x.rows()
            )));
        }
        let cols = x.cols();
        let total_rows = x.rows();
        let out = Tensor::new(len, cols, x.data()[start * cols..(start + len) * cols].to_vec())?;
        Ok(self.push_op(
            out,
            &[a],
            Box::new(move |g, _, _, _| {
                let mut ga = Tensor::zeros(total_rows, cols);
                ga.data_mut()[start * cols..(start + len) * cols].copy_from_slice(g.data());
                vec![Some(ga)]
            }),
        ))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if start + len > x.cols() {
            return Err(Error::contract(format!(
                "slice_cols {start}..{} of {} cols",
                start + len,
                x.cols()
            )));
        }
        let (rows, cols) = (x.rows(), x.cols());
        let mut out = Tensor::zeros(rows, len);
        for r in 0..rows {
            out.row_mut(r).copy_from_slice(&x.row(r)[start..start + len]);
        }
        Ok(self.push_op(
            out,
            &[a],
            Box::new(move |g, _, _, _| {
                let mut ga = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    ga.row_mut(r)[start..start + len].copy_from_slice(g.row(r));
                }
                vec![Some(ga)]
            }),
        ))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let x = self.value(a);
        let [r0, c0] = x.shape();
        let out = x.clone().reshaped(rows, cols)?;
        Ok(self.push_op(
            out,
            &[a],
            Box::new(move |g, _, _, _| vec![Some(g.clone().reshaped(r0, c0).expect("same size"))]),
        ))
    }

    /// Gathers rows of `table`: output row `i` is `table[indices[i]]`.
    pub fn lookup(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if let Some(&bad) = indices.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::contract(format!(
                "lookup index {bad} out of range for {} rows",
                t.rows()
            )));
        }
        let cols = t.cols();
        let mut out = Tensor::zeros(indices.len(), cols);
        for (r, &i) in indices.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(i));
        }
        let indices = indices.to_vec();
        Ok(self.push_op(
            out,
            &[table],
            Box::new(move |g, x, _, _| {
                let mut gt = Tensor::zeros(x[0].rows(), x[0].cols());
                for (r, &i) in indices.iter().enumerate() {
                    for (acc, v) in gt.row_mut(i).iter_mut().zip(g.row(r)) {
                        *acc += v;
                    }
                }
                vec![Some(gt)]
            }),
        ))
    }

    /// Row-wise softmax. Entries equal to `-inf` get exactly zero weight; a
    /// row whose entries are all `-inf` is a contract error.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let mut out = x.clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r)).map_err(|e| match e {
                Error::Contract(m) => Error::contract(format!("softmax row {r}: {m}")),
                other => other,
            })?;
        }
        Ok(self.push_op(
            out,
            &[a],
            Box::new(|g, _, y, _| {
                let mut gx = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for ((o, &p), &q) in gx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o = p * (q - dot);
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Sets entries where `fill[i]` is true to `value`; those entries pass no gradient.
    pub fn mask_fill(&mut self, a: Var, fill: &[bool], value: f64) -> Result<Var> {
        let x = self.value(a);
        if fill.len() != x.len() {
            return Err(Error::contract(format!(
                "mask_fill: mask of {} for {} elements",
                fill.len(),
                x.len()
            )));
        }
        let mut out = x.clone();
        for (o, &f) in out.data_mut().iter_mut().zip(fill) {
            if f {
                *o = value;
            }
        }
        let fill = fill.to_vec();
        Ok(self.push_op(
            out,
            &[a],
            Box::new(move |g, _, _, _| {
                let mut ga = g.clone();
                for (o, &f) in ga.data_mut().iter_mut().zip(&fill) {
                    if f {
                        *o = 0.0;
                    }
                }
                vec![Some(ga)]
            }),
        ))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push_op(
            out,
            &[a],
            Box::new(|g, _, y, _| vec![Some(g.zip_map(y, |gv, s| gv * s * (1.0 - s)))]),
        )
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push_op(
            out,
            &[a],
            Box::new(|g, _, y, _| vec![Some(g.zip_map(y, |gv, t| gv * (1.0 - t * t)))]),
        )
    }

    /// Sum of all entries as a `1 x 1` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let out = Tensor::scalar(x.data().iter().sum());
        self.push_op(
            out,
            &[a],
            Box::new(|g, x, _, _| vec![Some(Tensor::filled(x[0].rows(), x[0].cols(), g.data()[0]))]),
        )
    }

    /// For `w` of shape `n x k` and `rows` of shape `(n*k) x c`, output row `i`
    /// is `sum_j w[i][j] * rows[i*k + j]`: one vector-matrix product per row.
    pub fn batched_vecmat(&mut self, w: Var, rows: Var) -> Result<Var> {
        let (wt, rt) = (self.value(w), self.value(rows));
        let (n, k, c) = (wt.rows(), wt.cols(), rt.cols());
        if rt.rows() != n * k {
            return Err(shape_err("batched_vecmat", wt, rt));
        }
        let mut out = Tensor::zeros(n, c);
        for i in 0..n {
            let o = out.row_mut(i);
            for j in 0..k {
                let wij = wt.get(i, j);
                for (acc, v) in o.iter_mut().zip(rt.row(i * k + j)) {
                    *acc += wij * v;
                }
            }
        }
        Ok(self.push_op(
            out,
            &[w, rows],
            Box::new(move |g, x, _, need| {
                let gw = need[0].then(|| {
                    let mut gw = Tensor::zeros(n, k);
                    for i in 0..n {
                        for j in 0..k {
                            gw.row_mut(i)[j] =
                                g.row(i).iter().zip(x[1].row(i * k + j)).map(|(p, q)| p * q).sum();
                        }
                    }
                    gw
                });
                let gr = need[1].then(|| {
                    let mut gr = Tensor::zeros(n * k, c);
                    for i in 0..n {
                        for j in 0..k {
                            let wij = x[0].get(i, j);
                            for (o, v) in gr.row_mut(i * k + j).iter_mut().zip(g.row(i)) {
                                *o = wij * v;
                            }
                        }
                    }
                    gr
                });
                vec![gw, gr]
            }),
        ))
    }

    /// Mean binary cross-entropy of probabilities `probs` (`n x 1`) against
    /// `labels`, with probabilities clamped to `[eps, 1 - eps]`.
    pub fn bce_mean(&mut self, probs: Var, labels: &[bool], eps: f64) -> Result<Var> {
        let p = self.value(probs);
        if p.cols() != 1 || p.rows() != labels.len() || labels.is_empty() {
            return Err(Error::contract(format!(
                "bce_mean: {:?} probabilities for {} labels",
                p.shape(),
                labels.len()
            )));
        }
        let n = labels.len() as f64;
        let loss: f64 = p
            .data()
            .iter()
            .zip(labels)
            .map(|(&y, &t)| bce(y, t, eps))
            .sum::<f64>()
            / n;
        let labels = labels.to_vec();
        Ok(self.push_op(
            Tensor::scalar(loss),
            &[probs],
            Box::new(move |g, x, _, _| {
                let scale = g.data()[0] / n;
                let data = x[0]
                    .data()
                    .iter()
                    .zip(&labels)
                    .map(|(&y, &t)| {
                        if y <= eps || y >= 1.0 - eps {
                            0.0
                        } else if t {
                            -scale / y
                        } else {
                            scale / (1.0 - y)
                        }
                    })
                    .collect();
                vec![Some(Tensor::column_vector(data))]
            }),
        ))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Cross-entropy of one prediction `y` for label `t`, `y` clamped to `[eps, 1-eps]`.
pub fn bce(y: f64, t: bool, eps: f64) -> f64 {
    let y = y.clamp(eps, 1.0 - eps);
    let t = if t { 1.0 } else { 0.0 };
    -(t * y.ln() + (1.0 - t) * (1.0 - y).ln())
}

/// Softmax over a slice; `-inf` entries become exactly zero.
pub fn softmax_in_place(row: &mut [f64]) -> Result<()> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::contract("every entry is masked"));
    }
    if !max.is_finite() {
        return Err(Error::NonFinite("softmax input".into()));
    }
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = if *v == f64::NEG_INFINITY {
            0.0
        } else {
            (*v - max).exp()
        };
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
    Ok(())
}
