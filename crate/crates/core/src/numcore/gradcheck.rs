use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Worst disagreement between tape gradients and central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst component.
    pub worst: Option<(String, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub n_checked: usize,
}

fn eval(store: &ParamStore, f: &impl Fn(&mut Tape, &ParamStore) -> Result<Var>) -> Result<f64> {
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    let v = tape.value(out).item()?;
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("objective evaluated to {v}")));
    }
    Ok(v)
}

/// Compares the tape gradient of the scalar built by `f` against
/// `(f(p + eps) - f(p - eps)) / 2 eps` for every scalar in `store`.
///
/// Relative error per component is `|g - n| / max(|g|, |n|, 1e-8)`.
/// The store's values are restored before returning.
pub fn grad_check<F>(store: &mut ParamStore, eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    let base = tape.value(out).item()?;
    if !base.is_finite() {
        return Err(Error::NonFinite(format!("objective evaluated to {base}")));
    }
    let grads = tape.backward(out)?;
    let mut analytic: Vec<Vec<f64>> = store.ids().map(|id| vec![0.0; store.value(id).len()]).collect();
    for (id, g) in grads.param_grads() {
        for (a, v) in analytic[id.index()].iter_mut().zip(g.data()) {
            *a += v;
        }
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        n_checked: 0,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for k in 0..store.value(id).len() {
            let orig = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = orig + eps;
            let plus = eval(store, &f);
            store.value_mut(id).data_mut()[k] = orig - eps;
            let minus = eval(store, &f);
            store.value_mut(id).data_mut()[k] = orig;
            let numeric = (plus? - minus?) / (2.0 * eps);
            let g = analytic[id.index()][k];
            let denom = g.abs().max(numeric.abs()).max(1e-8);
            let rel = (g - numeric).abs() / denom;
            report.n_checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((store.name(id).to_string(), k));
                report.analytic = g;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
