use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Result;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    init_uniform(rng, rows, cols, 1.0)
}

/// Checks `op` on random inputs: the objective is `sum(op(inputs) * R)` for a
/// fixed random `R`, so every output entry carries a distinct weight.
fn check_primitive<F>(name: &str, shapes: &[[usize; 2]], op: F)
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed ^ name.len() as u64);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let mut store = ParamStore::new();
        let ids: Vec<_> = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| store.register(format!("x{i}"), random(&mut rng, s[0], s[1])).unwrap())
            .collect();
        let probe = {
            let mut t = Tape::new();
            let vars: Vec<_> = ids.iter().map(|&id| t.param(&store, id)).collect();
            let out = op(&mut t, &vars).unwrap();
            t.value(out).shape()
        };
        let weights = random(&mut rng, probe[0], probe[1]);
        let report = grad_check(&mut store, 1e-5, |t, s| {
            let vars: Vec<_> = ids.iter().map(|&id| t.param(s, id)).collect();
            let out = op(t, &vars)?;
            let w = t.constant(weights.clone());
            let prod = t.mul(out, w)?;
            Ok(t.sum(prod))
        })
        .unwrap();
        worst = worst.max(report.max_rel_error);
    }
    assert!(worst < 1e-6, "{name}: max relative error {worst:e}");
}

#[test]
fn primitive_gradients() {
    check_primitive("matmul", &[[3, 4], [4, 2]], |t, v| t.matmul(v[0], v[1]));
    check_primitive("transpose", &[[3, 4]], |t, v| Ok(t.transpose(v[0])));
    check_primitive("add", &[[3, 4], [3, 4]], |t, v| t.add(v[0], v[1]));
    check_primitive("sub", &[[3, 4], [3, 4]], |t, v| t.sub(v[0], v[1]));
    check_primitive("add_row", &[[3, 4], [1, 4]], |t, v| t.add_row(v[0], v[1]));
    check_primitive("mul", &[[3, 4], [3, 4]], |t, v| t.mul(v[0], v[1]));
    check_primitive("scale", &[[2, 3]], |t, v| Ok(t.scale(v[0], -1.7)));
    check_primitive("row_scale", &[[3, 4], [3, 1]], |t, v| t.row_scale(v[0], v[1]));
    check_primitive("concat0", &[[2, 3], [1, 3]], |t, v| t.concat(&[v[0], v[1]], 0));
    check_primitive("concat1", &[[2, 3], [2, 1]], |t, v| t.concat(&[v[0], v[1]], 1));
    check_primitive("slice_rows", &[[4, 3]], |t, v| t.slice_rows(v[0], 1, 2));
    check_primitive("slice_cols", &[[3, 5]], |t, v| t.slice_cols(v[0], 2, 3));
    check_primitive("reshape", &[[2, 6]], |t, v| t.reshape(v[0], 3, 4));
    check_primitive("lookup", &[[5, 3]], |t, v| t.lookup(v[0], &[4, 0, 4, 2]));
    check_primitive("softmax", &[[3, 5]], |t, v| t.softmax_rows(v[0]));
    check_primitive("masked_softmax", &[[2, 4]], |t, v| {
        let m = t.mask_fill(v[0], &[true, false, false, true, false, true, false, false], f64::NEG_INFINITY)?;
        t.softmax_rows(m)
    });
    check_primitive("mask_fill", &[[2, 3]], |t, v| {
        t.mask_fill(v[0], &[true, false, false, false, true, false], 0.0)
    });
    check_primitive("sigmoid", &[[3, 3]], |t, v| Ok(t.sigmoid(v[0])));
    check_primitive("tanh", &[[3, 3]], |t, v| Ok(t.tanh(v[0])));
    check_primitive("sum", &[[3, 3]], |t, v| Ok(t.sum(v[0])));
    check_primitive("batched_vecmat", &[[3, 4], [12, 2]], |t, v| t.batched_vecmat(v[0], v[1]));
    check_primitive("bce_mean", &[[4, 1]], |t, v| {
        let p = t.sigmoid(v[0]);
        t.bce_mean(p, &[true, false, false, true], 1e-7)
    });
}

#[test]
fn softmax_examples() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::row_vector(vec![0.0, 0.0]));
    let y = t.softmax_rows(x).unwrap();
    assert_eq!(t.value(y).data(), &[0.5, 0.5]);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let (a, b, c): (f64, f64, f64) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-50.0..50.0));
        let mut p = [a, b];
        let mut q = [a + c, b + c];
        softmax_in_place(&mut p).unwrap();
        softmax_in_place(&mut q).unwrap();
        assert!((p[0] - q[0]).abs() < 1e-12 && (p[1] - q[1]).abs() < 1e-12);
        assert!(p.iter().all(|v| *v > 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn masked_softmax_gives_exact_zero() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::row_vector(vec![3.0, 1.0, 2.0, 5.0]));
    let m = t.mask_fill(x, &[false, true, false, true], f64::NEG_INFINITY).unwrap();
    let y = t.softmax_rows(m).unwrap();
    let w = t.value(y).data();
    assert_eq!(w[1], 0.0);
    assert_eq!(w[3], 0.0);
    let e = (1.0f64).exp();
    assert!((w[0] - e / (e + 1.0)).abs() < 1e-15);
    assert!((w[0] + w[2] - 1.0).abs() < 1e-15);

    let all = t.mask_fill(x, &[true; 4], f64::NEG_INFINITY).unwrap();
    assert!(t.softmax_rows(all).is_err());
}

#[test]
fn sigmoid_at_zero() {
    assert_eq!(sigmoid(0.0), 0.5);
    assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
}

#[test]
fn backward_of_sum_is_ones() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::row_vector(vec![1.0, -2.0, 3.0]));
    let s = t.sum(x);
    let g = t.backward(s).unwrap();
    assert_eq!(g.wrt(x).unwrap().data(), &[1.0, 1.0, 1.0]);
}

#[test]
fn backward_requires_scalar() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::row_vector(vec![1.0, 2.0]));
    assert!(matches!(t.backward(x), Err(crate::Error::Contract(_))));
}

#[test]
fn sigmoid_of_dot_closed_form() {
    let w0 = vec![0.3, -0.7, 1.1];
    let x0 = vec![0.5, 2.0, -1.0];
    let mut store = ParamStore::new();
    let w = store.register("w", Tensor::row_vector(w0.clone())).unwrap();
    let xt = Tensor::column_vector(x0.clone());

    let mut t = Tape::new();
    let wv = t.param(&store, w);
    let xv = t.constant(xt.clone());
    let z = t.matmul(wv, xv).unwrap();
    let s = t.sigmoid(z);
    let sv = t.value(s).item().unwrap();
    let g = t.backward(s).unwrap();
    let expect: Vec<f64> = x0.iter().map(|x| sv * (1.0 - sv) * x).collect();
    for (a, b) in g.wrt(wv).unwrap().data().iter().zip(&expect) {
        assert!((a - b).abs() < 1e-15);
    }
    // Central differences agree with the closed form.
    for k in 0..3 {
        let f = |d: f64| {
            let z: f64 = w0.iter().zip(&x0).enumerate().map(|(i, (w, x))| (w + if i == k { d } else { 0.0 }) * x).sum();
            sigmoid(z)
        };
        let numeric = (f(1e-5) - f(-1e-5)) / 2e-5;
        assert!((numeric - expect[k]).abs() < 1e-9);
    }
}

#[test]
fn disconnected_parameter_gets_zero_grad() {
    let mut store = ParamStore::new();
    let a = store.register("a", Tensor::row_vector(vec![1.0, 2.0])).unwrap();
    let b = store.register("b", Tensor::row_vector(vec![3.0])).unwrap();
    let mut t = Tape::new();
    let av = t.param(&store, a);
    let _bv = t.param(&store, b);
    let s = t.sum(av);
    let g = t.backward(s).unwrap();
    store.accumulate(&g);
    assert_eq!(store.grad(a).data(), &[1.0, 1.0]);
    assert_eq!(store.grad(b).data(), &[0.0]);
}

#[test]
fn grad_check_quadratic_and_constant() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let p = store.register("p", random(&mut rng, 1, 6)).unwrap();
    let before = store.clone();
    let r = grad_check(&mut store, 1e-5, |t, s| {
        let v = t.param(s, p);
        let sq = t.mul(v, v)?;
        Ok(t.sum(sq))
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-9, "{r:?}");
    assert_eq!(store, before);

    let r = grad_check(&mut store, 1e-5, |t, s| {
        let _ = t.param(s, p);
        Ok(t.constant(Tensor::scalar(4.2)))
    })
    .unwrap();
    assert_eq!(r.max_rel_error, 0.0);
}

#[test]
fn grad_check_reports_non_finite() {
    let mut store = ParamStore::new();
    let p = store.register("p", Tensor::row_vector(vec![1.0])).unwrap();
    let r = grad_check(&mut store, 1e-5, |t, s| {
        let v = t.param(s, p);
        Ok(t.scale(v, f64::INFINITY))
    });
    assert!(matches!(r, Err(crate::Error::NonFinite(_))));
}

#[test]
fn lookup_out_of_range() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::zeros(3, 2));
    assert!(t.lookup(x, &[3]).is_err());
}

#[test]
fn adam_zero_gradient_leaves_params() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    store.register("w", random(&mut rng, 2, 3)).unwrap();
    let before = store.clone();
    let mut adam = Adam::new(AdamConfig::default(), &store);
    assert_eq!(adam.step(&mut store), StepOutcome::Applied);
    assert_eq!(store, before);
}

#[test]
fn adam_first_step_by_hand() {
    let mut store = ParamStore::new();
    let w = store.register("w", Tensor::row_vector(vec![1.0, -2.0, 0.5])).unwrap();
    let grads = [0.2, -3.0, 1e-9];
    store.set_value(w, Tensor::row_vector(vec![1.0, -2.0, 0.5])).unwrap();
    let (_, g) = store.value_and_grad_mut(w);
    g.data_mut().copy_from_slice(&grads);
    let cfg = AdamConfig::default();
    let mut adam = Adam::new(cfg, &store);
    adam.step(&mut store);
    // After one step m_hat = g and v_hat = g^2, so the move is lr * g / (|g| + eps).
    let start = [1.0, -2.0, 0.5];
    for k in 0..3 {
        let g = grads[k];
        let expect = start[k] - cfg.lr * g / (g.abs() + cfg.eps);
        assert!((store.value(w).data()[k] - expect).abs() < 1e-15, "component {k}");
    }
    assert!(store.grad(w).data().iter().all(|v| *v == 0.0));
}

#[test]
fn adam_skips_non_finite() {
    let mut store = ParamStore::new();
    let w = store.register("w", Tensor::row_vector(vec![1.0])).unwrap();
    store.value_and_grad_mut(w).1.data_mut()[0] = f64::NAN;
    let mut adam = Adam::new(AdamConfig::default(), &store);
    assert_eq!(adam.step(&mut store), StepOutcome::SkippedNonFinite);
    assert_eq!(store.value(w).data(), &[1.0]);
    assert_eq!(adam.steps_taken(), 0);
    assert_eq!(store.grad(w).data(), &[0.0]);
}

#[test]
fn adam_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut store = ParamStore::new();
        let w = store.register("w", random(&mut rng, 3, 3)).unwrap();
        let mut adam = Adam::new(AdamConfig::default(), &store);
        for _ in 0..20 {
            let mut t = Tape::new();
            let v = t.param(&store, w);
            let sq = t.mul(v, v).unwrap();
            let s = t.sum(sq);
            let g = t.backward(s).unwrap();
            store.accumulate(&g);
            adam.step(&mut store);
        }
        store
    };
    assert_eq!(run(), run());
}
