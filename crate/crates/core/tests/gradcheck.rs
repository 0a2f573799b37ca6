//! Analytic gradients against central finite differences in f64.

use modmoe::gradcheck::{check, relative_error, suite, TOL};
use modmoe::numerics::{Rng, Tape, Tensor};

#[test]
fn every_op_matches_finite_differences() {
    let results = suite(10).unwrap();
    for op in [
        "matmul",
        "matmul_t",
        "add",
        "add_bias",
        "scale",
        "mix",
        "sum",
        "gelu",
        "softmax",
        "layer_norm",
        "embedding",
        "slice_cols",
        "causal_attention_scores",
        "attention_mix",
        "attention_block",
        "cross_entropy",
        "rkl_loss",
        "transformer_lm_loss",
        "router_objective",
    ] {
        let r = results.iter().find(|r| r.op == op).unwrap_or_else(|| panic!("{op} not checked"));
        assert_eq!(r.instances, 10, "{op}");
        assert!(r.worst < TOL, "{op}: relative error {:e}", r.worst);
    }
}

#[test]
fn relative_error_scale() {
    let x = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap().with_grad();
    let err = check(&[x], |t, v| {
        let s = t.sum(v[0]);
        Ok(s)
    })
    .unwrap();
    assert!(err < 1e-9);
    assert!((relative_error(&[1.0, 1.0], &[2.0, 2.0]) - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
}

#[test]
fn accumulation_doubles_gradients() {
    let mut rng = Rng::new(9);
    let data = (0..12).map(|_| rng.normal(1.0)).collect();
    let a = Tensor::new(vec![3, 4], data).unwrap().with_grad();
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(&a);
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    assert!(tape.grad(x).unwrap().iter().all(|&g| g == 1.0));
    tape.backward(s).unwrap();
    assert!(tape.grad(x).unwrap().iter().all(|&g| g == 2.0));
    let y = tape.scale(x, 2.0);
    assert!(tape.backward(y).is_err(), "non-scalar loss");
}
