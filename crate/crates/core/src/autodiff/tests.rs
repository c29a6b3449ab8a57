use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, mag: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-mag..mag)).collect();
    Tensor::new(rows, cols, data).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn matmul_of_ones() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::ones(2, 3));
    let b = g.constant(Tensor::ones(3, 1));
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.forward(c), &Tensor::new(2, 1, vec![3.0, 3.0]).unwrap());
}

#[test]
fn tanh_of_zero_is_zero() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(2, 2));
    let t = g.tanh(a);
    assert_eq!(g.value(t), &Tensor::zeros(2, 2));
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(1, 3));
    let s = g.softmax_rows(a);
    assert!(close(g.value(s).data(), &[1.0 / 3.0; 3], 1e-15));
}

#[test]
fn shape_mismatch_names_node_and_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::ones(2, 3));
    let b = g.constant(Tensor::ones(2, 3));
    match g.matmul(a, b) {
        Err(Error::ShapeMismatch { op, node, expected, actual }) => {
            assert_eq!(op, "matmul");
            assert_eq!(node, 2);
            assert_eq!(expected, "3xN");
            assert_eq!(actual, "2x3");
        }
        other => panic!("expected shape mismatch, got {other:?}"),
    }
    assert!(g.add(a, b).is_ok());
    let c = g.constant(Tensor::ones(3, 2));
    assert!(matches!(g.add(a, c), Err(Error::ShapeMismatch { op: "add", .. })));
}

#[test]
fn grad_of_sum_is_ones() {
    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::new(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap()).unwrap();
    let mut g = Graph::new();
    let x = g.param(&store, w);
    let s = g.sum(x);
    g.backward(s, &mut store).unwrap();
    assert_eq!(store.grad(w), &Tensor::ones(2, 3));
}

#[test]
fn mse_at_target_has_zero_grad() {
    let mut store = ParamStore::new();
    let target = Tensor::new(1, 3, vec![0.2, -0.4, 1.5]).unwrap();
    let w = store.add("x", target.clone()).unwrap();
    let mut g = Graph::new();
    let x = g.param(&store, w);
    let c = g.constant(target);
    let l = g.mse(x, c).unwrap();
    assert_eq!(g.value(l).item(), 0.0);
    g.backward(l, &mut store).unwrap();
    assert!(store.grad(w).data().iter().all(|&v| v == 0.0));
}

#[test]
fn cross_entropy_grad_is_softmax_minus_onehot() {
    let mut store = ParamStore::new();
    let z = store.add("z", Tensor::zeros(1, 2)).unwrap();
    let mut g = Graph::new();
    let zn = g.param(&store, z);
    let l = g.cross_entropy(zn, 0).unwrap();
    assert!((g.value(l).item() - std::f64::consts::LN_2).abs() < 1e-15);
    g.backward(l, &mut store).unwrap();
    assert!(close(store.grad(z).data(), &[-0.5, 0.5], 1e-15));
}

#[test]
fn backward_rejects_non_scalar_root() {
    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::ones(2, 2)).unwrap();
    let mut g = Graph::new();
    let x = g.param(&store, w);
    assert!(matches!(g.backward(x, &mut store), Err(Error::NonScalarRoot(_))));
}

#[test]
fn mean_rows_of_empty_set_is_zero() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(0, 4));
    let m = g.mean_rows(a);
    assert_eq!(g.value(m), &Tensor::zeros(1, 4));
}

#[test]
fn neighbor_mean_isolated_node_is_zero() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::new(3, 1, vec![1.0, 2.0, 4.0]).unwrap());
    let nbrs = Arc::new(vec![vec![1, 2], vec![0], vec![]]);
    let m = g.neighbor_mean(a, nbrs).unwrap();
    assert_eq!(g.value(m).data(), &[3.0, 1.0, 0.0]);
}

#[test]
fn grad_check_rejects_bad_eps() {
    let mut store = ParamStore::new();
    store.add("w", Tensor::ones(1, 1)).unwrap();
    let f = |g: &mut Graph, s: &ParamStore| {
        let w = g.param(s, ParamId(0));
        Ok(g.sum(w))
    };
    assert!(grad_check(f, &mut store, 0.0).is_err());
    assert!(grad_check(f, &mut store, 0.1).is_err());
}

#[test]
fn grad_check_sum_tanh() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let w = store.add("w", random(&mut rng, 3, 4, 2.0)).unwrap();
    let err = grad_check(
        |g, s| {
            let x = g.param(s, w);
            let t = g.tanh(x);
            Ok(g.sum(t))
        },
        &mut store,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "err = {err}");
}

#[test]
fn grad_check_mse_fixed_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let data = random(&mut rng, 5, 3, 1.0);
    let target = random(&mut rng, 5, 2, 1.0);
    let mut store = ParamStore::new();
    let w = store.add("w", random(&mut rng, 2, 3, 1.0)).unwrap();
    let err = grad_check(
        |g, s| {
            let x = g.constant(data.clone());
            let y = g.constant(target.clone());
            let wn = g.param(s, w);
            let p = g.matmul_t(x, wn)?;
            g.mse(p, y)
        },
        &mut store,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "err = {err}");
}

#[test]
fn grad_check_non_finite_objective_errors() {
    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::filled(1, 1, 800.0)).unwrap();
    let r = grad_check(
        |g, s| {
            let x = g.param(s, w);
            let e = g.exp(x);
            Ok(g.sum(e))
        },
        &mut store,
        1e-5,
    );
    assert!(matches!(r, Err(Error::NonFinite(_))));
}

type Builder = fn(&mut Graph, NodeId, NodeId) -> NodeId;

/// Each case maps two `3 x 4` parameter leaves to a node; the objective is
/// `sum(out * fixed_weights)` so every output entry matters.
fn op_cases() -> Vec<(&'static str, Builder)> {
    vec![
        ("matmul", |g, a, b| {
            let bt = g.transpose(b);
            g.matmul(a, bt).unwrap()
        }),
        ("matmul_t", |g, a, b| g.matmul_t(a, b).unwrap()),
        ("add", |g, a, b| g.add(a, b).unwrap()),
        ("add_row", |g, a, b| {
            let r = g.slice_rows(b, 1, 2).unwrap();
            g.add_row(a, r).unwrap()
        }),
        ("sub", |g, a, b| g.sub(a, b).unwrap()),
        ("hadamard", |g, a, b| g.hadamard(a, b).unwrap()),
        ("scale", |g, a, _| g.scale(a, -1.7)),
        ("offset", |g, a, _| g.offset(a, 0.3)),
        ("tanh", |g, a, _| g.tanh(a)),
        ("sigmoid", |g, a, _| g.sigmoid(a)),
        ("relu", |g, a, _| g.relu(a)),
        ("softplus", |g, a, _| g.softplus(a)),
        ("exp", |g, a, _| {
            let s = g.scale(a, 0.3);
            g.exp(s)
        }),
        ("softmax_rows", |g, a, _| g.softmax_rows(a)),
        ("mean_rows", |g, a, _| g.mean_rows(a)),
        ("neighbor_mean", |g, a, _| {
            g.neighbor_mean(a, Arc::new(vec![vec![1, 2], vec![0], vec![]])).unwrap()
        }),
        ("concat_rows", |g, a, b| g.concat_rows(&[a, b, a]).unwrap()),
        ("concat_cols", |g, a, b| g.concat_cols(&[b, a]).unwrap()),
        ("slice_rows", |g, a, _| g.slice_rows(a, 1, 3).unwrap()),
        ("reshape", |g, a, _| g.reshape(a, 2, 6).unwrap()),
        ("transpose", |g, a, _| g.transpose(a)),
        ("sum", |g, a, _| g.sum(a)),
        ("mse", |g, a, b| g.mse(a, b).unwrap()),
        ("cross_entropy", |g, a, _| {
            let r = g.reshape(a, 1, 12).unwrap();
            g.cross_entropy(r, 5).unwrap()
        }),
    ]
}

fn check_op(name: &str, build: Builder, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let a = store.add("a", random(&mut rng, 3, 4, 10.0)).unwrap();
    let b = store.add("b", random(&mut rng, 3, 4, 10.0)).unwrap();
    let mut probe = Graph::new();
    let (pa, pb) = (probe.param(&store, a), probe.param(&store, b));
    let out = build(&mut probe, pa, pb);
    let shape = probe.value(out).shape();
    let weights = random(&mut rng, shape.0, shape.1, 1.0);
    grad_check(
        |g, s| {
            let (na, nb) = (g.param(s, a), g.param(s, b));
            let o = build(g, na, nb);
            let w = g.constant(weights.clone());
            let h = g.hadamard(o, w)?;
            Ok(g.sum(h))
        },
        &mut store,
        1e-5,
    )
    .unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn every_op_matches_central_differences() {
    for (name, build) in op_cases() {
        for seed in 0..5 {
            let err = check_op(name, build, 100 + seed);
            assert!(err < 1e-5, "{name} seed {seed}: relative error {err}");
        }
    }
}

#[test]
fn backward_accumulates_across_roots() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let w = store.add("w", random(&mut rng, 2, 3, 1.0)).unwrap();
    let x = random(&mut rng, 4, 3, 1.0);

    let build = |g: &mut Graph, s: &ParamStore, which: usize| {
        let wn = g.param(s, w);
        let xn = g.constant(x.clone());
        let h = g.matmul_t(xn, wn).unwrap();
        if which == 0 {
            let t = g.tanh(h);
            g.sum(t)
        } else {
            let e = g.sigmoid(h);
            g.sum(e)
        }
    };

    let mut g = Graph::new();
    let r0 = build(&mut g, &store, 0);
    let r1 = build(&mut g, &store, 1);
    let total = g.add(r0, r1).unwrap();
    g.backward(total, &mut store).unwrap();
    let joint = store.grad(w).clone();

    store.zero_grad();
    for which in 0..2 {
        let mut g = Graph::new();
        let r = build(&mut g, &store, which);
        g.backward(r, &mut store).unwrap();
    }
    assert!(close(joint.data(), store.grad(w).data(), 1e-12));
}

#[test]
fn activations_propagate_nan() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::row_vector(vec![f64::NAN, -1.0, 2.0]));
    for y in [g.relu(x), g.tanh(x), g.sigmoid(x), g.softplus(x), g.exp(x)] {
        assert!(g.value(y).data()[0].is_nan());
    }
    let r = g.relu(x);
    assert_eq!(&g.value(r).data()[1..], &[0.0, 2.0]);
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(values in prop::collection::vec(-10.0f64..10.0, 12)) {
        let mut g = Graph::new();
        let a = g.constant(Tensor::new(3, 4, values).unwrap());
        let s = g.softmax_rows(a);
        let v = g.value(s);
        for r in 0..3 {
            let row = v.row(r);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn forward_is_bitwise_deterministic(values in prop::collection::vec(-10.0f64..10.0, 12)) {
        let run = || {
            let mut g = Graph::new();
            let a = g.constant(Tensor::new(3, 4, values.clone()).unwrap());
            let t = g.tanh(a);
            let s = g.softmax_rows(t);
            let m = g.matmul_t(s, a).unwrap();
            let e = g.softplus(m);
            let total = g.sum(e);
            g.value(total).item().to_bits()
        };
        prop_assert_eq!(run(), run());
    }
}
