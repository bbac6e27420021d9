use std::sync::Arc;

use proptest::prelude::*;
use seirgrad::autodiff::{grad_check, CsrMatrix, Tape, Tensor, Var};

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-5;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-2.0..2.0f64, rows * cols)
        .prop_map(move |v| Tensor::matrix(rows, cols, v).unwrap())
}

/// Weighted sum so every output coordinate gets a distinct upstream gradient.
fn weighted_sum(tape: &mut Tape, x: Var) -> seirgrad::Result<Var> {
    let shape = tape.value(x).shape().to_vec();
    let n = tape.value(x).len();
    let w = Tensor::new(shape, (0..n).map(|i| 0.3 + 0.17 * i as f64).collect())?;
    let w = tape.constant(w);
    let p = tape.mul(x, w)?;
    Ok(tape.sum(p))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn matmul_gradients(a in matrix(3, 4), b in matrix(4, 2)) {
        let err = grad_check(|t, v| { let c = t.matmul(v[0], v[1])?; weighted_sum(t, c) }, &[a, b], EPS).unwrap();
        prop_assert!(err < TOL, "{err}");
    }

    #[test]
    fn elementwise_binary_gradients(a in matrix(3, 2), b in matrix(3, 2)) {
        for op in 0..3 {
            let err = grad_check(|t, v| {
                let c = match op { 0 => t.add(v[0], v[1])?, 1 => t.sub(v[0], v[1])?, _ => t.mul(v[0], v[1])? };
                weighted_sum(t, c)
            }, &[a.clone(), b.clone()], EPS).unwrap();
            prop_assert!(err < TOL, "op {op}: {err}");
        }
    }

    #[test]
    fn activation_gradients(a in matrix(4, 3)) {
        prop_assume!(a.values().iter().all(|v| v.abs() > 1e-3));
        for op in 0..3 {
            let err = grad_check(|t, v| {
                let c = match op { 0 => t.sigmoid(v[0]), 1 => t.tanh(v[0]), _ => t.relu(v[0]) };
                weighted_sum(t, c)
            }, std::slice::from_ref(&a), EPS).unwrap();
            prop_assert!(err < TOL, "op {op}: {err}");
        }
    }

    #[test]
    fn softmax_rows_gradients(a in matrix(5, 3)) {
        let err = grad_check(|t, v| { let s = t.softmax_rows(v[0])?; weighted_sum(t, s) }, &[a], EPS).unwrap();
        prop_assert!(err < TOL, "{err}");
    }

    #[test]
    fn softmax_rows_normalized(a in matrix(5, 3)) {
        let mut tape = Tape::new();
        let x = tape.constant(a);
        let s = tape.softmax_rows(x).unwrap();
        let v = tape.value(s);
        for r in 0..5 {
            let sum: f64 = (0..3).map(|c| v.get(r, c)).sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!((0..3).all(|c| v.get(r, c) > 0.0 && v.get(r, c) < 1.0));
        }
    }

    #[test]
    fn concat_slice_gradients(a in matrix(2, 2), b in matrix(1, 2), c in matrix(3, 2)) {
        let err = grad_check(|t, v| {
            let cat = t.concat_rows(v)?;
            let s = t.slice_rows(cat, 1, 4)?;
            weighted_sum(t, s)
        }, &[a, b, c], EPS).unwrap();
        prop_assert!(err < TOL, "{err}");
    }

    #[test]
    fn mse_gradients(p in matrix(3, 2), q in matrix(3, 2)) {
        let err = grad_check(|t, v| t.mse(v[0], v[1]), &[p, q], EPS).unwrap();
        prop_assert!(err < TOL, "{err}");
    }

    #[test]
    fn misc_gradients(a in matrix(3, 3), b in matrix(3, 1)) {
        let err = grad_check(|t, v| {
            let x = t.add_column(v[0], v[1])?;
            let y = t.transpose(x)?;
            let z = t.scale(y, -1.7);
            let g = t.gather_cols(z, &[2, 0, 2])?;
            weighted_sum(t, g)
        }, &[a, b], EPS).unwrap();
        prop_assert!(err < TOL, "{err}");
    }

    #[test]
    fn add_row_gradients(a in matrix(4, 3), b in matrix(1, 3)) {
        let err = grad_check(|t, v| { let x = t.add_row(v[0], v[1])?; weighted_sum(t, x) }, &[a, b], EPS).unwrap();
        prop_assert!(err < TOL, "{err}");
    }

    #[test]
    fn cross_entropy_gradients(a in matrix(4, 5)) {
        let err = grad_check(|t, v| t.cross_entropy(v[0], &[0, 3, 4, 1]), &[a], EPS).unwrap();
        prop_assert!(err < TOL, "{err}");
    }

    #[test]
    fn sparse_matmul_gradients(x in matrix(4, 2)) {
        let sp = Arc::new(CsrMatrix::from_triplets(3, 4, &[(0, 1, 0.5), (1, 0, 2.0), (2, 3, -1.0), (2, 1, 1.5)]).unwrap());
        let err = grad_check(|t, v| { let y = t.sparse_matmul(sp.clone(), v[0])?; weighted_sum(t, y) }, &[x], EPS).unwrap();
        prop_assert!(err < TOL, "{err}");
    }

    #[test]
    fn sym_normalize_gradients(a in prop::collection::vec(0.0..2.0f64, 9)) {
        // symmetric non-negative input, as produced by SᵀAS
        let mut s = vec![0.0; 9];
        for i in 0..3 { for j in 0..3 { s[i * 3 + j] = 0.5 * (a[i * 3 + j] + a[j * 3 + i]); } }
        let x = Tensor::matrix(3, 3, s).unwrap();
        let err = grad_check(|t, v| { let y = t.sym_normalize(v[0])?; weighted_sum(t, y) }, &[x], EPS).unwrap();
        prop_assert!(err < TOL, "{err}");
    }

    #[test]
    fn gradients_are_linear_in_the_loss(a in matrix(3, 3), b in matrix(3, 3)) {
        let build = |tape: &mut Tape, which: u8| {
            let x = tape.leaf(a.clone());
            let y = tape.leaf(b.clone());
            let p = tape.matmul(x, y).unwrap();
            let q = tape.tanh(x);
            let l1 = tape.sum(p);
            let l2 = tape.mse(q, y).unwrap();
            let loss = match which { 0 => l1, 1 => l2, _ => tape.add(l1, l2).unwrap() };
            let g = tape.backward(loss).unwrap();
            (g.get(x), g.get(y))
        };
        let (ax, ay) = build(&mut Tape::new(), 0);
        let (bx, by) = build(&mut Tape::new(), 1);
        let (cx, cy) = build(&mut Tape::new(), 2);
        for (i, v) in cx.values().iter().enumerate() {
            prop_assert!((v - ax.values()[i] - bx.values()[i]).abs() < 1e-12);
        }
        for (i, v) in cy.values().iter().enumerate() {
            prop_assert!((v - ay.values()[i] - by.values()[i]).abs() < 1e-12);
        }
    }
}

#[test]
fn sigmoid_derivative_at_zero() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(0.0).unwrap());
    let s = tape.sigmoid(x);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).item(), 0.25);
    let err = grad_check(|t, v| Ok(t.sigmoid(v[0])), &[Tensor::scalar(0.0).unwrap()], EPS).unwrap();
    assert!(err < 1e-9);
}

#[test]
fn matmul_sum_gradient_matches_fd() {
    let a = Tensor::matrix(2, 3, vec![0.1, -0.4, 1.3, 0.7, -1.1, 0.2]).unwrap();
    let b = Tensor::matrix(3, 2, vec![1.5, -0.2, 0.3, 0.9, -0.6, 0.4]).unwrap();
    let err = grad_check(|t, v| { let c = t.matmul(v[0], v[1])?; Ok(t.sum(c)) }, &[a, b], EPS).unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn replay_is_bit_identical() {
    let run = || {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(2, 2, vec![0.3, -0.8, 1.1, 0.05]).unwrap());
        let y = tape.matmul(x, x).unwrap();
        let z = tape.sigmoid(y);
        let l = tape.sum(z);
        let g = tape.backward(l).unwrap();
        (tape.value(l).clone(), g.get(x))
    };
    let (l1, g1) = run();
    let (l2, g2) = run();
    assert_eq!(l1.values()[0].to_bits(), l2.values()[0].to_bits());
    assert!(g1.values().iter().zip(g2.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
}
