//! Forward-value checks against independent brute-force oracles, plus
//! the softmax normalization invariants.

use datn_core::rng::{seeded, uniform_tensor};
use datn_core::{Graph, Tensor};
use proptest::prelude::*;

/// Triple-loop reference product, kept separate from the graph kernels.
fn matmul_oracle(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a.data()[i * k + p] * b.data()[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

#[test]
fn random_matmul_matches_triple_loop() {
    let mut rng = seeded(7);
    let a = uniform_tensor(&mut rng, &[4, 3], -2.0, 2.0);
    let b = uniform_tensor(&mut rng, &[3, 5], -2.0, 2.0);
    let expected = matmul_oracle(&a, &b);
    let mut g = Graph::new();
    let an = g.input(a);
    let bn = g.input(b);
    let c = g.matmul(an, bn).unwrap();
    for (got, want) in g.value(c).data().iter().zip(&expected) {
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn add_col_vec_adds_vector_to_each_column() {
    let mut g = Graph::new();
    let m = g.input(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
    let v = g.input(Tensor::vector(vec![10.0, 20.0]));
    let out = g.add_col_vec(m, v).unwrap();
    assert_eq!(
        g.value(out).data(),
        &[11.0, 12.0, 13.0, 24.0, 25.0, 26.0]
    );
}

#[test]
fn flatten_map_orders_regions_row_major() {
    // 2x2 single-channel map [[1,2],[3,4]] -> regions [1],[2],[3],[4].
    let mut g = Graph::new();
    let m = g.input(Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let flat = g.flatten_map(m).unwrap();
    assert_eq!(g.value(flat).shape(), &[4, 1]);
    assert_eq!(g.value(flat).data(), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn conv2d_matches_direct_loop_on_small_case() {
    let mut rng = seeded(11);
    let input = uniform_tensor(&mut rng, &[2, 4, 4], -1.0, 1.0);
    let weight = uniform_tensor(&mut rng, &[3, 2, 2, 2], -1.0, 1.0);
    let bias = uniform_tensor(&mut rng, &[3], -0.5, 0.5);

    // Independent direct evaluation at a few output positions.
    let eval = |o: usize, oy: usize, ox: usize| {
        let mut acc = bias.data()[o];
        for c in 0..2 {
            for ky in 0..2 {
                for kx in 0..2 {
                    acc += input.data()[(c * 4 + oy * 2 + ky) * 4 + ox * 2 + kx]
                        * weight.data()[((o * 2 + c) * 2 + ky) * 2 + kx];
                }
            }
        }
        acc
    };

    let mut g = Graph::new();
    let i = g.input(input.clone());
    let w = g.input(weight.clone());
    let b = g.input(bias.clone());
    let out = g.conv2d(i, w, b, 2).unwrap();
    assert_eq!(g.value(out).shape(), &[3, 2, 2]);
    for o in 0..3 {
        for oy in 0..2 {
            for ox in 0..2 {
                let got = g.value(out).data()[(o * 2 + oy) * 2 + ox];
                assert!((got - eval(o, oy, ox)).abs() < 1e-12);
            }
        }
    }
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(vals in proptest::collection::vec(-30.0f64..30.0, 12)) {
        let mut g = Graph::new();
        let m = g.input(Tensor::matrix(3, 4, vals).unwrap());
        let s = g.softmax_rows(m).unwrap();
        for i in 0..3 {
            let mut total = 0.0;
            for j in 0..4 {
                let v = g.value(s).at2(i, j);
                prop_assert!(v >= 0.0);
                total += v;
            }
            prop_assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn softmax_is_shift_invariant(vals in proptest::collection::vec(-20.0f64..20.0, 6), c in -50.0f64..50.0) {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vals.clone()));
        let s1 = g.softmax_vec(x).unwrap();
        let shifted = g.input(Tensor::vector(vals.iter().map(|v| v + c).collect()));
        let s2 = g.softmax_vec(shifted).unwrap();
        for (a, b) in g.value(s1).data().iter().zip(g.value(s2).data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn log_softmax_agrees_with_log_of_softmax(vals in proptest::collection::vec(-20.0f64..20.0, 8)) {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vals));
        let s = g.softmax_vec(x).unwrap();
        let ls = g.log_softmax_vec(x).unwrap();
        for (p, lp) in g.value(s).data().iter().zip(g.value(ls).data()) {
            prop_assert!((p.ln() - lp).abs() < 1e-9);
        }
    }
}
