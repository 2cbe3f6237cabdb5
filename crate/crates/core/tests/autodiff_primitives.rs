use std::sync::Arc;

use proptest::prelude::*;
use protgnn::autodiff::{
    finite_difference_check, Adam, AdamConfig, ParamStore, SparseMatrix, Tape, Tensor, Var,
};
use protgnn::Result;

const TOL: f64 = 1e-4;
const H: f64 = 1e-6;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-2.0f64..2.0, rows * cols)
        .prop_map(move |v| Tensor::from_vec(rows, cols, v).unwrap())
}

fn positive_matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(0.2f64..3.0, rows * cols)
        .prop_map(move |v| Tensor::from_vec(rows, cols, v).unwrap())
}

/// Projects an arbitrary-shaped output onto a scalar with fixed random-looking
/// coefficients so every output entry contributes.
fn probe(tape: &mut Tape, out: Var) -> Result<Var> {
    let t = tape.value(out).clone();
    let coeffs: Vec<f64> = (0..t.len())
        .map(|i| ((i as f64 + 1.0) * 0.7318).sin() + 0.1)
        .collect();
    let c = tape.constant(Tensor::from_vec(t.rows(), t.cols(), coeffs)?);
    let prod = tape.mul(out, c)?;
    tape.sum(prod)
}

fn check1(x: Tensor, f: impl Fn(&mut Tape, Var) -> Result<Var>) -> f64 {
    let mut store = ParamStore::new();
    let id = store.add("x", x, true);
    finite_difference_check(&mut store, H, 1, |tape, s| {
        let v = tape.param(s, id);
        let out = f(tape, v)?;
        probe(tape, out)
    })
    .unwrap()
    .max_relative_error
}

fn check2(x: Tensor, y: Tensor, f: impl Fn(&mut Tape, Var, Var) -> Result<Var>) -> f64 {
    let mut store = ParamStore::new();
    let a = store.add("a", x, true);
    let b = store.add("b", y, true);
    finite_difference_check(&mut store, H, 1, |tape, s| {
        let va = tape.param(s, a);
        let vb = tape.param(s, b);
        let out = f(tape, va, vb)?;
        probe(tape, out)
    })
    .unwrap()
    .max_relative_error
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn matmul_gradient(a in matrix(3, 4), b in matrix(4, 2)) {
        prop_assert!(check2(a, b, |t, x, y| t.matmul(x, y)) < TOL);
    }

    #[test]
    fn add_sub_mul_gradient(a in matrix(2, 3), b in matrix(2, 3)) {
        prop_assert!(check2(a.clone(), b.clone(), |t, x, y| t.add(x, y)) < TOL);
        prop_assert!(check2(a.clone(), b.clone(), |t, x, y| t.sub(x, y)) < TOL);
        prop_assert!(check2(a, b, |t, x, y| t.mul(x, y)) < TOL);
    }

    #[test]
    fn add_row_gradient(a in matrix(3, 2), r in matrix(1, 2)) {
        prop_assert!(check2(a, r, |t, x, y| t.add_row(x, y)) < TOL);
    }

    #[test]
    fn relu_gradient(a in matrix(3, 3)) {
        prop_assume!(a.values().iter().all(|v| v.abs() > 1e-3));
        prop_assert!(check1(a, |t, x| t.relu(x)) < TOL);
    }

    #[test]
    fn sigmoid_gradient(a in matrix(2, 3)) {
        prop_assert!(check1(a, |t, x| t.sigmoid(x)) < TOL);
    }

    #[test]
    fn log_gradient(a in positive_matrix(2, 3)) {
        prop_assert!(check1(a, |t, x| t.log(x)) < TOL);
    }

    #[test]
    fn scalar_ops_gradient(a in matrix(2, 2)) {
        prop_assert!(check1(a.clone(), |t, x| t.scale(x, -1.7)) < TOL);
        prop_assert!(check1(a, |t, x| t.add_scalar(x, 0.3)) < TOL);
    }

    #[test]
    fn clamp_gradient(a in matrix(3, 2)) {
        prop_assume!(a.values().iter().all(|v| (v - 0.5).abs() > 1e-3));
        prop_assert!(check1(a, |t, x| t.clamp_max(x, 0.5)) < TOL);
    }

    #[test]
    fn concat_gradient(a in matrix(2, 3), b in matrix(2, 2)) {
        prop_assert!(check2(a.clone(), b, |t, x, y| t.concat_cols(&[x, y, x])) < TOL);
        prop_assert!(check2(a.clone(), a, |t, x, y| t.concat_rows(&[x, y])) < TOL);
    }

    #[test]
    fn gather_gradient(a in matrix(4, 3)) {
        prop_assert!(check1(a, |t, x| t.gather_rows(x, &[2, 0, 2, 3])) < TOL);
    }

    #[test]
    fn segment_reductions_gradient(a in matrix(5, 3)) {
        prop_assert!(check1(a.clone(), |t, x| t.segment_sum(x, &[0, 2, 5])) < TOL);
        let ties = (0..3).any(|c| {
            let mut col: Vec<f64> = (0..5).map(|r| a.get(r, c)).collect();
            col.sort_by(|x, y| x.partial_cmp(y).unwrap());
            col.windows(2).any(|w| (w[1] - w[0]).abs() < 1e-3)
        });
        prop_assume!(!ties);
        prop_assert!(check1(a, |t, x| t.segment_max(x, &[0, 2, 5])) < TOL);
    }

    #[test]
    fn sum_mean_gradient(a in matrix(3, 3)) {
        prop_assert!(check1(a.clone(), |t, x| t.sum(x)) < TOL);
        prop_assert!(check1(a, |t, x| t.mean(x)) < TOL);
    }

    #[test]
    fn sq_dist_gradient(a in matrix(3, 4), b in matrix(2, 4)) {
        prop_assert!(check2(a, b, |t, x, y| t.sq_dist(x, y)) < TOL);
    }

    #[test]
    fn cosine_gradient(a in matrix(4, 3)) {
        prop_assume!((0..4).all(|r| a.row(r).iter().map(|v| v * v).sum::<f64>() > 0.1));
        prop_assert!(check1(a, |t, x| t.cosine(x)) < TOL);
    }

    #[test]
    fn masked_min_gradient(a in matrix(3, 4)) {
        let mask = vec![true, false, true, true, false, true, true, false, true, true, true, true];
        let gaps_ok = (0..3).all(|r| {
            let mut vals: Vec<f64> = (0..4).filter(|&c| mask[r * 4 + c]).map(|c| a.get(r, c)).collect();
            vals.sort_by(|x, y| x.partial_cmp(y).unwrap());
            vals.windows(2).all(|w| w[1] - w[0] > 1e-3)
        });
        prop_assume!(gaps_ok);
        prop_assert!(check1(a, move |t, x| t.masked_row_min(x, &mask)) < TOL);
    }

    #[test]
    fn softmax_cross_entropy_gradient(a in matrix(3, 4)) {
        let mut store = ParamStore::new();
        let id = store.add("logits", a, true);
        let err = finite_difference_check(&mut store, H, 1, |tape, s| {
            let v = tape.param(s, id);
            tape.softmax_cross_entropy(v, &[0, 3, 1])
        }).unwrap().max_relative_error;
        prop_assert!(err < TOL);
    }

    #[test]
    fn propagate_gradient(x in matrix(3, 2)) {
        let m = Arc::new(SparseMatrix::from_sorted_triplets(
            3, 3, &[(0, 0, 0.5), (0, 2, 0.25), (1, 1, 1.0), (2, 0, -0.3), (2, 1, 0.7)],
        ));
        prop_assert!(check1(x, move |t, v| t.propagate(m.clone(), v)) < TOL);
    }

    #[test]
    fn weighted_adjacency_gradient(w in prop::collection::vec(0.05f64..1.0, 3)) {
        let edges = [(0, 1), (1, 2), (0, 3)];
        let wt = Tensor::from_vec(3, 1, w).unwrap();
        let err = check1(wt, move |t, v| {
            let a = t.scatter_edges(v, &edges, 4)?;
            t.sym_normalize(a)
        });
        prop_assert!(err < TOL);
    }

    #[test]
    fn weighted_propagate_gradient(
        w in prop::collection::vec(0.0f64..1.0, 4),
        x in matrix(5, 2),
    ) {
        let edges = [(0, 1), (1, 2), (0, 3), (2, 3)];
        let wt = Tensor::from_vec(4, 1, w).unwrap();
        let err = check2(wt, x, move |t, wv, xv| t.weighted_propagate(wv, &edges, xv));
        prop_assert!(err < TOL);
    }

    #[test]
    fn weighted_propagate_matches_dense_form(
        w in prop::collection::vec(0.0f64..1.0, 4),
        x in matrix(5, 2),
    ) {
        let edges = [(0, 1), (1, 2), (0, 3), (2, 3)];
        let mut t = Tape::new();
        let wv = t.constant(Tensor::from_vec(4, 1, w).unwrap());
        let xv = t.constant(x);
        let sparse = t.weighted_propagate(wv, &edges, xv).unwrap();
        let a = t.scatter_edges(wv, &edges, 5).unwrap();
        let a = t.sym_normalize(a).unwrap();
        let dense = t.matmul(a, xv).unwrap();
        for (s, d) in t.value(sparse).values().iter().zip(t.value(dense).values()) {
            prop_assert!((s - d).abs() < 1e-12);
        }
    }
}

#[test]
fn relu_values_and_mask() {
    let mut tape = Tape::new();
    let mut store = ParamStore::new();
    let id = store.add("x", Tensor::row_vector(vec![-1.0, 0.0, 2.0]), true);
    let p = tape.param(&store, id);
    let y = tape.relu(p).unwrap();
    assert_eq!(tape.value(y).values(), &[0.0, 0.0, 2.0]);
    let s = tape.sum(y).unwrap();
    tape.backward_into(s, &mut store).unwrap();
    assert_eq!(store.grad(id).values(), &[0.0, 0.0, 1.0]);
}

#[test]
fn sigmoid_at_zero() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::scalar(0.0));
    let y = tape.sigmoid(x).unwrap();
    assert_eq!(tape.value(y).item(), 0.5);
}

#[test]
fn cross_entropy_of_uniform_logits_is_ln2() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::row_vector(vec![0.0, 0.0]));
    let y = tape.softmax_cross_entropy(x, &[0]).unwrap();
    assert!((tape.value(y).item() - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn reuse_accumulates_gradients() {
    // f(x) = sum(x * c1) + sum(x * c2): gradient is c1 + c2.
    let mut store = ParamStore::new();
    let id = store.add("x", Tensor::row_vector(vec![0.5, -0.5]), true);
    let single = |c: [f64; 2]| {
        let mut s = store.clone();
        let mut tape = Tape::new();
        let x = tape.param(&s, id);
        let k = tape.constant(Tensor::row_vector(c.to_vec()));
        let prod = tape.mul(x, k).unwrap();
        let out = tape.sum(prod).unwrap();
        tape.backward_into(out, &mut s).unwrap();
        s.grad(id).clone()
    };
    let g1 = single([1.0, 2.0]);
    let g2 = single([3.0, -1.0]);

    let mut tape = Tape::new();
    let x = tape.param(&store, id);
    let k1 = tape.constant(Tensor::row_vector(vec![1.0, 2.0]));
    let k2 = tape.constant(Tensor::row_vector(vec![3.0, -1.0]));
    let p1 = tape.mul(x, k1).unwrap();
    let p2 = tape.mul(x, k2).unwrap();
    let s1 = tape.sum(p1).unwrap();
    let s2 = tape.sum(p2).unwrap();
    let out = tape.add(s1, s2).unwrap();
    tape.backward_into(out, &mut store).unwrap();
    let mut expected = g1;
    expected.add_assign(&g2);
    assert_eq!(store.grad(id), &expected);
}

#[test]
fn adam_is_order_invariant_within_a_step() {
    let build = |first: f64, second: f64| {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::row_vector(vec![0.1, 0.2]), true);
        for c in [first, second] {
            let mut tape = Tape::new();
            let x = tape.param(&store, id);
            let sc = tape.scale(x, c).unwrap();
            let out = tape.sum(sc).unwrap();
            tape.backward_into(out, &mut store).unwrap();
        }
        let mut adam = Adam::new(AdamConfig::default(), &store);
        adam.step(&mut store).unwrap();
        store
    };
    assert_eq!(build(0.3, -2.0), build(-2.0, 0.3));
}

#[test]
fn adam_runs_are_deterministic() {
    let run = || {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::row_vector(vec![1.0, -3.0, 0.25]), true);
        let mut adam = Adam::new(AdamConfig::default(), &store);
        for _ in 0..50 {
            let mut tape = Tape::new();
            let x = tape.param(&store, id);
            let sq = tape.mul(x, x).unwrap();
            let out = tape.sum(sq).unwrap();
            tape.backward_into(out, &mut store).unwrap();
            adam.step(&mut store).unwrap();
        }
        store
    };
    assert_eq!(run(), run());
}

#[test]
fn shape_mismatch_is_reported() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(2, 3));
    let b = tape.constant(Tensor::zeros(2, 3));
    assert!(tape.matmul(a, b).is_err());
    let c = tape.constant(Tensor::zeros(3, 2));
    assert!(tape.add(a, c).is_err());
}

#[test]
fn non_finite_output_is_an_error() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::scalar(0.0));
    let err = tape.log(a).unwrap_err();
    assert!(err.is_numeric());
}
