use proptest::prelude::*;
use protgnn::autodiff::{finite_difference_check, ParamStore, Tensor};
use protgnn::encoder::{EncodeInput, Encoder, EncoderConfig, GraphBatch, Readout};
use protgnn::graph::Graph;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const IN: usize = 3;

fn graph_strategy() -> impl Strategy<Value = Graph> {
    (2usize..=7)
        .prop_flat_map(|n| {
            let pairs: Vec<(usize, usize)> = (0..n)
                .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
                .collect();
            let k = pairs.len();
            (
                Just(n),
                Just(pairs),
                prop::collection::vec(any::<bool>(), k),
                prop::collection::vec(-1.0f64..1.0, n * IN),
            )
        })
        .prop_map(|(n, pairs, keep, x)| {
            let edges = pairs
                .into_iter()
                .zip(keep)
                .filter(|(_, k)| *k)
                .map(|(e, _)| e)
                .collect();
            Graph::new(n, edges, Tensor::from_vec(n, IN, x).unwrap()).unwrap()
        })
}

fn encoder(readout: Readout, seed: u64) -> (Encoder, ParamStore) {
    let mut store = ParamStore::new();
    let cfg = EncoderConfig {
        num_layers: 3,
        input_dim: IN,
        hidden_dim: 5,
        embed_dim: 4,
        readout,
    };
    let enc = Encoder::new(cfg, &mut store, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (enc, store)
}

fn dense_matmul(a: &[Vec<f64>], b: &Tensor) -> Vec<Vec<f64>> {
    a.iter()
        .map(|row| {
            (0..b.cols())
                .map(|j| row.iter().enumerate().map(|(k, x)| x * b.get(k, j)).sum())
                .collect()
        })
        .collect()
}

/// Node embeddings from dense matrices: relu(Ã H W) per layer, where the
/// off-diagonal entries of A + I are scaled by `w`.
fn dense_gcn(
    g: &Graph,
    w: &dyn Fn(usize, usize) -> f64,
    enc: &Encoder,
    store: &ParamStore,
) -> Vec<Vec<f64>> {
    let n = g.num_nodes();
    let mut a = vec![vec![0.0; n]; n];
    for (v, row) in a.iter_mut().enumerate() {
        row[v] = 1.0;
    }
    for &(u, v) in g.edges() {
        a[u][v] = w(u, v);
        a[v][u] = w(u, v);
    }
    let d: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    let norm: Vec<Vec<f64>> = (0..n)
        .map(|u| (0..n).map(|v| a[u][v] / (d[u] * d[v]).sqrt()).collect())
        .collect();
    let mut h: Vec<Vec<f64>> = (0..n).map(|v| g.features().row(v).to_vec()).collect();
    for &id in enc.weights() {
        let hw = dense_matmul(&h, store.value(id));
        let hw = Tensor::from_rows(&hw).unwrap();
        h = dense_matmul(&norm, &hw)
            .into_iter()
            .map(|r| r.into_iter().map(|x: f64| x.max(0.0)).collect())
            .collect();
    }
    h
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matches_dense_oracle(g in graph_strategy(), seed in 0u64..1000) {
        for readout in [Readout::Sum, Readout::Max] {
            let (enc, store) = encoder(readout, seed);
            let (h, z) = enc.encode_graph(&store, EncodeInput::graph(&g), None).unwrap();
            let oracle = dense_gcn(&g, &|_, _| 1.0, &enc, &store);
            for (v, row) in oracle.iter().enumerate() {
                prop_assert!(close(z.row(v), row, 1e-12));
            }
            let pooled: Vec<f64> = (0..4)
                .map(|c| {
                    let col = oracle.iter().map(|r| r[c]);
                    match readout {
                        Readout::Sum => col.sum(),
                        _ => col.fold(f64::NEG_INFINITY, f64::max),
                    }
                })
                .collect();
            prop_assert!(close(&h, &pooled, 1e-12));
        }
    }

    #[test]
    fn weighted_forward_matches_dense_oracle(
        g in graph_strategy(),
        raw in prop::collection::vec(0.0f64..=1.0, 21),
        seed in 0u64..1000,
    ) {
        let (enc, store) = encoder(Readout::Sum, seed);
        let n = g.num_nodes();
        let mut m = Tensor::zeros(n, n);
        for (i, &(u, v)) in g.edges().iter().enumerate() {
            m.set(u, v, raw[i]);
            m.set(v, u, raw[i]);
        }
        let (_, z) = enc.encode_graph(&store, EncodeInput::graph(&g), Some(&m)).unwrap();
        let oracle = dense_gcn(&g, &|u, v| m.get(u, v), &enc, &store);
        for (v, row) in oracle.iter().enumerate() {
            prop_assert!(close(z.row(v), row, 1e-12));
        }
    }

    #[test]
    fn permutation_equivariance(g in graph_strategy(), seed in 0u64..1000) {
        let n = g.num_nodes();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let edges = g
            .edges()
            .iter()
            .map(|&(u, v)| (perm[u].min(perm[v]), perm[u].max(perm[v])))
            .collect();
        let mut x = Tensor::zeros(n, IN);
        for v in 0..n {
            x.row_mut(perm[v]).copy_from_slice(g.features().row(v));
        }
        let pg = Graph::new(n, edges, x).unwrap();
        for readout in [Readout::Sum, Readout::Max] {
            let (enc, store) = encoder(readout, seed);
            let (h, z) = enc.encode_graph(&store, EncodeInput::graph(&g), None).unwrap();
            let (ph, pz) = enc.encode_graph(&store, EncodeInput::graph(&pg), None).unwrap();
            for v in 0..n {
                prop_assert!(close(z.row(v), pz.row(perm[v]), 1e-12));
            }
            prop_assert!(close(&h, &ph, 1e-12));
        }
        let (enc, store) = encoder(Readout::Center, seed);
        let c = seed as usize % n;
        let h = enc.embed(&store, EncodeInput::centered(&g, c)).unwrap();
        let ph = enc.embed(&store, EncodeInput::centered(&pg, perm[c])).unwrap();
        prop_assert!(close(&h, &ph, 1e-12));
    }

    #[test]
    fn unit_and_zero_weights_are_the_two_limits(g in graph_strategy(), seed in 0u64..1000) {
        let (enc, store) = encoder(Readout::Max, seed);
        let n = g.num_nodes();
        let input = EncodeInput::graph(&g);
        let mut ones = Tensor::filled(n, n, 1.0);
        for v in 0..n {
            ones.set(v, v, 0.0);
        }
        let plain = enc.encode_graph(&store, input, None).unwrap();
        let unit = enc.encode_graph(&store, input, Some(&ones)).unwrap();
        prop_assert_eq!(plain.0, unit.0);
        prop_assert_eq!(plain.1, unit.1);

        let edgeless = Graph::new(n, vec![], g.features().clone()).unwrap();
        let empty = enc.encode_graph(&store, EncodeInput::graph(&edgeless), None).unwrap();
        let zero = enc.encode_graph(&store, input, Some(&Tensor::zeros(n, n))).unwrap();
        prop_assert!(close(&empty.0, &zero.0, 1e-15));
    }

    #[test]
    fn weighted_forward_is_continuous(g in graph_strategy(), seed in 0u64..1000, base in 0.0f64..1.0) {
        prop_assume!(g.num_edges() > 0);
        let (enc, store) = encoder(Readout::Sum, seed);
        let n = g.num_nodes();
        let mut m = Tensor::zeros(n, n);
        for &(u, v) in g.edges() {
            m.set(u, v, base);
            m.set(v, u, base);
        }
        let (h0, _) = enc.encode_graph(&store, EncodeInput::graph(&g), Some(&m)).unwrap();
        let (u, v) = g.edges()[seed as usize % g.num_edges()];
        let e = (base + 1e-6).min(1.0);
        m.set(u, v, e);
        m.set(v, u, e);
        let (h1, _) = enc.encode_graph(&store, EncodeInput::graph(&g), Some(&m)).unwrap();
        let dist: f64 = h0.iter().zip(&h1).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        prop_assert!(dist <= 1e-3);
    }
}

#[test]
fn encoder_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for trial in 0..20u64 {
        let n = rng.gen_range(2..=7);
        let edges = (0..n)
            .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
            .filter(|_| rng.gen_bool(0.5))
            .collect::<Vec<_>>();
        let x: Vec<f64> = (0..n * IN).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = Graph::new(n, edges, Tensor::from_vec(n, IN, x).unwrap()).unwrap();
        let readout = if trial % 2 == 0 {
            Readout::Sum
        } else {
            Readout::Max
        };
        let (enc, mut store) = encoder(readout, rng.gen());
        let batch = GraphBatch::new(&[EncodeInput::graph(&g)]).unwrap();
        let report = finite_difference_check(&mut store, 1e-6, 1, |tape, s| {
            let out = enc.forward(tape, s, &batch)?;
            let c = tape.constant(Tensor::row_vector(vec![0.3, -0.7, 1.1, 0.5]));
            let prod = tape.mul(out.graph, c)?;
            tape.sum(prod)
        })
        .unwrap();
        worst = worst.max(report.max_relative_error);
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn parameter_count_depends_only_on_dims() {
    let (a, sa) = encoder(Readout::Sum, 0);
    let (b, sb) = encoder(Readout::Sum, 1);
    assert_eq!(a.config, b.config);
    assert_eq!(sa.num_values(), sb.num_values());
    assert_eq!(sa.num_values(), IN * 5 + 5 * 5 + 5 * 4);
}
