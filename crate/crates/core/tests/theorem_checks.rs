use proptest::prelude::*;
use protgnn::autodiff::{ParamStore, Tensor};
use protgnn::encoder::{EncodeInput, Encoder, EncoderConfig, Readout};
use protgnn::graph::Graph;
use protgnn::prototype::{similarity, PrototypeLayer, DEFAULT_EPS_SIM};
use protgnn::sampler::{sampled_views, EdgeScorer, EdgeWeighting};
use protgnn::theorem::{check_theorem, scan_dataset, slack, theta, threshold, TheoremReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const D: usize = 4;
const M: usize = 3;
const C: usize = 3;

struct Fixture {
    store: ParamStore,
    encoder: Encoder,
    layer: PrototypeLayer,
    scorer: EdgeScorer,
}

fn fixture(seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let cfg = EncoderConfig {
        num_layers: 2,
        input_dim: 2,
        hidden_dim: 6,
        embed_dim: D,
        readout: Readout::Sum,
    };
    let encoder = Encoder::new(cfg, &mut store, &mut rng).unwrap();
    let layer = PrototypeLayer::new(C, M, D, DEFAULT_EPS_SIM, &mut store, &mut rng).unwrap();
    let scorer = EdgeScorer::new(D, &mut store, &mut rng);
    Fixture {
        store,
        encoder,
        layer,
        scorer,
    }
}

fn random_graph(rng: &mut ChaCha8Rng) -> Graph {
    let n = rng.gen_range(4..10);
    let mut edges: Vec<(usize, usize)> = (1..n).map(|v| (rng.gen_range(0..v), v)).collect();
    for u in 0..n {
        for v in u + 1..n {
            if !edges.contains(&(u, v)) && rng.gen_bool(0.2) {
                edges.push((u, v));
            }
        }
    }
    let x = (0..n * 2).map(|_| rng.gen_range(0.0..1.0)).collect();
    Graph::new(n, edges, Tensor::from_vec(n, 2, x).unwrap()).unwrap()
}

fn unit(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..D).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Prototypes of class `label` at distance `near` from `h`, the rest at `far`.
fn place_prototypes(
    f: &mut Fixture,
    h: &[f64],
    label: usize,
    near: f64,
    far: f64,
    rng: &mut ChaCha8Rng,
) {
    for j in 0..C * M {
        let r = if f.layer.class_of(j) == label {
            near
        } else {
            far
        };
        let dir = unit(rng);
        let row: Vec<f64> = h.iter().zip(&dir).map(|(a, d)| a + r * d).collect();
        f.store
            .value_mut(f.layer.prototypes)
            .row_mut(j)
            .copy_from_slice(&row);
    }
}

fn set_output_bias(f: &mut Fixture, b: f64) {
    let id = f.store.find("sampler.layer2.bias").unwrap();
    f.store.value_mut(id).values_mut()[0] = b;
}

/// Bounds and bookkeeping every report must satisfy.
fn check_report(
    r: &TheoremReport,
    f: &Fixture,
    input: EncodeInput<'_>,
    weighting: EdgeWeighting<'_>,
) {
    let h = f.encoder.embed(&f.store, input).unwrap();
    let views = sampled_views(&f.store, &f.encoder, &f.layer, weighting, input).unwrap();
    for k in 0..C {
        let shift: f64 = f
            .layer
            .prototypes_of_class(k)
            .map(|j| {
                let p = f.layer.prototype(&f.store, j);
                similarity(p, &views[j].embedding, DEFAULT_EPS_SIM)
                    - similarity(p, &h, DEFAULT_EPS_SIM)
            })
            .sum();
        assert!((r.score_shifts[k] - shift).abs() < 1e-9);
        let bound = M as f64 * slack(r.delta);
        if r.class_premises[k] {
            if k == r.label {
                assert!(shift >= -bound, "class {k}: shift {shift} below -{bound}");
            } else {
                assert!(shift <= bound, "class {k}: shift {shift} above {bound}");
            }
        }
    }
    assert!(r.bound_violations.is_empty());
    assert!(r.verdict, "theorem falsified: {r:?}");
    assert_eq!(r.threshold, threshold(M, r.delta));
    if r.applicable {
        assert_eq!(r.protgnn_plus_pred, r.label);
        assert_eq!(r.protgnn_pred, r.label);
    }
}

#[test]
fn threshold_closed_forms() {
    assert!((threshold(5, 0.5) - 8.1093).abs() < 1e-4);
    assert!((threshold(5, 0.5) - 10.0 * 2.25f64.ln()).abs() < 1e-12);
    assert!((threshold(5, 1e-6) - 10.0 * 2f64.ln()).abs() < 1e-3);
    assert!((theta(0.5) - (1.0 - 1.0 / 1.5f64.sqrt())).abs() < 1e-15);
    assert!((theta(0.1) - (1.1f64.sqrt() - 1.0)).abs() < 1e-15);
    for d in [0.01, 0.1, 0.5, 0.9, 0.99] {
        assert!(threshold(3, d) > 0.0);
    }
}

#[test]
fn unit_weights_satisfy_premises_and_keep_the_prediction() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for seed in 0..10 {
        let mut f = fixture(seed);
        let g = random_graph(&mut rng);
        let input = EncodeInput::graph(&g);
        let h = f.encoder.embed(&f.store, input).unwrap();
        let label = seed as usize % C;
        place_prototypes(&mut f, &h, label, 0.1, 2.0, &mut rng);
        let r = check_theorem(
            &f.store,
            &f.encoder,
            &f.layer,
            EdgeWeighting::AllOnes,
            input,
            label,
            0.5,
        )
        .unwrap();
        assert!(r.premises_hold);
        assert!(r.top2_gap >= r.threshold);
        assert!(r.applicable);
        assert_eq!(r.protgnn_plus_logits, r.protgnn_logits);
        assert!(r.score_shifts.iter().all(|&s| s == 0.0));
        check_report(&r, &f, input, EdgeWeighting::AllOnes);
    }
}

#[test]
fn scan_with_unit_weights_never_flips() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let f = fixture(7);
    let graphs: Vec<Graph> = (0..30).map(|_| random_graph(&mut rng)).collect();
    let items: Vec<_> = graphs
        .iter()
        .enumerate()
        .map(|(i, g)| (i, EncodeInput::graph(g), i % C))
        .collect();
    for delta in [0.1, 0.5, 0.9] {
        let s = scan_dataset(
            &f.store,
            &f.encoder,
            &f.layer,
            EdgeWeighting::AllOnes,
            &items,
            delta,
        )
        .unwrap();
        assert_eq!(s.instances, 30);
        assert!(s.counterexamples.is_empty());
        assert!(s.bound_violations.is_empty());
        if s.correctly_classified > 0 {
            assert_eq!(s.implication_fraction, 1.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn learned_weights_never_falsify_the_theorem(
        seed in 0u64..10_000,
        bias in 0.0f64..14.0,
        near in 0.02f64..0.7,
        far in 0.3f64..3.0,
        delta in 0.05f64..0.95,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = fixture(seed);
        set_output_bias(&mut f, bias);
        let g = random_graph(&mut rng);
        let input = EncodeInput::graph(&g);
        let h = f.encoder.embed(&f.store, input).unwrap();
        let label = seed as usize % C;
        place_prototypes(&mut f, &h, label, near, far, &mut rng);
        let scorer = f.scorer.clone();
        let w = EdgeWeighting::Learned(&scorer);
        let r = check_theorem(&f.store, &f.encoder, &f.layer, w, input, label, delta).unwrap();
        check_report(&r, &f, input, w);
    }
}

#[test]
fn near_saturated_scorer_exercises_the_premises() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut applicable = 0;
    for seed in 0..40 {
        let mut f = fixture(seed);
        set_output_bias(&mut f, 4.0 + (seed % 8) as f64);
        let g = random_graph(&mut rng);
        let input = EncodeInput::graph(&g);
        let h = f.encoder.embed(&f.store, input).unwrap();
        let label = seed as usize % C;
        place_prototypes(&mut f, &h, label, 0.2, 1.5, &mut rng);
        let scorer = f.scorer.clone();
        let w = EdgeWeighting::Learned(&scorer);
        let r = check_theorem(&f.store, &f.encoder, &f.layer, w, input, label, 0.5).unwrap();
        check_report(&r, &f, input, w);
        applicable += r.applicable as usize;
    }
    assert!(
        applicable >= 20,
        "only {applicable} instances met every premise"
    );
}

#[test]
fn structural_preconditions_are_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut f = fixture(0);
    let g = random_graph(&mut rng);
    let input = EncodeInput::graph(&g);
    for bad in [0.0, 1.0, -0.2, 1.5, f64::NAN] {
        assert!(check_theorem(
            &f.store,
            &f.encoder,
            &f.layer,
            EdgeWeighting::AllOnes,
            input,
            0,
            bad
        )
        .is_err());
    }
    assert!(check_theorem(
        &f.store,
        &f.encoder,
        &f.layer,
        EdgeWeighting::AllOnes,
        input,
        C,
        0.5
    )
    .is_err());
    f.store.value_mut(f.layer.final_layer).values_mut()[1] = -0.5;
    assert!(check_theorem(
        &f.store,
        &f.encoder,
        &f.layer,
        EdgeWeighting::AllOnes,
        input,
        0,
        0.5
    )
    .is_err());
}
