use proptest::prelude::*;
use protgnn::autodiff::Tensor;
use protgnn::graph::{
    ba_shapes_dataset, generate_ba_shapes, generate_motif_dataset, load_dataset, save_dataset,
    split_dataset, BaShapesParams, Graph, MotifParams, Task,
};

fn graph_strategy(max_nodes: usize) -> impl Strategy<Value = Graph> {
    (1..=max_nodes)
        .prop_flat_map(|n| {
            let pairs: Vec<(usize, usize)> = (0..n)
                .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
                .collect();
            let k = pairs.len();
            (
                Just(n),
                Just(pairs),
                prop::collection::vec(any::<bool>(), k),
            )
        })
        .prop_map(|(n, pairs, keep)| {
            let edges = pairs
                .into_iter()
                .zip(keep)
                .filter(|(_, k)| *k)
                .map(|(e, _)| e)
                .collect();
            Graph::new(
                n,
                edges,
                Tensor::from_vec(n, 1, (0..n).map(|r| r as f64).collect()).unwrap(),
            )
            .unwrap()
        })
}

fn dense_adjacency(g: &Graph) -> Vec<Vec<f64>> {
    let n = g.num_nodes();
    let mut a = vec![vec![0.0; n]; n];
    for &(u, v) in g.edges() {
        a[u][v] = 1.0;
        a[v][u] = 1.0;
    }
    a
}

/// All-pairs hop distances by Floyd-Warshall.
fn hop_distances(g: &Graph) -> Vec<Vec<usize>> {
    let n = g.num_nodes();
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for (v, row) in d.iter_mut().enumerate() {
        row[v] = 0;
    }
    for &(u, v) in g.edges() {
        d[u][v] = 1;
        d[v][u] = 1;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d
}

/// Exhaustive search for a simple cycle of exactly `len` nodes.
fn contains_cycle(g: &Graph, len: usize) -> bool {
    let adj = g.adjacency_lists();
    fn extend(adj: &[Vec<usize>], path: &mut Vec<usize>, len: usize) -> bool {
        let last = *path.last().unwrap();
        if path.len() == len {
            return adj[last].contains(&path[0]);
        }
        for &next in &adj[last] {
            if next > path[0] && !path.contains(&next) {
                path.push(next);
                if extend(adj, path, len) {
                    return true;
                }
                path.pop();
            }
        }
        false
    }
    (0..g.num_nodes()).any(|s| extend(&adj, &mut vec![s], len))
}

proptest! {
    #[test]
    fn normalized_adjacency_matches_degree_formula(g in graph_strategy(8)) {
        let a = dense_adjacency(&g);
        let n = g.num_nodes();
        let deg: Vec<f64> = (0..n).map(|u| 1.0 + a[u].iter().sum::<f64>()).collect();
        let norm = g.normalize_adjacency();
        for u in 0..n {
            for v in 0..n {
                let hat = a[u][v] + if u == v { 1.0 } else { 0.0 };
                let expect = hat / (deg[u] * deg[v]).sqrt();
                prop_assert!((norm.get(u, v) - expect).abs() < 1e-15);
                prop_assert_eq!(norm.get(u, v), norm.get(v, u));
                prop_assert!((0.0..=1.0).contains(&norm.get(u, v)));
                prop_assert_eq!(norm.get(u, v) > 0.0, hat > 0.0);
            }
        }
    }

    #[test]
    fn ego_net_is_the_l_hop_ball(g in graph_strategy(8), seed in 0usize..100, hops in 0usize..4) {
        let v = seed % g.num_nodes();
        let ego = g.extract_ego_net(v, hops).unwrap();
        let d = hop_distances(&g);
        let ball: Vec<usize> = (0..g.num_nodes()).filter(|&u| d[v][u] <= hops).collect();
        prop_assert_eq!(&ego.origin_nodes, &ball);
        prop_assert_eq!(ego.origin_nodes[ego.center], v);
        prop_assert!(ego.subgraph.is_connected());
        let internal = g.edges().iter().filter(|(a, b)| ball.contains(a) && ball.contains(b)).count();
        prop_assert_eq!(ego.subgraph.num_edges(), internal);
    }

    #[test]
    fn induced_subgraph_keeps_internal_edges(g in graph_strategy(8), mask in prop::collection::vec(any::<bool>(), 8)) {
        let mut nodes: Vec<usize> = (0..g.num_nodes()).filter(|&v| mask[v]).collect();
        if nodes.is_empty() {
            nodes.push(0);
        }
        let (sub, map) = g.induced_subgraph(&nodes).unwrap();
        prop_assert_eq!(&map, &nodes);
        let internal: Vec<(usize, usize)> = g
            .edges()
            .iter()
            .copied()
            .filter(|(a, b)| nodes.contains(a) && nodes.contains(b))
            .collect();
        prop_assert_eq!(sub.num_edges(), internal.len());
        for &(a, b) in sub.edges() {
            prop_assert!(internal.contains(&(map[a], map[b])));
        }
        for (i, &v) in map.iter().enumerate() {
            prop_assert_eq!(sub.features().row(i), g.features().row(v));
        }
    }

    #[test]
    fn connectivity_agrees_with_distances(g in graph_strategy(7)) {
        let d = hop_distances(&g);
        let reachable = d[0].iter().all(|&x| x < usize::MAX / 4);
        prop_assert_eq!(g.is_connected(), reachable);
    }
}

#[test]
fn motif_class_determines_five_cycle() {
    let ds = generate_motif_dataset(60, 3, &MotifParams::default()).unwrap();
    for g in &ds.graphs {
        assert!(g.num_nodes() <= 20);
        let has = contains_cycle(g, 5);
        assert_eq!(
            has,
            g.label() == Some(1),
            "graph with label {:?}",
            g.label()
        );
    }
}

#[test]
fn motif_features_are_capped_one_hot_degrees() {
    let params = MotifParams::default();
    let ds = generate_motif_dataset(20, 9, &params).unwrap();
    for g in &ds.graphs {
        for (v, d) in g.degrees().into_iter().enumerate() {
            let row = g.features().row(v);
            assert_eq!(row.iter().sum::<f64>(), 1.0);
            assert_eq!(row[d.min(params.degree_cap)], 1.0);
        }
    }
}

#[test]
fn ba_shapes_houses_are_wired_and_labelled() {
    let g = generate_ba_shapes(30, 4, 5, &BaShapesParams { attach_edges: 2 }).unwrap();
    let labels = g.node_labels().unwrap();
    for k in 0..4 {
        let b = 30 + 5 * k;
        assert_eq!(&labels[b..b + 5], &[1, 1, 2, 2, 3]);
        let (house, _) = g.induced_subgraph(&(b..b + 5).collect::<Vec<_>>()).unwrap();
        assert_eq!(house.num_edges(), 6);
        assert!(contains_cycle(&house, 4));
        let outside: Vec<_> = g
            .edges()
            .iter()
            .filter(|(u, v)| (b..b + 5).contains(u) != (b..b + 5).contains(v))
            .collect();
        assert_eq!(outside.len(), 1);
    }
    assert!(labels[..30].iter().all(|&l| l == 0));
}

#[test]
fn dataset_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for ds in [
        split_dataset(
            generate_motif_dataset(30, 1, &MotifParams::default()).unwrap(),
            2,
        ),
        split_dataset(
            ba_shapes_dataset(20, 3, 4, &BaShapesParams { attach_edges: 2 }).unwrap(),
            5,
        ),
    ] {
        let path = dir.path().join(format!("{}.json", ds.name));
        save_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back, ds);
    }
}

#[test]
fn node_task_splits_cover_every_node() {
    let ds = split_dataset(
        ba_shapes_dataset(20, 2, 1, &BaShapesParams { attach_edges: 2 }).unwrap(),
        0,
    );
    assert_eq!(ds.task, Task::Node);
    let s = ds.splits().unwrap();
    let mut all: Vec<usize> = s
        .train
        .iter()
        .chain(&s.val)
        .chain(&s.test)
        .copied()
        .collect();
    all.sort_unstable();
    assert_eq!(all, (0..30).collect::<Vec<_>>());
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (24, 3, 3));
}
