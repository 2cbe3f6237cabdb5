//! Seeded synthetic datasets: BA-Shapes for node classification and a
//! planted-cycle motif dataset for graph classification.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, Graph, Task};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaShapesParams {
    /// Edges added per new node in the preferential-attachment base graph.
    pub attach_edges: usize,
}

impl Default for BaShapesParams {
    fn default() -> Self {
        Self { attach_edges: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotifParams {
    /// Inclusive range of background tree sizes.
    pub min_background: usize,
    pub max_background: usize,
    /// Length of the planted cycle (class 1). Class 0 gets a path decoy with
    /// the same number of nodes.
    pub cycle_len: usize,
    /// Degrees at or above this value share the last one-hot slot.
    pub degree_cap: usize,
}

impl Default for MotifParams {
    fn default() -> Self {
        Self {
            min_background: 10,
            max_background: 15,
            cycle_len: 5,
            degree_cap: 5,
        }
    }
}

/// Preferential-attachment edges on `n` nodes: every node past the first
/// `m` connects to `m` distinct earlier nodes chosen proportionally to degree.
fn barabasi_albert_edges(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut edges = Vec::with_capacity(m * n.saturating_sub(m));
    let mut targets: Vec<usize> = (0..m).collect();
    let mut repeated: Vec<usize> = Vec::with_capacity(2 * m * n);
    for source in m..n {
        for &t in &targets {
            edges.push((t, source));
        }
        repeated.extend_from_slice(&targets);
        repeated.extend(std::iter::repeat_n(source, m));
        let mut chosen: Vec<usize> = Vec::with_capacity(m);
        while chosen.len() < m {
            let t = repeated[rng.gen_range(0..repeated.len())];
            if !chosen.contains(&t) {
                chosen.push(t);
            }
        }
        targets = chosen;
    }
    edges
}

/// House motif wiring on local indices: bottom pair {0, 1}, middle pair
/// {2, 3}, apex 4. The square is 0-1-3-2 and the roof is 2-4-3.
const HOUSE_EDGES: [(usize, usize); 6] = [(0, 1), (0, 2), (1, 3), (2, 3), (2, 4), (3, 4)];
const HOUSE_LABELS: [usize; 5] = [1, 1, 2, 2, 3];

/// BA base graph with `n_motifs` houses, each tied to a uniformly random base
/// node by one edge from its bottom-left node. Labels: 0 base, 1 bottom,
/// 2 middle, 3 apex. Features are `[1, degree]`.
pub fn generate_ba_shapes(
    n_base_nodes: usize,
    n_motifs: usize,
    seed: u64,
    params: &BaShapesParams,
) -> Result<Graph> {
    if n_base_nodes < 5 {
        return Err(Error::Config(format!(
            "BA-Shapes needs at least 5 base nodes, got {n_base_nodes}"
        )));
    }
    if n_motifs < 1 {
        return Err(Error::Config("BA-Shapes needs at least one motif".into()));
    }
    let m = params.attach_edges;
    if m < 1 || m >= n_base_nodes {
        return Err(Error::Config(format!(
            "attach_edges must be in 1..{n_base_nodes}, got {m}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = barabasi_albert_edges(n_base_nodes, m, &mut rng);
    let n = n_base_nodes + 5 * n_motifs;
    let mut labels = vec![0usize; n];
    for k in 0..n_motifs {
        let base = n_base_nodes + 5 * k;
        edges.extend(HOUSE_EDGES.iter().map(|&(u, v)| (base + u, base + v)));
        for (i, &l) in HOUSE_LABELS.iter().enumerate() {
            labels[base + i] = l;
        }
        let anchor = rng.gen_range(0..n_base_nodes);
        edges.push((anchor, base));
    }
    let degrees = degrees_of(n, &edges);
    let mut features = Tensor::zeros(n, 2);
    for (v, &d) in degrees.iter().enumerate() {
        features.set(v, 0, 1.0);
        features.set(v, 1, d as f64);
    }
    Graph::new(n, edges, features)?.with_node_labels(labels)
}

/// [`generate_ba_shapes`] wrapped as a four-class node-classification
/// dataset (no splits yet).
pub fn ba_shapes_dataset(
    n_base_nodes: usize,
    n_motifs: usize,
    seed: u64,
    params: &BaShapesParams,
) -> Result<Dataset> {
    Ok(Dataset {
        name: "ba-shapes".into(),
        task: Task::Node,
        num_classes: 4,
        graphs: vec![generate_ba_shapes(n_base_nodes, n_motifs, seed, params)?],
        splits: None,
    })
}

/// Balanced binary graph-classification dataset. Every graph is a
/// preferential-attachment tree; class 1 graphs carry a planted cycle and
/// class 0 graphs a path decoy on the same number of nodes, each attached to
/// a random background node by one edge. Features are one-hot degrees capped
/// at `degree_cap`.
pub fn generate_motif_dataset(n_graphs: usize, seed: u64, params: &MotifParams) -> Result<Dataset> {
    if n_graphs < 2 {
        return Err(Error::Config(format!(
            "motif dataset needs at least 2 graphs, got {n_graphs}"
        )));
    }
    if params.min_background < 1 || params.max_background < params.min_background {
        return Err(Error::Config("invalid background size range".into()));
    }
    if params.cycle_len < 3 {
        return Err(Error::Config("cycle_len must be at least 3".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..n_graphs)
        .map(|i| usize::from(i >= n_graphs / 2))
        .collect();
    labels.shuffle(&mut rng);

    let mut graphs = Vec::with_capacity(n_graphs);
    for &label in &labels {
        let nb = rng.gen_range(params.min_background..=params.max_background);
        let mut edges = barabasi_albert_edges(nb, 1, &mut rng);
        let k = params.cycle_len;
        for i in 0..k - 1 {
            edges.push((nb + i, nb + i + 1));
        }
        if label == 1 {
            edges.push((nb, nb + k - 1));
        }
        let anchor = rng.gen_range(0..nb);
        let motif_node = nb + rng.gen_range(0..k);
        edges.push((anchor, motif_node));

        let n = nb + k;
        let degrees = degrees_of(n, &edges);
        let mut features = Tensor::zeros(n, params.degree_cap + 1);
        for (v, &d) in degrees.iter().enumerate() {
            features.set(v, d.min(params.degree_cap), 1.0);
        }
        graphs.push(Graph::new(n, edges, features)?.with_label(label));
    }
    Ok(Dataset {
        name: "motif".into(),
        task: Task::Graph,
        num_classes: 2,
        graphs,
        splits: None,
    })
}

/// Edges lying on a cycle, found by peeling degree-one nodes (the 2-core).
/// For the motif dataset this is exactly the planted cycle of a class 1
/// graph and empty for class 0.
pub fn planted_cycle_edges(g: &Graph) -> Vec<(usize, usize)> {
    let adj = g.adjacency_lists();
    let mut degree = g.degrees();
    let mut removed = vec![false; g.num_nodes()];
    let mut stack: Vec<usize> = (0..g.num_nodes()).filter(|&v| degree[v] <= 1).collect();
    while let Some(v) = stack.pop() {
        if removed[v] {
            continue;
        }
        removed[v] = true;
        for &u in &adj[v] {
            if !removed[u] {
                degree[u] -= 1;
                if degree[u] <= 1 {
                    stack.push(u);
                }
            }
        }
    }
    g.edges()
        .iter()
        .copied()
        .filter(|&(u, v)| !removed[u] && !removed[v])
        .collect()
}

fn degrees_of(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let mut deg = vec![0; n];
    for &(u, v) in edges {
        deg[u] += 1;
        deg[v] += 1;
    }
    deg
}
