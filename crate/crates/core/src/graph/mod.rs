//! Undirected attributed graphs and the structural operations the rest of
//! the crate builds on.
//!
//! Graphs never store self-loops. The `A + I` form used by graph convolution
//! is produced only by [`Graph::normalize_adjacency`] and the encoder.

mod dataset;
mod generate;

use std::collections::VecDeque;

pub use dataset::{load_dataset, save_dataset, split_dataset, Dataset, Instance, Splits, Task};
pub use generate::{
    ba_shapes_dataset, generate_ba_shapes, generate_motif_dataset, planted_cycle_edges,
    BaShapesParams, MotifParams,
};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    features: Tensor,
    label: Option<usize>,
    node_labels: Option<Vec<usize>>,
}

/// An `L`-hop neighbourhood around a center node.
#[derive(Clone, Debug, PartialEq)]
pub struct EgoNet {
    pub subgraph: Graph,
    /// Center in subgraph coordinates.
    pub center: usize,
    /// `origin_nodes[i]` is the original index of subgraph node `i`.
    pub origin_nodes: Vec<usize>,
}

impl Graph {
    /// Validates and canonicalizes the edge list: each pair is stored as
    /// `(min, max)` and the list is sorted.
    pub fn new(num_nodes: usize, edges: Vec<(usize, usize)>, features: Tensor) -> Result<Self> {
        if features.rows() != num_nodes {
            return Err(Error::Graph(format!(
                "feature matrix has {} rows for {num_nodes} nodes",
                features.rows()
            )));
        }
        let mut canon: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for (u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::Graph(format!(
                    "edge ({u},{v}) out of range for {num_nodes} nodes"
                )));
            }
            if u == v {
                return Err(Error::Graph(format!("self-loop at node {u}")));
            }
            canon.push((u.min(v), u.max(v)));
        }
        canon.sort_unstable();
        if let Some(w) = canon.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Graph(format!("duplicate edge {:?}", w[0])));
        }
        Ok(Self {
            num_nodes,
            edges: canon,
            features,
            label: None,
            node_labels: None,
        })
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn with_node_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.num_nodes {
            return Err(Error::Graph(format!(
                "{} node labels for {} nodes",
                labels.len(),
                self.num_nodes
            )));
        }
        self.node_labels = Some(labels);
        Ok(self)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Canonical `(u, v)` pairs with `u < v`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn node_labels(&self) -> Option<&[usize]> {
        self.node_labels.as_deref()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edges.binary_search(&(u.min(v), u.max(v))).is_ok()
    }

    pub fn adjacency_lists(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    /// `D̂^{-1/2} (A + I) D̂^{-1/2}` with `D̂` the row sums of `A + I`.
    pub fn normalize_adjacency(&self) -> Tensor {
        let n = self.num_nodes;
        let mut out = Tensor::zeros(n, n);
        for (u, v, w) in self.normalized_entries() {
            out.set(u, v, w);
        }
        out
    }

    /// Nonzero entries of the normalized adjacency as `(row, col, value)`,
    /// grouped by ascending row.
    pub fn normalized_entries(&self) -> Vec<(usize, usize, f64)> {
        let dhat: Vec<f64> = self.degrees().iter().map(|&d| (d + 1) as f64).collect();
        let adj = self.adjacency_lists();
        let mut out = Vec::with_capacity(self.num_nodes + 2 * self.edges.len());
        for (u, nbrs) in adj.iter().enumerate() {
            let mut placed_self = false;
            for &v in nbrs {
                if !placed_self && v > u {
                    out.push((u, u, 1.0 / dhat[u]));
                    placed_self = true;
                }
                out.push((u, v, 1.0 / (dhat[u] * dhat[v]).sqrt()));
            }
            if !placed_self {
                out.push((u, u, 1.0 / dhat[u]));
            }
        }
        out
    }

    /// BFS hop distances from `source`; `None` for unreachable nodes.
    pub fn bfs_distances(&self, source: usize) -> Vec<Option<usize>> {
        bfs(&self.adjacency_lists(), source, |_| true)
    }

    pub fn is_connected(&self) -> bool {
        if self.num_nodes == 0 {
            return true;
        }
        self.bfs_distances(0).iter().all(Option::is_some)
    }

    /// Induced subgraph on `nodes`. Nodes are renumbered in ascending order of
    /// their original index; the returned map gives the original index of each
    /// new node.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Result<(Graph, Vec<usize>)> {
        if nodes.is_empty() {
            return Err(Error::Graph("induced subgraph of an empty node set".into()));
        }
        let mut keep: Vec<usize> = nodes.to_vec();
        keep.sort_unstable();
        keep.dedup();
        if let Some(&bad) = keep.iter().find(|&&v| v >= self.num_nodes) {
            return Err(Error::Graph(format!(
                "node {bad} out of range for {} nodes",
                self.num_nodes
            )));
        }
        let mut position = vec![usize::MAX; self.num_nodes];
        for (i, &v) in keep.iter().enumerate() {
            position[v] = i;
        }
        let edges: Vec<(usize, usize)> = self
            .edges
            .iter()
            .filter(|&&(u, v)| position[u] != usize::MAX && position[v] != usize::MAX)
            .map(|&(u, v)| (position[u], position[v]))
            .collect();
        let d = self.features.cols();
        let mut features = Tensor::zeros(keep.len(), d);
        for (i, &v) in keep.iter().enumerate() {
            features.row_mut(i).copy_from_slice(self.features.row(v));
        }
        let mut sub = Graph::new(keep.len(), edges, features)?;
        sub.label = self.label;
        if let Some(labels) = &self.node_labels {
            sub.node_labels = Some(keep.iter().map(|&v| labels[v]).collect());
        }
        Ok((sub, keep))
    }

    /// Induced subgraph on every node within `hops` BFS steps of `center`.
    pub fn extract_ego_net(&self, center: usize, hops: usize) -> Result<EgoNet> {
        if center >= self.num_nodes {
            return Err(Error::Graph(format!(
                "center {center} out of range for {} nodes",
                self.num_nodes
            )));
        }
        let dist = self.bfs_distances(center);
        let nodes: Vec<usize> = (0..self.num_nodes)
            .filter(|&v| dist[v].is_some_and(|d| d <= hops))
            .collect();
        let (subgraph, origin_nodes) = self.induced_subgraph(&nodes)?;
        let center = origin_nodes
            .binary_search(&center)
            .expect("center is within zero hops of itself");
        Ok(EgoNet {
            subgraph,
            center,
            origin_nodes,
        })
    }
}

/// BFS over adjacency lists restricted to nodes accepted by `allowed`.
pub(crate) fn bfs(
    adj: &[Vec<usize>],
    source: usize,
    allowed: impl Fn(usize) -> bool,
) -> Vec<Option<usize>> {
    let mut dist = vec![None; adj.len()];
    dist[source] = Some(0);
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        let du = dist[u].unwrap();
        for &v in &adj[u] {
            if dist[v].is_none() && allowed(v) {
                dist[v] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Whether the nodes flagged in `members` induce a connected subgraph.
pub(crate) fn is_connected_subset(adj: &[Vec<usize>], members: &[bool]) -> bool {
    let Some(start) = members.iter().position(|&m| m) else {
        return true;
    };
    let dist = bfs(adj, start, |v| members[v]);
    members.iter().zip(&dist).all(|(&m, d)| !m || d.is_some())
}
