//! Prototype projection: Monte Carlo tree search over connected subgraphs
//! reached by pruning one node at a time, plus an exhaustive oracle for
//! small graphs.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sq_dist, ParamStore};
use crate::encoder::{EncodeInput, Encoder};
use crate::error::{Error, Result};
use crate::graph::{bfs, is_connected_subset, Graph};
use crate::prototype::similarity_from_sq_dist;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MctsConfig {
    pub lambda_explore: f64,
    pub iterations: usize,
    pub max_children: usize,
    pub n_min: usize,
    /// How many class graphs (nearest by whole-graph embedding) to search;
    /// `None` searches all of them.
    pub candidate_graphs: Option<usize>,
}

impl Default for MctsConfig {
    fn default() -> Self {
        Self {
            lambda_explore: 5.0,
            iterations: 20,
            max_children: 10,
            n_min: 5,
            candidate_graphs: Some(10),
        }
    }
}

impl MctsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_explore > 0.0)
            || self.iterations == 0
            || self.max_children == 0
            || self.n_min == 0
            || self.candidate_graphs == Some(0)
        {
            return Err(Error::Config(format!(
                "MCTS settings must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Statistics of one (node, action) pair.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EdgeStats {
    pub c: u64,
    pub w: f64,
    pub q: f64,
    pub r: f64,
}

impl EdgeStats {
    pub fn new(r: f64) -> Self {
        Self {
            r,
            ..Self::default()
        }
    }

    pub fn update(&mut self, reward: f64) {
        self.c += 1;
        self.w += reward;
        self.q = self.w / self.c as f64;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Child {
    /// Original-graph index of the node removed by this action.
    pub pruned: usize,
    pub stats: EdgeStats,
    /// Index of the child in [`SearchTree::nodes`].
    pub node: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeNode {
    /// Sorted original-graph node indices.
    pub node_set: Vec<usize>,
    pub children: Vec<Child>,
    pub expanded: bool,
    pub embedding: Vec<f64>,
    pub reward: f64,
}

/// Index into `children` maximizing `Q + U`, with
/// `U = λ·R·sqrt(ΣC) / (1 + C)`. Ties go to the lowest pruned-node index.
pub fn select_action(children: &[Child], lambda_explore: f64) -> Option<usize> {
    let total: u64 = children.iter().map(|c| c.stats.c).sum();
    let root = (total as f64).sqrt();
    let mut best: Option<(usize, f64)> = None;
    for (i, child) in children.iter().enumerate() {
        let s = &child.stats;
        let score = s.q + lambda_explore * s.r * root / (1.0 + s.c as f64);
        best = match best {
            Some((b, bs)) if bs > score || (bs == score && children[b].pruned < child.pruned) => {
                Some((b, bs))
            }
            _ => Some((i, score)),
        };
    }
    best.map(|(i, _)| i)
}

/// Nodes of `node_set` whose removal leaves the induced subgraph connected,
/// ordered by (degree inside the subgraph, index) and truncated to
/// `max_children`. `protected` is never proposed.
pub fn expand_children(
    adj: &[Vec<usize>],
    node_set: &[usize],
    protected: Option<usize>,
    max_children: usize,
) -> Vec<usize> {
    let mut members = vec![false; adj.len()];
    for &v in node_set {
        members[v] = true;
    }
    let mut candidates: Vec<(usize, usize)> = Vec::new();
    for &v in node_set {
        if Some(v) == protected {
            continue;
        }
        members[v] = false;
        if is_connected_subset(adj, &members) {
            let degree = adj[v].iter().filter(|&&u| members[u]).count();
            candidates.push((degree, v));
        }
        members[v] = true;
    }
    candidates.sort_unstable();
    candidates.truncate(max_children);
    candidates.into_iter().map(|(_, v)| v).collect()
}

/// Applies a leaf reward to every (node, action) pair on `path`, given as
/// `(tree node index, child position)`.
pub fn backpropagate(nodes: &mut [TreeNode], path: &[(usize, usize)], leaf_reward: f64) {
    for &(n, a) in path {
        nodes[n].children[a].stats.update(leaf_reward);
    }
}

/// Scores node sets of one graph against one prototype.
struct Scorer<'a> {
    graph: &'a Graph,
    center: Option<usize>,
    p: &'a [f64],
    encoder: &'a Encoder,
    store: &'a ParamStore,
    eps_sim: f64,
}

impl Scorer<'_> {
    fn embed(&self, node_set: &[usize]) -> Result<Vec<f64>> {
        if node_set.len() == self.graph.num_nodes() {
            return self
                .encoder
                .embed(self.store, self.input(self.graph, node_set));
        }
        let (sub, _) = self.graph.induced_subgraph(node_set)?;
        self.encoder.embed(self.store, self.input(&sub, node_set))
    }

    fn input<'g>(&self, g: &'g Graph, node_set: &[usize]) -> EncodeInput<'g> {
        EncodeInput {
            graph: g,
            center: self
                .center
                .map(|c| node_set.binary_search(&c).expect("center is never pruned")),
        }
    }

    fn score(&self, node_set: &[usize]) -> Result<(Vec<f64>, f64)> {
        let h = self.embed(node_set)?;
        let s = similarity_from_sq_dist(sq_dist(self.p, &h), self.eps_sim);
        Ok((h, s))
    }
}

/// Search tree for one (prototype, graph) pair. Nodes live in an arena;
/// node 0 is the root.
pub struct SearchTree<'a> {
    scorer: Scorer<'a>,
    adj: Vec<Vec<usize>>,
    cfg: &'a MctsConfig,
    pub nodes: Vec<TreeNode>,
    completed: usize,
}

impl<'a> SearchTree<'a> {
    /// The root is the connected component containing the center (node
    /// tasks) or the largest component (lowest first index on ties).
    pub fn new(
        p: &'a [f64],
        input: EncodeInput<'a>,
        encoder: &'a Encoder,
        store: &'a ParamStore,
        eps_sim: f64,
        cfg: &'a MctsConfig,
    ) -> Result<Self> {
        let graph = input.graph;
        let adj = graph.adjacency_lists();
        let root_set = root_component(&adj, input.center);
        let scorer = Scorer {
            graph,
            center: input.center,
            p,
            encoder,
            store,
            eps_sim,
        };
        let (embedding, reward) = scorer.score(&root_set)?;
        Ok(Self {
            scorer,
            adj,
            cfg,
            nodes: vec![TreeNode {
                node_set: root_set,
                children: Vec::new(),
                expanded: false,
                embedding,
                reward,
            }],
            completed: 0,
        })
    }

    fn is_terminal(&self, n: usize) -> bool {
        let node = &self.nodes[n];
        node.node_set.len() <= self.cfg.n_min || (node.expanded && node.children.is_empty())
    }

    fn expand(&mut self, n: usize) -> Result<()> {
        let set = self.nodes[n].node_set.clone();
        let actions = expand_children(&self.adj, &set, self.scorer.center, self.cfg.max_children);
        let mut children = Vec::with_capacity(actions.len());
        for pruned in actions {
            let child_set: Vec<usize> = set.iter().copied().filter(|&v| v != pruned).collect();
            debug_assert!({
                let mut m = vec![false; self.adj.len()];
                child_set.iter().for_each(|&v| m[v] = true);
                is_connected_subset(&self.adj, &m)
            });
            let (embedding, reward) = self.scorer.score(&child_set)?;
            let idx = self.nodes.len();
            self.nodes.push(TreeNode {
                node_set: child_set,
                children: Vec::new(),
                expanded: false,
                embedding,
                reward,
            });
            children.push(Child {
                pruned,
                stats: EdgeStats::new(reward),
                node: idx,
            });
        }
        let node = &mut self.nodes[n];
        node.children = children;
        node.expanded = true;
        Ok(())
    }

    /// One selection / expansion / backup pass.
    pub fn iterate(&mut self) -> Result<()> {
        let mut path = Vec::new();
        let mut cur = 0;
        loop {
            if self.is_terminal(cur) {
                break;
            }
            let fresh = !self.nodes[cur].expanded;
            if fresh {
                self.expand(cur)?;
                if self.nodes[cur].children.is_empty() {
                    break;
                }
            }
            let a = select_action(&self.nodes[cur].children, self.cfg.lambda_explore)
                .expect("expanded node has children");
            path.push((cur, a));
            cur = self.nodes[cur].children[a].node;
            if fresh {
                break;
            }
        }
        let reward = self.nodes[cur].reward;
        backpropagate(&mut self.nodes, &path, reward);
        self.completed += 1;
        Ok(())
    }

    pub fn run(&mut self, iterations: usize) -> Result<()> {
        for _ in 0..iterations {
            self.iterate()?;
        }
        Ok(())
    }

    /// Whether every reachable non-terminal node has been expanded.
    pub fn fully_expanded(&self) -> bool {
        (0..self.nodes.len()).all(|n| self.nodes[n].expanded || self.is_terminal(n))
    }

    pub fn completed_iterations(&self) -> usize {
        self.completed
    }

    /// Highest-reward node created so far (first created wins ties).
    pub fn best(&self) -> &TreeNode {
        let mut best = &self.nodes[0];
        for node in &self.nodes[1..] {
            if node.reward > best.reward {
                best = node;
            }
        }
        best
    }
}

fn root_component(adj: &[Vec<usize>], center: Option<usize>) -> Vec<usize> {
    let n = adj.len();
    let collect = |s: usize| -> Vec<usize> {
        let d = bfs(adj, s, |_| true);
        (0..n).filter(|&v| d[v].is_some()).collect()
    };
    if let Some(c) = center {
        return collect(c);
    }
    let mut seen = vec![false; n];
    let mut best: Vec<usize> = Vec::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        let comp = collect(s);
        comp.iter().for_each(|&v| seen[v] = true);
        if comp.len() > best.len() {
            best = comp;
        }
    }
    best
}

/// A class graph eligible for projection, with its whole-graph embedding.
#[derive(Clone, Debug)]
pub struct ProjectionCandidate<'a> {
    pub input: EncodeInput<'a>,
    /// Index of the instance in the dataset.
    pub source_index: usize,
    pub embedding: Vec<f64>,
}

impl<'a> ProjectionCandidate<'a> {
    pub fn build(
        encoder: &Encoder,
        store: &ParamStore,
        inputs: &[(EncodeInput<'a>, usize)],
    ) -> Result<Vec<Self>> {
        inputs
            .par_iter()
            .map(|&(input, source_index)| {
                Ok(Self {
                    input,
                    source_index,
                    embedding: encoder.embed(store, input)?,
                })
            })
            .collect()
    }
}

/// Where a projected prototype came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    pub prototype_index: usize,
    pub class: usize,
    pub source_graph_index: usize,
    /// Node indices in the source instance's graph (for node tasks, the
    /// dataset graph containing the ego-net).
    pub node_set: Vec<usize>,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub source_graph_index: usize,
    /// Sorted node indices in the candidate graph.
    pub node_set: Vec<usize>,
    pub embedding: Vec<f64>,
    pub score: f64,
}

/// Candidate positions searched for `p`: the `cfg.candidate_graphs`
/// nearest by whole-graph embedding (ties by position), or all of them.
pub fn shortlist(
    p: &[f64],
    candidates: &[ProjectionCandidate<'_>],
    cfg: &MctsConfig,
) -> Vec<usize> {
    let mut order: Vec<(f64, usize)> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| (sq_dist(p, &c.embedding), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    if let Some(k) = cfg.candidate_graphs {
        order.truncate(k);
    }
    order.into_iter().map(|(_, i)| i).collect()
}

/// Best subgraph for prototype `p` among same-class candidates.
pub fn project_prototype(
    p: &[f64],
    candidates: &[ProjectionCandidate<'_>],
    encoder: &Encoder,
    store: &ParamStore,
    eps_sim: f64,
    cfg: &MctsConfig,
) -> Result<Projection> {
    cfg.validate()?;
    if candidates.is_empty() {
        return Err(Error::Data(
            "no training graphs for this prototype's class".into(),
        ));
    }
    let picks = shortlist(p, candidates, cfg);
    let results: Vec<Result<Projection>> = picks
        .par_iter()
        .map(|&i| {
            let cand = &candidates[i];
            let mut tree = SearchTree::new(p, cand.input, encoder, store, eps_sim, cfg)?;
            tree.run(cfg.iterations)?;
            let best = tree.best();
            Ok(Projection {
                source_graph_index: cand.source_index,
                node_set: best.node_set.clone(),
                embedding: best.embedding.clone(),
                score: best.reward,
            })
        })
        .collect();
    let mut best: Option<Projection> = None;
    for r in results {
        let r = r?;
        if best.as_ref().is_none_or(|b| r.score > b.score) {
            best = Some(r);
        }
    }
    Ok(best.expect("at least one candidate searched"))
}

pub const BRUTE_FORCE_MAX_NODES: usize = 12;

/// Every connected induced subgraph with at least `n_min` nodes of every
/// candidate, scored exhaustively. Candidates are visited in order and node
/// sets lexicographically; the first maximum wins.
pub fn brute_force_nearest_subgraph(
    p: &[f64],
    candidates: &[ProjectionCandidate<'_>],
    n_min: usize,
    encoder: &Encoder,
    store: &ParamStore,
    eps_sim: f64,
) -> Result<Projection> {
    if let Some(c) = candidates
        .iter()
        .find(|c| c.input.graph.num_nodes() > BRUTE_FORCE_MAX_NODES)
    {
        return Err(Error::Config(format!(
            "brute force limited to {BRUTE_FORCE_MAX_NODES} nodes, got {}",
            c.input.graph.num_nodes()
        )));
    }
    let mut best: Option<Projection> = None;
    for cand in candidates {
        let g = cand.input.graph;
        let n = g.num_nodes();
        let adj = g.adjacency_lists();
        let scorer = Scorer {
            graph: g,
            center: cand.input.center,
            p,
            encoder,
            store,
            eps_sim,
        };
        let mut sets: Vec<Vec<usize>> = (1u32..1 << n)
            .filter(|mask| mask.count_ones() as usize >= n_min)
            .filter(|mask| cand.input.center.is_none_or(|c| mask & (1 << c) != 0))
            .filter_map(|mask| {
                let members: Vec<bool> = (0..n).map(|v| mask & (1 << v) != 0).collect();
                is_connected_subset(&adj, &members)
                    .then(|| (0..n).filter(|&v| members[v]).collect())
            })
            .collect();
        sets.sort();
        for set in sets {
            let (embedding, score) = scorer.score(&set)?;
            if best.as_ref().is_none_or(|b| score > b.score) {
                best = Some(Projection {
                    source_graph_index: cand.source_index,
                    node_set: set,
                    embedding,
                    score,
                });
            }
        }
    }
    best.ok_or_else(|| Error::Data(format!("no connected subgraph with at least {n_min} nodes")))
}

/// Node sets scored by `tree`, with their rewards.
pub fn explored_sets(tree: &SearchTree<'_>) -> HashMap<Vec<usize>, f64> {
    tree.nodes
        .iter()
        .map(|n| (n.node_set.clone(), n.reward))
        .collect()
}
