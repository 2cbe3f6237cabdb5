//! Conditional subgraph sampling: an MLP scores every edge from its endpoint
//! embeddings and a prototype, and the resulting relaxed edge weights feed
//! the weighted encoder.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, sq_dist, ParamId, ParamStore, Tape, Tensor, Var};
use crate::encoder::{EncodeInput, Encoder, GraphBatch};
use crate::error::{Error, Result};
use crate::graph::{bfs, Graph};
use crate::prototype::{similarity_from_sq_dist, HeadOutput, PrototypeLayer};

pub const HIDDEN_SIZES: [usize; 2] = [64, 8];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub lambda_b: f64,
    pub budget: f64,
    pub sgd_lr: f64,
    pub sgd_steps: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            lambda_b: 0.01,
            budget: 10.0,
            sgd_lr: 0.01,
            sgd_steps: 200,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_b >= 0.0) || !(self.budget > 0.0) || !(self.sgd_lr > 0.0) {
            return Err(Error::Config(format!("invalid sampler settings: {self:?}")));
        }
        Ok(())
    }
}

/// `[z_i; z_j; p] → 64 → 8 → 1` with relu, relu, sigmoid.
#[derive(Clone, Debug)]
pub struct EdgeScorer {
    pub embed_dim: usize,
    layers: Vec<(ParamId, ParamId)>,
    invocations: Arc<AtomicU64>,
}

impl PartialEq for EdgeScorer {
    fn eq(&self, other: &Self) -> bool {
        self.embed_dim == other.embed_dim && self.layers == other.layers
    }
}

fn layer_names(k: usize) -> (String, String) {
    (
        format!("sampler.layer{k}.weight"),
        format!("sampler.layer{k}.bias"),
    )
}

impl EdgeScorer {
    /// Weights uniform in `±sqrt(6/(fan_in+fan_out))`, biases zero.
    pub fn new(embed_dim: usize, store: &mut ParamStore, rng: &mut impl Rng) -> Self {
        let sizes = [3 * embed_dim, HIDDEN_SIZES[0], HIDDEN_SIZES[1], 1];
        let layers = (0..3)
            .map(|k| {
                let (fan_in, fan_out) = (sizes[k], sizes[k + 1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let values = (0..fan_in * fan_out)
                    .map(|_| rng.gen_range(-bound..bound))
                    .collect();
                let (wn, bn) = layer_names(k);
                let w = store.add(wn, Tensor::from_vec(fan_in, fan_out, values).unwrap(), true);
                let b = store.add(bn, Tensor::zeros(1, fan_out), true);
                (w, b)
            })
            .collect();
        Self {
            embed_dim,
            layers,
            invocations: Arc::default(),
        }
    }

    pub fn from_store(embed_dim: usize, store: &ParamStore) -> Result<Self> {
        let sizes = [3 * embed_dim, HIDDEN_SIZES[0], HIDDEN_SIZES[1], 1];
        let mut layers = Vec::with_capacity(3);
        for k in 0..3 {
            let (wn, bn) = layer_names(k);
            let find = |name: &str| {
                store
                    .find(name)
                    .ok_or_else(|| Error::Data(format!("missing parameter '{name}'")))
            };
            let (w, b) = (find(&wn)?, find(&bn)?);
            if store.value(w).shape() != [sizes[k], sizes[k + 1]]
                || store.value(b).shape() != [1, sizes[k + 1]]
            {
                return Err(Error::shape(
                    "edge_scorer",
                    format!("layer {k} has unexpected shape"),
                ));
            }
            layers.push((w, b));
        }
        Ok(Self {
            embed_dim,
            layers,
            invocations: Arc::default(),
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }

    pub fn num_parameters(&self, store: &ParamStore) -> usize {
        self.param_ids()
            .iter()
            .map(|&id| store.value(id).len())
            .sum()
    }

    /// Total rows scored since creation or the last reset.
    pub fn invocations(&self) -> u64 {
        self.invocations.load(Ordering::Relaxed)
    }

    pub fn reset_invocations(&self) {
        self.invocations.store(0, Ordering::Relaxed);
    }

    /// Scores each row of `x` (`N × 3·embed_dim`), giving `N × 1` in `(0, 1)`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let cols = tape.value(x).cols();
        if cols != 3 * self.embed_dim {
            return Err(Error::shape(
                "edge_scorer",
                format!("input width {cols}, expected {}", 3 * self.embed_dim),
            ));
        }
        self.invocations
            .fetch_add(tape.value(x).rows() as u64, Ordering::Relaxed);
        let (w, b) = self.layers[0];
        let wv = tape.param(store, w);
        let bv = tape.param(store, b);
        let lin = tape.matmul(x, wv)?;
        let lin = tape.add_row(lin, bv)?;
        self.tail(tape, store, lin)
    }

    /// Layers after the first, given its pre-activation.
    fn tail(&self, tape: &mut Tape, store: &ParamStore, first: Var) -> Result<Var> {
        let mut lin = first;
        for &(w, b) in &self.layers[1..] {
            let h = tape.relu(lin)?;
            let wv = tape.param(store, w);
            let bv = tape.param(store, b);
            let out = tape.matmul(h, wv)?;
            lin = tape.add_row(out, bv)?;
        }
        tape.sigmoid(lin)
    }

    /// Symmetrized weight of every edge of `g` (aligned with `g.edges()`, `E × 1`).
    /// Both orientations of each edge are scored and averaged.
    pub fn edge_weights(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        g: &Graph,
        z: &Tensor,
        p: &[f64],
    ) -> Result<Var> {
        let d = self.embed_dim;
        if z.rows() != g.num_nodes() || z.cols() != d || p.len() != d {
            return Err(Error::shape(
                "edge_probabilities",
                format!(
                    "Z {:?}, p {}, embed_dim {d}, {} nodes",
                    z.shape(),
                    p.len(),
                    g.num_nodes()
                ),
            ));
        }
        let e = g.num_edges();
        if e == 0 {
            return Ok(tape.constant(Tensor::zeros(0, 1)));
        }
        // First layer as z_i·W_a + z_j·W_b + p·W_p + b.
        self.invocations.fetch_add(2 * e as u64, Ordering::Relaxed);
        let (w0, b0) = self.layers[0];
        let w = tape.param(store, w0);
        let block = |tape: &mut Tape, k: usize| {
            tape.gather_rows(w, &(k * d..(k + 1) * d).collect::<Vec<_>>())
        };
        let (wa, wb, wp) = (block(tape, 0)?, block(tape, 1)?, block(tape, 2)?);
        let zc = tape.constant(z.clone());
        let za = tape.matmul(zc, wa)?;
        let zb = tape.matmul(zc, wb)?;
        let pc = tape.constant(Tensor::from_vec(1, d, p.to_vec())?);
        let pw = tape.matmul(pc, wp)?;
        let bv = tape.param(store, b0);
        let shift = tape.add(pw, bv)?;
        let (mut src, mut dst) = (Vec::with_capacity(2 * e), Vec::with_capacity(2 * e));
        for flip in [false, true] {
            for &(u, v) in g.edges() {
                let (a, b) = if flip { (v, u) } else { (u, v) };
                src.push(a);
                dst.push(b);
            }
        }
        let left = tape.gather_rows(za, &src)?;
        let right = tape.gather_rows(zb, &dst)?;
        let lin = tape.add(left, right)?;
        let lin = tape.add_row(lin, shift)?;
        let raw = self.tail(tape, store, lin)?;
        let forward_idx: Vec<usize> = (0..e).collect();
        let backward_idx: Vec<usize> = (e..2 * e).collect();
        let fwd = tape.gather_rows(raw, &forward_idx)?;
        let bwd = tape.gather_rows(raw, &backward_idx)?;
        let both = tape.add(fwd, bwd)?;
        tape.scale(both, 0.5)
    }

    /// Untaped [`EdgeScorer::edge_weights`] for several prototypes on one
    /// graph; the node terms of the first layer are computed once.
    pub fn edge_weight_values(
        &self,
        store: &ParamStore,
        g: &Graph,
        z: &Tensor,
        prototypes: &[&[f64]],
    ) -> Result<Vec<Vec<f64>>> {
        let d = self.embed_dim;
        if z.rows() != g.num_nodes() || z.cols() != d || prototypes.iter().any(|p| p.len() != d) {
            return Err(Error::shape(
                "edge_probabilities",
                format!("Z {:?}, embed_dim {d}, {} nodes", z.shape(), g.num_nodes()),
            ));
        }
        let [h0, h1] = HIDDEN_SIZES;
        let [(w0, b0), (w1, b1), (w2, b2)] = [self.layers[0], self.layers[1], self.layers[2]];
        let w0 = store.value(w0).values();
        let block = |k: usize| Tensor::from_vec(d, h0, w0[k * d * h0..(k + 1) * d * h0].to_vec());
        let za = z.matmul(&block(0)?)?;
        let zb = z.matmul(&block(1)?)?;
        let wp = block(2)?;
        let (b0, w1, b1) = (
            store.value(b0).values(),
            store.value(w1).values(),
            store.value(b1).values(),
        );
        let (w2, b2) = (store.value(w2).values(), store.value(b2).values()[0]);
        let score = |shift: &[f64], a: usize, b: usize| {
            let (ra, rb) = (za.row(a), zb.row(b));
            let mut hidden = [0.0; HIDDEN_SIZES[0]];
            for j in 0..h0 {
                hidden[j] = (ra[j] + rb[j] + shift[j]).max(0.0);
            }
            let mut out = b2;
            for k in 0..h1 {
                let mut s = b1[k];
                for j in 0..h0 {
                    s += hidden[j] * w1[j * h1 + k];
                }
                out += s.max(0.0) * w2[k];
            }
            sigmoid(out)
        };
        Ok(prototypes
            .iter()
            .map(|p| {
                self.invocations
                    .fetch_add(2 * g.num_edges() as u64, Ordering::Relaxed);
                let shift: Vec<f64> = (0..h0)
                    .map(|j| b0[j] + (0..d).map(|i| p[i] * wp.get(i, j)).sum::<f64>())
                    .collect();
                g.edges()
                    .iter()
                    .map(|&(u, v)| (score(&shift, u, v) + score(&shift, v, u)) * 0.5)
                    .collect()
            })
            .collect())
    }
}

/// Dense symmetric `n × n` matrix from per-edge weights; zero elsewhere.
pub fn edge_matrix(g: &Graph, weights: &[f64]) -> Tensor {
    let n = g.num_nodes();
    let mut m = Tensor::zeros(n, n);
    for (&(u, v), &w) in g.edges().iter().zip(weights) {
        m.set(u, v, w);
        m.set(v, u, w);
    }
    m
}

fn node_embeddings(
    encoder: &Encoder,
    store: &ParamStore,
    input: EncodeInput<'_>,
) -> Result<Tensor> {
    Ok(encoder.embed_batch(store, &GraphBatch::new(&[input])?)?.1)
}

/// Edge probability matrix for `g` conditioned on `p`, with `Z` the
/// unweighted last-layer node embeddings.
pub fn edge_probabilities(
    g: &Graph,
    z: &Tensor,
    p: &[f64],
    scorer: &EdgeScorer,
    store: &ParamStore,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let w = scorer.edge_weights(&mut tape, store, g, z, p)?;
    Ok(edge_matrix(g, tape.value(w).values()))
}

/// Values of the sampler objective's parts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerLossParts {
    pub loss: f64,
    pub similarity: f64,
    /// `Σ e` over unordered edges.
    pub mass: f64,
    /// `relu(Σ e − B)`.
    pub violation: f64,
}

/// Taped `−sim(p, f(g; e)) + λ_b · relu(Σe − B)` with `e` given as an `E × 1`
/// variable.
pub fn sampler_loss(
    tape: &mut Tape,
    store: &ParamStore,
    encoder: &Encoder,
    input: EncodeInput<'_>,
    p: &[f64],
    weights: Var,
    cfg: &SamplerConfig,
    eps_sim: f64,
) -> Result<(Var, SamplerLossParts)> {
    let enc = encoder.forward_weighted(tape, store, input, weights)?;
    let pv = tape.constant(Tensor::row_vector(p.to_vec()));
    let d2 = tape.sq_dist(enc.graph, pv)?;
    let num = tape.add_scalar(d2, 1.0)?;
    let den = tape.add_scalar(d2, eps_sim)?;
    let ln_num = tape.log(num)?;
    let ln_den = tape.log(den)?;
    let sim = tape.sub(ln_num, ln_den)?;
    let mass = tape.sum(weights)?;
    let over = tape.add_scalar(mass, -cfg.budget)?;
    let violation = tape.relu(over)?;
    let neg_sim = tape.scale(sim, -1.0)?;
    let penalty = tape.scale(violation, cfg.lambda_b)?;
    let loss = tape.add(neg_sim, penalty)?;
    let parts = SamplerLossParts {
        loss: tape.value(loss).item(),
        similarity: tape.value(sim).item(),
        mass: tape.value(mass).item(),
        violation: tape.value(violation).item(),
    };
    if !parts.loss.is_finite() {
        return Err(Error::NonFinite(format!("sampler loss: {parts:?}")));
    }
    Ok((loss, parts))
}

/// How edges are weighted when computing per-prototype embeddings.
#[derive(Clone, Copy, Debug)]
pub enum EdgeWeighting<'a> {
    /// Every edge kept with weight 1.
    AllOnes,
    Learned(&'a EdgeScorer),
}

/// Per-prototype sampled view of one input.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledView {
    /// Per-edge weights aligned with the graph's edge list.
    pub edge_weights: Vec<f64>,
    pub embedding: Vec<f64>,
    pub similarity: f64,
}

/// For every prototype `p_j`: edge weights, the weighted embedding `h_j`, and
/// `sim(p_j, h_j)`.
pub fn sampled_views(
    store: &ParamStore,
    encoder: &Encoder,
    layer: &PrototypeLayer,
    weighting: EdgeWeighting<'_>,
    input: EncodeInput<'_>,
) -> Result<Vec<SampledView>> {
    let g = input.graph;
    let learned = match weighting {
        EdgeWeighting::Learned(scorer) => {
            let z = node_embeddings(encoder, store, input)?;
            let protos: Vec<&[f64]> = (0..layer.num_prototypes())
                .map(|j| layer.prototype(store, j))
                .collect();
            Some(scorer.edge_weight_values(store, g, &z, &protos)?)
        }
        EdgeWeighting::AllOnes => None,
    };
    (0..layer.num_prototypes())
        .map(|j| {
            let p = layer.prototype(store, j);
            let edge_weights = match &learned {
                Some(w) => w[j].clone(),
                None => vec![1.0; g.num_edges()],
            };
            let mut tape = Tape::new();
            let w = tape.constant(Tensor::from_vec(g.num_edges(), 1, edge_weights.clone())?);
            let enc = encoder.forward_weighted(&mut tape, store, input, w)?;
            let embedding = tape.value(enc.graph).values().to_vec();
            let similarity = similarity_from_sq_dist(sq_dist(p, &embedding), layer.eps_sim);
            Ok(SampledView {
                edge_weights,
                embedding,
                similarity,
            })
        })
        .collect()
}

/// Prediction where each prototype is compared with its own sampled view.
pub fn plus_head_forward(
    store: &ParamStore,
    encoder: &Encoder,
    layer: &PrototypeLayer,
    weighting: EdgeWeighting<'_>,
    input: EncodeInput<'_>,
) -> Result<(HeadOutput, Vec<SampledView>)> {
    let views = sampled_views(store, encoder, layer, weighting, input)?;
    let sims = views.iter().map(|v| v.similarity).collect();
    Ok((layer.output_from_similarities(store, sims), views))
}

/// Outcome of one sampler optimization pass.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SamplerReport {
    pub steps: usize,
    pub mean_similarity_before: f64,
    pub mean_similarity_after: f64,
    pub mean_loss_before: f64,
    pub mean_loss_after: f64,
    pub mean_violation_before: f64,
    pub mean_violation_after: f64,
    /// Mean similarity on the probe pairs, recorded every `record_every` steps.
    pub curve: Vec<f64>,
}

/// A (training instance, prototype) pair.
pub type SamplerPair<'a> = (EncodeInput<'a>, usize);

const PROBE_PAIRS: usize = 32;

/// Mean parts of the sampler objective over `pairs` under the current scorer.
pub fn evaluate_pairs(
    store: &ParamStore,
    encoder: &Encoder,
    layer: &PrototypeLayer,
    scorer: &EdgeScorer,
    pairs: &[SamplerPair<'_>],
    cfg: &SamplerConfig,
) -> Result<SamplerLossParts> {
    use rayon::prelude::*;
    let parts: Vec<SamplerLossParts> = pairs
        .par_iter()
        .map(|&(input, j)| {
            let p = layer.prototype(store, j);
            let z = node_embeddings(encoder, store, input)?;
            let mut tape = Tape::new();
            let w = scorer.edge_weights(&mut tape, store, input.graph, &z, p)?;
            Ok(sampler_loss(&mut tape, store, encoder, input, p, w, cfg, layer.eps_sim)?.1)
        })
        .collect::<Result<_>>()?;
    let n = parts.len().max(1) as f64;
    let mut mean = SamplerLossParts {
        loss: 0.0,
        similarity: 0.0,
        mass: 0.0,
        violation: 0.0,
    };
    for p in &parts {
        mean.loss += p.loss / n;
        mean.similarity += p.similarity / n;
        mean.mass += p.mass / n;
        mean.violation += p.violation / n;
    }
    Ok(mean)
}

/// Plain SGD on the scorer parameters over randomly drawn pairs; encoder and
/// prototypes are read but never updated. Aborts if the probe loss ends up
/// more than ten times its starting magnitude.
pub fn optimize_sampler(
    store: &mut ParamStore,
    encoder: &Encoder,
    layer: &PrototypeLayer,
    scorer: &EdgeScorer,
    pairs: &[SamplerPair<'_>],
    cfg: &SamplerConfig,
    record_every: usize,
    rng: &mut impl Rng,
) -> Result<SamplerReport> {
    cfg.validate()?;
    if pairs.is_empty() || cfg.sgd_steps == 0 {
        return Ok(SamplerReport::default());
    }
    let mut probe: Vec<SamplerPair<'_>> = pairs.to_vec();
    probe.shuffle(rng);
    probe.truncate(PROBE_PAIRS);
    let before = evaluate_pairs(store, encoder, layer, scorer, &probe, cfg)?;
    let mut curve = vec![before.similarity];
    let ids = scorer.param_ids();
    for step in 0..cfg.sgd_steps {
        let (input, j) = pairs[rng.gen_range(0..pairs.len())];
        let p = layer.prototype(store, j).to_vec();
        let z = node_embeddings(encoder, store, input)?;
        let mut tape = Tape::new();
        let w = scorer.edge_weights(&mut tape, store, input.graph, &z, &p)?;
        let (loss, _) = sampler_loss(&mut tape, store, encoder, input, &p, w, cfg, layer.eps_sim)?;
        store.zero_grads();
        tape.backward_into(loss, store)?;
        for &id in &ids {
            let param = store.get_mut(id);
            if param.grad.values().iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "sampler gradient of '{}' at step {step}",
                    param.name
                )));
            }
            let grad = param.grad.values().to_vec();
            for (x, d) in param.value.values_mut().iter_mut().zip(&grad) {
                *x -= cfg.sgd_lr * d;
            }
        }
        store.zero_grads();
        if record_every > 0 && (step + 1) % record_every == 0 {
            curve.push(evaluate_pairs(store, encoder, layer, scorer, &probe, cfg)?.similarity);
        }
    }
    let after = evaluate_pairs(store, encoder, layer, scorer, &probe, cfg)?;
    if after.loss > 10.0 * before.loss.abs() {
        return Err(Error::Divergence(format!(
            "sampler probe loss went from {} to {}",
            before.loss, after.loss
        )));
    }
    Ok(SamplerReport {
        steps: cfg.sgd_steps,
        mean_similarity_before: before.similarity,
        mean_similarity_after: after.similarity,
        mean_loss_before: before.loss,
        mean_loss_after: after.loss,
        mean_violation_before: before.violation,
        mean_violation_after: after.violation,
        curve,
    })
}

/// Top-`⌊budget⌋` edges by weight (ties to the lexicographically smaller
/// edge), restricted to the largest connected component they form.
/// Returns the kept edges and the subgraph induced on their nodes with its
/// node map.
pub fn select_subgraph(
    g: &Graph,
    weights: &[f64],
    budget: f64,
) -> Result<(Vec<(usize, usize)>, Graph, Vec<usize>)> {
    if weights.len() != g.num_edges() {
        return Err(Error::shape(
            "select_subgraph",
            format!("{} weights for {} edges", weights.len(), g.num_edges()),
        ));
    }
    let k = (budget.max(0.0).floor() as usize).min(g.num_edges());
    let mut order: Vec<usize> = (0..g.num_edges()).collect();
    order.sort_by(|&a, &b| {
        weights[b]
            .total_cmp(&weights[a])
            .then(g.edges()[a].cmp(&g.edges()[b]))
    });
    let mut kept: Vec<(usize, usize)> = order[..k].iter().map(|&i| g.edges()[i]).collect();
    kept.sort_unstable();
    if kept.is_empty() {
        return Err(Error::Graph("no edges selected".into()));
    }
    let n = g.num_nodes();
    let mut adj = vec![Vec::new(); n];
    for &(u, v) in &kept {
        adj[u].push(v);
        adj[v].push(u);
    }
    let mut seen = vec![false; n];
    let mut best: Vec<usize> = Vec::new();
    for &(s, _) in &kept {
        if seen[s] {
            continue;
        }
        let d = bfs(&adj, s, |_| true);
        let comp: Vec<usize> = (0..n).filter(|&v| d[v].is_some()).collect();
        comp.iter().for_each(|&v| seen[v] = true);
        if comp.len() > best.len() {
            best = comp;
        }
    }
    let mut in_best = vec![false; n];
    best.iter().for_each(|&v| in_best[v] = true);
    kept.retain(|&(u, _)| in_best[u]);
    let (sub, map) = g.induced_subgraph(&best)?;
    Ok((kept, sub, map))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cycle(n: usize) -> Graph {
        let edges = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Graph::new(n, edges, Tensor::filled(n, 2, 1.0)).unwrap()
    }

    #[test]
    fn zero_final_layer_gives_half() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let scorer = EdgeScorer::new(4, &mut store, &mut rng);
        let (w3, _) = scorer.layers[2];
        store.value_mut(w3).fill(0.0);
        let g = cycle(5);
        let z = Tensor::from_vec(5, 4, (0..20).map(|i| i as f64 * 0.1).collect()).unwrap();
        let e = edge_probabilities(&g, &z, &[0.3; 4], &scorer, &store).unwrap();
        for u in 0..5 {
            for v in 0..5 {
                let want = if g.has_edge(u, v) { 0.5 } else { 0.0 };
                assert_eq!(e.get(u, v), want);
            }
        }
        assert_eq!(scorer.invocations(), 10);
    }

    #[test]
    fn selection_rules() {
        let g = cycle(6);
        let (edges, sub, _) = select_subgraph(&g, &[0.5; 6], 10.0).unwrap();
        assert_eq!(edges, g.edges().to_vec());
        assert_eq!(sub.num_nodes(), 6);
        let w = [0.1, 0.9, 0.2, 0.3, 0.4, 0.5];
        let (one, _, map) = select_subgraph(&g, &w, 1.0).unwrap();
        assert_eq!(one, vec![g.edges()[1]]);
        assert_eq!(map.len(), 2);
        // Two kept edges far apart: the tie goes to the first component found.
        let (two, _, _) = select_subgraph(&g, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0], 2.0).unwrap();
        assert_eq!(two.len(), 1);
    }
}
