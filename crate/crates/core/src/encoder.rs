//! GCN encoder: node embeddings `Z` and a pooled graph embedding `h`.
//!
//! Each layer computes `relu(Ã · H · W)` with `Ã = D̂^{-1/2}(A + I)D̂^{-1/2}`
//! and no bias. Edge weights in `[0, 1]` scale the off-diagonal entries of
//! `A + I` before the degrees are taken; self-loops always keep weight 1.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    gather_rows, relu, segment_max, segment_sum, ParamId, ParamStore, SparseMatrix, Tape, Tensor,
    Var,
};
use crate::error::{Error, Result};
use crate::graph::Graph;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Readout {
    Sum,
    Max,
    /// Embedding of the center node (node-classification ego-nets).
    Center,
}

impl std::str::FromStr for Readout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Readout::Sum),
            "max" => Ok(Readout::Max),
            "center" | "center-node" => Ok(Readout::Center),
            other => Err(Error::Config(format!("unknown readout '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub readout: Readout,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            num_layers: 3,
            input_dim: 1,
            hidden_dim: 128,
            embed_dim: 128,
            readout: Readout::Sum,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0
            || self.input_dim == 0
            || self.hidden_dim == 0
            || self.embed_dim == 0
        {
            return Err(Error::Config(
                "encoder dimensions must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        (0..self.num_layers)
            .map(|k| {
                let fan_in = if k == 0 {
                    self.input_dim
                } else {
                    self.hidden_dim
                };
                let fan_out = if k + 1 == self.num_layers {
                    self.embed_dim
                } else {
                    self.hidden_dim
                };
                (fan_in, fan_out)
            })
            .collect()
    }
}

/// A graph (or ego-net) to encode, optionally with a center node.
#[derive(Clone, Copy, Debug)]
pub struct EncodeInput<'a> {
    pub graph: &'a Graph,
    pub center: Option<usize>,
}

impl<'a> EncodeInput<'a> {
    pub fn graph(graph: &'a Graph) -> Self {
        Self {
            graph,
            center: None,
        }
    }

    pub fn centered(graph: &'a Graph, center: usize) -> Self {
        Self {
            graph,
            center: Some(center),
        }
    }
}

/// Several graphs stacked into one block-diagonal system.
pub struct GraphBatch {
    features: Tensor,
    adjacency: Arc<SparseMatrix>,
    offsets: Vec<usize>,
    centers: Option<Vec<usize>>,
}

impl GraphBatch {
    pub fn new(inputs: &[EncodeInput<'_>]) -> Result<Self> {
        let total: usize = inputs.iter().map(|i| i.graph.num_nodes()).sum();
        let d = inputs.first().map_or(0, |i| i.graph.feature_dim());
        let mut features = Vec::with_capacity(total * d);
        let mut triplets = Vec::new();
        let mut offsets = vec![0];
        let mut centers = Vec::with_capacity(inputs.len());
        for input in inputs {
            let g = input.graph;
            if g.num_nodes() == 0 {
                return Err(Error::Graph("cannot encode an empty graph".into()));
            }
            if g.feature_dim() != d {
                return Err(Error::shape(
                    "graph_batch",
                    format!("feature width {} vs {d}", g.feature_dim()),
                ));
            }
            let base = *offsets.last().unwrap();
            features.extend_from_slice(g.features().values());
            triplets.extend(
                g.normalized_entries()
                    .into_iter()
                    .map(|(u, v, w)| (base + u, base + v, w)),
            );
            if let Some(c) = input.center {
                if c >= g.num_nodes() {
                    return Err(Error::Graph(format!("center {c} out of range")));
                }
                centers.push(base + c);
            }
            offsets.push(base + g.num_nodes());
        }
        let centers = if centers.is_empty() {
            None
        } else if centers.len() == inputs.len() {
            Some(centers)
        } else {
            return Err(Error::Graph(
                "either all or no batch entries need a center".into(),
            ));
        };
        Ok(Self {
            features: Tensor::from_vec(total, d, features)?,
            adjacency: Arc::new(SparseMatrix::from_sorted_triplets(total, total, &triplets)),
            offsets,
            centers,
        })
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Output of a taped forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    /// One pooled embedding per graph (`B × embed_dim`).
    pub graph: Var,
    /// Last-layer node embeddings (`N × embed_dim`).
    pub nodes: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    weights: Vec<ParamId>,
}

/// One GCN layer on dense inputs: `relu(Ã · H · W)`.
pub fn gcn_layer_forward(h: &Tensor, a_norm: &Tensor, w: &Tensor) -> Result<Tensor> {
    Ok(relu(&a_norm.matmul(&h.matmul(w)?)?))
}

impl Encoder {
    /// Registers `num_layers` weight matrices, uniform in `±sqrt(6/(fan_in+fan_out))`.
    pub fn new(config: EncoderConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let weights = config
            .layer_shapes()
            .into_iter()
            .enumerate()
            .map(|(k, (fan_in, fan_out))| {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let values = (0..fan_in * fan_out)
                    .map(|_| rng.gen_range(-bound..bound))
                    .collect();
                let w = Tensor::from_vec(fan_in, fan_out, values).expect("shape");
                store.add(format!("encoder.layer{k}.weight"), w, true)
            })
            .collect();
        Ok(Self { config, weights })
    }

    /// Rebinds an encoder to parameters already present in `store`.
    pub fn from_store(config: EncoderConfig, store: &ParamStore) -> Result<Self> {
        config.validate()?;
        let mut weights = Vec::with_capacity(config.num_layers);
        for (k, (fan_in, fan_out)) in config.layer_shapes().into_iter().enumerate() {
            let name = format!("encoder.layer{k}.weight");
            let id = store
                .find(&name)
                .ok_or_else(|| Error::Data(format!("missing parameter '{name}'")))?;
            if store.value(id).shape() != [fan_in, fan_out] {
                return Err(Error::shape("encoder", format!("{name} has wrong shape")));
            }
            weights.push(id);
        }
        Ok(Self { config, weights })
    }

    pub fn weights(&self) -> &[ParamId] {
        &self.weights
    }

    fn check_input(&self, feature_dim: usize) -> Result<()> {
        if feature_dim != self.config.input_dim {
            return Err(Error::shape(
                "encoder",
                format!(
                    "feature width {feature_dim}, encoder expects {}",
                    self.config.input_dim
                ),
            ));
        }
        Ok(())
    }

    fn check_readout(&self, has_centers: bool) -> Result<()> {
        if self.config.readout == Readout::Center && !has_centers {
            return Err(Error::Config("center readout needs a center node".into()));
        }
        Ok(())
    }

    /// Taped forward pass over a batch (the training path).
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        batch: &GraphBatch,
    ) -> Result<Encoded> {
        self.check_input(batch.features.cols())?;
        self.check_readout(batch.centers.is_some())?;
        let mut h = tape.constant(batch.features.clone());
        for &w in &self.weights {
            let wv = tape.param(store, w);
            let hw = tape.matmul(h, wv)?;
            let agg = tape.propagate(batch.adjacency.clone(), hw)?;
            h = tape.relu(agg)?;
        }
        let graph = match self.config.readout {
            Readout::Sum => tape.segment_sum(h, &batch.offsets)?,
            Readout::Max => tape.segment_max(h, &batch.offsets)?,
            Readout::Center => tape.gather_rows(h, batch.centers.as_ref().unwrap())?,
        };
        Ok(Encoded { graph, nodes: h })
    }

    /// Taped forward pass of one graph whose edges carry weights
    /// (`E × 1`, aligned with `graph.edges()`).
    pub fn forward_weighted(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        input: EncodeInput<'_>,
        edge_weights: Var,
    ) -> Result<Encoded> {
        let g = input.graph;
        self.check_input(g.feature_dim())?;
        self.check_readout(input.center.is_some())?;
        let mut h = tape.constant(g.features().clone());
        for &w in &self.weights {
            let wv = tape.param(store, w);
            let hw = tape.matmul(h, wv)?;
            let agg = tape.weighted_propagate(edge_weights, g.edges(), hw)?;
            h = tape.relu(agg)?;
        }
        let graph = match self.config.readout {
            Readout::Sum => tape.segment_sum(h, &[0, g.num_nodes()])?,
            Readout::Max => tape.segment_max(h, &[0, g.num_nodes()])?,
            Readout::Center => {
                let c = input
                    .center
                    .filter(|&c| c < g.num_nodes())
                    .ok_or_else(|| Error::Graph("center out of range".into()))?;
                tape.gather_rows(h, &[c])?
            }
        };
        Ok(Encoded { graph, nodes: h })
    }

    /// Untaped forward pass; bit-identical to [`Encoder::forward`].
    /// Returns `(graph embeddings, node embeddings)`.
    pub fn embed_batch(&self, store: &ParamStore, batch: &GraphBatch) -> Result<(Tensor, Tensor)> {
        self.check_input(batch.features.cols())?;
        self.check_readout(batch.centers.is_some())?;
        let mut h = batch.features.clone();
        for &w in &self.weights {
            h = relu(&batch.adjacency.mul(&h.matmul(store.value(w))?));
        }
        let graph = match self.config.readout {
            Readout::Sum => segment_sum(&h, &batch.offsets),
            Readout::Max => segment_max(&h, &batch.offsets)?.0,
            Readout::Center => gather_rows(&h, batch.centers.as_ref().unwrap())?,
        };
        Ok((graph, h))
    }

    /// Graph embedding of a single input.
    pub fn embed(&self, store: &ParamStore, input: EncodeInput<'_>) -> Result<Vec<f64>> {
        let batch = GraphBatch::new(&[input])?;
        Ok(self.embed_batch(store, &batch)?.0.into_values())
    }

    /// Graph embeddings of many inputs, batched `chunk` at a time.
    pub fn embed_many(
        &self,
        store: &ParamStore,
        inputs: &[EncodeInput<'_>],
        chunk: usize,
    ) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(inputs.len());
        for part in inputs.chunks(chunk.max(1)) {
            let batch = GraphBatch::new(part)?;
            let (emb, _) = self.embed_batch(store, &batch)?;
            out.extend((0..emb.rows()).map(|r| emb.row(r).to_vec()));
        }
        Ok(out)
    }

    /// Graph embedding `h` and node embeddings `Z`, optionally under a
    /// symmetric `n × n` edge-weight matrix with entries in `[0, 1]`.
    pub fn encode_graph(
        &self,
        store: &ParamStore,
        input: EncodeInput<'_>,
        edge_weights: Option<&Tensor>,
    ) -> Result<(Vec<f64>, Tensor)> {
        match edge_weights {
            None => {
                let batch = GraphBatch::new(&[input])?;
                let (h, z) = self.embed_batch(store, &batch)?;
                Ok((h.into_values(), z))
            }
            Some(m) => {
                let weights = edge_weight_vector(input.graph, m)?;
                let mut tape = Tape::new();
                let w = tape.constant(weights);
                let enc = self.forward_weighted(&mut tape, store, input, w)?;
                Ok((
                    tape.value(enc.graph).values().to_vec(),
                    tape.value(enc.nodes).clone(),
                ))
            }
        }
    }
}

/// Extracts per-edge weights (aligned with `g.edges()`) from a symmetric
/// `n × n` matrix with entries in `[0, 1]`.
pub fn edge_weight_vector(g: &Graph, m: &Tensor) -> Result<Tensor> {
    let n = g.num_nodes();
    if m.shape() != [n, n] {
        return Err(Error::shape(
            "edge_weights",
            format!("{:?} for {n} nodes", m.shape()),
        ));
    }
    for u in 0..n {
        for v in u + 1..n {
            if (m.get(u, v) - m.get(v, u)).abs() > 1e-12 {
                return Err(Error::Config(format!(
                    "edge weights are not symmetric at ({u},{v})"
                )));
            }
        }
    }
    let values: Vec<f64> = g.edges().iter().map(|&(u, v)| m.get(u, v)).collect();
    if let Some(bad) = values.iter().find(|w| !(0.0..=1.0).contains(*w)) {
        return Err(Error::Config(format!("edge weight {bad} outside [0, 1]")));
    }
    Tensor::from_vec(values.len(), 1, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn path2() -> Graph {
        Graph::new(2, vec![(0, 1)], Tensor::identity(2)).unwrap()
    }

    #[test]
    fn layer_examples() {
        let one = Tensor::filled(1, 1, 1.0);
        let out = gcn_layer_forward(&one, &one, &Tensor::filled(1, 1, 2.0)).unwrap();
        assert_eq!(out.values(), &[2.0]);

        let g = path2();
        let a = g.normalize_adjacency();
        let out = gcn_layer_forward(&Tensor::identity(2), &a, &Tensor::identity(2)).unwrap();
        assert_eq!(out.values(), &[0.5, 0.5, 0.5, 0.5]);
        let zero = gcn_layer_forward(&Tensor::identity(2), &a, &Tensor::zeros(2, 2)).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));
    }

    fn encoder(readout: Readout, input_dim: usize) -> (Encoder, ParamStore) {
        let mut store = ParamStore::new();
        let cfg = EncoderConfig {
            num_layers: 2,
            input_dim,
            hidden_dim: 4,
            embed_dim: 3,
            readout,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        (Encoder::new(cfg, &mut store, &mut rng).unwrap(), store)
    }

    #[test]
    fn weights_have_layer_shapes() {
        let (enc, store) = encoder(Readout::Sum, 5);
        let shapes: Vec<_> = enc
            .weights()
            .iter()
            .map(|&w| store.value(w).shape())
            .collect();
        assert_eq!(shapes, vec![[5, 4], [4, 3]]);
        assert_eq!(
            Encoder::from_store(enc.config.clone(), &store).unwrap(),
            enc
        );
    }

    #[test]
    fn sum_readout_of_single_node() {
        let (enc, store) = encoder(Readout::Sum, 2);
        let g = Graph::new(1, vec![], Tensor::row_vector(vec![0.3, 0.9])).unwrap();
        let (h, z) = enc
            .encode_graph(&store, EncodeInput::graph(&g), None)
            .unwrap();
        assert_eq!(h, z.row(0));
    }

    #[test]
    fn rejects_wrong_input_width_and_asymmetric_weights() {
        let (enc, store) = encoder(Readout::Sum, 3);
        let g = path2();
        assert!(enc.embed(&store, EncodeInput::graph(&g)).is_err());
        let (enc, store) = encoder(Readout::Sum, 2);
        let bad = Tensor::from_vec(2, 2, vec![0.0, 0.3, 0.4, 0.0]).unwrap();
        assert!(enc
            .encode_graph(&store, EncodeInput::graph(&g), Some(&bad))
            .is_err());
    }

    #[test]
    fn center_readout_requires_center() {
        let (enc, store) = encoder(Readout::Center, 2);
        let g = path2();
        assert!(enc.embed(&store, EncodeInput::graph(&g)).is_err());
        let h = enc.embed(&store, EncodeInput::centered(&g, 1)).unwrap();
        let (_, z) = enc
            .encode_graph(&store, EncodeInput::centered(&g, 1), None)
            .unwrap();
        assert_eq!(h, z.row(1));
    }
}
