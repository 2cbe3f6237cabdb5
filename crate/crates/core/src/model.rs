//! Full model state (encoder, head, optional edge scorer), prediction, and
//! the versioned JSON checkpoint.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::config::{ModelKind, TrainConfig};
use crate::encoder::{EncodeInput, Encoder, EncoderConfig, GraphBatch, Readout};
use crate::error::{Error, Result};
use crate::graph::{Dataset, Graph, Task};
use crate::mcts::ProvenanceRecord;
use crate::prototype::{softmax, HeadOutput, LossTerms, PrototypeLayer};
use crate::sampler::{plus_head_forward, EdgeScorer, EdgeWeighting, SampledView};

pub const CHECKPOINT_VERSION: u32 = 1;

/// One classification instance ready for the encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    /// Instance index in the dataset.
    pub index: usize,
    /// Dataset graph the instance comes from.
    pub source_graph: usize,
    pub graph: Graph,
    pub center: Option<usize>,
    pub label: usize,
    /// For ego-nets, the dataset-graph index of every ego-net node.
    pub origin_nodes: Option<Vec<usize>>,
}

impl Example {
    pub fn input(&self) -> EncodeInput<'_> {
        EncodeInput {
            graph: &self.graph,
            center: self.center,
        }
    }
}

/// Turns every dataset instance into an [`Example`]; node instances become
/// `hops`-hop ego-nets.
pub fn prepare_examples(dataset: &Dataset, hops: usize) -> Result<Vec<Example>> {
    dataset.validate()?;
    dataset
        .instances()
        .into_par_iter()
        .enumerate()
        .map(|(index, inst)| {
            let g = &dataset.graphs[inst.graph];
            let label = dataset
                .label_of(inst)
                .ok_or_else(|| Error::Data(format!("instance {index} has no label")))?;
            Ok(match inst.node {
                None => Example {
                    index,
                    source_graph: inst.graph,
                    graph: g.clone(),
                    center: None,
                    label,
                    origin_nodes: None,
                },
                Some(v) => {
                    let ego = g.extract_ego_net(v, hops)?;
                    Example {
                        index,
                        source_graph: inst.graph,
                        graph: ego.subgraph,
                        center: Some(ego.center),
                        label,
                        origin_nodes: Some(ego.origin_nodes),
                    }
                }
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum Head {
    Linear { weight: ParamId, bias: ParamId },
    Prototype(PrototypeLayer),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub predicted: usize,
    /// Per-prototype similarity scores (prototype models only).
    pub similarities: Option<Vec<f64>>,
    /// Per-prototype sampled views (ProtGNN+ only).
    pub views: Option<Vec<SampledView>>,
}

impl From<HeadOutput> for Prediction {
    fn from(out: HeadOutput) -> Self {
        Self {
            predicted: out.predicted(),
            logits: out.logits,
            probs: out.probs,
            similarities: Some(out.similarities),
            views: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: TrainConfig,
    pub task: Task,
    pub num_classes: usize,
    pub input_dim: usize,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub head: Head,
    pub scorer: Option<EdgeScorer>,
    pub provenance: Vec<ProvenanceRecord>,
}

const LINEAR_WEIGHT: &str = "head.linear.weight";
const LINEAR_BIAS: &str = "head.linear.bias";

fn encoder_config(cfg: &TrainConfig, task: Task, input_dim: usize) -> EncoderConfig {
    EncoderConfig {
        num_layers: cfg.encoder.num_layers,
        input_dim,
        hidden_dim: cfg.encoder.hidden_dim,
        embed_dim: cfg.encoder.embed_dim,
        readout: match task {
            Task::Graph => cfg.encoder.readout,
            Task::Node => Readout::Center,
        },
    }
}

impl Model {
    /// Fresh parameters: encoder, head, then (ProtGNN+) the edge scorer.
    pub fn new(
        config: TrainConfig,
        task: Task,
        num_classes: usize,
        input_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        if num_classes == 0 {
            return Err(Error::Data("dataset has no classes".into()));
        }
        let mut store = ParamStore::new();
        let enc_cfg = encoder_config(&config, task, input_dim);
        let embed_dim = enc_cfg.embed_dim;
        let encoder = Encoder::new(enc_cfg, &mut store, rng)?;
        let head = match config.model {
            ModelKind::Gcn => {
                let bound = (6.0 / (embed_dim + num_classes) as f64).sqrt();
                let values = (0..embed_dim * num_classes)
                    .map(|_| rng.gen_range(-bound..bound))
                    .collect();
                let weight = store.add(
                    LINEAR_WEIGHT,
                    Tensor::from_vec(embed_dim, num_classes, values)?,
                    true,
                );
                let bias = store.add(LINEAR_BIAS, Tensor::zeros(1, num_classes), true);
                Head::Linear { weight, bias }
            }
            ModelKind::Protgnn => Head::Prototype(PrototypeLayer::new(
                num_classes,
                config.m,
                embed_dim,
                config.eps_sim,
                &mut store,
                rng,
            )?),
        };
        let scorer = config
            .protgnn_plus
            .then(|| EdgeScorer::new(embed_dim, &mut store, rng));
        Ok(Self {
            config,
            task,
            num_classes,
            input_dim,
            store,
            encoder,
            head,
            scorer,
            provenance: Vec::new(),
        })
    }

    pub fn prototype_layer(&self) -> Option<&PrototypeLayer> {
        match &self.head {
            Head::Prototype(layer) => Some(layer),
            Head::Linear { .. } => None,
        }
    }

    /// Taped mean training objective on a batch and the value of each term.
    pub fn batch_loss(
        &self,
        tape: &mut Tape,
        batch: &[&Example],
    ) -> Result<(Var, LossTerms, Vec<usize>)> {
        let inputs: Vec<EncodeInput<'_>> = batch.iter().map(|e| e.input()).collect();
        let labels: Vec<usize> = batch.iter().map(|e| e.label).collect();
        let gb = GraphBatch::new(&inputs)?;
        let enc = self.encoder.forward(tape, &self.store, &gb)?;
        let (loss, terms, logits) = match &self.head {
            Head::Linear { weight, bias } => {
                let w = tape.param(&self.store, *weight);
                let b = tape.param(&self.store, *bias);
                let lin = tape.matmul(enc.graph, w)?;
                let logits = tape.add_row(lin, b)?;
                let ce = tape.softmax_cross_entropy(logits, &labels)?;
                let v = tape.value(ce).item();
                let terms = LossTerms {
                    total: v,
                    cross_entropy: v,
                    ..LossTerms::default()
                };
                (ce, terms, logits)
            }
            Head::Prototype(layer) => {
                let (loss, terms) =
                    layer.total_loss(tape, &self.store, enc.graph, &labels, &self.config.loss)?;
                // Logits are recomputed for accuracy bookkeeping only.
                let (sims, _) = layer.similarities(tape, &self.store, enc.graph)?;
                let logits = layer.logits(tape, &self.store, sims)?;
                (loss, terms, logits)
            }
        };
        let lv = tape.value(logits);
        let preds = (0..lv.rows())
            .map(|r| crate::prototype::argmax(lv.row(r)))
            .collect();
        Ok((loss, terms, preds))
    }

    /// Graph embedding `h` of one input.
    pub fn embed(&self, input: EncodeInput<'_>) -> Result<Vec<f64>> {
        self.encoder.embed(&self.store, input)
    }

    /// ProtGNN prediction (no sampling), whatever the model kind.
    pub fn predict_plain(&self, input: EncodeInput<'_>) -> Result<Prediction> {
        let h = self.embed(input)?;
        Ok(match &self.head {
            Head::Linear { weight, bias } => {
                let w = self.store.value(*weight);
                let b = self.store.value(*bias);
                let logits: Vec<f64> = (0..self.num_classes)
                    .map(|k| {
                        b.get(0, k)
                            + h.iter()
                                .enumerate()
                                .map(|(i, x)| x * w.get(i, k))
                                .sum::<f64>()
                    })
                    .collect();
                let probs = softmax(&logits);
                Prediction {
                    predicted: crate::prototype::argmax(&logits),
                    logits,
                    probs,
                    similarities: None,
                    views: None,
                }
            }
            Head::Prototype(layer) => layer.head_forward(&self.store, &h).into(),
        })
    }

    /// The model's own prediction: ProtGNN+ compares each prototype with its
    /// sampled view, everything else uses the plain path.
    pub fn predict(&self, input: EncodeInput<'_>) -> Result<Prediction> {
        match (&self.head, &self.scorer) {
            (Head::Prototype(layer), Some(scorer)) => {
                let (out, views) = plus_head_forward(
                    &self.store,
                    &self.encoder,
                    layer,
                    EdgeWeighting::Learned(scorer),
                    input,
                )?;
                let mut p: Prediction = out.into();
                p.views = Some(views);
                Ok(p)
            }
            _ => self.predict_plain(input),
        }
    }

    pub fn predict_many(&self, examples: &[&Example]) -> Result<Vec<Prediction>> {
        examples
            .par_iter()
            .map(|e| self.predict(e.input()))
            .collect()
    }

    pub fn to_checkpoint(&self, epoch: usize, best_val_accuracy: f64) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            task: self.task,
            num_classes: self.num_classes,
            input_dim: self.input_dim,
            tensors: self
                .store
                .iter()
                .map(|p| NamedTensor {
                    name: p.name.clone(),
                    shape: [p.value.rows(), p.value.cols()],
                    trainable: p.trainable,
                    values: p.value.values().to_vec(),
                })
                .collect(),
            provenance: self.provenance.clone(),
            epoch,
            best_val_accuracy,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: ckpt.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let config = ckpt.config.clone();
        config.validate()?;
        let mut store = ParamStore::new();
        for t in &ckpt.tensors {
            let value = Tensor::from_vec(t.shape[0], t.shape[1], t.values.clone())
                .map_err(|e| Error::Data(format!("tensor '{}': {e}", t.name)))?;
            store.add(t.name.clone(), value, t.trainable);
        }
        let enc_cfg = encoder_config(&config, ckpt.task, ckpt.input_dim);
        let embed_dim = enc_cfg.embed_dim;
        let encoder = Encoder::from_store(enc_cfg, &store)?;
        let head = match config.model {
            ModelKind::Gcn => {
                let find = |n: &str| {
                    store
                        .find(n)
                        .ok_or_else(|| Error::Data(format!("missing parameter '{n}'")))
                };
                Head::Linear {
                    weight: find(LINEAR_WEIGHT)?,
                    bias: find(LINEAR_BIAS)?,
                }
            }
            ModelKind::Protgnn => Head::Prototype(PrototypeLayer::from_store(
                ckpt.num_classes,
                config.m,
                config.eps_sim,
                &store,
            )?),
        };
        let scorer = if config.protgnn_plus {
            Some(EdgeScorer::from_store(embed_dim, &store)?)
        } else {
            None
        };
        Ok(Self {
            config,
            task: ckpt.task,
            num_classes: ckpt.num_classes,
            input_dim: ckpt.input_dim,
            store,
            encoder,
            head,
            scorer,
            provenance: ckpt.provenance.clone(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: [usize; 2],
    pub trainable: bool,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub task: Task,
    pub num_classes: usize,
    pub input_dim: usize,
    pub tensors: Vec<NamedTensor>,
    pub provenance: Vec<ProvenanceRecord>,
    pub epoch: usize,
    pub best_val_accuracy: f64,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses a checkpoint, rejecting unknown versions before anything else.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let version = value
            .get("version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::schema("version", "missing checkpoint version"))?;
        if version != u64::from(CHECKPOINT_VERSION) {
            return Err(Error::Version {
                found: version as u32,
                expected: CHECKPOINT_VERSION,
            });
        }
        serde_json::from_value(value).map_err(|e| Error::schema("checkpoint", e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
