//! Algorithm 1: optimize the objective each epoch, project prototypes on
//! schedule, alternate sampler passes after warm-up, and keep the best
//! validation state.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, Tape};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::graph::Dataset;
use crate::mcts::{project_prototype, ProjectionCandidate, ProvenanceRecord};
use crate::model::{prepare_examples, Checkpoint, Example, Model};
use crate::prototype::LossTerms;
use crate::sampler::{optimize_sampler, SamplerPair, SamplerReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Batch-size-weighted means over the epoch.
    pub loss: LossTerms,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub epochs: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub test_accuracy: f64,
    pub projection_epochs: Vec<usize>,
    pub sampler_reports: Vec<(usize, SamplerReport)>,
    pub stopped_early: bool,
}

/// Hooks fired during training.
pub enum TrainEvent<'a> {
    Epoch(&'a EpochMetrics),
    /// Right after prototypes were overwritten.
    Projection {
        epoch: usize,
        model: &'a Model,
        examples: &'a [Example],
        records: &'a [ProvenanceRecord],
    },
    Sampler {
        epoch: usize,
        report: &'a SamplerReport,
    },
}

pub struct TrainOutcome {
    /// Model restored to the selected epoch.
    pub model: Model,
    pub checkpoint: Checkpoint,
    pub metrics: Metrics,
}

/// A numeric failure together with the last state that trained cleanly.
#[derive(Debug)]
pub struct TrainFailure {
    pub error: Error,
    pub last_good: Option<Box<Checkpoint>>,
}

impl From<Error> for TrainFailure {
    fn from(error: Error) -> Self {
        Self {
            error,
            last_good: None,
        }
    }
}

impl std::fmt::Display for TrainFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub predictions: Vec<usize>,
    pub logits: Vec<Vec<f64>>,
}

pub fn evaluate_examples(model: &Model, examples: &[&Example]) -> Result<EvalReport> {
    let preds = model.predict_many(examples)?;
    let c = model.num_classes;
    let mut confusion = vec![vec![0; c]; c];
    for (e, p) in examples.iter().zip(&preds) {
        confusion[e.label][p.predicted] += 1;
    }
    let correct: usize = (0..c).map(|k| confusion[k][k]).sum();
    Ok(EvalReport {
        accuracy: if examples.is_empty() {
            0.0
        } else {
            correct as f64 / examples.len() as f64
        },
        confusion,
        predictions: preds.iter().map(|p| p.predicted).collect(),
        logits: preds.into_iter().map(|p| p.logits).collect(),
    })
}

fn plain_accuracy(model: &Model, examples: &[&Example]) -> Result<f64> {
    let correct = examples
        .par_iter()
        .map(|e| Ok((model.predict_plain(e.input())?.predicted == e.label) as usize))
        .collect::<Result<Vec<_>>>()?;
    Ok(correct.iter().sum::<usize>() as f64 / examples.len().max(1) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split '{other}'"))),
        }
    }
}

pub fn split_indices(dataset: &Dataset, split: Split) -> Result<&[usize]> {
    let s = dataset.splits()?;
    Ok(match split {
        Split::Train => &s.train,
        Split::Val => &s.val,
        Split::Test => &s.test,
    })
}

/// Accuracy and confusion matrix of `model` on one split.
pub fn evaluate(model: &Model, dataset: &Dataset, split: Split) -> Result<EvalReport> {
    check_compatible(model, dataset)?;
    let examples = prepare_examples(dataset, model.encoder.config.num_layers)?;
    let idx = split_indices(dataset, split)?;
    let chosen: Vec<&Example> = idx.iter().map(|&i| &examples[i]).collect();
    evaluate_examples(model, &chosen)
}

pub fn check_compatible(model: &Model, dataset: &Dataset) -> Result<()> {
    if dataset.task != model.task
        || dataset.num_classes != model.num_classes
        || dataset.feature_dim() != model.input_dim
    {
        return Err(Error::Data(format!(
            "dataset '{}' ({:?}, {} classes, {} features) does not match the model ({:?}, {} classes, {} features)",
            dataset.name,
            dataset.task,
            dataset.num_classes,
            dataset.feature_dim(),
            model.task,
            model.num_classes,
            model.input_dim
        )));
    }
    Ok(())
}

/// Projects every prototype onto its nearest same-class training subgraph
/// and overwrites it with that subgraph's embedding.
pub fn project_all(
    model: &mut Model,
    examples: &[Example],
    train: &[usize],
) -> Result<Vec<ProvenanceRecord>> {
    let Some(layer) = model.prototype_layer().cloned() else {
        return Ok(Vec::new());
    };
    let cfg = model.config.mcts.clone();
    let mut by_class: Vec<Vec<ProjectionCandidate<'_>>> = Vec::with_capacity(layer.num_classes);
    for k in 0..layer.num_classes {
        let inputs: Vec<_> = train
            .iter()
            .map(|&i| &examples[i])
            .filter(|e| e.label == k)
            .map(|e| (e.input(), e.index))
            .collect();
        by_class.push(ProjectionCandidate::build(
            &model.encoder,
            &model.store,
            &inputs,
        )?);
    }
    let projections: Vec<_> = (0..layer.num_prototypes())
        .into_par_iter()
        .map(|j| {
            let p = layer.prototype(&model.store, j);
            project_prototype(
                p,
                &by_class[layer.class_of(j)],
                &model.encoder,
                &model.store,
                layer.eps_sim,
                &cfg,
            )
        })
        .collect::<Result<_>>()?;
    let mut records = Vec::with_capacity(projections.len());
    for (j, proj) in projections.into_iter().enumerate() {
        model
            .store
            .value_mut(layer.prototypes)
            .row_mut(j)
            .copy_from_slice(&proj.embedding);
        let ex = &examples[proj.source_graph_index];
        let node_set = match &ex.origin_nodes {
            Some(map) => proj.node_set.iter().map(|&v| map[v]).collect(),
            None => proj.node_set,
        };
        records.push(ProvenanceRecord {
            prototype_index: j,
            class: layer.class_of(j),
            source_graph_index: proj.source_graph_index,
            node_set,
            score: proj.score,
        });
    }
    model.provenance = records.clone();
    Ok(records)
}

/// Re-embeds the subgraph a provenance record points at.
pub fn provenance_embedding(
    model: &Model,
    dataset: &Dataset,
    record: &ProvenanceRecord,
) -> Result<Vec<f64>> {
    let inst = dataset
        .instances()
        .get(record.source_graph_index)
        .copied()
        .ok_or_else(|| {
            Error::Data(format!(
                "instance {} out of range",
                record.source_graph_index
            ))
        })?;
    let g = &dataset.graphs[inst.graph];
    let (sub, map) = g.induced_subgraph(&record.node_set)?;
    let center = match inst.node {
        Some(c) => Some(
            map.binary_search(&c)
                .map_err(|_| Error::Data("provenance subgraph lost its center".into()))?,
        ),
        None => None,
    };
    model.embed(crate::encoder::EncodeInput {
        graph: &sub,
        center,
    })
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Trains per Algorithm 1 and returns the model at the selected epoch.
pub fn train(
    dataset: &Dataset,
    config: &TrainConfig,
    mut observer: impl FnMut(TrainEvent<'_>),
) -> std::result::Result<TrainOutcome, TrainFailure> {
    config.validate()?;
    let splits = dataset.splits()?.clone();
    if splits.train.is_empty() {
        return Err(Error::Data("training split is empty".into()).into());
    }
    let examples = prepare_examples(dataset, config.encoder.num_layers)?;
    let mut init_rng = rng_stream(config.seed, 0);
    let mut batch_rng = rng_stream(config.seed, 1);
    let mut sampler_rng = rng_stream(config.seed, 2);
    let mut model = Model::new(
        config.clone(),
        dataset.task,
        dataset.num_classes,
        dataset.feature_dim(),
        &mut init_rng,
    )?;
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        &model.store,
    );
    let val: Vec<&Example> = splits.val.iter().map(|&i| &examples[i]).collect();
    let test: Vec<&Example> = splits.test.iter().map(|&i| &examples[i]).collect();
    let mut order = splits.train.clone();
    let mut metrics = Metrics::default();
    let mut best: Option<(Model, usize, f64)> = None;
    let mut best_strict = f64::NEG_INFINITY;
    let mut last_improvement = 0;
    let patience_from = config.schedule_start();
    let last_good = |best: &Option<(Model, usize, f64)>| {
        best.as_ref()
            .map(|(m, e, a)| Box::new(m.to_checkpoint(*e, *a)))
    };

    for t in 1..=config.epochs {
        order.shuffle(&mut batch_rng);
        let mut sums = LossTerms::default();
        let mut correct = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            let step = (|| -> Result<()> {
                let mut tape = Tape::new();
                let (loss, terms, preds) = model.batch_loss(&mut tape, &batch)?;
                tape.backward_into(loss, &mut model.store)?;
                adam.step(&mut model.store)?;
                let w = batch.len() as f64;
                sums.total += terms.total * w;
                sums.cross_entropy += terms.cross_entropy * w;
                sums.cluster += terms.cluster * w;
                sums.separation += terms.separation * w;
                sums.diversity += terms.diversity * w;
                correct += batch
                    .iter()
                    .zip(&preds)
                    .filter(|(e, &p)| e.label == p)
                    .count();
                Ok(())
            })();
            if let Err(error) = step {
                return Err(TrainFailure {
                    error,
                    last_good: last_good(&best),
                });
            }
        }
        let n = order.len() as f64;
        let loss = LossTerms {
            total: sums.total / n,
            cross_entropy: sums.cross_entropy / n,
            cluster: sums.cluster / n,
            separation: sums.separation / n,
            diversity: sums.diversity / n,
        };

        if config.projects_at(t) {
            let records = project_all(&mut model, &examples, &splits.train)?;
            metrics.projection_epochs.push(t);
            observer(TrainEvent::Projection {
                epoch: t,
                model: &model,
                examples: &examples,
                records: &records,
            });
        }

        if config.samples_at(t) {
            let layer = model
                .prototype_layer()
                .cloned()
                .expect("sampler implies prototypes");
            let scorer = model.scorer.clone().expect("protgnn_plus has a scorer");
            let pairs: Vec<SamplerPair<'_>> = splits
                .train
                .iter()
                .flat_map(|&i| {
                    let ex = &examples[i];
                    (0..layer.num_prototypes()).map(move |j| (ex.input(), j))
                })
                .collect();
            let report = optimize_sampler(
                &mut model.store,
                &model.encoder,
                &layer,
                &scorer,
                &pairs,
                &config.sampler,
                0,
                &mut sampler_rng,
            );
            let report = match report {
                Ok(r) => r,
                Err(error) => {
                    return Err(TrainFailure {
                        error,
                        last_good: last_good(&best),
                    })
                }
            };
            observer(TrainEvent::Sampler {
                epoch: t,
                report: &report,
            });
            metrics.sampler_reports.push((t, report));
        }

        // Until the sampler has trained, a ProtGNN+ model is scored like ProtGNN
        // and is not eligible for selection.
        let sampled = !metrics.sampler_reports.is_empty();
        let val_accuracy = if model.scorer.is_some() && !sampled {
            plain_accuracy(&model, &val)?
        } else {
            evaluate_examples(&model, &val)?.accuracy
        };
        let selectable = sampled || !config.protgnn_plus || config.epochs <= config.warmup_epoch;
        let em = EpochMetrics {
            epoch: t,
            loss,
            train_accuracy: correct as f64 / n,
            val_accuracy,
        };
        observer(TrainEvent::Epoch(&em));
        metrics.epochs.push(em);

        // Ties move the selection later so projected states win over
        // equally accurate earlier ones.
        if selectable && best.as_ref().is_none_or(|(_, _, a)| val_accuracy >= *a) {
            best = Some((model.clone(), t, val_accuracy));
        }
        if val_accuracy > best_strict {
            best_strict = val_accuracy;
            last_improvement = t;
        }
        if t.saturating_sub(last_improvement.max(patience_from)) >= config.patience {
            metrics.stopped_early = t < config.epochs;
            break;
        }
    }

    let (model, best_epoch, best_val) = best.expect("at least one epoch ran");
    metrics.best_epoch = best_epoch;
    metrics.best_val_accuracy = best_val;
    metrics.test_accuracy = evaluate_examples(&model, &test)?.accuracy;
    let checkpoint = model.to_checkpoint(best_epoch, best_val);
    Ok(TrainOutcome {
        model,
        checkpoint,
        metrics,
    })
}
