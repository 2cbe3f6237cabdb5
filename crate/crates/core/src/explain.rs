//! Explanation bundles (JSON + DOT) and embedding export.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Dataset, Graph};
use crate::mcts::ProvenanceRecord;
use crate::model::{prepare_examples, Model};
use crate::sampler::select_subgraph;
use crate::train::check_compatible;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypeEvidence {
    pub prototype_index: usize,
    pub class: usize,
    pub similarity: f64,
    /// Similarity against the unsampled embedding (equals `similarity`
    /// without a sampler).
    pub similarity_before: f64,
    pub similarity_after: f64,
    /// `[u, v, e]` per edge of the explained graph (ProtGNN+ only).
    pub edge_weights: Vec<(usize, usize, f64)>,
    pub selected_edges: Vec<(usize, usize)>,
    pub provenance: Option<ProvenanceRecord>,
    pub dot_file: Option<String>,
    pub source_dot_file: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: usize,
    pub prototypes: Vec<usize>,
    /// Sum of the listed similarity scores.
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub instance: usize,
    pub graph_index: usize,
    pub center: Option<usize>,
    pub label: usize,
    pub predicted: usize,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub prototypes: Vec<PrototypeEvidence>,
    pub class_scores: Vec<ClassScore>,
    pub graph_dot_file: String,
}

/// Graphviz rendering; highlighted edges and nodes are drawn in red.
pub fn to_dot(
    g: &Graph,
    name: &str,
    highlight_edges: &[(usize, usize)],
    highlight_nodes: &[usize],
    node_names: Option<&[usize]>,
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "graph \"{name}\" {{");
    let _ = writeln!(out, "  node [shape=circle];");
    for v in 0..g.num_nodes() {
        let label = node_names.map_or(v, |n| n[v]);
        if highlight_nodes.contains(&v) {
            let _ = writeln!(
                out,
                "  {v} [label=\"{label}\", color=red, style=filled, fillcolor=mistyrose];"
            );
        } else {
            let _ = writeln!(out, "  {v} [label=\"{label}\"];");
        }
    }
    for &(u, v) in g.edges() {
        if highlight_edges.contains(&(u, v)) {
            let _ = writeln!(out, "  {u} -- {v} [color=red, penwidth=3];");
        } else {
            let _ = writeln!(out, "  {u} -- {v};");
        }
    }
    out.push_str("}\n");
    out
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<()> {
    std::fs::write(dir.join(name), text)?;
    Ok(())
}

/// Explains one instance and writes `explanation.json` plus DOT files into
/// `out_dir`. For node tasks the explained graph is the instance's ego-net.
pub fn explain(
    model: &Model,
    dataset: &Dataset,
    instance: usize,
    out_dir: impl AsRef<Path>,
) -> Result<Explanation> {
    check_compatible(model, dataset)?;
    let out_dir = out_dir.as_ref();
    let examples = prepare_examples(dataset, model.encoder.config.num_layers)?;
    let ex = examples.get(instance).ok_or_else(|| {
        Error::Data(format!(
            "instance {instance} out of range ({} instances)",
            examples.len()
        ))
    })?;
    let pred = model.predict(ex.input())?;
    let plain = model.predict_plain(ex.input())?;
    std::fs::create_dir_all(out_dir)?;

    let names = ex.origin_nodes.as_deref();
    let center: Vec<usize> = ex.center.into_iter().collect();
    let graph_dot_file = "graph.dot".to_string();
    write_file(
        out_dir,
        &graph_dot_file,
        &to_dot(&ex.graph, "input", &[], &center, names),
    )?;

    let mut prototypes = Vec::new();
    let mut class_scores = Vec::new();
    if let Some(layer) = model.prototype_layer() {
        let sims = pred.similarities.clone().unwrap_or_default();
        let base = plain.similarities.clone().unwrap_or_default();
        for j in 0..layer.num_prototypes() {
            let provenance = model
                .provenance
                .iter()
                .find(|r| r.prototype_index == j)
                .cloned();
            let source_dot_file = match &provenance {
                Some(rec) => {
                    let file = format!("prototype_{j}_source.dot");
                    write_file(out_dir, &file, &source_dot(dataset, rec)?)?;
                    Some(file)
                }
                None => None,
            };
            let (edge_weights, selected_edges, dot_file) = match &pred.views {
                Some(views) => {
                    let w = &views[j].edge_weights;
                    let edge_weights = ex
                        .graph
                        .edges()
                        .iter()
                        .zip(w)
                        .map(|(&(u, v), &e)| (u, v, e))
                        .collect();
                    let selected = if ex.graph.num_edges() == 0 {
                        Vec::new()
                    } else {
                        select_subgraph(&ex.graph, w, model.config.sampler.budget)?.0
                    };
                    let file = format!("prototype_{j}.dot");
                    let dot = to_dot(
                        &ex.graph,
                        &format!("prototype {j}"),
                        &selected,
                        &center,
                        names,
                    );
                    write_file(out_dir, &file, &dot)?;
                    (edge_weights, selected, Some(file))
                }
                None => (Vec::new(), Vec::new(), None),
            };
            prototypes.push(PrototypeEvidence {
                prototype_index: j,
                class: layer.class_of(j),
                similarity: sims[j],
                similarity_before: base[j],
                similarity_after: sims[j],
                edge_weights,
                selected_edges,
                provenance,
                dot_file,
                source_dot_file,
            });
        }
        for k in 0..layer.num_classes {
            let members: Vec<usize> = layer.prototypes_of_class(k).collect();
            let score = members.iter().map(|&j| sims[j]).sum();
            class_scores.push(ClassScore {
                class: k,
                prototypes: members,
                score,
            });
        }
    }

    let explanation = Explanation {
        instance,
        graph_index: ex.source_graph,
        center: ex.center,
        label: ex.label,
        predicted: pred.predicted,
        logits: pred.logits,
        probs: pred.probs,
        prototypes,
        class_scores,
        graph_dot_file,
    };
    write_file(
        out_dir,
        "explanation.json",
        &serde_json::to_string_pretty(&explanation)?,
    )?;
    Ok(explanation)
}

/// The dataset graph a prototype was projected from, with its subgraph
/// highlighted.
fn source_dot(dataset: &Dataset, rec: &ProvenanceRecord) -> Result<String> {
    let inst = dataset
        .instances()
        .get(rec.source_graph_index)
        .copied()
        .ok_or_else(|| {
            Error::Data(format!(
                "provenance instance {} out of range",
                rec.source_graph_index
            ))
        })?;
    let g = &dataset.graphs[inst.graph];
    let edges: Vec<(usize, usize)> = g
        .edges()
        .iter()
        .copied()
        .filter(|(u, v)| {
            rec.node_set.binary_search(u).is_ok() && rec.node_set.binary_search(v).is_ok()
        })
        .collect();
    Ok(to_dot(
        g,
        &format!("prototype {} source", rec.prototype_index),
        &edges,
        &rec.node_set,
        None,
    ))
}

/// CSV with one row per instance and one per prototype:
/// `kind,index,class,e0,...`.
pub fn export_embeddings(
    model: &Model,
    dataset: &Dataset,
    out_path: impl AsRef<Path>,
) -> Result<PathBuf> {
    check_compatible(model, dataset)?;
    let examples = prepare_examples(dataset, model.encoder.config.num_layers)?;
    let embeddings: Vec<Vec<f64>> = examples
        .par_iter()
        .map(|e| model.embed(e.input()))
        .collect::<Result<_>>()?;
    let dim = model.encoder.config.embed_dim;
    let mut w = csv::Writer::from_path(out_path.as_ref())?;
    let mut header = vec!["kind".to_string(), "index".into(), "class".into()];
    header.extend((0..dim).map(|i| format!("e{i}")));
    w.write_record(&header)?;
    let kind = match dataset.task {
        crate::graph::Task::Graph => "graph",
        crate::graph::Task::Node => "node",
    };
    for (e, h) in examples.iter().zip(&embeddings) {
        write_row(&mut w, kind, e.index, e.label, h)?;
    }
    if let Some(layer) = model.prototype_layer() {
        for j in 0..layer.num_prototypes() {
            write_row(
                &mut w,
                "prototype",
                j,
                layer.class_of(j),
                layer.prototype(&model.store, j),
            )?;
        }
    }
    w.flush()?;
    Ok(out_path.as_ref().to_path_buf())
}

fn write_row(
    w: &mut csv::Writer<std::fs::File>,
    kind: &str,
    index: usize,
    class: usize,
    values: &[f64],
) -> Result<()> {
    let mut row = vec![kind.to_string(), index.to_string(), class.to_string()];
    row.extend(values.iter().map(|v| v.to_string()));
    Ok(w.write_record(&row)?)
}
