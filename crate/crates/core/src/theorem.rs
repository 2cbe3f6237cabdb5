//! Empirical check of the sampling-robustness theorem: if every sampled
//! embedding stays close enough to the full embedding and ProtGNN's top-2
//! logit gap is at least `2m·ln((1+δ)(2−δ))`, ProtGNN+ predicts the same
//! (correct) class.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sq_dist, ParamStore};
use crate::encoder::{EncodeInput, Encoder};
use crate::error::{Error, Result};
use crate::prototype::{argmax, PrototypeLayer};
use crate::sampler::{plus_head_forward, EdgeWeighting};

pub const DEFAULT_DELTAS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

/// `ln((1+δ)(2−δ))`, the per-prototype score slack.
pub fn slack(delta: f64) -> f64 {
    ((1.0 + delta) * (2.0 - delta)).ln()
}

/// `2m·ln((1+δ)(2−δ))`.
pub fn threshold(m: usize, delta: f64) -> f64 {
    2.0 * m as f64 * slack(delta)
}

/// `min(√(1+δ) − 1, 1 − 1/√(2−δ))`.
pub fn theta(delta: f64) -> f64 {
    ((1.0 + delta).sqrt() - 1.0).min(1.0 - 1.0 / (2.0 - delta).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypeCheck {
    pub prototype: usize,
    pub class: usize,
    /// `‖h − p‖`.
    pub dist_h_p: f64,
    /// `‖h − h_l‖`.
    pub dist_h_hl: f64,
    pub satisfied: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub delta: f64,
    pub label: usize,
    pub prototypes: Vec<PrototypeCheck>,
    /// Per class: do all of its prototypes meet their premise?
    pub class_premises: Vec<bool>,
    /// Per class `L'_k − L_k` (summed scores with sampling minus without).
    pub score_shifts: Vec<f64>,
    pub top2_gap: f64,
    pub threshold: f64,
    pub premises_hold: bool,
    pub protgnn_pred: usize,
    pub protgnn_plus_pred: usize,
    pub protgnn_logits: Vec<f64>,
    pub protgnn_plus_logits: Vec<f64>,
    /// ProtGNN correct, premises hold, and the gap reaches the threshold.
    pub applicable: bool,
    /// The implication held (trivially true when not applicable).
    pub verdict: bool,
    /// Classes whose premises hold but whose score shift breaks its bound.
    pub bound_violations: Vec<usize>,
}

fn norm_dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

/// Evaluates every premise for one labelled input and records whether the
/// conclusion held.
pub fn check_theorem(
    store: &ParamStore,
    encoder: &Encoder,
    layer: &PrototypeLayer,
    weighting: EdgeWeighting<'_>,
    input: EncodeInput<'_>,
    label: usize,
    delta: f64,
) -> Result<TheoremReport> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!("delta {delta} outside (0, 1)")));
    }
    if !layer.final_layer_is_class_identity(store) {
        return Err(Error::Config(
            "final layer is not the 0/1 class pattern; the theorem does not apply".into(),
        ));
    }
    if label >= layer.num_classes {
        return Err(Error::Data(format!("label {label} out of range")));
    }
    let m = layer.m;
    let eps = layer.eps_sim;
    let h = encoder.embed(store, input)?;
    let base = layer.head_forward(store, &h);
    let (plus, views) = plus_head_forward(store, encoder, layer, weighting, input)?;

    let correct_bound = (1.0 + delta).sqrt() - 1.0;
    let th = theta(delta);
    let prototypes: Vec<PrototypeCheck> = views
        .iter()
        .enumerate()
        .map(|(j, view)| {
            let class = layer.class_of(j);
            let dist_h_p = norm_dist(&h, layer.prototype(store, j));
            let dist_h_hl = norm_dist(&h, &view.embedding);
            let satisfied = if class == label {
                dist_h_hl <= correct_bound * dist_h_p && dist_h_p <= (1.0 - delta).sqrt()
            } else {
                dist_h_hl <= th * dist_h_p - eps.sqrt()
            };
            PrototypeCheck {
                prototype: j,
                class,
                dist_h_p,
                dist_h_hl,
                satisfied,
            }
        })
        .collect();
    let class_premises: Vec<bool> = (0..layer.num_classes)
        .map(|k| {
            prototypes[layer.prototypes_of_class(k)]
                .iter()
                .all(|c| c.satisfied)
        })
        .collect();
    let score_shifts: Vec<f64> = (0..layer.num_classes)
        .map(|k| {
            layer
                .prototypes_of_class(k)
                .map(|j| plus.similarities[j] - base.similarities[j])
                .sum()
        })
        .collect();
    let premises_hold = class_premises.iter().all(|&ok| ok);

    let protgnn_pred = base.predicted();
    let mut others = base.logits.clone();
    others[protgnn_pred] = f64::NEG_INFINITY;
    let runner_up = others[argmax(&others)];
    let top2_gap = if base.logits.len() > 1 {
        base.logits[protgnn_pred] - runner_up
    } else {
        f64::INFINITY
    };
    let thr = threshold(m, delta);
    let protgnn_plus_pred = plus.predicted();
    let applicable = premises_hold && protgnn_pred == label && top2_gap >= thr;
    let verdict = !applicable || protgnn_plus_pred == label;

    let bound = m as f64 * slack(delta);
    let bound_violations = (0..layer.num_classes)
        .filter(|&k| {
            class_premises[k]
                && if k == label {
                    score_shifts[k] < -bound
                } else {
                    score_shifts[k] > bound
                }
        })
        .collect();

    Ok(TheoremReport {
        delta,
        label,
        prototypes,
        class_premises,
        score_shifts,
        top2_gap,
        threshold: thr,
        premises_hold,
        protgnn_pred,
        protgnn_plus_pred,
        protgnn_logits: base.logits,
        protgnn_plus_logits: plus.logits,
        applicable,
        verdict,
        bound_violations,
    })
}

/// Aggregate of [`check_theorem`] over many labelled inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanSummary {
    pub delta: f64,
    pub instances: usize,
    pub correctly_classified: usize,
    /// Among correctly classified inputs, the fraction whose premises hold.
    pub premise_fraction: f64,
    pub applicable: usize,
    /// Among correctly classified inputs, the fraction where ProtGNN+ agrees.
    pub implication_fraction: f64,
    /// Instance ids where the theorem was applicable yet ProtGNN+ erred.
    pub counterexamples: Vec<usize>,
    /// `(instance id, class)` pairs breaking a per-class score-shift bound.
    pub bound_violations: Vec<(usize, usize)>,
    pub reports: Vec<(usize, TheoremReport)>,
}

/// Runs the checker over `(instance id, input, label)` triples.
pub fn scan_dataset(
    store: &ParamStore,
    encoder: &Encoder,
    layer: &PrototypeLayer,
    weighting: EdgeWeighting<'_>,
    items: &[(usize, EncodeInput<'_>, usize)],
    delta: f64,
) -> Result<ScanSummary> {
    let reports: Vec<(usize, TheoremReport)> = items
        .par_iter()
        .map(|&(id, input, label)| {
            Ok((
                id,
                check_theorem(store, encoder, layer, weighting, input, label, delta)?,
            ))
        })
        .collect::<Result<_>>()?;
    let correct: Vec<&TheoremReport> = reports
        .iter()
        .map(|(_, r)| r)
        .filter(|r| r.protgnn_pred == r.label)
        .collect();
    let frac = |count: usize| {
        if correct.is_empty() {
            0.0
        } else {
            count as f64 / correct.len() as f64
        }
    };
    let premise_fraction = frac(correct.iter().filter(|r| r.premises_hold).count());
    let implication_fraction = frac(
        correct
            .iter()
            .filter(|r| r.protgnn_plus_pred == r.label)
            .count(),
    );
    Ok(ScanSummary {
        delta,
        instances: reports.len(),
        correctly_classified: correct.len(),
        premise_fraction,
        applicable: reports.iter().filter(|(_, r)| r.applicable).count(),
        implication_fraction,
        counterexamples: reports
            .iter()
            .filter(|(_, r)| !r.verdict)
            .map(|&(id, _)| id)
            .collect(),
        bound_violations: reports
            .iter()
            .flat_map(|(id, r)| r.bound_violations.iter().map(move |&k| (*id, k)))
            .collect(),
        reports,
    })
}
