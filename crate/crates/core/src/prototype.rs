//! Prototype layer, the frozen class-connection layer, and the training
//! objective `CrsEnt + λ1·Clst + λ2·Sep + λ3·Div`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    cosine_similarity, log_sum_exp, sq_dist, ParamId, ParamStore, Tape, Tensor, Var,
};
use crate::error::{Error, Result};

pub const DEFAULT_EPS_SIM: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub s_max: f64,
    /// Per-sample cap on the separation distance² (`None` disables it).
    pub sep_clamp: Option<f64>,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 0.10,
            lambda2: 0.05,
            lambda3: 0.01,
            s_max: 0.3,
            sep_clamp: Some(100.0),
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.s_max) {
            return Err(Error::Config(format!(
                "s_max {} outside [-1, 1]",
                self.s_max
            )));
        }
        Ok(())
    }
}

/// `ln((d² + 1) / (d² + eps))` for squared distance `d²`.
#[inline]
pub fn similarity_from_sq_dist(d2: f64, eps_sim: f64) -> f64 {
    ((d2 + 1.0) / (d2 + eps_sim)).ln()
}

/// Similarity between a prototype and an embedding.
pub fn similarity(p: &[f64], h: &[f64], eps_sim: f64) -> f64 {
    similarity_from_sq_dist(sq_dist(p, h), eps_sim)
}

/// `weights[k][j] = 1` iff prototype `j` belongs to class `k`.
pub fn init_final_layer(num_classes: usize, m: usize) -> Tensor {
    let mut w = Tensor::zeros(num_classes, num_classes * m);
    for k in 0..num_classes {
        for j in k * m..(k + 1) * m {
            w.set(k, j, 1.0);
        }
    }
    w
}

/// Result of evaluating the head on one embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutput {
    pub similarities: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl HeadOutput {
    pub fn predicted(&self) -> usize {
        argmax(&self.logits)
    }
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|v| (v - lse).exp()).collect()
}

/// Prototype matrix (`m·C × d`, grouped by class) plus the frozen
/// `C × m·C` final layer.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeLayer {
    pub prototypes: ParamId,
    pub final_layer: ParamId,
    pub num_classes: usize,
    pub m: usize,
    pub eps_sim: f64,
}

pub(crate) const PROTOTYPES: &str = "head.prototypes";
pub(crate) const FINAL_LAYER: &str = "head.final_layer";

/// Split of the objective into its terms (values only).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub cross_entropy: f64,
    pub cluster: f64,
    pub separation: f64,
    pub diversity: f64,
}

impl PrototypeLayer {
    /// Prototypes i.i.d. uniform on `[0, 1)`; final layer frozen at its 0/1 pattern.
    pub fn new(
        num_classes: usize,
        m: usize,
        embed_dim: usize,
        eps_sim: f64,
        store: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if num_classes == 0 || m == 0 {
            return Err(Error::Config(
                "need at least one class and one prototype".into(),
            ));
        }
        if !(eps_sim > 0.0 && eps_sim < 1.0) {
            return Err(Error::Config(format!("eps_sim {eps_sim} outside (0, 1)")));
        }
        let k = num_classes * m;
        let values = (0..k * embed_dim).map(|_| rng.gen::<f64>()).collect();
        let prototypes = store.add(PROTOTYPES, Tensor::from_vec(k, embed_dim, values)?, true);
        let final_layer = store.add(FINAL_LAYER, init_final_layer(num_classes, m), false);
        Ok(Self {
            prototypes,
            final_layer,
            num_classes,
            m,
            eps_sim,
        })
    }

    pub fn from_store(
        num_classes: usize,
        m: usize,
        eps_sim: f64,
        store: &ParamStore,
    ) -> Result<Self> {
        let find = |name: &str| {
            store
                .find(name)
                .ok_or_else(|| Error::Data(format!("missing parameter '{name}'")))
        };
        let layer = Self {
            prototypes: find(PROTOTYPES)?,
            final_layer: find(FINAL_LAYER)?,
            num_classes,
            m,
            eps_sim,
        };
        if store.value(layer.prototypes).rows() != layer.num_prototypes()
            || store.value(layer.final_layer).shape() != [num_classes, layer.num_prototypes()]
        {
            return Err(Error::shape(
                "prototype_layer",
                "stored shapes do not match C and m",
            ));
        }
        Ok(layer)
    }

    pub fn num_prototypes(&self) -> usize {
        self.num_classes * self.m
    }

    pub fn class_of(&self, j: usize) -> usize {
        j / self.m
    }

    pub fn prototypes_of_class(&self, k: usize) -> std::ops::Range<usize> {
        k * self.m..(k + 1) * self.m
    }

    pub fn prototype<'a>(&self, store: &'a ParamStore, j: usize) -> &'a [f64] {
        store.value(self.prototypes).row(j)
    }

    /// Whether the stored final layer is exactly the 0/1 class pattern.
    pub fn final_layer_is_class_identity(&self, store: &ParamStore) -> bool {
        store.value(self.final_layer) == &init_final_layer(self.num_classes, self.m)
    }

    /// Logits from per-prototype similarity scores.
    pub fn logits_from_similarities(&self, store: &ParamStore, sims: &[f64]) -> Vec<f64> {
        let w = store.value(self.final_layer);
        (0..self.num_classes)
            .map(|k| w.row(k).iter().zip(sims).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn output_from_similarities(
        &self,
        store: &ParamStore,
        similarities: Vec<f64>,
    ) -> HeadOutput {
        let logits = self.logits_from_similarities(store, &similarities);
        let probs = softmax(&logits);
        HeadOutput {
            similarities,
            logits,
            probs,
        }
    }

    /// Similarities, logits and class probabilities for one embedding.
    pub fn head_forward(&self, store: &ParamStore, h: &[f64]) -> HeadOutput {
        let sims = (0..self.num_prototypes())
            .map(|j| similarity(self.prototype(store, j), h, self.eps_sim))
            .collect();
        self.output_from_similarities(store, sims)
    }

    /// Taped similarities (`B × K`) and squared distances for embeddings `h` (`B × d`).
    pub fn similarities(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Result<(Var, Var)> {
        let p = tape.param(store, self.prototypes);
        let d2 = tape.sq_dist(h, p)?;
        let num = tape.add_scalar(d2, 1.0)?;
        let den = tape.add_scalar(d2, self.eps_sim)?;
        let ln_num = tape.log(num)?;
        let ln_den = tape.log(den)?;
        Ok((tape.sub(ln_num, ln_den)?, d2))
    }

    pub fn logits(&self, tape: &mut Tape, store: &ParamStore, sims: Var) -> Result<Var> {
        let wt = tape.constant(store.value(self.final_layer).transpose());
        tape.matmul(sims, wt)
    }

    fn class_mask(&self, labels: &[usize], own: bool) -> Vec<bool> {
        let k = self.num_prototypes();
        let mut mask = Vec::with_capacity(labels.len() * k);
        for &y in labels {
            mask.extend((0..k).map(|j| (self.class_of(j) == y) == own));
        }
        mask
    }

    /// Mean over the batch of the squared distance to the nearest own-class prototype.
    pub fn cluster_cost(&self, tape: &mut Tape, d2: Var, labels: &[usize]) -> Result<Var> {
        let mask = self.class_mask(labels, true);
        let mins = tape.masked_row_min(d2, &mask)?;
        tape.mean(mins)
    }

    /// Negative mean squared distance to the nearest other-class prototype,
    /// each distance first capped at `clamp` when given.
    pub fn separation_cost(
        &self,
        tape: &mut Tape,
        d2: Var,
        labels: &[usize],
        clamp: Option<f64>,
    ) -> Result<Var> {
        if self.num_classes < 2 {
            return Ok(tape.constant(Tensor::scalar(0.0)));
        }
        let mask = self.class_mask(labels, false);
        let mut mins = tape.masked_row_min(d2, &mask)?;
        if let Some(c) = clamp {
            mins = tape.clamp_max(mins, c)?;
        }
        let mean = tape.mean(mins)?;
        tape.scale(mean, -1.0)
    }

    /// Hinge on same-class prototype cosines above `s_max`, summed over unordered pairs.
    pub fn diversity_cost(&self, tape: &mut Tape, store: &ParamStore, s_max: f64) -> Result<Var> {
        let k = self.num_prototypes();
        let p = tape.param(store, self.prototypes);
        let cos = tape.cosine(p)?;
        let shifted = tape.add_scalar(cos, -s_max)?;
        let hinge = tape.relu(shifted)?;
        let mut mask = Tensor::zeros(k, k);
        for i in 0..k {
            for j in i + 1..k {
                if self.class_of(i) == self.class_of(j) {
                    mask.set(i, j, 1.0);
                }
            }
        }
        let mask = tape.constant(mask);
        let pairs = tape.mul(hinge, mask)?;
        tape.sum(pairs)
    }

    /// Full objective on a batch of embeddings. Returns the scalar loss
    /// variable and the values of each term.
    pub fn total_loss(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h: Var,
        labels: &[usize],
        weights: &LossWeights,
    ) -> Result<(Var, LossTerms)> {
        let (sims, d2) = self.similarities(tape, store, h)?;
        let logits = self.logits(tape, store, sims)?;
        let ce = tape.softmax_cross_entropy(logits, labels)?;
        let clst = self.cluster_cost(tape, d2, labels)?;
        let sep = self.separation_cost(tape, d2, labels, weights.sep_clamp)?;
        let div = self.diversity_cost(tape, store, weights.s_max)?;
        let mut total = ce;
        for (term, lambda) in [
            (clst, weights.lambda1),
            (sep, weights.lambda2),
            (div, weights.lambda3),
        ] {
            let scaled = tape.scale(term, lambda)?;
            total = tape.add(total, scaled)?;
        }
        let terms = LossTerms {
            total: tape.value(total).item(),
            cross_entropy: tape.value(ce).item(),
            cluster: tape.value(clst).item(),
            separation: tape.value(sep).item(),
            diversity: tape.value(div).item(),
        };
        if !terms.total.is_finite() {
            return Err(Error::NonFinite(format!("objective: {terms:?}")));
        }
        Ok((total, terms))
    }

    /// Same-class cosine matrices, one `m × m` matrix per class.
    pub fn class_cosine_matrices(&self, store: &ParamStore) -> Vec<Vec<Vec<f64>>> {
        (0..self.num_classes)
            .map(|k| {
                self.prototypes_of_class(k)
                    .map(|i| {
                        self.prototypes_of_class(k)
                            .map(|j| {
                                cosine_similarity(
                                    self.prototype(store, i),
                                    self.prototype(store, j),
                                )
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }
}
