//! Training configuration and its flat `key = value` text form.
//!
//! Keys mirror the field names; nested settings use a dotted prefix
//! (`encoder.hidden_dim`, `mcts.iterations`, ...). Lines starting with `#`
//! and blank lines are ignored. Omitted keys keep their defaults.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::Readout;
use crate::error::{Error, Result};
use crate::mcts::MctsConfig;
use crate::prototype::{LossWeights, DEFAULT_EPS_SIM};
use crate::sampler::SamplerConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Plain GCN with a linear classifier.
    Gcn,
    /// GCN encoder with the prototype head.
    Protgnn,
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gcn" => Ok(ModelKind::Gcn),
            "protgnn" => Ok(ModelKind::Protgnn),
            other => Err(Error::Config(format!("unknown model '{other}'"))),
        }
    }
}

/// Encoder settings that do not depend on the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderSettings {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    /// Graph-task pooling. Node tasks always read out the center node.
    pub readout: Readout,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        Self {
            num_layers: 3,
            hidden_dim: 128,
            embed_dim: 128,
            readout: Readout::Max,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub protgnn_plus: bool,
    pub epochs: usize,
    pub projection_epoch: usize,
    pub warmup_epoch: usize,
    pub projection_period: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub seed: u64,
    pub m: usize,
    pub eps_sim: f64,
    pub loss: LossWeights,
    pub encoder: EncoderSettings,
    pub mcts: MctsConfig,
    pub sampler: SamplerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Protgnn,
            protgnn_plus: false,
            epochs: 500,
            projection_epoch: 100,
            warmup_epoch: 200,
            projection_period: 50,
            lr: 0.005,
            batch_size: 32,
            patience: 50,
            seed: 0,
            m: 5,
            eps_sim: DEFAULT_EPS_SIM,
            loss: LossWeights::default(),
            encoder: EncoderSettings::default(),
            mcts: MctsConfig::default(),
            sampler: SamplerConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse '{value}' for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("cannot parse '{value}' for {key}"))),
    }
}

fn parse_optional<T: FromStr>(key: &str, value: &str, none: &str) -> Result<Option<T>> {
    if value == none {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn readout_name(r: Readout) -> &'static str {
    match r {
        Readout::Sum => "sum",
        Readout::Max => "max",
        Readout::Center => "center",
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.projection_period == 0 {
            return Err(Error::Config("projection_period must be at least 1".into()));
        }
        if self.batch_size == 0 || self.m == 0 {
            return Err(Error::Config("batch_size and m must be at least 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if !(self.eps_sim > 0.0 && self.eps_sim < 1.0) {
            return Err(Error::Config(format!(
                "eps_sim {} outside (0, 1)",
                self.eps_sim
            )));
        }
        if self.protgnn_plus && self.model != ModelKind::Protgnn {
            return Err(Error::Config(
                "protgnn_plus requires model = protgnn".into(),
            ));
        }
        if self.encoder.readout == Readout::Center {
            return Err(Error::Config(
                "encoder.readout = center is implied by node tasks; use sum or max".into(),
            ));
        }
        self.loss.validate()?;
        self.mcts.validate()?;
        self.sampler.validate()
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "model" => self.model = parse(key, value)?,
            "protgnn_plus" => self.protgnn_plus = parse_bool(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "projection_epoch" => self.projection_epoch = parse(key, value)?,
            "warmup_epoch" => self.warmup_epoch = parse(key, value)?,
            "projection_period" => self.projection_period = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "m" => self.m = parse(key, value)?,
            "eps_sim" => self.eps_sim = parse(key, value)?,
            "loss.lambda1" => self.loss.lambda1 = parse(key, value)?,
            "loss.lambda2" => self.loss.lambda2 = parse(key, value)?,
            "loss.lambda3" => self.loss.lambda3 = parse(key, value)?,
            "loss.s_max" => self.loss.s_max = parse(key, value)?,
            "loss.sep_clamp" => self.loss.sep_clamp = parse_optional(key, value, "none")?,
            "encoder.num_layers" => self.encoder.num_layers = parse(key, value)?,
            "encoder.hidden_dim" => self.encoder.hidden_dim = parse(key, value)?,
            "encoder.embed_dim" => self.encoder.embed_dim = parse(key, value)?,
            "encoder.readout" => self.encoder.readout = value.parse()?,
            "mcts.lambda_explore" => self.mcts.lambda_explore = parse(key, value)?,
            "mcts.iterations" => self.mcts.iterations = parse(key, value)?,
            "mcts.max_children" => self.mcts.max_children = parse(key, value)?,
            "mcts.n_min" => self.mcts.n_min = parse(key, value)?,
            "mcts.candidate_graphs" => {
                self.mcts.candidate_graphs = parse_optional(key, value, "all")?
            }
            "sampler.lambda_b" => self.sampler.lambda_b = parse(key, value)?,
            "sampler.budget" => self.sampler.budget = parse(key, value)?,
            "sampler.sgd_lr" => self.sampler.sgd_lr = parse(key, value)?,
            "sampler.sgd_steps" => self.sampler.sgd_steps = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Parses the flat text form on top of the defaults.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim()).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("line {}: {msg}", lineno + 1)),
                other => other,
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    /// Every key with its current value, one per line.
    pub fn to_text(&self) -> String {
        let opt = |v: Option<String>, none: &str| v.unwrap_or_else(|| none.to_string());
        let model = match self.model {
            ModelKind::Gcn => "gcn",
            ModelKind::Protgnn => "protgnn",
        };
        let pairs: Vec<(&str, String)> = vec![
            ("model", model.into()),
            ("protgnn_plus", self.protgnn_plus.to_string()),
            ("epochs", self.epochs.to_string()),
            ("projection_epoch", self.projection_epoch.to_string()),
            ("warmup_epoch", self.warmup_epoch.to_string()),
            ("projection_period", self.projection_period.to_string()),
            ("lr", self.lr.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("patience", self.patience.to_string()),
            ("seed", self.seed.to_string()),
            ("m", self.m.to_string()),
            ("eps_sim", self.eps_sim.to_string()),
            ("loss.lambda1", self.loss.lambda1.to_string()),
            ("loss.lambda2", self.loss.lambda2.to_string()),
            ("loss.lambda3", self.loss.lambda3.to_string()),
            ("loss.s_max", self.loss.s_max.to_string()),
            (
                "loss.sep_clamp",
                opt(self.loss.sep_clamp.map(|v| v.to_string()), "none"),
            ),
            ("encoder.num_layers", self.encoder.num_layers.to_string()),
            ("encoder.hidden_dim", self.encoder.hidden_dim.to_string()),
            ("encoder.embed_dim", self.encoder.embed_dim.to_string()),
            ("encoder.readout", readout_name(self.encoder.readout).into()),
            ("mcts.lambda_explore", self.mcts.lambda_explore.to_string()),
            ("mcts.iterations", self.mcts.iterations.to_string()),
            ("mcts.max_children", self.mcts.max_children.to_string()),
            ("mcts.n_min", self.mcts.n_min.to_string()),
            (
                "mcts.candidate_graphs",
                opt(self.mcts.candidate_graphs.map(|v| v.to_string()), "all"),
            ),
            ("sampler.lambda_b", self.sampler.lambda_b.to_string()),
            ("sampler.budget", self.sampler.budget.to_string()),
            ("sampler.sgd_lr", self.sampler.sgd_lr.to_string()),
            ("sampler.sgd_steps", self.sampler.sgd_steps.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Whether a projection runs at the end of epoch `t` (1-based).
    pub fn projects_at(&self, t: usize) -> bool {
        self.model == ModelKind::Protgnn
            && t > self.projection_epoch
            && t.is_multiple_of(self.projection_period)
    }

    /// Whether a sampler pass runs at the end of epoch `t` (1-based).
    pub fn samples_at(&self, t: usize) -> bool {
        self.protgnn_plus && t > self.warmup_epoch
    }

    /// First epoch at which every scheduled phase (projection, sampler) has
    /// started. Early stopping only counts patience from here.
    pub fn schedule_start(&self) -> usize {
        let mut start = 1;
        if self.model == ModelKind::Protgnn {
            let tau = self.projection_period;
            start = start.max((self.projection_epoch / tau + 1) * tau);
        }
        if self.protgnn_plus {
            start = start.max(self.warmup_epoch + 1);
        }
        start
    }
}
