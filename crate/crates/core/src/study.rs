//! Hyper-parameter studies: prototypes per class, the diversity ablation and
//! a cluster/separation weight grid.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{ModelKind, TrainConfig};
use crate::error::{Error, Result};
use crate::graph::Dataset;
use crate::train::{train, TrainFailure};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyKind {
    MSweep,
    DivAblation,
    ClusterSep,
}

impl std::str::FromStr for StudyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "m-sweep" => Ok(StudyKind::MSweep),
            "div-ablation" | "diversity-ablation" => Ok(StudyKind::DivAblation),
            "cluster-sep" | "cluster-sep-grid" => Ok(StudyKind::ClusterSep),
            other => Err(Error::Config(format!("unknown study kind '{other}'"))),
        }
    }
}

pub const M_SWEEP: [usize; 10] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10];
pub const DIVERSITY_WEIGHTS: [f64; 2] = [0.0, 0.01];
pub const CLUSTER_WEIGHTS: [f64; 4] = [0.0, 0.05, 0.10, 0.20];
pub const SEPARATION_WEIGHTS: [f64; 4] = [0.0, 0.025, 0.05, 0.10];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRun {
    pub m: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub test_accuracy: f64,
    /// Per class, the m×m cosine matrix of its prototypes.
    pub cosine_matrices: Vec<Vec<Vec<f64>>>,
    /// Median cosine over unordered same-class prototype pairs.
    pub median_same_class_cosine: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub kind: StudyKind,
    pub runs: Vec<StudyRun>,
}

/// Configurations a study trains, in order.
pub fn study_configs(kind: StudyKind, base: &TrainConfig) -> Vec<TrainConfig> {
    let mut base = base.clone();
    base.model = ModelKind::Protgnn;
    match kind {
        StudyKind::MSweep => M_SWEEP
            .iter()
            .map(|&m| TrainConfig { m, ..base.clone() })
            .collect(),
        StudyKind::DivAblation => DIVERSITY_WEIGHTS
            .iter()
            .map(|&l3| {
                let mut c = base.clone();
                c.loss.lambda3 = l3;
                c
            })
            .collect(),
        StudyKind::ClusterSep => CLUSTER_WEIGHTS
            .iter()
            .flat_map(|&l1| SEPARATION_WEIGHTS.iter().map(move |&l2| (l1, l2)))
            .map(|(l1, l2)| {
                let mut c = base.clone();
                c.loss.lambda1 = l1;
                c.loss.lambda2 = l2;
                c
            })
            .collect(),
    }
}

/// Median of the strictly-upper-triangle entries of every matrix.
pub fn median_off_diagonal(matrices: &[Vec<Vec<f64>>]) -> Option<f64> {
    let mut vals: Vec<f64> = matrices
        .iter()
        .flat_map(|mat| {
            mat.iter()
                .enumerate()
                .flat_map(|(i, row)| row.iter().skip(i + 1).copied())
        })
        .collect();
    if vals.is_empty() {
        return None;
    }
    vals.sort_by(f64::total_cmp);
    let n = vals.len();
    Some(if n % 2 == 1 {
        vals[n / 2]
    } else {
        (vals[n / 2 - 1] + vals[n / 2]) / 2.0
    })
}

/// Trains every configuration of the study on `dataset`. `progress` is
/// called after each run.
pub fn run_hparam_study(
    kind: StudyKind,
    base: &TrainConfig,
    dataset: &Dataset,
    mut progress: impl FnMut(usize, &StudyRun),
) -> std::result::Result<StudyReport, TrainFailure> {
    let mut runs = Vec::new();
    for (i, cfg) in study_configs(kind, base).into_iter().enumerate() {
        let out = train(dataset, &cfg, |_| {})?;
        let cosine_matrices = out
            .model
            .prototype_layer()
            .map(|l| l.class_cosine_matrices(&out.model.store))
            .unwrap_or_default();
        let run = StudyRun {
            m: cfg.m,
            lambda1: cfg.loss.lambda1,
            lambda2: cfg.loss.lambda2,
            lambda3: cfg.loss.lambda3,
            best_epoch: out.metrics.best_epoch,
            best_val_accuracy: out.metrics.best_val_accuracy,
            test_accuracy: out.metrics.test_accuracy,
            median_same_class_cosine: median_off_diagonal(&cosine_matrices),
            cosine_matrices,
        };
        progress(i, &run);
        runs.push(run);
    }
    Ok(StudyReport { kind, runs })
}

/// Writes `report.json` and `summary.csv` into `dir`.
pub fn write_study(report: &StudyReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(report)?,
    )?;
    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    w.write_record([
        "m",
        "lambda1",
        "lambda2",
        "lambda3",
        "best_epoch",
        "best_val_accuracy",
        "test_accuracy",
        "median_same_class_cosine",
    ])?;
    for r in &report.runs {
        w.write_record([
            r.m.to_string(),
            r.lambda1.to_string(),
            r.lambda2.to_string(),
            r.lambda3.to_string(),
            r.best_epoch.to_string(),
            r.best_val_accuracy.to_string(),
            r.test_accuracy.to_string(),
            r.median_same_class_cosine
                .map_or(String::new(), |v| v.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        let base = TrainConfig::default();
        let ms: Vec<usize> = study_configs(StudyKind::MSweep, &base)
            .iter()
            .map(|c| c.m)
            .collect();
        assert_eq!(ms, (1..=10).collect::<Vec<_>>());
        let grid = study_configs(StudyKind::ClusterSep, &base);
        assert!(grid
            .iter()
            .any(|c| c.loss.lambda1 == 0.10 && c.loss.lambda2 == 0.05));
        let abl = study_configs(StudyKind::DivAblation, &base);
        assert_eq!(abl.len(), 2);
        assert_eq!((abl[0].loss.lambda3, abl[1].loss.lambda3), (0.0, 0.01));
    }

    #[test]
    fn median_uses_upper_triangle() {
        let a = vec![
            vec![1.0, 0.2, 0.4],
            vec![0.2, 1.0, 0.9],
            vec![0.4, 0.9, 1.0],
        ];
        assert_eq!(median_off_diagonal(&[a]), Some(0.4));
        let b = vec![vec![1.0, 0.1], vec![0.1, 1.0]];
        let c = vec![vec![1.0, 0.3], vec![0.3, 1.0]];
        assert!((median_off_diagonal(&[b, c]).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(median_off_diagonal(&[vec![vec![1.0]]]), None);
    }
}
