//! Datasets, train/val/test splits and the JSON dataset format.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::Graph;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Graph,
    Node,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// A classification instance: a whole graph, or one node of a graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Instance {
    pub graph: usize,
    pub node: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub task: Task,
    pub num_classes: usize,
    pub graphs: Vec<Graph>,
    pub splits: Option<Splits>,
}

impl Dataset {
    /// Instances in index order. For node tasks, nodes are numbered
    /// consecutively across graphs.
    pub fn instances(&self) -> Vec<Instance> {
        match self.task {
            Task::Graph => (0..self.graphs.len())
                .map(|graph| Instance { graph, node: None })
                .collect(),
            Task::Node => self
                .graphs
                .iter()
                .enumerate()
                .flat_map(|(graph, g)| {
                    (0..g.num_nodes()).map(move |v| Instance {
                        graph,
                        node: Some(v),
                    })
                })
                .collect(),
        }
    }

    pub fn num_instances(&self) -> usize {
        match self.task {
            Task::Graph => self.graphs.len(),
            Task::Node => self.graphs.iter().map(Graph::num_nodes).sum(),
        }
    }

    pub fn label_of(&self, inst: Instance) -> Option<usize> {
        let g = &self.graphs[inst.graph];
        match inst.node {
            None => g.label(),
            Some(v) => g.node_labels().map(|l| l[v]),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.graphs.first().map_or(0, Graph::feature_dim)
    }

    pub fn splits(&self) -> Result<&Splits> {
        self.splits
            .as_ref()
            .ok_or_else(|| Error::Data(format!("dataset '{}' has no splits", self.name)))
    }

    /// Checks labels, feature widths and split structure.
    pub fn validate(&self) -> Result<()> {
        let dim = self.feature_dim();
        for (i, g) in self.graphs.iter().enumerate() {
            if g.feature_dim() != dim {
                return Err(Error::schema(
                    format!("graphs[{i}].x"),
                    format!("feature width {} differs from {dim}", g.feature_dim()),
                ));
            }
            match self.task {
                Task::Graph => match g.label() {
                    Some(y) if y < self.num_classes => {}
                    Some(y) => {
                        return Err(Error::schema(
                            format!("graphs[{i}].y"),
                            format!("label {y} >= num_classes {}", self.num_classes),
                        ))
                    }
                    None => return Err(Error::schema(format!("graphs[{i}].y"), "missing label")),
                },
                Task::Node => {
                    let labels = g.node_labels().ok_or_else(|| {
                        Error::schema(format!("graphs[{i}].node_labels"), "missing node labels")
                    })?;
                    if let Some(j) = labels.iter().position(|&y| y >= self.num_classes) {
                        return Err(Error::schema(
                            format!("graphs[{i}].node_labels[{j}]"),
                            format!("label {} >= num_classes {}", labels[j], self.num_classes),
                        ));
                    }
                }
            }
        }
        if let Some(s) = &self.splits {
            let n = self.num_instances();
            let mut seen = vec![false; n];
            for (name, idx) in [("train", &s.train), ("val", &s.val), ("test", &s.test)] {
                for (j, &i) in idx.iter().enumerate() {
                    let path = format!("splits.{name}[{j}]");
                    if i >= n {
                        return Err(Error::schema(path, format!("index {i} >= {n} instances")));
                    }
                    if seen[i] {
                        return Err(Error::schema(path, format!("index {i} appears twice")));
                    }
                    seen[i] = true;
                }
            }
            if let Some(missing) = seen.iter().position(|&s| !s) {
                return Err(Error::schema(
                    "splits",
                    format!("instance {missing} is in no split"),
                ));
            }
        }
        Ok(())
    }
}

/// Shuffles instance indices with `seed` and cuts them 80/10/10
/// (train and val sizes rounded down, the remainder goes to test).
pub fn split_dataset(mut dataset: Dataset, seed: u64) -> Dataset {
    let n = dataset.num_instances();
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    dataset.splits = Some(Splits {
        train: idx,
        val,
        test,
    });
    dataset
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(&dataset_to_json(dataset))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    let value: Value = serde_json::from_str(&text)?;
    dataset_from_json(&value)
}

pub(crate) fn dataset_to_json(d: &Dataset) -> Value {
    let graphs: Vec<Value> = d
        .graphs
        .iter()
        .map(|g| {
            let mut obj = Map::new();
            obj.insert("num_nodes".into(), json!(g.num_nodes()));
            obj.insert(
                "edges".into(),
                json!(g.edges().iter().map(|&(u, v)| [u, v]).collect::<Vec<_>>()),
            );
            let x: Vec<&[f64]> = (0..g.num_nodes()).map(|i| g.features().row(i)).collect();
            obj.insert("x".into(), json!(x));
            if let Some(y) = g.label() {
                obj.insert("y".into(), json!(y));
            }
            if let Some(l) = g.node_labels() {
                obj.insert("node_labels".into(), json!(l));
            }
            Value::Object(obj)
        })
        .collect();
    let mut root = Map::new();
    root.insert("name".into(), json!(d.name));
    root.insert("task".into(), serde_json::to_value(d.task).expect("task"));
    root.insert("num_classes".into(), json!(d.num_classes));
    root.insert("graphs".into(), Value::Array(graphs));
    if let Some(s) = &d.splits {
        root.insert("splits".into(), serde_json::to_value(s).expect("splits"));
    }
    Value::Object(root)
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a Value> {
    obj.get(key)
        .ok_or_else(|| Error::schema(join(path, key), "missing field"))
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn as_usize(v: &Value, path: &str) -> Result<usize> {
    v.as_u64()
        .map(|x| x as usize)
        .ok_or_else(|| Error::schema(path, "expected a non-negative integer"))
}

fn as_array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>> {
    v.as_array()
        .ok_or_else(|| Error::schema(path, "expected an array"))
}

fn usize_list(v: &Value, path: &str) -> Result<Vec<usize>> {
    as_array(v, path)?
        .iter()
        .enumerate()
        .map(|(i, x)| as_usize(x, &format!("{path}[{i}]")))
        .collect()
}

pub(crate) fn dataset_from_json(value: &Value) -> Result<Dataset> {
    let root = value
        .as_object()
        .ok_or_else(|| Error::schema("$", "expected an object"))?;
    let name = field(root, "name", "")?
        .as_str()
        .ok_or_else(|| Error::schema("name", "expected a string"))?
        .to_string();
    let task = match field(root, "task", "")?.as_str() {
        Some("graph") => Task::Graph,
        Some("node") => Task::Node,
        _ => return Err(Error::schema("task", "expected \"graph\" or \"node\"")),
    };
    let num_classes = as_usize(field(root, "num_classes", "")?, "num_classes")?;
    let mut graphs = Vec::new();
    for (gi, gv) in as_array(field(root, "graphs", "")?, "graphs")?
        .iter()
        .enumerate()
    {
        let path = format!("graphs[{gi}]");
        let obj = gv
            .as_object()
            .ok_or_else(|| Error::schema(&path, "expected an object"))?;
        let n = as_usize(field(obj, "num_nodes", &path)?, &join(&path, "num_nodes"))?;
        let mut edges = Vec::new();
        let epath = join(&path, "edges");
        for (ei, ev) in as_array(field(obj, "edges", &path)?, &epath)?
            .iter()
            .enumerate()
        {
            let p = format!("{epath}[{ei}]");
            let pair = usize_list(ev, &p)?;
            if pair.len() != 2 {
                return Err(Error::schema(p, "expected a [u, v] pair"));
            }
            if pair[0] >= pair[1] || pair[1] >= n {
                return Err(Error::schema(p, format!("expected u < v < {n}")));
            }
            edges.push((pair[0], pair[1]));
        }
        let xpath = join(&path, "x");
        let rows = as_array(field(obj, "x", &path)?, &xpath)?;
        if rows.len() != n {
            return Err(Error::schema(
                xpath,
                format!("{} rows for {n} nodes", rows.len()),
            ));
        }
        let mut x = Vec::with_capacity(n);
        for (ri, rv) in rows.iter().enumerate() {
            let p = format!("{xpath}[{ri}]");
            let row: Vec<f64> = as_array(rv, &p)?
                .iter()
                .enumerate()
                .map(|(ci, c)| {
                    c.as_f64()
                        .ok_or_else(|| Error::schema(format!("{p}[{ci}]"), "expected a number"))
                })
                .collect::<Result<_>>()?;
            x.push(row);
        }
        let features = if n == 0 {
            Tensor::zeros(0, 0)
        } else {
            Tensor::from_rows(&x).map_err(|e| Error::schema(&xpath, e.to_string()))?
        };
        let mut g =
            Graph::new(n, edges, features).map_err(|e| Error::schema(&path, e.to_string()))?;
        if let Some(y) = obj.get("y") {
            g = g.with_label(as_usize(y, &join(&path, "y"))?);
        }
        if let Some(l) = obj.get("node_labels") {
            let lpath = join(&path, "node_labels");
            g = g
                .with_node_labels(usize_list(l, &lpath)?)
                .map_err(|e| Error::schema(lpath, e.to_string()))?;
        }
        graphs.push(g);
    }
    let splits = match root.get("splits") {
        None | Some(Value::Null) => None,
        Some(s) => {
            let obj = s
                .as_object()
                .ok_or_else(|| Error::schema("splits", "expected an object"))?;
            Some(Splits {
                train: usize_list(field(obj, "train", "splits")?, "splits.train")?,
                val: usize_list(field(obj, "val", "splits")?, "splits.val")?,
                test: usize_list(field(obj, "test", "splits")?, "splits.test")?,
            })
        }
    };
    let dataset = Dataset {
        name,
        task,
        num_classes,
        graphs,
        splits,
    };
    dataset.validate()?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_motif_dataset, MotifParams};

    #[test]
    fn split_sizes() {
        let d = generate_motif_dataset(10, 0, &MotifParams::default()).unwrap();
        let s = split_dataset(d, 1);
        let sp = s.splits.as_ref().unwrap();
        assert_eq!((sp.train.len(), sp.val.len(), sp.test.len()), (8, 1, 1));
        s.validate().unwrap();
    }

    #[test]
    fn schema_errors_name_the_field() {
        let bad = json!({
            "name": "t", "task": "graph", "num_classes": 2,
            "graphs": [{"num_nodes": 2, "edges": [[0, 1]], "x": [[1.0], ["a"]], "y": 0}]
        });
        let err = dataset_from_json(&bad).unwrap_err().to_string();
        assert!(err.contains("graphs[0].x[1][0]"), "{err}");

        let bad_label = json!({
            "name": "t", "task": "graph", "num_classes": 2,
            "graphs": [{"num_nodes": 1, "edges": [], "x": [[1.0]], "y": 5}]
        });
        let err = dataset_from_json(&bad_label).unwrap_err().to_string();
        assert!(err.contains("graphs[0].y"), "{err}");

        let bad_edge = json!({
            "name": "t", "task": "graph", "num_classes": 2,
            "graphs": [{"num_nodes": 2, "edges": [[1, 0]], "x": [[1.0], [1.0]], "y": 0}]
        });
        let err = dataset_from_json(&bad_edge).unwrap_err().to_string();
        assert!(err.contains("graphs[0].edges[0]"), "{err}");
    }

    #[test]
    fn overlapping_splits_rejected() {
        let d = generate_motif_dataset(4, 0, &MotifParams::default()).unwrap();
        let mut s = split_dataset(d, 0);
        s.splits.as_mut().unwrap().val = s.splits.as_ref().unwrap().train[..1].to_vec();
        assert!(s.validate().is_err());
    }
}
