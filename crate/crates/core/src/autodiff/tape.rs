//! Tape-based reverse-mode differentiation.
//!
//! Every primitive pushes its output value onto the tape together with the
//! data its vector-Jacobian product needs. [`Tape::backward`] walks the tape
//! in reverse and accumulates gradients additively, so a value used twice
//! receives the sum of both contributions.

use std::sync::Arc;

use super::tensor::gemm;
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Compressed sparse row matrix used as a constant left operand.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets. Triplets must be grouped by
    /// ascending row.
    pub fn from_sorted_triplets(
        rows: usize,
        cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Self {
        let mut row_ptr = vec![0usize; rows + 1];
        for &(r, _, _) in triplets {
            row_ptr[r + 1] += 1;
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        debug_assert!(triplets.windows(2).all(|w| w[0].0 <= w[1].0));
        Self {
            rows,
            cols,
            row_ptr,
            col_idx: triplets.iter().map(|t| t.1).collect(),
            vals: triplets.iter().map(|t| t.2).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let cur = t.get(r, self.col_idx[k]);
                t.set(r, self.col_idx[k], cur + self.vals[k]);
            }
        }
        t
    }

    /// `self · x`.
    pub fn mul(&self, x: &Tensor) -> Tensor {
        let d = x.cols();
        let mut out = Tensor::zeros(self.rows, d);
        for r in 0..self.rows {
            let out_row = r * d;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let w = self.vals[k];
                let src = x.row(self.col_idx[k]);
                let dst = &mut out.values_mut()[out_row..out_row + d];
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
        out
    }

    fn mul_transposed(&self, g: &Tensor) -> Tensor {
        let d = g.cols();
        let mut out = Tensor::zeros(self.cols, d);
        let dst_all = out.values_mut();
        for r in 0..self.rows {
            let src = g.row(r);
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let w = self.vals[k];
                let c = self.col_idx[k];
                for (o, s) in dst_all[c * d..(c + 1) * d].iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
        out
    }
}

/// Normalized weighted adjacency `D^{-1/2} (I + W) D^{-1/2}` in CSR form,
/// where `W` carries `w_k` at both orientations of edge `k`.
struct WeightedAdjacency {
    matrix: SparseMatrix,
    /// Edge index of each stored entry, `None` on the diagonal.
    entry_edge: Vec<Option<usize>>,
    /// `d_u^{-1/2}` per node.
    inv_sqrt_degree: Vec<f64>,
    edges: Vec<(usize, usize)>,
}

impl WeightedAdjacency {
    fn build(weights: &[f64], edges: &[(usize, usize)], n: usize) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, Option<usize>)>> = (0..n).map(|u| vec![(u, None)]).collect();
        let mut degree = vec![1.0; n];
        for (k, &(u, v)) in edges.iter().enumerate() {
            if u >= n || v >= n || u == v {
                return Err(Error::shape(
                    "weighted_propagate",
                    format!("edge ({u},{v}) for n={n}"),
                ));
            }
            rows[u].push((v, Some(k)));
            rows[v].push((u, Some(k)));
        }
        for u in 0..n {
            rows[u].sort_unstable_by_key(|e| e.0);
            for &(_, e) in &rows[u][..] {
                if let Some(k) = e {
                    degree[u] += weights[k];
                }
            }
            if !(degree[u] > 0.0) {
                return Err(Error::NonFinite(format!(
                    "weighted_propagate: node {u} has degree {}",
                    degree[u]
                )));
            }
        }
        let mut triplets = Vec::with_capacity(n + 2 * edges.len());
        let mut entry_edge = Vec::with_capacity(n + 2 * edges.len());
        for (u, row) in rows.iter().enumerate() {
            for &(v, e) in row {
                let value = match e {
                    None => 1.0 / degree[u],
                    Some(k) => weights[k] * (1.0 / (degree[u] * degree[v]).sqrt()),
                };
                triplets.push((u, v, value));
                entry_edge.push(e);
            }
        }
        Ok(Self {
            matrix: SparseMatrix::from_sorted_triplets(n, n, &triplets),
            entry_edge,
            inv_sqrt_degree: degree.iter().map(|d| d.powf(-0.5)).collect(),
            edges: edges.to_vec(),
        })
    }
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Log(Var),
    ClampMax(Var, f64),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    SegmentSum(Var, Vec<usize>),
    SegmentMax(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    SqDist(Var, Var),
    Cosine(Var),
    MaskedRowMin(Var, Vec<usize>),
    SoftmaxCe {
        logits: Var,
        targets: Vec<usize>,
        probs: Tensor,
    },
    Propagate(Arc<SparseMatrix>, Var),
    ScatterEdges(Var, Vec<(usize, usize)>),
    SymNormalize(Var, Vec<f64>),
    WeightedPropagate {
        weights: Var,
        x: Var,
        adjacency: Box<WeightedAdjacency>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records a computation for reverse-mode differentiation.
///
/// A tape is confined to one thread; independent tapes may run concurrently.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(usize, ParamId)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Adds every parameter leaf's gradient into the store.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(idx, pid) in &self.params {
            if let Some(g) = &self.grads[idx] {
                store.get_mut(pid).grad.add_assign(g);
            }
        }
    }
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a constant (no gradient is propagated further).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records the current value of a parameter.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: store.value(id).clone(),
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        check_same("add", x, y)?;
        let mut out = x.clone();
        out.add_assign(y);
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        check_same("sub", x, y)?;
        let mut out = x.clone();
        for (o, v) in out.values_mut().iter_mut().zip(y.values()) {
            *o -= v;
        }
        self.push(out, Op::Sub(a, b), "sub")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        check_same("mul", x, y)?;
        let mut out = x.clone();
        for (o, v) in out.values_mut().iter_mut().zip(y.values()) {
            *o *= v;
        }
        self.push(out, Op::Mul(a, b), "mul")
    }

    /// Adds a `1 × d` row to every row of an `n × d` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(Error::shape(
                "add_row",
                format!("{:?} + row {:?}", x.shape(), r.shape()),
            ));
        }
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (o, v) in out.row_mut(i).iter_mut().zip(r.values()) {
                *o += v;
            }
        }
        self.push(out, Op::AddRow(a, row), "add_row")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|v| v * c);
        self.push(out, Op::Scale(a, c), "scale")
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|v| v + c);
        self.push(out, Op::AddScalar(a), "add_scalar")
    }

    /// Rectified linear unit; the subgradient at zero is zero.
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = relu(self.value(a));
        self.push(out, Op::Relu(a), "relu")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a), "sigmoid")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Log(a), "log")
    }

    /// `min(x, c)` elementwise; gradient passes only where `x < c`.
    pub fn clamp_max(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|v| v.min(c));
        self.push(out, Op::ClampMax(a, c), "clamp_max")
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.value(p).rows())
            .ok_or_else(|| Error::shape("concat_cols", "no inputs"))?;
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(Error::shape(
                    "concat_cols",
                    format!("row counts {} vs {rows}", t.rows()),
                ));
            }
            cols += t.cols();
        }
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                out.row_mut(r)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()), "concat_cols")
    }

    /// Vertical concatenation of matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts
            .first()
            .map(|&p| self.value(p).cols())
            .ok_or_else(|| Error::shape("concat_rows", "no inputs"))?;
        let mut values = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(Error::shape(
                    "concat_rows",
                    format!("column counts {} vs {cols}", t.cols()),
                ));
            }
            rows += t.rows();
            values.extend_from_slice(t.values());
        }
        let out = Tensor::from_vec(rows, cols, values)?;
        self.push(out, Op::ConcatRows(parts.to_vec()), "concat_rows")
    }

    /// Selects rows by index (indices may repeat).
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let x = self.value(a);
        let out = gather_rows(x, indices)?;
        self.push(out, Op::GatherRows(a, indices.to_vec()), "gather_rows")
    }

    /// Sums consecutive row blocks. `offsets` has one more entry than there
    /// are segments; segment `s` covers rows `offsets[s]..offsets[s+1]`.
    pub fn segment_sum(&mut self, a: Var, offsets: &[usize]) -> Result<Var> {
        let x = self.value(a);
        check_offsets("segment_sum", offsets, x.rows())?;
        let out = segment_sum(x, offsets);
        self.push(out, Op::SegmentSum(a, offsets.to_vec()), "segment_sum")
    }

    /// Columnwise maximum over consecutive row blocks; ties go to the first row.
    pub fn segment_max(&mut self, a: Var, offsets: &[usize]) -> Result<Var> {
        let x = self.value(a);
        check_offsets("segment_max", offsets, x.rows())?;
        let (out, argmax) = segment_max(x, offsets)?;
        self.push(out, Op::SegmentMax(a, argmax), "segment_max")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).values().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(Error::shape("mean", "empty input"));
        }
        let s = x.values().iter().sum::<f64>() / x.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), "mean")
    }

    /// Pairwise squared Euclidean distances between the rows of `a` (n × d)
    /// and the rows of `b` (k × d), giving an n × k matrix.
    pub fn sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.cols() {
            return Err(Error::shape(
                "sq_dist",
                format!("{:?} vs {:?}", x.shape(), y.shape()),
            ));
        }
        let mut out = Tensor::zeros(x.rows(), y.rows());
        for i in 0..x.rows() {
            for j in 0..y.rows() {
                out.set(i, j, sq_dist(x.row(i), y.row(j)));
            }
        }
        self.push(out, Op::SqDist(a, b), "sq_dist")
    }

    /// Pairwise cosine similarity between the rows of `a`. Rows with zero
    /// norm have cosine 0 with everything (including themselves).
    pub fn cosine(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let n = x.rows();
        let norms: Vec<f64> = (0..n).map(|i| norm(x.row(i))).collect();
        let mut out = Tensor::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                out.set(i, j, cosine_from(x.row(i), x.row(j), norms[i], norms[j]));
            }
        }
        self.push(out, Op::Cosine(a), "cosine")
    }

    /// Row-wise minimum over the entries where `mask` is true. Every row
    /// must have at least one admissible entry. Output is n × 1.
    pub fn masked_row_min(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let x = self.value(a);
        if mask.len() != x.len() {
            return Err(Error::shape(
                "masked_row_min",
                format!("mask of {} for {:?}", mask.len(), x.shape()),
            ));
        }
        let mut out = Tensor::zeros(x.rows(), 1);
        let mut argmin = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let mut best: Option<usize> = None;
            for c in 0..x.cols() {
                if mask[r * x.cols() + c] && best.is_none_or(|b| x.get(r, c) < x.get(r, b)) {
                    best = Some(c);
                }
            }
            let b = best.ok_or_else(|| {
                Error::shape("masked_row_min", format!("row {r} has no admissible entry"))
            })?;
            argmin.push(b);
            out.set(r, 0, x.get(r, b));
        }
        self.push(out, Op::MaskedRowMin(a, argmin), "masked_row_min")
    }

    /// Mean softmax cross-entropy of `logits` (n × C) against class targets.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let x = self.value(logits);
        if targets.len() != x.rows() || x.rows() == 0 {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("{} targets for {:?}", targets.len(), x.shape()),
            ));
        }
        let mut probs = Tensor::zeros(x.rows(), x.cols());
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            if t >= x.cols() {
                return Err(Error::shape(
                    "softmax_cross_entropy",
                    format!("target {t} with {} classes", x.cols()),
                ));
            }
            let row = x.row(r);
            let lse = log_sum_exp(row);
            for (c, &v) in row.iter().enumerate() {
                probs.set(r, c, (v - lse).exp());
            }
            loss += lse - row[t];
        }
        loss /= x.rows() as f64;
        self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCe {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            "softmax_cross_entropy",
        )
    }

    /// Constant sparse matrix times `x`.
    pub fn propagate(&mut self, matrix: Arc<SparseMatrix>, x: Var) -> Result<Var> {
        let t = self.value(x);
        if matrix.cols() != t.rows() {
            return Err(Error::shape(
                "propagate",
                format!("{}x{} · {:?}", matrix.rows(), matrix.cols(), t.shape()),
            ));
        }
        let out = matrix.mul(t);
        self.push(out, Op::Propagate(matrix, x), "propagate")
    }

    /// Builds `I + Σ_k w_k (E_{u_k v_k} + E_{v_k u_k})` as an n × n matrix from an
    /// `E × 1` weight column and the matching undirected edge list.
    pub fn scatter_edges(
        &mut self,
        weights: Var,
        edges: &[(usize, usize)],
        n: usize,
    ) -> Result<Var> {
        let w = self.value(weights);
        if w.cols() != 1 || w.rows() != edges.len() {
            return Err(Error::shape(
                "scatter_edges",
                format!("{:?} weights for {} edges", w.shape(), edges.len()),
            ));
        }
        let mut out = Tensor::identity(n);
        for (k, &(u, v)) in edges.iter().enumerate() {
            if u >= n || v >= n || u == v {
                return Err(Error::shape(
                    "scatter_edges",
                    format!("edge ({u},{v}) for n={n}"),
                ));
            }
            let e = w.get(k, 0);
            out.set(u, v, out.get(u, v) + e);
            out.set(v, u, out.get(v, u) + e);
        }
        self.push(
            out,
            Op::ScatterEdges(weights, edges.to_vec()),
            "scatter_edges",
        )
    }

    /// Symmetric degree normalization `D^{-1/2} A D^{-1/2}` with `D` the row sums of `A`.
    pub fn sym_normalize(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.rows() != x.cols() {
            return Err(Error::shape("sym_normalize", format!("{:?}", x.shape())));
        }
        let n = x.rows();
        let mut s = Vec::with_capacity(n);
        for r in 0..n {
            let d: f64 = x.row(r).iter().sum();
            if d <= 0.0 {
                return Err(Error::NonFinite(format!(
                    "sym_normalize: row {r} has degree {d}"
                )));
            }
            s.push(d.powf(-0.5));
        }
        let mut out = Tensor::zeros(n, n);
        for u in 0..n {
            for v in 0..n {
                out.set(u, v, x.get(u, v) * s[u] * s[v]);
            }
        }
        self.push(out, Op::SymNormalize(a, s), "sym_normalize")
    }

    /// `D^{-1/2} (I + W) D^{-1/2} · x` for edge weights `w` (`E × 1`, aligned
    /// with `edges`), where `D` holds the row sums of `I + W`. Linear in the
    /// number of edges; with every weight equal to 1 the result matches the
    /// unweighted normalized adjacency bit for bit.
    pub fn weighted_propagate(
        &mut self,
        weights: Var,
        edges: &[(usize, usize)],
        x: Var,
    ) -> Result<Var> {
        let w = self.value(weights);
        if w.cols() != 1 || w.rows() != edges.len() {
            return Err(Error::shape(
                "weighted_propagate",
                format!("{:?} weights for {} edges", w.shape(), edges.len()),
            ));
        }
        let t = self.value(x);
        let adjacency = WeightedAdjacency::build(w.values(), edges, t.rows())?;
        let out = adjacency.matrix.mul(t);
        self.push(
            out,
            Op::WeightedPropagate {
                weights,
                x,
                adjacency: Box::new(adjacency),
            },
            "weighted_propagate",
        )
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out_val = self.value(output);
        if out_val.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("output must be scalar, got {:?}", out_val.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::filled(1, 1, 1.0));
        let mut params = Vec::new();

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(pid) => params.push((idx, *pid)),
                Op::MatMul(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    let mut ga = Tensor::zeros(x.rows(), x.cols());
                    gemm(1.0, &g, false, y, true, 0.0, &mut ga);
                    let mut gb = Tensor::zeros(y.rows(), y.cols());
                    gemm(1.0, x, true, &g, false, 0.0, &mut gb);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.map(|v| -v));
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    accumulate(&mut grads, *a, zip_map(&g, y, |gv, yv| gv * yv));
                    accumulate(&mut grads, *b, zip_map(&g, x, |gv, xv| gv * xv));
                }
                Op::AddRow(a, row) => {
                    let mut gr = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, v) in gr.values_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *row, gr);
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g.map(|v| v * c)),
                Op::AddScalar(a) => accumulate(&mut grads, *a, g.clone()),
                Op::Relu(a) => {
                    let x = self.value(*a);
                    accumulate(
                        &mut grads,
                        *a,
                        zip_map(&g, x, |gv, xv| if xv > 0.0 { gv } else { 0.0 }),
                    );
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    accumulate(
                        &mut grads,
                        *a,
                        zip_map(&g, y, |gv, yv| gv * yv * (1.0 - yv)),
                    );
                }
                Op::Log(a) => {
                    let x = self.value(*a);
                    accumulate(&mut grads, *a, zip_map(&g, x, |gv, xv| gv / xv));
                }
                Op::ClampMax(a, c) => {
                    let x = self.value(*a);
                    let c = *c;
                    accumulate(
                        &mut grads,
                        *a,
                        zip_map(&g, x, |gv, xv| if xv < c { gv } else { 0.0 }),
                    );
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let t = self.value(p);
                        let mut gp = Tensor::zeros(t.rows(), t.cols());
                        for r in 0..t.rows() {
                            gp.row_mut(r)
                                .copy_from_slice(&g.row(r)[offset..offset + t.cols()]);
                        }
                        offset += t.cols();
                        accumulate(&mut grads, p, gp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let t = self.value(p);
                        let n = t.len();
                        let gp = Tensor::from_vec(
                            t.rows(),
                            t.cols(),
                            g.values()[offset..offset + n].to_vec(),
                        )?;
                        offset += n;
                        accumulate(&mut grads, p, gp);
                    }
                }
                Op::GatherRows(a, indices) => {
                    let x = self.value(*a);
                    let mut ga = Tensor::zeros(x.rows(), x.cols());
                    for (i, &r) in indices.iter().enumerate() {
                        for (o, v) in ga.row_mut(r).iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SegmentSum(a, offsets) => {
                    let x = self.value(*a);
                    let mut ga = Tensor::zeros(x.rows(), x.cols());
                    for s in 0..offsets.len() - 1 {
                        for r in offsets[s]..offsets[s + 1] {
                            ga.row_mut(r).copy_from_slice(g.row(s));
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SegmentMax(a, argmax) => {
                    let x = self.value(*a);
                    let d = x.cols();
                    let mut ga = Tensor::zeros(x.rows(), d);
                    for (k, &r) in argmax.iter().enumerate() {
                        let c = k % d;
                        let s = k / d;
                        ga.set(r, c, ga.get(r, c) + g.get(s, c));
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let x = self.value(*a);
                    accumulate(&mut grads, *a, Tensor::filled(x.rows(), x.cols(), g.item()));
                }
                Op::Mean(a) => {
                    let x = self.value(*a);
                    let v = g.item() / x.len() as f64;
                    accumulate(&mut grads, *a, Tensor::filled(x.rows(), x.cols(), v));
                }
                Op::SqDist(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    let mut ga = Tensor::zeros(x.rows(), x.cols());
                    let mut gb = Tensor::zeros(y.rows(), y.cols());
                    for i in 0..x.rows() {
                        for j in 0..y.rows() {
                            let w = 2.0 * g.get(i, j);
                            if w == 0.0 {
                                continue;
                            }
                            for c in 0..x.cols() {
                                let diff = x.get(i, c) - y.get(j, c);
                                ga.set(i, c, ga.get(i, c) + w * diff);
                                gb.set(j, c, gb.get(j, c) - w * diff);
                            }
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Cosine(a) => {
                    let x = self.value(*a);
                    let cos = &node.value;
                    let n = x.rows();
                    let norms: Vec<f64> = (0..n).map(|i| norm(x.row(i))).collect();
                    let mut ga = Tensor::zeros(n, x.cols());
                    for i in 0..n {
                        if norms[i] == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            if i == j || norms[j] == 0.0 {
                                continue;
                            }
                            let w = g.get(i, j) + g.get(j, i);
                            if w == 0.0 {
                                continue;
                            }
                            let inv = 1.0 / (norms[i] * norms[j]);
                            let cij = cos.get(i, j);
                            let inv_sq = 1.0 / (norms[i] * norms[i]);
                            for c in 0..x.cols() {
                                let d = x.get(j, c) * inv - cij * x.get(i, c) * inv_sq;
                                ga.set(i, c, ga.get(i, c) + w * d);
                            }
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::MaskedRowMin(a, argmin) => {
                    let x = self.value(*a);
                    let mut ga = Tensor::zeros(x.rows(), x.cols());
                    for (r, &c) in argmin.iter().enumerate() {
                        ga.set(r, c, g.get(r, 0));
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SoftmaxCe {
                    logits,
                    targets,
                    probs,
                } => {
                    let n = targets.len() as f64;
                    let scale = g.item() / n;
                    let mut gl = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        gl.set(r, t, gl.get(r, t) - 1.0);
                    }
                    gl.values_mut().iter_mut().for_each(|v| *v *= scale);
                    accumulate(&mut grads, *logits, gl);
                }
                Op::Propagate(m, x) => accumulate(&mut grads, *x, m.mul_transposed(&g)),
                Op::ScatterEdges(w, edges) => {
                    let mut gw = Tensor::zeros(edges.len(), 1);
                    for (k, &(u, v)) in edges.iter().enumerate() {
                        gw.set(k, 0, g.get(u, v) + g.get(v, u));
                    }
                    accumulate(&mut grads, *w, gw);
                }
                Op::SymNormalize(a, s) => {
                    let x = self.value(*a);
                    let n = x.rows();
                    // dL/ds_u collects the row-scale and column-scale uses of s_u.
                    let mut gs = vec![0.0; n];
                    for u in 0..n {
                        for v in 0..n {
                            let t = g.get(u, v) * x.get(u, v);
                            gs[u] += t * s[v];
                            gs[v] += t * s[u];
                        }
                    }
                    let mut ga = Tensor::zeros(n, n);
                    for u in 0..n {
                        let row_term = -0.5 * s[u] * s[u] * s[u] * gs[u];
                        for v in 0..n {
                            ga.set(u, v, g.get(u, v) * s[u] * s[v] + row_term);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::WeightedPropagate {
                    weights,
                    x,
                    adjacency,
                } => {
                    let xv = self.value(*x);
                    let wv = self.value(*weights);
                    let m = &adjacency.matrix;
                    let s = &adjacency.inv_sqrt_degree;
                    let mut gw = Tensor::zeros(wv.rows(), 1);
                    let mut gs = vec![0.0; m.rows];
                    for u in 0..m.rows {
                        let gu = g.row(u);
                        for k in m.row_ptr[u]..m.row_ptr[u + 1] {
                            let v = m.col_idx[k];
                            let dot: f64 = gu.iter().zip(xv.row(v)).map(|(a, b)| a * b).sum();
                            let a_uv = adjacency.entry_edge[k].map_or(1.0, |e| wv.get(e, 0));
                            gs[u] += dot * a_uv * s[v];
                            gs[v] += dot * a_uv * s[u];
                            if let Some(e) = adjacency.entry_edge[k] {
                                gw.values_mut()[e] += dot * s[u] * s[v];
                            }
                        }
                    }
                    let gd: Vec<f64> = (0..m.rows)
                        .map(|u| -0.5 * s[u] * s[u] * s[u] * gs[u])
                        .collect();
                    for (k, &(u, v)) in adjacency.edges.iter().enumerate() {
                        gw.values_mut()[k] += gd[u] + gd[v];
                    }
                    accumulate(&mut grads, *weights, gw);
                    accumulate(&mut grads, *x, m.mul_transposed(&g));
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, params })
    }

    /// Runs [`Tape::backward`] and adds parameter gradients into `store`.
    pub fn backward_into(&self, output: Var, store: &mut ParamStore) -> Result<()> {
        self.backward(output)?.accumulate_into(store);
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let values = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::from_vec(a.rows(), a.cols(), values).expect("shapes agree")
}

pub(crate) fn check_offsets(op: &'static str, offsets: &[usize], rows: usize) -> Result<()> {
    if offsets.len() < 2
        || offsets[0] != 0
        || *offsets.last().unwrap() != rows
        || offsets.windows(2).any(|w| w[0] > w[1])
    {
        return Err(Error::shape(
            op,
            format!("bad offsets {offsets:?} for {rows} rows"),
        ));
    }
    Ok(())
}

pub(crate) fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub(crate) fn gather_rows(x: &Tensor, indices: &[usize]) -> Result<Tensor> {
    let mut out = Tensor::zeros(indices.len(), x.cols());
    for (i, &r) in indices.iter().enumerate() {
        if r >= x.rows() {
            return Err(Error::shape(
                "gather_rows",
                format!("row {r} out of {}", x.rows()),
            ));
        }
        out.row_mut(i).copy_from_slice(x.row(r));
    }
    Ok(out)
}

pub(crate) fn segment_sum(x: &Tensor, offsets: &[usize]) -> Tensor {
    let segs = offsets.len() - 1;
    let mut out = Tensor::zeros(segs, x.cols());
    for s in 0..segs {
        for r in offsets[s]..offsets[s + 1] {
            for (o, v) in out.row_mut(s).iter_mut().zip(x.row(r)) {
                *o += v;
            }
        }
    }
    out
}

pub(crate) fn segment_max(x: &Tensor, offsets: &[usize]) -> Result<(Tensor, Vec<usize>)> {
    let segs = offsets.len() - 1;
    let d = x.cols();
    let mut out = Tensor::zeros(segs, d);
    let mut argmax = vec![0usize; segs * d];
    for s in 0..segs {
        if offsets[s] == offsets[s + 1] {
            return Err(Error::shape("segment_max", format!("segment {s} is empty")));
        }
        for c in 0..d {
            let mut best = offsets[s];
            for r in offsets[s] + 1..offsets[s + 1] {
                if x.get(r, c) > x.get(best, c) {
                    best = r;
                }
            }
            argmax[s * d + c] = best;
            out.set(s, c, x.get(best, c));
        }
    }
    Ok((out, argmax))
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn cosine_from(a: &[f64], b: &[f64], na: f64, nb: f64) -> f64 {
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// Cosine similarity of two vectors, 0 if either is the zero vector.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    cosine_from(a, b, norm(a), norm(b))
}
