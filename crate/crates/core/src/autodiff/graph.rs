use std::collections::HashMap;
use std::sync::Arc;

use super::kernels::{mm, mm_nt, mm_tn};
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result, Shape};

/// Index of a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    /// `a * b^T`
    MatMulT(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// `m x n` plus a broadcast `1 x n` row.
    AddRow(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Hadamard(NodeId, NodeId),
    Scale(NodeId, f64),
    Offset(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Softplus(NodeId),
    Exp(NodeId),
    SoftmaxRows(NodeId),
    MeanRows(NodeId),
    NeighborMean(NodeId, Arc<Vec<Vec<usize>>>),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    SliceRows(NodeId, usize),
    Reshape(NodeId),
    Transpose(NodeId),
    Sum(NodeId),
    Mse(NodeId, NodeId),
    CrossEntropy(NodeId, usize),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Tape of eagerly evaluated nodes.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, NodeId>,
}

fn mismatch(op: &'static str, node: usize, expected: impl ToString, actual: impl ToString) -> Error {
    Error::ShapeMismatch {
        op,
        node,
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Cached value of a node. Every node is evaluated when recorded, so
    /// this is the forward result for `id`.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Alias of [`Graph::value`] for the root of a forward pass.
    pub fn forward(&self, root: NodeId) -> &Tensor {
        self.value(root)
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    fn next(&self) -> usize {
        self.nodes.len()
    }

    fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id.0].value.shape()
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant, value)
    }

    /// Leaf holding the current value of a parameter. Repeated calls for
    /// the same parameter return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&node) = self.params.get(&id) {
            return node;
        }
        let node = self.push(Op::Param(id), store.value(id).clone());
        self.params.insert(id, node);
        node
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(mismatch("matmul", self.next(), format!("{}xN", sa.1), sb));
        }
        let v = mm(self.value(a), self.value(b));
        Ok(self.push(Op::MatMul(a, b), v))
    }

    /// `a * b^T`; with `b` stored `out x in` this is a linear layer.
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.1 {
            return Err(mismatch("matmul_t", self.next(), format!("Nx{}", sa.1), sb));
        }
        let v = mm_nt(self.value(a), self.value(b));
        Ok(self.push(Op::MatMulT(a, b), v))
    }

    fn zip_same(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch(name, self.next(), sa, sb));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(sa.0, sa.1, data)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), v))
    }

    /// Adds a `1 x n` row to every row of an `m x n` node.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr.0 != 1 || sr.1 != sa.1 {
            return Err(mismatch("add_row", self.next(), Shape(1, sa.1), sr));
        }
        let mut v = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        let cols = sa.1;
        for chunk in v.data_mut().chunks_mut(cols.max(1)) {
            for (x, y) in chunk.iter_mut().zip(&r) {
                *x += y;
            }
        }
        Ok(self.push(Op::AddRow(a, row), v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.zip_same("hadamard", a, b, |x, y| x * y)?;
        Ok(self.push(Op::Hadamard(a, b), v))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a).map(|x| s * x);
        self.push(Op::Scale(a, s), v)
    }

    /// Adds a constant to every entry.
    pub fn offset(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| x + c);
        self.push(Op::Offset(a), v)
    }

    /// `c - a`, elementwise.
    pub fn rsub_scalar(&mut self, c: f64, a: NodeId) -> NodeId {
        let neg = self.scale(a, -1.0);
        self.offset(neg, c)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), v)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| if x < 0.0 { 0.0 } else { x });
        self.push(Op::Relu(a), v)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(softplus);
        self.push(Op::Softplus(a), v)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), v)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let cols = x.cols();
        let mut out = Tensor::zeros(x.rows(), cols);
        for r in 0..x.rows() {
            softmax_row(x.row(r), &mut out.data_mut()[r * cols..(r + 1) * cols]);
        }
        self.push(Op::SoftmaxRows(a), out)
    }

    /// Column means as a `1 x n` row. Zero rows yield a zero row.
    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let (rows, cols) = (x.rows(), x.cols());
        let mut out = vec![0.0; cols];
        for r in 0..rows {
            for (o, v) in out.iter_mut().zip(x.row(r)) {
                *o += v;
            }
        }
        if rows > 0 {
            for o in &mut out {
                *o /= rows as f64;
            }
        }
        self.push(Op::MeanRows(a), Tensor::row_vector(out))
    }

    /// Row `v` of the output is the mean of rows `neighbors[v]` of `a`;
    /// an empty neighbour list yields a zero row.
    pub fn neighbor_mean(&mut self, a: NodeId, neighbors: Arc<Vec<Vec<usize>>>) -> Result<NodeId> {
        let x = self.value(a);
        let (rows, cols) = (x.rows(), x.cols());
        if neighbors.len() != rows {
            return Err(mismatch(
                "neighbor_mean",
                self.next(),
                format!("{} rows", neighbors.len()),
                x.shape(),
            ));
        }
        let mut out = Tensor::zeros(rows, cols);
        for (v, nbrs) in neighbors.iter().enumerate() {
            if nbrs.is_empty() {
                continue;
            }
            let inv = 1.0 / nbrs.len() as f64;
            let orow = &mut out.data_mut()[v * cols..(v + 1) * cols];
            for &u in nbrs {
                if u >= rows {
                    return Err(mismatch("neighbor_mean", self.nodes.len(), format!("index < {rows}"), u));
                }
                for (o, val) in orow.iter_mut().zip(x.row(u)) {
                    *o += val * inv;
                }
            }
        }
        Ok(self.push(Op::NeighborMean(a, neighbors), out))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let cols = parts.first().map_or(0, |&p| self.shape(p).1);
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.1 != cols {
                return Err(mismatch("concat_rows", self.next(), format!("Nx{cols}"), s));
            }
            rows += s.0;
            data.extend_from_slice(self.value(p).data());
        }
        let v = Tensor::new(rows, cols, data)?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), v))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let rows = parts.first().map_or(0, |&p| self.shape(p).0);
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.0 != rows {
                return Err(mismatch("concat_cols", self.next(), format!("{rows}xN"), s));
            }
            cols += s.1;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let v = Tensor::new(rows, cols, data)?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), v))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let s = self.shape(a);
        if start > end || end > s.0 {
            return Err(mismatch("slice_rows", self.next(), format!("rows {start}..{end}"), s));
        }
        let data = self.value(a).data()[start * s.1..end * s.1].to_vec();
        let v = Tensor::new(end - start, s.1, data)?;
        Ok(self.push(Op::SliceRows(a, start), v))
    }

    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        let s = self.shape(a);
        if s.0 * s.1 != rows * cols {
            return Err(mismatch("reshape", self.next(), Shape(rows, cols), s));
        }
        let v = self.value(a).clone().reshaped(rows, cols)?;
        Ok(self.push(Op::Reshape(a), v))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transposed();
        self.push(Op::Transpose(a), v)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let total = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(total))
    }

    /// Mean of squared differences.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch("mse", self.next(), sa, sb));
        }
        let n = (sa.0 * sa.1).max(1) as f64;
        let total: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        Ok(self.push(Op::Mse(a, b), Tensor::scalar(total / n)))
    }

    /// `logsumexp(z) - z[target]` for a `1 x C` logit row.
    pub fn cross_entropy(&mut self, logits: NodeId, target: usize) -> Result<NodeId> {
        let s = self.shape(logits);
        if s.0 != 1 || target >= s.1 {
            return Err(mismatch(
                "cross_entropy",
                self.next(),
                format!("1xC with C > {target}"),
                s,
            ));
        }
        let z = self.value(logits).data();
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = lse - z[target];
        Ok(self.push(Op::CrossEntropy(logits, target), Tensor::scalar(loss)))
    }

    /// Accumulates `d root / d param` into `store` for every parameter leaf.
    pub fn backward(&self, root: NodeId, store: &mut ParamStore) -> Result<()> {
        let s = self.shape(root);
        if s != Shape(1, 1) {
            return Err(Error::NonScalarRoot(s));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::scalar(1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Param(pid) => store.accumulate(*pid, &g),
                Op::MatMul(a, b) => {
                    let ga = mm_nt(&g, self.value(*b));
                    let gb = mm_tn(self.value(*a), &g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = mm(&g, self.value(*b));
                    let gb = mm_tn(&g, self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::AddRow(a, r) => {
                    let cols = g.cols();
                    let mut gr = vec![0.0; cols];
                    for row in g.data().chunks(cols.max(1)) {
                        for (o, v) in gr.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *r, Tensor::row_vector(gr));
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.map(|v| -v));
                    acc(&mut grads, *a, g);
                }
                Op::Hadamard(a, b) => {
                    let ga = zip(&g, self.value(*b), |x, y| x * y);
                    let gb = zip(&g, self.value(*a), |x, y| x * y);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.map(|v| v * s)),
                Op::Offset(a) | Op::Reshape(a) => {
                    let s = self.shape(*a);
                    acc(&mut grads, *a, g.reshaped(s.0, s.1)?);
                }
                Op::Tanh(a) => {
                    let ga = zip(&g, &node.value, |gv, y| gv * (1.0 - y * y));
                    acc(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = zip(&g, &node.value, |gv, y| gv * y * (1.0 - y));
                    acc(&mut grads, *a, ga);
                }
                Op::Relu(a) => {
                    let ga = zip(&g, self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 });
                    acc(&mut grads, *a, ga);
                }
                Op::Softplus(a) => {
                    let ga = zip(&g, self.value(*a), |gv, x| gv * sigmoid(x));
                    acc(&mut grads, *a, ga);
                }
                Op::Exp(a) => {
                    let ga = zip(&g, &node.value, |gv, y| gv * y);
                    acc(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let cols = y.cols();
                    let mut ga = Tensor::zeros(y.rows(), cols);
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        let out = &mut ga.data_mut()[r * cols..(r + 1) * cols];
                        for ((o, &yv), &gv) in out.iter_mut().zip(yr).zip(gr) {
                            *o = yv * (gv - dot);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::MeanRows(a) => {
                    let s = self.shape(*a);
                    if s.0 > 0 {
                        let inv = 1.0 / s.0 as f64;
                        let row: Vec<f64> = g.data().iter().map(|v| v * inv).collect();
                        let mut data = Vec::with_capacity(s.0 * s.1);
                        for _ in 0..s.0 {
                            data.extend_from_slice(&row);
                        }
                        acc(&mut grads, *a, Tensor::new(s.0, s.1, data)?);
                    }
                }
                Op::NeighborMean(a, nbrs) => {
                    let s = self.shape(*a);
                    let mut ga = Tensor::zeros(s.0, s.1);
                    for (v, list) in nbrs.iter().enumerate() {
                        if list.is_empty() {
                            continue;
                        }
                        let inv = 1.0 / list.len() as f64;
                        for &u in list {
                            let dst = &mut ga.data_mut()[u * s.1..(u + 1) * s.1];
                            for (o, gv) in dst.iter_mut().zip(g.row(v)) {
                                *o += gv * inv;
                            }
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatRows(parts) => {
                    let cols = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let rows = self.shape(p).0;
                        let data = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                        acc(&mut grads, p, Tensor::new(rows, cols, data)?);
                        offset += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let rows = g.rows();
                    let mut offset = 0;
                    for &p in parts {
                        let cols = self.shape(p).1;
                        let mut data = Vec::with_capacity(rows * cols);
                        for r in 0..rows {
                            data.extend_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        acc(&mut grads, p, Tensor::new(rows, cols, data)?);
                        offset += cols;
                    }
                }
                Op::SliceRows(a, start) => {
                    let s = self.shape(*a);
                    let mut ga = Tensor::zeros(s.0, s.1);
                    ga.data_mut()[start * s.1..start * s.1 + g.len()].copy_from_slice(g.data());
                    acc(&mut grads, *a, ga);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.transposed()),
                Op::Sum(a) => {
                    let s = self.shape(*a);
                    acc(&mut grads, *a, Tensor::filled(s.0, s.1, g.item()));
                }
                Op::Mse(a, b) => {
                    let n = self.value(*a).len().max(1) as f64;
                    let k = 2.0 * g.item() / n;
                    let ga = zip(self.value(*a), self.value(*b), |x, y| k * (x - y));
                    acc(&mut grads, *b, ga.map(|v| -v));
                    acc(&mut grads, *a, ga);
                }
                Op::CrossEntropy(z, target) => {
                    let zv = self.value(*z);
                    let mut p = vec![0.0; zv.cols()];
                    softmax_row(zv.data(), &mut p);
                    p[*target] -= 1.0;
                    let gz = g.item();
                    acc(&mut grads, *z, Tensor::row_vector(p.into_iter().map(|v| v * gz).collect()));
                }
            }
        }
        Ok(())
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("zip shape")
}

fn acc(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
