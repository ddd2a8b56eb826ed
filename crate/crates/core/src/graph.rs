//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value; `backward`
//! walks the tape once in reverse, accumulating vector-Jacobian products
//! into the inputs of each node. Nodes that depend on no trainable leaf are
//! skipped.

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor, Unary};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `r×c` plus a length-`c` row broadcast over rows.
    AddRow(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Unary(Var, Unary),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNorm(Var, f64),
    ConcatCols(Vec<Var>),
    StackRows(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
        len: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
        len: usize,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    MeanRows(Var),
    SumRows(Var),
    Sum(Var),
    PairwiseDistance(Var, Var),
    Pick {
        x: Var,
        idx: Vec<usize>,
    },
    NormalizeRows(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar output with respect to every node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    visited: usize,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Number of recorded operations the backward pass processed.
    pub fn visited(&self) -> usize {
        self.visited
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

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-trainable leaf (data).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = tensor::transpose(self.value(a))?;
        Ok(self.push(out, Op::Transpose(a), &[a]))
    }

    fn zip_with(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::dim(op, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("add", a, b, |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("sub", a, b, |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("mul", a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let (r, c) = tx.dims2();
        if tb.len() != c || tx.rank() != 2 {
            return Err(Error::dim("add_row", tx.shape(), tb.shape()));
        }
        let mut data = tx.data().to_vec();
        for i in 0..r {
            for (o, &b) in data[i * c..(i + 1) * c].iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(out, Op::AddRow(x, bias), &[x, bias]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c), &[x])
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v + c);
        self.push(out, Op::AddConst(x), &[x])
    }

    pub fn unary(&mut self, x: Var, f: Unary) -> Result<Var> {
        let out = f.apply(self.value(x))?;
        Ok(self.push(out, Op::Unary(x, f), &[x]))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Tanh).expect("tanh is total")
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid).expect("sigmoid is total")
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Exp).expect("exp is total")
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Relu).expect("relu is total")
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let out = tensor::softmax_rows(self.value(x));
        self.push(out, Op::SoftmaxRows(x), &[x])
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let out = tensor::log_softmax_rows(self.value(x));
        self.push(out, Op::LogSoftmaxRows(x), &[x])
    }

    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Var {
        let out = tensor::layer_normalize(self.value(x), eps);
        self.push(out, Op::LayerNorm(x, eps), &[x])
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::EmptySequence("concat_cols"));
        };
        let rows = self.value(first).rows();
        for &p in parts {
            if self.value(p).rank() != 2 || self.value(p).rows() != rows {
                return Err(Error::dim("concat_cols", self.shape(first), self.shape(p)));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::new(vec![rows, total], data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Stacks row blocks (each `k×c` or a length-`c` vector) into one matrix.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::EmptySequence("stack_rows"));
        };
        let cols = self.value(first).cols();
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols || t.rank() == 0 {
                return Err(Error::dim("stack_rows", self.shape(first), t.shape()));
            }
            data.extend_from_slice(t.data());
        }
        let rows = data.len() / cols;
        let out = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(out, Op::StackRows(parts.to_vec()), parts))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = t.dims2();
        if t.rank() != 2 || len == 0 || start + len > c {
            return Err(Error::dim("slice_cols", t.shape(), &[start, len]));
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&t.row(i)[start..start + len]);
        }
        let out = Tensor::new(vec![r, len], data)?;
        Ok(self.push(out, Op::SliceCols { x, start, len }, &[x]))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = t.dims2();
        if t.rank() != 2 || len == 0 || start + len > r {
            return Err(Error::dim("slice_rows", t.shape(), &[start, len]));
        }
        let data = t.data()[start * c..(start + len) * c].to_vec();
        let out = Tensor::new(vec![len, c], data)?;
        Ok(self.push(out, Op::SliceRows { x, start, len }, &[x]))
    }

    pub fn row(&mut self, x: Var, i: usize) -> Result<Var> {
        self.slice_rows(x, i, 1)
    }

    /// Row lookup: output row `t` is `table[ids[t]]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (v, d) = t.dims2();
        if ids.is_empty() {
            return Err(Error::EmptySequence("gather_rows"));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Vocabulary { id, vocab: v });
            }
            data.extend_from_slice(t.row(id));
        }
        let out = Tensor::new(vec![ids.len(), d], data)?;
        Ok(self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Column-wise mean over rows: `r×c → 1×c`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (r, c) = t.dims2();
        let mut data = vec![0.0; c];
        for i in 0..r {
            for (o, &v) in data.iter_mut().zip(t.row(i)) {
                *o += v;
            }
        }
        for o in data.iter_mut() {
            *o /= r as f64;
        }
        let out = Tensor::new(vec![1, c], data).expect("c >= 1");
        self.push(out, Op::MeanRows(x), &[x])
    }

    /// Per-row sum: `r×c → [r]`.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (r, _) = t.dims2();
        let data = (0..r).map(|i| t.row(i).iter().sum()).collect();
        let out = Tensor::new(vec![r], data).expect("r >= 1");
        self.push(out, Op::SumRows(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).data().iter().sum());
        self.push(out, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// `D[i][j] = ‖a_i − b_j‖`.
    pub fn pairwise_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::pairwise_distances(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::PairwiseDistance(a, b), &[a, b]))
    }

    /// Gathers elements by flat index into a vector.
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if idx.is_empty() {
            return Err(Error::EmptySequence("pick"));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= t.len()) {
            return Err(Error::dim("pick", t.shape(), &[bad]));
        }
        let data = idx.iter().map(|&i| t.data()[i]).collect();
        let out = Tensor::vector(data);
        Ok(self.push(out, Op::Pick { x, idx: idx.to_vec() }, &[x]))
    }

    /// Scales each row to unit Euclidean norm.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = t.dims2();
        let mut data = t.data().to_vec();
        for i in 0..r {
            let row = &mut data[i * c..(i + 1) * c];
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 {
                return Err(Error::Domain {
                    op: "normalize_rows",
                    detail: format!("row {i} has zero norm"),
                });
            }
            row.iter_mut().for_each(|v| *v /= n);
        }
        let out = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push(out, Op::NormalizeRows(x), &[x]))
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        if self.value(out).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                self.shape(out)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; out.0 + 1];
        grads[out.0] = Some(vec![1.0]);
        let mut visited = 0;
        for id in (0..=out.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            visited += 1;
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(id, g)| {
                g.map(|d| Tensor::new(self.nodes[id].value.shape().to_vec(), d).expect("gradient shape mirrors value"))
            })
            .collect();
        Ok(Gradients { grads, visited })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k) = ta.dims2();
                let n = tb.cols();
                if wants(*a) {
                    // dA = G · Bᵀ
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = tb.row(p);
                            da[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    accumulate(grads, *a, &da);
                }
                if wants(*b) {
                    // dB = Aᵀ · G
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for (p, &av) in ta.row(i).iter().enumerate() {
                            if av == 0.0 {
                                continue;
                            }
                            for (o, &gv) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += av * gv;
                            }
                        }
                    }
                    accumulate(grads, *b, &db);
                }
            }
            Op::Transpose(a) => {
                let (m, n) = val(*a).dims2();
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        da[i * n + j] = g[j * m + i];
                    }
                }
                accumulate(grads, *a, &da);
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g);
                }
                if wants(*b) {
                    accumulate(grads, *b, g);
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g);
                }
                if wants(*b) {
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    accumulate(grads, *b, &neg);
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let d: Vec<f64> = g.iter().zip(val(*b).data()).map(|(x, y)| x * y).collect();
                    accumulate(grads, *a, &d);
                }
                if wants(*b) {
                    let d: Vec<f64> = g.iter().zip(val(*a).data()).map(|(x, y)| x * y).collect();
                    accumulate(grads, *b, &d);
                }
            }
            Op::AddRow(x, bias) => {
                if wants(*x) {
                    accumulate(grads, *x, g);
                }
                if wants(*bias) {
                    let c = val(*bias).len();
                    let mut db = vec![0.0; c];
                    for chunk in g.chunks(c) {
                        for (o, &v) in db.iter_mut().zip(chunk) {
                            *o += v;
                        }
                    }
                    accumulate(grads, *bias, &db);
                }
            }
            Op::Scale(x, c) => {
                let d: Vec<f64> = g.iter().map(|v| v * c).collect();
                accumulate(grads, *x, &d);
            }
            Op::AddConst(x) => accumulate(grads, *x, g),
            Op::Unary(x, f) => {
                let d: Vec<f64> = g
                    .iter()
                    .zip(val(*x).data())
                    .zip(node.value.data())
                    .map(|((gv, &xv), &yv)| gv * f.derivative(xv, yv))
                    .collect();
                accumulate(grads, *x, &d);
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let c = y.cols();
                let mut d = vec![0.0; g.len()];
                for ((drow, grow), yrow) in d.chunks_mut(c).zip(g.chunks(c)).zip(y.data().chunks(c)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for ((o, &gv), &yv) in drow.iter_mut().zip(grow).zip(yrow) {
                        *o = yv * (gv - dot);
                    }
                }
                accumulate(grads, *x, &d);
            }
            Op::LogSoftmaxRows(x) => {
                let y = &node.value;
                let c = y.cols();
                let mut d = vec![0.0; g.len()];
                for ((drow, grow), yrow) in d.chunks_mut(c).zip(g.chunks(c)).zip(y.data().chunks(c)) {
                    let gsum: f64 = grow.iter().sum();
                    for ((o, &gv), &yv) in drow.iter_mut().zip(grow).zip(yrow) {
                        *o = gv - yv.exp() * gsum;
                    }
                }
                accumulate(grads, *x, &d);
            }
            Op::LayerNorm(x, eps) => {
                let tx = val(*x);
                let y = &node.value;
                let c = y.cols();
                let mut d = vec![0.0; g.len()];
                for (i, drow) in d.chunks_mut(c).enumerate() {
                    let xrow = tx.row(i);
                    let yrow = y.row(i);
                    let grow = &g[i * c..(i + 1) * c];
                    let mean = xrow.iter().sum::<f64>() / c as f64;
                    let var = xrow.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                    let inv = 1.0 / (var + eps).sqrt();
                    let gmean = grow.iter().sum::<f64>() / c as f64;
                    let gy = grow.iter().zip(yrow).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                    for ((o, &gv), &yv) in drow.iter_mut().zip(grow).zip(yrow) {
                        *o = inv * (gv - gmean - yv * gy);
                    }
                }
                accumulate(grads, *x, &d);
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = node.value.dims2();
                let mut offset = 0;
                for &p in parts {
                    let c = val(p).cols();
                    if wants(p) {
                        let mut d = Vec::with_capacity(rows * c);
                        for i in 0..rows {
                            d.extend_from_slice(&g[i * total + offset..i * total + offset + c]);
                        }
                        accumulate(grads, p, &d);
                    }
                    offset += c;
                }
            }
            Op::StackRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = val(p).len();
                    if wants(p) {
                        accumulate(grads, p, &g[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            Op::SliceCols { x, start, len } => {
                let (r, c) = val(*x).dims2();
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    d[i * c + start..i * c + start + len].copy_from_slice(&g[i * len..(i + 1) * len]);
                }
                accumulate(grads, *x, &d);
            }
            Op::SliceRows { x, start, len } => {
                let c = val(*x).cols();
                let dst = grads[x.0].get_or_insert_with(|| vec![0.0; val(*x).len()]);
                for (o, &v) in dst[start * c..(start + len) * c].iter_mut().zip(g) {
                    *o += v;
                }
            }
            Op::Gather { table, ids } => {
                let t = val(*table);
                let d = t.cols();
                let dst = grads[table.0].get_or_insert_with(|| vec![0.0; t.len()]);
                for (row, &id) in ids.iter().enumerate() {
                    for (o, &v) in dst[id * d..(id + 1) * d].iter_mut().zip(&g[row * d..(row + 1) * d]) {
                        *o += v;
                    }
                }
            }
            Op::MeanRows(x) => {
                let (r, c) = val(*x).dims2();
                let mut d = vec![0.0; r * c];
                for chunk in d.chunks_mut(c) {
                    for (o, &v) in chunk.iter_mut().zip(g) {
                        *o = v / r as f64;
                    }
                }
                accumulate(grads, *x, &d);
            }
            Op::SumRows(x) => {
                let (r, c) = val(*x).dims2();
                let mut d = vec![0.0; r * c];
                for (i, chunk) in d.chunks_mut(c).enumerate() {
                    chunk.iter_mut().for_each(|o| *o = g[i]);
                }
                accumulate(grads, *x, &d);
            }
            Op::Sum(x) => {
                let d = vec![g[0]; val(*x).len()];
                accumulate(grads, *x, &d);
            }
            Op::PairwiseDistance(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (p, dim) = ta.dims2();
                let q = tb.rows();
                let mut da = vec![0.0; p * dim];
                let mut db = vec![0.0; q * dim];
                for i in 0..p {
                    for j in 0..q {
                        let dist = node.value.data()[i * q + j];
                        let gv = g[i * q + j];
                        if dist == 0.0 || gv == 0.0 {
                            continue;
                        }
                        let s = gv / dist;
                        for k in 0..dim {
                            let diff = ta.data()[i * dim + k] - tb.data()[j * dim + k];
                            da[i * dim + k] += s * diff;
                            db[j * dim + k] -= s * diff;
                        }
                    }
                }
                if wants(*a) {
                    accumulate(grads, *a, &da);
                }
                if wants(*b) {
                    accumulate(grads, *b, &db);
                }
            }
            Op::Pick { x, idx } => {
                let dst = grads[x.0].get_or_insert_with(|| vec![0.0; val(*x).len()]);
                for (&i, &v) in idx.iter().zip(g) {
                    dst[i] += v;
                }
            }
            Op::NormalizeRows(x) => {
                let tx = val(*x);
                let y = &node.value;
                let c = y.cols();
                let mut d = vec![0.0; g.len()];
                for (i, drow) in d.chunks_mut(c).enumerate() {
                    let norm = tx.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                    let yrow = y.row(i);
                    let grow = &g[i * c..(i + 1) * c];
                    let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for ((o, &gv), &yv) in drow.iter_mut().zip(grow).zip(yrow) {
                        *o = (gv - yv * dot) / norm;
                    }
                }
                accumulate(grads, *x, &d);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, d: &[f64]) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (o, &x) in existing.iter_mut().zip(d) {
                *o += x;
            }
        }
        slot @ None => *slot = Some(d.to_vec()),
    }
}
