use std::ops::Range;
use std::sync::Arc;

use rand::Rng;

use super::{DiffError, Tensor};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How [`Graph::grad`] records its own computation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradMode {
    /// Gradients come back as constants; nothing flows through them.
    #[serde(rename = "first")]
    FirstOrder,
    /// Gradients are graph nodes and can be differentiated again.
    #[default]
    #[serde(rename = "second")]
    SecondOrder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    /// `x * s` where `s` is `1 x 1`.
    MulScalar(Var, Var),
    Transpose(Var),
    /// Elementwise product with a fixed mask (relu, dropout).
    Mask(Var, Arc<Tensor>),
    /// `1 x n` repeated to `rows x n`.
    BroadcastRows(Var),
    /// `r x 1` repeated to `r x cols`.
    BroadcastCols(Var),
    SumRows(Var),
    SumCols(Var),
    SumAll(Var),
    Softmax(Var),
    Sigmoid(Var),
    SoftmaxCrossEntropy(Var, Arc<Vec<usize>>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, Range<usize>),
    SliceCols(Var, Range<usize>),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | MulScalar(a, b) => vec![*a, *b],
            Scale(a, _)
            | AddConst(a)
            | Transpose(a)
            | Mask(a, _)
            | BroadcastRows(a)
            | BroadcastCols(a)
            | SumRows(a)
            | SumCols(a)
            | SumAll(a)
            | Softmax(a)
            | Sigmoid(a)
            | SoftmaxCrossEntropy(a, _)
            | SliceRows(a, _)
            | SliceCols(a, _) => vec![*a],
            ConcatRows(vs) | ConcatCols(vs) => vs.clone(),
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Append-only record of a differentiable computation.
///
/// Inputs always precede the nodes that consume them, so append order is a
/// topological order and the backward sweep simply walks it in reverse.
/// A graph holds no shared state and can live on any thread.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> DiffError {
    DiffError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Input node ids of `v`, in operand order.
    pub fn inputs(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.inputs()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf: a parameter, an input or a constant.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let value = self.value(a).zip_with(self.value(b), "add", |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let value = self.value(a).zip_with(self.value(b), "sub", |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), value))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let value = self.value(a).zip_with(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), value))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x * c);
        self.push(Op::Scale(a, c), value)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x + c);
        self.push(Op::AddConst(a), value)
    }

    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var, DiffError> {
        let sv = self.value(s);
        let Some(c) = sv.item() else {
            return Err(mismatch("mul_scalar", self.value(x), sv));
        };
        let value = self.value(x).map(|v| v * c);
        Ok(self.push(Op::MulScalar(x, s), value))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(Op::Transpose(a), value)
    }

    fn mask(&mut self, a: Var, mask: Arc<Tensor>) -> Result<Var, DiffError> {
        let value = self.value(a).zip_with(&mask, "mask", |x, m| x * m)?;
        Ok(self.push(Op::Mask(a, mask), value))
    }

    /// `max(0, x)`; the subgradient at 0 is taken to be 0.
    pub fn relu(&mut self, x: Var) -> Var {
        let mask = self.value(x).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
        self.mask(x, Arc::new(mask)).expect("mask built from input")
    }

    /// Inverted dropout: survivors are scaled by `1 / (1 - p)` so that
    /// [`Mode::Eval`] is exactly the identity.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        p: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var, DiffError> {
        if !(0.0..1.0).contains(&p) {
            return Err(DiffError::InvalidProbability(p));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask = self
            .value(x)
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep });
        self.mask(x, Arc::new(mask))
    }

    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var, DiffError> {
        let av = self.value(a);
        if av.rows() != 1 {
            return Err(mismatch("broadcast_rows", av, av));
        }
        let mut data = Vec::with_capacity(rows * av.len());
        for _ in 0..rows {
            data.extend_from_slice(av.data());
        }
        let value = Tensor::matrix(rows, av.cols(), data)?;
        Ok(self.push(Op::BroadcastRows(a), value))
    }

    pub fn broadcast_cols(&mut self, a: Var, cols: usize) -> Result<Var, DiffError> {
        let av = self.value(a);
        if av.cols() != 1 {
            return Err(mismatch("broadcast_cols", av, av));
        }
        let data = av
            .data()
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, cols))
            .collect();
        let value = Tensor::matrix(av.rows(), cols, data)?;
        Ok(self.push(Op::BroadcastCols(a), value))
    }

    /// Column sums: `r x c -> 1 x c`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (r, c) = av.dims();
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, v) in out.iter_mut().zip(av.row_slice(i)) {
                *o += v;
            }
        }
        self.push(Op::SumRows(a), Tensor::row(out))
    }

    /// Row sums: `r x c -> r x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let out = (0..av.rows()).map(|i| av.row_slice(i).iter().sum()).collect();
        self.push(Op::SumCols(a), Tensor::column(out))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(Op::SumAll(a), value)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        self.push(Op::Softmax(a), value)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), value)
    }

    /// Mean over rows of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
    ) -> Result<Var, DiffError> {
        let lv = self.value(logits);
        let (b, k) = lv.dims();
        if labels.len() != b {
            return Err(DiffError::ShapeMismatch {
                op: "softmax_cross_entropy",
                lhs: vec![b, k],
                rhs: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(DiffError::LabelOutOfRange { label: bad, classes: k });
        }
        let mut total = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let row = lv.row_slice(i);
            total += log_sum_exp(row) - row[label];
        }
        let value = Tensor::scalar(total / b as f64);
        Ok(self.push(
            Op::SoftmaxCrossEntropy(logits, Arc::new(labels.to_vec())),
            value,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != cols {
                return Err(mismatch("concat_rows", self.value(parts[0]), pv));
            }
            rows += pv.rows();
            data.extend_from_slice(pv.data());
        }
        let value = Tensor::matrix(rows, cols, data)?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), value))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.rows() != rows {
                return Err(mismatch("concat_cols", self.value(parts[0]), pv));
            }
            cols += pv.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        let value = Tensor::matrix(rows, cols, data)?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), value))
    }

    pub fn slice_rows(&mut self, a: Var, range: Range<usize>) -> Result<Var, DiffError> {
        let av = self.value(a);
        let (r, c) = av.dims();
        if range.start > range.end || range.end > r {
            return Err(mismatch("slice_rows", av, av));
        }
        let value = Tensor::matrix(
            range.len(),
            c,
            av.data()[range.start * c..range.end * c].to_vec(),
        )?;
        Ok(self.push(Op::SliceRows(a, range), value))
    }

    pub fn slice_cols(&mut self, a: Var, range: Range<usize>) -> Result<Var, DiffError> {
        let av = self.value(a);
        let (r, c) = av.dims();
        if range.start > range.end || range.end > c {
            return Err(mismatch("slice_cols", av, av));
        }
        let mut data = Vec::with_capacity(r * range.len());
        for i in 0..r {
            data.extend_from_slice(&av.row_slice(i)[range.clone()]);
        }
        let value = Tensor::matrix(r, range.len(), data)?;
        Ok(self.push(Op::SliceCols(a, range), value))
    }

    /// `x W + b` with `b` a `1 x out` row broadcast over the batch.
    pub fn affine(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var, DiffError> {
        let xw = self.matmul(x, weight)?;
        let rows = self.value(xw).rows();
        let b = self.broadcast_rows(bias, rows)?;
        self.add(xw, b)
    }

    /// Gradients of the scalar `loss` with respect to each of `wrt`.
    ///
    /// Targets that `loss` does not depend on get a zero gradient of their
    /// own shape. With [`GradMode::SecondOrder`] the returned nodes remain
    /// connected to the graph, so a later call can differentiate through
    /// them. With [`GradMode::FirstOrder`] the backward sweep is discarded
    /// and each gradient is recorded as a fresh leaf.
    pub fn grad(&mut self, loss: Var, wrt: &[Var], mode: GradMode) -> Result<Vec<Var>, DiffError> {
        let loss_value = self.value(loss);
        if loss_value.len() != 1 {
            return Err(DiffError::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mark = self.nodes.len();
        let end = loss.0 + 1;

        let mut reaches = vec![false; end];
        for w in wrt {
            if w.0 < end {
                reaches[w.0] = true;
            }
        }
        for i in 0..end {
            if !reaches[i] && self.nodes[i].op.inputs().iter().any(|v| reaches[v.0]) {
                reaches[i] = true;
            }
        }

        let mut grads: Vec<Option<Var>> = vec![None; end];
        if reaches[loss.0] {
            let (r, c) = self.value(loss).dims();
            grads[loss.0] = Some(self.leaf(Tensor::full(r, c, 1.0)));
        }
        for i in (0..end).rev() {
            let Some(g) = grads[i] else { continue };
            let op = self.nodes[i].op.clone();
            for (input, contribution) in self.vjp(Var(i), &op, g, &reaches)? {
                grads[input.0] = Some(match grads[input.0] {
                    None => contribution,
                    Some(acc) => self.add(acc, contribution)?,
                });
            }
        }

        let mut out = Vec::with_capacity(wrt.len());
        match mode {
            GradMode::SecondOrder => {
                for w in wrt {
                    let g = match grads.get(w.0).copied().flatten() {
                        Some(g) => g,
                        None => {
                            let (r, c) = self.value(*w).dims();
                            self.leaf(Tensor::zeros(r, c))
                        }
                    };
                    out.push(g);
                }
            }
            GradMode::FirstOrder => {
                let values: Vec<Tensor> = wrt
                    .iter()
                    .map(|w| match grads.get(w.0).copied().flatten() {
                        Some(g) => self.value(g).clone(),
                        None => {
                            let (r, c) = self.value(*w).dims();
                            Tensor::zeros(r, c)
                        }
                    })
                    .collect();
                self.nodes.truncate(mark);
                for v in values {
                    out.push(self.leaf(v));
                }
            }
        }
        Ok(out)
    }

    /// Vector-Jacobian products of one node, recorded as graph ops.
    fn vjp(
        &mut self,
        node: Var,
        op: &Op,
        g: Var,
        reaches: &[bool],
    ) -> Result<Vec<(Var, Var)>, DiffError> {
        let live = |v: &Var| reaches[v.0];
        let mut out = Vec::with_capacity(2);
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if live(a) {
                    let bt = self.transpose(*b);
                    out.push((*a, self.matmul(g, bt)?));
                }
                if live(b) {
                    let at = self.transpose(*a);
                    out.push((*b, self.matmul(at, g)?));
                }
            }
            Op::Add(a, b) => {
                if live(a) {
                    out.push((*a, g));
                }
                if live(b) {
                    out.push((*b, g));
                }
            }
            Op::Sub(a, b) => {
                if live(a) {
                    out.push((*a, g));
                }
                if live(b) {
                    out.push((*b, self.scale(g, -1.0)));
                }
            }
            Op::Mul(a, b) => {
                if live(a) {
                    out.push((*a, self.mul(g, *b)?));
                }
                if live(b) {
                    out.push((*b, self.mul(g, *a)?));
                }
            }
            Op::Scale(a, c) => out.push((*a, self.scale(g, *c))),
            Op::AddConst(a) => out.push((*a, g)),
            Op::MulScalar(x, s) => {
                if live(x) {
                    out.push((*x, self.mul_scalar(g, *s)?));
                }
                if live(s) {
                    let gx = self.mul(g, *x)?;
                    out.push((*s, self.sum_all(gx)));
                }
            }
            Op::Transpose(a) => out.push((*a, self.transpose(g))),
            Op::Mask(a, m) => out.push((*a, self.mask(g, m.clone())?)),
            Op::BroadcastRows(a) => out.push((*a, self.sum_rows(g))),
            Op::BroadcastCols(a) => out.push((*a, self.sum_cols(g))),
            Op::SumRows(a) => {
                let rows = self.value(*a).rows();
                out.push((*a, self.broadcast_rows(g, rows)?));
            }
            Op::SumCols(a) => {
                let cols = self.value(*a).cols();
                out.push((*a, self.broadcast_cols(g, cols)?));
            }
            Op::SumAll(a) => {
                let (r, c) = self.value(*a).dims();
                let col = self.broadcast_rows(g, r)?;
                out.push((*a, self.broadcast_cols(col, c)?));
            }
            Op::Softmax(a) => {
                // s * (g - rowsum(g * s))
                let k = self.value(*a).cols();
                let gs = self.mul(g, node)?;
                let dot = self.sum_cols(gs);
                let dot = self.broadcast_cols(dot, k)?;
                let centered = self.sub(g, dot)?;
                out.push((*a, self.mul(node, centered)?));
            }
            Op::Sigmoid(a) => {
                let neg = self.scale(node, -1.0);
                let one_minus = self.add_const(neg, 1.0);
                let slope = self.mul(node, one_minus)?;
                out.push((*a, self.mul(g, slope)?));
            }
            Op::SoftmaxCrossEntropy(logits, labels) => {
                let (b, k) = self.value(*logits).dims();
                let mut onehot = Tensor::zeros(b, k);
                for (i, &l) in labels.iter().enumerate() {
                    onehot.data_mut()[i * k + l] = 1.0;
                }
                let onehot = self.leaf(onehot);
                let probs = self.softmax(*logits);
                let diff = self.sub(probs, onehot)?;
                let diff = self.scale(diff, 1.0 / b as f64);
                out.push((*logits, self.mul_scalar(diff, g)?));
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for p in parts {
                    let n = self.value(*p).rows();
                    if live(p) {
                        out.push((*p, self.slice_rows(g, start..start + n)?));
                    }
                    start += n;
                }
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let n = self.value(*p).cols();
                    if live(p) {
                        out.push((*p, self.slice_cols(g, start..start + n)?));
                    }
                    start += n;
                }
            }
            Op::SliceRows(a, range) => {
                let (r, c) = self.value(*a).dims();
                let mut parts = Vec::with_capacity(3);
                if range.start > 0 {
                    parts.push(self.leaf(Tensor::zeros(range.start, c)));
                }
                parts.push(g);
                if range.end < r {
                    parts.push(self.leaf(Tensor::zeros(r - range.end, c)));
                }
                out.push((*a, self.concat_rows(&parts)?));
            }
            Op::SliceCols(a, range) => {
                let (r, c) = self.value(*a).dims();
                let mut parts = Vec::with_capacity(3);
                if range.start > 0 {
                    parts.push(self.leaf(Tensor::zeros(r, range.start)));
                }
                parts.push(g);
                if range.end < c {
                    parts.push(self.leaf(Tensor::zeros(r, c - range.end)));
                }
                out.push((*a, self.concat_cols(&parts)?));
            }
        }
        Ok(out)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax_rows(t: &Tensor) -> Tensor {
    let (r, c) = t.dims();
    let mut data = Vec::with_capacity(r * c);
    for i in 0..r {
        let row = t.row_slice(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        data.extend(exps.into_iter().map(|e| e / z));
    }
    Tensor::matrix(r, c, data).expect("same shape as input")
}
