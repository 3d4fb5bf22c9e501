//! Reverse-mode differentiation over matrix-valued operations.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles during a
//! forward pass. [`Tape::backward`] then walks the record in reverse,
//! accumulating the adjoint of each node, and returns the gradients of all
//! parameter leaves. Parameters used several times (a recurrent cell unrolled
//! over an episode, a layer shared by all agents) share a single leaf, so
//! their gradient is the sum over uses.

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    OneMinus(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Elu(Var),
    Abs(Var),
    SliceCols { src: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    RowBmm { x: Var, w: Var, k: usize },
    Gather { src: Var, idx: Vec<usize> },
    RepeatRows { src: Var, times: usize },
    SoftmaxRows(Var),
    MaskedMse { pred: Var, target: Vec<f64>, mask: Vec<f64>, denom: f64 },
    WeightedNll { logits: Var, labels: Vec<usize>, weights: Vec<f64>, probs: Tensor },
    Sum(Var),
    Mean(Var),
    GruGates { gi: Var, gh: Var, h: Var },
}

impl Op {
    fn any_input(&self, f: impl Fn(Var) -> bool) -> bool {
        match self {
            Op::Leaf => false,
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => f(*a) || f(*b),
            Op::Scale(a, _)
            | Op::OneMinus(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Elu(a)
            | Op::Abs(a)
            | Op::Reshape(a)
            | Op::SoftmaxRows(a)
            | Op::Sum(a)
            | Op::Mean(a) => f(*a),
            Op::SliceCols { src, .. } | Op::Gather { src, .. } | Op::RepeatRows { src, .. } => f(*src),
            Op::ConcatCols(parts) | Op::ConcatRows(parts) => parts.iter().any(|&p| f(p)),
            Op::RowBmm { x, w, .. } => f(*x) || f(*w),
            Op::MaskedMse { pred, .. } => f(*pred),
            Op::WeightedNll { logits, .. } => f(*logits),
            Op::GruGates { gi, gh, h } => f(*gi) || f(*gh) || f(*h),
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    /// Whether any parameter leaf feeds this node.
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Gradients of a scalar with respect to every node of a tape.
#[derive(Debug)]
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient with respect to `var`, or `None` if the loss does not depend on it.
    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        self.nodes[var.0].as_ref()
    }

    /// Dense per-parameter gradients aligned with `store`; unused parameters get zeros.
    pub fn for_store(&self, store: &ParamStore) -> ParamGrads {
        let mut out: Vec<Tensor> = store
            .iter()
            .map(|(_, t)| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        for &(id, var) in &self.params {
            if let Some(g) = &self.nodes[var.0] {
                out[id.index()] = g.clone();
            }
        }
        ParamGrads(out)
    }
}

/// One gradient tensor per parameter of a store, in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads(pub Vec<Tensor>);

impl ParamGrads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        ParamGrads(store.iter().map(|(_, t)| Tensor::zeros(t.rows(), t.cols())).collect())
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.0[id.index()]
    }

    pub fn global_norm(&self) -> f64 {
        self.0.iter().map(Tensor::squared_norm).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().all(Tensor::all_finite)
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_assign(b);
        }
    }
}

fn check_same(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{op}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
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

    fn push(&mut self, value: Tensor, op: Op, name: &str) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        let needs_grad = op.any_input(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, "constant")
    }

    /// Leaf bound to a parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node { value: store.get(id).clone(), op: Op::Leaf, needs_grad: true });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("add", self.value(a), self.value(b))?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b), "add")
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(Error::Shape(format!("add_row: {:?} + {:?}", av.shape(), rv.shape())));
        }
        let mut out = av.clone();
        let c = out.cols();
        for chunk in out.data_mut().chunks_mut(c) {
            for (o, b) in chunk.iter_mut().zip(rv.data()) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, row), "add_row")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("sub", self.value(a), self.value(b))?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x - y).collect();
        let out = Tensor::from_vec(av.rows(), av.cols(), data)?;
        self.push(out, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("mul", self.value(a), self.value(b))?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_vec(av.rows(), av.cols(), data)?;
        self.push(out, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s), "scale")
    }

    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| 1.0 - x);
        self.push(out, Op::OneMinus(a), "one_minus")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a), "sigmoid")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a), "tanh")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a), "relu")
    }

    /// Exponential linear unit with unit scale.
    pub fn elu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { x.exp_m1() });
        self.push(out, Op::Elu(a), "elu")
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::abs);
        self.push(out, Op::Abs(a), "abs")
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        if start + len > av.cols() {
            return Err(Error::Shape(format!(
                "slice_cols [{start}, {}) of {:?}",
                start + len,
                av.shape()
            )));
        }
        let mut out = Tensor::zeros(av.rows(), len);
        for r in 0..av.rows() {
            out.row_mut(r).copy_from_slice(&av.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols { src: a, start }, "slice_cols")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::Shape("concat_cols: row counts differ".into()));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let pv = self.value(p);
                out.row_mut(r)[off..off + pv.cols()].copy_from_slice(pv.row(r));
                off += pv.cols();
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()), "concat_cols")
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        if parts.iter().any(|&p| self.value(p).cols() != cols) {
            return Err(Error::Shape("concat_rows: column counts differ".into()));
        }
        let rows: usize = parts.iter().map(|&p| self.value(p).rows()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::from_vec(rows, cols, data)?;
        self.push(out, Op::ConcatRows(parts.to_vec()), "concat_rows")
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let out = Tensor::from_vec(rows, cols, self.value(a).data().to_vec())?;
        self.push(out, Op::Reshape(a), "reshape")
    }

    /// Per-row matrix product: row `r` of `x` (`1 x n`) times the `n x k`
    /// matrix stored row-major in row `r` of `w` (`1 x n*k`).
    pub fn row_bmm(&mut self, x: Var, w: Var, k: usize) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let n = xv.cols();
        if wv.rows() != xv.rows() || wv.cols() != n * k {
            return Err(Error::Shape(format!(
                "row_bmm: x {:?}, w {:?}, k {k}",
                xv.shape(),
                wv.shape()
            )));
        }
        let mut out = Tensor::zeros(xv.rows(), k);
        for r in 0..xv.rows() {
            let xr = xv.row(r);
            let wr = wv.row(r);
            let or = out.row_mut(r);
            for (i, &xi) in xr.iter().enumerate() {
                for (o, &wij) in or.iter_mut().zip(&wr[i * k..(i + 1) * k]) {
                    *o += xi * wij;
                }
            }
        }
        self.push(out, Op::RowBmm { x, w, k }, "row_bmm")
    }

    /// Picks column `idx[r]` from each row, giving an `m x 1` column.
    pub fn gather(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let av = self.value(a);
        if idx.len() != av.rows() || idx.iter().any(|&i| i >= av.cols()) {
            return Err(Error::Shape(format!("gather: {} indices into {:?}", idx.len(), av.shape())));
        }
        let data = idx.iter().enumerate().map(|(r, &c)| av.get(r, c)).collect();
        let out = Tensor::from_vec(av.rows(), 1, data)?;
        self.push(out, Op::Gather { src: a, idx: idx.to_vec() }, "gather")
    }

    /// Repeats each row `times` times consecutively.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Result<Var> {
        let av = self.value(a);
        let mut data = Vec::with_capacity(av.len() * times);
        for r in 0..av.rows() {
            for _ in 0..times {
                data.extend_from_slice(av.row(r));
            }
        }
        let out = Tensor::from_vec(av.rows() * times, av.cols(), data)?;
        self.push(out, Op::RepeatRows { src: a, times }, "repeat_rows")
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let mut out = Tensor::zeros(av.rows(), av.cols());
        for r in 0..av.rows() {
            softmax_row(av.row(r), out.row_mut(r));
        }
        self.push(out, Op::SoftmaxRows(a), "softmax_rows")
    }

    /// `sum(mask * (pred - target)^2) / sum(mask)` for an `m x 1` prediction.
    /// An all-zero mask yields zero.
    pub fn masked_mse(&mut self, pred: Var, target: &[f64], mask: &[f64]) -> Result<Var> {
        let pv = self.value(pred);
        if pv.len() != target.len() || pv.len() != mask.len() {
            return Err(Error::Shape(format!(
                "masked_mse: pred {:?}, {} targets, {} mask",
                pv.shape(),
                target.len(),
                mask.len()
            )));
        }
        let denom: f64 = mask.iter().sum();
        let denom = if denom > 0.0 { denom } else { 1.0 };
        let total: f64 = pv
            .data()
            .iter()
            .zip(target)
            .zip(mask)
            .map(|((p, t), m)| m * (p - t) * (p - t))
            .sum();
        let op = Op::MaskedMse { pred, target: target.to_vec(), mask: mask.to_vec(), denom };
        self.push(Tensor::scalar(total / denom), op, "masked_mse")
    }

    /// `sum_r weights[r] * -log softmax(logits[r])[labels[r]]` divided by the row count.
    pub fn weighted_nll(&mut self, logits: Var, labels: &[usize], weights: &[f64]) -> Result<Var> {
        let lv = self.value(logits);
        let m = lv.rows();
        if labels.len() != m || weights.len() != m || labels.iter().any(|&l| l >= lv.cols()) {
            return Err(Error::Shape(format!("weighted_nll: logits {:?}", lv.shape())));
        }
        let mut probs = Tensor::zeros(m, lv.cols());
        let mut total = 0.0;
        for r in 0..m {
            softmax_row(lv.row(r), probs.row_mut(r));
            let row = lv.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += weights[r] * (lse - row[labels[r]]);
        }
        let value = Tensor::scalar(if m > 0 { total / m as f64 } else { 0.0 });
        let op = Op::WeightedNll { logits, labels: labels.to_vec(), weights: weights.to_vec(), probs };
        self.push(value, op, "weighted_nll")
    }

    /// Fused gated-recurrent update from the input and hidden projections
    /// `gi`, `gh` (`B x 3H`, gate order r, z, n) and the previous state `h`.
    pub fn gru_gates(&mut self, gi: Var, gh: Var, h: Var) -> Result<Var> {
        let (giv, ghv, hv) = (self.value(gi), self.value(gh), self.value(h));
        let hs = hv.cols();
        if giv.shape() != [hv.rows(), 3 * hs] || ghv.shape() != giv.shape() {
            return Err(Error::Shape(format!("gru gates {:?} {:?} {:?}", giv.shape(), ghv.shape(), hv.shape())));
        }
        let mut out = Tensor::zeros(hv.rows(), hs);
        for r in 0..hv.rows() {
            let (a, b, hr) = (giv.row(r), ghv.row(r), hv.row(r));
            for (j, o) in out.row_mut(r).iter_mut().enumerate() {
                let rg = sigmoid(a[j] + b[j]);
                let zg = sigmoid(a[hs + j] + b[hs + j]);
                let n = (a[2 * hs + j] + rg * b[2 * hs + j]).tanh();
                *o = (1.0 - zg) * n + zg * hr[j];
            }
        }
        self.push(out, Op::GruGates { gi, gh, h }, "gru_gates")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let out = Tensor::scalar(av.sum() / av.len().max(1) as f64);
        self.push(out, Op::Mean(a), "mean")
    }

    /// Reverse sweep from a `1 x 1` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != [1, 1] {
            return Err(Error::Shape(format!("backward from non-scalar {:?}", lv.shape())));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let out = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.nodes[a.0].needs_grad {
                        let mut ga = Tensor::zeros(av.rows(), av.cols());
                        gemm(&g, false, bv, true, &mut ga, 0.0);
                        acc(&mut grads, *a, ga);
                    }
                    if self.nodes[b.0].needs_grad {
                        let mut gb = Tensor::zeros(bv.rows(), bv.cols());
                        gemm(av, true, &g, false, &mut gb, 0.0);
                        acc(&mut grads, *b, gb);
                    }
                }
                Op::GruGates { gi, gh, h } => {
                    let (giv, ghv, hv) = (self.value(*gi), self.value(*gh), self.value(*h));
                    let hs = hv.cols();
                    let mut dgi = Tensor::zeros(giv.rows(), giv.cols());
                    let mut dgh = Tensor::zeros(ghv.rows(), ghv.cols());
                    let mut dh = Tensor::zeros(hv.rows(), hs);
                    for r in 0..hv.rows() {
                        let (a, b, hr, gr) = (giv.row(r), ghv.row(r), hv.row(r), g.row(r));
                        let (dgi_r, dgh_r, dh_r) = (dgi.row_mut(r), dgh.row_mut(r), dh.row_mut(r));
                        for j in 0..hs {
                            let rg = sigmoid(a[j] + b[j]);
                            let zg = sigmoid(a[hs + j] + b[hs + j]);
                            let n = (a[2 * hs + j] + rg * b[2 * hs + j]).tanh();
                            let d = gr[j];
                            dh_r[j] = d * zg;
                            let dn = d * (1.0 - zg) * (1.0 - n * n);
                            let dz = d * (hr[j] - n) * zg * (1.0 - zg);
                            let dr = dn * b[2 * hs + j] * rg * (1.0 - rg);
                            dgi_r[j] = dr;
                            dgh_r[j] = dr;
                            dgi_r[hs + j] = dz;
                            dgh_r[hs + j] = dz;
                            dgi_r[2 * hs + j] = dn;
                            dgh_r[2 * hs + j] = dn * rg;
                        }
                    }
                    acc(&mut grads, *gi, dgi);
                    acc(&mut grads, *gh, dgh);
                    acc(&mut grads, *h, dh);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::AddRow(a, row) => {
                    let mut gr = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, v) in gr.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *a, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.map(|x| -x));
                    acc(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = zip_map(&g, bv, |gi, bi| gi * bi);
                    let gb = zip_map(&g, av, |gi, ai| gi * ai);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.map(|x| x * s)),
                Op::OneMinus(a) => acc(&mut grads, *a, g.map(|x| -x)),
                Op::Sigmoid(a) => acc(&mut grads, *a, zip_map(&g, out, |gi, y| gi * y * (1.0 - y))),
                Op::Tanh(a) => acc(&mut grads, *a, zip_map(&g, out, |gi, y| gi * (1.0 - y * y))),
                Op::Relu(a) => {
                    let ga = zip_map(&g, self.value(*a), |gi, x| if x > 0.0 { gi } else { 0.0 });
                    acc(&mut grads, *a, ga);
                }
                Op::Elu(a) => {
                    let ga = zip_map(&g, self.value(*a), |gi, x| if x > 0.0 { gi } else { gi * x.exp() });
                    acc(&mut grads, *a, ga);
                }
                Op::Abs(a) => {
                    let ga = zip_map(&g, self.value(*a), |gi, x| gi * x.signum() * (x != 0.0) as u8 as f64);
                    acc(&mut grads, *a, ga);
                }
                Op::SliceCols { src, start } => {
                    let sv = self.value(*src);
                    let mut gs = Tensor::zeros(sv.rows(), sv.cols());
                    for r in 0..g.rows() {
                        gs.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    acc(&mut grads, *src, gs);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let c = self.value(p).cols();
                        let mut gp = Tensor::zeros(g.rows(), c);
                        for r in 0..g.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[off..off + c]);
                        }
                        off += c;
                        acc(&mut grads, p, gp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        let pv = self.value(p);
                        let gp = Tensor::from_vec(pv.rows(), pv.cols(), g.data()[off..off + n].to_vec())?;
                        off += n;
                        acc(&mut grads, p, gp);
                    }
                }
                Op::Reshape(a) => {
                    let av = self.value(*a);
                    acc(&mut grads, *a, Tensor::from_vec(av.rows(), av.cols(), g.data().to_vec())?);
                }
                Op::RowBmm { x, w, k } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let k = *k;
                    let mut gx = Tensor::zeros(xv.rows(), xv.cols());
                    let mut gw = Tensor::zeros(wv.rows(), wv.cols());
                    for r in 0..xv.rows() {
                        let gr = g.row(r);
                        let xr = xv.row(r);
                        let wr = wv.row(r);
                        for i in 0..xv.cols() {
                            let wrow = &wr[i * k..(i + 1) * k];
                            gx.row_mut(r)[i] = gr.iter().zip(wrow).map(|(a, b)| a * b).sum();
                            let gwrow = &mut gw.row_mut(r)[i * k..(i + 1) * k];
                            for (o, gj) in gwrow.iter_mut().zip(gr) {
                                *o = xr[i] * gj;
                            }
                        }
                    }
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *w, gw);
                }
                Op::Gather { src, idx } => {
                    let sv = self.value(*src);
                    let mut gs = Tensor::zeros(sv.rows(), sv.cols());
                    for (r, &c) in idx.iter().enumerate() {
                        gs.set(r, c, g.data()[r]);
                    }
                    acc(&mut grads, *src, gs);
                }
                Op::RepeatRows { src, times } => {
                    let sv = self.value(*src);
                    let mut gs = Tensor::zeros(sv.rows(), sv.cols());
                    for r in 0..sv.rows() {
                        for t in 0..*times {
                            let gr = g.row(r * times + t);
                            for (o, v) in gs.row_mut(r).iter_mut().zip(gr) {
                                *o += v;
                            }
                        }
                    }
                    acc(&mut grads, *src, gs);
                }
                Op::SoftmaxRows(a) => {
                    let mut ga = Tensor::zeros(out.rows(), out.cols());
                    for r in 0..out.rows() {
                        let y = out.row(r);
                        let gr = g.row(r);
                        let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((o, yi), gi) in ga.row_mut(r).iter_mut().zip(y).zip(gr) {
                            *o = yi * (gi - dot);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::MaskedMse { pred, target, mask, denom } => {
                    let pv = self.value(*pred);
                    let scale = g.item() * 2.0 / denom;
                    let data = pv
                        .data()
                        .iter()
                        .zip(target)
                        .zip(mask)
                        .map(|((p, t), m)| scale * m * (p - t))
                        .collect();
                    acc(&mut grads, *pred, Tensor::from_vec(pv.rows(), pv.cols(), data)?);
                }
                Op::WeightedNll { logits, labels, weights, probs } => {
                    let m = probs.rows().max(1) as f64;
                    let mut gl = probs.clone();
                    for r in 0..probs.rows() {
                        let w = weights[r] * g.item() / m;
                        let row = gl.row_mut(r);
                        row[labels[r]] -= 1.0;
                        for v in row.iter_mut() {
                            *v *= w;
                        }
                    }
                    acc(&mut grads, *logits, gl);
                }
                Op::Sum(a) => {
                    let av = self.value(*a);
                    acc(&mut grads, *a, Tensor::filled(av.rows(), av.cols(), g.item()));
                }
                Op::Mean(a) => {
                    let av = self.value(*a);
                    let v = g.item() / av.len().max(1) as f64;
                    acc(&mut grads, *a, Tensor::filled(av.rows(), av.cols(), v));
                }
            }
            grads[i] = Some(g);
        }

        if grads.iter().flatten().any(|g| !g.all_finite()) {
            return Err(Error::NonFinite("backward".into()));
        }
        let mut params: Vec<(ParamId, Var)> = self.params.iter().map(|(&p, &v)| (p, v)).collect();
        params.sort_by_key(|(p, _)| p.index());
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { nodes: grads, params })
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("same shape")
}
