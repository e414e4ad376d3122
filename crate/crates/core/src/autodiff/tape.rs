use std::borrow::Cow;
use std::cell::{Ref, RefCell};

use super::tensor::{matmul_a_bt_acc, matmul_acc, matmul_at_b_acc, Tensor};
use super::AutodiffError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Softmax(Var),
    LogSoftmax(Var),
    Concat(Vec<Var>),
    StackRows(Vec<Var>),
    SliceCols(Var, usize),
    SelectRows(Var, Vec<usize>),
    Pick(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    SumLast(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Sqrt(..) => "sqrt",
            Op::Square(..) => "square",
            Op::Clamp(..) => "clamp",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::Concat(..) => "concat",
            Op::StackRows(..) => "stack_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::SelectRows(..) => "select_rows",
            Op::Pick(..) => "pick",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SumLast(..) => "sum_last",
        }
    }
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
}

/// Records primitive applications in evaluation order for reverse-mode
/// differentiation. Parameters are borrowed, so binding them costs nothing.
/// Not thread-safe; build one tape per thread.
#[derive(Default)]
pub struct Tape<'p> {
    nodes: RefCell<Vec<Node<'p>>>,
}

/// Result of [`Tape::backward`]; `None` means the value did not influence the output.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub(crate) fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// Rows of `a` paired with the matching broadcast block of `b`.
fn broadcast_ok(a: &Tensor, b: &Tensor) -> bool {
    a.shape().ends_with(b.shape())
}

fn reduce_blocks(g: &[f64], nb: usize) -> Vec<f64> {
    let mut out = vec![0.0; nb];
    for chunk in g.chunks(nb) {
        for (o, v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    out
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], data: Vec<f64>) {
    let t = Tensor::with_data(shape.to_vec(), data);
    match &mut grads[v.0] {
        Some(g) => g.add_assign(&t),
        slot @ None => *slot = Some(t),
    }
}

fn softmax_rows(x: &Tensor, log: bool) -> Tensor {
    let n = x.last_dim();
    let mut out = Vec::with_capacity(x.numel());
    for row in x.rows() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        if log {
            out.extend(row.iter().map(|v| v - lse));
        } else {
            out.extend(row.iter().map(|v| (v - lse).exp()));
        }
    }
    debug_assert_eq!(out.len() % n.max(1), 0);
    Tensor::with_data(x.shape().to_vec(), out)
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Records a borrowed leaf; used for parameters.
    pub fn param(&self, t: &'p Tensor) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Cow::Borrowed(t), op: Op::Leaf });
        Var(nodes.len() - 1)
    }

    /// Records an owned leaf; used for inputs and constants.
    pub fn constant(&self, t: Tensor) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Cow::Owned(t), op: Op::Leaf });
        Var(nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| n[v.0].value.as_ref())
    }

    /// Owned copy of a recorded value.
    pub fn get(&self, v: Var) -> Tensor {
        self.value(v).clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.value(v).shape().to_vec()
    }

    pub fn item(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    fn push(&self, op: Op, value: Tensor) -> Result<Var, AutodiffError> {
        let mut nodes = self.nodes.borrow_mut();
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: op.name(), node: nodes.len(), phase: "forward" });
        }
        nodes.push(Node { value: Cow::Owned(value), op });
        Ok(Var(nodes.len() - 1))
    }

    fn unary(&self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var, AutodiffError> {
        let out = self.value(a).map(f);
        self.push(op, out)
    }

    /// `a (m x k) @ b (k x n)`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let out = {
            let (ta, tb) = (self.value(a), self.value(b));
            let (sa, sb) = (ta.shape(), tb.shape());
            if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
                return Err(AutodiffError::ShapeMismatch { op: "matmul", lhs: sa.to_vec(), rhs: sb.to_vec() });
            }
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            let mut out = vec![0.0; m * n];
            matmul_acc(ta.data(), tb.data(), &mut out, m, k, n);
            Tensor::with_data(vec![m, n], out)
        };
        self.push(Op::MatMul(a, b), out)
    }

    fn broadcast(
        &self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !broadcast_ok(&ta, &tb) {
            return Err(AutodiffError::ShapeMismatch { op: name, lhs: ta.shape().to_vec(), rhs: tb.shape().to_vec() });
        }
        let nb = tb.numel();
        let bd = tb.data();
        let data = ta.data().iter().enumerate().map(|(i, &x)| f(x, bd[i % nb])).collect();
        Ok(Tensor::with_data(ta.shape().to_vec(), data))
    }

    /// Elementwise `a + b`; `b`'s shape must be a suffix of `a`'s.
    pub fn add(&self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let out = self.broadcast(a, b, "add", |x, y| x + y)?;
        self.push(Op::Add(a, b), out)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let out = self.broadcast(a, b, "sub", |x, y| x - y)?;
        self.push(Op::Sub(a, b), out)
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let out = self.broadcast(a, b, "mul", |x, y| x * y)?;
        self.push(Op::Mul(a, b), out)
    }

    pub fn scale(&self, a: Var, c: f64) -> Result<Var, AutodiffError> {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Result<Var, AutodiffError> {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn neg(&self, a: Var) -> Result<Var, AutodiffError> {
        self.scale(a, -1.0)
    }

    pub fn sigmoid(&self, a: Var) -> Result<Var, AutodiffError> {
        self.unary(a, Op::Sigmoid(a), |x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn tanh(&self, a: Var) -> Result<Var, AutodiffError> {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn exp(&self, a: Var) -> Result<Var, AutodiffError> {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&self, a: Var) -> Result<Var, AutodiffError> {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn sqrt(&self, a: Var) -> Result<Var, AutodiffError> {
        self.unary(a, Op::Sqrt(a), f64::sqrt)
    }

    pub fn square(&self, a: Var) -> Result<Var, AutodiffError> {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&self, a: Var, lo: f64, hi: f64) -> Result<Var, AutodiffError> {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    /// Softmax over the last dimension.
    pub fn softmax(&self, a: Var) -> Result<Var, AutodiffError> {
        let out = softmax_rows(&self.value(a), false);
        self.push(Op::Softmax(a), out)
    }

    /// Log-softmax over the last dimension.
    pub fn log_softmax(&self, a: Var) -> Result<Var, AutodiffError> {
        let out = softmax_rows(&self.value(a), true);
        self.push(Op::LogSoftmax(a), out)
    }

    /// Concatenation along the last dimension; leading dimensions must agree.
    pub fn concat(&self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let out = {
            let values: Vec<Ref<'_, Tensor>> = parts.iter().map(|&v| self.value(v)).collect();
            let first = values.first().ok_or(AutodiffError::InvalidArgument {
                op: "concat",
                reason: "no operands".into(),
            })?;
            let lead = &first.shape()[..first.shape().len() - 1];
            for t in &values {
                if &t.shape()[..t.shape().len() - 1] != lead {
                    return Err(AutodiffError::ShapeMismatch {
                        op: "concat",
                        lhs: first.shape().to_vec(),
                        rhs: t.shape().to_vec(),
                    });
                }
            }
            let width: usize = values.iter().map(|t| t.last_dim()).sum();
            let rows = first.outer();
            let mut data = Vec::with_capacity(rows * width);
            for r in 0..rows {
                for t in &values {
                    data.extend_from_slice(t.row(r));
                }
            }
            let mut shape = lead.to_vec();
            shape.push(width);
            Tensor::with_data(shape, data)
        };
        self.push(Op::Concat(parts.to_vec()), out)
    }

    /// Vertical concatenation of matrices with equal column counts.
    pub fn stack_rows(&self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let out = {
            let values: Vec<Ref<'_, Tensor>> = parts.iter().map(|&v| self.value(v)).collect();
            let first = values.first().ok_or(AutodiffError::InvalidArgument {
                op: "stack_rows",
                reason: "no operands".into(),
            })?;
            let cols = first.last_dim();
            let mut data = Vec::new();
            let mut rows = 0;
            for t in &values {
                if t.shape().len() != 2 || t.last_dim() != cols {
                    return Err(AutodiffError::ShapeMismatch {
                        op: "stack_rows",
                        lhs: first.shape().to_vec(),
                        rhs: t.shape().to_vec(),
                    });
                }
                rows += t.shape()[0];
                data.extend_from_slice(t.data());
            }
            Tensor::with_data(vec![rows, cols], data)
        };
        self.push(Op::StackRows(parts.to_vec()), out)
    }

    /// Columns `start..end` of the last dimension.
    pub fn slice_cols(&self, a: Var, start: usize, end: usize) -> Result<Var, AutodiffError> {
        let out = {
            let t = self.value(a);
            if start >= end || end > t.last_dim() {
                return Err(AutodiffError::InvalidArgument {
                    op: "slice_cols",
                    reason: format!("range {start}..{end} outside width {}", t.last_dim()),
                });
            }
            let data = t.rows().flat_map(|r| r[start..end].iter().copied()).collect();
            let mut shape = t.shape().to_vec();
            *shape.last_mut().expect("non-empty shape") = end - start;
            Tensor::with_data(shape, data)
        };
        self.push(Op::SliceCols(a, start), out)
    }

    /// Rows of a matrix, in the given order (repeats allowed).
    pub fn select_rows(&self, a: Var, rows: &[usize]) -> Result<Var, AutodiffError> {
        let out = {
            let t = self.value(a);
            if t.shape().len() != 2 || rows.iter().any(|&r| r >= t.shape()[0]) {
                return Err(AutodiffError::InvalidArgument {
                    op: "select_rows",
                    reason: format!("rows {rows:?} outside shape {:?}", t.shape()),
                });
            }
            let data = rows.iter().flat_map(|&r| t.row(r).iter().copied()).collect();
            Tensor::with_data(vec![rows.len(), t.last_dim()], data)
        };
        self.push(Op::SelectRows(a, rows.to_vec()), out)
    }

    /// Picks column `cols[r]` from each row `r`; the result has one entry per row.
    pub fn pick(&self, a: Var, cols: &[usize]) -> Result<Var, AutodiffError> {
        let out = {
            let t = self.value(a);
            let n = t.last_dim();
            if cols.len() != t.outer() || cols.iter().any(|&c| c >= n) {
                return Err(AutodiffError::InvalidArgument {
                    op: "pick",
                    reason: format!("{} indices for shape {:?}", cols.len(), t.shape()),
                });
            }
            let data = cols.iter().enumerate().map(|(r, &c)| t.data()[r * n + c]).collect();
            Tensor::with_data(vec![cols.len()], data)
        };
        self.push(Op::Pick(a, cols.to_vec()), out)
    }

    pub fn sum(&self, a: Var) -> Result<Var, AutodiffError> {
        let out = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(Op::Sum(a), out)
    }

    pub fn mean(&self, a: Var) -> Result<Var, AutodiffError> {
        let out = {
            let t = self.value(a);
            Tensor::scalar(t.data().iter().sum::<f64>() / t.numel() as f64)
        };
        self.push(Op::Mean(a), out)
    }

    /// Sums the last dimension away; a vector reduces to a 1-element tensor.
    pub fn sum_last(&self, a: Var) -> Result<Var, AutodiffError> {
        let out = {
            let t = self.value(a);
            let data: Vec<f64> = t.rows().map(|r| r.iter().sum()).collect();
            let shape = if t.shape().len() == 1 { vec![1] } else { t.shape()[..t.shape().len() - 1].to_vec() };
            Tensor::with_data(shape, data)
        };
        self.push(Op::SumLast(a), out)
    }

    /// Reverse traversal from a 1-element output. Every node is visited
    /// once; contributions from multiple uses are summed.
    pub fn backward(&self, output: Var) -> Result<Gradients, AutodiffError> {
        let nodes = self.nodes.borrow();
        let out_shape = nodes[output.0].value.shape();
        if out_shape.iter().product::<usize>() != 1 {
            return Err(AutodiffError::NotScalar(out_shape.to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::filled(out_shape, 1.0));
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if !g.is_finite() {
                return Err(AutodiffError::NonFinite { op: node.op.name(), node: i, phase: "backward" });
            }
            let y = node.value.as_ref();
            let val = |v: Var| nodes[v.0].value.as_ref();
            let gd = g.data();
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (ta, tb) = (val(*a), val(*b));
                    let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                    let mut da = vec![0.0; m * k];
                    matmul_a_bt_acc(gd, tb.data(), &mut da, m, k, n);
                    let mut db = vec![0.0; k * n];
                    matmul_at_b_acc(ta.data(), gd, &mut db, m, k, n);
                    accumulate(&mut grads, *a, ta.shape(), da);
                    accumulate(&mut grads, *b, tb.shape(), db);
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let tb = val(*b);
                    let mut db = reduce_blocks(gd, tb.numel());
                    if matches!(node.op, Op::Sub(..)) {
                        db.iter_mut().for_each(|v| *v = -*v);
                    }
                    accumulate(&mut grads, *a, y.shape(), gd.to_vec());
                    accumulate(&mut grads, *b, tb.shape(), db);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (val(*a), val(*b));
                    let nb = tb.numel();
                    let bd = tb.data();
                    let da = gd.iter().enumerate().map(|(j, g)| g * bd[j % nb]).collect();
                    let prod: Vec<f64> = gd.iter().zip(ta.data()).map(|(g, x)| g * x).collect();
                    accumulate(&mut grads, *a, ta.shape(), da);
                    accumulate(&mut grads, *b, tb.shape(), reduce_blocks(&prod, nb));
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, y.shape(), gd.iter().map(|g| c * g).collect()),
                Op::AddScalar(a) => accumulate(&mut grads, *a, y.shape(), gd.to_vec()),
                Op::Sigmoid(a) => {
                    let d = gd.iter().zip(y.data()).map(|(g, s)| g * s * (1.0 - s)).collect();
                    accumulate(&mut grads, *a, y.shape(), d);
                }
                Op::Tanh(a) => {
                    let d = gd.iter().zip(y.data()).map(|(g, t)| g * (1.0 - t * t)).collect();
                    accumulate(&mut grads, *a, y.shape(), d);
                }
                Op::Exp(a) => {
                    let d = gd.iter().zip(y.data()).map(|(g, e)| g * e).collect();
                    accumulate(&mut grads, *a, y.shape(), d);
                }
                Op::Log(a) => {
                    let d = gd.iter().zip(val(*a).data()).map(|(g, x)| g / x).collect();
                    accumulate(&mut grads, *a, y.shape(), d);
                }
                Op::Sqrt(a) => {
                    let d = gd.iter().zip(y.data()).map(|(g, s)| g / (2.0 * s)).collect();
                    accumulate(&mut grads, *a, y.shape(), d);
                }
                Op::Square(a) => {
                    let d = gd.iter().zip(val(*a).data()).map(|(g, x)| 2.0 * x * g).collect();
                    accumulate(&mut grads, *a, y.shape(), d);
                }
                Op::Clamp(a, lo, hi) => {
                    let d = gd
                        .iter()
                        .zip(val(*a).data())
                        .map(|(g, x)| if (*lo..=*hi).contains(x) { *g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *a, y.shape(), d);
                }
                Op::Softmax(a) => {
                    let n = y.last_dim();
                    let mut d = Vec::with_capacity(y.numel());
                    for (gr, yr) in gd.chunks(n).zip(y.rows()) {
                        let dot: f64 = gr.iter().zip(yr).map(|(g, s)| g * s).sum();
                        d.extend(gr.iter().zip(yr).map(|(g, s)| s * (g - dot)));
                    }
                    accumulate(&mut grads, *a, y.shape(), d);
                }
                Op::LogSoftmax(a) => {
                    let n = y.last_dim();
                    let mut d = Vec::with_capacity(y.numel());
                    for (gr, yr) in gd.chunks(n).zip(y.rows()) {
                        let total: f64 = gr.iter().sum();
                        d.extend(gr.iter().zip(yr).map(|(g, l)| g - l.exp() * total));
                    }
                    accumulate(&mut grads, *a, y.shape(), d);
                }
                Op::Concat(parts) => {
                    let width = y.last_dim();
                    let mut offset = 0;
                    for p in parts {
                        let tp = val(*p);
                        let w = tp.last_dim();
                        let d = gd.chunks(width).flat_map(|r| r[offset..offset + w].iter().copied()).collect();
                        accumulate(&mut grads, *p, tp.shape(), d);
                        offset += w;
                    }
                }
                Op::StackRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let tp = val(*p);
                        let n = tp.numel();
                        accumulate(&mut grads, *p, tp.shape(), gd[offset..offset + n].to_vec());
                        offset += n;
                    }
                }
                Op::SliceCols(a, start) => {
                    let ta = val(*a);
                    let (n, w) = (ta.last_dim(), y.last_dim());
                    let mut d = vec![0.0; ta.numel()];
                    for (r, gr) in gd.chunks(w).enumerate() {
                        d[r * n + start..r * n + start + w].copy_from_slice(gr);
                    }
                    accumulate(&mut grads, *a, ta.shape(), d);
                }
                Op::SelectRows(a, rows) => {
                    let ta = val(*a);
                    let n = ta.last_dim();
                    let mut d = vec![0.0; ta.numel()];
                    for (gr, &r) in gd.chunks(n).zip(rows) {
                        for (o, v) in d[r * n..(r + 1) * n].iter_mut().zip(gr) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *a, ta.shape(), d);
                }
                Op::Pick(a, cols) => {
                    let ta = val(*a);
                    let n = ta.last_dim();
                    let mut d = vec![0.0; ta.numel()];
                    for (r, (&c, g)) in cols.iter().zip(gd).enumerate() {
                        d[r * n + c] = *g;
                    }
                    accumulate(&mut grads, *a, ta.shape(), d);
                }
                Op::Sum(a) => {
                    let ta = val(*a);
                    accumulate(&mut grads, *a, ta.shape(), vec![gd[0]; ta.numel()]);
                }
                Op::Mean(a) => {
                    let ta = val(*a);
                    accumulate(&mut grads, *a, ta.shape(), vec![gd[0] / ta.numel() as f64; ta.numel()]);
                }
                Op::SumLast(a) => {
                    let ta = val(*a);
                    let n = ta.last_dim();
                    let d = gd.iter().flat_map(|g| std::iter::repeat_n(*g, n)).collect();
                    accumulate(&mut grads, *a, ta.shape(), d);
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }
}
