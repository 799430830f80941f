//! Wengert-list tape for reverse-mode differentiation.
//!
//! Every operation appends one node whose inputs already exist, so node ids
//! are a topological order and the backward sweep is a single reverse pass.

use super::params::{ParamId, ParamStore};
use super::{concat, log_softmax, matmul_into, sigmoid, softmax, transpose, Real, Tensor};
use crate::error::{CnmError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<F> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, F),
    ScaleBy(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    LeakyRelu(Var, F),
    Softmax(Var),
    LogSoftmax(Var),
    LogClamp(Var, F),
    Concat(Vec<Var>),
    Slice(Var, usize),
    MeanRows(Var),
    Sum(Var),
    Transpose(Var),
    Reshape(Var),
    Row(Var, usize),
    Index(Var, usize),
    StraightThrough(Var),
}

struct Node<F> {
    // `None` for parameter leaves, which read through to the store.
    value: Option<Tensor<F>>,
    op: Op<F>,
    needs_grad: bool,
}

/// One forward pass. Parameters are borrowed from the store, never copied.
pub struct Graph<'p, F: Real = f32> {
    store: Option<&'p ParamStore<F>>,
    nodes: Vec<Node<F>>,
    param_vars: Vec<Option<Var>>,
}

impl<'p, F: Real> Graph<'p, F> {
    pub fn new(store: &'p ParamStore<F>) -> Self {
        Self {
            store: Some(store),
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
        }
    }

    /// A graph without parameters, for tests against plain inputs.
    pub fn detached() -> Self {
        Self {
            store: None,
            nodes: Vec::new(),
            param_vars: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.expect("param node without store").get(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> Var {
        #[cfg(debug_assertions)]
        if !value.is_finite() {
            let inputs_finite = self.op_inputs(&op).into_iter().all(|i| self.value(i).is_finite());
            debug_assert!(!inputs_finite, "non-finite output from {op:?} on finite inputs");
        }
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    #[cfg(debug_assertions)]
    fn op_inputs(&self, op: &Op<F>) -> Vec<Var> {
        use Op::*;
        match op {
            Leaf | Param(_) => vec![],
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | AddRow(a, b) | ScaleBy(a, b) => {
                vec![*a, *b]
            }
            Concat(vs) => vs.clone(),
            Scale(a, _) | Sigmoid(a) | Tanh(a) | Relu(a) | LeakyRelu(a, _) | Softmax(a)
            | LogSoftmax(a) | LogClamp(a, _) | Slice(a, _) | MeanRows(a) | Sum(a)
            | Transpose(a) | Reshape(a) | Row(a, _) | Index(a, _) | StraightThrough(a) => {
                vec![*a]
            }
        }
    }

    fn g(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input: no gradient flows into it.
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Input leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn input(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if tb.rank() != 2 || ta.rank() > 2 || ta.cols() != tb.rows() {
            return Err(CnmError::dim("matmul", ta.shape(), tb.shape()));
        }
        let out = super::matmul(ta, tb)?;
        let ng = self.g(a) || self.g(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(CnmError::dim(op, sa, sb));
        }
        Ok(())
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(F, F) -> F) -> Tensor<F> {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip(a, b, |x, y| x + y);
        let ng = self.g(a) || self.g(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip(a, b, |x, y| x - y);
        let ng = self.g(a) || self.g(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip(a, b, |x, y| x * y);
        let ng = self.g(a) || self.g(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    /// Add a vector to every row of a matrix. A vector `m` adds elementwise.
    pub fn add_row(&mut self, m: Var, row: Var) -> Result<Var> {
        let (tm, tr) = (self.value(m), self.value(row));
        if tr.rank() != 1 || tm.cols() != tr.len() {
            return Err(CnmError::dim("add_row", tm.shape(), tr.shape()));
        }
        let c = tm.cols();
        let mut out = tm.clone();
        for chunk in out.data_mut().chunks_mut(c) {
            for (o, &r) in chunk.iter_mut().zip(tr.data()) {
                *o += r;
            }
        }
        let ng = self.g(m) || self.g(row);
        Ok(self.push(out, Op::AddRow(m, row), ng))
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let out = self.value(a).map(|x| x * c);
        let ng = self.g(a);
        self.push(out, Op::Scale(a, c), ng)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -F::one())
    }

    /// Multiply `v` by the single element of `s`.
    pub fn scale_by(&mut self, s: Var, v: Var) -> Result<Var> {
        let ts = self.value(s);
        if ts.len() != 1 {
            return Err(CnmError::dim("scale_by", ts.shape(), self.shape(v)));
        }
        let k = ts.item();
        let out = self.value(v).map(|x| k * x);
        let ng = self.g(s) || self.g(v);
        Ok(self.push(out, Op::ScaleBy(s, v), ng))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let ng = self.g(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(F::tanh);
        let ng = self.g(a);
        self.push(out, Op::Tanh(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(F::zero()));
        let ng = self.g(a);
        self.push(out, Op::Relu(a), ng)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: F) -> Var {
        let out = super::leaky_relu(self.value(a), slope);
        let ng = self.g(a);
        self.push(out, Op::LeakyRelu(a, slope), ng)
    }

    /// Softmax over a vector, or row-wise over a matrix.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let out = softmax(self.value(a))?;
        let ng = self.g(a);
        Ok(self.push(out, Op::Softmax(a), ng))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let out = log_softmax(self.value(a));
        let ng = self.g(a);
        self.push(out, Op::LogSoftmax(a), ng)
    }

    /// `ln(max(x, eps))`, so a zero probability never produces `-inf`.
    pub fn log_clamped(&mut self, a: Var, eps: F) -> Var {
        let out = self.value(a).map(|x| x.max(eps).ln());
        let ng = self.g(a);
        self.push(out, Op::LogClamp(a, eps), ng)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let ts: Vec<&Tensor<F>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = concat(&ts)?;
        let ng = parts.iter().any(|&p| self.g(p));
        Ok(self.push(out, Op::Concat(parts.to_vec()), ng))
    }

    /// Contiguous sub-vector `[start, start + len)`.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 1 || start + len > t.len() || len == 0 {
            return Err(CnmError::dim("slice", t.shape(), &[start, len]));
        }
        let out = Tensor::vector(t.data()[start..start + len].to_vec());
        let ng = self.g(a);
        Ok(self.push(out, Op::Slice(a, start), ng))
    }

    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let out = super::mean_pool_rows(self.value(a))?;
        let ng = self.g(a);
        Ok(self.push(out, Op::MeanRows(a), ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let ng = self.g(a);
        self.push(out, Op::Sum(a), ng)
    }

    /// Sum of scalar nodes, folded left to right.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| CnmError::Argument("sum of no terms".into()))?;
        let mut acc = first;
        for &t in rest {
            acc = self.add(acc, t)?;
        }
        Ok(acc)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = transpose(self.value(a));
        let ng = self.g(a);
        self.push(out, Op::Transpose(a), ng)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        let ng = self.g(a);
        Ok(self.push(out, Op::Reshape(a), ng))
    }

    /// Row `i` of a matrix as a vector (embedding lookup).
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 2 || i >= t.rows() {
            return Err(CnmError::dim("row", t.shape(), &[i]));
        }
        let out = Tensor::vector(t.row(i).to_vec());
        let ng = self.g(a);
        Ok(self.push(out, Op::Row(a, i), ng))
    }

    /// Element `i` of a vector as a scalar.
    pub fn index(&mut self, a: Var, i: usize) -> Result<Var> {
        let t = self.value(a);
        if i >= t.len() {
            return Err(CnmError::dim("index", t.shape(), &[i]));
        }
        let out = Tensor::scalar(t.data()[i]);
        let ng = self.g(a);
        Ok(self.push(out, Op::Index(a, i), ng))
    }

    /// Forward value `forward`, backward gradient passed unchanged to `soft`.
    pub fn straight_through(&mut self, soft: Var, forward: Tensor<F>) -> Result<Var> {
        if forward.shape() != self.shape(soft) {
            return Err(CnmError::dim("straight_through", self.shape(soft), forward.shape()));
        }
        let ng = self.g(soft);
        Ok(self.push(forward, Op::StraightThrough(soft), ng))
    }

    /// `x·W + b` for a vector `x`, or row-wise for a matrix `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(CnmError::Argument(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<F>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.backprop_node(i, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        Ok(Gradients {
            grads,
            param_vars: self.param_vars.clone(),
        })
    }

    fn backprop_node(&self, i: usize, dy: &[F], grads: &mut [Option<Vec<F>>]) {
        use Op::*;
        let node = &self.nodes[i];
        let y = self.value(Var(i));
        match &node.op {
            Leaf | Param(_) => {}
            MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = ta.dims2();
                let n = tb.cols();
                if self.g(*a) {
                    let da = slot(grads, *a, ta.len());
                    for r in 0..m {
                        let dyr = &dy[r * n..(r + 1) * n];
                        for p in 0..k {
                            let brow = &tb.data()[p * n..(p + 1) * n];
                            let mut s = F::zero();
                            for (&d, &bv) in dyr.iter().zip(brow) {
                                s += d * bv;
                            }
                            da[r * k + p] += s;
                        }
                    }
                }
                if self.g(*b) {
                    let at = transpose(ta);
                    let db = slot(grads, *b, tb.len());
                    // db = aᵀ · dy
                    matmul_into(at.data(), dy, db, k, m, n);
                }
            }
            Add(a, b) => {
                self.accumulate(grads, *a, |d| axpy(d, dy, F::one()));
                self.accumulate(grads, *b, |d| axpy(d, dy, F::one()));
            }
            Sub(a, b) => {
                self.accumulate(grads, *a, |d| axpy(d, dy, F::one()));
                self.accumulate(grads, *b, |d| axpy(d, dy, -F::one()));
            }
            Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, |d| {
                    for ((o, &g), &bv) in d.iter_mut().zip(dy).zip(tb.data()) {
                        *o += g * bv;
                    }
                });
                self.accumulate(grads, *b, |d| {
                    for ((o, &g), &av) in d.iter_mut().zip(dy).zip(ta.data()) {
                        *o += g * av;
                    }
                });
            }
            AddRow(m, r) => {
                self.accumulate(grads, *m, |d| axpy(d, dy, F::one()));
                let c = self.value(*r).len();
                self.accumulate(grads, *r, |d| {
                    for chunk in dy.chunks(c) {
                        axpy(d, chunk, F::one());
                    }
                });
            }
            Scale(a, c) => self.accumulate(grads, *a, |d| axpy(d, dy, *c)),
            ScaleBy(s, v) => {
                let (ts, tv) = (self.value(*s), self.value(*v));
                self.accumulate(grads, *s, |d| {
                    d[0] += dy.iter().zip(tv.data()).map(|(&g, &x)| g * x).sum();
                });
                self.accumulate(grads, *v, |d| axpy(d, dy, ts.item()));
            }
            Sigmoid(a) => self.accumulate(grads, *a, |d| {
                for ((o, &g), &yv) in d.iter_mut().zip(dy).zip(y.data()) {
                    *o += g * yv * (F::one() - yv);
                }
            }),
            Tanh(a) => self.accumulate(grads, *a, |d| {
                for ((o, &g), &yv) in d.iter_mut().zip(dy).zip(y.data()) {
                    *o += g * (F::one() - yv * yv);
                }
            }),
            Relu(a) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, |d| {
                    for ((o, &g), &xv) in d.iter_mut().zip(dy).zip(x.data()) {
                        if xv > F::zero() {
                            *o += g;
                        }
                    }
                })
            }
            LeakyRelu(a, slope) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, |d| {
                    for ((o, &g), &xv) in d.iter_mut().zip(dy).zip(x.data()) {
                        *o += if xv >= F::zero() { g } else { g * *slope };
                    }
                })
            }
            Softmax(a) => {
                let c = y.cols();
                self.accumulate(grads, *a, |d| {
                    for ((dr, gr), yr) in d.chunks_mut(c).zip(dy.chunks(c)).zip(y.data().chunks(c)) {
                        let dot: F = gr.iter().zip(yr).map(|(&g, &p)| g * p).sum();
                        for ((o, &g), &p) in dr.iter_mut().zip(gr).zip(yr) {
                            *o += p * (g - dot);
                        }
                    }
                })
            }
            LogSoftmax(a) => {
                let c = y.cols();
                self.accumulate(grads, *a, |d| {
                    for ((dr, gr), yr) in d.chunks_mut(c).zip(dy.chunks(c)).zip(y.data().chunks(c)) {
                        let total: F = gr.iter().copied().sum();
                        for ((o, &g), &lp) in dr.iter_mut().zip(gr).zip(yr) {
                            *o += g - lp.exp() * total;
                        }
                    }
                })
            }
            LogClamp(a, eps) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, |d| {
                    for ((o, &g), &xv) in d.iter_mut().zip(dy).zip(x.data()) {
                        if xv > *eps {
                            *o += g / xv;
                        }
                    }
                })
            }
            Concat(parts) => {
                let rows = y.rows();
                let total_cols = y.cols();
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    self.accumulate(grads, p, |d| {
                        for r in 0..rows {
                            let src = &dy[r * total_cols + offset..r * total_cols + offset + pc];
                            axpy(&mut d[r * pc..(r + 1) * pc], src, F::one());
                        }
                    });
                    offset += pc;
                }
            }
            Slice(a, start) => {
                let n = dy.len();
                self.accumulate(grads, *a, |d| axpy(&mut d[*start..*start + n], dy, F::one()))
            }
            MeanRows(a) => {
                let (r, c) = self.value(*a).dims2();
                let inv = F::one() / F::lit(r as f64);
                self.accumulate(grads, *a, |d| {
                    for chunk in d.chunks_mut(c) {
                        axpy(chunk, dy, inv);
                    }
                })
            }
            Sum(a) => self.accumulate(grads, *a, |d| {
                for o in d.iter_mut() {
                    *o += dy[0];
                }
            }),
            Transpose(a) => {
                let (r, c) = y.dims2();
                self.accumulate(grads, *a, |d| {
                    // y is r×c, a is c×r
                    for i in 0..r {
                        for j in 0..c {
                            d[j * r + i] += dy[i * c + j];
                        }
                    }
                })
            }
            Reshape(a) | StraightThrough(a) => self.accumulate(grads, *a, |d| axpy(d, dy, F::one())),
            Row(a, r) => {
                let c = dy.len();
                self.accumulate(grads, *a, |d| axpy(&mut d[r * c..(r + 1) * c], dy, F::one()))
            }
            Index(a, k) => self.accumulate(grads, *a, |d| d[*k] += dy[0]),
        }
    }

    fn accumulate(&self, grads: &mut [Option<Vec<F>>], v: Var, f: impl FnOnce(&mut [F])) {
        if !self.g(v) {
            return;
        }
        let n = self.value(v).len();
        f(slot(grads, v, n));
    }
}

fn slot<F: Real>(grads: &mut [Option<Vec<F>>], v: Var, n: usize) -> &mut [F] {
    grads[v.0].get_or_insert_with(|| vec![F::zero(); n])
}

fn axpy<F: Real>(dst: &mut [F], src: &[F], k: F) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += k * s;
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
    param_vars: Vec<Option<Var>>,
}

impl<F: Real> Gradients<F> {
    /// Gradient with respect to any node; `None` if nothing flowed into it.
    pub fn wrt(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[F]> {
        self.param_vars
            .get(id.0)
            .copied()
            .flatten()
            .and_then(|v| self.wrt(v))
    }

    /// Add every parameter gradient into `acc` (indexed by parameter id).
    pub fn accumulate_params(&self, acc: &mut [Vec<F>]) {
        for (pid, v) in self.param_vars.iter().enumerate() {
            let Some(g) = v.and_then(|v| self.wrt(v)) else { continue };
            axpy(&mut acc[pid], g, F::one());
        }
    }
}
