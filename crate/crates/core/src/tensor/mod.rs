//! Dense row-major tensors, the reverse-mode tape, and the numeric helpers
//! (initialisation, PRNG, Adam, finite differences) the model is built on.

mod graph;
pub mod gradcheck;
mod params;
pub mod init;
pub mod optim;
pub mod rng;

pub use graph::{Gradients, Graph, Var};
pub use params::{ParamId, ParamStore};

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{CnmError, Result};

/// Floating-point element type. `f32` is used for training, `f64` for
/// gradient checks.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F = f32> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(CnmError::Argument(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(CnmError::dim("tensor", &shape, &[data.len()]));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![F::zero(); n],
        }
    }

    pub fn full(shape: &[usize], value: F) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn vector(data: Vec<F>) -> Self {
        assert!(!data.is_empty(), "empty vector");
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn scalar(x: F) -> Self {
        Self {
            shape: vec![1],
            data: vec![x],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<F>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<F>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(CnmError::Argument("ragged rows".into()));
        }
        Self::matrix(rows.len(), cols, rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = F::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Rows and columns of a rank-2 tensor; a vector reads as one row.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => panic!("expected rank 1 or 2, got {:?}", self.shape),
        }
    }

    pub fn rows(&self) -> usize {
        self.dims2().0
    }

    pub fn cols(&self) -> usize {
        self.dims2().1
    }

    pub fn row(&self, i: usize) -> &[F] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> F {
        self.data[i * self.cols() + j]
    }

    pub fn item(&self) -> F {
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn cast<G: Real>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| G::lit(x.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum(&self) -> F {
        self.data.iter().copied().sum()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.as_f64()).collect()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.data)
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            shape: vec![idx.len(), c],
            data,
        }
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax<F: Real>(xs: &[F]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// `a[m×k] · b[k×n]`. A rank-1 `a` is treated as a single row and yields a
/// rank-1 result.
pub fn matmul<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    if b.rank() != 2 || a.rank() > 2 {
        return Err(CnmError::dim("matmul", a.shape(), b.shape()));
    }
    let (m, k) = a.dims2();
    let (k2, n) = b.dims2();
    if k != k2 {
        return Err(CnmError::dim("matmul", a.shape(), b.shape()));
    }
    let mut out = vec![F::zero(); m * n];
    matmul_into(&a.data, &b.data, &mut out, m, k, n);
    let shape = if a.rank() == 1 { vec![n] } else { vec![m, n] };
    Ok(Tensor { shape, data: out })
}

pub(crate) fn matmul_into<F: Real>(a: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av == F::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

pub fn transpose<F: Real>(a: &Tensor<F>) -> Tensor<F> {
    let (r, c) = a.dims2();
    let mut data = vec![F::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            data[j * r + i] = a.data[i * c + j];
        }
    }
    Tensor {
        shape: vec![c, r],
        data,
    }
}

fn softmax_slice<F: Real>(x: &[F], out: &mut [F]) {
    let max = x.iter().copied().fold(F::neg_infinity(), F::max);
    let mut z = F::zero();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o = *o / z;
    }
}

fn log_softmax_slice<F: Real>(x: &[F], out: &mut [F]) {
    let max = x.iter().copied().fold(F::neg_infinity(), F::max);
    let z: F = x.iter().map(|&v| (v - max).exp()).sum();
    let lz = z.ln() + max;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = v - lz;
    }
}

/// Max-shifted softmax over a vector, or over each row of a matrix.
pub fn softmax<F: Real>(v: &Tensor<F>) -> Result<Tensor<F>> {
    if v.rank() > 2 {
        return Err(CnmError::Argument("softmax expects rank 1 or 2".into()));
    }
    let mut out = vec![F::zero(); v.len()];
    let c = v.cols();
    for (x, o) in v.data.chunks(c).zip(out.chunks_mut(c)) {
        softmax_slice(x, o);
    }
    Ok(Tensor {
        shape: v.shape.clone(),
        data: out,
    })
}

pub fn log_softmax<F: Real>(v: &Tensor<F>) -> Tensor<F> {
    let mut out = vec![F::zero(); v.len()];
    let c = v.cols();
    for (x, o) in v.data.chunks(c).zip(out.chunks_mut(c)) {
        log_softmax_slice(x, o);
    }
    Tensor {
        shape: v.shape.clone(),
        data: out,
    }
}

pub fn leaky_relu<F: Real>(x: &Tensor<F>, slope: F) -> Tensor<F> {
    x.map(|v| if v >= F::zero() { v } else { slope * v })
}

pub fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Columnwise mean of an `N×d` matrix.
pub fn mean_pool_rows<F: Real>(m: &Tensor<F>) -> Result<Tensor<F>> {
    if m.rank() != 2 {
        return Err(CnmError::Argument(format!(
            "mean pooling expects a matrix, got {:?}",
            m.shape()
        )));
    }
    let (r, c) = m.dims2();
    let mut out = vec![F::zero(); c];
    for row in m.data.chunks(c) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    let inv = F::one() / F::lit(r as f64);
    for o in &mut out {
        *o *= inv;
    }
    Ok(Tensor::vector(out))
}

/// Concatenate vectors end to end, or matrices with equal row counts along
/// columns.
pub fn concat<F: Real>(parts: &[&Tensor<F>]) -> Result<Tensor<F>> {
    let first = parts
        .first()
        .ok_or_else(|| CnmError::Argument("concat of nothing".into()))?;
    if first.rank() == 1 {
        if let Some(bad) = parts.iter().find(|p| p.rank() != 1) {
            return Err(CnmError::dim("concat", first.shape(), bad.shape()));
        }
        let data: Vec<F> = parts.iter().flat_map(|p| p.data.iter().copied()).collect();
        return Ok(Tensor::vector(data));
    }
    let rows = first.rows();
    if let Some(bad) = parts.iter().find(|p| p.rank() != 2 || p.rows() != rows) {
        return Err(CnmError::dim("concat", first.shape(), bad.shape()));
    }
    let cols: usize = parts.iter().map(|p| p.cols()).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for p in parts {
            data.extend_from_slice(p.row(i));
        }
    }
    Tensor::matrix(rows, cols, data)
}
