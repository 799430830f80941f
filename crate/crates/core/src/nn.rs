//! Parameterised building blocks shared by the encoder, controller and
//! decoder: fully connected layers and the LSTM cell.

use crate::error::{CnmError, Result};
use crate::tensor::init::xavier_uniform;
use crate::tensor::rng::Rng;
use crate::tensor::{Graph, ParamId, ParamStore, Real, Tensor, Var};

/// Forget-gate bias at initialisation.
pub const FORGET_BIAS: f64 = 1.0;

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<F: Real>(store: &mut ParamStore<F>, rng: &mut Rng, name: &str, d_in: usize, d_out: usize) -> Self {
        let w = store.add(format!("{name}.w"), xavier_uniform(rng, d_in, d_out));
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[d_out]));
        Self { w, b, d_in, d_out }
    }

    /// `x·W + b`; `x` may be a vector or a matrix of row vectors.
    pub fn forward<F: Real>(&self, g: &mut Graph<'_, F>, x: Var) -> Result<Var> {
        let xc = g.value(x).cols();
        if xc != self.d_in {
            return Err(CnmError::dim("linear", g.shape(x), &[self.d_in, self.d_out]));
        }
        let w = g.param(self.w);
        let b = g.param(self.b);
        g.linear(x, w, b)
    }
}

/// Weight-only projection (no bias).
#[derive(Clone, Copy, Debug)]
pub struct Projection {
    pub w: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Projection {
    pub fn new<F: Real>(store: &mut ParamStore<F>, rng: &mut Rng, name: &str, d_in: usize, d_out: usize) -> Self {
        let w = store.add(name.to_string(), xavier_uniform(rng, d_in, d_out));
        Self { w, d_in, d_out }
    }

    pub fn forward<F: Real>(&self, g: &mut Graph<'_, F>, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        g.matmul(x, w)
    }
}

/// Four-gate LSTM. Weights are stored as `w_ih: [d_in, 4·d_h]`,
/// `w_hh: [d_h, 4·d_h]`, `b: [4·d_h]`, with gate column blocks ordered
/// `[i, f, g, o]`.
#[derive(Clone, Copy, Debug)]
pub struct Lstm {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_h: usize,
}

impl Lstm {
    pub fn new<F: Real>(store: &mut ParamStore<F>, rng: &mut Rng, name: &str, d_in: usize, d_h: usize) -> Self {
        let w_ih = store.add(format!("{name}.w_ih"), xavier_uniform(rng, d_in, 4 * d_h));
        let w_hh = store.add(format!("{name}.w_hh"), xavier_uniform(rng, d_h, 4 * d_h));
        let mut bias = Tensor::zeros(&[4 * d_h]);
        for v in &mut bias.data_mut()[d_h..2 * d_h] {
            *v = F::lit(FORGET_BIAS);
        }
        let b = store.add(format!("{name}.b"), bias);
        Self { w_ih, w_hh, b, d_in, d_h }
    }

    pub fn step<F: Real>(&self, g: &mut Graph<'_, F>, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let w_ih = g.param(self.w_ih);
        let w_hh = g.param(self.w_hh);
        let b = g.param(self.b);
        lstm_cell(g, x, h, c, w_ih, w_hh, b)
    }
}

/// One LSTM step on arbitrary nodes: `c' = f⊙c + i⊙g`, `h' = o⊙tanh(c')`.
pub fn lstm_cell<F: Real>(
    g: &mut Graph<'_, F>,
    x: Var,
    h: Var,
    c: Var,
    w_ih: Var,
    w_hh: Var,
    b: Var,
) -> Result<(Var, Var)> {
    let d_h = g.value(h).len();
    let (wi, wh) = (g.shape(w_ih).to_vec(), g.shape(w_hh).to_vec());
    let d_in = g.value(x).len();
    if g.value(x).rank() != 1
        || wi != [d_in, 4 * d_h]
        || wh != [d_h, 4 * d_h]
        || g.value(c).len() != d_h
        || g.value(b).len() != 4 * d_h
    {
        return Err(CnmError::dim("lstm_step", &[d_in, d_h], &wi));
    }
    let xi = g.matmul(x, w_ih)?;
    let hh = g.matmul(h, w_hh)?;
    let pre = g.add(xi, hh)?;
    let pre = g.add(pre, b)?;
    let i_pre = g.slice(pre, 0, d_h)?;
    let f_pre = g.slice(pre, d_h, d_h)?;
    let g_pre = g.slice(pre, 2 * d_h, d_h)?;
    let o_pre = g.slice(pre, 3 * d_h, d_h)?;
    let i = g.sigmoid(i_pre);
    let f = g.sigmoid(f_pre);
    let cand = g.tanh(g_pre);
    let o = g.sigmoid(o_pre);
    let fc = g.mul(f, c)?;
    let ig = g.mul(i, cand)?;
    let c_next = g.add(fc, ig)?;
    let tc = g.tanh(c_next);
    let h_next = g.mul(o, tc)?;
    Ok((h_next, c_next))
}

/// Plain-tensor LSTM step, for callers outside a training graph.
pub fn lstm_step<F: Real>(
    x: &Tensor<F>,
    h: &Tensor<F>,
    c: &Tensor<F>,
    w_ih: &Tensor<F>,
    w_hh: &Tensor<F>,
    b: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>)> {
    let mut g = Graph::detached();
    let vars = [x, h, c, w_ih, w_hh, b].map(|t| g.constant(t.clone()));
    let (h2, c2) = lstm_cell(&mut g, vars[0], vars[1], vars[2], vars[3], vars[4], vars[5])?;
    Ok((g.value(h2).clone(), g.value(c2).clone()))
}
