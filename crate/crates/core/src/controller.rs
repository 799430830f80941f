//! Module controller: additive attention over each visual feature set, the
//! LSTM that emits the four fusion weights, weighted fusion, and the
//! linguistic loss that supervises those weights with POS-derived labels.

use crate::config::FusionStrategy;
use crate::error::{CnmError, Result};
use crate::labels::{ModuleKind, ModuleLabel};
use crate::nn::{Linear, Lstm, Projection};
use crate::tensor::init::xavier_vector;
use crate::tensor::rng::Rng;
use crate::tensor::{argmax, Graph, ParamId, ParamStore, Real, Tensor, Var};

/// Clamp for `log w` in the linguistic loss.
pub const LOG_EPS: f64 = 1e-12;

/// `a_n = w_aᵀ tanh(W_v v_n + W_h h)`.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub w_a: ParamId,
    pub w_v: Projection,
    pub w_h: Projection,
    pub d_a: usize,
}

impl AttentionParams {
    pub fn new<F: Real>(store: &mut ParamStore<F>, rng: &mut Rng, name: &str, d_v: usize, d_c: usize, d_a: usize) -> Self {
        let w_v = Projection::new(store, rng, &format!("{name}.w_v"), d_v, d_a);
        let w_h = Projection::new(store, rng, &format!("{name}.w_h"), d_c, d_a);
        let w_a = store.add(format!("{name}.w_a"), xavier_vector(rng, d_a));
        Self { w_a, w_v, w_h, d_a }
    }
}

/// Attention distribution over the `N` rows of `v` and the attended vector.
pub fn additive_attention<F: Real>(
    g: &mut Graph<'_, F>,
    p: &AttentionParams,
    v: Var,
    h: Var,
) -> Result<(Var, Var)> {
    let vt = g.value(v);
    if vt.rank() != 2 || vt.cols() != p.w_v.d_in {
        return Err(CnmError::dim("additive_attention", vt.shape(), &[p.w_v.d_in]));
    }
    let proj_v = p.w_v.forward(g, v)?;
    let proj_h = p.w_h.forward(g, h)?;
    let pre = g.add_row(proj_v, proj_h)?;
    let act = g.tanh(pre);
    let w_a = g.param(p.w_a);
    let w_col = g.reshape(w_a, &[p.d_a, 1])?;
    let scores = g.matmul(act, w_col)?;
    let n = g.value(scores).rows();
    let scores = g.reshape(scores, &[n])?;
    let alpha = g.softmax(scores)?;
    let attended = g.matmul(alpha, v)?;
    Ok((alpha, attended))
}

/// `LSTM_C` over `Concat(v̂_O, v̂_A, v̂_R, c)` followed by a 4-way logit head.
#[derive(Clone, Debug)]
pub struct Controller {
    pub lstm: Lstm,
    pub logits: Linear,
}

impl Controller {
    pub fn new<F: Real>(store: &mut ParamStore<F>, rng: &mut Rng, name: &str, d_v: usize, d_c: usize) -> Self {
        Self {
            lstm: Lstm::new(store, rng, &format!("{name}.lstm"), 3 * d_v + d_c, d_c),
            logits: Linear::new(store, rng, &format!("{name}.logits"), d_c, 4),
        }
    }
}

/// Hidden and cell vectors of `LSTM_C`.
#[derive(Clone, Copy, Debug)]
pub struct ControllerState {
    pub h: Var,
    pub c: Var,
}

/// Noise source for the HARD strategy. `Pinned` draws zero noise, reducing
/// the Gumbel one-hot to a plain argmax.
pub enum GumbelNoise<'r> {
    Pinned,
    Sampled(&'r mut Rng),
}

impl GumbelNoise<'_> {
    pub fn draw(&mut self, n: usize) -> Vec<f64> {
        match self {
            GumbelNoise::Pinned => vec![0.0; n],
            GumbelNoise::Sampled(rng) => (0..n).map(|_| rng.gumbel()).collect(),
        }
    }

    pub fn reborrow(&mut self) -> GumbelNoise<'_> {
        match self {
            GumbelNoise::Pinned => GumbelNoise::Pinned,
            GumbelNoise::Sampled(rng) => GumbelNoise::Sampled(rng),
        }
    }
}

/// Straight-through Gumbel-Softmax: one-hot forward, softmax backward.
pub fn gumbel_straight_through<F: Real>(
    g: &mut Graph<'_, F>,
    logits: Var,
    tau: f64,
    noise: &mut GumbelNoise<'_>,
) -> Result<Var> {
    let n = g.value(logits).len();
    let eps = noise.draw(n);
    let noise_var = g.constant(Tensor::vector(eps.iter().map(|&e| F::lit(e)).collect()));
    let perturbed = g.add(logits, noise_var)?;
    let scaled = g.scale(perturbed, F::lit(1.0 / tau));
    let soft = g.softmax(scaled)?;
    let k = argmax(g.value(perturbed).data());
    let mut hard = Tensor::zeros(&[n]);
    hard.data_mut()[k] = F::one();
    g.straight_through(soft, hard)
}

/// One controller step. `UNIFORM` and single-module strategies bypass the
/// LSTM and leave the state untouched.
#[allow(clippy::too_many_arguments)]
pub fn controller_step<F: Real>(
    g: &mut Graph<'_, F>,
    ctrl: &Controller,
    strategy: FusionStrategy,
    tau: f64,
    attended: [Var; 3],
    context: Var,
    state: ControllerState,
    noise: &mut GumbelNoise<'_>,
) -> Result<(Var, ControllerState)> {
    match strategy {
        FusionStrategy::Uniform => Ok((g.constant(Tensor::full(&[4], F::one())), state)),
        FusionStrategy::Single(k) => {
            let mut w = Tensor::zeros(&[4]);
            w.data_mut()[k.index()] = F::one();
            Ok((g.constant(w), state))
        }
        FusionStrategy::Soft | FusionStrategy::Hard => {
            let x = g.concat(&[attended[0], attended[1], attended[2], context])?;
            let (h, c) = ctrl.lstm.step(g, x, state.h, state.c)?;
            let logits = ctrl.logits.forward(g, h)?;
            let w = if strategy == FusionStrategy::Soft {
                g.softmax(logits)?
            } else {
                gumbel_straight_through(g, logits, tau, noise)?
            };
            Ok((w, ControllerState { h, c }))
        }
    }
}

/// `Concat(w_O v̂_O, w_A v̂_A, w_R v̂_R, w_F v̂_F)`.
pub fn fuse<F: Real>(g: &mut Graph<'_, F>, w: Var, features: [Var; 4]) -> Result<Var> {
    let d = g.value(features[0]).len();
    if g.value(w).len() != 4 || features.iter().any(|&f| g.value(f).len() != d) {
        return Err(CnmError::dim("fuse", g.shape(w), g.shape(features[0])));
    }
    let mut blocks = [features[0]; 4];
    for (k, &f) in features.iter().enumerate() {
        let wk = g.index(w, k)?;
        blocks[k] = g.scale_by(wk, f)?;
    }
    g.concat(&blocks)
}

/// `−log w_j` for the gold module `j`, with `w_j` clamped at [`LOG_EPS`].
pub fn linguistic_loss<F: Real>(g: &mut Graph<'_, F>, w: Var, gold: ModuleLabel) -> Result<Var> {
    let wj = g.index(w, gold.index())?;
    let lw = g.log_clamped(wj, F::lit(LOG_EPS));
    Ok(g.neg(lw))
}

/// Plain-value form of [`linguistic_loss`].
pub fn linguistic_loss_value(w: &[f64; 4], gold: ModuleLabel) -> f64 {
    -w[gold.index()].max(LOG_EPS).ln()
}

/// Plain-value form of [`fuse`].
pub fn fuse_values(w: &[f64; 4], features: [&[f64]; 4]) -> Vec<f64> {
    features
        .iter()
        .zip(w)
        .flat_map(|(f, &wk)| f.iter().map(move |&x| wk * x))
        .collect()
}

/// Module with the largest weight; the lowest index wins ties.
pub fn dominant_module(w: &[f64]) -> ModuleKind {
    ModuleKind::from_index(argmax(w)).expect("four weights")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attention_fixture(d_v: usize, d_c: usize, d_a: usize) -> (ParamStore<f64>, AttentionParams) {
        let mut store = ParamStore::new();
        let p = AttentionParams::new(&mut store, &mut Rng::new(11), "att", d_v, d_c, d_a);
        (store, p)
    }

    #[test]
    fn single_region_attends_fully() {
        let (store, p) = attention_fixture(3, 2, 4);
        let mut g = Graph::new(&store);
        let v = g.constant(Tensor::from_rows(&[vec![0.4, -1.0, 2.0]]).unwrap());
        let h = g.constant(Tensor::vector(vec![0.3, 0.9]));
        let (alpha, att) = additive_attention(&mut g, &p, v, h).unwrap();
        assert_eq!(g.value(alpha).data(), &[1.0]);
        assert_eq!(g.value(att).data(), &[0.4, -1.0, 2.0]);
    }

    #[test]
    fn zero_w_a_gives_uniform_attention() {
        let (mut store, p) = attention_fixture(2, 2, 3);
        *store.get_mut(p.w_a) = Tensor::zeros(&[3]);
        let mut g = Graph::new(&store);
        let v = g.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![3.0, 2.0], vec![-1.0, 4.0]]).unwrap());
        let h = g.constant(Tensor::vector(vec![0.5, -0.5]));
        let (alpha, att) = additive_attention(&mut g, &p, v, h).unwrap();
        for a in g.value(alpha).data() {
            assert!((a - 1.0 / 3.0).abs() < 1e-12);
        }
        let att = g.value(att).data();
        assert!((att[0] - 1.0).abs() < 1e-12 && (att[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn identical_rows_attend_to_that_row() {
        let (store, p) = attention_fixture(2, 2, 3);
        let mut g = Graph::new(&store);
        let v = g.constant(Tensor::from_rows(&vec![vec![0.25, -0.5]; 4]).unwrap());
        let h = g.constant(Tensor::vector(vec![1.0, 2.0]));
        let (_, att) = additive_attention(&mut g, &p, v, h).unwrap();
        for (a, b) in g.value(att).data().iter().zip([0.25, -0.5]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn controller_fixture(zero_logits: bool) -> (ParamStore<f64>, Controller) {
        let mut store = ParamStore::new();
        let ctrl = Controller::new(&mut store, &mut Rng::new(2), "ctrl", 2, 2);
        if zero_logits {
            *store.get_mut(ctrl.logits.w) = Tensor::zeros(&[2, 4]);
        }
        (store, ctrl)
    }

    fn run_controller(store: &ParamStore<f64>, ctrl: &Controller, strategy: FusionStrategy) -> Vec<f64> {
        let mut g = Graph::new(store);
        let vs = [0.1, 0.2, 0.3].map(|x| g.constant(Tensor::vector(vec![x, -x])));
        let c = g.constant(Tensor::vector(vec![0.5, 0.5]));
        let st = ControllerState {
            h: g.constant(Tensor::zeros(&[2])),
            c: g.constant(Tensor::zeros(&[2])),
        };
        let (w, _) = controller_step(&mut g, ctrl, strategy, 1.0, vs, c, st, &mut GumbelNoise::Pinned).unwrap();
        g.value(w).data().to_vec()
    }

    #[test]
    fn uniform_is_all_ones() {
        let (store, ctrl) = controller_fixture(false);
        assert_eq!(run_controller(&store, &ctrl, FusionStrategy::Uniform), vec![1.0; 4]);
    }

    #[test]
    fn soft_with_zero_logits_is_quarter() {
        let (store, ctrl) = controller_fixture(true);
        assert_eq!(run_controller(&store, &ctrl, FusionStrategy::Soft), vec![0.25; 4]);
    }

    #[test]
    fn hard_with_pinned_noise_is_argmax() {
        let (mut store, ctrl) = controller_fixture(true);
        *store.get_mut(ctrl.logits.b) = Tensor::vector(vec![0.1, 0.7, -0.3, 0.2]);
        assert_eq!(run_controller(&store, &ctrl, FusionStrategy::Hard), vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn fuse_masks_and_concatenates() {
        let f = [[1.0, 2.0], [3.0, 4.0], [5.0, 6.0], [7.0, 8.0]];
        let refs = f.each_ref().map(|x| x.as_slice());
        assert_eq!(fuse_values(&[1.0, 0.0, 0.0, 0.0], refs), vec![1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(fuse_values(&[1.0; 4], refs), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        assert_eq!(fuse_values(&[0.0; 4], refs), vec![0.0; 8]);

        let mut g = Graph::<f64>::detached();
        let w = g.constant(Tensor::vector(vec![0.0, 0.0, 1.0, 0.0]));
        let vars = f.map(|x| g.constant(Tensor::vector(x.to_vec())));
        let out = fuse(&mut g, w, vars).unwrap();
        assert_eq!(g.value(out).data(), &[0.0, 0.0, 0.0, 0.0, 5.0, 6.0, 0.0, 0.0]);
    }

    #[test]
    fn fuse_rejects_ragged_features() {
        let mut g = Graph::<f64>::detached();
        let w = g.constant(Tensor::vector(vec![0.25; 4]));
        let a = g.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = g.constant(Tensor::vector(vec![1.0]));
        assert!(fuse(&mut g, w, [a, a, a, b]).is_err());
    }

    #[test]
    fn linguistic_loss_examples() {
        let l = linguistic_loss_value(&[0.25; 4], ModuleKind::Object);
        assert!((l - 4f64.ln()).abs() < 1e-12);
        assert!((l - 1.386294).abs() < 1e-6);
        let l = linguistic_loss_value(&[0.97, 0.01, 0.01, 0.01], ModuleKind::Object);
        assert!((l - 0.030459).abs() < 1e-6);
        let l = linguistic_loss_value(&[0.0, 1.0, 0.0, 0.0], ModuleKind::Object);
        assert!(l.is_finite());
        assert!((l - (-(LOG_EPS.ln()))).abs() < 1e-9);
        let mut prev = f64::INFINITY;
        for wj in [0.1, 0.3, 0.6, 0.9, 0.999, 1.0] {
            let rest = (1.0 - wj) / 3.0;
            let l = linguistic_loss_value(&[rest, rest, wj, rest], ModuleKind::Relation);
            assert!(l < prev && l >= 0.0);
            prev = l;
        }
        assert_eq!(prev, 0.0);
    }
}
