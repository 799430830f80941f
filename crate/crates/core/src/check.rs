//! Tape-versus-finite-difference gradient checks.
//!
//! Every case stores its differentiable tensors in a [`ParamStore`], builds a
//! scalar loss from them, and compares the reverse sweep against central
//! differences taken by perturbing the store.

use serde::{Deserialize, Serialize};

use crate::config::{FusionStrategy, ModelConfig};
use crate::controller::GumbelNoise;
use crate::corpus::BOS;
use crate::error::{CnmError, Result};
use crate::labels::ModuleLabel;
use crate::model::CnmModel;
use crate::tensor::gradcheck::relative_error;
use crate::tensor::init::gaussian;
use crate::tensor::{ParamId, ParamStore};
use crate::tensor::rng::Rng;
use crate::tensor::{Graph, Tensor, Var};
use crate::train::teacher_forced;

pub const FD_EPS: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCase {
    pub name: String,
    pub scalars: usize,
    pub max_rel_error: f64,
    /// Coordinate with the largest error, as `name[i]: tape vs numeric`.
    pub worst: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    pub eps: f64,
    pub tolerance: f64,
    pub max_rel_error: f64,
    pub passed: bool,
    pub cases: Vec<GradCase>,
}

impl GradReport {
    fn new(cases: Vec<GradCase>) -> Self {
        let max_rel_error = cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
        Self {
            eps: FD_EPS,
            tolerance: TOLERANCE,
            max_rel_error,
            passed: max_rel_error < TOLERANCE && cases.iter().all(|c| c.max_rel_error.is_finite()),
            cases,
        }
    }
}

/// Compare tape gradients of `loss` with central differences over every
/// scalar in `store`.
pub fn check_store(
    name: &str,
    store: &ParamStore<f64>,
    loss: impl Fn(&mut Graph<'_, f64>) -> Result<Var>,
) -> Result<GradCase> {
    let mut g = Graph::new(store);
    let l = loss(&mut g)?;
    if g.value(l).len() != 1 {
        return Err(CnmError::Argument(format!("{name}: loss is not a scalar")));
    }
    let grads = g.backward(l)?;
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new(s);
        let l = loss(&mut g)?;
        Ok(g.value(l).item())
    };
    let mut probe = store.clone();
    let mut worst = 0.0f64;
    let mut scalars = 0;
    let mut worst_at = None;
    for id in store.ids() {
        let tape: Vec<f64> = match grads.param(id) {
            Some(gr) => gr.to_vec(),
            None => vec![0.0; store.get(id).len()],
        };
        for (i, &analytic) in tape.iter().enumerate() {
            let orig = store.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = orig + FD_EPS;
            let up = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig - FD_EPS;
            let down = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_EPS);
            let e = relative_error(analytic, numeric);
            if e.is_nan() || e > worst {
                worst = if e.is_nan() { f64::NAN } else { e };
                worst_at = Some(format!("{}[{i}]: {analytic:.6e} vs {numeric:.6e}", store.name(id)));
            }
            scalars += 1;
        }
    }
    Ok(GradCase {
        name: name.to_string(),
        scalars,
        max_rel_error: worst,
        worst: worst_at,
    })
}

/// Gaussian tensor with every entry at least `gap` away from zero, so that
/// kinked primitives are never probed across their kink.
fn away_from_zero(rng: &mut Rng, shape: &[usize], gap: f64) -> Tensor<f64> {
    gaussian::<f64>(rng, shape, 1.0).map(|x| if x.abs() < gap { x.signum() * gap + x } else { x })
}

/// `Σ out ⊙ W` with fixed random `W`, turning any node into a scalar whose
/// gradient reaches every output element.
fn project(g: &mut Graph<'_, f64>, out: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(out).to_vec();
    let w = gaussian(&mut Rng::derive(seed, 77), &shape, 1.0);
    let w = g.constant(w);
    let p = g.mul(out, w)?;
    Ok(g.sum(p))
}

type Build = fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>;

fn primitive_table() -> Vec<(&'static str, Vec<Vec<usize>>, Build)> {
    let m23 = vec![2, 3];
    vec![
        ("matmul", vec![m23.clone(), vec![3, 4]], |g, v| g.matmul(v[0], v[1])),
        ("matmul_vector", vec![vec![3], vec![3, 4]], |g, v| g.matmul(v[0], v[1])),
        ("add", vec![m23.clone(), m23.clone()], |g, v| g.add(v[0], v[1])),
        ("sub", vec![m23.clone(), m23.clone()], |g, v| g.sub(v[0], v[1])),
        ("mul", vec![m23.clone(), m23.clone()], |g, v| g.mul(v[0], v[1])),
        ("add_row", vec![m23.clone(), vec![3]], |g, v| g.add_row(v[0], v[1])),
        ("scale", vec![m23.clone()], |g, v| Ok(g.scale(v[0], -0.7))),
        ("neg", vec![m23.clone()], |g, v| Ok(g.neg(v[0]))),
        ("scale_by", vec![vec![1], m23.clone()], |g, v| g.scale_by(v[0], v[1])),
        ("sigmoid", vec![m23.clone()], |g, v| Ok(g.sigmoid(v[0]))),
        ("tanh", vec![m23.clone()], |g, v| Ok(g.tanh(v[0]))),
        ("relu", vec![m23.clone()], |g, v| Ok(g.relu(v[0]))),
        ("leaky_relu", vec![m23.clone()], |g, v| Ok(g.leaky_relu(v[0], 0.1))),
        ("softmax_vector", vec![vec![5]], |g, v| g.softmax(v[0])),
        ("softmax_rows", vec![m23.clone()], |g, v| g.softmax(v[0])),
        ("log_softmax", vec![vec![5]], |g, v| Ok(g.log_softmax(v[0]))),
        ("log_clamped", vec![vec![4]], |g, v| {
            let s = g.sigmoid(v[0]);
            Ok(g.log_clamped(s, 1e-12))
        }),
        ("concat", vec![vec![3], vec![2]], |g, v| g.concat(&[v[0], v[1]])),
        ("slice", vec![vec![6]], |g, v| g.slice(v[0], 1, 3)),
        ("mean_rows", vec![m23.clone()], |g, v| g.mean_rows(v[0])),
        ("sum", vec![m23.clone()], |g, v| Ok(g.sum(v[0]))),
        ("add_all", vec![vec![1], vec![1], vec![1]], |g, v| g.add_all(v)),
        ("transpose", vec![m23.clone()], |g, v| Ok(g.transpose(v[0]))),
        ("reshape", vec![m23.clone()], |g, v| g.reshape(v[0], &[3, 2])),
        ("row", vec![m23.clone()], |g, v| g.row(v[0], 1)),
        ("index", vec![vec![4]], |g, v| g.index(v[0], 2)),
        ("linear", vec![m23.clone(), vec![3, 4], vec![4]], |g, v| g.linear(v[0], v[1], v[2])),
        ("lstm_cell", vec![vec![3], vec![2], vec![2], vec![3, 8], vec![2, 8], vec![8]], |g, v| {
            let (h, c) = crate::nn::lstm_cell(g, v[0], v[1], v[2], v[3], v[4], v[5])?;
            g.concat(&[h, c])
        }),
    ]
}

/// One case per differentiable primitive.
pub fn primitive_cases(seed: u64) -> Result<Vec<GradCase>> {
    let mut out = Vec::new();
    for (k, (name, shapes, build)) in primitive_table().into_iter().enumerate() {
        let mut rng = Rng::derive(seed, k as u64);
        let mut store = ParamStore::new();
        let ids: Vec<ParamId> = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| store.add(format!("x{i}"), away_from_zero(&mut rng, s, 0.05)))
            .collect();
        out.push(check_store(name, &store, |g| {
            let vars: Vec<Var> = ids.iter().map(|&id| g.param(id)).collect();
            let y = build(g, &vars)?;
            project(g, y, seed ^ k as u64)
        })?);
    }
    Ok(out)
}

/// A random chain of smooth ops over a `rows×cols` state plus side inputs.
pub fn composite_case(seed: u64) -> Result<GradCase> {
    let mut rng = Rng::derive(seed, 500);
    let rows = 1 + rng.below(3);
    let cols = 2 + rng.below(3);
    let depth = 3 + rng.below(5);
    let ops: Vec<usize> = (0..depth).map(|_| rng.below(9)).collect();
    let mut store = ParamStore::new();
    let x = store.add("x", gaussian(&mut rng, &[rows, cols], 1.0));
    let w = store.add("w", gaussian(&mut rng, &[cols, cols], 0.6));
    let b = store.add("b", gaussian(&mut rng, &[cols], 0.5));
    let y = store.add("y", gaussian(&mut rng, &[rows, cols], 1.0));
    let name = format!("composite[{seed}] {rows}x{cols} ops={ops:?}");
    check_store(&name, &store, |g| {
        let (w, b, y) = (g.param(w), g.param(b), g.param(y));
        let mut h = g.param(x);
        for &op in &ops {
            h = match op {
                0 => g.tanh(h),
                1 => g.sigmoid(h),
                2 => g.softmax(h)?,
                3 => g.linear(h, w, b)?,
                4 => g.mul(h, y)?,
                5 => g.add(h, y)?,
                6 => {
                    let t = g.transpose(h);
                    let t = g.scale(t, 0.5);
                    g.transpose(t)
                }
                7 => {
                    let m = g.mean_rows(h)?;
                    let neg = g.neg(m);
                    g.add_row(h, neg)?
                }
                _ => {
                    let s = g.log_softmax(h);
                    g.scale(s, 0.3)
                }
            };
        }
        project(g, h, seed)
    })
}

/// Small-width model used for the full decoder check.
pub fn tiny_model_config(strategy: FusionStrategy, units: usize) -> ModelConfig {
    ModelConfig {
        d_r: 4,
        d_v: 4,
        d_c: 4,
        d_a: 3,
        heads: 2,
        units,
        vocab_size: 6,
        strategy,
        leaky_slope: 0.01,
        gumbel_tau: 1.0,
    }
}

/// Two teacher-forced decoder steps over two regions: token cross-entropy
/// plus the linguistic loss of every unit, differentiated with respect to
/// every model parameter.
pub fn decoder_case(strategy: FusionStrategy, units: usize, seed: u64) -> Result<GradCase> {
    let mut model = CnmModel::<f64>::new(tiny_model_config(strategy, units), seed)?;
    let mut rng = Rng::derive(seed, 600);
    // Zero-initialised biases put LeakyReLU inputs exactly on the kink at
    // the first step; jitter every parameter off the initialisation.
    for id in model.params.ids().collect::<Vec<_>>() {
        for v in model.params.get_mut(id).data_mut() {
            *v += 0.1 * rng.gaussian();
        }
    }
    let r_o = gaussian::<f64>(&mut rng, &[2, 4], 1.0);
    let r_a = gaussian::<f64>(&mut rng, &[2, 4], 1.0);
    let tokens = [BOS, 4, 5];
    let labels = [ModuleLabel::Object, ModuleLabel::Function];
    let lin = strategy.supports_linguistic_loss();
    let name = format!("decoder_step {strategy:?} M={units}");
    check_store(&name, &model.params, |g| {
        let enc = model.encode(g, &r_o, &r_a)?;
        let tf = teacher_forced(g, &model, &enc, &tokens, lin.then_some(&labels[..]), &mut GumbelNoise::Pinned)?;
        match tf.lin {
            Some(l) => g.add(tf.xe, l),
            None => Ok(tf.xe),
        }
    })
}

/// Every primitive, `n_composites` random chains and the full `M = 2`
/// decoder under the SOFT and UNIFORM strategies.
pub fn run_suite(seed: u64, n_composites: usize) -> Result<GradReport> {
    let mut cases = primitive_cases(seed)?;
    for k in 0..n_composites {
        cases.push(composite_case(seed.wrapping_mul(1000).wrapping_add(k as u64))?);
    }
    cases.push(decoder_case(FusionStrategy::Soft, 2, seed)?);
    cases.push(decoder_case(FusionStrategy::Uniform, 2, seed)?);
    Ok(GradReport::new(cases))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitives_pass() {
        for c in primitive_cases(3).unwrap() {
            assert!(c.max_rel_error < TOLERANCE, "{c:?}");
        }
    }

    #[test]
    fn a_wrong_gradient_is_caught() {
        // The straight-through op reports the soft gradient for a hard
        // forward, so finite differences must disagree.
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::vector(vec![0.3, -0.2, 0.9]));
        let c = check_store("st", &store, |g| {
            let v = g.param(x);
            let s = g.softmax(v)?;
            let hard = Tensor::vector(vec![0.0, 0.0, 1.0]);
            let st = g.straight_through(s, hard)?;
            let w = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
            let p = g.mul(st, w)?;
            Ok(g.sum(p))
        })
        .unwrap();
        assert!(c.max_rel_error > 0.5);
    }

    #[test]
    fn decoder_step_passes() {
        let c = decoder_case(FusionStrategy::Soft, 2, 1).unwrap();
        assert!(c.scalars > 500);
        assert!(c.max_rel_error < TOLERANCE, "{c:?}");
    }
}
