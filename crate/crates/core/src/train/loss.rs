use crate::controller::{linguistic_loss, GumbelNoise, LOG_EPS};
use crate::error::{CnmError, Result};
use crate::labels::ModuleLabel;
use crate::model::{CnmModel, EncodedImage};
use crate::tensor::{argmax, Graph, Real, Var};

/// Summed and per-token cross-entropy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct XeLoss {
    pub sum: f64,
    pub mean: f64,
}

/// `−Σ_t log max(P_t(gold_t), ε)` over explicit distributions.
pub fn xe_loss(dists: &[Vec<f64>], gold: &[usize]) -> Result<XeLoss> {
    if dists.len() != gold.len() || gold.is_empty() {
        return Err(CnmError::Argument(format!(
            "{} distributions for {} gold tokens",
            dists.len(),
            gold.len()
        )));
    }
    let mut sum = 0.0;
    for (d, &t) in dists.iter().zip(gold) {
        let p = *d
            .get(t)
            .ok_or_else(|| CnmError::Argument(format!("gold token {t} outside distribution")))?;
        sum -= p.max(LOG_EPS).ln();
    }
    Ok(XeLoss {
        sum,
        mean: sum / gold.len() as f64,
    })
}

/// `L_lan + λ L_lin`.
pub fn total_loss(l_lan: f64, l_lin: f64, lambda: f64) -> f64 {
    l_lan + lambda * l_lin
}

/// Self-critical advantage `r(sample) − r(greedy)`.
pub fn scst_advantage(r_sample: f64, r_greedy: f64) -> f64 {
    r_sample - r_greedy
}

/// `−A · Σ_t log P(s_t)`, given the summed log-probability node.
pub fn scst_loss<F: Real>(g: &mut Graph<'_, F>, sum_log_prob: Var, advantage: f64) -> Var {
    g.scale(sum_log_prob, F::lit(-advantage))
}

/// Nodes of one teacher-forced pass.
pub struct TeacherForced {
    /// `Σ_t −log P(s_t*)`.
    pub xe: Var,
    /// Linguistic loss averaged over steps and units, when labels are given
    /// and the strategy has a controller.
    pub lin: Option<Var>,
    pub predictions: Vec<usize>,
    /// Fusion weights per step and unit.
    pub weights: Vec<Vec<Var>>,
}

/// Feed `tokens[t]` and score `tokens[t + 1]` for every step.
pub fn teacher_forced<F: Real>(
    g: &mut Graph<'_, F>,
    model: &CnmModel<F>,
    enc: &EncodedImage,
    tokens: &[usize],
    labels: Option<&[ModuleLabel]>,
    noise: &mut GumbelNoise<'_>,
) -> Result<TeacherForced> {
    if tokens.len() < 2 {
        return Err(CnmError::Argument("a caption needs at least one token after begin".into()));
    }
    if let Some(l) = labels {
        if l.len() != tokens.len() - 1 {
            return Err(CnmError::Argument(format!(
                "{} labels for {} predicted tokens",
                l.len(),
                tokens.len() - 1
            )));
        }
    }
    let use_lin = labels.is_some() && model.config.strategy.uses_controller();
    let mut state = model.initial_state(g);
    let mut nll = Vec::with_capacity(tokens.len() - 1);
    let mut lin = Vec::new();
    let mut predictions = Vec::with_capacity(tokens.len() - 1);
    let mut weights = Vec::with_capacity(tokens.len() - 1);
    for t in 0..tokens.len() - 1 {
        let out = model.stack_step(g, enc, tokens[t], &state, &mut noise.reborrow())?;
        predictions.push(argmax(g.value(out.log_probs).data()));
        nll.push(g.index(out.log_probs, tokens[t + 1])?);
        if use_lin {
            let gold = labels.expect("checked above")[t];
            for u in &out.units {
                lin.push(linguistic_loss(g, u.weights, gold)?);
            }
        }
        weights.push(out.units.iter().map(|u| u.weights).collect());
        state = out.state;
    }
    let sum_lp = g.add_all(&nll)?;
    let xe = g.neg(sum_lp);
    let lin = if use_lin {
        let s = g.add_all(&lin)?;
        Some(g.scale(s, F::lit(1.0 / lin.len() as f64)))
    } else {
        None
    };
    Ok(TeacherForced {
        xe,
        lin,
        predictions,
        weights,
    })
}
