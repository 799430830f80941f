//! OBJECT, ATTRIBUTE, RELATION and FUNCTION modules.
//!
//! OBJECT and ATTRIBUTE are row-wise `LeakyReLU(FC(R))`. RELATION is
//! multi-head self-attention over the object RoIs, a concatenation
//! projection, then `LeakyReLU(FC2(ReLU(FC1(M))))`. FUNCTION maps the decoder
//! context through `LeakyReLU(FC(c))`.

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{CnmError, Result};
use crate::labels::ModuleKind;
use crate::nn::{Linear, Projection};
use crate::tensor::rng::Rng;
use crate::tensor::{Graph, ParamStore, Real, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoiRole {
    /// Features from an object-detection backbone.
    Object,
    /// Features from an attribute-classification backbone.
    Attribute,
}

/// `N×d_r` region features.
#[derive(Clone, Debug, PartialEq)]
pub struct RoiFeatureSet<F = f32> {
    features: Tensor<F>,
    role: RoiRole,
}

impl<F: Real> RoiFeatureSet<F> {
    pub fn new(features: Tensor<F>, role: RoiRole) -> Result<Self> {
        if features.rank() != 2 {
            return Err(CnmError::Argument(format!(
                "RoI features must be N×d_r, got {:?}",
                features.shape()
            )));
        }
        if !features.is_finite() {
            return Err(CnmError::Argument("RoI features must be finite".into()));
        }
        Ok(Self { features, role })
    }

    pub fn features(&self) -> &Tensor<F> {
        &self.features
    }

    pub fn role(&self) -> RoiRole {
        self.role
    }

    pub fn regions(&self) -> usize {
        self.features.rows()
    }

    pub fn cast<G: Real>(&self) -> RoiFeatureSet<G> {
        RoiFeatureSet {
            features: self.features.cast(),
            role: self.role,
        }
    }
}

/// `N×d_v` output of one visual module.
#[derive(Clone, Debug, PartialEq)]
pub struct ModuleFeatureSet<F = f32> {
    pub kind: ModuleKind,
    pub features: Tensor<F>,
}

/// Self-attention and feed-forward parameters of the RELATION module.
#[derive(Clone, Debug)]
pub struct RelationParams {
    /// Per head: query, key and value projections, each `d_r×d_k`.
    pub heads: Vec<[Projection; 3]>,
    pub w_c: Projection,
    pub fc1: Linear,
    pub fc2: Linear,
    pub d_k: usize,
}

impl RelationParams {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        rng: &mut Rng,
        name: &str,
        d_r: usize,
        d_v: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || !d_r.is_multiple_of(heads) {
            return Err(CnmError::Config(format!(
                "d_r = {d_r} is not divisible by {heads} heads"
            )));
        }
        let d_k = d_r / heads;
        let heads = (0..heads)
            .map(|i| {
                [1, 2, 3].map(|j| Projection::new(store, rng, &format!("{name}.head{i}.w{j}"), d_r, d_k))
            })
            .collect();
        let w_c = Projection::new(store, rng, &format!("{name}.w_c"), d_r, d_r);
        let fc1 = Linear::new(store, rng, &format!("{name}.fc1"), d_r, d_r);
        let fc2 = Linear::new(store, rng, &format!("{name}.fc2"), d_r, d_v);
        Ok(Self {
            heads,
            w_c,
            fc1,
            fc2,
            d_k,
        })
    }
}

/// Encoder parameters shared by every decoder unit.
#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub object: Linear,
    pub attribute: Linear,
    pub relation: RelationParams,
}

impl EncoderParams {
    pub fn new<F: Real>(store: &mut ParamStore<F>, rng: &mut Rng, cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            object: Linear::new(store, rng, "enc.object", cfg.d_r, cfg.d_v),
            attribute: Linear::new(store, rng, "enc.attribute", cfg.d_r, cfg.d_v),
            relation: RelationParams::new(store, rng, "enc.relation", cfg.d_r, cfg.d_v, cfg.heads)?,
        })
    }
}

fn check_width<F: Real>(g: &Graph<'_, F>, r: Var, d_in: usize) -> Result<()> {
    let t = g.value(r);
    if t.rank() != 2 || t.cols() != d_in {
        return Err(CnmError::Config(format!(
            "RoI width {:?} does not match configured d_r = {d_in}",
            t.shape()
        )));
    }
    Ok(())
}

/// `LeakyReLU(FC(R))` row by row. Serves both OBJECT and ATTRIBUTE.
pub fn rowwise_module<F: Real>(g: &mut Graph<'_, F>, fc: &Linear, slope: F, r: Var) -> Result<Var> {
    check_width(g, r, fc.d_in)?;
    let z = fc.forward(g, r)?;
    Ok(g.leaky_relu(z, slope))
}

/// RELATION module output plus each head's `N×N` attention matrix.
pub fn relation_module<F: Real>(
    g: &mut Graph<'_, F>,
    p: &RelationParams,
    slope: F,
    r: Var,
) -> Result<(Var, Vec<Var>)> {
    check_width(g, r, p.fc1.d_in)?;
    let inv_sqrt = F::one() / F::lit(p.d_k as f64).sqrt();
    let mut outs = Vec::with_capacity(p.heads.len());
    let mut maps = Vec::with_capacity(p.heads.len());
    for [wq, wk, wv] in &p.heads {
        let q = wq.forward(g, r)?;
        let k = wk.forward(g, r)?;
        let v = wv.forward(g, r)?;
        let kt = g.transpose(k);
        let scores = g.matmul(q, kt)?;
        let scores = g.scale(scores, inv_sqrt);
        let attn = g.softmax(scores)?;
        maps.push(attn);
        outs.push(g.matmul(attn, v)?);
    }
    let heads = g.concat(&outs)?;
    let m = p.w_c.forward(g, heads)?;
    let h = p.fc1.forward(g, m)?;
    let h = g.relu(h);
    let h = p.fc2.forward(g, h)?;
    Ok((g.leaky_relu(h, slope), maps))
}

/// `LeakyReLU(FC(c))` on the decoder context vector.
pub fn function_module<F: Real>(g: &mut Graph<'_, F>, fc: &Linear, slope: F, c: Var) -> Result<Var> {
    let t = g.value(c);
    if t.rank() != 1 || t.len() != fc.d_in {
        return Err(CnmError::dim("function_module", t.shape(), &[fc.d_in]));
    }
    let z = fc.forward(g, c)?;
    Ok(g.leaky_relu(z, slope))
}

/// Evaluate one visual module outside a training graph.
pub fn encode_module<F: Real>(
    store: &ParamStore<F>,
    params: &EncoderParams,
    slope: f64,
    kind: ModuleKind,
    roi: &RoiFeatureSet<F>,
) -> Result<ModuleFeatureSet<F>> {
    let mut g = Graph::new(store);
    let r = g.constant(roi.features().clone());
    let slope = F::lit(slope);
    let out = match kind {
        ModuleKind::Object => rowwise_module(&mut g, &params.object, slope, r)?,
        ModuleKind::Attribute => rowwise_module(&mut g, &params.attribute, slope, r)?,
        ModuleKind::Relation => relation_module(&mut g, &params.relation, slope, r)?.0,
        ModuleKind::Function => {
            return Err(CnmError::Argument("FUNCTION does not read RoI features".into()))
        }
    };
    Ok(ModuleFeatureSet {
        kind,
        features: g.value(out).clone(),
    })
}
