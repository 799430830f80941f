//! The full captioner: encoder modules, `M` stacked top-down decoder units
//! with residual connections, and the vocabulary head.
//!
//! Per unit `m` and step `t`:
//!
//! ```text
//! u    = [i^{m-1}, h2^{t-1}, mean(V_O), mean(V_A), mean(V_R)]
//! h1   = LSTM_1(u)
//! v̂_*  = Att_*(V_*, h1)                 for O, A, R
//! v̂_F  = FUNCTION(h2^{t-1})
//! w    = controller(v̂_O, v̂_A, v̂_R, h2^{t-1})
//! h2   = LSTM_2([h1, fuse(w, v̂_O, v̂_A, v̂_R, v̂_F)])
//! i^m  = i^{m-1} + h2
//! ```
//!
//! The word distribution is `softmax(FC(i^M))`.

use crate::config::{FusionStrategy, ModelConfig};
use crate::controller::{
    additive_attention, controller_step, fuse, AttentionParams, Controller, ControllerState, GumbelNoise,
};
use crate::encoder::{function_module, relation_module, rowwise_module, EncoderParams};
use crate::error::{CnmError, Result};
use crate::labels::ModuleKind;
use crate::nn::{Linear, Lstm};
use crate::tensor::init::gaussian;
use crate::tensor::rng::Rng;
use crate::tensor::{Graph, ParamId, ParamStore, Real, Tensor, Var};

/// Parameters of one decoder unit.
#[derive(Clone, Debug)]
pub struct DecoderUnit {
    pub lstm1: Lstm,
    pub lstm2: Lstm,
    /// Att_Obj, Att_Attr, Att_Rela.
    pub attention: [AttentionParams; 3],
    pub controller: Controller,
    pub function: Linear,
}

/// Where every parameter lives in the store.
#[derive(Clone, Debug)]
pub struct Layout {
    pub encoder: EncoderParams,
    pub embedding: ParamId,
    pub units: Vec<DecoderUnit>,
    pub head: Linear,
}

#[derive(Clone, Debug)]
pub struct CnmModel<F: Real = f32> {
    pub config: ModelConfig,
    pub layout: Layout,
    pub params: ParamStore<F>,
}

/// Encoder output inside a graph.
#[derive(Clone, Debug)]
pub struct EncodedImage {
    /// V_O, V_A, V_R; `None` for modules the strategy switches off.
    pub features: [Option<Var>; 3],
    pub means: [Var; 3],
    pub regions: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct UnitState {
    pub h1: Var,
    pub c1: Var,
    pub h2: Var,
    pub c2: Var,
    pub ctrl: ControllerState,
}

#[derive(Clone, Debug)]
pub struct StackState {
    pub units: Vec<UnitState>,
}

/// Intermediate nodes of one unit step, kept for losses and traces.
#[derive(Clone, Debug)]
pub struct UnitOutput {
    pub input: Var,
    pub output: Var,
    pub h2: Var,
    pub weights: Var,
    pub alphas: [Option<Var>; 3],
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    pub log_probs: Var,
    pub state: StackState,
    pub units: Vec<UnitOutput>,
}

impl<F: Real> CnmModel<F> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(seed);
        let mut store = ParamStore::new();
        let cfg = &config;
        let encoder = EncoderParams::new(&mut store, &mut rng, cfg)?;
        let embedding = store.add("dec.embedding", gaussian(&mut rng, &[cfg.vocab_size, cfg.d_v], 0.1));
        let units = (0..cfg.units)
            .map(|m| {
                let p = format!("dec.unit{m}");
                DecoderUnit {
                    lstm1: Lstm::new(&mut store, &mut rng, &format!("{p}.lstm1"), cfg.lstm1_input(), cfg.d_c),
                    lstm2: Lstm::new(
                        &mut store,
                        &mut rng,
                        &format!("{p}.lstm2"),
                        cfg.d_c + cfg.fused_width(),
                        cfg.d_c,
                    ),
                    attention: ["obj", "attr", "rela"].map(|k| {
                        AttentionParams::new(&mut store, &mut rng, &format!("{p}.att_{k}"), cfg.d_v, cfg.d_c, cfg.d_a)
                    }),
                    controller: Controller::new(&mut store, &mut rng, &format!("{p}.controller"), cfg.d_v, cfg.d_c),
                    function: Linear::new(&mut store, &mut rng, &format!("{p}.function"), cfg.d_c, cfg.d_v),
                }
            })
            .collect();
        let head = Linear::new(&mut store, &mut rng, "dec.head", cfg.d_v, cfg.vocab_size);
        Ok(Self {
            config,
            layout: Layout {
                encoder,
                embedding,
                units,
                head,
            },
            params: store,
        })
    }

    pub fn cast<G: Real>(&self) -> CnmModel<G> {
        CnmModel {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self.params.cast(),
        }
    }

    fn slope(&self) -> F {
        F::lit(self.config.leaky_slope)
    }

    fn zeros(&self, g: &mut Graph<'_, F>, n: usize) -> Var {
        g.constant(Tensor::zeros(&[n]))
    }

    /// Run the visual modules on one image's RoI sets.
    pub fn encode(&self, g: &mut Graph<'_, F>, r_o: &Tensor<F>, r_a: &Tensor<F>) -> Result<EncodedImage> {
        if r_o.shape() != r_a.shape() {
            return Err(CnmError::dim("encode", r_o.shape(), r_a.shape()));
        }
        let strategy = self.config.strategy;
        let enc = &self.layout.encoder;
        let slope = self.slope();
        let ro = g.constant(r_o.clone());
        let ra = g.constant(r_a.clone());
        let mut features = [None; 3];
        if strategy.is_active(ModuleKind::Object) {
            features[0] = Some(rowwise_module(g, &enc.object, slope, ro)?);
        }
        if strategy.is_active(ModuleKind::Attribute) {
            features[1] = Some(rowwise_module(g, &enc.attribute, slope, ra)?);
        }
        if strategy.is_active(ModuleKind::Relation) {
            features[2] = Some(relation_module(g, &enc.relation, slope, ro)?.0);
        }
        let mut means = [Var(0); 3];
        for k in 0..3 {
            means[k] = match features[k] {
                Some(v) => g.mean_rows(v)?,
                None => self.zeros(g, self.config.d_v),
            };
        }
        Ok(EncodedImage {
            features,
            means,
            regions: r_o.rows(),
        })
    }

    pub fn initial_state(&self, g: &mut Graph<'_, F>) -> StackState {
        let d = self.config.d_c;
        let units = (0..self.config.units)
            .map(|_| UnitState {
                h1: self.zeros(g, d),
                c1: self.zeros(g, d),
                h2: self.zeros(g, d),
                c2: self.zeros(g, d),
                ctrl: ControllerState {
                    h: self.zeros(g, d),
                    c: self.zeros(g, d),
                },
            })
            .collect();
        StackState { units }
    }

    /// One decoder unit. `input` is the word embedding for the first unit and
    /// the previous unit's output otherwise.
    pub fn unit_step(
        &self,
        g: &mut Graph<'_, F>,
        m: usize,
        input: Var,
        enc: &EncodedImage,
        state: &UnitState,
        noise: &mut GumbelNoise<'_>,
    ) -> Result<(UnitOutput, UnitState)> {
        let unit = self
            .layout
            .units
            .get(m)
            .ok_or_else(|| CnmError::Config(format!("unit {m} out of range for M = {}", self.config.units)))?;
        if g.value(state.h2).len() != self.config.d_c || g.value(input).len() != self.config.d_v {
            return Err(CnmError::Config("decoder state does not match model widths".into()));
        }
        let strategy = self.config.strategy;
        let u = g.concat(&[input, state.h2, enc.means[0], enc.means[1], enc.means[2]])?;
        let (h1, c1) = unit.lstm1.step(g, u, state.h1, state.c1)?;

        let mut attended = [Var(0); 3];
        let mut alphas = [None; 3];
        for k in 0..3 {
            match enc.features[k] {
                Some(v) => {
                    let (alpha, att) = additive_attention(g, &unit.attention[k], v, h1)?;
                    attended[k] = att;
                    alphas[k] = Some(alpha);
                }
                None => attended[k] = self.zeros(g, self.config.d_v),
            }
        }
        let v_f = if strategy.is_active(ModuleKind::Function) {
            function_module(g, &unit.function, self.slope(), state.h2)?
        } else {
            self.zeros(g, self.config.d_v)
        };
        let (w, ctrl) = controller_step(
            g,
            &unit.controller,
            strategy,
            self.config.gumbel_tau,
            attended,
            state.h2,
            state.ctrl,
            noise,
        )?;
        let fused = fuse(g, w, [attended[0], attended[1], attended[2], v_f])?;
        let x2 = g.concat(&[h1, fused])?;
        let (h2, c2) = unit.lstm2.step(g, x2, state.h2, state.c2)?;
        let output = g.add(input, h2)?;
        Ok((
            UnitOutput {
                input,
                output,
                h2,
                weights: w,
                alphas,
            },
            UnitState { h1, c1, h2, c2, ctrl },
        ))
    }

    /// Embed `prev_token`, run all `M` units, project to log-probabilities.
    pub fn stack_step(
        &self,
        g: &mut Graph<'_, F>,
        enc: &EncodedImage,
        prev_token: usize,
        state: &StackState,
        noise: &mut GumbelNoise<'_>,
    ) -> Result<StepOutput> {
        if state.units.len() != self.config.units {
            return Err(CnmError::Config(format!(
                "state has {} units, model has {}",
                state.units.len(),
                self.config.units
            )));
        }
        if prev_token >= self.config.vocab_size {
            return Err(CnmError::Argument(format!("token {prev_token} outside vocabulary")));
        }
        let emb = g.param(self.layout.embedding);
        let mut x = g.row(emb, prev_token)?;
        let mut next = Vec::with_capacity(state.units.len());
        let mut outs = Vec::with_capacity(state.units.len());
        for (m, st) in state.units.iter().enumerate() {
            let (out, st2) = self.unit_step(g, m, x, enc, st, &mut noise.reborrow())?;
            x = out.output;
            outs.push(out);
            next.push(st2);
        }
        let logits = self.layout.head.forward(g, x)?;
        let log_probs = g.log_softmax(logits);
        Ok(StepOutput {
            log_probs,
            state: StackState { units: next },
            units: outs,
        })
    }

    pub fn encode_values(&self, r_o: &Tensor<F>, r_a: &Tensor<F>) -> Result<EncodedValues<F>> {
        let mut g = Graph::new(&self.params);
        let enc = self.encode(&mut g, r_o, r_a)?;
        Ok(EncodedValues {
            features: enc.features.map(|v| v.map(|v| g.value(v).clone())),
            means: enc.means.map(|v| g.value(v).clone()),
        })
    }

    pub fn initial_state_values(&self) -> StateValues<F> {
        let z = Tensor::zeros(&[self.config.d_c]);
        StateValues {
            units: vec![std::array::from_fn(|_| z.clone()); self.config.units],
        }
    }

    /// Inference step on plain values.
    pub fn step_values(
        &self,
        enc: &EncodedValues<F>,
        state: &StateValues<F>,
        prev_token: usize,
        noise: &mut GumbelNoise<'_>,
    ) -> Result<(Vec<F>, StateValues<F>, StepTrace)> {
        let mut g = Graph::new(&self.params);
        let encoded = enc.to_graph(&mut g);
        let st = state.to_graph(&mut g);
        let out = self.stack_step(&mut g, &encoded, prev_token, &st, noise)?;
        let log_probs = g.value(out.log_probs).data().to_vec();
        let next = StateValues::from_graph(&g, &out.state);
        let trace = StepTrace::from_graph(&g, &out);
        Ok((log_probs, next, trace))
    }
}

/// Encoder output as plain tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedValues<F = f32> {
    pub features: [Option<Tensor<F>>; 3],
    pub means: [Tensor<F>; 3],
}

impl<F: Real> EncodedValues<F> {
    pub fn to_graph(&self, g: &mut Graph<'_, F>) -> EncodedImage {
        let features = self.features.each_ref().map(|f| f.as_ref().map(|t| g.constant(t.clone())));
        let means = self.means.each_ref().map(|t| g.constant(t.clone()));
        let regions = self
            .features
            .iter()
            .flatten()
            .next()
            .map_or(0, |t| t.rows());
        EncodedImage {
            features,
            means,
            regions,
        }
    }
}

/// Decoder state as plain tensors: per unit `[h1, c1, h2, c2, h_C, c_C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateValues<F = f32> {
    pub units: Vec<[Tensor<F>; 6]>,
}

impl<F: Real> StateValues<F> {
    pub fn to_graph(&self, g: &mut Graph<'_, F>) -> StackState {
        let units = self
            .units
            .iter()
            .map(|[h1, c1, h2, c2, hc, cc]| UnitState {
                h1: g.constant(h1.clone()),
                c1: g.constant(c1.clone()),
                h2: g.constant(h2.clone()),
                c2: g.constant(c2.clone()),
                ctrl: ControllerState {
                    h: g.constant(hc.clone()),
                    c: g.constant(cc.clone()),
                },
            })
            .collect();
        StackState { units }
    }

    pub fn from_graph(g: &Graph<'_, F>, s: &StackState) -> Self {
        let units = s
            .units
            .iter()
            .map(|u| [u.h1, u.c1, u.h2, u.c2, u.ctrl.h, u.ctrl.c].map(|v| g.value(v).clone()))
            .collect();
        Self { units }
    }
}

/// Per-unit fusion weights and attention maps for one emitted token.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitTrace {
    pub weights: [f64; 4],
    pub alphas: [Option<Vec<f64>>; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepTrace {
    pub units: Vec<UnitTrace>,
}

impl StepTrace {
    pub fn from_graph<F: Real>(g: &Graph<'_, F>, out: &StepOutput) -> Self {
        let units = out
            .units
            .iter()
            .map(|u| {
                let w = g.value(u.weights).to_f64_vec();
                UnitTrace {
                    weights: [w[0], w[1], w[2], w[3]],
                    alphas: u.alphas.map(|a| a.map(|a| g.value(a).to_f64_vec())),
                }
            })
            .collect();
        Self { units }
    }
}

impl FusionStrategy {
    /// Whether the linguistic loss is defined for this strategy.
    pub fn supports_linguistic_loss(self) -> bool {
        self.uses_controller()
    }
}
