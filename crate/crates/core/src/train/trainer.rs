use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, CheckpointMeta, FORMAT_VERSION};
use super::{scst_advantage, scst_loss, teacher_forced, Phase, TrainConfig};
use crate::config::ModelConfig;
use crate::controller::GumbelNoise;
use crate::corpus::{few_shot_subset, CaptionExample, Corpus, Split, BOS, EOS};
use crate::decode::{greedy_decode, sample_decode, ImageDecoder};
use crate::error::{CnmError, Result};
use crate::eval::{evaluate, feature_cache, strip_end, DecodeMode, SceneFeatures, TeacherForcedStats};
use crate::metrics::{cider_d, CiderParams, IdfTable};
use crate::model::CnmModel;
use crate::tensor::optim::{adam_update, AdamState};
use crate::tensor::rng::Rng;
use crate::tensor::{Graph, Var};

const MODEL_INIT_STREAM: u64 = 100;
const TRAINER_STREAM: u64 = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub phase: Phase,
    pub lr: f64,
    /// Optimiser steps completed at the end of the epoch.
    pub steps: usize,
    /// Mean batch loss over the epoch.
    pub train_loss: f64,
    /// Mean greedy-baseline reward during RL epochs.
    pub mean_reward: Option<f64>,
    pub val_cider_d: f64,
    pub val: TeacherForcedStats,
}

pub struct Trainer<'c> {
    pub model: CnmModel<f32>,
    pub config: TrainConfig,
    corpus: &'c Corpus,
    features: Vec<SceneFeatures<f32>>,
    train_examples: Vec<CaptionExample>,
    train_scenes: Vec<usize>,
    /// Training references per scene id, used for RL rewards.
    refs: Vec<Vec<Vec<usize>>>,
    idf: IdfTable,
    adam: Vec<AdamState<f32>>,
    rng: Rng,
    pub epoch: usize,
    pub step: usize,
    pub history: Vec<EpochMetrics>,
}

impl<'c> Trainer<'c> {
    pub fn new(model_config: ModelConfig, config: TrainConfig, corpus: &'c Corpus) -> Result<Self> {
        let model = CnmModel::new(model_config, Rng::derive(config.seed, MODEL_INIT_STREAM).next_u64())?;
        let adam = model.params.iter().map(|(_, t)| AdamState::new(t.shape())).collect();
        let rng = Rng::derive(config.seed, TRAINER_STREAM);
        Self::assemble(model, config, corpus, adam, rng, 0, 0, Vec::new())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, corpus: &'c Corpus) -> Result<Self> {
        let meta = &ckpt.meta;
        if meta.corpus != corpus.spec {
            return Err(CnmError::Data("checkpoint was trained on a different corpus spec".into()));
        }
        let mut model = CnmModel::<f32>::new(meta.model.clone(), 0)?;
        let (params, adam_tensors): (Vec<_>, Vec<_>) =
            ckpt.tensors.iter().partition(|(n, _)| !n.starts_with("adam."));
        model.params.assign_from(params.iter().map(|(n, t)| (n.as_str(), t)))?;
        let mut adam: Vec<AdamState<f32>> = model.params.iter().map(|(_, t)| AdamState::new(t.shape())).collect();
        for (name, t) in adam_tensors {
            let (slot, pname) = if let Some(p) = name.strip_prefix("adam.m.") {
                (0, p)
            } else if let Some(p) = name.strip_prefix("adam.v.") {
                (1, p)
            } else {
                return Err(CnmError::format(format!("tensor {name}"), "unknown optimiser tensor"));
            };
            let id = model
                .params
                .id(pname)
                .ok_or_else(|| CnmError::format(format!("tensor {name}"), "moment for unknown parameter"))?;
            let st = &mut adam[id.0];
            if t.shape() != st.m.shape() {
                return Err(CnmError::format(format!("tensor {name}"), "moment shape mismatch"));
            }
            if slot == 0 {
                st.m = t.clone();
            } else {
                st.v = t.clone();
            }
        }
        for st in &mut adam {
            st.t = meta.adam_t;
        }
        Self::assemble(
            model,
            meta.train.clone(),
            corpus,
            adam,
            Rng::from_state(meta.rng_state),
            meta.epoch,
            meta.step,
            meta.history.clone(),
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        model: CnmModel<f32>,
        config: TrainConfig,
        corpus: &'c Corpus,
        adam: Vec<AdamState<f32>>,
        rng: Rng,
        epoch: usize,
        step: usize,
        history: Vec<EpochMetrics>,
    ) -> Result<Self> {
        config.validate()?;
        if model.config.vocab_size != corpus.vocab.len() {
            return Err(CnmError::Config(format!(
                "model vocabulary {} differs from corpus vocabulary {}",
                model.config.vocab_size,
                corpus.vocab.len()
            )));
        }
        if model.config.d_r != corpus.spec.d_r {
            return Err(CnmError::Config(format!(
                "model d_r = {} differs from corpus features d_r = {}",
                model.config.d_r, corpus.spec.d_r
            )));
        }
        if config.linguistic_loss && !model.config.strategy.uses_controller() {
            log::warn!("linguistic loss requested for a strategy without a controller; ignored");
        }
        let pool = match config.captions_per_scene {
            Some(x) => few_shot_subset(corpus, x, config.seed)?,
            None => corpus.examples.clone(),
        };
        let train_examples: Vec<CaptionExample> = pool
            .into_iter()
            .filter(|e| corpus.scenes[e.scene_id].split == Split::Train)
            .collect();
        let train_scenes: Vec<usize> = corpus.scenes_in(Split::Train).map(|s| s.id).collect();
        let mut refs = vec![Vec::new(); corpus.scenes.len()];
        for e in &train_examples {
            refs[e.scene_id].push(e.words().to_vec());
        }
        let idf = IdfTable::build(
            &train_scenes.iter().map(|&i| refs[i].clone()).collect::<Vec<_>>(),
            4,
        );
        Ok(Self {
            model,
            config,
            corpus,
            features: feature_cache(corpus),
            train_examples,
            train_scenes,
            refs,
            idf,
            adam,
            rng,
            epoch,
            step,
            history,
        })
    }

    pub fn features(&self) -> &[SceneFeatures<f32>] {
        &self.features
    }

    pub fn train_examples(&self) -> &[CaptionExample] {
        &self.train_examples
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.config.total_epochs()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut tensors: Vec<_> = self
            .model
            .params
            .iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        for ((name, _), st) in self.model.params.iter().zip(&self.adam) {
            tensors.push((format!("adam.m.{name}"), st.m.clone()));
            tensors.push((format!("adam.v.{name}"), st.v.clone()));
        }
        Checkpoint {
            tensors,
            meta: CheckpointMeta {
                format_version: FORMAT_VERSION,
                model: self.model.config.clone(),
                train: self.config.clone(),
                corpus: self.corpus.spec.clone(),
                vocabulary: self.corpus.vocab.clone(),
                epoch: self.epoch,
                step: self.step,
                adam_t: self.adam.first().map_or(0, |s| s.t),
                rng_state: self.rng.state(),
                history: self.history.clone(),
            },
        }
    }

    /// Run one epoch of whichever phase the schedule is in.
    pub fn run_epoch(&mut self) -> Result<EpochMetrics> {
        let phase = self.config.phase(self.epoch);
        let lr = self.config.lr_at(self.epoch);
        let (train_loss, mean_reward) = match phase {
            Phase::Xe => (self.xe_epoch(lr)?, None),
            Phase::Rl => {
                let (l, r) = self.rl_epoch(lr)?;
                (l, Some(r))
            }
        };
        let report = evaluate(
            &self.model,
            self.corpus,
            &self.features,
            Split::Val,
            DecodeMode::Greedy,
            self.config.max_len,
        )?;
        let m = EpochMetrics {
            epoch: self.epoch,
            phase,
            lr,
            steps: self.step,
            train_loss,
            mean_reward,
            val_cider_d: report.cider_d,
            val: report.teacher_forced,
        };
        log::info!(
            "epoch {} {:?} lr {:.2e} loss {:.4} val acc {:.4} agree {:?} cider {:.3}",
            m.epoch,
            m.phase,
            m.lr,
            m.train_loss,
            m.val.token_accuracy,
            m.val.controller_agreement,
            m.val_cider_d
        );
        self.history.push(m.clone());
        self.epoch += 1;
        Ok(m)
    }

    fn zero_grads(&self) -> Vec<Vec<f32>> {
        self.model.params.iter().map(|(_, t)| vec![0.0; t.len()]).collect()
    }

    fn xe_epoch(&mut self, lr: f64) -> Result<f64> {
        let phase = Phase::Xe;
        let lambda = self.config.lambda(phase) as f32;
        let use_lin = self.config.linguistic_loss;
        let mut order: Vec<usize> = (0..self.train_examples.len()).collect();
        self.rng.shuffle(&mut order);
        let mut losses = Vec::new();
        for (b, batch) in order.chunks(self.config.batch_size).enumerate() {
            let mut grads = self.zero_grads();
            let mut batch_loss = 0.0;
            for &i in batch {
                let e = &self.train_examples[i];
                let (ro, ra) = &self.features[e.scene_id];
                let mut g = Graph::new(&self.model.params);
                let enc = self.model.encode(&mut g, ro, ra)?;
                let labels = use_lin.then_some(e.labels.as_slice());
                let mut noise = GumbelNoise::Sampled(&mut self.rng);
                let tf = teacher_forced(&mut g, &self.model, &enc, &e.tokens, labels, &mut noise)?;
                let loss = match tf.lin {
                    Some(lin) => {
                        let weighted = g.scale(lin, lambda);
                        g.add(tf.xe, weighted)?
                    }
                    None => tf.xe,
                };
                let value = g.value(loss).item();
                if !value.is_finite() {
                    return Err(self.numeric_failure(b, &format!("loss {value}")));
                }
                batch_loss += value as f64;
                g.backward(loss)?.accumulate_params(&mut grads);
            }
            self.apply(grads, batch.len(), lr, b)?;
            losses.push(batch_loss / batch.len() as f64);
        }
        Ok(mean(&losses))
    }

    fn rl_epoch(&mut self, lr: f64) -> Result<(f64, f64)> {
        let lambda = self.config.lambda(Phase::Rl) as f32;
        let use_lin = self.config.linguistic_loss && self.model.config.strategy.uses_controller();
        let params = CiderParams::default();
        let mut order = self.train_scenes.clone();
        self.rng.shuffle(&mut order);
        let mut by_scene: Vec<Vec<usize>> = vec![Vec::new(); self.corpus.scenes.len()];
        for (i, e) in self.train_examples.iter().enumerate() {
            by_scene[e.scene_id].push(i);
        }
        let (mut losses, mut rewards) = (Vec::new(), Vec::new());
        for (b, batch) in order.chunks(self.config.batch_size).enumerate() {
            let mut grads = self.zero_grads();
            let mut batch_loss = 0.0;
            for &scene in batch {
                let (ro, ra) = &self.features[scene];
                let refs = &self.refs[scene];
                let enc_values = self.model.encode_values(ro, ra)?;
                let dec = ImageDecoder::new(&self.model, enc_values, BOS, EOS);
                let greedy = strip_end(&greedy_decode(&dec, self.config.max_len)?);
                let (sample, _) = sample_decode(&dec, &mut self.rng, self.config.max_len)?;
                let r_greedy = cider_d(&greedy, refs, &self.idf, params);
                let r_sample = cider_d(&strip_end(&sample), refs, &self.idf, params);
                rewards.push(r_greedy);
                let advantage = scst_advantage(r_sample, r_greedy);

                let mut g = Graph::new(&self.model.params);
                let enc = self.model.encode(&mut g, ro, ra)?;
                let mut terms: Vec<Var> = Vec::new();
                if strip_end(&sample).is_empty() {
                    log::warn!("scene {scene}: empty sampled caption skipped");
                } else if advantage != 0.0 {
                    let mut tokens = vec![BOS];
                    tokens.extend_from_slice(&sample);
                    let tf = teacher_forced(&mut g, &self.model, &enc, &tokens, None, &mut GumbelNoise::Pinned)?;
                    let sum_lp = g.neg(tf.xe);
                    terms.push(scst_loss(&mut g, sum_lp, advantage));
                }
                let candidates = &by_scene[scene];
                if use_lin && !candidates.is_empty() {
                    let e = &self.train_examples[candidates[self.rng.below(candidates.len())]];
                    let tf = teacher_forced(
                        &mut g,
                        &self.model,
                        &enc,
                        &e.tokens,
                        Some(&e.labels),
                        &mut GumbelNoise::Pinned,
                    )?;
                    let lin = tf.lin.expect("controller strategy with labels");
                    terms.push(g.scale(lin, lambda));
                }
                if terms.is_empty() {
                    continue;
                }
                let loss = g.add_all(&terms)?;
                let value = g.value(loss).item();
                if !value.is_finite() {
                    return Err(self.numeric_failure(b, &format!("RL loss {value}")));
                }
                batch_loss += value as f64;
                g.backward(loss)?.accumulate_params(&mut grads);
            }
            self.apply(grads, batch.len(), lr, b)?;
            losses.push(batch_loss / batch.len() as f64);
        }
        Ok((mean(&losses), mean(&rewards)))
    }

    /// Average, clip and take one Adam step.
    fn apply(&mut self, mut grads: Vec<Vec<f32>>, batch: usize, lr: f64, b: usize) -> Result<()> {
        let inv = 1.0 / batch as f32;
        let mut sq = 0.0f64;
        for g in &mut grads {
            for x in g.iter_mut() {
                *x *= inv;
                sq += (*x as f64) * (*x as f64);
            }
        }
        let norm = sq.sqrt();
        if !norm.is_finite() {
            return Err(self.numeric_failure(b, &format!("gradient norm {norm}")));
        }
        if norm > self.config.clip_norm {
            let s = (self.config.clip_norm / norm) as f32;
            grads.iter_mut().flatten().for_each(|x| *x *= s);
        }
        let ids: Vec<_> = self.model.params.ids().collect();
        for id in ids {
            let name = self.model.params.name(id).to_string();
            adam_update(
                &name,
                self.model.params.get_mut(id),
                &grads[id.0],
                &mut self.adam[id.0],
                lr,
                &self.config.adam,
            )?;
        }
        self.step += 1;
        Ok(())
    }

    fn numeric_failure(&self, batch: usize, what: &str) -> CnmError {
        let mut norms: Vec<(f64, &str)> = self
            .model
            .params
            .iter()
            .map(|(n, t)| (t.data().iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt(), n))
            .collect();
        norms.sort_by(|a, b| b.0.total_cmp(&a.0));
        let top: Vec<String> = norms.iter().take(5).map(|(v, n)| format!("{n}={v:.3e}")).collect();
        CnmError::Training(format!(
            "{what} at epoch {} batch {batch}; largest parameter norms: {}",
            self.epoch,
            top.join(", ")
        ))
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Run the full schedule, optionally continuing from a checkpoint.
pub fn train(
    model_config: ModelConfig,
    config: TrainConfig,
    corpus: &Corpus,
    resume: Option<&Checkpoint>,
) -> Result<Checkpoint> {
    let mut t = match resume {
        Some(ckpt) => Trainer::from_checkpoint(ckpt, corpus)?,
        None => Trainer::new(model_config, config, corpus)?,
    };
    while !t.is_done() {
        t.run_epoch()?;
    }
    Ok(t.checkpoint())
}
