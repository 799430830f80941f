//! Loss assembly, the XE then RL schedule, and checkpoint persistence.

mod checkpoint;
mod loss;
mod trainer;

pub use checkpoint::{
    decode_tensors, encode_tensors, load_checkpoint, save_checkpoint, sidecar_path, Checkpoint, CheckpointMeta,
    FORMAT_VERSION, MAGIC,
};
pub use loss::{scst_advantage, scst_loss, teacher_forced, total_loss, xe_loss, TeacherForced, XeLoss};
pub use trainer::{train, EpochMetrics, Trainer};

use serde::{Deserialize, Serialize};

use crate::error::{CnmError, Result};
use crate::tensor::optim::AdamConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Phase {
    Xe,
    Rl,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub decay: f64,
    pub decay_every: usize,
    pub xe_epochs: usize,
    pub rl_epochs: usize,
    pub batch_size: usize,
    pub lambda_xe: f64,
    pub lambda_rl: f64,
    pub linguistic_loss: bool,
    pub clip_norm: f64,
    /// Multiplier on the scheduled learning rate during RL epochs.
    pub rl_lr_scale: f64,
    /// Longest caption produced during RL rollouts and evaluation.
    pub max_len: usize,
    /// Few-shot setting: keep this many captions per training scene.
    pub captions_per_scene: Option<usize>,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Short schedule sized for a laptop run on the synthetic corpus.
    pub fn desk() -> Self {
        Self {
            lr: 4e-3,
            decay: 0.8,
            decay_every: 5,
            xe_epochs: 8,
            rl_epochs: 4,
            batch_size: 16,
            lambda_xe: 1.0,
            lambda_rl: 0.5,
            linguistic_loss: true,
            clip_norm: 5.0,
            rl_lr_scale: 0.05,
            max_len: 16,
            captions_per_scene: None,
            seed: 1,
            adam: AdamConfig::default(),
        }
    }

    /// The original large-scale schedule.
    pub fn full_scale() -> Self {
        Self {
            lr: 5e-4,
            xe_epochs: 35,
            rl_epochs: 100,
            rl_lr_scale: 1.0,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(CnmError::Config("learning rate must be positive".into()));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) || self.decay_every == 0 {
            return Err(CnmError::Config("decay must lie in (0, 1] with a positive period".into()));
        }
        if self.lambda_xe < 0.0 || self.lambda_rl < 0.0 {
            return Err(CnmError::Config("λ must be non-negative".into()));
        }
        if self.batch_size == 0 || self.max_len == 0 {
            return Err(CnmError::Config("batch_size and max_len must be positive".into()));
        }
        if !(self.rl_lr_scale > 0.0 && self.rl_lr_scale.is_finite()) {
            return Err(CnmError::Config("rl_lr_scale must be positive".into()));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(CnmError::Config("clip_norm must be positive".into()));
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.xe_epochs + self.rl_epochs
    }

    pub fn phase(&self, epoch: usize) -> Phase {
        if epoch < self.xe_epochs {
            Phase::Xe
        } else {
            Phase::Rl
        }
    }

    /// `lr · decay^⌊epoch / decay_every⌋`, counted over both phases, times
    /// `rl_lr_scale` once the RL phase starts.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let base = self.lr * self.decay.powi((epoch / self.decay_every) as i32);
        match self.phase(epoch) {
            Phase::Xe => base,
            Phase::Rl => base * self.rl_lr_scale,
        }
    }

    pub fn lambda(&self, phase: Phase) -> f64 {
        match phase {
            Phase::Xe => self.lambda_xe,
            Phase::Rl => self.lambda_rl,
        }
    }
}
