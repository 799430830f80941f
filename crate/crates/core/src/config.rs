use serde::{Deserialize, Serialize};

use crate::error::{CnmError, Result};
use crate::labels::ModuleKind;

/// How the controller turns its logits into fusion weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FusionStrategy {
    /// Softmax weights (Col/S).
    Soft,
    /// Straight-through Gumbel-Softmax one-hot (Col/H).
    Hard,
    /// All weights fixed at 1, controller bypassed (Col/1).
    Uniform,
    /// Single visual module, no controller and no FUNCTION module
    /// (Module/O, Module/A, Module/R).
    Single(ModuleKind),
}

impl FusionStrategy {
    pub fn uses_controller(self) -> bool {
        matches!(self, FusionStrategy::Soft | FusionStrategy::Hard)
    }

    /// Whether module `k` contributes to the fused feature.
    pub fn is_active(self, k: ModuleKind) -> bool {
        match self {
            FusionStrategy::Single(only) => k == only,
            _ => true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// RoI feature width.
    pub d_r: usize,
    /// Module feature width; also the word-embedding width.
    pub d_v: usize,
    /// LSTM hidden width. Must equal `d_v` for the residual chain.
    pub d_c: usize,
    /// Additive-attention hidden width.
    pub d_a: usize,
    /// Self-attention heads in the RELATION module.
    pub heads: usize,
    /// Stacked decoder units.
    pub units: usize,
    pub vocab_size: usize,
    pub strategy: FusionStrategy,
    pub leaky_slope: f64,
    pub gumbel_tau: f64,
}

impl ModelConfig {
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            d_r: 64,
            d_v: 32,
            d_c: 32,
            d_a: 16,
            heads: 4,
            units: 1,
            vocab_size,
            strategy: FusionStrategy::Soft,
            leaky_slope: 0.01,
            gumbel_tau: 1.0,
        }
    }

    /// Widths used in the original large-scale setting.
    pub fn full_scale(vocab_size: usize) -> Self {
        Self {
            d_r: 2048,
            d_v: 1000,
            d_c: 1000,
            d_a: 512,
            heads: 8,
            ..Self::desk(vocab_size)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_r", self.d_r),
            ("d_v", self.d_v),
            ("d_c", self.d_c),
            ("d_a", self.d_a),
            ("heads", self.heads),
            ("units", self.units),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(CnmError::Config(format!("{name} must be positive")));
        }
        if !self.d_r.is_multiple_of(self.heads) {
            return Err(CnmError::Config(format!(
                "d_r = {} is not divisible by {} heads",
                self.d_r, self.heads
            )));
        }
        if self.d_c != self.d_v {
            return Err(CnmError::Config(format!(
                "residual decoder needs d_c == d_v, got {} and {}",
                self.d_c, self.d_v
            )));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(CnmError::Config("leaky_slope must lie in (0, 1)".into()));
        }
        if self.gumbel_tau <= 0.0 {
            return Err(CnmError::Config("gumbel_tau must be positive".into()));
        }
        if let FusionStrategy::Single(ModuleKind::Function) = self.strategy {
            return Err(CnmError::Config("a single-module encoder must be visual".into()));
        }
        Ok(())
    }

    /// Width of the first LSTM's input `u^t`.
    pub fn lstm1_input(&self) -> usize {
        self.d_v + self.d_c + 3 * self.d_v
    }

    /// Width of the fused feature.
    pub fn fused_width(&self) -> usize {
        4 * self.d_v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_trace_widths() {
        let c = ModelConfig::full_scale(10_369);
        assert_eq!(c.lstm1_input(), 5000);
        assert_eq!(c.fused_width(), 4000);
        c.validate().unwrap();
    }

    #[test]
    fn head_divisibility_checked() {
        let mut c = ModelConfig::desk(10);
        c.heads = 5;
        assert!(matches!(c.validate(), Err(CnmError::Config(_))));
    }
}
