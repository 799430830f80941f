//! Named ablation configurations.
//!
//! | name        | fusion                 | linguistic loss |
//! |-------------|------------------------|-----------------|
//! | `Module/O`  | OBJECT only            | no              |
//! | `Module/A`  | ATTRIBUTE only         | no              |
//! | `Module/R`  | RELATION only          | no              |
//! | `Col/1`     | all weights 1          | no              |
//! | `Col/H`     | Gumbel one-hot         | no              |
//! | `Col/H+L`   | Gumbel one-hot         | yes             |
//! | `Col/S`     | softmax                | no              |
//! | `Col/S+L`   | softmax                | yes             |
//! | `CNM`       | softmax (= `Col/S+L`)  | yes             |
//!
//! Any name takes an optional `#M` suffix for the number of stacked decoder
//! units, so `CNM#1` is `Col/S+L` and `Module/O#3` stacks three units.

use serde::{Deserialize, Serialize};

use crate::config::{FusionStrategy, ModelConfig};
use crate::error::{CnmError, Result};
use crate::labels::ModuleKind;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub strategy: FusionStrategy,
    pub units: usize,
    pub linguistic_loss: bool,
}

pub const BASE_NAMES: [&str; 9] = [
    "Module/O", "Module/A", "Module/R", "Col/1", "Col/H", "Col/H+L", "Col/S", "Col/S+L", "CNM",
];

impl Preset {
    pub fn parse(name: &str) -> Result<Self> {
        let (base, units) = match name.split_once('#') {
            Some((b, m)) => {
                let m: usize = m
                    .parse()
                    .ok()
                    .filter(|&m| m > 0)
                    .ok_or_else(|| CnmError::Argument(format!("bad unit count in preset {name:?}")))?;
                (b, m)
            }
            None => (name, 1),
        };
        let (strategy, linguistic_loss) = match base {
            "Module/O" => (FusionStrategy::Single(ModuleKind::Object), false),
            "Module/A" => (FusionStrategy::Single(ModuleKind::Attribute), false),
            "Module/R" => (FusionStrategy::Single(ModuleKind::Relation), false),
            "Col/1" => (FusionStrategy::Uniform, false),
            "Col/H" => (FusionStrategy::Hard, false),
            "Col/H+L" => (FusionStrategy::Hard, true),
            "Col/S" => (FusionStrategy::Soft, false),
            "Col/S+L" | "CNM" => (FusionStrategy::Soft, true),
            _ => {
                return Err(CnmError::Argument(format!(
                    "unknown preset {name:?}; expected one of {}",
                    BASE_NAMES.join(", ")
                )))
            }
        };
        Ok(Self {
            name: name.to_string(),
            strategy,
            units,
            linguistic_loss,
        })
    }

    pub fn apply(&self, model: &mut ModelConfig, train: &mut TrainConfig) {
        model.strategy = self.strategy;
        model.units = self.units;
        train.linguistic_loss = self.linguistic_loss;
    }

    /// Whether two presets describe the same training run.
    pub fn same_run(&self, other: &Preset) -> bool {
        self.strategy == other.strategy && self.units == other.units && self.linguistic_loss == other.linguistic_loss
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cnm1_is_col_s_l() {
        let a = Preset::parse("CNM#1").unwrap();
        let b = Preset::parse("Col/S+L").unwrap();
        assert!(a.same_run(&b));
        assert_eq!(Preset::parse("CNM#3").unwrap().units, 3);
        assert_eq!(Preset::parse("Module/O#2").unwrap().strategy, FusionStrategy::Single(ModuleKind::Object));
    }

    #[test]
    fn every_base_name_parses() {
        for n in BASE_NAMES {
            Preset::parse(n).unwrap();
        }
        assert!(Preset::parse("Col/X").is_err());
        assert!(Preset::parse("CNM#0").is_err());
    }
}
