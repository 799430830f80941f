//! Ablation grid: train and evaluate each preset under one seed and collect
//! one comparison row per preset.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::corpus::{Corpus, Split};
use crate::error::Result;
use crate::eval::{evaluate, DecodeMode};
use crate::labels::WordClass;
use crate::presets::Preset;
use crate::train::{TrainConfig, Trainer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub preset: String,
    /// `None` when the row completed, otherwise the failure message.
    pub error: Option<String>,
    pub bleu4: Option<f64>,
    pub cider_d: Option<f64>,
    pub pos_recall: BTreeMap<String, Option<f64>>,
    pub token_accuracy: Option<f64>,
    pub controller_agreement: Option<f64>,
    pub steps: usize,
    /// Wall-clock seconds. The only column that varies between reruns.
    pub runtime_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub split: Split,
    pub seed: u64,
    pub rows: Vec<AblationRow>,
}

fn run_one(preset: &Preset, model: &ModelConfig, train: &TrainConfig, corpus: &Corpus, split: Split) -> Result<AblationRow> {
    let (mut model, mut train) = (model.clone(), train.clone());
    preset.apply(&mut model, &mut train);
    let mut t = Trainer::new(model, train, corpus)?;
    while !t.is_done() {
        t.run_epoch()?;
    }
    let report = evaluate(&t.model, corpus, t.features(), split, DecodeMode::Greedy, t.config.max_len)?;
    Ok(AblationRow {
        preset: preset.name.clone(),
        error: None,
        bleu4: Some(report.bleu4),
        cider_d: Some(report.cider_d),
        pos_recall: report.pos_recall,
        token_accuracy: Some(report.teacher_forced.token_accuracy),
        controller_agreement: report.teacher_forced.controller_agreement,
        steps: t.step,
        runtime_s: 0.0,
    })
}

/// Run every preset in turn. A failing preset yields a row carrying its
/// error instead of aborting the grid. Rows come back sorted by name.
pub fn run_grid(
    presets: &[Preset],
    model: &ModelConfig,
    train: &TrainConfig,
    corpus: &Corpus,
    split: Split,
) -> AblationTable {
    let mut rows: Vec<AblationRow> = presets
        .iter()
        .map(|p| {
            let start = Instant::now();
            let mut row = run_one(p, model, train, corpus, split).unwrap_or_else(|e| {
                log::warn!("preset {} failed: {e}", p.name);
                AblationRow {
                    preset: p.name.clone(),
                    error: Some(e.to_string()),
                    bleu4: None,
                    cider_d: None,
                    pos_recall: BTreeMap::new(),
                    token_accuracy: None,
                    controller_agreement: None,
                    steps: 0,
                    runtime_s: 0.0,
                }
            });
            row.runtime_s = start.elapsed().as_secs_f64();
            log::info!("preset {} done in {:.1}s", p.name, row.runtime_s);
            row
        })
        .collect();
    rows.sort_by(|a, b| a.preset.cmp(&b.preset));
    AblationTable {
        split,
        seed: train.seed,
        rows,
    }
}

impl AblationTable {
    /// The table with timings zeroed, for comparing reruns.
    pub fn without_timings(&self) -> Self {
        let mut t = self.clone();
        for r in &mut t.rows {
            r.runtime_s = 0.0;
        }
        t
    }

    pub fn row(&self, preset: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.preset == preset)
    }

    pub fn to_csv(&self) -> String {
        let cell = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:.6}"));
        let mut out = String::from("preset,status,bleu4,cider_d");
        for c in WordClass::ALL {
            let _ = write!(out, ",recall_{}", c.name());
        }
        out.push_str(",token_accuracy,controller_agreement,steps,runtime_s\n");
        for r in &self.rows {
            let status = r.error.as_ref().map_or("ok".to_string(), |e| format!("\"error: {}\"", e.replace('"', "'")));
            let _ = write!(out, "{},{status},{},{}", r.preset, cell(r.bleu4), cell(r.cider_d));
            for c in WordClass::ALL {
                let _ = write!(out, ",{}", cell(r.pos_recall.get(c.name()).copied().flatten()));
            }
            let _ = writeln!(
                out,
                ",{},{},{},{:.3}",
                cell(r.token_accuracy),
                cell(r.controller_agreement),
                r.steps,
                r.runtime_s
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, CorpusSpec};

    #[test]
    fn failing_preset_is_recorded_and_rows_are_sorted() {
        let corpus = generate_corpus(&CorpusSpec {
            n_scenes: 20,
            d_r: 12,
            ..CorpusSpec::default()
        })
        .unwrap();
        let model = ModelConfig {
            d_r: 12,
            d_v: 4,
            d_c: 4,
            d_a: 4,
            heads: 2,
            ..ModelConfig::desk(corpus.vocab.len())
        };
        let train = TrainConfig {
            xe_epochs: 1,
            rl_epochs: 0,
            ..TrainConfig::desk()
        };
        let mut bad = Preset::parse("Col/S").unwrap();
        bad.name = "Col/S (zero units)".into();
        bad.units = 0;
        let presets = [Preset::parse("Module/O").unwrap(), bad, Preset::parse("Col/1").unwrap()];
        let t = run_grid(&presets, &model, &train, &corpus, Split::Val);
        let names: Vec<_> = t.rows.iter().map(|r| r.preset.as_str()).collect();
        assert_eq!(names, ["Col/1", "Col/S (zero units)", "Module/O"]);
        assert!(t.rows[1].error.is_some());
        assert!(t.rows[0].bleu4.is_some() && t.rows[2].cider_d.is_some());
        assert_eq!(t.to_csv().lines().count(), 4);
        assert!(t.row("Col/1").unwrap().controller_agreement.is_none());
    }
}
