//! Module-collocation traces: which module the controllers weight at every
//! emitted token, rendered as JSON, CSV or an SVG timeline.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::FusionStrategy;
use crate::controller::dominant_module;
use crate::corpus::{Vocabulary, BOS, EOS};
use crate::decode::ImageDecoder;
use crate::error::Result;
use crate::eval::{decode_scene, DecodeMode, SceneFeatures};
use crate::labels::ModuleKind;
use crate::model::CnmModel;
use crate::tensor::Real;

/// Fixed module colours shared by every rendering.
pub const PALETTE: [(ModuleKind, &str); 4] = [
    (ModuleKind::Object, "#1f77b4"),
    (ModuleKind::Attribute, "#ff7f0e"),
    (ModuleKind::Relation, "#2ca02c"),
    (ModuleKind::Function, "#7f7f7f"),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModuleAlphas {
    pub object: Option<Vec<f64>>,
    pub attribute: Option<Vec<f64>>,
    pub relation: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitRecord {
    pub unit: usize,
    /// `[OBJECT, ATTRIBUTE, RELATION, FUNCTION]`.
    pub weights: [f64; 4],
    pub dominant: ModuleKind,
    pub alphas: ModuleAlphas,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub t: usize,
    pub token: usize,
    pub word: String,
    pub units: Vec<UnitRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub scene_id: usize,
    pub strategy: FusionStrategy,
    pub decode: DecodeMode,
    pub caption: String,
    pub steps: Vec<TraceStep>,
}

/// Decode a scene and record the controller state behind every token.
pub fn trace_scene<F: Real>(
    model: &CnmModel<F>,
    features: &SceneFeatures<F>,
    scene_id: usize,
    mode: DecodeMode,
    max_len: usize,
    vocab: &Vocabulary,
) -> Result<TraceRecord> {
    let tokens = decode_scene(model, features, mode, max_len, scene_id)?;
    let enc = model.encode_values(&features.0, &features.1)?;
    let dec = ImageDecoder::new(model, enc, BOS, EOS);
    let traces = dec.trace(&tokens)?;
    let steps = tokens
        .iter()
        .zip(traces)
        .enumerate()
        .map(|(t, (&token, tr))| TraceStep {
            t,
            token,
            word: vocab.token(token).to_string(),
            units: tr
                .units
                .into_iter()
                .enumerate()
                .map(|(unit, u)| {
                    let [object, attribute, relation] = u.alphas;
                    UnitRecord {
                        unit,
                        weights: u.weights,
                        dominant: dominant_module(&u.weights),
                        alphas: ModuleAlphas {
                            object,
                            attribute,
                            relation,
                        },
                    }
                })
                .collect(),
        })
        .collect();
    Ok(TraceRecord {
        scene_id,
        strategy: model.config.strategy,
        decode: mode,
        caption: vocab.decode(&tokens),
        steps,
    })
}

impl TraceRecord {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("scene_id,t,token,word,unit,w_object,w_attribute,w_relation,w_function,dominant\n");
        for step in &self.steps {
            for u in &step.units {
                let w = u.weights;
                writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{},{}",
                    self.scene_id, step.t, step.token, step.word, u.unit, w[0], w[1], w[2], w[3], u.dominant
                )
                .expect("writing to a String");
            }
        }
        s
    }

    /// Stacked weight bars per token. Only the last unit is drawn unless
    /// `all_units` is set.
    pub fn to_svg(&self, all_units: bool) -> String {
        const COL: f64 = 56.0;
        const ROW: f64 = 120.0;
        const LEFT: f64 = 70.0;
        const TOP: f64 = 40.0;
        let n_units = self.steps.first().map_or(0, |s| s.units.len());
        let units: Vec<usize> = if all_units {
            (0..n_units).collect()
        } else {
            n_units.checked_sub(1).into_iter().collect()
        };
        let width = LEFT + COL * self.steps.len().max(1) as f64 + 20.0;
        let height = TOP + ROW * units.len() as f64 + 70.0;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{LEFT}" y="16" font-size="13">scene {}: {}</text>"#,
            self.scene_id,
            escape(&self.caption)
        );
        for (k, (kind, colour)) in PALETTE.iter().enumerate() {
            let x = LEFT + 110.0 * k as f64;
            let _ = writeln!(s, r#"<rect x="{x}" y="22" width="10" height="10" fill="{colour}"/>"#);
            let _ = writeln!(s, r#"<text x="{}" y="31">{kind}</text>"#, x + 14.0);
        }
        for (row, &m) in units.iter().enumerate() {
            let y0 = TOP + ROW * row as f64 + 10.0;
            let bar = ROW - 20.0;
            let _ = writeln!(s, r#"<text x="4" y="{}">unit {}</text>"#, y0 + bar / 2.0, m + 1);
            for (i, step) in self.steps.iter().enumerate() {
                let w = step.units[m].weights;
                let total: f64 = w.iter().sum::<f64>().max(1e-12);
                let mut y = y0 + bar;
                for (k, (_, colour)) in PALETTE.iter().enumerate() {
                    let h = bar * w[k] / total;
                    y -= h;
                    let _ = writeln!(
                        s,
                        r#"<rect x="{:.1}" y="{y:.2}" width="{:.1}" height="{h:.2}" fill="{colour}"/>"#,
                        LEFT + COL * i as f64 + 4.0,
                        COL - 8.0
                    );
                }
            }
        }
        let base = TOP + ROW * units.len() as f64 + 24.0;
        for (i, step) in self.steps.iter().enumerate() {
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{base}" text-anchor="middle">{}</text>"#,
                LEFT + COL * i as f64 + COL / 2.0,
                escape(&step.word)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::corpus::{generate_corpus, CorpusSpec};
    use crate::eval::feature_cache;

    fn setup(strategy: FusionStrategy) -> (CnmModel<f32>, Vec<SceneFeatures<f32>>, Vocabulary) {
        let corpus = generate_corpus(&CorpusSpec {
            n_scenes: 3,
            ..CorpusSpec::default()
        })
        .unwrap();
        let mut cfg = ModelConfig::desk(corpus.vocab.len());
        cfg.units = 2;
        cfg.strategy = strategy;
        (CnmModel::new(cfg, 3).unwrap(), feature_cache(&corpus), corpus.vocab)
    }

    #[test]
    fn uniform_trace_has_unit_weights() {
        let (m, f, v) = setup(FusionStrategy::Uniform);
        let tr = trace_scene(&m, &f[0], 0, DecodeMode::Greedy, 5, &v).unwrap();
        assert!(!tr.steps.is_empty());
        for s in &tr.steps {
            assert_eq!(s.units.len(), 2);
            for u in &s.units {
                assert_eq!(u.weights, [1.0; 4]);
            }
        }
    }

    #[test]
    fn alphas_are_distributions_and_renderers_cover_steps() {
        let (m, f, v) = setup(FusionStrategy::Soft);
        let tr = trace_scene(&m, &f[1], 1, DecodeMode::Greedy, 6, &v).unwrap();
        for s in &tr.steps {
            for u in &s.units {
                assert!((u.weights.iter().sum::<f64>() - 1.0).abs() < 1e-5);
                for a in [&u.alphas.object, &u.alphas.attribute, &u.alphas.relation] {
                    let a = a.as_ref().unwrap();
                    assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-5);
                }
            }
        }
        assert_eq!(tr.to_csv().lines().count(), 1 + 2 * tr.steps.len());
        let svg = tr.to_svg(true);
        assert!(svg.starts_with("<svg") && svg.contains("unit 2"));
        assert!(!tr.to_svg(false).contains("unit 1<"));
    }
}
