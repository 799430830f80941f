//! Held-out evaluation: teacher-forced statistics and decoded-caption metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::controller::{dominant_module, GumbelNoise};
use crate::corpus::{CaptionExample, Corpus, Split, BOS, EOS};
use crate::decode::{beam_search, greedy_decode, sample_decode, BeamConfig, ImageDecoder};
use crate::error::Result;
use crate::labels::PosTag;
use crate::metrics::{bleu_n, corpus_bleu, corpus_cider_d, pos_recall_all, CiderParams, IdfTable, TaggedCaption};
use crate::model::CnmModel;
use crate::tensor::rng::Rng;
use crate::tensor::{Graph, Real, Tensor};
use crate::train::teacher_forced;

/// RoI features `(R_O, R_A)` of one scene.
pub type SceneFeatures<F> = (Tensor<F>, Tensor<F>);

pub fn feature_cache<F: Real>(corpus: &Corpus) -> Vec<SceneFeatures<F>> {
    let tables = corpus.features();
    corpus
        .scenes
        .iter()
        .map(|s| {
            let (ro, ra) = tables.synthesize::<F>(s);
            (ro.features().clone(), ra.features().clone())
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum DecodeMode {
    Greedy,
    Beam { width: usize },
    Sample { seed: u64 },
}

impl std::str::FromStr for DecodeMode {
    type Err = crate::CnmError;

    /// `greedy`, `beam`, `beam:W` or `sample:SEED`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || crate::CnmError::Argument(format!("unknown decode mode {s:?}"));
        match s.split_once(':') {
            None if s == "greedy" => Ok(DecodeMode::Greedy),
            None if s == "beam" => Ok(DecodeMode::Beam { width: 5 }),
            None if s == "sample" => Ok(DecodeMode::Sample { seed: 0 }),
            Some(("beam", w)) => w.parse().ok().filter(|&w| w > 0).map(|width| DecodeMode::Beam { width }).ok_or_else(bad),
            Some(("sample", n)) => n.parse().map(|seed| DecodeMode::Sample { seed }).map_err(|_| bad()),
            _ => Err(bad()),
        }
    }
}

/// Decode one scene. The result excludes the begin token and keeps the end
/// token when one was produced.
pub fn decode_scene<F: Real>(
    model: &CnmModel<F>,
    features: &SceneFeatures<F>,
    mode: DecodeMode,
    max_len: usize,
    scene_id: usize,
) -> Result<Vec<usize>> {
    let enc = model.encode_values(&features.0, &features.1)?;
    let dec = ImageDecoder::new(model, enc, BOS, EOS);
    match mode {
        DecodeMode::Greedy => greedy_decode(&dec, max_len),
        DecodeMode::Beam { width } => {
            let cfg = BeamConfig {
                width,
                max_len,
                length_normalize: false,
            };
            Ok(beam_search(&dec, cfg)?.swap_remove(0).tokens)
        }
        DecodeMode::Sample { seed } => {
            let mut rng = Rng::derive(seed, scene_id as u64);
            Ok(sample_decode(&dec, &mut rng, max_len)?.0)
        }
    }
}

pub fn strip_end(tokens: &[usize]) -> Vec<usize> {
    tokens.iter().copied().take_while(|&t| t != EOS).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TeacherForcedStats {
    pub tokens: usize,
    pub xe_per_token: f64,
    pub token_accuracy: f64,
    /// Share of (token, unit) pairs whose dominant weight matches the gold
    /// module label. `None` without a controller.
    pub controller_agreement: Option<f64>,
    pub agreement_by_unit: Vec<f64>,
    /// Last unit agreement restricted to gold nouns.
    pub noun_object_rate: Option<f64>,
}

pub fn teacher_forced_stats<F: Real>(
    model: &CnmModel<F>,
    examples: &[&CaptionExample],
    features: &[SceneFeatures<F>],
) -> Result<TeacherForcedStats> {
    let units = model.config.units;
    let (mut tokens, mut correct, mut xe) = (0usize, 0usize, 0.0f64);
    let mut agree = vec![0usize; units];
    let (mut nouns, mut noun_hits) = (0usize, 0usize);
    for e in examples {
        let (ro, ra) = &features[e.scene_id];
        let mut g = Graph::new(&model.params);
        let enc = model.encode(&mut g, ro, ra)?;
        let tf = teacher_forced(&mut g, model, &enc, &e.tokens, None, &mut GumbelNoise::Pinned)?;
        xe += g.value(tf.xe).item().as_f64();
        for (t, &p) in tf.predictions.iter().enumerate() {
            tokens += 1;
            correct += usize::from(p == e.tokens[t + 1]);
            for (m, &w) in tf.weights[t].iter().enumerate() {
                let hit = dominant_module(&g.value(w).to_f64_vec()) == e.labels[t];
                agree[m] += usize::from(hit);
                if m + 1 == units && e.tags[t] == PosTag::NN {
                    nouns += 1;
                    noun_hits += usize::from(hit);
                }
            }
        }
    }
    let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let has_ctrl = model.config.strategy.uses_controller();
    Ok(TeacherForcedStats {
        tokens,
        xe_per_token: if tokens == 0 { 0.0 } else { xe / tokens as f64 },
        token_accuracy: frac(correct, tokens),
        controller_agreement: has_ctrl.then(|| frac(agree.iter().sum(), tokens * units)),
        agreement_by_unit: agree.iter().map(|&a| frac(a, tokens)).collect(),
        noun_object_rate: (has_ctrl && nouns > 0).then(|| frac(noun_hits, nouns)),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub scene_id: usize,
    pub caption: String,
    pub bleu4: f64,
    pub cider_d: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub decode: DecodeMode,
    pub images: usize,
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub cider_d: f64,
    /// Keyed by word class; `null` when the class never occurs in the gold.
    pub pos_recall: BTreeMap<String, Option<f64>>,
    pub teacher_forced: TeacherForcedStats,
    pub idf_checksum: String,
    pub idf_documents: usize,
    pub per_image: Vec<ImageScore>,
}

/// Decode every scene of `split` and score it against that split's
/// references, with idf frozen over the same references.
pub fn evaluate<F: Real>(
    model: &CnmModel<F>,
    corpus: &Corpus,
    features: &[SceneFeatures<F>],
    split: Split,
    mode: DecodeMode,
    max_len: usize,
) -> Result<EvalReport> {
    let all_refs = corpus.references();
    let scenes: Vec<usize> = corpus.scenes_in(split).map(|s| s.id).collect();
    let refs: Vec<Vec<Vec<usize>>> = scenes.iter().map(|&i| all_refs[i].clone()).collect();
    let idf = IdfTable::build(&refs, 4);
    let mut preds = Vec::with_capacity(scenes.len());
    for &id in &scenes {
        preds.push(strip_end(&decode_scene(model, &features[id], mode, max_len, id)?));
    }
    let params = CiderParams::default();
    let (cider, per_cider) = corpus_cider_d(&preds, &refs, &idf, params);
    let bleu = [1, 2, 3, 4].map(|n| corpus_bleu(&preds, &refs, n));

    let mut gold: Vec<Vec<TaggedCaption>> = vec![Vec::new(); corpus.scenes.len()];
    for e in corpus.examples_in(split) {
        gold[e.scene_id].push(TaggedCaption {
            tokens: e.tokens[1..].to_vec(),
            tags: e.tags.clone(),
        });
    }
    let gold: Vec<Vec<TaggedCaption>> = scenes.iter().map(|&i| std::mem::take(&mut gold[i])).collect();
    let pos_recall = pos_recall_all(&preds, &gold)
        .into_iter()
        .map(|(k, v)| (k.name().to_string(), v))
        .collect();

    let examples: Vec<&CaptionExample> = corpus.examples_in(split).collect();
    let teacher_forced = teacher_forced_stats(model, &examples, features)?;
    let per_image = scenes
        .iter()
        .zip(&preds)
        .zip(&refs)
        .zip(per_cider)
        .map(|(((&scene_id, p), r), c)| ImageScore {
            scene_id,
            caption: corpus.vocab.decode(p),
            bleu4: if p.is_empty() { 0.0 } else { bleu_n(p, r, 4) },
            cider_d: c,
        })
        .collect();
    Ok(EvalReport {
        split,
        decode: mode,
        images: scenes.len(),
        bleu1: bleu[0],
        bleu2: bleu[1],
        bleu3: bleu[2],
        bleu4: bleu[3],
        cider_d: cider,
        pos_recall,
        teacher_forced,
        idf_checksum: idf.checksum(),
        idf_documents: idf.n_docs(),
        per_image,
    })
}
