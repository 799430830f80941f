//! Procedural scenes with templated, fully labelled captions.
//!
//! Every scene holds one agent (a person or animal), one target object that
//! may be duplicated, and background regions with no attributes. The single
//! relation points from the agent to the target, and its predicate is a fixed
//! function of the two classes, so a caption is determined by the scene up to
//! the choice of article template.

mod features;
mod io;
pub mod vocab;

pub use features::FeatureTables;
pub use vocab::{Vocabulary, BOS, EOS, PAD, UNK};

use serde::{Deserialize, Serialize};

use crate::error::{CnmError, Result};
use crate::labels::{pos_to_module_label, ModuleLabel, PosTag};
use crate::tensor::rng::Rng;

const AGENT_NAMES: [&str; 6] = ["man", "woman", "boy", "girl", "dog", "cat"];
const TARGET_NAMES: [&str; 7] = ["ball", "bike", "car", "box", "chair", "kite", "table"];
const BACKGROUND_NAMES: [&str; 7] = ["tree", "wall", "grass", "sky", "road", "fence", "window"];
const AGENT_ATTRS: [&str; 5] = ["young", "old", "small", "happy", "angry"];
const THING_ATTRS: [&str; 5] = ["red", "blue", "orange", "wooden", "empty"];
const VERBS: [&str; 4] = ["riding", "holding", "watching", "pushing"];
const PREPS: [&str; 4] = ["on", "near", "under", "behind"];
const FUNCTION_WORDS: [(&str, PosTag); 6] = [
    ("a", PosTag::DT),
    ("the", PosTag::DT),
    ("an", PosTag::DT),
    ("and", PosTag::CC),
    ("this", PosTag::DT),
    ("that", PosTag::DT),
];
const QUANTIFIERS: [&str; 2] = ["two", "three"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub n_scenes: usize,
    pub k_min: usize,
    pub k_max: usize,
    pub n_objects: usize,
    pub n_attributes: usize,
    pub n_predicates: usize,
    pub n_function_words: usize,
    pub captions_per_scene: usize,
    /// Train and validation fractions; the test split takes the rest.
    pub split: [f64; 2],
    pub relations: bool,
    /// Probability that the target appears two or three times.
    pub duplicate_prob: f64,
    /// Probability that a described region carries two attributes.
    pub two_attribute_prob: f64,
    /// Probability of the definite-article template.
    pub definite_prob: f64,
    pub d_r: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_scenes: 500,
            k_min: 3,
            k_max: 6,
            n_objects: 20,
            n_attributes: 10,
            n_predicates: 8,
            n_function_words: 6,
            captions_per_scene: 5,
            split: [0.8, 0.1],
            relations: true,
            duplicate_prob: 0.12,
            two_attribute_prob: 0.2,
            definite_prob: 0.15,
            d_r: 64,
            noise: 0.1,
            seed: 7,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(CnmError::Spec(m));
        for (name, n) in [
            ("n_objects", self.n_objects),
            ("n_attributes", self.n_attributes),
            ("n_predicates", self.n_predicates),
            ("n_function_words", self.n_function_words),
        ] {
            if n < 2 {
                return err(format!("{name} must be at least 2, got {n}"));
            }
        }
        if self.n_function_words > FUNCTION_WORDS.len() {
            return err(format!("at most {} function words are supported", FUNCTION_WORDS.len()));
        }
        if self.k_min == 0 || self.k_min > self.k_max {
            return err(format!("invalid region range [{}, {}]", self.k_min, self.k_max));
        }
        if self.relations && self.k_min < 2 {
            return err(format!("relations need at least 2 regions, k_min = {}", self.k_min));
        }
        if self.captions_per_scene == 0 {
            return err("captions_per_scene must be positive".into());
        }
        let (_, _, bg) = group_sizes(self.n_objects);
        let described = if self.relations { 2 } else { 1 };
        if bg == 0 && self.k_max > described {
            return err(format!(
                "k_max = {} needs background classes but n_objects = {} leaves none",
                self.k_max, self.n_objects
            ));
        }
        if self.d_r <= features::POSITION_DIMS {
            return err(format!("d_r must exceed {}", features::POSITION_DIMS));
        }
        let probs = [self.duplicate_prob, self.two_attribute_prob, self.definite_prob, self.split[0], self.split[1]];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || self.split[0] + self.split[1] > 1.0 {
            return err("probabilities and split fractions must lie in [0, 1]".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return err("noise must be a finite non-negative number".into());
        }
        Ok(())
    }
}

/// Agent, target and background class counts.
fn group_sizes(n: usize) -> (usize, usize, usize) {
    let agents = ((n as f64 * 0.3).round() as usize).clamp(1, n - 1);
    let targets = ((n as f64 * 0.35).round() as usize).clamp(1, n - agents);
    (agents, targets, n - agents - targets)
}

fn name_from(pool: &[&str], i: usize, prefix: &str) -> String {
    pool.get(i).map_or_else(|| format!("{prefix}{i}"), |s| s.to_string())
}

/// Token ids and class groups derived from a spec.
#[derive(Clone, Debug, PartialEq)]
pub struct Lexicon {
    pub objects: Vec<usize>,
    pub attributes: Vec<usize>,
    pub predicates: Vec<usize>,
    pub agents: std::ops::Range<usize>,
    pub targets: std::ops::Range<usize>,
    pub background: std::ops::Range<usize>,
    pub agent_attributes: std::ops::Range<usize>,
    pub thing_attributes: std::ops::Range<usize>,
    pub article: usize,
    pub definite: usize,
    pub article_vowel: Option<usize>,
    pub and: Option<usize>,
    pub quantifiers: [usize; 2],
    vowel: Vec<bool>,
}

impl Lexicon {
    pub fn build(spec: &CorpusSpec) -> Result<(Lexicon, Vocabulary)> {
        spec.validate()?;
        let mut v = Vocabulary::new();
        let (na, nt, nb) = group_sizes(spec.n_objects);
        let mut objects = Vec::with_capacity(spec.n_objects);
        for i in 0..na {
            objects.push(v.push(&name_from(&AGENT_NAMES, i, "agent"), PosTag::NN)?);
        }
        for i in 0..nt {
            objects.push(v.push(&name_from(&TARGET_NAMES, i, "thing"), PosTag::NN)?);
        }
        for i in 0..nb {
            objects.push(v.push(&name_from(&BACKGROUND_NAMES, i, "scenery"), PosTag::NN)?);
        }
        let n_agent_attr = spec.n_attributes.div_ceil(2);
        let mut attributes = Vec::new();
        let mut vowel = Vec::new();
        for i in 0..spec.n_attributes {
            let name = if i < n_agent_attr {
                name_from(&AGENT_ATTRS, i, "quality")
            } else {
                name_from(&THING_ATTRS, i - n_agent_attr, "colour")
            };
            vowel.push(name.starts_with(['a', 'e', 'i', 'o', 'u']));
            attributes.push(v.push(&name, PosTag::ADJ)?);
        }
        let n_verbs = spec.n_predicates.div_ceil(2);
        let mut predicates = Vec::new();
        for i in 0..spec.n_predicates {
            let id = if i < n_verbs {
                v.push(&name_from(&VERBS, i, "doing"), PosTag::VB)?
            } else {
                v.push(&name_from(&PREPS, i - n_verbs, "beside"), PosTag::PREP)?
            };
            predicates.push(id);
        }
        let mut fw = Vec::new();
        for (w, tag) in &FUNCTION_WORDS[..spec.n_function_words] {
            fw.push(v.push(w, *tag)?);
        }
        let quantifiers = QUANTIFIERS.map(|q| v.push(q, PosTag::CD).expect("quantifiers are distinct"));
        let lex = Lexicon {
            objects,
            attributes,
            predicates,
            agents: 0..na,
            targets: na..na + nt,
            background: na + nt..spec.n_objects,
            agent_attributes: 0..n_agent_attr,
            thing_attributes: n_agent_attr..spec.n_attributes,
            article: fw[0],
            definite: fw[1],
            article_vowel: fw.get(2).copied(),
            and: fw.get(3).copied(),
            quantifiers,
            vowel,
        };
        Ok((lex, v))
    }

    /// Predicate of the agent→target relation.
    pub fn predicate(&self, agent: usize, target: usize) -> usize {
        (agent - self.agents.start + target - self.targets.start) % self.predicates.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = CnmError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(CnmError::Argument(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub object: usize,
    /// Attribute ids in ascending order.
    pub attributes: Vec<usize>,
    pub position: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub subject: usize,
    pub predicate: usize,
    pub object: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: usize,
    pub split: Split,
    pub regions: Vec<Region>,
    pub relations: Vec<Relation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionExample {
    pub scene_id: usize,
    pub text: String,
    /// Token ids including the begin and end tokens.
    pub tokens: Vec<usize>,
    /// One label per token after the begin token.
    pub labels: Vec<ModuleLabel>,
    pub tags: Vec<PosTag>,
}

impl CaptionExample {
    pub fn from_tokens(scene_id: usize, tokens: Vec<usize>, vocab: &Vocabulary) -> Self {
        let tags: Vec<PosTag> = tokens[1..].iter().map(|&t| vocab.tag(t)).collect();
        let labels = tags.iter().map(|&t| pos_to_module_label(t)).collect();
        Self {
            scene_id,
            text: vocab.decode(&tokens),
            tokens,
            labels,
            tags,
        }
    }

    /// Words between the begin and end tokens.
    pub fn words(&self) -> &[usize] {
        let end = self.tokens.len() - usize::from(self.tokens.last() == Some(&EOS));
        &self.tokens[1..end]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub spec: CorpusSpec,
    pub vocab: Vocabulary,
    pub lexicon: Lexicon,
    pub scenes: Vec<Scene>,
    pub examples: Vec<CaptionExample>,
}

impl Corpus {
    pub fn scene(&self, id: usize) -> Option<&Scene> {
        self.scenes.get(id).filter(|s| s.id == id)
    }

    pub fn scenes_in(&self, split: Split) -> impl Iterator<Item = &Scene> {
        self.scenes.iter().filter(move |s| s.split == split)
    }

    pub fn examples_in(&self, split: Split) -> impl Iterator<Item = &CaptionExample> {
        self.examples
            .iter()
            .filter(move |e| self.scenes[e.scene_id].split == split)
    }

    /// References grouped per scene id.
    pub fn references(&self) -> Vec<Vec<Vec<usize>>> {
        let mut refs = vec![Vec::new(); self.scenes.len()];
        for e in &self.examples {
            refs[e.scene_id].push(e.words().to_vec());
        }
        refs
    }

    pub fn features(&self) -> FeatureTables {
        FeatureTables::new(&self.spec)
    }
}

fn pick_attributes(rng: &mut Rng, pool: std::ops::Range<usize>, two_prob: f64) -> Vec<usize> {
    let n = pool.len();
    let first = pool.start + rng.below(n);
    if n >= 2 && rng.bernoulli(two_prob) {
        let mut second = pool.start + rng.below(n - 1);
        if second >= first {
            second += 1;
        }
        let mut v = vec![first, second];
        v.sort_unstable();
        v
    } else {
        vec![first]
    }
}

fn random_position(rng: &mut Rng) -> [f64; 2] {
    [rng.uniform(), rng.uniform()]
}

fn generate_scene(spec: &CorpusSpec, lex: &Lexicon, id: usize, rng: &mut Rng) -> Scene {
    let two = if lex.and.is_some() { spec.two_attribute_prob } else { 0.0 };
    let k = spec.k_min + rng.below(spec.k_max - spec.k_min + 1);
    let agent = Region {
        object: lex.agents.start + rng.below(lex.agents.len()),
        attributes: pick_attributes(rng, lex.agent_attributes.clone(), two),
        position: random_position(rng),
    };
    let mut regions = vec![agent];
    if spec.relations {
        let target = Region {
            object: lex.targets.start + rng.below(lex.targets.len()),
            attributes: pick_attributes(rng, lex.thing_attributes.clone(), two),
            position: random_position(rng),
        };
        let copies = if rng.bernoulli(spec.duplicate_prob) { 1 + rng.below(2) } else { 0 };
        let copies = copies.min(k - 2);
        for _ in 0..=copies {
            regions.push(Region {
                position: random_position(rng),
                ..target.clone()
            });
        }
    }
    while regions.len() < k {
        regions.push(Region {
            object: lex.background.start + rng.below(lex.background.len()),
            attributes: Vec::new(),
            position: random_position(rng),
        });
    }
    let mut order: Vec<usize> = (0..regions.len()).collect();
    rng.shuffle(&mut order);
    let regions: Vec<Region> = order.iter().map(|&i| regions[i].clone()).collect();
    let mut relations = Vec::new();
    if spec.relations {
        let subject = order.iter().position(|&i| i == 0).expect("agent present");
        let object = order.iter().position(|&i| i == 1).expect("target present");
        relations.push(Relation {
            subject,
            predicate: lex.predicate(regions[subject].object, regions[object].object),
            object,
        });
    }
    Scene {
        id,
        split: Split::Train,
        regions,
        relations,
    }
}

/// `[article] ADJ (and ADJ) NN` for one region.
fn noun_phrase(lex: &Lexicon, region: &Region, count: usize, definite: bool, out: &mut Vec<usize>) {
    let first_attr = region.attributes[0];
    let det = match count {
        1 if definite => lex.definite,
        1 => match lex.article_vowel {
            Some(an) if lex.vowel[first_attr] => an,
            _ => lex.article,
        },
        n => lex.quantifiers[(n - 2).min(1)],
    };
    out.push(det);
    for (i, &a) in region.attributes.iter().enumerate() {
        if i > 0 {
            out.push(lex.and.expect("two attributes require the conjunction"));
        }
        out.push(lex.attributes[a]);
    }
    out.push(lex.objects[region.object]);
}

/// Token ids (with begin and end) describing a scene under one template.
pub fn render_caption(lex: &Lexicon, scene: &Scene, definite: bool) -> Vec<usize> {
    let mut out = vec![BOS];
    let agent_idx = scene.relations.first().map_or_else(
        || {
            scene
                .regions
                .iter()
                .position(|r| lex.agents.contains(&r.object))
                .expect("scene has an agent")
        },
        |r| r.subject,
    );
    noun_phrase(lex, &scene.regions[agent_idx], 1, definite, &mut out);
    if let Some(rel) = scene.relations.first() {
        out.push(lex.predicates[rel.predicate]);
        let target = &scene.regions[rel.object];
        let count = scene.regions.iter().filter(|r| r.object == target.object).count();
        noun_phrase(lex, target, count, definite, &mut out);
    }
    out.push(EOS);
    out
}

pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    let (lexicon, vocab) = Lexicon::build(spec)?;
    let mut rng = Rng::derive(spec.seed, 1);
    let mut scenes: Vec<Scene> = (0..spec.n_scenes)
        .map(|id| generate_scene(spec, &lexicon, id, &mut rng))
        .collect();

    let mut order: Vec<usize> = (0..spec.n_scenes).collect();
    rng.shuffle(&mut order);
    let n_train = (spec.n_scenes as f64 * spec.split[0]).round() as usize;
    let n_val = ((spec.n_scenes as f64 * spec.split[1]).round() as usize).min(spec.n_scenes - n_train);
    for (rank, &i) in order.iter().enumerate() {
        scenes[i].split = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }

    let mut caption_rng = Rng::derive(spec.seed, 2);
    let mut examples = Vec::with_capacity(spec.n_scenes * spec.captions_per_scene);
    for scene in &scenes {
        for _ in 0..spec.captions_per_scene {
            let definite = caption_rng.bernoulli(spec.definite_prob);
            let tokens = render_caption(&lexicon, scene, definite);
            examples.push(CaptionExample::from_tokens(scene.id, tokens, &vocab));
        }
    }
    Ok(Corpus {
        spec: spec.clone(),
        vocab,
        lexicon,
        scenes,
        examples,
    })
}

/// Keep `x` random captions per training scene; other splits are untouched.
pub fn few_shot_subset(corpus: &Corpus, x: usize, seed: u64) -> Result<Vec<CaptionExample>> {
    if x == 0 || x > corpus.spec.captions_per_scene {
        return Err(CnmError::Argument(format!(
            "captions per scene must lie in [1, {}], got {x}",
            corpus.spec.captions_per_scene
        )));
    }
    let mut rng = Rng::derive(seed, 3);
    let mut by_scene: Vec<Vec<&CaptionExample>> = vec![Vec::new(); corpus.scenes.len()];
    for e in &corpus.examples {
        by_scene[e.scene_id].push(e);
    }
    let mut out = Vec::new();
    for (scene, group) in corpus.scenes.iter().zip(by_scene) {
        if scene.split != Split::Train || group.len() <= x {
            out.extend(group.into_iter().cloned());
            continue;
        }
        let mut idx: Vec<usize> = (0..group.len()).collect();
        rng.shuffle(&mut idx);
        let mut keep = idx[..x].to_vec();
        keep.sort_unstable();
        out.extend(keep.into_iter().map(|i| group[i].clone()));
    }
    Ok(out)
}
