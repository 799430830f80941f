use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The four neural modules. The discriminant is the position in the
/// controller's weight vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ModuleKind {
    Object = 0,
    Attribute = 1,
    Relation = 2,
    Function = 3,
}

/// Gold module assignment for one word.
pub type ModuleLabel = ModuleKind;

impl ModuleKind {
    pub const ALL: [ModuleKind; 4] = [
        ModuleKind::Object,
        ModuleKind::Attribute,
        ModuleKind::Relation,
        ModuleKind::Function,
    ];

    pub const VISUAL: [ModuleKind; 3] = [ModuleKind::Object, ModuleKind::Attribute, ModuleKind::Relation];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn one_hot(self) -> [f64; 4] {
        let mut w = [0.0; 4];
        w[self.index()] = 1.0;
        w
    }

    pub fn name(self) -> &'static str {
        match self {
            ModuleKind::Object => "OBJECT",
            ModuleKind::Attribute => "ATTRIBUTE",
            ModuleKind::Relation => "RELATION",
            ModuleKind::Function => "FUNCTION",
        }
    }
}

impl fmt::Display for ModuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Part-of-speech tags emitted by the corpus and the lexicon tagger.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PosTag {
    NN,
    ADJ,
    VB,
    PREP,
    CD,
    DT,
    CC,
    /// Sentence end and anything the tagger does not know.
    #[serde(rename = "other")]
    Other,
}

impl PosTag {
    pub fn as_str(self) -> &'static str {
        match self {
            PosTag::NN => "NN",
            PosTag::ADJ => "ADJ",
            PosTag::VB => "VB",
            PosTag::PREP => "PREP",
            PosTag::CD => "CD",
            PosTag::DT => "DT",
            PosTag::CC => "CC",
            PosTag::Other => "other",
        }
    }
}

impl FromStr for PosTag {
    type Err = std::convert::Infallible;

    /// Unrecognised tags parse as [`PosTag::Other`].
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "NN" | "NNS" => PosTag::NN,
            "ADJ" | "JJ" => PosTag::ADJ,
            "VB" | "VBG" | "VBZ" => PosTag::VB,
            "PREP" | "IN" => PosTag::PREP,
            "CD" => PosTag::CD,
            "DT" => PosTag::DT,
            "CC" => PosTag::CC,
            other => {
                if other != "other" {
                    log::debug!("unknown POS tag {other:?} mapped to FUNCTION");
                }
                PosTag::Other
            }
        })
    }
}

/// Nouns go to OBJECT, adjectives to ATTRIBUTE, verbs, prepositions and
/// quantifiers to RELATION, everything else to FUNCTION.
pub fn pos_to_module_label(tag: PosTag) -> ModuleLabel {
    match tag {
        PosTag::NN => ModuleKind::Object,
        PosTag::ADJ => ModuleKind::Attribute,
        PosTag::VB | PosTag::PREP | PosTag::CD => ModuleKind::Relation,
        PosTag::DT | PosTag::CC | PosTag::Other => ModuleKind::Function,
    }
}

/// Word classes scored by the part-of-speech recall metric.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WordClass {
    Noun,
    Adjective,
    Verb,
    Preposition,
    Quantifier,
}

impl WordClass {
    pub const ALL: [WordClass; 5] = [
        WordClass::Noun,
        WordClass::Adjective,
        WordClass::Verb,
        WordClass::Preposition,
        WordClass::Quantifier,
    ];

    pub fn of(tag: PosTag) -> Option<Self> {
        match tag {
            PosTag::NN => Some(WordClass::Noun),
            PosTag::ADJ => Some(WordClass::Adjective),
            PosTag::VB => Some(WordClass::Verb),
            PosTag::PREP => Some(WordClass::Preposition),
            PosTag::CD => Some(WordClass::Quantifier),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            WordClass::Noun => "noun",
            WordClass::Adjective => "adjective",
            WordClass::Verb => "verb",
            WordClass::Preposition => "preposition",
            WordClass::Quantifier => "quantifier",
        }
    }
}
