use std::collections::HashMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{CnmError, Result};
use crate::labels::PosTag;

pub const BOS: usize = 0;
pub const EOS: usize = 1;
pub const PAD: usize = 2;
pub const UNK: usize = 3;

const RESERVED: [&str; 4] = ["<bos>", "<eos>", "<pad>", "<unk>"];

/// Token/id bijection plus the tag of every token.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    tags: Vec<PosTag>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
    tags: Vec<PosTag>,
}

impl Vocabulary {
    /// A vocabulary holding only the four reserved tokens.
    pub fn new() -> Self {
        let mut v = Self {
            tokens: Vec::new(),
            tags: Vec::new(),
            index: HashMap::new(),
        };
        for t in RESERVED {
            v.push(t, PosTag::Other).expect("reserved tokens are distinct");
        }
        v
    }

    pub fn push(&mut self, token: &str, tag: PosTag) -> Result<usize> {
        if self.index.contains_key(token) {
            return Err(CnmError::Spec(format!("duplicate token {token:?}")));
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.tags.push(tag);
        self.index.insert(token.to_string(), id);
        Ok(id)
    }

    fn from_parts(tokens: Vec<String>, tags: Vec<PosTag>) -> Result<Self> {
        if tokens.len() != tags.len() {
            return Err(CnmError::format("vocab.tags", "length differs from tokens"));
        }
        if tokens.len() < 4 || tokens[..4] != RESERVED {
            return Err(CnmError::format("vocab.tokens", "reserved ids 0..3 missing"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(CnmError::format("vocab.tokens", format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, tags, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(&token.to_lowercase()).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(RESERVED[UNK], String::as_str)
    }

    pub fn tag(&self, id: usize) -> PosTag {
        self.tags.get(id).copied().unwrap_or(PosTag::Other)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Space-joined words, skipping reserved tokens.
    pub fn decode(&self, ids: &[usize]) -> String {
        self.words(ids).join(" ")
    }

    pub fn words<'a>(&'a self, ids: &[usize]) -> Vec<&'a str> {
        ids.iter().filter(|&&i| i > UNK).map(|&i| self.token(i)).collect()
    }

    /// Whitespace tokenisation with lowercase normalisation.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.split_whitespace().map(|w| self.id(w)).collect()
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        VocabFile {
            tokens: self.tokens.clone(),
            tags: self.tags.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let f = VocabFile::deserialize(d)?;
        Vocabulary::from_parts(f.tokens, f.tags).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_fixed() {
        let v = Vocabulary::new();
        assert_eq!(v.id("<bos>"), BOS);
        assert_eq!(v.id("<eos>"), EOS);
        assert_eq!(v.id("<pad>"), PAD);
        assert_eq!(v.id("nothing"), UNK);
    }

    #[test]
    fn json_round_trip_and_validation() {
        let mut v = Vocabulary::new();
        v.push("cat", PosTag::NN).unwrap();
        assert!(v.push("cat", PosTag::NN).is_err());
        let s = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.encode("the CAT"), vec![UNK, 4]);
        let bad = r#"{"tokens":["a","b"],"tags":["NN","NN"]}"#;
        assert!(serde_json::from_str::<Vocabulary>(bad).is_err());
    }
}
