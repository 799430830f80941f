use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{CaptionExample, Corpus, CorpusSpec, Lexicon, Scene, Vocabulary};
use crate::error::{CnmError, Result};

pub const SCENES_FILE: &str = "scenes.jsonl";
pub const CAPTIONS_FILE: &str = "captions.jsonl";
pub const VOCAB_FILE: &str = "vocab.json";
pub const SPEC_FILE: &str = "corpus_spec.json";

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| CnmError::Data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line)
            .map_err(|e| CnmError::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(row);
    }
    Ok(out)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CnmError::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CnmError::Data(format!("{}: {e}", path.display())))
}

impl Corpus {
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_jsonl(&dir.join(SCENES_FILE), &self.scenes)?;
        write_jsonl(&dir.join(CAPTIONS_FILE), &self.examples)?;
        fs::write(dir.join(VOCAB_FILE), serde_json::to_string_pretty(&self.vocab)? + "\n")?;
        fs::write(dir.join(SPEC_FILE), serde_json::to_string_pretty(&self.spec)? + "\n")?;
        Ok(())
    }

    /// Load a corpus directory and check it against its own spec.
    pub fn read_dir(dir: &Path) -> Result<Corpus> {
        let spec: CorpusSpec = read_json(&dir.join(SPEC_FILE))?;
        let vocab: Vocabulary = read_json(&dir.join(VOCAB_FILE))?;
        let (lexicon, expected) = Lexicon::build(&spec)?;
        if vocab != expected {
            return Err(CnmError::Data(format!("{VOCAB_FILE} does not match {SPEC_FILE}")));
        }
        let scenes: Vec<Scene> = read_jsonl(&dir.join(SCENES_FILE))?;
        let examples: Vec<CaptionExample> = read_jsonl(&dir.join(CAPTIONS_FILE))?;
        for (i, s) in scenes.iter().enumerate() {
            if s.id != i {
                return Err(CnmError::Data(format!("scene at line {} has id {}", i + 1, s.id)));
            }
            if s.regions.iter().any(|r| r.object >= spec.n_objects || r.attributes.iter().any(|&a| a >= spec.n_attributes)) {
                return Err(CnmError::Data(format!("scene {i} references an unknown class")));
            }
        }
        for e in &examples {
            if e.scene_id >= scenes.len() || e.tokens.iter().any(|&t| t >= vocab.len()) {
                return Err(CnmError::Data(format!("caption {:?} is out of range", e.text)));
            }
            if e.tokens.len() < 2 || e.labels.len() + 1 != e.tokens.len() || e.tags.len() != e.labels.len() {
                return Err(CnmError::Data(format!("caption {:?} has inconsistent labels", e.text)));
            }
        }
        Ok(Corpus {
            spec,
            vocab,
            lexicon,
            scenes,
            examples,
        })
    }
}
