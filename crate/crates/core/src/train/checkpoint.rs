//! Named-tensor container plus a JSON sidecar.
//!
//! ```text
//! "CNMT" | u32 version | u32 count | count × (u32 name_len | name | u32 rank | u32 dims[rank] | f32 data[..])
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EpochMetrics, TrainConfig};
use crate::config::ModelConfig;
use crate::corpus::{CorpusSpec, Vocabulary};
use crate::error::{CnmError, Result};
use crate::model::CnmModel;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CNMT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub corpus: CorpusSpec,
    pub vocabulary: Vocabulary,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimiser steps.
    pub step: usize,
    pub adam_t: u64,
    pub rng_state: u64,
    pub history: Vec<EpochMetrics>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor<f32>)>,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    /// Rebuild the model, ignoring optimiser state.
    pub fn model(&self) -> Result<CnmModel<f32>> {
        let mut model = CnmModel::<f32>::new(self.meta.model.clone(), 0)?;
        let params = self.tensors.iter().filter(|(n, _)| !n.starts_with("adam."));
        model.params.assign_from(params.map(|(n, t)| (n.as_str(), t)))?;
        Ok(model)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn encode_tensors(tensors: &[(String, Tensor<f32>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            CnmError::format(field, format!("truncated at byte {} (need {n} more)", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        let b = self.take(4, field)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
}

pub fn decode_tensors(buf: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(CnmError::format("magic", "expected \"CNMT\""));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(CnmError::format("version", format!("unsupported version {version}")));
    }
    let count = r.u32("count")? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        let field = |f: &str| format!("tensor[{i}].{f}");
        let len = r.u32(&field("name_len"))? as usize;
        let name = std::str::from_utf8(r.take(len, &field("name"))?)
            .map_err(|_| CnmError::format(field("name"), "not UTF-8"))?
            .to_string();
        let rank = r.u32(&field("rank"))? as usize;
        let mut dims = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            dims.push(r.u32(&field("dims"))? as usize);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| CnmError::format(field("dims"), "size overflows"))?;
        let bytes = r.take(
            n.checked_mul(4).ok_or_else(|| CnmError::format(field("dims"), "size overflows"))?,
            &field("data"),
        )?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(dims, data).map_err(|e| CnmError::format(field("dims"), e.to_string()))?;
        out.push((name, t));
    }
    if r.pos != buf.len() {
        return Err(CnmError::format("trailer", format!("{} unexpected bytes", buf.len() - r.pos)));
    }
    Ok(out)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, encode_tensors(&ckpt.tensors))?;
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&ckpt.meta)? + "\n")?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| CnmError::Data(format!("{}: {e}", path.display())))?;
    let tensors = decode_tensors(&bytes)?;
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| CnmError::Data(format!("{}: {e}", side.display())))?;
    let meta: CheckpointMeta =
        serde_json::from_str(&text).map_err(|e| CnmError::format("meta", e.to_string()))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(CnmError::format("meta.format_version", format!("unsupported {}", meta.format_version)));
    }
    Ok(Checkpoint { tensors, meta })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<(String, Tensor<f32>)> {
        vec![
            ("a".into(), Tensor::vector(vec![1.0, -0.0, f32::MIN_POSITIVE])),
            ("b.w".into(), Tensor::matrix(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap()),
        ]
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let bytes = encode_tensors(&sample());
        let back = decode_tensors(&bytes).unwrap();
        assert_eq!(encode_tensors(&back), bytes);
        for ((_, a), (_, b)) in sample().iter().zip(&back) {
            let bits = |t: &Tensor<f32>| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn layout_matches_format() {
        let bytes = encode_tensors(&sample()[..1]);
        assert_eq!(&bytes[..4], b"CNMT");
        assert_eq!(bytes[4..8], 1u32.to_le_bytes());
        assert_eq!(bytes[8..12], 1u32.to_le_bytes());
        assert_eq!(bytes[12..16], 1u32.to_le_bytes());
        assert_eq!(bytes[16], b'a');
        assert_eq!(bytes.len(), 4 + 4 + 4 + 4 + 1 + 4 + 4 + 12);
    }

    #[test]
    fn bad_inputs_name_the_field() {
        let mut bytes = encode_tensors(&sample());
        let field = |r: Result<_>| match r {
            Err(CnmError::Format { field, .. }) => field,
            other => panic!("expected format error, got {other:?}"),
        };
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(field(decode_tensors(&bad)), "magic");
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert_eq!(field(decode_tensors(&bad)), "version");
        bytes.truncate(bytes.len() - 3);
        assert_eq!(field(decode_tensors(&bytes)), "tensor[1].data");
    }
}
