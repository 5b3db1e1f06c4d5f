//! Single-file checkpoints: one JSON header line, then raw parameter data.
//!
//! ```text
//! {"format":"aba-checkpoint-1","config":{…},"vocab":[…],"step":N,"params":[{"name":…,"shape":[…],"offset":…}, …]}\n
//! <little-endian f64 blocks, in manifest order>
//! ```
//!
//! Offsets are in bytes from the first byte after the newline.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Model, ModelConfig};
use crate::encoder::Vocabulary;
use crate::error::{Error, Result};
use crate::io::{read_bytes, write_atomic};
use crate::params::ParamStore;
use crate::tensor::Tensor;

const FORMAT: &str = "aba-checkpoint-1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    config: ModelConfig,
    vocab: Vocabulary,
    step: u64,
    params: Vec<ManifestEntry>,
}

/// A model together with its optimizer step count.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub step: u64,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut params = Vec::with_capacity(self.model.params.len());
        let mut offset = 0;
        for (name, t) in self.model.params.iter() {
            params.push(ManifestEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += 8 * t.numel();
        }
        let header = Header {
            format: FORMAT.to_string(),
            config: self.model.config.clone(),
            vocab: self.model.vocab.clone(),
            step: self.step,
            params,
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        out.reserve(offset);
        for (_, t) in self.model.params.iter() {
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let schema = |message: String| Error::Schema {
            path: path.to_path_buf(),
            message,
        };
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| schema("missing header line".into()))?;
        let header: Header = serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if header.format != FORMAT {
            return Err(schema(format!("unknown format `{}`", header.format)));
        }
        let body = &bytes[nl + 1..];
        let mut params = ParamStore::new();
        let mut expected_offset = 0;
        for entry in &header.params {
            if entry.offset != expected_offset {
                return Err(schema(format!("parameter `{}` at offset {}, expected {expected_offset}", entry.name, entry.offset)));
            }
            let numel: usize = entry.shape.iter().product();
            let end = entry.offset + 8 * numel;
            let block = body
                .get(entry.offset..end)
                .ok_or_else(|| schema(format!("parameter `{}` runs past the end of the file", entry.name)))?;
            let data = block
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let t = Tensor::new(entry.shape.clone(), data).map_err(|e| schema(format!("parameter `{}`: {e}", entry.name)))?;
            if params.contains(&entry.name) {
                return Err(schema(format!("parameter `{}` listed twice", entry.name)));
            }
            params.insert(entry.name.clone(), t);
            expected_offset = end;
        }
        if expected_offset != body.len() {
            return Err(schema(format!("{} trailing bytes after the last parameter", body.len() - expected_offset)));
        }
        let model = Model {
            config: header.config,
            vocab: header.vocab,
            params,
        };
        model.check_layout().map_err(|e| schema(e.to_string()))?;
        Ok(Checkpoint { model, step: header.step })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_bytes(path)?, path)
    }
}
