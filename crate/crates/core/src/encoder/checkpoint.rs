//! Binary checkpoint format.
//!
//! ```text
//! "EFPCKPT1"                      8-byte magic
//! u32 LE header length, header    JSON {format_version, model_config, vocab}
//! per tensor: u32 LE count, count x f32 LE   (order of ModelParams::tensors)
//! u32 LE CRC32 of every preceding byte
//! ```

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::ModelConfig;
use super::model::Model;
use super::params::ModelParams;
use super::tensor::Matrix;
use super::vocab::Vocab;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"EFPCKPT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io error: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("checkpoint checksum mismatch (file truncated or corrupted)")]
    ChecksumMismatch,
    #[error("checkpoint format_version {found} is not supported (this build reads version {expected})")]
    FormatVersionMismatch { found: u32, expected: u32 },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    model_config: ModelConfig,
    vocab: Vocab,
}

pub fn to_bytes<T: Scalar>(model: &Model<T>) -> Vec<u8> {
    to_bytes_with_version(model, FORMAT_VERSION)
}

fn to_bytes_with_version<T: Scalar>(model: &Model<T>, version: u32) -> Vec<u8> {
    let header = Header {
        format_version: version,
        model_config: model.params.config.clone(),
        vocab: model.vocab.clone(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + header.len() + 4 * model.params.num_parameters());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, m) in model.params.tensors() {
        out.extend_from_slice(&(m.data.len() as u32).to_le_bytes());
        for &v in &m.data {
            out.extend_from_slice(&v.as_f32().to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| CheckpointError::Malformed("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Model<T>, CheckpointError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < MAGIC.len() + 8 {
        return Err(CheckpointError::ChecksumMismatch);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
        return Err(CheckpointError::ChecksumMismatch);
    }
    let mut r = Reader {
        buf: body,
        pos: MAGIC.len(),
    };
    let header_len = r.u32()? as usize;
    let header: serde_json::Value = serde_json::from_slice(r.take(header_len)?)
        .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    let found = header
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| CheckpointError::Malformed("missing format_version".into()))? as u32;
    if found != FORMAT_VERSION {
        return Err(CheckpointError::FormatVersionMismatch {
            found,
            expected: FORMAT_VERSION,
        });
    }
    let header: Header =
        serde_json::from_value(header).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    header
        .model_config
        .validate()
        .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    if header.vocab.size() != header.model_config.vocab_size {
        return Err(CheckpointError::Malformed("vocab size does not match model config".into()));
    }

    let mut tensors = Vec::new();
    for (rows, cols) in ModelParams::<T>::shapes(&header.model_config) {
        let count = r.u32()? as usize;
        if count != rows * cols {
            return Err(CheckpointError::Malformed(format!(
                "tensor has {count} values, expected {rows}x{cols}"
            )));
        }
        let raw = r.take(4 * count)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| T::from_single(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        tensors.push(Matrix::from_vec(rows, cols, data));
    }
    if r.pos != body.len() {
        return Err(CheckpointError::Malformed("trailing bytes after tensors".into()));
    }
    let mut params = ModelParams::<T>::init(header.model_config)
        .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    let mut tensors = tensors.into_iter();
    params.visit_mut(|_, m| *m = tensors.next().expect("one tensor per slot"));
    Ok(Model {
        params,
        vocab: header.vocab,
    })
}

/// Writes `model`. Weights are stored as f32.
pub fn save_checkpoint<T: Scalar>(model: &Model<T>, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Model<T>, CheckpointError> {
    from_bytes(&fs::read(path)?)
}
