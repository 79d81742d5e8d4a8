//! Versioned binary checkpoint: magic, version, JSON header, then every
//! parameter as little-endian `f64` in header order.

use std::io::Read;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Hyperparams, Model};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TSUMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    hyperparams: Hyperparams,
    vocab_fingerprint: String,
    params: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize, PartialEq, Debug)]
struct ParamEntry {
    name: String,
    rows: usize,
    cols: usize,
}

/// A model bound to the vocabulary it was trained with.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub vocab_fingerprint: String,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            hyperparams: self.model.hp.clone(),
            vocab_fingerprint: self.vocab_fingerprint.clone(),
            params: self
                .model
                .params
                .iter()
                .map(|(name, v)| ParamEntry {
                    name: name.to_string(),
                    rows: v.nrows(),
                    cols: v.ncols(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + json.len() + 8 * self.model.params.scalar_count());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, v) in self.model.params.iter() {
            for x in v.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::InvalidInput(format!("checkpoint: {m}"));
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated".into()))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word).map_err(|_| bad("truncated".into()))?;
        let version = u32::from_le_bytes(word);
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len).map_err(|_| bad("truncated".into()))?;
        let len = u64::from_le_bytes(len) as usize;
        if r.len() < len {
            return Err(bad("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&r[..len]).map_err(|e| bad(format!("header: {e}")))?;
        r = &r[len..];

        let mut model = Model::new(header.hyperparams, 0)?;
        let expected: Vec<ParamEntry> = model
            .params
            .iter()
            .map(|(name, v)| ParamEntry {
                name: name.to_string(),
                rows: v.nrows(),
                cols: v.ncols(),
            })
            .collect();
        if expected != header.params {
            return Err(bad("parameter layout does not match the architecture".into()));
        }
        let total: usize = expected.iter().map(|e| e.rows * e.cols).sum();
        if r.len() != total * 8 {
            return Err(bad(format!("expected {} parameter bytes, found {}", total * 8, r.len())));
        }
        let ids: Vec<_> = model.params.ids().collect();
        for (id, e) in ids.into_iter().zip(&expected) {
            let n = e.rows * e.cols;
            let values: Vec<f64> = r[..n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            r = &r[n * 8..];
            *model.params.get_mut(id) = Array2::from_shape_vec((e.rows, e.cols), values).expect("shape checked");
        }
        Ok(Checkpoint {
            model,
            vocab_fingerprint: header.vocab_fingerprint,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::InvalidInput(m) => Error::InvalidInput(format!("{}: {m}", path.display())),
            other => other,
        })
    }

}
