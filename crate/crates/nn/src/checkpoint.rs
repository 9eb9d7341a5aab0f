//! Self-describing model container.
//!
//! Layout: one version byte, a little-endian `u64` header length, a JSON header
//! (kind, config, vocabulary, free-form metadata, parameter shapes), then every
//! parameter as little-endian `f64` in header order.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::model::{EncoderClassifier, ModelConfig, Seq2SeqModel};
use crate::params::ParamStore;
use crate::vocab::Vocab;
use crate::NnError;

pub const FORMAT_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Seq2seq,
    Classifier,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamShape {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    kind: ModelKind,
    config: ModelConfig,
    vocab: Vocab,
    #[serde(default)]
    meta: serde_json::Value,
    params: Vec<ParamShape>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub meta: serde_json::Value,
    pub params: ParamStore,
}

fn err(m: impl Into<String>) -> NnError {
    NnError::Checkpoint(m.into())
}

impl Checkpoint {
    pub fn from_seq2seq(model: &Seq2SeqModel, vocab: &Vocab, meta: serde_json::Value) -> Self {
        Checkpoint {
            kind: ModelKind::Seq2seq,
            config: model.cfg.clone(),
            vocab: vocab.clone(),
            meta,
            params: model.params.clone(),
        }
    }

    pub fn from_classifier(model: &EncoderClassifier, vocab: &Vocab, meta: serde_json::Value) -> Self {
        Checkpoint {
            kind: ModelKind::Classifier,
            config: model.cfg.clone(),
            vocab: vocab.clone(),
            meta,
            params: model.params.clone(),
        }
    }

    pub fn into_seq2seq(self) -> Result<(Seq2SeqModel, Vocab), NnError> {
        if self.kind != ModelKind::Seq2seq {
            return Err(err("expected a seq2seq checkpoint"));
        }
        Ok((Seq2SeqModel::from_params(self.config, self.params)?, self.vocab))
    }

    pub fn into_classifier(self) -> Result<(EncoderClassifier, Vocab), NnError> {
        if self.kind != ModelKind::Classifier {
            return Err(err("expected a classifier checkpoint"));
        }
        Ok((EncoderClassifier::from_params(self.config, self.params)?, self.vocab))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            kind: self.kind,
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            meta: self.meta.clone(),
            params: self
                .params
                .iter()
                .map(|(_, name, a)| ParamShape {
                    name: name.to_string(),
                    rows: a.nrows(),
                    cols: a.ncols(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(9 + json.len() + 8 * self.params.num_scalars());
        out.push(FORMAT_VERSION);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, a) in self.params.iter() {
            for x in a.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        let (&version, rest) = bytes.split_first().ok_or_else(|| err("empty file"))?;
        if version != FORMAT_VERSION {
            return Err(err(format!("unsupported format version {version}")));
        }
        if rest.len() < 8 {
            return Err(err("truncated header length"));
        }
        let (len_bytes, rest) = rest.split_at(8);
        let len = u64::from_le_bytes(len_bytes.try_into().expect("8 bytes")) as usize;
        if rest.len() < len {
            return Err(err("truncated header"));
        }
        let (json, mut data) = rest.split_at(len);
        let header: Header =
            serde_json::from_slice(json).map_err(|e| err(format!("bad header: {e}")))?;
        let mut params = ParamStore::new();
        for shape in &header.params {
            let n = shape.rows * shape.cols;
            if data.len() < 8 * n {
                return Err(err(format!("truncated data for {}", shape.name)));
            }
            let (chunk, tail) = data.split_at(8 * n);
            data = tail;
            let values: Vec<f64> = chunk
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let a = Array2::from_shape_vec((shape.rows, shape.cols), values)
                .map_err(|e| err(e.to_string()))?;
            params.add(shape.name.clone(), a);
        }
        if !data.is_empty() {
            return Err(err("trailing bytes after parameters"));
        }
        Ok(Checkpoint {
            kind: header.kind,
            config: header.config,
            vocab: header.vocab,
            meta: header.meta,
            params,
        })
    }

    /// Writes through a temporary sibling file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&self.to_bytes())?;
        f.sync_all()?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        Self::from_bytes(&fs::read(path)?)
    }
}
