//! Versioned binary checkpoint: magic, version, a JSON header describing the
//! arrays, then every array as little-endian `f64`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ParamId, Seq2SeqModel};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::text::{EmbeddingTable, Vocabulary};

const MAGIC: &[u8; 8] = b"REWECKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Seq2SeqModel,
    pub train_config: Option<TrainConfig>,
    pub src_vocab_digest: String,
    pub tgt_vocab_digest: String,
    /// Validation perplexity at save time, if known.
    pub val_perplexity: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train_config: Option<TrainConfig>,
    src_vocab_digest: String,
    tgt_vocab_digest: String,
    tgt_embed_trainable: bool,
    /// Raw bits so the value survives the text header unchanged.
    val_perplexity_bits: Option<u64>,
    arrays: Vec<(String, Vec<usize>)>,
}

impl Checkpoint {
    pub fn new(model: Seq2SeqModel, src: &Vocabulary, tgt: &Vocabulary) -> Self {
        Self {
            model,
            train_config: None,
            src_vocab_digest: src.digest(),
            tgt_vocab_digest: tgt.digest(),
            val_perplexity: None,
        }
    }

    /// Fails when either vocabulary differs from the one used in training.
    pub fn check_vocabularies(&self, src: &Vocabulary, tgt: &Vocabulary) -> Result<()> {
        if src.digest() != self.src_vocab_digest || tgt.digest() != self.tgt_vocab_digest {
            return Err(Error::Checkpoint(
                "vocabulary files do not match the ones recorded in the checkpoint".into(),
            ));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut arrays: Vec<(String, Vec<usize>)> = ParamId::ALL
            .iter()
            .map(|p| (p.name().to_string(), self.model.param(*p).shape().to_vec()))
            .collect();
        let target = self.model.rewe_target().tensor();
        arrays.push(("rewe_target".into(), target.shape().to_vec()));
        let header = Header {
            model: self.model.config().clone(),
            train_config: self.train_config.clone(),
            src_vocab_digest: self.src_vocab_digest.clone(),
            tgt_vocab_digest: self.tgt_vocab_digest.clone(),
            tgt_embed_trainable: self.model.tgt_embed_trainable,
            val_perplexity_bits: self.val_perplexity.map(f64::to_bits),
            arrays,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.model.params().iter().chain(std::iter::once(target)) {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut pos = 20 + hlen;
        let mut tensors = Vec::with_capacity(header.arrays.len());
        for (name, shape) in &header.arrays {
            let n: usize = shape.iter().product();
            let raw = bytes
                .get(pos..pos + 8 * n)
                .ok_or_else(|| Error::Checkpoint(format!("truncated array {name}")))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(Tensor::new(shape.clone(), data));
            pos += 8 * n;
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes after the last array"));
        }
        let target = tensors.pop().ok_or_else(|| bad("no arrays"))?;
        let model = Seq2SeqModel::from_parts(
            header.model,
            tensors,
            EmbeddingTable::new(target, false)?,
            header.tgt_embed_trainable,
        )?;
        Ok(Self {
            model,
            train_config: header.train_config,
            src_vocab_digest: header.src_vocab_digest,
            tgt_vocab_digest: header.tgt_vocab_digest,
            val_perplexity: header.val_perplexity_bits.map(f64::from_bits),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
