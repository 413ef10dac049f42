//! Training configuration, read from a JSON object.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which auxiliary objective accompanies the NLL term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Plain NLL; the regression head is never evaluated.
    None,
    Mse,
    Cel,
    /// Regression loss between the embedding of the argmax word and the
    /// target embedding, without using the regression head.
    ContrastiveA,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::None => "none",
            LossKind::Mse => "mse",
            LossKind::Cel => "cel",
            LossKind::ContrastiveA => "contrastive_a",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(LossKind::None),
            "mse" => Ok(LossKind::Mse),
            "cel" => Ok(LossKind::Cel),
            "contrastive_a" => Ok(LossKind::ContrastiveA),
            other => Err(Error::Config(format!("unknown loss kind `{other}`"))),
        }
    }
}

/// How per-token losses are reduced over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Divide by the number of real target tokens.
    #[default]
    Token,
    /// Sum within each sentence, average over sentences.
    Sentence,
}

fn default_clip() -> f64 {
    5.0
}
fn default_true() -> bool {
    true
}
fn default_max_epochs() -> usize {
    50
}
fn default_beam() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda: f64,
    pub loss_kind: LossKind,
    pub seed: u64,
    pub hidden_size: usize,
    pub emb_dim: usize,
    pub rewe_mid_dim: usize,
    pub dropout: f64,
    pub batch_size: usize,
    /// Validation cadence, in training sentences.
    pub eval_every: usize,
    pub lr: f64,
    pub max_len: usize,
    pub vocab_cap: usize,
    /// 0 trains at word level.
    pub bpe_merges: usize,

    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    /// Reset Adam moments whenever the learning rate is halved.
    #[serde(default = "default_true")]
    pub restart_on_halve: bool,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default = "default_true")]
    pub tgt_embed_trainable: bool,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    /// Optional hard cap on optimizer steps.
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default = "default_beam")]
    pub beam: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 20.0,
            loss_kind: LossKind::Cel,
            seed: 1,
            hidden_size: 1024,
            emb_dim: 300,
            rewe_mid_dim: 200,
            dropout: 0.2,
            batch_size: 40,
            eval_every: 25_000,
            lr: 2e-4,
            max_len: 100,
            vocab_cap: 50_000,
            bpe_merges: 0,
            clip_norm: default_clip(),
            restart_on_halve: true,
            normalization: Normalization::Token,
            tgt_embed_trainable: true,
            max_epochs: default_max_epochs(),
            max_steps: None,
            beam: default_beam(),
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad("lambda must be a finite non-negative number");
        }
        if self.hidden_size == 0 || self.emb_dim == 0 || self.rewe_mid_dim == 0 {
            return bad("hidden_size, emb_dim and rewe_mid_dim must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.batch_size == 0 || self.eval_every == 0 || self.max_len == 0 {
            return bad("batch_size, eval_every and max_len must be positive");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if self.vocab_cap == 0 {
            return bad("vocab_cap must be positive");
        }
        if self.beam == 0 {
            return bad("beam must be positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "lambda": 20, "loss_kind": "cel", "seed": 1, "hidden_size": 16,
        "emb_dim": 8, "rewe_mid_dim": 6, "dropout": 0.2, "batch_size": 40,
        "eval_every": 25000, "lr": 0.0002, "max_len": 100, "vocab_cap": 50000,
        "bpe_merges": 0
    }"#;

    #[test]
    fn parses_required_keys_with_defaults() {
        let c = TrainConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.loss_kind, LossKind::Cel);
        assert_eq!(c.clip_norm, 5.0);
        assert!(c.restart_on_halve);
        assert_eq!(c.beam, 5);
    }

    #[test]
    fn rejects_missing_and_unknown_keys() {
        let missing = MINIMAL.replace("\"seed\": 1,", "");
        assert!(TrainConfig::from_json(&missing).is_err());
        let unknown = MINIMAL.replace("\"seed\": 1,", "\"seed\": 1, \"colour\": 3,");
        assert!(TrainConfig::from_json(&unknown).is_err());
    }

    #[test]
    fn rejects_negative_lambda() {
        let neg = MINIMAL.replace("\"lambda\": 20", "\"lambda\": -1");
        assert!(matches!(TrainConfig::from_json(&neg), Err(Error::Config(_))));
    }

    #[test]
    fn loss_kind_names_round_trip() {
        for k in [LossKind::None, LossKind::Mse, LossKind::Cel, LossKind::ContrastiveA] {
            assert_eq!(k.as_str().parse::<LossKind>().unwrap(), k);
        }
    }
}
