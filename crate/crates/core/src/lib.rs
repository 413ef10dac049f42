//! Attentional encoder-decoder translation with an auxiliary head that
//! regresses the pretrained embedding of each target word.
//!
//! The crate is organised bottom-up:
//!
//! * [`diff`]: a small define-by-run reverse-mode differentiation engine.
//! * [`text`]: tokenization, vocabularies, BPE, embedding files and batching.
//! * [`model`]: the bidirectional-LSTM encoder, additive attention, LSTM
//!   decoder, the categorical generator and the embedding-regression head.
//! * [`losses`]: NLL, MSE/cosine regression losses and their combination.
//! * [`train`]: Adam, learning-rate halving, validation and checkpoints.
//! * [`infer`]: beam search, greedy and nearest-neighbour decoding.
//! * [`eval`]: corpus BLEU and the trade-off-coefficient sweep.

pub mod config;
pub mod diff;
pub mod error;
pub mod eval;
pub mod infer;
pub mod losses;
pub mod model;
pub mod pipeline;
pub mod selfcheck;
pub mod tensor;
pub mod text;
pub mod toy;
pub mod train;

pub use config::{LossKind, Normalization, TrainConfig};
pub use diff::{Graph, NodeId, Primitive};
pub use error::{Error, Result};
pub use model::{ModelConfig, Seq2SeqModel};
pub use tensor::Tensor;
pub use text::{BpeModel, EmbeddingTable, Vocabulary};
