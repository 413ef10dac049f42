//! Corpus BLEU and the trade-off-coefficient sweep.

mod bleu;
mod sweep;

pub use bleu::{bleu_corpus, bleu_files, BleuReport, MAX_ORDER};
pub use sweep::{sweep_lambda, MeanRow, SweepPoint, SweepResult, SweepRow, FAILED, MEAN_CSV_HEADER, SWEEP_CSV_HEADER};
