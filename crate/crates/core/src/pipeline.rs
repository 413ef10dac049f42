//! End-to-end runs: segmentation, vocabularies, embeddings, training and
//! evaluation from tokenized text, plus the on-disk model directory.

use std::path::{Path, PathBuf};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::eval::{bleu_corpus, BleuReport};
use crate::infer::{DecodeMode, DecodeOptions, Translator};
use crate::model::{Checkpoint, ModelConfig, Seq2SeqModel};
use crate::text::{load_embeddings, read_parallel, BpeModel, Coverage, Sentence, Vocabulary};
use crate::train::{derive_seed, eval_batches, train, StopReason, TrainData, TrainLog};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const SRC_VOCAB_FILE: &str = "src.vocab";
pub const TGT_VOCAB_FILE: &str = "tgt.vocab";
pub const BPE_FILE: &str = "bpe.codes";
pub const LOG_FILE: &str = "train_log.csv";
pub const CONFIG_FILE: &str = "config.json";

/// Tokenized training and validation text.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub train_src: Vec<Sentence>,
    pub train_tgt: Vec<Sentence>,
    pub val_src: Vec<Sentence>,
    pub val_tgt: Vec<Sentence>,
}

impl Corpus {
    pub fn load(
        train_src: impl AsRef<Path>,
        train_tgt: impl AsRef<Path>,
        val_src: impl AsRef<Path>,
        val_tgt: impl AsRef<Path>,
    ) -> Result<Self> {
        let (train_src, train_tgt) = read_parallel(train_src, train_tgt)?;
        let (val_src, val_tgt) = read_parallel(val_src, val_tgt)?;
        Ok(Self {
            train_src,
            train_tgt,
            val_src,
            val_tgt,
        })
    }
}

/// Optional pretrained vector files for either side.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingFiles {
    pub src: Option<PathBuf>,
    pub tgt: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub translator: Translator,
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
    /// Model after the final step, which may differ from the best one.
    pub last: Seq2SeqModel,
    pub src_coverage: Option<Coverage>,
    pub tgt_coverage: Option<Coverage>,
    pub steps: u64,
    pub stop: StopReason,
}

fn segment(bpe: Option<&BpeModel>, side: &[Sentence]) -> Vec<Sentence> {
    match bpe {
        Some(b) => side.iter().map(|s| b.apply(s)).collect(),
        None => side.to_vec(),
    }
}

/// Learns BPE (if requested), builds vocabularies, initializes the model
/// from `config.seed` and the optional embedding files, and trains it.
/// When `out_dir` is given, all artifacts are written there.
pub fn train_pipeline(
    config: &TrainConfig,
    corpus: &Corpus,
    embeddings: &EmbeddingFiles,
    out_dir: Option<&Path>,
) -> Result<Trained> {
    config.validate()?;
    if corpus.val_src.is_empty() {
        return Err(Error::Data("validation set is empty".into()));
    }
    let bpe = if config.bpe_merges > 0 {
        Some(BpeModel::learn(
            corpus.train_src.iter().chain(&corpus.train_tgt),
            config.bpe_merges,
        )?)
    } else {
        None
    };
    let train_src = segment(bpe.as_ref(), &corpus.train_src);
    let train_tgt = segment(bpe.as_ref(), &corpus.train_tgt);
    let val_src = segment(bpe.as_ref(), &corpus.val_src);
    let val_tgt = segment(bpe.as_ref(), &corpus.val_tgt);
    let src_vocab = Vocabulary::build(&train_src, config.vocab_cap)?;
    let tgt_vocab = Vocabulary::build(&train_tgt, config.vocab_cap)?;

    let mc = ModelConfig {
        src_vocab: src_vocab.len(),
        tgt_vocab: tgt_vocab.len(),
        emb_dim: config.emb_dim,
        hidden: config.hidden_size,
        rewe_mid: config.rewe_mid_dim,
        dropout: config.dropout,
    };
    let mut model = Seq2SeqModel::new(mc, config.seed);
    let mut src_coverage = None;
    let mut tgt_coverage = None;
    let src_table = match &embeddings.src {
        Some(p) => {
            let (t, c) = load_embeddings(p, &src_vocab, config.emb_dim, derive_seed(config.seed, 1))?;
            src_coverage = Some(c);
            Some(t)
        }
        None => None,
    };
    let tgt_table = match &embeddings.tgt {
        Some(p) => {
            let (t, c) = load_embeddings(p, &tgt_vocab, config.emb_dim, derive_seed(config.seed, 2))?;
            tgt_coverage = Some(c);
            Some(t)
        }
        None => None,
    };
    model.set_embeddings(src_table.as_ref(), tgt_table.as_ref())?;

    let encode = |v: &Vocabulary, side: &[Sentence]| -> Vec<Vec<usize>> { side.iter().map(|s| v.encode(s)).collect() };
    let val_src_ids = encode(&src_vocab, &val_src);
    let val_tgt_ids = encode(&tgt_vocab, &val_tgt);
    let data = TrainData {
        train_src: encode(&src_vocab, &train_src),
        train_tgt: encode(&tgt_vocab, &train_tgt),
        val: eval_batches(&val_src_ids, &val_tgt_ids, config.batch_size)?,
        src_vocab_digest: src_vocab.digest(),
        tgt_vocab_digest: tgt_vocab.digest(),
    };

    let ckpt_path = match out_dir {
        Some(d) => {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            src_vocab.save(d.join(SRC_VOCAB_FILE))?;
            tgt_vocab.save(d.join(TGT_VOCAB_FILE))?;
            if let Some(b) = &bpe {
                b.save(d.join(BPE_FILE))?;
            }
            let cfg_path = d.join(CONFIG_FILE);
            std::fs::write(&cfg_path, config.to_json()).map_err(|e| Error::io(&cfg_path, e))?;
            Some(d.join(CHECKPOINT_FILE))
        }
        None => None,
    };
    let outcome = train(model, config, &data, ckpt_path.as_deref())?;
    if let Some(d) = out_dir {
        outcome.log.save_csv(d.join(LOG_FILE))?;
    }
    Ok(Trained {
        translator: Translator {
            model: outcome.best.model.clone(),
            src_vocab,
            tgt_vocab,
            bpe,
        },
        checkpoint: outcome.best,
        log: outcome.log,
        last: outcome.last,
        src_coverage,
        tgt_coverage,
        steps: outcome.steps,
        stop: outcome.stop,
    })
}

/// Loads a model directory written by [`train_pipeline`].
pub fn load_model_dir(dir: impl AsRef<Path>) -> Result<(Translator, Checkpoint)> {
    let dir = dir.as_ref();
    let ck = Checkpoint::load(dir.join(CHECKPOINT_FILE))?;
    let src_vocab = Vocabulary::load(dir.join(SRC_VOCAB_FILE))?;
    let tgt_vocab = Vocabulary::load(dir.join(TGT_VOCAB_FILE))?;
    ck.check_vocabularies(&src_vocab, &tgt_vocab)?;
    let bpe_path = dir.join(BPE_FILE);
    let bpe = if bpe_path.exists() {
        Some(BpeModel::load(&bpe_path)?)
    } else {
        None
    };
    Ok((
        Translator {
            model: ck.model.clone(),
            src_vocab,
            tgt_vocab,
            bpe,
        },
        ck,
    ))
}

/// Decodes `src` and scores it against `refs`.
pub fn evaluate_bleu(
    translator: &Translator,
    src: &[Sentence],
    refs: &[Sentence],
    opts: &DecodeOptions,
    smooth: bool,
) -> Result<(BleuReport, Vec<Sentence>)> {
    let hyps: Vec<Sentence> = translator
        .translate_all(src, opts)?
        .into_iter()
        .map(|t| t.words)
        .collect();
    Ok((bleu_corpus(&hyps, refs, smooth)?, hyps))
}

/// Beam decoding with the configured beam and unknown-word replacement.
pub fn beam_options(config: &TrainConfig) -> DecodeOptions {
    DecodeOptions {
        mode: DecodeMode::Beam(config.beam),
        unk_replace: true,
    }
}
