//! Optimization: Adam with global-norm clipping, learning-rate halving on
//! validation plateaus, interval loss logging and best-model checkpoints.

mod adam;
mod anneal;
mod log;

use std::path::Path;
use std::time::Instant;

pub use adam::{adam_step, clip_global_norm, AdamState, ADAM_EPS, BETA1, BETA2};
pub use anneal::{anneal_update, AnnealState, Decision, HALVE_AFTER, MAX_HALVINGS, STOP_AFTER};
pub use log::{LogRecord, TrainLog, CSV_HEADER};

use crate::config::{LossKind, TrainConfig};
use crate::diff::Graph;
use crate::error::{Error, Result};
use crate::losses::{objective, LossBreakdown, PROB_FLOOR};
use crate::model::{Checkpoint, ParamId, Seq2SeqModel};
use crate::text::{make_batches, Batch};
use log::Interval;

/// Mixes two integers into a well-spread seed.
pub fn derive_seed(a: u64, b: u64) -> u64 {
    let mut z = a
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(b)
        .wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Summed negative log-likelihood and token count over `batches`, with
/// dropout off.
pub fn nll_sum(model: &Seq2SeqModel, batches: &[Batch]) -> Result<(f64, usize)> {
    let mut total = 0.0;
    let mut tokens = 0;
    for batch in batches {
        let mut g = Graph::new(0);
        let m = model.bind(&mut g);
        let tf = m.forward_teacher_forced(&mut g, batch, false, false)?;
        let v = g.shape(tf.probs)[1];
        let probs = g.value(tf.probs);
        for (r, (&t, &keep)) in tf.targets.iter().zip(&tf.mask).enumerate() {
            if keep {
                total -= probs[r * v + t].max(PROB_FLOOR).ln();
                tokens += 1;
            }
        }
    }
    Ok((total, tokens))
}

/// `exp` of the per-token mean NLL over the validation batches.
pub fn validate(model: &Seq2SeqModel, batches: &[Batch]) -> Result<f64> {
    let (total, tokens) = nll_sum(model, batches)?;
    if tokens == 0 {
        return Err(Error::Data("validation set is empty".into()));
    }
    Ok((total / tokens as f64).exp())
}

/// Builds unshuffled batches for evaluation.
pub fn eval_batches(src: &[Vec<usize>], tgt: &[Vec<usize>], batch_size: usize) -> Result<Vec<Batch>> {
    make_batches(src, tgt, batch_size, usize::MAX, 0)
}

/// Model plus optimizer state for step-by-step training.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Seq2SeqModel,
    pub config: TrainConfig,
    pub adam: AdamState,
    pub anneal: AnnealState,
    pub steps: u64,
}

impl Trainer {
    pub fn new(mut model: Seq2SeqModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        model.tgt_embed_trainable = config.tgt_embed_trainable;
        let adam = AdamState::new(model.params(), config.lr);
        Ok(Self {
            model,
            config,
            adam,
            anneal: AnnealState::default(),
            steps: 0,
        })
    }

    pub fn lr(&self) -> f64 {
        self.anneal.lr(self.config.lr)
    }

    /// Forward, backward and one optimizer update on `batch`.
    pub fn train_batch(&mut self, batch: &Batch) -> Result<LossBreakdown> {
        let kind = self.config.loss_kind;
        let with_rewe = matches!(kind, LossKind::Mse | LossKind::Cel);
        let mut g = Graph::new(derive_seed(self.config.seed, self.steps));
        let m = self.model.bind(&mut g);
        let tf = m.forward_teacher_forced(&mut g, batch, true, with_rewe)?;
        let obj = objective(
            &mut g,
            &tf,
            self.model.rewe_target(),
            kind,
            self.config.lambda,
            self.config.normalization,
        )?;
        let b = obj.breakdown;
        if !b.total.is_finite() || !b.nll.is_finite() || !b.rewe_raw.is_finite() {
            return Err(Error::NonFinite(format!("training loss at step {}", self.steps)));
        }
        g.backward(obj.total)?;
        let mut grads = m.grads(&g);
        drop(g);
        clip_global_norm(&mut grads, self.config.clip_norm);
        let names: Vec<&str> = ParamId::ALL.iter().map(|p| p.name()).collect();
        let frozen: Vec<bool> = ParamId::ALL.iter().map(|p| !self.model.is_trainable(*p)).collect();
        let lr = self.lr();
        adam_step(self.model.params_mut(), &mut grads, &mut self.adam, lr, &names, &frozen)?;
        self.steps += 1;
        Ok(b)
    }

    /// Feeds a validation perplexity to the schedule and applies the decision.
    pub fn observe_validation(&mut self, ppl: f64) -> Decision {
        let d = anneal_update(&mut self.anneal, ppl);
        if d == Decision::Halve && self.config.restart_on_halve {
            self.adam.reset();
        }
        d
    }
}

/// Id-encoded training and validation data.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub train_src: Vec<Vec<usize>>,
    pub train_tgt: Vec<Vec<usize>>,
    pub val: Vec<Batch>,
    pub src_vocab_digest: String,
    pub tgt_vocab_digest: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Schedule,
    MaxEpochs,
    MaxSteps,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Lowest-perplexity snapshot.
    pub best: Checkpoint,
    pub log: TrainLog,
    pub last: Seq2SeqModel,
    pub steps: u64,
    pub stop: StopReason,
}

/// Full training run. When `checkpoint_path` is given, every new best model
/// is written there, so an aborted run leaves the last good one on disk.
pub fn train(
    model: Seq2SeqModel,
    config: &TrainConfig,
    data: &TrainData,
    checkpoint_path: Option<&Path>,
) -> Result<TrainOutcome> {
    if data.val.is_empty() {
        return Err(Error::Data("validation set is empty".into()));
    }
    let mut trainer = Trainer::new(model, config.clone())?;
    let started = Instant::now();
    let mut log = TrainLog::new();
    let mut interval = Interval::default();
    let mut best: Option<Checkpoint> = None;
    let mut sentences = 0usize;
    let mut next_eval = config.eval_every;
    let lambda = match config.loss_kind {
        LossKind::None => 0.0,
        _ => config.lambda,
    };
    let mut stop = StopReason::MaxEpochs;

    let evaluate = |trainer: &mut Trainer,
                    interval: &mut Interval,
                    log: &mut TrainLog,
                    best: &mut Option<Checkpoint>,
                    sentences: usize|
     -> Result<Decision> {
        let ppl = validate(&trainer.model, &data.val)?;
        log.push(interval.finish(
            sentences,
            lambda,
            Some(ppl),
            trainer.lr(),
            started.elapsed().as_secs_f64(),
        ));
        if best
            .as_ref()
            .is_none_or(|b| ppl < b.val_perplexity.unwrap_or(f64::INFINITY))
        {
            let ck = Checkpoint {
                model: trainer.model.clone(),
                train_config: Some(trainer.config.clone()),
                src_vocab_digest: data.src_vocab_digest.clone(),
                tgt_vocab_digest: data.tgt_vocab_digest.clone(),
                val_perplexity: Some(ppl),
            };
            if let Some(p) = checkpoint_path {
                ck.save(p)?;
            }
            *best = Some(ck);
        }
        Ok(trainer.observe_validation(ppl))
    };

    'epochs: for epoch in 0..config.max_epochs {
        let batches = make_batches(
            &data.train_src,
            &data.train_tgt,
            config.batch_size,
            config.max_len,
            derive_seed(config.seed, u64::MAX - epoch as u64),
        )?;
        for batch in &batches {
            if config.max_steps.is_some_and(|m| trainer.steps >= m as u64) {
                stop = StopReason::MaxSteps;
                break 'epochs;
            }
            let b = trainer.train_batch(batch)?;
            interval.add(b.nll, b.rewe_raw);
            sentences += batch.size;
            if sentences >= next_eval {
                while next_eval <= sentences {
                    next_eval += config.eval_every;
                }
                if evaluate(&mut trainer, &mut interval, &mut log, &mut best, sentences)? == Decision::Stop {
                    stop = StopReason::Schedule;
                    break 'epochs;
                }
            }
        }
    }
    if !interval.is_empty() {
        evaluate(&mut trainer, &mut interval, &mut log, &mut best, sentences)?;
    }
    let best = best.ok_or_else(|| Error::Data("no training batch was run".into()))?;
    Ok(TrainOutcome {
        best,
        log,
        last: trainer.model,
        steps: trainer.steps,
        stop,
    })
}
