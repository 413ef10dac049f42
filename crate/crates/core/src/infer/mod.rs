//! Decoding: beam search, greedy search, nearest-neighbour decoding from the
//! regressed embedding, unknown-word replacement and corpus translation.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::diff::Graph;
use crate::error::{Error, Result};
use crate::losses::{argmax, cosine, COS_EPS, PROB_FLOOR};
use crate::model::{Bound, DecoderState, Encoded, Seq2SeqModel};
use crate::tensor::Tensor;
use crate::text::{
    join_bpe, read_corpus, BpeModel, EmbeddingTable, Sentence, Vocabulary, BOS, EOS, PAD, SPECIALS, UNK,
};

/// Length cap used when none is given: `2 * src_len + 5`.
pub fn default_max_len(src_len: usize) -> usize {
    2 * src_len + 5
}

/// Tokens that are never generated.
fn forbidden(id: usize) -> bool {
    id == PAD || id == BOS
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Generated ids; ends with eos when finished.
    pub token_ids: Vec<usize>,
    pub log_prob: f64,
    /// Decoder `h` and `c` after the last token.
    pub state: (Vec<f64>, Vec<f64>),
    /// Source position with the largest attention weight, per output token.
    pub attn_argmax: Vec<usize>,
}

impl Hypothesis {
    pub fn is_finished(&self) -> bool {
        self.token_ids.last() == Some(&EOS)
    }

    /// Output ids with the trailing eos removed.
    pub fn words(&self) -> &[usize] {
        match self.token_ids.split_last() {
            Some((&EOS, rest)) => rest,
            _ => &self.token_ids,
        }
    }
}

/// Encoder output for a single sentence, expanded on demand to `k` rows.
struct Session<'m> {
    g: Graph,
    bound: Bound<'m>,
    enc: Encoded,
    expanded: Option<Encoded>,
}

impl<'m> Session<'m> {
    fn new(model: &'m Seq2SeqModel, src: &[usize]) -> Result<Self> {
        if src.is_empty() {
            return Err(Error::Data("cannot decode an empty source sentence".into()));
        }
        let mut g = Graph::new(0);
        let bound = model.bind(&mut g);
        let mask = vec![true; src.len()];
        let enc = bound.encode(&mut g, src, &mask, 1, src.len(), false)?;
        Ok(Self {
            g,
            bound,
            enc,
            expanded: None,
        })
    }

    fn initial(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.g.value(self.enc.init.h).to_vec(),
            self.g.value(self.enc.init.c).to_vec(),
        )
    }

    fn encoded_for(&mut self, k: usize) -> Result<Encoded> {
        if k == 1 {
            return Ok(self.enc.clone());
        }
        if let Some(e) = &self.expanded {
            if e.batch == k {
                return Ok(e.clone());
            }
        }
        let states = self.g.repeat_rows(self.enc.states, k)?;
        let keys = self.g.repeat_rows(self.enc.keys, k)?;
        let e = Encoded {
            states,
            keys,
            mask: vec![true; k * self.enc.len],
            batch: k,
            len: self.enc.len,
            init: self.enc.init,
        };
        self.expanded = Some(e.clone());
        Ok(e)
    }

    fn state_nodes(&mut self, states: &[&(Vec<f64>, Vec<f64>)]) -> DecoderState {
        let k = states.len();
        let hid = states[0].0.len();
        let h: Vec<f64> = states.iter().flat_map(|s| s.0.iter().copied()).collect();
        let c: Vec<f64> = states.iter().flat_map(|s| s.1.iter().copied()).collect();
        DecoderState {
            h: self.g.constant(Tensor::new(vec![k, hid], h)),
            c: self.g.constant(Tensor::new(vec![k, hid], c)),
        }
    }
}

/// Values of one batched decoder step.
struct StepValues {
    h: Vec<f64>,
    c: Vec<f64>,
    probs: Vec<f64>,
    attn: Vec<f64>,
    rewe: Option<Vec<f64>>,
}

fn step(
    s: &mut Session<'_>,
    states: &[&(Vec<f64>, Vec<f64>)],
    y_prev: &[usize],
    with_rewe: bool,
) -> Result<StepValues> {
    let enc = s.encoded_for(states.len())?;
    let prev = s.state_nodes(states);
    let bound = s.bound;
    let out = bound.decode_step(&mut s.g, &enc, prev, y_prev, false)?;
    let probs = bound.generator(&mut s.g, out.out)?;
    let rewe = if with_rewe {
        Some(bound.rewe_head(&mut s.g, out.out)?)
    } else {
        None
    };
    Ok(StepValues {
        h: s.g.value(out.state.h).to_vec(),
        c: s.g.value(out.state.c).to_vec(),
        probs: s.g.value(probs).to_vec(),
        attn: s.g.value(out.attn).to_vec(),
        rewe: rewe.map(|r| s.g.value(r).to_vec()),
    })
}

fn row(v: &[f64], i: usize, w: usize) -> &[f64] {
    &v[i * w..(i + 1) * w]
}

/// Beam search without length normalization. Finished hypotheses are
/// frozen; the best finished one wins, else the best unfinished one.
pub fn beam_search(model: &Seq2SeqModel, src: &[usize], beam: usize, max_len: usize) -> Result<Hypothesis> {
    if beam == 0 {
        return Err(Error::Config("beam size must be at least 1".into()));
    }
    let mut s = Session::new(model, src)?;
    let hid = model.config().hidden;
    let vocab = model.config().tgt_vocab;
    let len = src.len();
    let mut live = vec![Hypothesis {
        token_ids: Vec::new(),
        log_prob: 0.0,
        state: s.initial(),
        attn_argmax: Vec::new(),
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for _ in 0..max_len {
        if live.is_empty() {
            break;
        }
        let best_live = live.iter().map(|h| h.log_prob).fold(f64::NEG_INFINITY, f64::max);
        if finished.iter().any(|f| f.log_prob >= best_live) {
            break;
        }
        let states: Vec<&(Vec<f64>, Vec<f64>)> = live.iter().map(|h| &h.state).collect();
        let y_prev: Vec<usize> = live.iter().map(|h| *h.token_ids.last().unwrap_or(&BOS)).collect();
        let sv = step(&mut s, &states, &y_prev, false)?;

        let mut cands: Vec<(f64, usize, usize)> = Vec::with_capacity(live.len() * vocab);
        for (j, hyp) in live.iter().enumerate() {
            let p = row(&sv.probs, j, vocab);
            let mut local: Vec<(f64, usize, usize)> = (0..vocab)
                .filter(|&v| !forbidden(v))
                .map(|v| (hyp.log_prob + p[v].max(PROB_FLOOR).ln(), j, v))
                .collect();
            local.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.2.cmp(&b.2)));
            local.truncate(beam);
            cands.extend(local);
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        cands.truncate(beam);

        let mut next = Vec::with_capacity(beam);
        for (score, j, v) in cands {
            let parent = &live[j];
            let mut token_ids = parent.token_ids.clone();
            token_ids.push(v);
            let mut attn_argmax = parent.attn_argmax.clone();
            attn_argmax.push(argmax(row(&sv.attn, j, len)));
            let hyp = Hypothesis {
                token_ids,
                log_prob: score,
                state: (row(&sv.h, j, hid).to_vec(), row(&sv.c, j, hid).to_vec()),
                attn_argmax,
            };
            if v == EOS {
                finished.push(hyp);
            } else {
                next.push(hyp);
            }
        }
        live = next;
    }
    let pick = |hs: Vec<Hypothesis>| {
        hs.into_iter()
            .reduce(|best, h| if h.log_prob > best.log_prob { h } else { best })
    };
    pick(finished)
        .or_else(|| pick(live))
        .ok_or_else(|| Error::Data("decoding length cap is zero".into()))
}

/// Takes the most probable token at every step; ties go to the lowest id.
pub fn greedy_decode(model: &Seq2SeqModel, src: &[usize], max_len: usize) -> Result<Hypothesis> {
    let mut s = Session::new(model, src)?;
    let vocab = model.config().tgt_vocab;
    let mut hyp = Hypothesis {
        token_ids: Vec::new(),
        log_prob: 0.0,
        state: s.initial(),
        attn_argmax: Vec::new(),
    };
    while hyp.token_ids.len() < max_len && !hyp.is_finished() {
        let y = *hyp.token_ids.last().unwrap_or(&BOS);
        let sv = step(&mut s, &[&hyp.state], &[y], false)?;
        let mut best = usize::MAX;
        for v in 0..vocab {
            if !forbidden(v) && (best == usize::MAX || sv.probs[v] > sv.probs[best]) {
                best = v;
            }
        }
        hyp.log_prob += sv.probs[best].max(PROB_FLOOR).ln();
        hyp.token_ids.push(best);
        hyp.attn_argmax.push(argmax(&sv.attn));
        hyp.state = (sv.h, sv.c);
    }
    Ok(hyp)
}

fn word(vocab: &Vocabulary, id: usize) -> String {
    vocab.token(id).unwrap_or(SPECIALS[UNK]).to_string()
}

/// Converts ids to words, copying the most-attended source token for every
/// unknown-word output.
pub fn replace_unk(hyp: &Hypothesis, src_tokens: &[String], vocab: &Vocabulary) -> Result<Sentence> {
    let words = hyp.words();
    if hyp.attn_argmax.len() < words.len() {
        return Err(Error::Data(format!(
            "attention recorded for {} of {} output tokens",
            hyp.attn_argmax.len(),
            words.len()
        )));
    }
    words
        .iter()
        .zip(&hyp.attn_argmax)
        .map(|(&id, &pos)| {
            if id == UNK {
                src_tokens.get(pos).cloned().ok_or_else(|| {
                    Error::Data(format!(
                        "attention position {pos} outside a source of {}",
                        src_tokens.len()
                    ))
                })
            } else {
                Ok(word(vocab, id))
            }
        })
        .collect()
}

/// What is fed back to the decoder after a nearest-neighbour step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Feedback {
    /// Embedding of the selected token.
    #[default]
    Token,
    /// The regressed vector itself.
    Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NnOutput {
    pub token_ids: Vec<usize>,
    pub attn_argmax: Vec<usize>,
    /// Steps where the regressed vector was zero and the generator's argmax
    /// was used instead.
    pub fallback_steps: Vec<usize>,
}

impl NnOutput {
    pub fn as_hypothesis(&self) -> Hypothesis {
        Hypothesis {
            token_ids: self.token_ids.clone(),
            log_prob: 0.0,
            state: (Vec::new(), Vec::new()),
            attn_argmax: self.attn_argmax.clone(),
        }
    }
}

/// Id of the row of `table` most cosine-similar to `e`, skipping pad and
/// bos. `None` when `e` is (numerically) zero.
pub fn nearest_row(table: &EmbeddingTable, e: &[f64]) -> Option<usize> {
    let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > COS_EPS) {
        return None;
    }
    let mut best: Option<(usize, f64)> = None;
    for id in (0..table.rows()).filter(|&i| !forbidden(i)) {
        let c = cosine(e, table.row(id));
        if best.is_none_or(|(_, b)| c > b) {
            best = Some((id, c));
        }
    }
    best.map(|b| b.0)
}

/// Decodes by mapping each regressed vector to its nearest table row.
pub fn nearest_neighbor_decode(
    model: &Seq2SeqModel,
    src: &[usize],
    table: &EmbeddingTable,
    max_len: usize,
    feedback: Feedback,
) -> Result<NnOutput> {
    if table.dim() != model.config().emb_dim {
        return Err(Error::Data("embedding table width differs from the model".into()));
    }
    let mut s = Session::new(model, src)?;
    let vocab = model.config().tgt_vocab;
    let mut out = NnOutput {
        token_ids: Vec::new(),
        attn_argmax: Vec::new(),
        fallback_steps: Vec::new(),
    };
    let mut state = s.initial();
    let mut prev_vec: Option<Vec<f64>> = None;
    while out.token_ids.len() < max_len && out.token_ids.last() != Some(&EOS) {
        let y = *out.token_ids.last().unwrap_or(&BOS);
        let sv = match (&prev_vec, feedback) {
            (Some(v), Feedback::Embedding) => {
                let enc = s.encoded_for(1)?;
                let prev = s.state_nodes(&[&state]);
                let emb = s.g.constant(Tensor::new(vec![1, v.len()], v.clone()));
                let bound = s.bound;
                let st = bound.decode_step_embedded(&mut s.g, &enc, prev, emb, false)?;
                let probs = bound.generator(&mut s.g, st.out)?;
                let rewe = bound.rewe_head(&mut s.g, st.out)?;
                StepValues {
                    h: s.g.value(st.state.h).to_vec(),
                    c: s.g.value(st.state.c).to_vec(),
                    probs: s.g.value(probs).to_vec(),
                    attn: s.g.value(st.attn).to_vec(),
                    rewe: Some(s.g.value(rewe).to_vec()),
                }
            }
            _ => step(&mut s, &[&state], &[y], true)?,
        };
        let e = sv.rewe.expect("regression head evaluated");
        let id = match nearest_row(table, &e) {
            Some(id) => id,
            None => {
                out.fallback_steps.push(out.token_ids.len());
                (0..vocab)
                    .filter(|&v| !forbidden(v))
                    .fold(UNK, |b, v| if sv.probs[v] > sv.probs[b] { v } else { b })
            }
        };
        out.token_ids.push(id);
        out.attn_argmax.push(argmax(&sv.attn));
        state = (sv.h, sv.c);
        prev_vec = Some(e);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Beam(usize),
    Greedy,
    NearestNeighbor(Feedback),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeOptions {
    pub mode: DecodeMode,
    pub unk_replace: bool,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self {
            mode: DecodeMode::Beam(5),
            unk_replace: true,
        }
    }
}

/// A model together with everything needed to map text to text.
#[derive(Debug, Clone)]
pub struct Translator {
    pub model: Seq2SeqModel,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    pub bpe: Option<BpeModel>,
}

/// Per-sentence decoding result.
#[derive(Debug, Clone, PartialEq)]
pub struct Translation {
    pub words: Sentence,
    pub fallback_steps: usize,
}

impl Translator {
    /// Tokenized sentence in, detokenized (BPE-joined) sentence out. An
    /// empty source gives an empty translation.
    pub fn translate(&self, src: &[String], opts: &DecodeOptions) -> Result<Translation> {
        let pieces: Sentence = match &self.bpe {
            Some(b) => b.apply(src),
            None => src.to_vec(),
        };
        if pieces.is_empty() {
            return Ok(Translation {
                words: Vec::new(),
                fallback_steps: 0,
            });
        }
        let ids = self.src_vocab.encode(&pieces);
        let max_len = default_max_len(ids.len());
        let (hyp, fallback_steps) = match opts.mode {
            DecodeMode::Beam(k) => (beam_search(&self.model, &ids, k, max_len)?, 0),
            DecodeMode::Greedy => (greedy_decode(&self.model, &ids, max_len)?, 0),
            DecodeMode::NearestNeighbor(fb) => {
                let o = nearest_neighbor_decode(&self.model, &ids, self.model.rewe_target(), max_len, fb)?;
                (o.as_hypothesis(), o.fallback_steps.len())
            }
        };
        let out = if opts.unk_replace {
            replace_unk(&hyp, &pieces, &self.tgt_vocab)?
        } else {
            hyp.words().iter().map(|&i| word(&self.tgt_vocab, i)).collect()
        };
        let words = match &self.bpe {
            Some(b) => join_bpe(&out, b.marker()),
            None => out,
        };
        Ok(Translation { words, fallback_steps })
    }

    /// Translates every sentence, in parallel, preserving order.
    pub fn translate_all(&self, src: &[Sentence], opts: &DecodeOptions) -> Result<Vec<Translation>> {
        src.par_iter()
            .enumerate()
            .map(|(i, s)| {
                self.translate(s, opts)
                    .map_err(|e| Error::Data(format!("sentence {}: {e}", i + 1)))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TranslateStats {
    pub sentences: usize,
    pub mean_len: f64,
    pub fallback_steps: usize,
}

/// Reads `src_file`, translates each line and writes one line per input.
pub fn translate_corpus(
    translator: &Translator,
    src_file: impl AsRef<Path>,
    out_file: impl AsRef<Path>,
    opts: &DecodeOptions,
) -> Result<TranslateStats> {
    let src = read_corpus(src_file)?;
    let outs = translator.translate_all(&src, opts)?;
    let out_path = out_file.as_ref();
    let mut f = std::io::BufWriter::new(std::fs::File::create(out_path).map_err(|e| Error::io(out_path, e))?);
    let mut tokens = 0;
    let mut fallback_steps = 0;
    for t in &outs {
        tokens += t.words.len();
        fallback_steps += t.fallback_steps;
        writeln!(f, "{}", t.words.join(" ")).map_err(|e| Error::io(out_path, e))?;
    }
    f.flush().map_err(|e| Error::io(out_path, e))?;
    Ok(TranslateStats {
        sentences: outs.len(),
        mean_len: if outs.is_empty() {
            0.0
        } else {
            tokens as f64 / outs.len() as f64
        },
        fallback_steps,
    })
}
