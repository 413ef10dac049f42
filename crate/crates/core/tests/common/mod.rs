#![allow(dead_code)]

use rewe::diff::Graph;
use rewe::losses::PROB_FLOOR;
use rewe::model::{ModelConfig, Seq2SeqModel};
use rewe::text::{Batch, BOS, EOS, PAD};

pub fn small(src_vocab: usize, tgt_vocab: usize, seed: u64, scale: f64) -> Seq2SeqModel {
    let mut m = Seq2SeqModel::new(
        ModelConfig {
            src_vocab,
            tgt_vocab,
            emb_dim: 3,
            hidden: 4,
            rewe_mid: 3,
            dropout: 0.0,
        },
        seed,
    );
    for t in m.params_mut() {
        for x in t.data_mut() {
            *x *= scale;
        }
    }
    m
}

/// Total log-probability of `seq` (eos included) from a teacher-forced pass.
pub fn sequence_score(m: &Seq2SeqModel, src: &[usize], seq: &[usize]) -> f64 {
    let words = &seq[..seq.len() - 1];
    let batch = Batch::from_pairs(&[(src.to_vec(), words.to_vec())]);
    let mut g = Graph::new(0);
    let b = m.bind(&mut g);
    let tf = b.forward_teacher_forced(&mut g, &batch, false, false).unwrap();
    let v = m.config().tgt_vocab;
    let p = g.value(tf.probs);
    tf.targets
        .iter()
        .enumerate()
        .map(|(r, &t)| p[r * v + t].max(PROB_FLOOR).ln())
        .sum()
}

pub fn all_finished(alphabet: &[usize], max_len: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut prefixes: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for p in &prefixes {
            let mut f = p.clone();
            f.push(EOS);
            out.push(f);
            for &a in alphabet.iter().filter(|&&a| a != EOS) {
                let mut q = p.clone();
                q.push(a);
                next.push(q);
            }
        }
        prefixes = next;
    }
    out
}

/// Highest-scoring finished sequence of at most `max_len` tokens, found by
/// scoring every candidate.
pub fn exhaustive_best(m: &Seq2SeqModel, src: &[usize], max_len: usize) -> (f64, Vec<usize>) {
    let v = m.config().tgt_vocab;
    let alphabet: Vec<usize> = (0..v).filter(|&t| t != PAD && t != BOS).collect();
    all_finished(&alphabet, max_len)
        .into_iter()
        .map(|s| (sequence_score(m, src, &s), s))
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap()
}
