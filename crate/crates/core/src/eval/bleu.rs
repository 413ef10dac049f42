use std::collections::HashMap;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::text::{read_corpus, Sentence};

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BleuReport {
    /// 0 to 100.
    pub bleu: f64,
    pub precisions: [f64; MAX_ORDER],
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn ngrams(s: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if s.len() >= n {
        for w in s.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus-level BLEU-4 against a single reference per line. With `smooth`,
/// every precision becomes `(matches + 1) / (total + 1)`.
pub fn bleu_corpus(hyps: &[Sentence], refs: &[Sentence], smooth: bool) -> Result<BleuReport> {
    if hyps.len() != refs.len() {
        return Err(Error::Data(format!(
            "{} hypothesis lines but {} reference lines",
            hyps.len(),
            refs.len()
        )));
    }
    if hyps.is_empty() {
        return Err(Error::Data("hypothesis corpus is empty".into()));
    }
    let hyp_len: usize = hyps.iter().map(Vec::len).sum();
    let ref_len: usize = refs.iter().map(Vec::len).sum();
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    for (h, r) in hyps.iter().zip(refs) {
        for n in 1..=MAX_ORDER {
            let rc = ngrams(r, n);
            for (gram, c) in ngrams(h, n) {
                matches[n - 1] += c.min(rc.get(gram).copied().unwrap_or(0));
            }
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    let mut precisions = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        precisions[n] = if smooth {
            (matches[n] + 1) as f64 / (totals[n] + 1) as f64
        } else if totals[n] == 0 {
            0.0
        } else {
            matches[n] as f64 / totals[n] as f64
        };
    }
    let brevity_penalty = if hyp_len == 0 && ref_len > 0 {
        0.0
    } else if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    let bleu = if brevity_penalty == 0.0 || precisions.contains(&0.0) {
        0.0
    } else {
        let mean_log = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
        100.0 * brevity_penalty * mean_log.exp()
    };
    Ok(BleuReport {
        bleu,
        precisions,
        matches,
        totals,
        brevity_penalty,
        hyp_len,
        ref_len,
    })
}

pub fn bleu_files(hyp: impl AsRef<Path>, reference: impl AsRef<Path>, smooth: bool) -> Result<BleuReport> {
    bleu_corpus(&read_corpus(hyp)?, &read_corpus(reference)?, smooth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;

    fn corpus(lines: &[&str]) -> Vec<Sentence> {
        lines.iter().map(|l| tokenize(l)).collect()
    }

    #[test]
    fn identity_is_100() {
        let c = corpus(&["a b c d e", "the cat sat on the mat"]);
        let r = bleu_corpus(&c, &c, false).unwrap();
        assert_eq!(r.bleu, 100.0);
        assert_eq!(r.brevity_penalty, 1.0);
    }

    #[test]
    fn clipped_unigrams() {
        let h = corpus(&["the the the the the the the"]);
        let r = corpus(&["the cat is on the mat"]);
        let rep = bleu_corpus(&h, &r, false).unwrap();
        assert_eq!(rep.matches[0], 2);
        assert_eq!(rep.totals[0], 7);
        assert_eq!(rep.precisions[0], 2.0 / 7.0);
        assert_eq!(rep.bleu, 0.0);
    }

    #[test]
    fn brevity_penalty_half_length() {
        let h = corpus(&["a b c d"]);
        let r = corpus(&["a b c d e f g h"]);
        let rep = bleu_corpus(&h, &r, false).unwrap();
        assert!((rep.brevity_penalty - (-1.0f64).exp()).abs() < 1e-12);
        assert!((rep.bleu - 100.0 * (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn errors() {
        assert!(bleu_corpus(&corpus(&["a"]), &corpus(&["a", "b"]), false).is_err());
        assert!(bleu_corpus(&[], &[], false).is_err());
    }

    #[test]
    fn all_empty_hypotheses_score_zero() {
        let h = corpus(&["", ""]);
        let r = corpus(&["a b", "c"]);
        for smooth in [false, true] {
            let rep = bleu_corpus(&h, &r, smooth).unwrap();
            assert_eq!((rep.bleu, rep.brevity_penalty), (0.0, 0.0));
        }
    }

    #[test]
    fn smoothing_rescues_missing_four_grams() {
        let h = corpus(&["a b c"]);
        let r = corpus(&["a b c"]);
        assert_eq!(bleu_corpus(&h, &r, false).unwrap().bleu, 0.0);
        let s = bleu_corpus(&h, &r, true).unwrap();
        assert!((s.bleu - 100.0).abs() < 1e-9);
    }
}
