//! Synthetic translation task: digit strings to English number words,
//! e.g. `4 2 , 1 7` -> `forty two , seventeen`.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pipeline::Corpus;
use crate::text::Sentence;

const UNITS: [&str; 10] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
];
const TEENS: [&str; 10] = [
    "ten",
    "eleven",
    "twelve",
    "thirteen",
    "fourteen",
    "fifteen",
    "sixteen",
    "seventeen",
    "eighteen",
    "nineteen",
];
const TENS: [&str; 8] = [
    "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety",
];
pub const SEPARATOR: &str = ",";

/// English words for `n < 100`.
pub fn number_words(n: u32) -> Vec<&'static str> {
    assert!(n < 100, "only two-digit numbers are supported");
    let n = n as usize;
    match n {
        0..=9 => vec![UNITS[n]],
        10..=19 => vec![TEENS[n - 10]],
        _ if n.is_multiple_of(10) => vec![TENS[n / 10 - 2]],
        _ => vec![TENS[n / 10 - 2], UNITS[n % 10]],
    }
}

/// Every word the target side can contain.
pub fn target_words() -> Vec<&'static str> {
    let mut w: Vec<&str> = UNITS.iter().chain(&TEENS).chain(&TENS).copied().collect();
    w.push(SEPARATOR);
    w
}

/// Groups of related target words; used to shape the synthetic embeddings.
pub fn word_clusters() -> Vec<Vec<&'static str>> {
    vec![
        UNITS[1..].to_vec(),
        TEENS.to_vec(),
        TENS.to_vec(),
        vec![UNITS[0], SEPARATOR],
    ]
}

/// One pair with between 1 and `max_numbers` numbers.
pub fn toy_pair<R: Rng>(rng: &mut R, max_numbers: usize) -> (Sentence, Sentence) {
    let count = rng.random_range(1..=max_numbers);
    let mut src = Vec::new();
    let mut tgt = Vec::new();
    for i in 0..count {
        if i > 0 {
            src.push(SEPARATOR.to_string());
            tgt.push(SEPARATOR.to_string());
        }
        let n: u32 = rng.random_range(0..100);
        src.extend(n.to_string().chars().map(|c| c.to_string()));
        tgt.extend(number_words(n).into_iter().map(str::to_string));
    }
    (src, tgt)
}

pub fn toy_corpus(n: usize, max_numbers: usize, seed: u64) -> (Vec<Sentence>, Vec<Sentence>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| toy_pair(&mut rng, max_numbers)).unzip()
}

/// Replaces each target word, with probability `rate`, by a uniformly drawn
/// target word.
pub fn add_noise(tgt: &[Sentence], rate: f64, seed: u64) -> Vec<Sentence> {
    let words = target_words();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    tgt.iter()
        .map(|s| {
            s.iter()
                .map(|w| {
                    if rng.random::<f64>() < rate {
                        words[rng.random_range(0..words.len())].to_string()
                    } else {
                        w.clone()
                    }
                })
                .collect()
        })
        .collect()
}

/// Train/validation/test splits. Only the training targets receive noise.
#[derive(Debug, Clone)]
pub struct ToySplits {
    pub corpus: Corpus,
    pub test_src: Vec<Sentence>,
    pub test_tgt: Vec<Sentence>,
}

pub fn toy_splits(n_train: usize, n_val: usize, n_test: usize, max_numbers: usize, noise: f64, seed: u64) -> ToySplits {
    let (train_src, clean) = toy_corpus(n_train, max_numbers, seed);
    let (val_src, val_tgt) = toy_corpus(n_val, max_numbers, seed.wrapping_add(1));
    let (test_src, test_tgt) = toy_corpus(n_test, max_numbers, seed.wrapping_add(2));
    let train_tgt = if noise > 0.0 {
        add_noise(&clean, noise, seed.wrapping_add(3))
    } else {
        clean
    };
    ToySplits {
        corpus: Corpus {
            train_src,
            train_tgt,
            val_src,
            val_tgt,
        },
        test_src,
        test_tgt,
    }
}

/// Writes a text vector file for [`target_words`] in which words of the
/// same cluster share a random centre plus `spread`-scaled noise.
pub fn write_clustered_embeddings(path: impl AsRef<Path>, dim: usize, spread: f64, seed: u64) -> Result<()> {
    let path = path.as_ref();
    if dim == 0 {
        return Err(Error::Config("embedding dimension must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clusters = word_clusters();
    let rows: usize = clusters.iter().map(Vec::len).sum();
    let mut s = format!("{rows} {dim}\n");
    for cluster in clusters {
        let centre: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        for w in cluster {
            s.push_str(w);
            for c in &centre {
                let v = c + spread * rng.random_range(-1.0..1.0);
                write!(s, " {v}").unwrap();
            }
            s.push('\n');
        }
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn words() {
        assert_eq!(number_words(0), ["zero"]);
        assert_eq!(number_words(13), ["thirteen"]);
        assert_eq!(number_words(40), ["forty"]);
        assert_eq!(number_words(42), ["forty", "two"]);
        assert_eq!(number_words(99), ["ninety", "nine"]);
    }

    #[test]
    fn clusters_cover_vocabulary() {
        let mut a: Vec<&str> = word_clusters().concat();
        let mut b = target_words();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn deterministic_and_aligned() {
        let (s, t) = toy_corpus(50, 3, 4);
        assert_eq!((s.clone(), t.clone()), toy_corpus(50, 3, 4));
        for (s, t) in s.iter().zip(&t) {
            let commas = |x: &Sentence| x.iter().filter(|w| *w == SEPARATOR).count();
            assert_eq!(commas(s), commas(t));
        }
    }

    #[test]
    fn noise_rate() {
        let (_, t) = toy_corpus(2000, 3, 1);
        let noisy = add_noise(&t, 0.1, 2);
        let total: usize = t.iter().map(Vec::len).sum();
        let changed: usize = t
            .iter()
            .zip(&noisy)
            .map(|(a, b)| a.iter().zip(b).filter(|(x, y)| x != y).count())
            .sum();
        let rate = changed as f64 / total as f64;
        // a replacement can draw the same word back
        assert!(rate > 0.07 && rate < 0.11, "{rate}");
    }
}
