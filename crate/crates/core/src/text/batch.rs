use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{BOS, EOS, PAD};
use crate::error::{Error, Result};

/// Padded id matrices for one mini-batch, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub src_ids: Vec<usize>,
    /// Every row is `bos y_1 .. y_n eos` followed by padding.
    pub tgt_ids: Vec<usize>,
    pub src_mask: Vec<bool>,
    pub tgt_mask: Vec<bool>,
    pub size: usize,
    pub src_len: usize,
    pub tgt_len: usize,
}

impl Batch {
    /// Pads the given pairs into one batch. Sources must be non-empty.
    pub fn from_pairs<S: AsRef<[usize]>>(pairs: &[(S, S)]) -> Self {
        assert!(!pairs.is_empty(), "a batch needs at least one pair");
        let size = pairs.len();
        let src_len = pairs.iter().map(|p| p.0.as_ref().len()).max().unwrap_or(0);
        let tgt_len = pairs.iter().map(|p| p.1.as_ref().len()).max().unwrap_or(0) + 2;
        let mut src_ids = vec![PAD; size * src_len];
        let mut src_mask = vec![false; size * src_len];
        let mut tgt_ids = vec![PAD; size * tgt_len];
        let mut tgt_mask = vec![false; size * tgt_len];
        for (b, (s, t)) in pairs.iter().enumerate() {
            for (i, &id) in s.as_ref().iter().enumerate() {
                src_ids[b * src_len + i] = id;
                src_mask[b * src_len + i] = true;
            }
            let row = &mut tgt_ids[b * tgt_len..(b + 1) * tgt_len];
            row[0] = BOS;
            let t = t.as_ref();
            row[1..=t.len()].copy_from_slice(t);
            row[t.len() + 1] = EOS;
            for m in &mut tgt_mask[b * tgt_len..b * tgt_len + t.len() + 2] {
                *m = true;
            }
        }
        Self {
            src_ids,
            tgt_ids,
            src_mask,
            tgt_mask,
            size,
            src_len,
            tgt_len,
        }
    }

    pub fn src_row(&self, b: usize) -> &[usize] {
        &self.src_ids[b * self.src_len..(b + 1) * self.src_len]
    }

    pub fn tgt_row(&self, b: usize) -> &[usize] {
        &self.tgt_ids[b * self.tgt_len..(b + 1) * self.tgt_len]
    }

    /// Number of predicted target positions (all but the leading bos).
    pub fn steps(&self) -> usize {
        self.tgt_len - 1
    }

    /// Real target tokens to be predicted, eos included.
    pub fn token_count(&self) -> usize {
        self.tgt_mask.iter().filter(|m| **m).count() - self.size
    }
}

/// Drops pairs with a side longer than `max_len` (or an empty source),
/// shuffles the rest with `seed`, and cuts consecutive runs of `batch_size`.
pub fn make_batches(
    src: &[Vec<usize>],
    tgt: &[Vec<usize>],
    batch_size: usize,
    max_len: usize,
    seed: u64,
) -> Result<Vec<Batch>> {
    if src.len() != tgt.len() {
        return Err(Error::Data(format!(
            "source has {} sentences but target has {}",
            src.len(),
            tgt.len()
        )));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut kept: Vec<usize> = (0..src.len())
        .filter(|&i| !src[i].is_empty() && src[i].len() <= max_len && tgt[i].len() <= max_len)
        .collect();
    if kept.is_empty() {
        return Err(Error::Data("no sentence pairs survive the length filter".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    kept.shuffle(&mut rng);
    Ok(kept
        .chunks(batch_size)
        .map(|chunk| {
            let pairs: Vec<(&[usize], &[usize])> =
                chunk.iter().map(|&i| (src[i].as_slice(), tgt[i].as_slice())).collect();
            Batch::from_pairs(&pairs)
        })
        .collect())
}
