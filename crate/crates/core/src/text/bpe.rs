use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use crate::error::{Error, Result};

pub const BPE_HEADER: &str = "#version: rewe-bpe-1";
/// Attached to the final symbol of every word while learning and applying.
pub const END_OF_WORD: &str = "</w>";
const DEFAULT_MARKER: &str = "@@";

type Pair = (String, String);

/// Ordered list of learned symbol merges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeModel {
    merges: Vec<Pair>,
    ranks: HashMap<Pair, usize>,
    marker: String,
}

fn word_symbols(word: &str) -> Vec<String> {
    let mut syms: Vec<String> = word.chars().map(String::from).collect();
    if let Some(last) = syms.last_mut() {
        last.push_str(END_OF_WORD);
    }
    syms
}

/// Replaces every non-overlapping occurrence of `pair`, scanning left to right.
fn merge_pair(syms: &[String], pair: &Pair) -> Vec<String> {
    let mut out = Vec::with_capacity(syms.len());
    let mut i = 0;
    while i < syms.len() {
        if i + 1 < syms.len() && syms[i] == pair.0 && syms[i + 1] == pair.1 {
            out.push(format!("{}{}", pair.0, pair.1));
            i += 2;
        } else {
            out.push(syms[i].clone());
            i += 1;
        }
    }
    out
}

impl BpeModel {
    /// Learns up to `num_merges` merges from word frequencies over `corpus`.
    /// Stops early once no pair occurs at least twice. Count ties go to the
    /// lexicographically smallest pair.
    pub fn learn<I, S>(corpus: I, num_merges: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[String]>,
    {
        if num_merges == 0 {
            return Err(Error::Data("number of BPE merges must be at least 1".into()));
        }
        let mut freqs: HashMap<String, i64> = HashMap::new();
        for s in corpus {
            for w in s.as_ref() {
                *freqs.entry(w.clone()).or_default() += 1;
            }
        }
        if freqs.is_empty() {
            return Err(Error::Data("cannot learn BPE from an empty corpus".into()));
        }
        let mut words: Vec<(String, i64)> = freqs.into_iter().collect();
        words.sort();
        let mut symbols: Vec<Vec<String>> = words.iter().map(|(w, _)| word_symbols(w)).collect();
        let freq: Vec<i64> = words.iter().map(|(_, f)| *f).collect();

        let mut counts: HashMap<Pair, i64> = HashMap::new();
        let mut index: HashMap<Pair, BTreeSet<usize>> = HashMap::new();
        for (wi, syms) in symbols.iter().enumerate() {
            for p in syms.windows(2) {
                let pair = (p[0].clone(), p[1].clone());
                *counts.entry(pair.clone()).or_default() += freq[wi];
                index.entry(pair).or_default().insert(wi);
            }
        }

        let mut merges = Vec::new();
        while merges.len() < num_merges {
            let best = counts
                .iter()
                .filter(|(_, c)| **c > 0)
                .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)));
            let Some((pair, count)) = best else { break };
            if *count < 2 {
                break;
            }
            let pair = pair.clone();
            let touched = index.remove(&pair).unwrap_or_default();
            for wi in touched {
                let old = &symbols[wi];
                if !old.windows(2).any(|p| p[0] == pair.0 && p[1] == pair.1) {
                    continue;
                }
                for p in old.windows(2) {
                    let k = (p[0].clone(), p[1].clone());
                    if let Some(c) = counts.get_mut(&k) {
                        *c -= freq[wi];
                    }
                }
                let new = merge_pair(old, &pair);
                for p in new.windows(2) {
                    let k = (p[0].clone(), p[1].clone());
                    *counts.entry(k.clone()).or_default() += freq[wi];
                    index.entry(k).or_default().insert(wi);
                }
                symbols[wi] = new;
            }
            counts.remove(&pair);
            merges.push(pair);
        }
        Ok(Self::from_merges(merges))
    }

    pub fn from_merges(merges: Vec<(String, String)>) -> Self {
        let ranks = merges.iter().enumerate().map(|(i, p)| (p.clone(), i)).collect();
        Self {
            merges,
            ranks,
            marker: DEFAULT_MARKER.to_string(),
        }
    }

    pub fn with_marker(mut self, marker: impl Into<String>) -> Self {
        self.marker = marker.into();
        self
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn num_merges(&self) -> usize {
        self.merges.len()
    }

    pub fn marker(&self) -> &str {
        &self.marker
    }

    /// Splits one word. Non-final pieces carry the continuation marker.
    pub fn apply_word(&self, word: &str) -> Vec<String> {
        let mut syms = word_symbols(word);
        loop {
            let best = syms
                .windows(2)
                .filter_map(|p| self.ranks.get(&(p[0].clone(), p[1].clone())).map(|r| (*r, p)))
                .min_by_key(|(r, _)| *r);
            let Some((_, p)) = best else { break };
            let pair = (p[0].clone(), p[1].clone());
            syms = merge_pair(&syms, &pair);
        }
        let n = syms.len();
        syms.into_iter()
            .enumerate()
            .filter_map(|(i, mut s)| {
                if i + 1 == n {
                    s.truncate(s.len() - END_OF_WORD.len());
                    (!s.is_empty()).then_some(s)
                } else {
                    s.push_str(&self.marker);
                    Some(s)
                }
            })
            .collect()
    }

    pub fn apply<S: AsRef<str>>(&self, sentence: &[S]) -> Vec<String> {
        sentence.iter().flat_map(|w| self.apply_word(w.as_ref())).collect()
    }

    pub fn join(&self, pieces: &[String]) -> Vec<String> {
        join_bpe(pieces, &self.marker)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from(BPE_HEADER);
        s.push('\n');
        for (a, b) in &self.merges {
            s.push_str(a);
            s.push(' ');
            s.push_str(b);
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        if lines.next() != Some(BPE_HEADER) {
            return Err(Error::parse(path, 1, format!("expected header `{BPE_HEADER}`")));
        }
        let mut merges = Vec::new();
        for (i, line) in lines.enumerate() {
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => {
                    merges.push((a.to_string(), b.to_string()))
                }
                _ => return Err(Error::parse(path, i + 2, "expected `left right`")),
            }
        }
        Ok(Self::from_merges(merges))
    }
}

/// Glues pieces that end in `marker` onto their successor.
pub fn join_bpe(pieces: &[String], marker: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut open = false;
    for p in pieces {
        if let Some(stem) = p.strip_suffix(marker) {
            cur.push_str(stem);
            open = true;
        } else {
            cur.push_str(p);
            out.push(std::mem::take(&mut cur));
            open = false;
        }
    }
    if open {
        out.push(cur);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn words(counts: &[(&str, usize)]) -> Vec<Vec<String>> {
        counts
            .iter()
            .flat_map(|(w, n)| std::iter::repeat_n(vec![w.to_string()], *n))
            .collect()
    }

    #[test]
    fn first_merge_is_most_frequent_pair() {
        let corpus = words(&[("low", 5), ("lower", 2)]);
        let m = BpeModel::learn(&corpus, 1).unwrap();
        // (l, o) occurs in both words: 5 + 2.
        assert_eq!(m.merges()[0], ("l".to_string(), "o".to_string()));
    }

    #[test]
    fn zero_merges_requested_is_an_error() {
        assert!(BpeModel::learn(words(&[("ab", 2)]), 0).is_err());
    }

    #[test]
    fn single_character_word_yields_no_merges() {
        let m = BpeModel::learn(words(&[("a", 3)]), 10).unwrap();
        assert_eq!(m.num_merges(), 0);
        assert_eq!(m.apply_word("a"), ["a"]);
    }

    #[test]
    fn empty_sentence_stays_empty() {
        let m = BpeModel::learn(words(&[("ab", 3)]), 10).unwrap();
        assert!(m.apply::<String>(&[]).is_empty());
    }

    #[test]
    fn unknown_characters_pass_through() {
        let m = BpeModel::learn(words(&[("ab", 3)]), 10).unwrap();
        assert_eq!(m.apply_word("xyz"), ["x@@", "y@@", "z"]);
    }

    #[test]
    fn fully_merged_word_is_unsplit() {
        let m = BpeModel::learn(words(&[("low", 5)]), 10).unwrap();
        assert_eq!(m.apply_word("low"), ["low"]);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bpe");
        let m = BpeModel::learn(words(&[("lower", 3), ("newest", 4), ("wider", 2)]), 20).unwrap();
        m.save(&p).unwrap();
        let back = BpeModel::load(&p).unwrap();
        assert_eq!(m, back);
        std::fs::write(&p, "a b\n").unwrap();
        assert!(BpeModel::load(&p).is_err());
        std::fs::write(&p, format!("{BPE_HEADER}\na b c\n")).unwrap();
        let err = BpeModel::load(&p).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
    }

    proptest! {
        #[test]
        fn join_inverts_apply(
            corpus in prop::collection::vec("[a-d]{1,6}", 1..40),
            merges in 1usize..30,
            probe in "[a-f]{1,8}",
        ) {
            let sentences: Vec<Vec<String>> = corpus.iter().map(|w| vec![w.clone()]).collect();
            let m = BpeModel::learn(&sentences, merges).unwrap();
            prop_assert!(m.num_merges() <= merges);
            let mut seen = std::collections::HashSet::new();
            for p in m.merges() {
                prop_assert!(seen.insert(p.clone()));
            }
            for w in corpus.iter().chain(std::iter::once(&probe)) {
                let pieces = m.apply_word(w);
                prop_assert_eq!(m.join(&pieces), vec![w.clone()]);
            }
        }
    }
}
