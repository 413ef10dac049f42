use std::collections::HashMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

/// Bijective token/id map. Ids 0..4 are the reserved specials.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
    size_cap: usize,
}

/// Streaming frequency counter behind [`Vocabulary::build`].
#[derive(Debug, Default, Clone)]
pub struct VocabCounter {
    counts: HashMap<String, (usize, usize)>,
    seen: usize,
}

impl VocabCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_sentence<S: AsRef<str>>(&mut self, sentence: &[S]) {
        for tok in sentence {
            let tok = tok.as_ref();
            if SPECIALS.contains(&tok) {
                continue;
            }
            let order = self.seen;
            let entry = self.counts.entry(tok.to_string()).or_insert((0, order));
            entry.0 += 1;
            self.seen += 1;
        }
    }

    /// Keeps the `size_cap` most frequent tokens, ties going to whichever
    /// appeared first.
    pub fn finish(self, size_cap: usize) -> Result<Vocabulary> {
        if size_cap == 0 {
            return Err(Error::Data("vocabulary size cap must be at least 1".into()));
        }
        if self.counts.is_empty() {
            return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut ranked: Vec<(String, usize, usize)> =
            self.counts.into_iter().map(|(t, (c, first))| (t, c, first)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        ranked.truncate(size_cap);
        Ok(Vocabulary::from_tokens(ranked.into_iter().map(|r| r.0), size_cap))
    }
}

impl Vocabulary {
    pub fn build<I, S>(corpus: I, size_cap: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[String]>,
    {
        let mut counter = VocabCounter::new();
        for s in corpus {
            counter.add_sentence(s.as_ref());
        }
        counter.finish(size_cap)
    }

    /// Specials followed by `tokens` in order. Duplicates and specials in
    /// `tokens` are skipped.
    pub fn from_tokens<I, S>(tokens: I, size_cap: usize) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut id_to_token: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut token_to_id: HashMap<String, usize> =
            id_to_token.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        for t in tokens {
            let t = t.into();
            if token_to_id.contains_key(&t) {
                continue;
            }
            token_to_id.insert(t.clone(), id_to_token.len());
            id_to_token.push(t);
        }
        Self {
            token_to_id,
            id_to_token,
            size_cap,
        }
    }

    /// Total entries, specials included.
    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.len() <= SPECIALS.len()
    }

    pub fn size_cap(&self) -> usize {
        self.size_cap
    }

    /// Id of `token`, or [`UNK`] when it is out of vocabulary.
    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    pub fn encode<S: AsRef<str>>(&self, sentence: &[S]) -> Vec<usize> {
        sentence.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(SPECIALS[UNK]).to_string())
            .collect()
    }

    /// SHA-256 over the newline-joined token list, hex encoded.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.id_to_token {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// One token per line in id order, specials first.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.id_to_token.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let lines: Vec<&str> = text.lines().collect();
        for (i, s) in SPECIALS.iter().enumerate() {
            if lines.get(i) != Some(s) {
                return Err(Error::parse(path, i + 1, format!("expected reserved token {s}")));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for (i, l) in lines.iter().enumerate() {
            if l.is_empty() || l.contains(char::is_whitespace) {
                return Err(Error::parse(
                    path,
                    i + 1,
                    "vocabulary tokens must be non-empty and contain no whitespace",
                ));
            }
            if !seen.insert(*l) {
                return Err(Error::parse(path, i + 1, format!("duplicate token {l}")));
            }
        }
        let n = lines.len() - SPECIALS.len();
        Ok(Self::from_tokens(lines[SPECIALS.len()..].iter().copied(), n.max(1)))
    }
}
