use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::Vocabulary;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const INIT_RANGE: f64 = 0.1;

/// `|V| x dim` matrix aligned with vocabulary ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    vectors: Tensor,
    pub trainable: bool,
}

/// What `load_embeddings` found in the file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coverage {
    pub vocab_size: usize,
    pub found: usize,
    pub missing: usize,
    pub file_rows: usize,
    /// Rows present in the file but all-zero; re-initialized randomly.
    pub zero_rows_replaced: usize,
    /// Share of non-reserved vocabulary entries found in the file.
    pub ratio: f64,
}

impl EmbeddingTable {
    pub fn new(vectors: Tensor, trainable: bool) -> Result<Self> {
        if vectors.shape().len() != 2 {
            return Err(Error::Data(format!(
                "embedding table must be 2-D, got {:?}",
                vectors.shape()
            )));
        }
        if vectors.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding value".into()));
        }
        Ok(Self { vectors, trainable })
    }

    /// Every entry uniform in [-0.1, 0.1].
    pub fn random(rows: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * dim)
            .map(|_| rng.random_range(-INIT_RANGE..=INIT_RANGE))
            .collect();
        Self {
            vectors: Tensor::new(vec![rows, dim], data),
            trainable: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.vectors.shape()[1]
    }

    pub fn rows(&self) -> usize {
        self.vectors.shape()[0]
    }

    pub fn row(&self, id: usize) -> &[f64] {
        self.vectors.row(id)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.vectors
    }

    pub fn into_tensor(self) -> Tensor {
        self.vectors
    }

    /// Stacks the rows of `ids` into an `[ids.len(), dim]` tensor.
    pub fn gather(&self, ids: &[usize]) -> Tensor {
        let d = self.dim();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(self.row(i));
        }
        Tensor::new(vec![ids.len(), d], data)
    }

    /// Writes the text vector format, header included.
    pub fn save(&self, path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<()> {
        let path = path.as_ref();
        let mut s = format!("{} {}\n", self.rows(), self.dim());
        for (i, tok) in vocab.tokens().iter().enumerate().take(self.rows()) {
            s.push_str(tok);
            for v in self.row(i) {
                s.push(' ');
                s.push_str(&v.to_string());
            }
            s.push('\n');
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

/// Reads a text vector file: an optional `count dim` header, then
/// `token v1 .. v_dim` rows. Vocabulary entries absent from the file, and the
/// reserved entries, get uniform [-0.1, 0.1] rows drawn from `seed`.
pub fn load_embeddings(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
    dim: usize,
    seed: u64,
) -> Result<(EmbeddingTable, Coverage)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut found: HashMap<usize, Vec<f64>> = HashMap::new();
    let mut header_count = None;
    let mut file_rows = 0;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if i == 0 && fields.len() == 2 && dim != 1 {
            if let (Ok(c), Ok(d)) = (fields[0].parse::<usize>(), fields[1].parse::<usize>()) {
                if d != dim {
                    return Err(Error::parse(
                        path,
                        lineno,
                        format!("header dimension {d} does not match expected {dim}"),
                    ));
                }
                header_count = Some(c);
                continue;
            }
        }
        if fields.len() != dim + 1 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected a token and {dim} values, found {} values", fields.len() - 1),
            ));
        }
        let mut v = Vec::with_capacity(dim);
        for f in &fields[1..] {
            let x: f64 = f
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("malformed number `{f}`")))?;
            if !x.is_finite() {
                return Err(Error::parse(path, lineno, "non-finite value"));
            }
            v.push(x);
        }
        file_rows += 1;
        if let Some(id) = vocab.get(fields[0]) {
            if id >= super::SPECIALS.len() {
                found.entry(id).or_insert(v);
            }
        }
    }
    if let Some(c) = header_count {
        if c != file_rows {
            return Err(Error::parse(
                path,
                1,
                format!("header announces {c} rows but the file has {file_rows}"),
            ));
        }
    }

    let mut table = EmbeddingTable::random(vocab.len(), dim, seed);
    let mut zero_rows_replaced = 0;
    for (id, v) in &found {
        if v.iter().all(|x| *x == 0.0) {
            zero_rows_replaced += 1;
            continue;
        }
        table.vectors.data_mut()[id * dim..(id + 1) * dim].copy_from_slice(v);
    }
    let words = vocab.len().saturating_sub(super::SPECIALS.len());
    let coverage = Coverage {
        vocab_size: vocab.len(),
        found: found.len(),
        missing: words - found.len(),
        file_rows,
        zero_rows_replaced,
        ratio: if words == 0 {
            0.0
        } else {
            found.len() as f64 / words as f64
        },
    };
    Ok((table, coverage))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;

    fn vocab() -> Vocabulary {
        Vocabulary::build([tokenize("alpha beta gamma")], 10).unwrap()
    }

    #[test]
    fn copies_rows_found_in_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.vec");
        std::fs::write(&p, "3 3\nalpha 1 0 0\nbeta 0 1 0\ngamma 0 0 1\n").unwrap();
        let v = vocab();
        let (t, cov) = load_embeddings(&p, &v, 3, 7).unwrap();
        assert_eq!(t.row(v.id("alpha")), &[1.0, 0.0, 0.0]);
        assert_eq!(t.row(v.id("gamma")), &[0.0, 0.0, 1.0]);
        assert_eq!(cov.found, 3);
        assert_eq!(cov.ratio, 1.0);
        assert_eq!(t.rows(), v.len());
    }

    #[test]
    fn missing_rows_are_small_random() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.vec");
        std::fs::write(&p, "alpha 1 2 3\n").unwrap();
        let v = vocab();
        let (t, cov) = load_embeddings(&p, &v, 3, 7).unwrap();
        assert_eq!(cov.missing, 2);
        for x in t.row(v.id("beta")) {
            assert!(x.abs() <= 0.1);
        }
        let (t2, _) = load_embeddings(&p, &v, 3, 7).unwrap();
        assert_eq!(t, t2);
    }

    #[test]
    fn short_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.vec");
        let mut s = String::from("2 300\n");
        s.push_str(&format!("alpha {}\n", vec!["0.1"; 300].join(" ")));
        s.push_str(&format!("beta {}\n", vec!["0.1"; 299].join(" ")));
        std::fs::write(&p, s).unwrap();
        let err = load_embeddings(&p, &vocab(), 300, 1).unwrap_err().to_string();
        assert!(err.contains(":3:"), "{err}");
    }

    #[test]
    fn header_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.vec");
        std::fs::write(&p, "1 4\nalpha 1 2 3 4\n").unwrap();
        assert!(load_embeddings(&p, &vocab(), 3, 1).is_err());
    }

    #[test]
    fn zero_rows_are_replaced() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.vec");
        std::fs::write(&p, "alpha 0 0\n").unwrap();
        let v = vocab();
        let (t, cov) = load_embeddings(&p, &v, 2, 1).unwrap();
        assert_eq!(cov.zero_rows_replaced, 1);
        assert!(t.row(v.id("alpha")).iter().any(|x| *x != 0.0));
    }
}
