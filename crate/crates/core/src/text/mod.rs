//! Corpus handling: whitespace tokenization, vocabularies, BPE, pretrained
//! embedding files and deterministic batching.

mod batch;
mod bpe;
mod embeddings;
mod vocab;

use std::path::Path;

pub use batch::{make_batches, Batch};
pub use bpe::{join_bpe, BpeModel, BPE_HEADER, END_OF_WORD};
pub use embeddings::{load_embeddings, Coverage, EmbeddingTable};
pub use vocab::{VocabCounter, Vocabulary, BOS, EOS, PAD, SPECIALS, UNK};

use crate::error::{Error, Result};

pub type Sentence = Vec<String>;

/// Splits on runs of whitespace; no case folding or punctuation handling.
pub fn tokenize(line: &str) -> Sentence {
    line.split_whitespace().map(str::to_owned).collect()
}

/// Like [`tokenize`], but starting from raw bytes.
pub fn tokenize_bytes(line: &[u8]) -> Result<Sentence> {
    let text = std::str::from_utf8(line).map_err(|e| Error::Utf8 {
        offset: e.valid_up_to(),
    })?;
    Ok(tokenize(text))
}

/// Reads a one-sentence-per-line UTF-8 file.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<Sentence>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut offset = 0;
    for (i, line) in bytes.split(|b| *b == b'\n').enumerate() {
        let is_trailing = offset + line.len() == bytes.len() && line.is_empty();
        if is_trailing {
            break;
        }
        let raw_len = line.len();
        let line = line.strip_suffix(b"\r").unwrap_or(line);
        match tokenize_bytes(line) {
            Ok(s) => out.push(s),
            Err(Error::Utf8 { offset: o }) => {
                return Err(Error::parse(
                    path,
                    i + 1,
                    format!("invalid UTF-8 at byte offset {}", offset + o),
                ))
            }
            Err(e) => return Err(e),
        }
        offset += raw_len + 1;
    }
    Ok(out)
}

/// Reads an aligned source/target file pair.
pub fn read_parallel(src: impl AsRef<Path>, tgt: impl AsRef<Path>) -> Result<(Vec<Sentence>, Vec<Sentence>)> {
    let s = read_corpus(src.as_ref())?;
    let t = read_corpus(tgt.as_ref())?;
    if s.len() != t.len() {
        return Err(Error::Data(format!(
            "parallel corpus line counts differ: {} has {}, {} has {}",
            src.as_ref().display(),
            s.len(),
            tgt.as_ref().display(),
            t.len()
        )));
    }
    Ok((s, t))
}

pub fn write_corpus(path: impl AsRef<Path>, sentences: &[Sentence]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for s in sentences {
        text.push_str(&s.join(" "));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whitespace_split() {
        assert_eq!(tokenize("go to Control Panel"), ["go", "to", "Control", "Panel"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("a  b"), ["a", "b"]);
    }

    #[test]
    fn invalid_utf8_reports_offset() {
        let err = tokenize_bytes(b"ab\xffcd").unwrap_err();
        assert!(matches!(err, Error::Utf8 { offset: 2 }));
    }

    #[test]
    fn corpus_reader_keeps_empty_lines_and_reports_bad_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.txt");
        std::fs::write(&p, "a b\n\nc\n").unwrap();
        let c = read_corpus(&p).unwrap();
        assert_eq!(c.len(), 3);
        assert!(c[1].is_empty());

        std::fs::write(&p, b"ok\nbad \xfe\n").unwrap();
        let err = read_corpus(&p).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
        assert!(err.contains("byte offset 7"), "{err}");
    }

    #[test]
    fn parallel_line_mismatch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let s = dir.path().join("s");
        let t = dir.path().join("t");
        std::fs::write(&s, "a\nb\n").unwrap();
        std::fs::write(&t, "a\n").unwrap();
        assert!(matches!(read_parallel(&s, &t), Err(Error::Data(_))));
    }
}
