//! Python bindings: training, translation, BLEU and the text utilities.

use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use rewe::eval::bleu_corpus;
use rewe::infer::{translate_corpus, DecodeMode, DecodeOptions, Feedback};
use rewe::losses;
use rewe::pipeline::{load_model_dir, train_pipeline, Corpus, EmbeddingFiles};
use rewe::selfcheck::full_gradcheck;
use rewe::text::{tokenize, Sentence};
use rewe::train::{anneal_update, AnnealState, Decision};
use rewe::{Error, TrainConfig};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::NonFinite(_) => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn lines(xs: &[String]) -> Vec<Sentence> {
    xs.iter().map(|s| tokenize(s)).collect()
}

fn decode_options(mode: &str, beam: usize, unk_replace: bool, embedding_feedback: bool) -> PyResult<DecodeOptions> {
    let mode = match mode {
        "beam" => DecodeMode::Beam(beam),
        "greedy" => DecodeMode::Greedy,
        "nn" => DecodeMode::NearestNeighbor(if embedding_feedback {
            Feedback::Embedding
        } else {
            Feedback::Token
        }),
        other => return Err(PyValueError::new_err(format!("unknown decode mode {other:?}"))),
    };
    Ok(DecodeOptions { mode, unk_replace })
}

/// A trained model directory loaded for decoding.
#[pyclass(module = "rewe_py")]
struct Translator {
    inner: rewe::infer::Translator,
    val_perplexity: Option<f64>,
}

#[pymethods]
impl Translator {
    #[staticmethod]
    fn load(model_dir: PathBuf) -> PyResult<Self> {
        let (inner, ck) = load_model_dir(&model_dir).map_err(to_py)?;
        Ok(Self {
            inner,
            val_perplexity: ck.val_perplexity,
        })
    }

    #[getter]
    fn val_perplexity(&self) -> Option<f64> {
        self.val_perplexity
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.inner.model.num_parameters()
    }

    #[pyo3(signature = (sentence, mode = "beam", beam = 5, unk_replace = true, embedding_feedback = false))]
    fn translate(
        &self,
        sentence: &str,
        mode: &str,
        beam: usize,
        unk_replace: bool,
        embedding_feedback: bool,
    ) -> PyResult<String> {
        let opts = decode_options(mode, beam, unk_replace, embedding_feedback)?;
        let t = self.inner.translate(&tokenize(sentence), &opts).map_err(to_py)?;
        Ok(t.words.join(" "))
    }

    #[pyo3(signature = (sentences, mode = "beam", beam = 5, unk_replace = true))]
    fn translate_batch(
        &self,
        py: Python<'_>,
        sentences: Vec<String>,
        mode: &str,
        beam: usize,
        unk_replace: bool,
    ) -> PyResult<Vec<String>> {
        let opts = decode_options(mode, beam, unk_replace, false)?;
        let src = lines(&sentences);
        let out = py.detach(|| self.inner.translate_all(&src, &opts)).map_err(to_py)?;
        Ok(out.into_iter().map(|t| t.words.join(" ")).collect())
    }

    /// Returns the number of translated lines.
    #[pyo3(signature = (input, output, mode = "beam", beam = 5, unk_replace = true))]
    fn translate_file(
        &self,
        py: Python<'_>,
        input: PathBuf,
        output: PathBuf,
        mode: &str,
        beam: usize,
        unk_replace: bool,
    ) -> PyResult<usize> {
        let opts = decode_options(mode, beam, unk_replace, false)?;
        let stats = py
            .detach(|| translate_corpus(&self.inner, &input, &output, &opts))
            .map_err(to_py)?;
        Ok(stats.sentences)
    }
}

/// Trains from in-memory sentences and writes the model directory.
/// `config` is the JSON text of a training configuration. Returns the
/// training log as CSV text.
#[pyfunction]
#[pyo3(signature = (config, train_src, train_tgt, val_src, val_tgt, out_dir, tgt_embeddings = None, src_embeddings = None))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    config: &str,
    train_src: Vec<String>,
    train_tgt: Vec<String>,
    val_src: Vec<String>,
    val_tgt: Vec<String>,
    out_dir: PathBuf,
    tgt_embeddings: Option<PathBuf>,
    src_embeddings: Option<PathBuf>,
) -> PyResult<String> {
    let cfg = TrainConfig::from_json(config).map_err(to_py)?;
    if train_src.len() != train_tgt.len() || val_src.len() != val_tgt.len() {
        return Err(PyValueError::new_err("source and target line counts differ"));
    }
    let corpus = Corpus {
        train_src: lines(&train_src),
        train_tgt: lines(&train_tgt),
        val_src: lines(&val_src),
        val_tgt: lines(&val_tgt),
    };
    let emb = EmbeddingFiles {
        src: src_embeddings,
        tgt: tgt_embeddings,
    };
    let trained = py
        .detach(|| train_pipeline(&cfg, &corpus, &emb, Some(&out_dir)))
        .map_err(to_py)?;
    Ok(trained.log.to_csv())
}

/// Corpus BLEU-4 as a dict with `bleu`, `precisions`, `brevity_penalty`,
/// `hyp_len` and `ref_len`.
#[pyfunction]
#[pyo3(signature = (hypotheses, references, smooth = false))]
fn bleu<'py>(
    py: Python<'py>,
    hypotheses: Vec<String>,
    references: Vec<String>,
    smooth: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let r = bleu_corpus(&lines(&hypotheses), &lines(&references), smooth).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("bleu", r.bleu)?;
    d.set_item("precisions", r.precisions.to_vec())?;
    d.set_item("brevity_penalty", r.brevity_penalty)?;
    d.set_item("hyp_len", r.hyp_len)?;
    d.set_item("ref_len", r.ref_len)?;
    Ok(d)
}

fn same_len(a: &[f64], b: &[f64]) -> PyResult<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(PyValueError::new_err("vectors must be non-empty and of equal length"));
    }
    Ok(())
}

#[pyfunction]
fn cel_loss(pred: Vec<f64>, target: Vec<f64>) -> PyResult<f64> {
    same_len(&pred, &target)?;
    Ok(losses::cel_loss(&pred, &target))
}

#[pyfunction]
fn mse_loss(pred: Vec<f64>, target: Vec<f64>) -> PyResult<f64> {
    same_len(&pred, &target)?;
    Ok(losses::mse_loss(&pred, &target))
}

/// Subword segmentation model.
#[pyclass(module = "rewe_py")]
struct Bpe {
    inner: rewe::BpeModel,
}

#[pymethods]
impl Bpe {
    #[staticmethod]
    fn learn(sentences: Vec<String>, merges: usize) -> PyResult<Self> {
        let inner = rewe::BpeModel::learn(lines(&sentences), merges).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: rewe::BpeModel::load(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    fn apply(&self, sentence: &str) -> String {
        self.inner.apply(&tokenize(sentence)).join(" ")
    }

    fn join(&self, sentence: &str) -> String {
        self.inner.join(&tokenize(sentence)).join(" ")
    }

    fn __len__(&self) -> usize {
        self.inner.num_merges()
    }
}

/// Feeds validation perplexities to a fresh schedule and returns one
/// decision per value: "continue", "halve" or "stop".
#[pyfunction]
fn anneal_schedule(perplexities: Vec<f64>) -> Vec<&'static str> {
    let mut s = AnnealState::default();
    let mut out = Vec::new();
    for p in perplexities {
        let d = anneal_update(&mut s, p);
        out.push(match d {
            Decision::Continue => "continue",
            Decision::Halve => "halve",
            Decision::Stop => "stop",
        });
        if d == Decision::Stop {
            break;
        }
    }
    out
}

/// Runs the gradient checks; returns `(passed, max_relative_error)`.
#[pyfunction]
#[pyo3(signature = (instances = 20, seed = 0))]
fn gradcheck(py: Python<'_>, instances: usize, seed: u64) -> PyResult<(bool, f64)> {
    let r = py.detach(|| full_gradcheck(seed, instances)).map_err(to_py)?;
    Ok((r.passed, r.max_rel_error))
}

/// Synthetic digits-to-words pairs as `(sources, targets)` lines.
#[pyfunction]
#[pyo3(signature = (n, max_numbers = 3, seed = 0))]
fn toy_corpus(n: usize, max_numbers: usize, seed: u64) -> (Vec<String>, Vec<String>) {
    let (s, t) = rewe::toy::toy_corpus(n, max_numbers, seed);
    let join = |v: Vec<Sentence>| v.into_iter().map(|x| x.join(" ")).collect();
    (join(s), join(t))
}

#[pymodule]
fn rewe_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Translator>()?;
    m.add_class::<Bpe>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(bleu, m)?)?;
    m.add_function(wrap_pyfunction!(cel_loss, m)?)?;
    m.add_function(wrap_pyfunction!(mse_loss, m)?)?;
    m.add_function(wrap_pyfunction!(anneal_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(toy_corpus, m)?)?;
    Ok(())
}
