use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{LossKind, TrainConfig};
use crate::error::{Error, Result};
use crate::pipeline::{beam_options, evaluate_bleu, train_pipeline, Corpus, EmbeddingFiles};

pub const SWEEP_CSV_HEADER: &str = "lambda,kind,seed,bleu";
pub const MEAN_CSV_HEADER: &str = "lambda,kind,mean_bleu,n_seeds";
/// Written in the bleu column of failed runs.
pub const FAILED: &str = "FAILED";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub lambda: f64,
    pub kind: LossKind,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub point: SweepPoint,
    /// `Err` holds the failure message.
    pub bleu: std::result::Result<f64, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanRow {
    pub lambda: f64,
    pub kind: LossKind,
    pub seed_scores: Vec<f64>,
    pub mean_bleu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// One entry per (lambda, kind), averaging the successful seeds.
    pub fn means(&self) -> Vec<MeanRow> {
        let mut groups: BTreeMap<(u64, LossKind), Vec<f64>> = BTreeMap::new();
        let mut order: Vec<(f64, LossKind)> = Vec::new();
        for r in &self.rows {
            let key = (r.point.lambda.to_bits(), r.point.kind);
            let e = groups.entry(key).or_insert_with(|| {
                order.push((r.point.lambda, r.point.kind));
                Vec::new()
            });
            if let Ok(b) = r.bleu {
                e.push(b);
            }
        }
        order
            .into_iter()
            .map(|(lambda, kind)| {
                let seed_scores = groups.remove(&(lambda.to_bits(), kind)).unwrap_or_default();
                let mean_bleu =
                    (!seed_scores.is_empty()).then(|| seed_scores.iter().sum::<f64>() / seed_scores.len() as f64);
                MeanRow {
                    lambda,
                    kind,
                    seed_scores,
                    mean_bleu,
                }
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{SWEEP_CSV_HEADER}\n");
        for r in &self.rows {
            let b = match &r.bleu {
                Ok(b) => b.to_string(),
                Err(_) => FAILED.to_string(),
            };
            writeln!(s, "{},{},{},{}", r.point.lambda, r.point.kind, r.point.seed, b).unwrap();
        }
        s
    }

    pub fn means_csv(&self) -> String {
        let mut s = format!("{MEAN_CSV_HEADER}\n");
        for m in self.means() {
            let b = m.mean_bleu.map(|b| b.to_string()).unwrap_or_else(|| FAILED.to_string());
            writeln!(s, "{},{},{},{}", m.lambda, m.kind, b, m.seed_scores.len()).unwrap();
        }
        s
    }

    pub fn save(&self, csv: impl AsRef<Path>, means_csv: impl AsRef<Path>) -> Result<()> {
        let (a, b) = (csv.as_ref(), means_csv.as_ref());
        std::fs::write(a, self.to_csv()).map_err(|e| Error::io(a, e))?;
        std::fs::write(b, self.means_csv()).map_err(|e| Error::io(b, e))
    }
}

/// Trains one model per (lambda, kind, seed) and records its validation
/// BLEU. At most `jobs` runs execute at once; failed runs are kept as
/// marked rows. Rows are ordered by lambda, then kind, then seed.
pub fn sweep_lambda(
    base: &TrainConfig,
    lambdas: &[f64],
    kinds: &[LossKind],
    seeds: &[u64],
    corpus: &Corpus,
    embeddings: &EmbeddingFiles,
    jobs: usize,
    smooth: bool,
) -> Result<SweepResult> {
    let mut points = Vec::new();
    for &lambda in lambdas {
        for &kind in kinds {
            for &seed in seeds {
                points.push(SweepPoint { lambda, kind, seed });
            }
        }
    }
    points.sort_by(|a, b| {
        a.lambda
            .total_cmp(&b.lambda)
            .then(a.kind.cmp(&b.kind))
            .then(a.seed.cmp(&b.seed))
    });
    let run = |p: &SweepPoint| -> std::result::Result<f64, String> {
        let cfg = TrainConfig {
            lambda: p.lambda,
            loss_kind: p.kind,
            seed: p.seed,
            ..base.clone()
        };
        let trained = train_pipeline(&cfg, corpus, embeddings, None).map_err(|e| e.to_string())?;
        let (report, _) = evaluate_bleu(
            &trained.translator,
            &corpus.val_src,
            &corpus.val_tgt,
            &beam_options(&cfg),
            smooth,
        )
        .map_err(|e| e.to_string())?;
        Ok(report.bleu)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let rows = pool.install(|| {
        points
            .par_iter()
            .map(|p| SweepRow {
                point: *p,
                bleu: run(p),
            })
            .collect()
    });
    Ok(SweepResult { rows })
}
