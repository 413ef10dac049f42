//! Finite-difference checks of every primitive and of the full training
//! objective on a tiny model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{LossKind, Normalization};
use crate::diff::{self, grad_check_many, Attrs, Graph, NodeId, Primitive};
use crate::error::Result;
use crate::losses::objective;
use crate::model::{ModelConfig, Seq2SeqModel};
use crate::tensor::Tensor;
use crate::text::Batch;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckLine {
    pub name: String,
    pub instances: usize,
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradReport {
    pub lines: Vec<CheckLine>,
    pub max_rel_error: f64,
    pub passed: bool,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect())
}

/// Values bounded away from zero, for the kink of relu.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..1.5);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data)
}

type Build = Box<dyn Fn(&mut Graph, &[NodeId]) -> diff::Result<NodeId>>;

/// A random instance of `p`: its leaves and a builder producing the
/// primitive's output.
fn instance(p: Primitive, rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Build) {
    let m = rng.random_range(1..=4);
    let n = rng.random_range(1..=4);
    let sq = |rng: &mut ChaCha8Rng, s: &[usize]| uniform(rng, s, -1.5, 1.5);
    match p {
        Primitive::MatMul => {
            let k = rng.random_range(1..=4);
            (
                vec![sq(rng, &[m, k]), sq(rng, &[k, n])],
                Box::new(move |g, x| g.apply(p, x, &Attrs::default())),
            )
        }
        Primitive::Add | Primitive::Sub | Primitive::Mul => {
            let second: Vec<usize> = match rng.random_range(0..4) {
                0 => vec![m, n],
                1 => vec![n],
                2 => vec![1, n],
                _ => vec![m, 1],
            };
            (
                vec![sq(rng, &[m, n]), sq(rng, &second)],
                Box::new(move |g, x| g.apply(p, x, &Attrs::default())),
            )
        }
        Primitive::Scale => {
            let f = rng.random_range(-3.0..3.0);
            (vec![sq(rng, &[m, n])], Box::new(move |g, x| g.scale(x[0], f)))
        }
        Primitive::Concat => {
            let axis = rng.random_range(0..2);
            let parts = rng.random_range(1..=3);
            let leaves = (0..parts)
                .map(|_| {
                    let k = rng.random_range(1..=3);
                    if axis == 0 {
                        sq(rng, &[k, n])
                    } else {
                        sq(rng, &[m, k])
                    }
                })
                .collect();
            (leaves, Box::new(move |g, x| g.concat(x, axis)))
        }
        Primitive::Slice => {
            let axis = rng.random_range(0..2);
            let len = if axis == 0 { m } else { n };
            let start = rng.random_range(0..len);
            let end = rng.random_range(start + 1..=len);
            (
                vec![sq(rng, &[m, n])],
                Box::new(move |g, x| g.slice(x[0], axis, start, end)),
            )
        }
        Primitive::Tanh | Primitive::Sigmoid | Primitive::Transpose | Primitive::Mean => (
            vec![sq(rng, &[m, n])],
            Box::new(move |g, x| g.apply(p, x, &Attrs::default())),
        ),
        Primitive::Relu => (vec![away_from_zero(rng, &[m, n])], Box::new(move |g, x| g.relu(x[0]))),
        Primitive::RowSoftmax => {
            let masked = rng.random::<bool>();
            let mut mask: Vec<bool> = (0..m * n).map(|_| rng.random::<f64>() < 0.7).collect();
            for r in 0..m {
                mask[r * n + rng.random_range(0..n)] = true;
            }
            (
                vec![sq(rng, &[m, n])],
                Box::new(move |g, x| {
                    if masked {
                        g.masked_softmax_rows(x[0], mask.clone())
                    } else {
                        g.softmax_rows(x[0])
                    }
                }),
            )
        }
        Primitive::Embedding => {
            let ids: Vec<usize> = (0..rng.random_range(1..=5)).map(|_| rng.random_range(0..m)).collect();
            (
                vec![sq(rng, &[m, n])],
                Box::new(move |g, x| g.embedding(x[0], ids.clone())),
            )
        }
        Primitive::Dropout => (vec![sq(rng, &[m, n])], Box::new(move |g, x| g.dropout(x[0], 0.7))),
        Primitive::Sum => {
            let rows = rng.random::<bool>();
            (
                vec![sq(rng, &[m, n])],
                Box::new(move |g, x| if rows { g.sum_rows(x[0]) } else { g.sum(x[0]) }),
            )
        }
        Primitive::Log => (
            vec![uniform(rng, &[m, n], 0.2, 2.0)],
            Box::new(move |g, x| g.log(x[0], 1e-12)),
        ),
        Primitive::Gather => {
            let cols: Vec<usize> = (0..m).map(|_| rng.random_range(0..n)).collect();
            (
                vec![sq(rng, &[m, n])],
                Box::new(move |g, x| g.gather(x[0], cols.clone())),
            )
        }
        Primitive::CosineRows => (
            vec![sq(rng, &[m, n]), sq(rng, &[m, n])],
            Box::new(move |g, x| g.cosine_rows(x[0], x[1], 1e-8)),
        ),
        Primitive::Reshape => (
            vec![sq(rng, &[m, n])],
            Box::new(move |g, x| g.reshape(x[0], vec![n, m])),
        ),
        Primitive::Tile | Primitive::RepeatRows => {
            let t = rng.random_range(1..=3);
            (
                vec![sq(rng, &[m, n])],
                Box::new(move |g, x| g.apply(p, x, &Attrs::default().times(t))),
            )
        }
        Primitive::WeightedSum => {
            let (b, l, d) = (m, n, rng.random_range(1..=4));
            (
                vec![uniform(rng, &[b, l], 0.0, 1.0), sq(rng, &[l * b, d])],
                Box::new(move |g, x| g.weighted_sum(x[0], x[1])),
            )
        }
    }
}

/// Checks `instances` random cases of every primitive. Each output is
/// reduced to a scalar through a random linear functional.
pub fn primitive_gradchecks(seed: u64, instances: usize) -> Result<Vec<CheckLine>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lines = Vec::new();
    for &p in Primitive::ALL.iter() {
        let mut line = CheckLine {
            name: p.name().to_string(),
            instances,
            coordinates: 0,
            max_rel_error: 0.0,
            passed: true,
        };
        for _ in 0..instances {
            let (leaves, build) = instance(p, &mut rng);
            let mut probe = Graph::new(0);
            let ids: Vec<NodeId> = leaves.iter().map(|t| probe.param(t.clone())).collect();
            let out = build(&mut probe, &ids)?;
            let weights = uniform(&mut rng, probe.shape(out), -1.0, 1.0);
            let report = grad_check_many(
                |g, x| {
                    let y = build(g, x)?;
                    let w = g.constant(weights.clone());
                    let prod = g.mul(y, w)?;
                    g.sum(prod)
                },
                &leaves,
                STEP,
                TOLERANCE,
            )?;
            line.coordinates += report.rel_errors.len();
            line.max_rel_error = line.max_rel_error.max(report.max_rel_error);
            line.passed &= report.passed();
        }
        lines.push(line);
    }
    Ok(lines)
}

/// Dimensions used for the whole-model check.
pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        src_vocab: 11,
        tgt_vocab: 11,
        emb_dim: 6,
        hidden: 8,
        rewe_mid: 4,
        dropout: 0.2,
    }
}

/// Gradient of `NLL + lambda * regression` with respect to every model
/// parameter, for one random sentence pair.
pub fn model_gradcheck(seed: u64, kind: LossKind, lambda: f64) -> Result<CheckLine> {
    let model = Seq2SeqModel::new(tiny_model_config(), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let src: Vec<usize> = (0..rng.random_range(2..=4)).map(|_| rng.random_range(4..11)).collect();
    let tgt: Vec<usize> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(4..11)).collect();
    let batch = Batch::from_pairs(&[(src, tgt)]);
    let report = grad_check_many(
        |g, ids| {
            let bound = model.bind_nodes(g, ids).map_err(|_| diff::DiffError::BadNode(0))?;
            let tf = bound
                .forward_teacher_forced(g, &batch, true, true)
                .map_err(|_| diff::DiffError::BadNode(0))?;
            let obj = objective(g, &tf, model.rewe_target(), kind, lambda, Normalization::Token)
                .map_err(|_| diff::DiffError::BadNode(0))?;
            Ok(obj.total)
        },
        model.params(),
        STEP,
        TOLERANCE,
    )?;
    Ok(CheckLine {
        name: format!("model/{kind}"),
        instances: 1,
        coordinates: report.rel_errors.len(),
        max_rel_error: report.max_rel_error,
        passed: report.passed(),
    })
}

/// Every primitive plus the full objective under both regression losses.
pub fn full_gradcheck(seed: u64, instances: usize) -> Result<GradReport> {
    let mut lines = primitive_gradchecks(seed, instances)?;
    lines.push(model_gradcheck(seed, LossKind::Cel, 20.0)?);
    lines.push(model_gradcheck(seed, LossKind::Mse, 20.0)?);
    let max_rel_error = lines.iter().map(|l| l.max_rel_error).fold(0.0, f64::max);
    let passed = lines.iter().all(|l| l.passed);
    Ok(GradReport {
        lines,
        max_rel_error,
        passed,
    })
}
