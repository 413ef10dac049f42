//! Training objectives: NLL, the two embedding-regression losses, their
//! weighted sum, and the argmax-embedding ("contrastive A") variant.

use serde::Serialize;

use crate::config::{LossKind, Normalization};
use crate::diff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::model::TeacherForced;
use crate::tensor::Tensor;
use crate::text::EmbeddingTable;

/// Probabilities are clamped to this before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;
/// Lower bound on vector norms inside the cosine.
pub const COS_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regression {
    Mse,
    Cel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub nll: f64,
    pub rewe_raw: f64,
    pub rewe_scaled: f64,
    pub total: f64,
    pub token_count: usize,
}

/// Mean of squared coordinate differences.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> f64 {
    assert_eq!(pred.len(), target.len(), "mse_loss dimension mismatch");
    let s: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    s / pred.len() as f64
}

/// Cosine similarity with both norms clamped below at [`COS_EPS`].
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "cosine dimension mismatch");
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let sa: f64 = a.iter().map(|x| x * x).sum();
    let sb: f64 = b.iter().map(|x| x * x).sum();
    let (na, nb) = (sa.sqrt(), sb.sqrt());
    // exact 1 when a == b
    let denom = if na >= COS_EPS && nb >= COS_EPS {
        (sa * sb).sqrt()
    } else {
        na.max(COS_EPS) * nb.max(COS_EPS)
    };
    (dot / denom).clamp(-1.0, 1.0)
}

/// `1 - cos(pred, target)`.
pub fn cel_loss(pred: &[f64], target: &[f64]) -> f64 {
    1.0 - cosine(pred, target)
}

pub fn regression_loss(kind: Regression, pred: &[f64], target: &[f64]) -> f64 {
    match kind {
        Regression::Mse => mse_loss(pred, target),
        Regression::Cel => cel_loss(pred, target),
    }
}

/// `nll + lambda * rewe`.
pub fn combined_loss(nll: f64, rewe: f64, lambda: f64, token_count: usize) -> Result<LossBreakdown> {
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!(
            "trade-off coefficient must be non-negative, got {lambda}"
        )));
    }
    let rewe_scaled = lambda * rewe;
    Ok(LossBreakdown {
        nll,
        rewe_raw: rewe,
        rewe_scaled,
        total: nll + rewe_scaled,
        token_count,
    })
}

fn denominator(mask: &[bool], norm: Normalization, sentences: usize) -> Result<f64> {
    let count = mask.iter().filter(|m| **m).count();
    if count == 0 {
        return Err(Error::Data("every target position is masked".into()));
    }
    Ok(match norm {
        Normalization::Token => count as f64,
        Normalization::Sentence => sentences as f64,
    })
}

/// Masked sum of an `[N, 1]` column, divided per the normalization.
fn reduce(g: &mut Graph, per_row: NodeId, mask: &[bool], norm: Normalization, sentences: usize) -> Result<NodeId> {
    let denom = denominator(mask, norm, sentences)?;
    let m = g.constant(Tensor::new(
        vec![mask.len(), 1],
        mask.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect(),
    ));
    let masked = g.mul(per_row, m)?;
    let total = g.sum(masked)?;
    Ok(g.scale(total, 1.0 / denom)?)
}

/// Negative log-likelihood of `targets` under the `[N, V]` rows of `probs`.
pub fn nll_loss(
    g: &mut Graph,
    probs: NodeId,
    targets: &[usize],
    mask: &[bool],
    norm: Normalization,
    sentences: usize,
) -> Result<NodeId> {
    let picked = g.gather(probs, targets.to_vec())?;
    let logp = g.log(picked, PROB_FLOOR)?;
    let neg = g.scale(logp, -1.0)?;
    reduce(g, neg, mask, norm, sentences)
}

/// Regression loss between the `[N, E]` predicted vectors and the frozen
/// table rows of the gold tokens.
pub fn rewe_loss(
    g: &mut Graph,
    rewe: NodeId,
    targets: &[usize],
    mask: &[bool],
    table: &EmbeddingTable,
    kind: Regression,
    norm: Normalization,
    sentences: usize,
) -> Result<NodeId> {
    let gold = g.constant(table.gather(targets));
    let per_row = match kind {
        Regression::Mse => {
            let d = g.sub(rewe, gold)?;
            let sq = g.mul(d, d)?;
            let rows = g.sum_rows(sq)?;
            g.scale(rows, 1.0 / table.dim() as f64)?
        }
        Regression::Cel => {
            let cos = g.cosine_rows(rewe, gold, COS_EPS)?;
            let ones = g.constant(Tensor::new(vec![targets.len(), 1], vec![1.0; targets.len()]));
            g.sub(ones, cos)?
        }
    };
    reduce(g, per_row, mask, norm, sentences)
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// Regression loss between the embedding of each row's argmax word and the
/// gold embedding. The argmax is not differentiable, so this is a plain value.
pub fn contrastive_a_loss(
    probs: &[f64],
    vocab: usize,
    targets: &[usize],
    mask: &[bool],
    table: &EmbeddingTable,
    kind: Regression,
    norm: Normalization,
    sentences: usize,
) -> Result<f64> {
    let denom = denominator(mask, norm, sentences)?;
    let mut total = 0.0;
    for (r, (&t, &m)) in targets.iter().zip(mask).enumerate() {
        if !m {
            continue;
        }
        let pred = argmax(&probs[r * vocab..(r + 1) * vocab]);
        total += regression_loss(kind, table.row(pred), table.row(t));
    }
    Ok(total / denom)
}

/// Scalar objective node plus its value breakdown.
#[derive(Debug, Clone, Copy)]
pub struct Objective {
    pub total: NodeId,
    pub breakdown: LossBreakdown,
}

/// Builds the training objective for a teacher-forced pass.
pub fn objective(
    g: &mut Graph,
    tf: &TeacherForced,
    table: &EmbeddingTable,
    kind: LossKind,
    lambda: f64,
    norm: Normalization,
) -> Result<Objective> {
    let nll = nll_loss(g, tf.probs, &tf.targets, &tf.mask, norm, tf.batch)?;
    let nll_v = g.scalar(nll);
    let tokens = tf.token_count();
    match kind {
        LossKind::None => Ok(Objective {
            total: nll,
            breakdown: combined_loss(nll_v, 0.0, 0.0, tokens)?,
        }),
        LossKind::Mse | LossKind::Cel => {
            let reg = if kind == LossKind::Mse {
                Regression::Mse
            } else {
                Regression::Cel
            };
            let rewe = tf
                .rewe
                .ok_or_else(|| Error::Config("regression loss requested without the regression head".into()))?;
            let r = rewe_loss(g, rewe, &tf.targets, &tf.mask, table, reg, norm, tf.batch)?;
            let breakdown = combined_loss(nll_v, g.scalar(r), lambda, tokens)?;
            let scaled = g.scale(r, lambda)?;
            let total = g.add(nll, scaled)?;
            Ok(Objective { total, breakdown })
        }
        LossKind::ContrastiveA => {
            let vocab = g.shape(tf.probs)[1];
            let ca = contrastive_a_loss(
                g.value(tf.probs),
                vocab,
                &tf.targets,
                &tf.mask,
                table,
                Regression::Cel,
                norm,
                tf.batch,
            )?;
            let breakdown = combined_loss(nll_v, ca, lambda, tokens)?;
            let scaled = g.constant(Tensor::scalar(breakdown.rewe_scaled));
            let total = g.add(nll, scaled)?;
            Ok(Objective { total, breakdown })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn probs_node(g: &mut Graph, rows: &[&[f64]]) -> NodeId {
        let v = rows[0].len();
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        g.param(Tensor::new(vec![rows.len(), v], data))
    }

    #[test]
    fn nll_perfect_prediction_is_zero() {
        let mut g = Graph::new(0);
        let p = probs_node(&mut g, &[&[0.0, 1.0, 0.0], &[1.0, 0.0, 0.0]]);
        let l = nll_loss(&mut g, p, &[1, 0], &[true, true], Normalization::Token, 1).unwrap();
        assert_eq!(g.scalar(l), 0.0);
    }

    #[test]
    fn nll_uniform_is_log_v() {
        let mut g = Graph::new(0);
        let p = probs_node(&mut g, &[&[0.25; 4], &[0.25; 4], &[0.25; 4]]);
        let l = nll_loss(&mut g, p, &[0, 3, 2], &[true; 3], Normalization::Token, 1).unwrap();
        assert!((g.scalar(l) - 4f64.ln()).abs() < 1e-12);
        assert!((g.scalar(l) - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn nll_two_token_hand_case() {
        let mut g = Graph::new(0);
        let p = probs_node(&mut g, &[&[0.5, 0.5, 0.0], &[0.25, 0.5, 0.25]]);
        let l = nll_loss(&mut g, p, &[0, 2], &[true, true], Normalization::Token, 1).unwrap();
        let want = (-(0.5f64).ln() - (0.25f64).ln()) / 2.0;
        assert!((g.scalar(l) - want).abs() < 1e-15);
    }

    #[test]
    fn nll_all_masked_errors() {
        let mut g = Graph::new(0);
        let p = probs_node(&mut g, &[&[0.5, 0.5]]);
        assert!(nll_loss(&mut g, p, &[0], &[false], Normalization::Token, 1).is_err());
    }

    #[test]
    fn nll_clamps_zero_probability() {
        let mut g = Graph::new(0);
        let p = probs_node(&mut g, &[&[1.0, 0.0]]);
        let l = nll_loss(&mut g, p, &[1], &[true], Normalization::Token, 1).unwrap();
        assert!((g.scalar(l) + PROB_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn mse_cases() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(mse_loss(&[1.0, 1.0], &[0.0, 0.0]), 1.0);
        let a: [f64; 7] = [0.3, -1.2, 2.0, 0.0, 5.5, -0.7, 1.1];
        let b = [1.0, 0.2, -2.0, 3.0, 5.0, 0.7, -1.1];
        let mut s = 0.0;
        for i in 0..7 {
            s += (a[i] - b[i]).powi(2);
        }
        assert!((mse_loss(&a, &b) - s / 7.0).abs() < 1e-14);
    }

    #[test]
    fn cel_cases() {
        assert_eq!(cel_loss(&[0.3, -2.0, 1.0], &[0.3, -2.0, 1.0]), 0.0);
        assert_eq!(cel_loss(&[1.0, 0.0], &[0.0, 1.0]), 1.0);
        assert_eq!(cel_loss(&[0.3, -2.0], &[-0.3, 2.0]), 2.0);
        // zero vectors are guarded
        assert_eq!(cel_loss(&[0.0, 0.0], &[1.0, 0.0]), 1.0);
    }

    #[test]
    fn combined_cases() {
        let b = combined_loss(2.0, 0.1, 20.0, 1).unwrap();
        assert!((b.total - 4.0).abs() < 1e-12);
        assert_eq!(b.total, b.nll + b.rewe_scaled);
        assert_eq!(combined_loss(2.5, 0.7, 0.0, 1).unwrap().total, 2.5);
        let b = combined_loss(1.5, 0.5, 0.2, 1).unwrap();
        assert!((b.total - 1.6).abs() < 1e-12);
        assert!(combined_loss(1.0, 1.0, -0.1, 1).is_err());
    }

    fn table() -> EmbeddingTable {
        EmbeddingTable::new(
            Tensor::new(
                vec![4, 3],
                vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.5, 0.5, 0.0, -1.0, 2.0, 0.3],
            ),
            false,
        )
        .unwrap()
    }

    #[test]
    fn rewe_loss_zero_at_gold_rows() {
        let t = table();
        let targets = [2, 0, 3];
        for kind in [Regression::Mse, Regression::Cel] {
            let mut g = Graph::new(0);
            let r = g.param(t.gather(&targets));
            let l = rewe_loss(&mut g, r, &targets, &[true; 3], &t, kind, Normalization::Token, 1).unwrap();
            assert!(g.scalar(l).abs() < 1e-15);
        }
    }

    #[test]
    fn rewe_loss_single_token_matches_vector_op() {
        let t = table();
        let pred = [0.2, -0.4, 0.9];
        for kind in [Regression::Mse, Regression::Cel] {
            let mut g = Graph::new(0);
            let r = g.param(Tensor::new(vec![1, 3], pred.to_vec()));
            let l = rewe_loss(&mut g, r, &[3], &[true], &t, kind, Normalization::Token, 1).unwrap();
            assert!((g.scalar(l) - regression_loss(kind, &pred, t.row(3))).abs() < 1e-15);
        }
    }

    #[test]
    fn contrastive_a_zero_when_argmax_is_gold() {
        let t = table();
        let probs = [0.1, 0.7, 0.1, 0.1, 0.4, 0.1, 0.1, 0.4];
        let l = contrastive_a_loss(
            &probs,
            4,
            &[1, 0],
            &[true, true],
            &t,
            Regression::Cel,
            Normalization::Token,
            1,
        )
        .unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn contrastive_a_single_token() {
        let t = table();
        let probs = [0.1, 0.1, 0.7, 0.1];
        let l = contrastive_a_loss(&probs, 4, &[3], &[true], &t, Regression::Cel, Normalization::Token, 1).unwrap();
        assert!((l - (1.0 - cosine(t.row(2), t.row(3)))).abs() < 1e-15);
    }

    #[test]
    fn argmax_ties_take_lowest_index() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[1.0, 1.0]), 0);
    }

    proptest! {
        #[test]
        fn cel_bounded(a in prop::collection::vec(-1e3f64..1e3, 5), b in prop::collection::vec(-1e3f64..1e3, 5)) {
            let v = cel_loss(&a, &b);
            prop_assert!((0.0..=2.0).contains(&v));
        }

        #[test]
        fn mse_nonnegative(a in prop::collection::vec(-10f64..10.0, 4), b in prop::collection::vec(-10f64..10.0, 4)) {
            let v = mse_loss(&a, &b);
            prop_assert!(v >= 0.0);
            prop_assert_eq!(v == 0.0, a == b);
        }
    }
}
