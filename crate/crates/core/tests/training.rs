use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rewe::diff::Graph;
use rewe::infer::greedy_decode;
use rewe::model::{Checkpoint, ModelConfig, ParamId, Seq2SeqModel};
use rewe::pipeline::{train_pipeline, EmbeddingFiles};
use rewe::text::{make_batches, Batch, EOS};
use rewe::toy::toy_splits;
use rewe::train::*;
use rewe::{LossKind, TrainConfig};

fn model(src: usize, tgt: usize, hidden: usize, seed: u64) -> Seq2SeqModel {
    Seq2SeqModel::new(
        ModelConfig {
            src_vocab: src,
            tgt_vocab: tgt,
            emb_dim: 8,
            hidden,
            rewe_mid: 6,
            dropout: 0.0,
        },
        seed,
    )
}

fn config(hidden: usize) -> TrainConfig {
    TrainConfig {
        hidden_size: hidden,
        emb_dim: 8,
        rewe_mid_dim: 6,
        dropout: 0.0,
        batch_size: 10,
        eval_every: 50,
        lr: 0.01,
        max_epochs: 1,
        ..TrainConfig::default()
    }
}

fn random_pairs(n: usize, vocab: usize, seed: u64) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<usize> {
        let len = rng.random_range(1..=4);
        (0..len).map(|_| rng.random_range(4..vocab)).collect()
    };
    let src = (0..n).map(|_| draw(&mut rng)).collect();
    let tgt = (0..n).map(|_| draw(&mut rng)).collect();
    (src, tgt)
}

fn data(src: &[Vec<usize>], tgt: &[Vec<usize>]) -> TrainData {
    TrainData {
        train_src: src.to_vec(),
        train_tgt: tgt.to_vec(),
        val: eval_batches(src, tgt, 16).unwrap(),
        src_vocab_digest: "s".into(),
        tgt_vocab_digest: "t".into(),
    }
}

/// Per-token mean NLL by unrolling the decoder one sentence and one step
/// at a time.
fn stepwise_perplexity(m: &Seq2SeqModel, src: &[Vec<usize>], tgt: &[Vec<usize>]) -> f64 {
    let mut total = 0.0;
    let mut tokens = 0;
    for (s, t) in src.iter().zip(tgt) {
        let mut g = Graph::new(0);
        let b = m.bind(&mut g);
        let enc = b.encode(&mut g, s, &vec![true; s.len()], 1, s.len(), false).unwrap();
        let mut state = enc.init;
        let mut prev = rewe::text::BOS;
        for &y in t.iter().chain(std::iter::once(&EOS)) {
            let step = b.decode_step(&mut g, &enc, state, &[prev], false).unwrap();
            let p = b.generator(&mut g, step.out).unwrap();
            total -= g.value(p)[y].max(1e-12).ln();
            tokens += 1;
            state = step.state;
            prev = y;
        }
    }
    (total / tokens as f64).exp()
}

#[test]
fn uniform_and_certain_models() {
    let mut m = model(7, 4, 6, 1);
    m.param_mut(ParamId::GenW).data_mut().fill(0.0);
    m.param_mut(ParamId::GenB).data_mut().fill(0.0);
    let val = vec![Batch::from_pairs(&[(vec![4, 5], vec![1, 3]), (vec![6], vec![2])])];
    assert!((validate(&m, &val).unwrap() - 4.0).abs() < 1e-12);

    m.param_mut(ParamId::GenB).data_mut()[EOS] = 1000.0;
    let val = vec![Batch::from_pairs(&[(vec![4, 5], vec![]), (vec![6], vec![])])];
    assert_eq!(validate(&m, &val).unwrap(), 1.0);
    assert!(validate(&m, &[]).is_err());
}

#[test]
fn perplexity_matches_stepwise_recomputation() {
    let (src, tgt) = random_pairs(30, 12, 3);
    let mut cfg = config(12);
    cfg.max_steps = Some(15);
    let out = train(model(12, 12, 12, 3), &cfg, &data(&src, &tgt), None).unwrap();
    let batched = validate(&out.last, &eval_batches(&src, &tgt, 7).unwrap()).unwrap();
    let direct = stepwise_perplexity(&out.last, &src, &tgt);
    assert!((batched - direct).abs() <= 1e-12 * direct, "{batched} vs {direct}");
}

#[test]
fn memorizes_fifty_pairs() {
    let (src, tgt) = random_pairs(50, 14, 8);
    let mut cfg = config(48);
    cfg.max_epochs = 300;
    cfg.eval_every = 250;
    let out = train(model(14, 14, 48, 8), &cfg, &data(&src, &tgt), None).unwrap();
    let ppl = out.best.val_perplexity.unwrap();
    assert!(ppl < 1.1, "training perplexity {ppl}");
}

#[test]
fn greedy_reproduces_memorized_targets() {
    let src = vec![vec![4, 5], vec![6], vec![7, 4, 6], vec![5, 5], vec![8, 7]];
    let tgt = vec![vec![9], vec![4, 5], vec![6, 7, 8], vec![5, 9], vec![8]];
    let mut cfg = config(24);
    cfg.batch_size = 5;
    cfg.max_epochs = 300;
    cfg.eval_every = 100;
    let out = train(model(10, 10, 24, 2), &cfg, &data(&src, &tgt), None).unwrap();
    for (s, t) in src.iter().zip(&tgt) {
        let h = greedy_decode(&out.best.model, s, 10).unwrap();
        let mut want = t.clone();
        want.push(EOS);
        assert_eq!(h.token_ids, want);
    }
}

fn run_with_trajectory(kind: LossKind, lambda: f64, steps: usize) -> Vec<Vec<f64>> {
    let (src, tgt) = random_pairs(200, 12, 4);
    let mut cfg = config(10);
    cfg.loss_kind = kind;
    cfg.lambda = lambda;
    cfg.dropout = 0.3;
    let m = Seq2SeqModel::new(
        ModelConfig {
            dropout: 0.3,
            ..model(12, 12, 10, 6).config().clone()
        },
        6,
    );
    let mut t = Trainer::new(m, cfg).unwrap();
    let mut out = Vec::new();
    let mut epoch = 0;
    while out.len() < steps {
        for b in make_batches(&src, &tgt, 10, 100, derive_seed(9, epoch)).unwrap() {
            t.train_batch(&b).unwrap();
            out.push(t.model.params().iter().flat_map(|p| p.data().to_vec()).collect());
        }
        epoch += 1;
    }
    out
}

#[test]
fn zero_lambda_follows_the_baseline_exactly() {
    let base = run_with_trajectory(LossKind::None, 0.0, 100);
    assert!(base.len() >= 100);
    for kind in [LossKind::Cel, LossKind::Mse] {
        let other = run_with_trajectory(kind, 0.0, 100);
        for (i, (a, b)) in base.iter().zip(&other).enumerate() {
            assert!(
                a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()),
                "{kind} differs at step {i}"
            );
        }
    }
    let moved = run_with_trajectory(LossKind::Cel, 1.0, 5);
    assert_ne!(moved[4], base[4]);
}

#[test]
fn runs_are_bit_identical_and_checkpoints_round_trip() {
    let (src, tgt) = random_pairs(60, 12, 5);
    let mut cfg = config(12);
    cfg.loss_kind = LossKind::Cel;
    cfg.lambda = 2.0;
    cfg.max_epochs = 3;
    let d = data(&src, &tgt);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("best.ckpt");
    let a = train(model(12, 12, 12, 1), &cfg, &d, Some(&path)).unwrap();
    let b = train(model(12, 12, 12, 1), &cfg, &d, None).unwrap();
    assert_eq!(a.last, b.last);
    assert_eq!(a.best.to_bytes(), b.best.to_bytes());
    assert_eq!(a.log.to_csv(), b.log.to_csv());

    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, a.best);
    let ppl = validate(&loaded.model, &d.val).unwrap();
    assert_eq!(ppl.to_bits(), a.best.val_perplexity.unwrap().to_bits());
}

#[test]
fn log_rows_scale_regression_loss_by_lambda() {
    let (src, tgt) = random_pairs(60, 12, 5);
    for (kind, lambda) in [(LossKind::Cel, 3.5), (LossKind::Mse, 0.25), (LossKind::None, 7.0)] {
        let mut cfg = config(8);
        cfg.loss_kind = kind;
        cfg.lambda = lambda;
        cfg.max_epochs = 2;
        cfg.eval_every = 20;
        let out = train(model(12, 12, 8, 1), &cfg, &data(&src, &tgt), None).unwrap();
        let logged = if kind == LossKind::None { 0.0 } else { lambda };
        assert!(out.log.len() >= 6);
        for r in out.log.records() {
            assert_eq!(r.rewe_scaled, logged * r.rewe_raw);
            assert_eq!(r.total, r.nll + r.rewe_scaled);
            assert!(r.val_ppl.is_some());
        }
        let csv = out.log.to_csv();
        assert_eq!(csv.lines().next().unwrap(), CSV_HEADER);
        assert_eq!(csv.lines().count(), out.log.len() + 1);
    }
}

#[test]
fn toy_loss_mostly_decreases() {
    let splits = toy_splits(1000, 100, 0, 2, 0.0, 21);
    let cfg = TrainConfig {
        hidden_size: 32,
        emb_dim: 16,
        rewe_mid_dim: 16,
        dropout: 0.0,
        batch_size: 20,
        eval_every: 200,
        lr: 0.005,
        max_epochs: 2,
        loss_kind: LossKind::Cel,
        lambda: 1.0,
        ..TrainConfig::default()
    };
    let tr = train_pipeline(&cfg, &splits.corpus, &EmbeddingFiles::default(), None).unwrap();
    let totals: Vec<f64> = tr.log.records().iter().take(10).map(|r| r.total).collect();
    assert_eq!(totals.len(), 10);
    let down = totals.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(down * 10 >= 8 * (totals.len() - 1), "{totals:?}");
}

#[test]
fn schedule_halves_five_times_then_stops() {
    let mut s = AnnealState::default();
    let base = 0.0002;
    assert_eq!(anneal_update(&mut s, 10.0), Decision::Continue);
    let mut halvings = 0;
    let mut calls = 1;
    loop {
        calls += 1;
        match anneal_update(&mut s, 11.0) {
            Decision::Continue => {}
            Decision::Halve => {
                halvings += 1;
                assert_eq!(s.lr(base), base / 2f64.powi(halvings));
            }
            Decision::Stop => break,
        }
    }
    assert_eq!(halvings, 5);
    assert_eq!(calls, 1 + 5 * 3 + 20);
}

#[test]
fn halving_resets_optimizer_when_configured() {
    let (src, tgt) = random_pairs(20, 12, 5);
    let batch = make_batches(&src, &tgt, 20, 100, 0).unwrap().remove(0);
    for restart in [true, false] {
        let mut cfg = config(8);
        cfg.restart_on_halve = restart;
        let mut t = Trainer::new(model(12, 12, 8, 1), cfg).unwrap();
        t.train_batch(&batch).unwrap();
        t.observe_validation(5.0);
        for _ in 0..3 {
            t.observe_validation(6.0);
        }
        assert_eq!(t.anneal.halvings, 1);
        assert_eq!(t.lr(), 0.005);
        assert_eq!(t.adam.step == 0, restart);
    }
}
