use std::path::Path;
use std::process::{Command, Output};

fn rewe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rewe")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let f = dir.join(name);
    std::fs::write(&f, text).unwrap();
    f
}

#[test]
fn bleu_of_identical_files() {
    let d = tempfile::tempdir().unwrap();
    let f = write(
        d.path(),
        "a.txt",
        "the cat sat on the mat\nit was a very good day today\n",
    );
    let out = rewe(&["bleu", "--hyp", p(&f), "--ref", p(&f)]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "100.00");
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let f = write(d.path(), "a.txt", "a b\n");
    let g = write(d.path(), "b.txt", "a b\nc d\n");
    assert_eq!(rewe(&["--help"]).status.code(), Some(0));
    assert_eq!(rewe(&["bleu", "--hyp", p(&f), "--bogus"]).status.code(), Some(1));
    assert_eq!(
        rewe(&["bleu", "--hyp", p(&f), "--ref", "/no/such/file"]).status.code(),
        Some(2)
    );
    let mismatch = rewe(&["bleu", "--hyp", p(&f), "--ref", p(&g)]);
    assert_eq!(mismatch.status.code(), Some(2));
    assert!(!mismatch.stderr.is_empty());
}

#[test]
fn gradcheck_passes() {
    let out = rewe(&["gradcheck", "--instances", "3"]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["passed"], true);
    assert!(report["max_rel_error"].as_f64().unwrap() < 1e-4);
}

#[test]
fn bpe_and_vocab_tools() {
    let d = tempfile::tempdir().unwrap();
    let text = "lower lowest newer newest\nwider widest low new\n";
    let f = write(d.path(), "t.txt", text);
    let codes = d.path().join("codes");
    let seg = d.path().join("seg.txt");
    let vocab = d.path().join("v.txt");
    assert!(
        rewe(&["learn-bpe", "--input", p(&f), "--merges", "10", "--output", p(&codes)])
            .status
            .success()
    );
    assert!(
        rewe(&["apply-bpe", "--codes", p(&codes), "--input", p(&f), "--output", p(&seg)])
            .status
            .success()
    );
    let seg_text = std::fs::read_to_string(&seg).unwrap();
    assert_eq!(seg_text.lines().count(), 2);
    assert_eq!(seg_text.replace("@@ ", ""), text);
    assert!(
        rewe(&["build-vocab", "--input", p(&seg), "--cap", "100", "--output", p(&vocab)])
            .status
            .success()
    );
}

fn toy_files(dir: &Path) -> Vec<String> {
    let (src, tgt) = rewe::toy::toy_corpus(80, 2, 3);
    let (vs, vt) = rewe::toy::toy_corpus(10, 2, 4);
    let mut paths = Vec::new();
    for (name, side) in [
        ("train.src", &src),
        ("train.tgt", &tgt),
        ("val.src", &vs),
        ("val.tgt", &vt),
    ] {
        let f = dir.join(name);
        rewe::text::write_corpus(&f, side).unwrap();
        paths.push(p(&f).to_string());
    }
    paths
}

#[test]
fn training_twice_gives_identical_checkpoints() {
    let d = tempfile::tempdir().unwrap();
    let files = toy_files(d.path());
    let cfg = write(
        d.path(),
        "cfg.json",
        r#"{"lambda": 1.0, "loss_kind": "cel", "seed": 4, "hidden_size": 8, "emb_dim": 6,
            "rewe_mid_dim": 4, "dropout": 0.1, "batch_size": 16, "eval_every": 40,
            "lr": 0.01, "max_len": 50, "vocab_cap": 100, "bpe_merges": 0, "max_epochs": 2}"#,
    );
    let mut dirs = Vec::new();
    for run in ["a", "b"] {
        let out = d.path().join(run);
        let o = rewe(&[
            "train",
            "--config",
            p(&cfg),
            "--train-src",
            &files[0],
            "--train-tgt",
            &files[1],
            "--val-src",
            &files[2],
            "--val-tgt",
            &files[3],
            "--out",
            p(&out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        dirs.push(out);
    }
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read(&dirs[0], "model.ckpt"), read(&dirs[1], "model.ckpt"));
    let log = String::from_utf8(read(&dirs[0], "train_log.csv")).unwrap();
    assert!(log.starts_with("sentences,nll,rewe_raw,rewe_scaled,total,val_ppl,lr\n"));

    let hyp = d.path().join("hyp.txt");
    for mode in ["beam", "greedy", "nn"] {
        let o = rewe(&[
            "translate",
            "--model",
            p(&dirs[0]),
            "--input",
            &files[2],
            "--output",
            p(&hyp),
            "--mode",
            mode,
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(std::fs::read_to_string(&hyp).unwrap().lines().count(), 10);
    }
    let o = rewe(&["ppl", "--model", p(&dirs[0]), "--src", &files[2], "--tgt", &files[3]]);
    assert!(o.status.success());
    let ppl: f64 = String::from_utf8(o.stdout).unwrap().trim().parse().unwrap();
    assert!(ppl.is_finite() && ppl >= 1.0);

    std::fs::write(dirs[0].join("tgt.vocab"), "<pad>\n<unk>\n<s>\n</s>\nother\n").unwrap();
    let o = rewe(&[
        "translate",
        "--model",
        p(&dirs[0]),
        "--input",
        &files[2],
        "--output",
        p(&hyp),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_writes_both_tables() {
    let d = tempfile::tempdir().unwrap();
    let files = toy_files(d.path());
    let cfg = write(
        d.path(),
        "cfg.json",
        r#"{"lambda": 0.0, "loss_kind": "none", "seed": 1, "hidden_size": 8, "emb_dim": 6,
            "rewe_mid_dim": 4, "dropout": 0.0, "batch_size": 16, "eval_every": 80,
            "lr": 0.01, "max_len": 50, "vocab_cap": 100, "bpe_merges": 0, "max_epochs": 1}"#,
    );
    let csv = d.path().join("sweep.csv");
    let means = d.path().join("means.csv");
    let o = rewe(&[
        "sweep",
        "--config",
        p(&cfg),
        "--train-src",
        &files[0],
        "--train-tgt",
        &files[1],
        "--val-src",
        &files[2],
        "--val-tgt",
        &files[3],
        "--lambdas",
        "0,1",
        "--kinds",
        "cel",
        "--seeds",
        "1,2",
        "--jobs",
        "2",
        "--smooth",
        "--out",
        p(&csv),
        "--means",
        p(&means),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = std::fs::read_to_string(&csv).unwrap();
    assert!(rows.starts_with("lambda,kind,seed,bleu\n"));
    assert_eq!(rows.lines().count(), 5);
    let m = std::fs::read_to_string(&means).unwrap();
    assert!(m.starts_with("lambda,kind,mean_bleu,n_seeds\n"));
    assert_eq!(m.lines().count(), 3);
}
