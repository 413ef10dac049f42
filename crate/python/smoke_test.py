"""Smoke test for the rewe_py extension.

Build and install first:  maturin develop -m crates/py/Cargo.toml --release
"""
import json
import tempfile
from pathlib import Path

import rewe_py


def main():
    src, tgt = rewe_py.toy_corpus(300, max_numbers=2, seed=1)
    vsrc, vtgt = rewe_py.toy_corpus(30, max_numbers=2, seed=2)
    print("example pair:", src[0], "->", tgt[0])

    assert rewe_py.cel_loss([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert rewe_py.cel_loss([1.0, 2.0], [-1.0, -2.0]) == 2.0
    assert rewe_py.mse_loss([1.0, 1.0], [0.0, 0.0]) == 1.0
    assert rewe_py.bleu(tgt[:5], tgt[:5])["bleu"] == 100.0
    decisions = rewe_py.anneal_schedule([10, 11, 11, 11])
    assert decisions == ["continue", "continue", "continue", "halve"], decisions

    bpe = rewe_py.Bpe.learn(tgt, 20)
    seg = bpe.apply(tgt[0])
    assert bpe.join(seg) == tgt[0]

    passed, err = rewe_py.gradcheck(instances=2)
    print(f"gradcheck passed={passed} max_rel_error={err:.2e}")
    assert passed

    config = {
        "lambda": 0.5, "loss_kind": "cel", "seed": 1, "hidden_size": 16,
        "emb_dim": 8, "rewe_mid_dim": 8, "dropout": 0.0, "batch_size": 20,
        "eval_every": 300, "lr": 0.01, "max_len": 50, "vocab_cap": 100,
        "bpe_merges": 0, "max_epochs": 3,
    }
    with tempfile.TemporaryDirectory() as d:
        out = Path(d) / "model"
        log = rewe_py.train(json.dumps(config), src, tgt, vsrc, vtgt, str(out))
        header = log.splitlines()[0]
        assert header == "sentences,nll,rewe_raw,rewe_scaled,total,val_ppl,lr", header
        t = rewe_py.Translator.load(str(out))
        print("val perplexity", t.val_perplexity, "parameters", t.num_parameters)
        hyps = t.translate_batch(vsrc)
        print("beam:", vsrc[0], "->", hyps[0])
        print("nn:  ", vsrc[0], "->", t.translate(vsrc[0], mode="nn"))
        print("val BLEU", round(rewe_py.bleu(hyps, vtgt, smooth=True)["bleu"], 2))
        inp = Path(d) / "in.txt"
        inp.write_text("\n".join(vsrc[:7]) + "\n")
        assert t.translate_file(str(inp), str(Path(d) / "out.txt")) == 7
    print("ok")


if __name__ == "__main__":
    main()
