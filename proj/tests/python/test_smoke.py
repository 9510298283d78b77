import json

import numpy as np
import pytest
from PIL import Image

import msggan


def write_corpus(root, per_class, size, seed, offset=0.0):
    rng = np.random.default_rng(seed)
    for label in (0, 1):
        d = root / str(label)
        d.mkdir(parents=True)
        base = (170.0 if label else 80.0) + offset
        for i in range(per_class):
            px = np.clip(np.rint(base + 25.0 * rng.standard_normal((size, size, 3))), 0, 255)
            Image.fromarray(px.astype(np.uint8)).save(d / f"img_{i:04d}.png")


def test_audit_shapes_depth5():
    passed, rows = msggan.audit_shapes(5)
    assert passed
    assert ("generator", 5, "toRGB 1x1", "-", "3x64x64", "3x64x64", True) in rows
    with pytest.raises(ValueError):
        msggan.audit_shapes(10)


def test_gradcheck_passes():
    results = msggan.gradcheck()
    assert len(results) > 20
    assert all(ok for _, _, _, ok in results)


def test_minibatch_stddev_two_samples():
    y = msggan.minibatch_stddev(np.array([0.0, 2.0]).reshape(2, 1, 1, 1), eps=0.0)
    assert y.shape == (2, 2, 1, 1)
    assert y[0, 1, 0, 0] == 1.0 and y[1, 1, 0, 0] == 1.0


def test_wgan_losses():
    d, g = msggan.wgan_losses(np.array([[1.0]]), np.array([[0.2]]), 0.0)
    assert d == pytest.approx(-0.8, abs=1e-15)
    assert g == pytest.approx(-0.2, abs=1e-15)


def test_metrics_against_recount():
    rng = np.random.default_rng(3)
    pred = rng.integers(0, 2, 500).tolist()
    truth = rng.integers(0, 2, 500).tolist()
    m = msggan.compute_metrics(pred, truth)
    p, t = np.array(pred), np.array(truth)
    prec = [np.sum((p == c) & (t == c)) / np.sum(p == c) for c in (0, 1)]
    rec = [np.sum((p == c) & (t == c)) / np.sum(t == c) for c in (0, 1)]
    assert m["accuracy"] == pytest.approx(np.mean(p == t), abs=1e-12)
    assert m["precision"] == pytest.approx(np.mean(prec), abs=1e-12)
    assert m["recall"] == pytest.approx(np.mean(rec), abs=1e-12)
    cm = msggan.confusion([1, 1, 1, 1, 0, 0, 0, 0, 0, 0], [1, 1, 1, 0, 1, 1, 0, 0, 0, 0])
    assert cm == {"tp": 3, "fp": 1, "fn": 2, "tn": 4}


def test_reference_report_renders():
    ref = msggan.reference_report()
    assert [r["scenario"] for r in ref["rows"]] == [
        "Real/Real", "Synthetic/Synthetic", "Real/Synthetic", "Synthetic/Real"]
    md = msggan.report_markdown(json.dumps(ref))
    assert "| Real/Real | 0.84 | 0.84 | 0.84 | 0.84 |" in md


def test_split_sizes(tmp_path):
    write_corpus(tmp_path / "data", 20, 8, 1)
    s = msggan.split(tmp_path / "data", seed=1, proportional=True)
    assert len(s["gan_pool"]) + len(s["cls_pool"]) == 40
    assert len(s["train"]) == int(len(s["cls_pool"]) * 0.7)
    assert not set(s["train"]) & set(s["test"])
    with pytest.raises(ValueError):
        msggan.split(tmp_path / "missing")


def test_gan_train_and_generate(tmp_path):
    write_corpus(tmp_path / "data", 6, 8, 2)
    cfg = {"depth": 2, "latent_dim": 8, "schedule": [8, 8], "batch_size": 4, "steps": 3, "seed": 5}
    first, last, ckpt = msggan.train_gan(tmp_path / "data", tmp_path / "gan", 1, cfg)
    assert (first, last) == (0, 3)
    assert msggan.generate(ckpt, 4, tmp_path / "synth", label=1) == 4
    assert len(list((tmp_path / "synth" / "1").glob("*.png"))) == 4
    with pytest.raises(msggan.ConfigError):
        msggan.train_gan(tmp_path / "data", tmp_path / "bad", 1, {"no_such_key": 1})


def test_classifier_and_matrix(tmp_path):
    write_corpus(tmp_path / "real", 10, 12, 3)
    write_corpus(tmp_path / "synth", 10, 12, 4, offset=15.0)
    cfg = {"widths": [4, 8, 8, 8], "input_size": 16, "epochs": 8, "batch_size": 8,
           "learning_rate": 0.01, "freeze_backbone": False}
    run = msggan.train_classifier(tmp_path / "real", tmp_path / "cls", cfg)
    assert len(run["epoch_loss"]) == 8
    row = msggan.evaluate(run["model"], tmp_path / "real", tmp_path / "eval")
    assert row["test_size"] == 20
    assert sum(row["confusion"].values()) == 20

    plan = {"widths": [4, 8, 8, 8], "input_size": 16, "epochs": 2, "batch_size": 8,
            "pretext_images": 16, "pretext_epochs": 1}
    a = msggan.experiment_matrix(tmp_path / "real", tmp_path / "synth", tmp_path / "m1", plan, [0])
    b = msggan.experiment_matrix(tmp_path / "real", tmp_path / "synth", tmp_path / "m2", plan, [0])
    assert [r["scenario"] for r in a["rows"]][0] == "Real/Real"
    assert len(a["rows"]) == 4
    assert a == b
