import json

import numpy as np
import pytest
from helpers import make_bank, make_synthetic_fr_set, tiny_config

from bpclip import train as tr
from bpclip.autograd import Tensor
from bpclip.data import load_manifest
from bpclip.errors import (ConfigurationError, InputError,
                           TrainingDivergedError)
from bpclip.model import QualityModel
from bpclip.train import (AdamW, TrainConfig, cosine_lr, evaluate,
                          load_checkpoint, mse_loss, save_checkpoint, train)


def test_cosine_schedule_endpoints_and_midpoint():
    lr = 1e-4
    assert cosine_lr(0, lr, 0.0, 50) == pytest.approx(lr, abs=1e-12)
    assert cosine_lr(50, lr, 0.0, 50) == pytest.approx(0.0, abs=1e-12)
    assert cosine_lr(25, lr, 0.0, 50) == pytest.approx(lr / 2, abs=1e-12)
    assert cosine_lr(25, lr, 2e-5, 50) == pytest.approx((lr + 2e-5) / 2, abs=1e-12)
    # closed form holds at every step of a long run
    for t in range(0, 200):
        expect = 0.0 + 0.5 * lr * (1 + np.cos(np.pi * t / 50))
        assert cosine_lr(t, lr, 0.0, 50) == pytest.approx(expect, abs=1e-12)


def test_mse_loss_examples_and_oracle():
    p = np.array([0.1, 0.4, 0.9])
    assert mse_loss(Tensor(p), p).item() == 0.0
    assert mse_loss(Tensor(p + 0.1), p).item() == pytest.approx(0.01, abs=1e-12)
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=5), rng.normal(size=5)
    expect = sum((x - y) ** 2 for x, y in zip(a, b)) / 5
    assert mse_loss(Tensor(a), b).item() == pytest.approx(expect, abs=1e-12)
    with pytest.raises(InputError):
        mse_loss(Tensor(a), b[:3])


def test_mse_loss_gradient():
    from bpclip.gradcheck import check_gradients
    rng = np.random.default_rng(1)
    pred = Tensor(rng.normal(size=6), requires_grad=True)
    target = rng.normal(size=6)
    report = check_gradients(lambda: mse_loss(pred, target), {"pred": pred})
    assert report.passed(1e-9), report


def test_adamw_minimizes_quadratic_and_decays():
    p = Tensor(np.array([5.0, -3.0]), requires_grad=True)
    opt = AdamW([("p", p)], lr=0.1, weight_decay=0.0)
    for _ in range(300):
        loss = mse_loss(p, np.zeros(2))
        opt.zero_grad()
        loss.backward()
        opt.step()
    assert np.all(np.abs(p.data) < 1e-3)
    # decoupled decay shrinks a parameter with zero gradient
    q = Tensor(np.array([1.0]), requires_grad=True)
    opt = AdamW([("q", q)], lr=0.5, weight_decay=0.1)
    q.grad = np.zeros(1)
    before = q.data.copy()
    opt.step()
    assert q.data[0] == pytest.approx(before[0] * (1 - 0.5 * 0.1))


@pytest.fixture(scope="module")
def fr_setup(tmp_path_factory):
    root = tmp_path_factory.mktemp("frset")
    manifest_path = make_synthetic_fr_set(root, n_refs=4, n_levels=4, size=32)
    manifest = load_manifest(manifest_path)
    return root, manifest


def small_model(**kw):
    cfg = tiny_config(mode="FR", input_size=(32, 32), **kw)
    return QualityModel(cfg, make_bank(d_text=cfg.d_text))


def short_config(**kw):
    defaults = dict(mode="FR", lr=1e-3, epochs=2, batch_size=8, seed=1,
                    crop=32, split_ratios=(2, 1, 1), t_max=50)
    defaults.update(kw)
    return TrainConfig(**defaults)


def test_train_smoke_and_artifacts(fr_setup, tmp_path, monkeypatch):
    root, manifest = fr_setup
    monkeypatch.setenv("BPCLIP_DATA_ROOT", str(root))
    model = small_model()
    result = train(short_config(), manifest, model, tmp_path / "run")
    assert (tmp_path / "run" / "train_log.jsonl").exists()
    assert result.last_checkpoint.exists()
    assert result.best_checkpoint is not None
    records = [json.loads(line) for line in
               (tmp_path / "run" / "train_log.jsonl").read_text().splitlines()]
    assert len(records) == 2
    assert {"epoch", "loss", "lr", "val_srcc", "val_plcc"} <= set(records[0])
    assert records[0]["lr"] == pytest.approx(1e-3)
    # reload and re-score deterministically
    reloaded = load_checkpoint(result.last_checkpoint, model.text_bank)
    report = evaluate(reloaded, manifest, crop=32)
    assert np.isfinite(report.srcc) and np.isfinite(report.plcc)


def test_frozen_norm_and_bank_byte_identical_after_training(fr_setup, tmp_path, monkeypatch):
    root, manifest = fr_setup
    monkeypatch.setenv("BPCLIP_DATA_ROOT", str(root))
    model = small_model()
    model.freeze_norm_layers()
    norm_before = {n: p.data.tobytes() for n, p in model.named_parameters()
                   if not p.requires_grad}
    stats_before = {n: b.tobytes() for n, b in model.named_buffers()}
    bank_before = model.text_bank.embeddings.tobytes()
    assert norm_before, "expected frozen norm parameters"
    train(short_config(epochs=1), manifest, model, tmp_path / "run")
    for name, p in model.named_parameters():
        if name in norm_before:
            assert p.data.tobytes() == norm_before[name]
    for name, b in model.named_buffers():
        assert b.tobytes() == stats_before[name]
    assert model.text_bank.embeddings.tobytes() == bank_before
    # and the trainable conv weights did change
    conv = dict(model.named_parameters())["backbone.stage1.conv.weight"]
    assert conv.requires_grad


def test_train_is_deterministic_for_fixed_seed(fr_setup, tmp_path, monkeypatch):
    root, manifest = fr_setup
    monkeypatch.setenv("BPCLIP_DATA_ROOT", str(root))
    logs = []
    for run in range(2):
        model = small_model()
        train(short_config(), manifest, model, tmp_path / f"run{run}")
        logs.append((tmp_path / f"run{run}" / "train_log.jsonl").read_bytes())
    assert logs[0] == logs[1]


def test_nonfinite_loss_aborts_with_checkpoint(fr_setup, tmp_path, monkeypatch):
    root, manifest = fr_setup
    monkeypatch.setenv("BPCLIP_DATA_ROOT", str(root))
    model = small_model()
    model.head.regress.fc2.bias.data[...] = np.nan
    with pytest.raises(TrainingDivergedError):
        train(short_config(), manifest, model, tmp_path / "run")
    assert (tmp_path / "run" / "checkpoint_last.bpta").exists()


def test_mode_mismatch_rejected(fr_setup, tmp_path):
    _, manifest = fr_setup
    model = QualityModel(tiny_config(mode="NR", input_size=(32, 32)), make_bank())
    with pytest.raises(ConfigurationError):
        train(TrainConfig(mode="NR", crop=32), manifest, model, tmp_path / "x")


def test_perfect_prediction_stub_gives_unit_correlations(fr_setup, monkeypatch):
    _, manifest = fr_setup
    from bpclip.data import normalize_mos
    normalized = normalize_mos(manifest)
    gt = np.asarray([e.mos for e in normalized.entries])
    monkeypatch.setattr(tr, "predict_scores", lambda *a, **k: gt.copy())
    model = small_model()
    report = tr.evaluate(model, normalized, crop=32)
    assert report.srcc == pytest.approx(1.0)
    assert report.plcc == pytest.approx(1.0)
    # affine-increasing transform keeps PLCC at 1
    monkeypatch.setattr(tr, "predict_scores", lambda *a, **k: 3.0 * gt + 0.5)
    report = tr.evaluate(model, normalized, crop=32)
    assert report.plcc == pytest.approx(1.0)


def test_checkpoint_round_trip_bitwise(tmp_path):
    model = small_model()
    save_checkpoint(model, tmp_path / "ck.bpta", {"step": 3})
    reloaded = load_checkpoint(tmp_path / "ck.bpta", model.text_bank)
    for (na, pa), (nb, pb) in zip(sorted(model.named_parameters()),
                                  sorted(reloaded.named_parameters())):
        assert na == nb and pa.data.tobytes() == pb.data.tobytes()
    sidecar = json.loads((tmp_path / "ck.json").read_text())
    assert sidecar["step"] == 3
    assert sidecar["model_config"]["mode"] == "FR"


def test_default_lr_follows_mode():
    assert TrainConfig(mode="FR").lr == pytest.approx(1e-4)
    assert TrainConfig(mode="NR").lr == pytest.approx(3e-5)
    with pytest.raises(ConfigurationError):
        TrainConfig(mode="FR", lr=-1.0)
