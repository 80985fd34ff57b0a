from __future__ import annotations

import json
from dataclasses import replace

import numpy as np
import pytest
import torch

from gistkit.deepcluster import (
    ClusterModel,
    EncoderConfig,
    TrainConfig,
    TrainingDivergedError,
    ari,
    lambda_sweep,
    select_k,
    train,
)

ENC = EncoderConfig(seq_len=8, n_features=3, kernel_sizes=(3, 3), filters=(8, 8), hidden=8, latent_dim=4, dropout=0.0)
FAST = TrainConfig(pretrain_epochs=15, epochs=4, batch_size=32, restarts=5, lr=5e-3)


def planted(n_modes: int, per_mode: int = 60, seed: int = 0):
    """Sequences whose modes differ by level and temporal shape."""
    rng = np.random.default_rng(seed)
    t = np.linspace(0, 2 * np.pi, 8)
    shapes = [
        np.stack([np.full(8, 1.5), np.sin(t), np.zeros(8)], axis=1),
        np.stack([np.full(8, -1.5), -np.sin(t), np.ones(8)], axis=1),
        np.stack([np.cos(t), np.full(8, 1.5), -np.ones(8)], axis=1),
    ]
    X, y = [], []
    for m in range(n_modes):
        X.append(shapes[m] + rng.normal(scale=0.15, size=(per_mode, 8, 3)))
        y += [m] * per_mode
    return np.concatenate(X).astype(np.float32), np.array(y)


def test_k_larger_than_n():
    X, _ = planted(1, per_mode=3)
    with pytest.raises(ValueError):
        train(X, ENC, replace(FAST, k=4))
    with pytest.raises(ValueError):
        train(X, ENC, FAST)  # k missing


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lam=1.5)
    with pytest.raises(ValueError):
        TrainConfig(k=0)


def test_divergence_reported():
    X, _ = planted(2, per_mode=10)
    X[0, 0, 0] = np.inf
    with pytest.raises(TrainingDivergedError) as info:
        train(X, ENC, replace(FAST, k=2))
    assert info.value.epoch == 0


def test_deterministic():
    X, _ = planted(2, per_mode=30)
    a = train(X, ENC, replace(FAST, k=2, pretrain_epochs=3, epochs=2))
    b = train(X, ENC, replace(FAST, k=2, pretrain_epochs=3, epochs=2))
    assert np.array_equal(a.labels, b.labels)
    assert all(torch.equal(a.state[n], b.state[n]) for n in a.state)


def test_loss_decreases_and_recovers_modes():
    X, y = planted(2)
    m = train(X, ENC, replace(FAST, k=2))
    pre = [h["loss"] for h in m.history if h["phase"] == "pretrain"]
    assert pre[-1] < pre[0]
    assert ari(m.labels, y) == 1.0
    assert m.silhouette > 0.5
    assert np.array_equal(m.predict(X), m.labels)


def test_checkpoint_round_trip(tmp_path):
    X, _ = planted(2, per_mode=20)
    m = train(X, ENC, replace(FAST, k=2, pretrain_epochs=2, epochs=1), feature_names=("a", "b", "c"))
    m.stability_ari = 0.9
    path = tmp_path / "model.json"
    m.save(path)
    back = ClusterModel.load(path)
    assert all(torch.equal(m.state[n], back.state[n]) for n in m.state)
    assert np.array_equal(back.centroids, m.centroids) and np.array_equal(back.labels, m.labels)
    assert back.enc_cfg == m.enc_cfg and back.train_cfg == m.train_cfg
    assert back.feature_names == ("a", "b", "c") and back.stability_ari == 0.9
    assert np.array_equal(back.encode(X), m.encode(X))
    back.save(tmp_path / "again.json")
    assert (tmp_path / "again.json").read_bytes() == path.read_bytes()
    with pytest.raises(ValueError):
        ClusterModel.from_json({**json.loads(path.read_text()), "format": "other"})


def test_select_k_two_modes():
    X, y = planted(2)
    sel = select_k(X, ENC, FAST, k_range=range(2, 5))
    assert sel.k == 2 and not sel.low_confidence
    assert sel.stability[0] >= 0.8
    assert all(a >= b - 1e-9 for a, b in zip(sel.inertia_ratio, sel.inertia_ratio[1:]))
    assert ari(sel.models[2][0].labels, y) == 1.0
    assert set(sel.to_json()) >= {"k", "low_confidence", "inertia_ratio", "stability_ari"}


def test_select_k_structureless_is_flagged():
    X = np.random.default_rng(3).normal(size=(150, 8, 3)).astype(np.float32)
    sel = select_k(X, ENC, replace(FAST, pretrain_epochs=3, epochs=2), k_range=range(2, 6))
    assert sel.low_confidence
    assert sel.k in sel.k_values


def test_lambda_sweep():
    X, _ = planted(2, per_mode=40)
    sw = lambda_sweep(X, ENC, replace(FAST, k=2, pretrain_epochs=5, epochs=2))
    assert sw.lam in (0.3, 0.5, 0.7)
    assert [row["lambda"] for row in sw.table] == [0.3, 0.5, 0.7]
    picked = next(r for r in sw.table if r["lambda"] == sw.lam)
    assert picked["admissible"] or not any(r["admissible"] for r in sw.table)
    assert sw.model.train_cfg.lam == sw.lam
