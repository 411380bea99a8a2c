import hashlib

import numpy as np
import pytest

from dynmtl.benchsynth import TaskSuiteSpec, generate
from dynmtl.controller import EdgeHypernet, Preference, WeightHypernet, edge_forward, predict
from dynmtl.numkernel import Rng, forward_backward
from dynmtl.numkernel import autodiff as ad
from dynmtl.objectives import TaskAffinity, gumbel_softmax, task_loss
from dynmtl.searchspace import forward_hard, forward_soft
from dynmtl.trainer import (AnchorConfig, TrainConfig, edge_objective, learning_rate,
                            per_task_mse, sample_preference, temperature, train_anchor,
                            train_edge, train_weight, weight_objective)

SUITE = TaskSuiteSpec(n_train=512, n_val=32, n_test=128)
ANCHOR = AnchorConfig(width=8, n_layers=2, pretrain_steps=60, steps=60, batch_size=64)


def _digest(arrays: dict) -> str:
    h = hashlib.sha256()
    for k in sorted(arrays):
        h.update(k.encode())
        h.update(np.ascontiguousarray(arrays[k]).tobytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def small():
    data = generate(SUITE)
    reports: dict = {}
    anchor = train_anchor(ANCHOR, data, Rng(0).child("anchor"), reports)
    aff = TaskAffinity(np.array([[1.0, 0.6, 0.1], [0.6, 1.0, 0.1], [0.1, 0.1, 1.0]]), K=0)
    return data, anchor, aff, reports


def test_temperature_schedule():
    cfg = TrainConfig(zeta_interval=300)
    assert temperature(0, cfg) == 5.0 and temperature(299, cfg) == 5.0
    assert temperature(600, cfg) == pytest.approx(4.7045, abs=1e-12)
    scaled = TrainConfig(edge_steps=3000)
    assert scaled.zeta_interval == 30
    assert temperature(3000, scaled) == pytest.approx(5.0 * 0.97 ** 100, rel=1e-12)


def test_learning_rate_milestones():
    assert learning_rate(0, 3000, 1e-3) == 1e-3
    assert learning_rate(1399, 3000, 1e-3) == 1e-3
    assert learning_rate(1400, 3000, 1e-3) == pytest.approx(3e-4)
    assert learning_rate(2800, 3000, 1e-3) == pytest.approx(9e-5)


def test_sample_preference_distribution():
    eta = np.full(3, 0.2)
    prefs = [sample_preference(Rng(4).child(k), eta) for k in range(100000)]
    assert all(abs(sum(p.r) - 1) <= 1e-9 for p in prefs[:1000])
    assert abs(np.mean([p.c for p in prefs]) - 0.5) <= 0.005


def test_anchor_streams_improve_and_freeze(small):
    data, anchor, _, reports = small
    for name, rows in reports.items():
        losses = [l for _, l in rows]
        assert np.mean(losses[-10:]) < np.mean(losses[:10]), name
    x = data.split("val")[0]
    tree = predict(EdgeHypernet(3, 2, Rng(0)), None, anchor, Preference((1, 0, 0), 0))[0]
    assert forward_hard(anchor, tree, x).tobytes() == forward_hard(anchor, tree, x).tobytes()


def test_anchor_streams_follow_task_order(small):
    data, anchor, _, _ = small
    order = [1, 2, 0]
    permuted = train_anchor(ANCHOR, data.permuted(order), Rng(0).child("anchor"))
    for a, b in zip(anchor.arrays().values(), permuted.arrays().values()):
        assert np.array_equal(a[order], b)
    assert permuted.task_names == ["task1", "task2", "task0"]


def test_edge_stage(small):
    data, anchor, aff, _ = small
    before = _digest(anchor.arrays())
    cfg = TrainConfig(edge_steps=400, weight_steps=10, batch_size=32)
    h, report = train_edge(cfg, anchor, aff, data, Rng(1))
    assert _digest(anchor.arrays()) == before
    total = report.column("task_loss") + report.column("omega")
    k = len(total) // 10
    assert total[-k:].mean() < total[:k].mean()
    assert len(report.records) == 400


def test_zero_lambdas_reduce_to_task_loss(small):
    data, anchor, aff, _ = small
    cfg = TrainConfig(lambda_active=0.0, lambda_inactive=0.0)
    h = EdgeHypernet(3, 2, Rng(2), diag_bias=1.0, head_scale=0.5)
    pref = Preference((0.5, 0.3, 0.2), 0.8)
    xb, yb = data.split("train")[0][:16], data.split("train")[1][:, :16]
    noise = Rng(3).normal((2, 3, 3))
    _, full = forward_backward(lambda p: edge_objective(
        h, anchor, aff, pref, xb, yb, noise, 1.5, cfg.loss_weights(3), 0.2).total, h.params)
    _, plain = forward_backward(lambda p: task_loss(pref, np.ones(3), per_task_mse(
        forward_soft(anchor, gumbel_softmax(edge_forward(h, pref), 1.5, noise=noise), xb), yb)),
        h.params)
    names = sorted(h.params)
    for name in names[:10]:
        assert np.array_equal(full[name], plain[name])


def test_weight_stage(small):
    data, anchor, aff, _ = small
    cfg = TrainConfig(edge_steps=100, weight_steps=150, batch_size=32)
    h, _ = train_edge(cfg, anchor, aff, data, Rng(5))
    edge_before = _digest(h.numpy_params())
    anchor_before = _digest(anchor.arrays())

    hbar0 = WeightHypernet.for_anchor(anchor, Rng(6))
    pref = Preference((0.3, 0.3, 0.4), 0.5)
    alpha = edge_forward(h, pref).data
    noise = Rng(7).normal(alpha.shape)
    xb, yb = data.split("train")[0][:32], data.split("train")[1][:, :32]
    adapted0 = weight_objective(hbar0, anchor, alpha, pref, xb, yb, noise, 1.0, np.ones(3)).item()
    plain = task_loss(pref, np.ones(3), per_task_mse(
        forward_soft(anchor, gumbel_softmax(alpha, 1.0, noise=noise), xb), yb)).item()
    assert adapted0 == plain

    hbar, report = train_weight(cfg, anchor, h, data, Rng(6))
    assert _digest(h.numpy_params()) == edge_before
    assert _digest(anchor.arrays()) == anchor_before
    assert report.records[0]["zeta"] == temperature(cfg.edge_steps, cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(edge_steps=0)
    with pytest.raises(ValueError):
        TrainConfig(eta=0.0)
    with pytest.raises(ValueError):
        TrainConfig(w=[1.0, 2.0, 3.0]).loss_weights(2)


def test_trained_weight_hypernet_helps_on_average(trained_run):
    from dynmtl.metricsoracle import evaluate_preference, seeded_preferences
    cfg, _, bundle, _ = trained_run
    prefs = [Preference(r, c) for r in seeded_preferences(3, 20, 0.2, 17) for c in (0.0, 1.0)]
    mean = lambda w: np.mean([task_loss(p, np.ones(3), evaluate_preference(bundle, p, w).losses)
                              for p in prefs])
    assert mean(True) <= mean(False)
