import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from livenesskit import datakit as dk, models, tensorcore as tc, trainer as tr
from livenesskit.errors import TrainingDiverged


def tiny_net(size=8, seed=0):
    cfg = models.ArchConfig(widths=(2, 3), convs_per_block=2, dense_units=4)
    spec = models.spec_from_config(models.LIVENESSNET, cfg, (size, size, 3), 0.25, 0.5, 1e-5)
    return models.Network(spec, seed=seed)


def tiny_data(n_subjects=4, frames=4, size=8, seed=0):
    synth = dk.synth_generate(n_subjects, frames, dk.DOMAIN_A, seed=seed, with_quality=False)
    x, y = synth.arrays(synth.records)
    from livenesskit.imgproc import resize
    return np.stack([resize(im, size) for im in x]), y


# ---- loss ------------------------------------------------------------------

def test_smoothed_targets_reference():
    np.testing.assert_allclose(tr.smoothed_targets(np.array([0]), 0.1), [[0.95, 0.05]])


def test_loss_perfect_and_uniform():
    assert float(tr.smoothed_cross_entropy(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([0, 1]), 0.0).data) == 0.0
    for alpha in (0.0, 0.1, 0.3):
        loss = tr.smoothed_cross_entropy(np.full((3, 2), 0.5), np.array([0, 1, 1]), alpha)
        assert float(loss.data) == pytest.approx(math.log(2))


def test_loss_log_clamp():
    loss = tr.smoothed_cross_entropy(np.array([[0.0, 1.0]]), np.array([0]), 0.1)
    assert math.isfinite(float(loss.data))
    assert float(loss.data) == pytest.approx(-0.95 * math.log(1e-12))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.floats(0, 0.5), st.integers(0, 10_000))
def test_loss_matches_formula(n, alpha, seed):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet([1, 1], n)
    y = rng.integers(0, 2, n)
    expect = 0.0
    for i in range(n):
        for k in range(2):
            t = (1 - alpha) * (y[i] == k) + alpha / 2
            expect -= t * math.log(max(p[i, k], 1e-12))
    assert float(tr.smoothed_cross_entropy(p, y, alpha).data) == pytest.approx(expect / n, rel=1e-12)


def test_l2_penalty_exact_and_zero():
    params = {"a": tc.Tensor(np.array([1.0, 2.0])), "b": tc.Tensor(np.array([[3.0]]))}
    assert tr.l2_penalty(params, 1e-5) == pytest.approx(1e-5 * 14)
    assert tr.l2_penalty(params, 0.0) == 0.0


def test_l2_zero_reproduces_unregularized_loss():
    net = tiny_net()
    x, y = tiny_data()
    cfg = tr.TrainConfig(l2=0.0)
    loss, _ = tr.evaluate_loss(net, x, y, cfg)
    probs = net.forward(tr.to_input(x), training=False)
    assert loss == float(tr.smoothed_cross_entropy(probs, y, 0.1).data)
    reg, _ = tr.evaluate_loss(net, x, y, tr.TrainConfig(l2=1e-3))
    assert reg - loss == pytest.approx(tr.l2_penalty(net.params, 1e-3), rel=1e-5)


# ---- Adam ------------------------------------------------------------------

def adam_oracle(w, grads, lr, b1=0.9, b2=0.999, eps=1e-7):
    m = v = 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w = w - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        out.append(w)
    return out


def test_adam_matches_scalar_oracle():
    grads = [0.3, -1.2, 2.0, 0.0, 0.7]
    w = {"w": np.array([0.5])}
    state = tr.OptimizerState()
    got = []
    for g in grads:
        tr.adam_step(w, {"w": np.array([g])}, state, 1e-2)
        got.append(float(w["w"][0]))
    np.testing.assert_allclose(got, adam_oracle(0.5, grads, 1e-2), rtol=0, atol=1e-15)
    assert state.step == 5


def test_adam_zero_grad_and_first_step():
    w = {"w": np.array([1.0, -2.0])}
    tr.adam_step(w, {"w": np.zeros(2)}, tr.OptimizerState(), 1e-3)
    assert w["w"].tolist() == [1.0, -2.0]
    w = {"w": np.zeros(3)}
    tr.adam_step(w, {"w": np.ones(3)}, tr.OptimizerState(), 1e-3)
    np.testing.assert_allclose(w["w"], -1e-3 / (1 + 1e-7))


def test_adam_descends_quadratic():
    w = {"w": np.array([3.0])}
    state = tr.OptimizerState()
    losses = [float(w["w"][0] ** 2)]
    for _ in range(3):
        tr.adam_step(w, {"w": 2 * w["w"]}, state, 1e-2)
        losses.append(float(w["w"][0] ** 2))
    assert all(a > b for a, b in zip(losses, losses[1:]))


def test_adam_l2_is_coupled():
    w1, w2 = {"w": np.array([2.0])}, {"w": np.array([2.0])}
    tr.adam_step(w1, {"w": np.array([0.5])}, tr.OptimizerState(), 1e-2, l2=0.1)
    tr.adam_step(w2, {"w": np.array([0.5 + 2 * 0.1 * 2.0])}, tr.OptimizerState(), 1e-2)
    assert w1["w"][0] == w2["w"][0]


def test_adam_rejects_nonfinite_and_shape():
    with pytest.raises(TrainingDiverged):
        tr.adam_step({"w": np.ones(1)}, {"w": np.array([np.nan])}, tr.OptimizerState(), 1e-3)
    with pytest.raises(tc.ShapeError):
        tr.adam_step({"w": np.ones(2)}, {"w": np.ones(3)}, tr.OptimizerState(), 1e-3)


# ---- schedules -------------------------------------------------------------

def test_plateau_examples():
    assert tr.reduce_lr_on_plateau([5, 4, 3, 2, 1], 1e-6) == 1e-6
    assert tr.reduce_lr_on_plateau([1.0] * 8, 1e-6) == 5e-7
    assert tr.reduce_lr_on_plateau([1.0] * 7, 1e-6) == 1e-6
    assert tr.reduce_lr_on_plateau([1.0] * 8, 1.5e-9) == 1e-9


def test_plateau_min_delta():
    # improvements below 1e-4 do not count
    assert tr.reduce_lr_on_plateau([1.0] + [1.0 - 1e-5 * i for i in range(1, 8)], 1e-3) == 5e-4


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.5, 1.0), min_size=1, max_size=40), st.floats(1e-9, 1e-2))
def test_scheduler_nonincreasing_and_floored(history, lr):
    sched = tr.PlateauScheduler(lr)
    seq = [sched.step(v) for v in [1.0] + [max(history)] * len(history)]
    assert all(a >= b for a, b in zip(seq, seq[1:]))
    assert min(seq) >= 1e-9


def test_scheduler_waits_again_after_reduction():
    sched = tr.PlateauScheduler(1.0)
    seq = [sched.step(v) for v in [1.0] * 16]
    assert seq[7] == 0.5 and seq[8:14] == [0.5] * 6 and seq[14] == 0.25


def test_early_stop_examples():
    assert not any(tr.early_stop(list(range(20, 20 - n, -1)), 15) for n in range(1, 21))
    hist = [0.1] + [0.5] * 15
    assert not tr.early_stop(hist[:15], 15)
    assert tr.early_stop(hist, 15)


def test_config_validation():
    with pytest.raises(ValueError):
        tr.TrainConfig(lr=-1)
    with pytest.raises(ValueError):
        tr.TrainConfig(early_stop_patience=0)
    with pytest.raises(ValueError):
        tr.TrainConfig(lr=1e-10, min_lr=1e-9)
    assert tr.TrainConfig().with_overrides(lr=1e-3, batch_size=None).lr == 1e-3


def test_reference_configs():
    assert tr.TABLE6[(models.LIVENESSNET, "Our Dataset")] == (1e-6, 0.2)
    assert len(tr.TABLE6) == 20
    assert tr.TABLE10[models.LIVENESSNET].batch_size == 16
    cfg = tr.table6_config(models.ATTACKNET_V1, "CSMAD")
    assert cfg.lr == 5e-9 and cfg.min_lr <= cfg.lr
    assert tr.tiny_lr_warning(cfg) and tr.tiny_lr_warning(tr.TrainConfig(lr=1e-3)) is None


# ---- loop ------------------------------------------------------------------

def _run(cfg, seed=0):
    net = tiny_net(seed=seed)
    x, y = tiny_data()
    res = tr.train_loop(net, (x[::2], y[::2]), (x[1::2], y[1::2]), cfg)
    return net, res


def test_lr_zero_leaves_params_bit_identical():
    net = tiny_net()
    before = net.snapshot()
    x, y = tiny_data()
    tr.train_loop(net, (x, y), (x, y), tr.TrainConfig(lr=0.0, max_epochs=2, batch_size=4))
    after = net.weights()
    trainable = [n for n in before if not n.endswith(("moving_mean", "moving_var"))]
    assert all(np.array_equal(before[n], after[n]) for n in trainable)


def test_train_loop_deterministic_and_restores_best():
    cfg = tr.TrainConfig(lr=1e-2, max_epochs=4, batch_size=4)
    net_a, a = _run(cfg)
    net_b, b = _run(cfg)
    assert tr.epoch_logs_csv(a.logs) == tr.epoch_logs_csv(b.logs)
    assert all(np.array_equal(v, net_b.weights()[k]) for k, v in net_a.weights().items())
    assert [e.epoch for e in a.logs] == list(range(1, len(a.logs) + 1))
    assert a.best_val_loss == min(e.val_loss for e in a.logs)
    assert sum(e.is_best for e in a.logs if e.epoch == a.best_epoch) == 1
    x, y = tiny_data()
    loss, acc = tr.evaluate_loss(net_a, x[1::2], y[1::2], cfg)
    assert loss == a.best_val_loss and acc == a.best_val_acc


def test_early_stopping_triggers():
    net, res = _run(tr.TrainConfig(lr=0.0, max_epochs=10, batch_size=4, early_stop_patience=2))
    # BN running statistics still move at lr=0, so the best epoch is not fixed in advance
    assert res.stopped_early and len(res.logs) - res.best_epoch == 2


def test_epoch_csv_format():
    logs = [tr.EpochLog(1, 0.5, 0.75, 0.6, 0.5, 1e-3, 12.3, True)]
    text = tr.epoch_logs_csv(logs)
    assert text.splitlines() == [",".join(tr.LOG_COLUMNS), "1,0.5,0.75,0.6,0.5,0.001,1"]
    assert tr.epoch_logs_csv(logs, with_time=True).splitlines()[1].endswith(",12.300")


def test_empty_splits_rejected():
    x, y = tiny_data()
    with pytest.raises(ValueError):
        tr.train_loop(tiny_net(), (x[:0], y[:0]), (x, y), tr.TrainConfig())
    with pytest.raises(ValueError):
        tr.train_loop(tiny_net(), (x, y), (x[:0], y[:0]), tr.TrainConfig())


def test_augment_fn_only_touches_training_batches():
    seen = []

    def spy(batch, rng):
        seen.append(batch.shape[0])
        return batch

    net = tiny_net()
    x, y = tiny_data()
    tr.train_loop(net, (x[:8], y[:8]), (x[8:], y[8:]), tr.TrainConfig(lr=1e-3, max_epochs=1, batch_size=4),
                  augment_fn=spy)
    assert seen == [4, 4]
