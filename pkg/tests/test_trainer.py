import io
import json

import numpy as np
import pytest

from tempagg import dataio
from tempagg.errors import NumericError
from tempagg.model import ModelConfig, ModelParams, predict_proba
from tempagg.sampler import EPIC100_ANTICIPATION
from tempagg.trainer import (AdamState, EpochLog, TrainConfig, adam_step, fit, lr_at, minibatches,
                             train_epoch)


def test_lr_schedule_exact():
    cfg = TrainConfig()
    assert [lr_at(e, cfg) for e in (0, 9, 10, 19, 20)] == [1e-4, 1e-4, 1e-5, 1e-5, 1e-6]


def test_lr_rejects_negative_epoch():
    with pytest.raises(ValueError):
        lr_at(-1, TrainConfig())


def test_zero_gradient_leaves_params():
    p = {"w": np.array([1.0, -2.0])}
    adam_step(p, {"w": np.zeros(2)}, AdamState(), 0.1)
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])


def test_first_step_is_lr_times_sign():
    p = {"w": np.array([0.5, 0.5, 0.5])}
    adam_step(p, {"w": np.array([3.0, -0.01, 1e3])}, AdamState(), 1e-3)
    np.testing.assert_allclose(0.5 - p["w"], 1e-3 * np.array([1, -1, 1]), rtol=1e-5)


def test_adam_matches_textbook_loop():
    rng = np.random.default_rng(3)
    p = {"w": rng.standard_normal(4)}
    w, m, v = p["w"].copy(), np.zeros(4), np.zeros(4)
    state = AdamState()
    for t in range(1, 6):
        g = rng.standard_normal(4)
        adam_step(p, {"w": g}, state, 0.01)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w = w - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(p["w"], w, rtol=1e-12)


def test_adam_minimises_quadratic():
    p = {"w": np.array([3.0])}
    state = AdamState()
    for _ in range(2000):
        adam_step(p, {"w": 2 * p["w"]}, state, 0.05)
    assert abs(p["w"][0]) < 1e-2


def test_minibatches_cover_once():
    parts = minibatches(25, 10, np.random.default_rng(0))
    assert [len(b) for b in parts] == [10, 10, 5]
    assert sorted(np.concatenate(parts).tolist()) == list(range(25))


@pytest.fixture(scope="module")
def tiny_task():
    data = dataio.generate_synthetic(4, 24, fps=5, dim=12, seed=3)
    seqs = {s.video_id: s for s in data.sequences}
    batch, labels = dataio.assemble(data.annotations, seqs, EPIC100_ANTICIPATION)
    return batch, labels


def tiny_params(seed=0, dropout=0.3):
    cfg = ModelConfig(12, 4, EPIC100_ANTICIPATION.n_recent, EPIC100_ANTICIPATION.spanning_scales,
                      hidden=16, proj=16, dropout=dropout)
    return ModelParams.init(cfg, np.random.default_rng(seed))


def test_training_is_deterministic(tiny_task):
    batch, labels = tiny_task
    cfg = TrainConfig(epochs=2, lr0=1e-3, seed=5)
    runs = []
    for _ in range(2):
        params = tiny_params()
        hist = fit(params, batch, labels, cfg)
        runs.append(([h.loss for h in hist], params.state_dict()))
    assert runs[0][0] == runs[1][0]
    for k in runs[0][1]:
        assert np.array_equal(runs[0][1][k], runs[1][1][k])


def test_learns_separable_task(tiny_task):
    batch, labels = tiny_task
    params = tiny_params()
    cfg = TrainConfig(epochs=30, lr0=3e-3, decay_every=100, batch_size=8)
    hist = fit(params, batch, labels, cfg)
    assert hist[-1].loss < hist[0].loss
    acc = (predict_proba(params, batch).argmax(1) == labels).mean()
    assert acc > 0.95, hist[-1]


def test_epoch_log(tmp_path, tiny_task):
    batch, labels = tiny_task
    stream = io.StringIO()
    log = EpochLog(tmp_path / "log.jsonl", stream)
    fit(tiny_params(), batch, labels, TrainConfig(epochs=2), log=log)
    recs = [json.loads(x) for x in (tmp_path / "log.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in recs] == [0, 1]
    assert set(recs[0]) == {"epoch", "lr", "loss", "train_acc"}
    assert stream.getvalue().count("\n") == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_raises(tiny_task):
    batch, labels = tiny_task
    params = tiny_params()
    params["tab0.head.b"].data[0] = np.inf
    with pytest.raises(NumericError, match="epoch 0"):
        train_epoch(params, batch, labels, TrainConfig(), AdamState(), 0, np.random.default_rng(0))


def test_dropout_mismatch_rejected(tiny_task):
    batch, labels = tiny_task
    with pytest.raises(ValueError):
        fit(tiny_params(dropout=0.1), batch, labels, TrainConfig(epochs=1))


@pytest.mark.parametrize("kw", [dict(batch_size=0), dict(lr0=0.0), dict(dropout=1.0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)
