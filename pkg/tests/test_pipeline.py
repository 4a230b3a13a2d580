import dataclasses

import numpy as np
import pytest

from xclp.data_model import ABSTAIN, Cohort, split_synthetic
from xclp.pipeline import (
    ModelParams,
    RoundConfig,
    StratificationError,
    average_models,
    evaluate,
    init_model,
    train_fedavg_xclp,
    weighted_cross_entropy,
)
from xclp.protocol import XCLPConfig


def _loss(W, b, V, y, w):
    return weighted_cross_entropy(W, b, V, y, w)[0]


def test_gradient_finite_differences(rng):
    V = rng.standard_normal((7, 4))
    y = rng.integers(0, 3, size=7)
    w = rng.random(7)
    W = rng.standard_normal((4, 3))
    b = rng.standard_normal(3)
    _, gW, gb = weighted_cross_entropy(W, b, V, y, w)
    eps = 1e-6
    num = np.zeros_like(W)
    for idx in np.ndindex(W.shape):
        Wp, Wm = W.copy(), W.copy()
        Wp[idx] += eps
        Wm[idx] -= eps
        num[idx] = (_loss(Wp, b, V, y, w) - _loss(Wm, b, V, y, w)) / (2 * eps)
    assert np.linalg.norm(num - gW) / np.linalg.norm(gW) <= 1e-5


def test_zero_weight_zero_gradient(rng):
    V = rng.standard_normal((5, 3))
    W = rng.standard_normal((3, 2))
    b = np.zeros(2)
    _, gW, gb = weighted_cross_entropy(W, b, V, np.zeros(5, int), np.zeros(5))
    assert np.all(gW == 0) and np.all(gb == 0)


def test_unit_weight_equals_labeled(rng):
    V = rng.standard_normal((4, 3))
    W = rng.standard_normal((3, 2))
    b = rng.standard_normal(2)
    y = np.array([0, 1, 1, 0])
    full = weighted_cross_entropy(W, b, V, y, np.ones(4), batch_size=4)
    part = weighted_cross_entropy(W, b, V, y, np.array([1.0, 1.0, 0.0, 0.0]), batch_size=4)
    rest = weighted_cross_entropy(W, b, V, y, np.array([0.0, 0.0, 1.0, 1.0]), batch_size=4)
    assert np.allclose(full[1], part[1] + rest[1])


def test_average_fixed_point(rng):
    m = init_model(5, 3, "random_projection", 8, seed=1)
    avg = average_models([m.copy(), m.copy(), m.copy()])
    assert np.array_equal(avg.W, m.W) and np.array_equal(avg.b, m.b)
    assert avg.phi is m.phi


def test_evaluate_examples():
    X = np.arange(4.0)[:, None]
    y = np.array([0, 1, 0, 1])
    assert evaluate(lambda X: y, X, y).accuracy == 1.0
    assert evaluate(lambda X: np.zeros(4, int), X, y).accuracy == 0.5
    skew = np.array([0, 0, 0, 1])
    pred = lambda X: np.array([0, 0, 1, 1])  # noqa: E731
    r = evaluate(pred, X, skew)
    assert r.accuracy == 0.75
    assert r.balanced_accuracy == pytest.approx((2 / 3 + 1) / 2)


def test_model_serialization():
    m = init_model(3, 2, "random_relu", 5, seed=2)
    back = ModelParams.from_dict(m.to_dict())
    x = np.ones((2, 3))
    assert np.array_equal(back.logits(x), m.logits(x))


def _small_config(**kw):
    base = dict(T=4, tau=0.5, E=1, seed=3, xclp=XCLPConfig(L=128, k=3, hamming_protocol="plaintext_debug"))
    base.update(kw)
    return RoundConfig(**base)


@pytest.mark.parametrize("pl", ["xclp", "perclient_lp", "network", "none"])
def test_training_records_and_reproducible(pl):
    cohort = split_synthetic(4, 15, 5, 3, 0.2, seed=1, separation=4.0)
    X, y = cohort.stacked_features(), np.concatenate([c.true_labels for c in cohort.clients])
    r1 = train_fedavg_xclp(cohort, _small_config(), pl, test_set=(X, y))
    r2 = train_fedavg_xclp(cohort, _small_config(), pl, test_set=(X, y))
    assert len(r1.history) == 4
    assert r1.history == r2.history
    assert np.array_equal(r1.model.W, r2.model.W)


def test_none_ignores_unlabeled_rows():
    cohort = split_synthetic(3, 12, 4, 2, 0.25, seed=4, separation=4.0)
    moved = []
    for c in cohort.clients:
        f = np.array(c.features)
        f[c.labeled_count :] = -f[c.labeled_count :] + 5.0
        moved.append(c.with_features(f))
    other = Cohort(tuple(moved), cohort.class_count)
    a = train_fedavg_xclp(cohort, _small_config(), "none")
    b = train_fedavg_xclp(other, _small_config(), "none")
    assert np.array_equal(a.model.W, b.model.W)


def test_config_roundtrip_and_invariants():
    cfg = _small_config()
    assert RoundConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        dataclasses.replace(cfg, tau=0.0)
    with pytest.raises(ValueError):
        dataclasses.replace(cfg, E=0)


def test_stratification_needs_labels():
    cohort = split_synthetic(3, 10, 4, 2, 0.0, seed=0)
    with pytest.raises(StratificationError):
        train_fedavg_xclp(cohort, _small_config(), "xclp")


def test_pseudo_metrics_present():
    cohort = split_synthetic(3, 12, 4, 2, 0.25, seed=4, separation=4.0)
    rec = train_fedavg_xclp(cohort, _small_config(T=1, tau=1.0), "xclp").history[0]
    assert 0 <= rec["pseudo_label_accuracy"] <= 1
    assert 0 <= rec["mean_confidence"] <= 1
    assert rec["abstain_rate"] >= 0
    assert ABSTAIN == -1
