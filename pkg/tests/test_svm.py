import numpy as np
import pytest

from facetouch.errors import DimensionMismatch, SingleClass
from facetouch import svm as svm_mod
from facetouch.svm import (class_weights_balanced, kkt_violations,
                           predict_powerset, predict_svm, resolve_gamma,
                           train_powerset, train_svm)


def blobs(seed=0, n=60, sep=2.0, std=0.4):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal([-sep, -sep], std, (n, 2)),
                   rng.normal([sep, sep], std, (n, 2))])
    y = np.array([-1.0] * n + [1.0] * n)
    return X, y


def xor_clusters(seed=1, n=50, std=0.25):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal([sx, sy], std, (n, 2))
                   for sx in (-1, 1) for sy in (-1, 1)])
    y = np.array([1.0] * n + [-1.0] * n + [-1.0] * n + [1.0] * n)
    return X, y


def test_separable_blobs_perfect():
    X, y = blobs()
    model = train_svm(X, y, C=10.0, gamma=1.0)
    assert (model.predict(X) == y).all()


def test_xor_clusters():
    X, y = xor_clusters()
    model = train_svm(X, y, C=10.0, gamma=1.0)
    acc = np.mean(model.predict(X) == y)
    assert acc >= 0.95
    # oracle: the Bayes rule for equal isotropic clusters is the nearest
    # center; the learned boundary must agree with it on a grid
    centers = np.array([[-1, -1], [1, -1], [-1, 1], [1, 1]], dtype=float)
    center_labels = np.array([1, -1, -1, 1])
    gx, gy = np.meshgrid(np.linspace(-1.6, 1.6, 25),
                         np.linspace(-1.6, 1.6, 25))
    G = np.stack([gx.ravel(), gy.ravel()], axis=1)
    d = np.linalg.norm(G[:, None, :] - centers[None], axis=2)
    bayes = center_labels[d.argmin(axis=1)]
    interior = d.min(axis=1) < 0.75  # skip ambiguous midlines
    agree = np.mean(model.predict(G[interior]) == bayes[interior])
    assert agree >= 0.95


def test_single_class_rejected():
    X = np.zeros((5, 2))
    with pytest.raises(SingleClass):
        train_svm(X, np.ones(5), C=1.0, gamma=1.0)


def test_kkt_and_dual_constraints():
    for seed in (0, 1, 2):
        X, y = xor_clusters(seed=seed)
        model = train_svm(X, y, C=10.0, gamma=0.7)
        assert kkt_violations(model, X, y).max() <= 2e-3
        assert abs(model.dual_coef.sum()) < 1e-6
        assert len(model.dual_coef) >= 1


def test_prediction_sign_consistency():
    X, y = blobs(seed=3)
    model = train_svm(X, y, C=5.0, gamma=0.8)
    labels, f = predict_svm(model, X)
    assert (labels == np.where(f >= 0, 1, -1)).all()
    assert (labels == model.predict(X)).all()


def test_decision_tie_goes_positive():
    from facetouch.svm import SvmModel
    model = SvmModel(
        support_vectors=np.array([[0.0, 0.0], [2.0, 0.0]]),
        dual_coef=np.array([1.0, -1.0]), bias=0.0, gamma=1.0, C=1.0,
        class_weight={1: 1.0, -1: 1.0})
    mid = np.array([[1.0, 0.0]])
    f = model.decision_function(mid)
    assert f[0] == 0.0  # symmetric kernel values cancel exactly
    assert model.predict(mid)[0] == 1


def test_dimension_mismatch():
    X, y = blobs(seed=4)
    model = train_svm(X, y, C=1.0, gamma=1.0)
    with pytest.raises(DimensionMismatch):
        model.predict(np.zeros((3, 5)))


def test_gamma_scale_formula():
    X = np.array([[0.0, 1.0], [2.0, 3.0], [4.0, 5.0]])
    expected = 1.0 / (X.shape[1] * X.var())
    assert resolve_gamma("scale", X) == pytest.approx(expected)
    assert resolve_gamma(0.3, X) == 0.3


def test_class_weights_balanced_formula():
    y = np.array([1.0] * 3 + [-1.0] * 7)
    w = class_weights_balanced(y)
    assert w[1] == pytest.approx(10 / 6)
    assert w[-1] == pytest.approx(10 / 14)


def test_kernel_row_cache_path_agrees():
    X, y = xor_clusters(seed=5)
    full = train_svm(X, y, C=3.0, gamma=0.7)
    old = svm_mod.FULL_KERNEL_MAX_N
    svm_mod.FULL_KERNEL_MAX_N = 10  # force the LRU row-cache solver
    try:
        cached = train_svm(X, y, C=3.0, gamma=0.7)
    finally:
        svm_mod.FULL_KERNEL_MAX_N = old
    probe = np.random.default_rng(0).normal(size=(40, 2))
    assert np.allclose(full.decision_function(probe),
                       cached.decision_function(probe), atol=5e-3)
    assert (full.predict(X) == cached.predict(X)).mean() > 0.99


def test_warm_start_reaches_same_solution():
    X, y = xor_clusters(seed=6)
    from facetouch.svm import rbf_kernel_matrix
    K = rbf_kernel_matrix(X, 0.7)
    cold = train_svm(X, y, C=10.0, gamma=0.7, kernel_matrix=K)
    prev = train_svm(X, y, C=1.0, gamma=0.7, kernel_matrix=K)
    warm = train_svm(X, y, C=10.0, gamma=0.7, kernel_matrix=K,
                     warm_alpha=prev.train_alpha)
    probe = np.random.default_rng(1).normal(size=(50, 2))
    assert np.allclose(cold.decision_function(probe),
                       warm.decision_function(probe), atol=5e-3)


# --- Label Powerset -------------------------------------------------------------

def powerset_data(seed=0, n=240):
    """Three well-separated clusters mapped to three label combinations."""
    rng = np.random.default_rng(seed)
    combos = [(0, 0, 1, 0, 0), (0, 0, 0, 1, 0), (0, 0, 1, 0, 1)]
    centers = np.array([[0, 0], [4, 0], [0, 4]], dtype=float)
    parts = []
    labels = []
    for c, center in enumerate(centers):
        parts.append(rng.normal(center, 0.4, (n // 3, 2)))
        labels += [combos[c]] * (n // 3)
    return np.vstack(parts), np.array(labels, dtype=np.int8), combos


def test_powerset_enumerates_observed_combos():
    X, Y, combos = powerset_data()
    model = train_powerset(X, Y, C=10.0, gamma=1.0)
    assert model.combos == sorted(combos)
    assert len(model.models) == 3


def test_powerset_round_trip_encoding():
    X, Y, _ = powerset_data(seed=1)
    model = train_powerset(X, Y, C=10.0, gamma=1.0)
    ids = model.encode(Y)
    assert (model.decode(ids) == Y).all()


def test_powerset_predictions_closed_world():
    X, Y, _ = powerset_data(seed=2)
    model = train_powerset(X, Y, C=10.0, gamma=1.0)
    pred = predict_powerset(model, X + 0.05)
    observed = {tuple(row) for row in Y.tolist()}
    assert {tuple(row) for row in pred.tolist()} <= observed
    assert (pred == Y).all(axis=1).mean() > 0.97


def test_powerset_single_combination_constant():
    X = np.random.default_rng(3).normal(size=(20, 2))
    Y = np.tile(np.array([0, 0, 1, 0, 0], dtype=np.int8), (20, 1))
    model = train_powerset(X, Y, C=1.0, gamma=1.0)
    assert model.constant == (0, 0, 1, 0, 0)
    pred = predict_powerset(model, X)
    assert (pred == Y).all()
