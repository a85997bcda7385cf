import numpy as np
import pytest

from facetouch.errors import DegenerateLabels
from facetouch.forest import ForestModel, ForestParams, fit_forest, \
    select_features


def informative_data(n=400, d=12, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    y = (X[:, 3] > 0).astype(int)
    return X, y


def test_informative_feature_wins():
    X, y = informative_data()
    model = fit_forest(X, y, ForestParams(n_trees=25), seed=1)
    assert model.importances.argmax() == 3
    assert model.importances[3] > model.importances.max(
        where=np.arange(12) != 3, initial=0)


def test_importances_sum_to_one():
    X, y = informative_data(seed=2)
    model = fit_forest(X, y, ForestParams(n_trees=10), seed=2)
    assert model.importances.sum() == pytest.approx(1.0, abs=1e-9)
    assert (model.importances >= 0).all()


def test_single_class_rejected():
    X = np.zeros((10, 3))
    with pytest.raises(DegenerateLabels):
        fit_forest(X, np.ones(10), seed=0)


def test_deterministic_given_seed():
    X, y = informative_data(seed=3)
    a = fit_forest(X, y, ForestParams(n_trees=8), seed=7)
    b = fit_forest(X, y, ForestParams(n_trees=8), seed=7)
    assert np.array_equal(a.importances, b.importances)
    for ta, tb in zip(a.trees, b.trees):
        assert np.array_equal(ta.feature, tb.feature)
        assert np.array_equal(ta.threshold, tb.threshold)


def test_train_fits_but_oob_is_chance_on_noise():
    # pure-noise features, balanced random labels: the forest memorizes the
    # training sample while the out-of-bag estimate stays near 0.5
    train_accs = []
    oobs = []
    for seed in range(3):
        rng = np.random.default_rng(100 + seed)
        X = rng.standard_normal((300, 8))
        y = rng.integers(0, 2, 300)
        model = fit_forest(X, y, ForestParams(n_trees=30), seed=seed)
        train_accs.append(np.mean(model.predict(X) == y))
        oobs.append(model.oob_accuracy)
    assert np.mean(train_accs) > 0.6
    assert abs(np.mean(oobs) - 0.5) < 0.08


def test_oob_beats_chance_on_signal():
    X, y = informative_data(n=600, seed=5)
    model = fit_forest(X, y, ForestParams(n_trees=40), seed=4)
    assert model.oob_accuracy > 0.85
    assert model.oob_coverage > 0.95


def test_multiclass_support():
    rng = np.random.default_rng(6)
    X = rng.standard_normal((300, 6))
    y = np.digitize(X[:, 1], [-0.5, 0.5])  # 3 classes
    model = fit_forest(X, y, ForestParams(n_trees=20), seed=3)
    assert set(model.classes) == {0, 1, 2}
    assert np.mean(model.predict(X) == y) > 0.8


# --- selection rule -------------------------------------------------------------

def forest_with_importances(imp):
    return ForestModel(trees=[], params=ForestParams(), seed=0,
                       classes=np.array([0, 1]),
                       importances=np.asarray(imp, dtype=float))


def test_select_above_mean():
    sel = select_features(forest_with_importances([0.7, 0.2, 0.1]))
    assert sel.tolist() == [0]


def test_select_uniform_selects_all_small_d():
    sel = select_features(forest_with_importances([0.25] * 4))
    assert sel.tolist() == [0, 1, 2, 3]


def test_select_uniform_large_d_top_ten_by_index():
    sel = select_features(forest_with_importances([1 / 16] * 16))
    assert sel.tolist() == list(range(10))


def test_select_zero_split_forest_fallback():
    sel = select_features(forest_with_importances(np.zeros(14)))
    assert sel.tolist() == list(range(10))
