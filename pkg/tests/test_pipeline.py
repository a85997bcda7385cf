import json

import numpy as np
import pytest

from facetouch.errors import (CorruptModel, ManifestFingerprintMismatch,
                              TooFewGroups, VersionMismatch)
from facetouch.model import FeatureMatrix, build_manifest
from facetouch.pipeline import (PipelineSpec, fit, grid_search, load_model,
                                make_grouped_folds, predict, save_model,
                                task_rows)

SMALL_GRID = dict(c_grid=(1.0, 10.0), gamma_grid=("scale",),
                  pca_threshold_grid=(0.95,), latent_grid=(8,),
                  epochs_grid=(15,))


BINARY_SIGNAL_COLS = (4, 11, 30, 47, 58, 90, 101, 140)
REGION_SIGNAL_COLS = (6, 7)


def toy_matrix(n_videos=6, frames=40, seed=0, hog=False):
    """Separable feature matrix; the touch signal spans several correlated
    columns, like real distance features do."""
    rng = np.random.default_rng(seed)
    n = n_videos * frames
    base = rng.standard_normal((n, 170))
    labels = np.zeros((n, 6), dtype=np.int8)
    on = rng.random(n) < 0.45
    labels[:, 0] = on
    shared = np.where(on, 1.5, -1.5)
    for k, col in enumerate(BINARY_SIGNAL_COLS):
        base[:, col] = shared * (1.0 - 0.06 * k) \
            + 0.3 * rng.standard_normal(n)
    region_kind = rng.integers(0, 3, n)
    combos = np.array([(0, 0, 1, 0, 0), (0, 0, 0, 1, 0), (1, 0, 0, 0, 1)],
                      dtype=np.int8)
    labels[:, 1:6] = np.where(on[:, None], combos[region_kind], 0)
    base[:, REGION_SIGNAL_COLS[0]] = np.where(on, region_kind * 2.0, 0.0) \
        + 0.25 * rng.standard_normal(n)
    base[:, REGION_SIGNAL_COLS[1]] = \
        np.where(on, (region_kind == 2) * 3.0, 0.0) \
        + 0.25 * rng.standard_normal(n)
    rows = base
    if hog:
        rows = np.concatenate(
            [base, np.random.default_rng(seed + 1).standard_normal((n, 540))],
            axis=1)
    return FeatureMatrix(
        manifest=build_manifest(hog), rows=rows,
        group_ids=[f"v{i // frames}" for i in range(n)],
        frame_indices=np.array([i % frames for i in range(n)]),
        labels=labels)


def spec_for(variant="rf-pca-svm", task="binary", seed=0, **kw):
    return PipelineSpec(variant=variant, task=task, seed=seed,
                        **{**SMALL_GRID, **kw})


# --- folds ----------------------------------------------------------------------

def test_folds_equal_sizes():
    folds = make_grouped_folds([f"v{i}" for i in range(25)], k=5, seed=1)
    sizes = [len(folds.fold_videos(f)) for f in range(5)]
    assert sizes == [5] * 5


def test_folds_23_videos():
    folds = make_grouped_folds([f"v{i}" for i in range(23)], k=5, seed=2)
    sizes = sorted(len(folds.fold_videos(f)) for f in range(5))
    assert sizes == [4, 4, 5, 5, 5]


def test_folds_too_few():
    with pytest.raises(TooFewGroups):
        make_grouped_folds(["a", "b", "c"], k=5, seed=0)


def test_folds_deterministic_and_partition():
    ids = [f"v{i}" for i in range(9)]
    a = make_grouped_folds(ids, k=3, seed=5)
    b = make_grouped_folds(ids, k=3, seed=5)
    assert a.assignment == b.assignment
    assert sorted(a.assignment) == sorted(ids)


# --- grid search -----------------------------------------------------------------

def test_grid_table_size_and_tie_rule():
    spec = PipelineSpec(variant="rf-pca-svm", task="binary", seed=0)
    assert len(spec.grid()) == 3 * 4 * 3
    spec_ae = PipelineSpec(variant="autoenc-svm-1", task="binary", seed=0)
    assert len(spec_ae.grid()) == 3 * 2 * 4 * 3
    # enumeration order: first key outermost
    g = spec.grid()
    assert g[0] == {"pca_threshold": 0.90, "C": 0.1, "gamma": "scale"}
    assert g[1] == {"pca_threshold": 0.90, "C": 0.1, "gamma": 0.01}


def test_grid_search_scores_and_best():
    matrix = toy_matrix()
    spec = spec_for()
    result = grid_search(spec, matrix)
    assert len(result["table"]) == len(spec.grid())
    assert result["best_score"] >= 0.9
    assert result["best"] in spec.grid()


def test_grid_search_tie_prefers_enumeration_order():
    matrix = toy_matrix(seed=3)
    spec = spec_for(c_grid=(10.0, 10.0))  # duplicate candidate, equal score
    result = grid_search(spec, matrix)
    scores = [row["mean_score"] for row in result["table"]]
    if scores[0] == scores[1]:
        assert result["best"] == result["table"][0]["params"]


def test_no_leakage_fold_statistics():
    matrix = toy_matrix(seed=4)
    spec = spec_for()
    folds = make_grouped_folds(matrix.group_ids, k=3, seed=1)
    base = grid_search(spec, matrix, folds=folds, collect_fold_stats=True)

    # perturb the feature rows of fold 0's validation videos
    val_videos = set(folds.fold_videos(0))
    perturbed = matrix.subset(np.ones(len(matrix), dtype=bool))
    mask = np.array([g in val_videos for g in matrix.group_ids])
    perturbed.rows[mask] += 123.456
    after = grid_search(spec, perturbed, folds=folds,
                        collect_fold_stats=True)
    assert base["fold_stats"][0]["digest"] == after["fold_stats"][0]["digest"]
    # other folds train on those rows, so their stats must change
    assert base["fold_stats"][1]["digest"] != after["fold_stats"][1]["digest"]


def test_augmentation_applies_to_training_portion_only():
    matrix = toy_matrix(seed=5)
    spec = spec_for()
    folds = make_grouped_folds(matrix.group_ids, k=3, seed=2)
    result = grid_search(spec, matrix, folds=folds, collect_fold_stats=True)
    for stat in result["fold_stats"]:
        assert stat["n_train_fitted"] == 2 * stat["n_train"]
    spec_noaug = spec_for(augment=False)
    result2 = grid_search(spec_noaug, matrix, folds=folds,
                          collect_fold_stats=True)
    for stat in result2["fold_stats"]:
        assert stat["n_train_fitted"] == stat["n_train"]


# --- fit / predict ---------------------------------------------------------------

def test_fit_predict_binary_all_variants():
    matrix = toy_matrix(seed=6)
    for variant in ("rf-pca-svm", "autoenc-svm-1"):
        spec = spec_for(variant=variant)
        model = fit(spec, matrix,
                    hyperparams={"pca_threshold": 0.95, "C": 10.0,
                                 "gamma": "scale"}
                    if variant == "rf-pca-svm"
                    else {"latent": 8, "epochs": 15, "C": 10.0,
                          "gamma": "scale"})
        pred = predict(model, matrix)
        labeled = matrix.labels[:, 0] == 1
        assert np.mean(pred == labeled) > 0.9


def test_fit_hog_variant_requires_hog_columns():
    matrix = toy_matrix(hog=False)
    spec = spec_for(variant="autoenc-svm-2")
    with pytest.raises(ManifestFingerprintMismatch):
        fit(spec, matrix, hyperparams={"latent": 8, "epochs": 5, "C": 1.0,
                                       "gamma": "scale"})


def test_fit_regions_trains_on_head_rows_only():
    matrix = toy_matrix(seed=7)
    spec = spec_for(task="regions")
    work = task_rows(spec, matrix)
    assert (work.labels[:, 0] == 1).all()
    model = fit(spec, matrix, hyperparams={"pca_threshold": 0.95, "C": 10.0,
                                           "gamma": "scale"})
    on = matrix.subset(matrix.labels[:, 0] == 1)
    pred = predict(model, on)
    assert pred.shape == (len(on), 5)
    agree = (pred == on.labels[:, 1:6]).all(axis=1).mean()
    assert agree > 0.8


def test_non_hog_model_accepts_full_matrix():
    matrix = toy_matrix(hog=True, seed=8)
    spec = spec_for()
    model = fit(spec, matrix, hyperparams={"pca_threshold": 0.95, "C": 10.0,
                                           "gamma": "scale"})
    narrow = toy_matrix(hog=False, seed=8)
    assert np.allclose(predict(model, matrix), predict(model, narrow))


def test_predict_fingerprint_mismatch():
    matrix = toy_matrix(seed=9)
    model = fit(spec_for(), matrix,
                hyperparams={"pca_threshold": 0.95, "C": 1.0,
                             "gamma": "scale"})
    model.manifest_fingerprint = "bogus"
    with pytest.raises(ManifestFingerprintMismatch):
        predict(model, matrix)


# --- serialization ----------------------------------------------------------------

def test_model_round_trip_identical_predictions(tmp_path):
    matrix = toy_matrix(seed=10)
    for variant, hyper in (("rf-pca-svm", {"pca_threshold": 0.95, "C": 10.0,
                                           "gamma": "scale"}),
                           ("autoenc-svm-1", {"latent": 8, "epochs": 10,
                                              "C": 10.0, "gamma": "scale"})):
        model = fit(spec_for(variant=variant), matrix, hyperparams=hyper)
        path = tmp_path / f"{variant}.json"
        save_model(model, str(path))
        loaded = load_model(str(path))
        assert (predict(model, matrix) == predict(loaded, matrix)).all()


def test_model_regions_round_trip(tmp_path):
    matrix = toy_matrix(seed=11)
    model = fit(spec_for(task="regions"), matrix,
                hyperparams={"pca_threshold": 0.95, "C": 10.0,
                             "gamma": "scale"})
    path = tmp_path / "regions.json"
    save_model(model, str(path))
    loaded = load_model(str(path))
    on = matrix.subset(matrix.labels[:, 0] == 1)
    assert (predict(model, on) == predict(loaded, on)).all()


def test_model_bytes_deterministic(tmp_path):
    matrix = toy_matrix(seed=12)
    paths = []
    for run in range(2):
        model = fit(spec_for(seed=3), matrix,
                    hyperparams={"pca_threshold": 0.95, "C": 1.0,
                                 "gamma": 0.01})
        p = tmp_path / f"m{run}.json"
        save_model(model, str(p))
        paths.append(p.read_bytes())
    assert paths[0] == paths[1]


def test_model_corrupt_and_version(tmp_path):
    matrix = toy_matrix(seed=13)
    model = fit(spec_for(), matrix,
                hyperparams={"pca_threshold": 0.95, "C": 1.0,
                             "gamma": "scale"})
    path = tmp_path / "m.json"
    save_model(model, str(path))
    data = path.read_bytes()
    (tmp_path / "trunc.json").write_bytes(data[: len(data) // 2])
    with pytest.raises(CorruptModel):
        load_model(str(tmp_path / "trunc.json"))
    doc = json.loads(data)
    doc["version"] = 99
    (tmp_path / "future.json").write_text(json.dumps(doc))
    with pytest.raises(VersionMismatch):
        load_model(str(tmp_path / "future.json"))
