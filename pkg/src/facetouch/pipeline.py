"""Model variants, grouped cross-validated grid search, and trained-model
serialization.

Three variants: random-forest selection + PCA + SVM on the landmark-derived
features, and two autoencoder + SVM variants (geometrical/temporal only, or
with HOG appearance columns).  Binary touch detection uses all labeled
frames; region classification trains only on the on-head frames through the
Label Powerset reduction.

Within the grid search every fold refits the whole preprocessing stack
(imputation, standardization, selection, reduction) on that fold's training
portion only, and flip augmentation is applied to training portions only.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from itertools import product
from typing import Optional

import numpy as np

from .errors import (CorruptModel, ManifestFingerprintMismatch, NoConvergence,
                     TooFewGroups, VersionMismatch)
from .features import flip_augment
from .forest import ForestModel, ForestParams, fit_forest, select_features
from .model import Family, FeatureMatrix, build_manifest
from .preprocess import ImputationStats, apply_imputation, fit_imputation
from .reduction import (AutoencoderModel, PcaModel, Standardizer,
                        fit_autoencoder, fit_pca, retained_for_threshold,
                        transform_pca)
from .stats import multilabel_macro_metrics
from .svm import (PowersetModel, SvmModel, kernel_from_distances,
                  predict_powerset, resolve_gamma, squared_distance_matrix,
                  train_powerset, train_svm)

log = logging.getLogger(__name__)

MODEL_FORMAT = "facetouch-model"
MODEL_VERSION = 1

VARIANTS = ("rf-pca-svm", "autoenc-svm-1", "autoenc-svm-2")
TASKS = ("binary", "regions")

SVM_C_GRID = (0.1, 1.0, 10.0, 100.0)
SVM_GAMMA_GRID = ("scale", 0.01, 0.1)
PCA_THRESHOLD_GRID = (0.90, 0.95, 0.99)
AE_LATENT_GRID = (16, 32, 64)
AE_EPOCHS_GRID = (50, 100)

KERNEL_FLOAT32_MIN_N = 2048  # smaller problems keep float64 kernels


@dataclass(frozen=True)
class PipelineSpec:
    variant: str
    task: str
    seed: int = 0
    augment: bool = True
    class_weight: Optional[str] = "balanced"
    c_grid: tuple = SVM_C_GRID
    gamma_grid: tuple = SVM_GAMMA_GRID
    pca_threshold_grid: tuple = PCA_THRESHOLD_GRID
    latent_grid: tuple = AE_LATENT_GRID
    epochs_grid: tuple = AE_EPOCHS_GRID

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        for name in ("c_grid", "gamma_grid", "pca_threshold_grid",
                     "latent_grid", "epochs_grid"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    @property
    def uses_hog(self) -> bool:
        return self.variant == "autoenc-svm-2"

    def grid(self) -> list:
        """Hyperparameter candidates in canonical enumeration order."""
        if self.variant == "rf-pca-svm":
            return [{"pca_threshold": t, "C": c, "gamma": g}
                    for t, c, g in product(self.pca_threshold_grid,
                                           self.c_grid, self.gamma_grid)]
        return [{"latent": z, "epochs": e, "C": c, "gamma": g}
                for z, e, c, g in product(self.latent_grid, self.epochs_grid,
                                          self.c_grid, self.gamma_grid)]


@dataclass(frozen=True)
class GroupedFolds:
    assignment: dict  # video_id -> fold index
    k: int

    def fold_videos(self, fold: int) -> list:
        return [v for v, f in self.assignment.items() if f == fold]


def make_grouped_folds(video_ids, k: int = 5, seed: int = 0) -> GroupedFolds:
    """Shuffle videos by seed, deal round-robin into k folds."""
    unique = list(dict.fromkeys(video_ids))
    if len(unique) < k:
        raise TooFewGroups(f"{len(unique)} videos cannot fill {k} folds")
    rng = np.random.default_rng(seed)
    order = [unique[i] for i in rng.permutation(len(unique))]
    return GroupedFolds(assignment={v: i % k for i, v in enumerate(order)},
                        k=k)


# ---------------------------------------------------------------------------
# Task handling
# ---------------------------------------------------------------------------

def task_rows(spec: PipelineSpec, matrix: FeatureMatrix) -> FeatureMatrix:
    """Labeled rows for the task (regions: on-head frames only)."""
    if matrix.labels is None:
        raise ValueError("matrix has no labels")
    mask = matrix.labeled_mask
    if spec.task == "regions":
        mask = mask & (matrix.labels[:, 0] == 1)
    return matrix.subset(mask)


def variant_column_indices(spec: PipelineSpec, matrix: FeatureMatrix
                           ) -> np.ndarray:
    """Feature columns the variant consumes."""
    non_hog = ~matrix.manifest.family_mask(Family.HOG)
    if spec.uses_hog:
        if len(matrix.manifest) != len(build_manifest(True)):
            raise ManifestFingerprintMismatch(
                "autoenc-svm-2 needs a matrix with HOG columns")
        return np.arange(len(matrix.manifest))
    return np.nonzero(non_hog)[0]


def _labels_binary(matrix: FeatureMatrix) -> np.ndarray:
    return np.where(matrix.labels[:, 0] == 1, 1.0, -1.0)


def _labels_regions(matrix: FeatureMatrix) -> np.ndarray:
    return matrix.labels[:, 1:6].astype(np.int8)


# ---------------------------------------------------------------------------
# Stage fitting
# ---------------------------------------------------------------------------

@dataclass
class FittedStages:
    columns: np.ndarray
    imputation: ImputationStats
    standardizer: Standardizer
    selected: Optional[np.ndarray] = None       # rf-pca-svm only
    pca: Optional[PcaModel] = None
    pca_threshold: Optional[float] = None
    autoencoder: Optional[AutoencoderModel] = None
    svm: Optional[SvmModel] = None
    powerset: Optional[PowersetModel] = None
    forest_oob: Optional[float] = None

    def reduce(self, matrix: FeatureMatrix) -> np.ndarray:
        """Raw rows -> classifier input."""
        sub = matrix.subset(np.ones(len(matrix), dtype=bool))
        sub.rows = sub.rows[:, self.columns]
        sub.manifest = _column_manifest(matrix, self.columns)
        X = apply_imputation(sub, self.imputation).rows
        X = self.standardizer.transform(X)
        if self.pca is not None:
            return transform_pca(self.pca, X[:, self.selected],
                                 self.pca_threshold)
        return self.autoencoder.encode(X)


def _column_manifest(matrix: FeatureMatrix, columns: np.ndarray):
    full = build_manifest(False)
    if len(columns) == len(matrix.manifest):
        return matrix.manifest
    if len(columns) == len(full):
        return full
    raise ManifestFingerprintMismatch("unsupported column subset")


def _prepare_training(spec: PipelineSpec, matrix: FeatureMatrix,
                      columns: np.ndarray) -> tuple:
    """(preprocessed stages without classifier, standardized X, labels)."""
    train = flip_augment(matrix) if spec.augment else matrix
    sub = train.subset(np.ones(len(train), dtype=bool))
    sub.rows = sub.rows[:, columns]
    sub.manifest = _column_manifest(train, columns)
    imputation = fit_imputation(sub)
    Xi = apply_imputation(sub, imputation).rows
    standardizer = Standardizer.fit(Xi)
    Xs = standardizer.transform(Xi)
    if spec.task == "binary":
        y = _labels_binary(train)
    else:
        y = _labels_regions(train)
    return imputation, standardizer, Xs, y


def _class_targets(spec: PipelineSpec, y) -> np.ndarray:
    """Integer class ids for the forest (binary or powerset classes)."""
    if spec.task == "binary":
        return (np.asarray(y) > 0).astype(np.int64)
    combos = sorted({tuple(int(v) for v in row) for row in np.asarray(y)})
    table = {c: i for i, c in enumerate(combos)}
    return np.array([table[tuple(int(v) for v in row)] for row in y])


def _fit_reducer(spec: PipelineSpec, Xs: np.ndarray, y, hyper: dict,
                 seed: int) -> dict:
    """Selection + reduction artifacts for one hyperparameter setting."""
    out = {}
    if spec.variant == "rf-pca-svm":
        forest = fit_forest(Xs, _class_targets(spec, y), ForestParams(),
                            seed=seed)
        selected = select_features(forest)
        pca = fit_pca(Xs[:, selected])
        out.update(forest=forest, selected=selected, pca=pca,
                   Z=transform_pca(pca, Xs[:, selected],
                                   hyper["pca_threshold"]))
    else:
        models = fit_autoencoder(Xs, hyper["latent"], hyper["epochs"],
                                 seed=seed)
        out.update(autoencoder=models[-1], Z=models[-1].encode(Xs))
    return out


def _train_classifier(spec: PipelineSpec, Z: np.ndarray, y, hyper: dict,
                      kernel_matrix=None, warm_alpha=None):
    if spec.task == "binary":
        return train_svm(Z, y, C=hyper["C"], gamma=hyper["gamma"],
                         class_weight=spec.class_weight,
                         kernel_matrix=kernel_matrix, warm_alpha=warm_alpha)
    return train_powerset(Z, y, C=hyper["C"], gamma=hyper["gamma"],
                          class_weight=spec.class_weight,
                          kernel_matrix=kernel_matrix)


def _score(spec: PipelineSpec, predictions, labels) -> float:
    if spec.task == "binary":
        return float(np.mean((np.asarray(predictions) > 0)
                             == (np.asarray(labels) > 0)))
    return multilabel_macro_metrics(predictions, labels).accuracy


def _predict_classifier(spec: PipelineSpec, stages_or_models, Z: np.ndarray):
    if spec.task == "binary":
        return stages_or_models.predict(Z)
    return predict_powerset(stages_or_models, Z)


# ---------------------------------------------------------------------------
# Grid search
# ---------------------------------------------------------------------------

def _digest(arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def grid_search(spec: PipelineSpec, matrix: FeatureMatrix,
                folds: Optional[GroupedFolds] = None,
                collect_fold_stats: bool = False) -> dict:
    """Exhaustive grouped-CV search over the variant's grid.

    Returns {"best": hyper dict, "table": rows, "fold_stats": optional}.
    Score ties keep the earliest candidate in enumeration order; candidates
    whose SVM fails to converge on some fold are excluded with a notice.
    """
    work = task_rows(spec, matrix)
    columns = variant_column_indices(spec, work)
    if folds is None:
        folds = make_grouped_folds(work.group_ids, seed=spec.seed)
    grid = spec.grid()
    scores = np.full((len(grid), folds.k), np.nan)
    notices = []
    fold_stats = []

    video_fold = folds.assignment
    row_fold = np.array([video_fold.get(v, -1) for v in work.group_ids])

    for f in range(folds.k):
        train = work.subset(row_fold != f)
        val = work.subset(row_fold == f)
        if len(train) == 0 or len(val) == 0:
            notices.append(f"fold {f}: empty split, skipped")
            continue
        imputation, standardizer, Xs, y = _prepare_training(
            spec, train, columns)
        val_sub = val.subset(np.ones(len(val), dtype=bool))
        val_sub.rows = val_sub.rows[:, columns]
        val_sub.manifest = _column_manifest(val, columns)
        Xv = standardizer.transform(
            apply_imputation(val_sub, imputation).rows)
        y_val = _labels_binary(val) if spec.task == "binary" \
            else _labels_regions(val)

        if collect_fold_stats:
            stat_arrays = [imputation.means, standardizer.mean,
                           standardizer.std]

        if spec.variant == "rf-pca-svm":
            forest = fit_forest(Xs, _class_targets(spec, y), ForestParams(),
                                seed=spec.seed)
            selected = select_features(forest)
            pca = fit_pca(Xs[:, selected])
            if collect_fold_stats:
                stat_arrays += [selected, pca.mean, pca.components]
            reductions = []
            for t in spec.pca_threshold_grid:
                k = retained_for_threshold(pca, t)
                Z = (Xs[:, selected] - pca.mean) @ pca.components[:k].T
                Zv = (Xv[:, selected] - pca.mean) @ pca.components[:k].T
                reductions.append(({"pca_threshold": t}, Z, Zv))
        else:
            reductions = []
            for latent in spec.latent_grid:
                models = fit_autoencoder(Xs, latent, max(spec.epochs_grid),
                                         seed=spec.seed,
                                         snapshot_epochs=list(spec.epochs_grid))
                for model in models:
                    if collect_fold_stats:
                        stat_arrays += [w for w in model.weights]
                    reductions.append(
                        ({"latent": latent, "epochs": model.epochs},
                         model.encode(Xs), model.encode(Xv)))

        if collect_fold_stats:
            fold_stats.append({"fold": f, "digest": _digest(stat_arrays),
                               "n_train": len(train),
                               "n_train_fitted": Xs.shape[0],
                               "n_val": len(val)})

        for red_hyper, Z, Zv in reductions:
            dtype = np.float32 if Z.shape[0] >= KERNEL_FLOAT32_MIN_N \
                else np.float64
            D = squared_distance_matrix(Z, dtype=dtype)
            K = np.empty_like(D)
            for gamma in spec.gamma_grid:
                gval = resolve_gamma(gamma, Z)
                kernel_from_distances(D, gval, out=K)
                warm = None
                for C in spec.c_grid:
                    hyper = dict(red_hyper, C=C, gamma=gamma)
                    idx = grid.index(hyper)
                    try:
                        clf = _train_classifier(
                            spec, Z, y, {"C": C, "gamma": gval},
                            kernel_matrix=K,
                            warm_alpha=warm if spec.task == "binary"
                            else None)
                    except NoConvergence as exc:
                        notices.append(f"fold {f} {hyper}: {exc}")
                        continue
                    if spec.task == "binary":
                        warm = clf.train_alpha
                    pred = _predict_classifier(spec, clf, Zv)
                    scores[idx, f] = _score(spec, pred, y_val)
            del D, K

    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        mean_scores = np.nanmean(scores, axis=1)
    complete = ~np.isnan(scores).any(axis=1)
    if not complete.any():
        raise NoConvergence("no grid candidate completed all folds")
    best_idx = int(np.argmax(np.where(complete, mean_scores, -np.inf)))
    table = [{"params": grid[i],
              "fold_scores": [None if np.isnan(s) else float(s)
                              for s in scores[i]],
              "mean_score": None if np.isnan(mean_scores[i])
              else float(mean_scores[i])}
             for i in range(len(grid))]
    out = {"best": grid[best_idx], "best_score": float(mean_scores[best_idx]),
           "table": table, "notices": notices}
    if collect_fold_stats:
        out["fold_stats"] = fold_stats
    return out


# ---------------------------------------------------------------------------
# Fit / predict
# ---------------------------------------------------------------------------

@dataclass
class TrainedModel:
    spec: PipelineSpec
    manifest_fingerprint: str
    stages: FittedStages
    chosen: dict
    cv_table: list = field(default_factory=list)
    cv_notices: list = field(default_factory=list)
    train_video_ids: list = field(default_factory=list)

    def predict(self, matrix: FeatureMatrix):
        return predict(self, matrix)


def fit(spec: PipelineSpec, matrix: FeatureMatrix,
        hyperparams: Optional[dict] = None,
        folds: Optional[GroupedFolds] = None) -> TrainedModel:
    """Grid-search (unless hyperparameters are given) then refit all stages
    on the full training data."""
    work = task_rows(spec, matrix)
    columns = variant_column_indices(spec, work)
    cv_table = []
    notices = []
    if hyperparams is None:
        result = grid_search(spec, matrix, folds=folds)
        hyperparams = result["best"]
        cv_table = result["table"]
        notices = result["notices"]
    imputation, standardizer, Xs, y = _prepare_training(spec, work, columns)
    red = _fit_reducer(spec, Xs, y, hyperparams, spec.seed)
    gval = resolve_gamma(hyperparams["gamma"], red["Z"])
    clf = _train_classifier(spec, red["Z"], y,
                            {"C": hyperparams["C"], "gamma": gval})
    stages = FittedStages(
        columns=columns, imputation=imputation, standardizer=standardizer,
        selected=red.get("selected"), pca=red.get("pca"),
        pca_threshold=hyperparams.get("pca_threshold"),
        autoencoder=red.get("autoencoder"),
        svm=clf if spec.task == "binary" else None,
        powerset=clf if spec.task == "regions" else None,
        forest_oob=red["forest"].oob_accuracy if "forest" in red else None)
    fingerprint = build_manifest(spec.uses_hog).fingerprint()
    return TrainedModel(
        spec=spec, manifest_fingerprint=fingerprint, stages=stages,
        chosen=dict(hyperparams), cv_table=cv_table, cv_notices=notices,
        train_video_ids=sorted(set(work.group_ids)))


def predict(model: TrainedModel, matrix: FeatureMatrix):
    """Per-row predictions: on-head booleans or (n, 5) region flags."""
    needed = build_manifest(model.spec.uses_hog)
    have = matrix.manifest
    if have.fingerprint() != model.manifest_fingerprint:
        # a full matrix may still contain the non-HOG model's columns
        if not (len(have) == len(build_manifest(True))
                and needed.fingerprint() == model.manifest_fingerprint):
            raise ManifestFingerprintMismatch(
                "matrix manifest does not match the trained model")
        sliced = matrix.subset(np.ones(len(matrix), dtype=bool))
        sliced.rows = sliced.rows[:, :len(needed)]
        sliced.manifest = needed
        matrix = sliced
    Z = model.stages.reduce(matrix)
    if model.spec.task == "binary":
        return model.stages.svm.predict(Z) > 0
    return predict_powerset(model.stages.powerset, Z)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _arr(a) -> list:
    return np.asarray(a).tolist()


def _svm_doc(m: SvmModel) -> dict:
    return {"support_vectors": _arr(m.support_vectors),
            "dual_coef": _arr(m.dual_coef), "bias": m.bias,
            "gamma": m.gamma, "C": m.C,
            "class_weight": {str(k): v for k, v in m.class_weight.items()}}


def _svm_from_doc(doc: dict) -> SvmModel:
    return SvmModel(
        support_vectors=np.array(doc["support_vectors"], dtype=np.float64),
        dual_coef=np.array(doc["dual_coef"], dtype=np.float64),
        bias=float(doc["bias"]), gamma=float(doc["gamma"]),
        C=float(doc["C"]),
        class_weight={int(k): float(v)
                      for k, v in doc["class_weight"].items()})


def save_model(model: TrainedModel, path: str,
               provenance: Optional[dict] = None) -> None:
    st = model.stages
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "spec": {"variant": model.spec.variant, "task": model.spec.task,
                 "seed": model.spec.seed, "augment": model.spec.augment,
                 "class_weight": model.spec.class_weight},
        "manifest_fingerprint": model.manifest_fingerprint,
        "chosen": model.chosen,
        "cv_table": model.cv_table,
        "cv_notices": model.cv_notices,
        "train_video_ids": model.train_video_ids,
        "columns": _arr(st.columns),
        "imputation": {"means": _arr(st.imputation.means),
                       "unobserved": st.imputation.unobserved},
        "standardizer": {"mean": _arr(st.standardizer.mean),
                         "std": _arr(st.standardizer.std)},
        "forest_oob": st.forest_oob,
    }
    if provenance is not None:
        doc["provenance"] = provenance
    if st.pca is not None:
        doc["reducer"] = {"kind": "pca", "selected": _arr(st.selected),
                          "mean": _arr(st.pca.mean),
                          "components": _arr(st.pca.components),
                          "explained_variance": _arr(st.pca.explained_variance),
                          "ratio": _arr(st.pca.explained_variance_ratio),
                          "threshold": st.pca_threshold}
    else:
        ae = st.autoencoder
        doc["reducer"] = {"kind": "autoencoder", "input_dim": ae.input_dim,
                          "hidden_dim": ae.hidden_dim,
                          "latent_dim": ae.latent_dim,
                          "weights": [_arr(w) for w in ae.weights],
                          "loss_log": ae.loss_log, "seed": ae.seed,
                          "epochs": ae.epochs}
    if st.svm is not None:
        doc["classifier"] = {"kind": "svm", **_svm_doc(st.svm)}
    else:
        doc["classifier"] = {
            "kind": "powerset",
            "combos": [list(c) for c in st.powerset.combos],
            "constant": list(st.powerset.constant)
            if st.powerset.constant else None,
            "models": [_svm_doc(m) for m in st.powerset.models]}
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
    os.replace(tmp, path)


def load_model(path: str) -> TrainedModel:
    if not os.path.isfile(path):
        from .errors import MissingFile
        raise MissingFile(path)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError, OSError) as exc:
        raise CorruptModel(f"{path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise CorruptModel(f"{path}: not a trained-model file")
    if doc.get("version") != MODEL_VERSION:
        raise VersionMismatch(
            f"{path}: version {doc.get('version')} != {MODEL_VERSION}")
    try:
        spec = PipelineSpec(**doc["spec"])
        red = doc["reducer"]
        stages = FittedStages(
            columns=np.array(doc["columns"], dtype=np.int64),
            imputation=ImputationStats(
                means=np.array(doc["imputation"]["means"]),
                unobserved=list(doc["imputation"]["unobserved"])),
            standardizer=Standardizer(
                mean=np.array(doc["standardizer"]["mean"]),
                std=np.array(doc["standardizer"]["std"])),
            forest_oob=doc.get("forest_oob"))
        if red["kind"] == "pca":
            stages.selected = np.array(red["selected"], dtype=np.int64)
            stages.pca = PcaModel(
                mean=np.array(red["mean"]),
                components=np.array(red["components"]),
                explained_variance=np.array(red["explained_variance"]),
                explained_variance_ratio=np.array(red["ratio"]))
            stages.pca_threshold = float(red["threshold"])
        else:
            stages.autoencoder = AutoencoderModel(
                input_dim=int(red["input_dim"]),
                hidden_dim=int(red["hidden_dim"]),
                latent_dim=int(red["latent_dim"]),
                weights=[np.array(w) for w in red["weights"]],
                loss_log=list(red["loss_log"]), seed=int(red["seed"]),
                epochs=int(red["epochs"]))
        clf = doc["classifier"]
        if clf["kind"] == "svm":
            stages.svm = _svm_from_doc(clf)
        else:
            stages.powerset = PowersetModel(
                combos=[tuple(c) for c in clf["combos"]],
                models=[_svm_from_doc(m) for m in clf["models"]],
                constant=tuple(clf["constant"]) if clf["constant"] else None)
        return TrainedModel(
            spec=spec, manifest_fingerprint=doc["manifest_fingerprint"],
            stages=stages, chosen=doc["chosen"], cv_table=doc["cv_table"],
            cv_notices=doc["cv_notices"],
            train_video_ids=list(doc["train_video_ids"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptModel(f"{path}: malformed model content "
                           f"({exc})") from exc
