"""Random-forest feature selection: bootstrap-sampled Gini trees with
normalized impurity-decrease importances.

Split search runs over per-feature quantile bins (64 by default) instead of
every distinct value, which keeps node cost linear without sorting; the
recorded thresholds are real bin edges, so prediction on raw features
reproduces the training partition exactly.  Each tree draws its randomness
from a generator seeded by (seed, tree index), so parallel and serial fits
agree bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateLabels

N_BINS = 64


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_depth: int = 12
    min_samples_leaf: int = 5


@dataclass
class DecisionTree:
    """Array-encoded binary tree; children of -1 mark leaves.

    A row goes left when feature value < threshold.
    """
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray  # per-node class counts

    def predict_counts(self, X: np.ndarray) -> np.ndarray:
        """Leaf class counts for every row."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.left[node] >= 0
        while active.any():
            idx = np.nonzero(active)[0]
            nd = node[idx]
            go_left = X[idx, self.feature[nd]] < self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
            active[idx] = self.left[node[idx]] >= 0
        return self.counts[node]


@dataclass
class ForestModel:
    trees: list
    params: ForestParams
    seed: int
    classes: np.ndarray
    importances: np.ndarray
    oob_accuracy: float | None = None
    oob_coverage: float = 0.0

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        votes = np.zeros((X.shape[0], len(self.classes)))
        for tree in self.trees:
            counts = tree.predict_counts(X)
            votes[np.arange(X.shape[0]), counts.argmax(axis=1)] += 1
        return self.classes[votes.argmax(axis=1)]


def _bin_features(X: np.ndarray, n_bins: int) -> tuple:
    """(uint8 codes, per-feature edge arrays).

    code = number of edges <= value, so code <= s  <=>  value < edges[s].
    """
    n, d = X.shape
    qs = np.linspace(0, 1, n_bins + 1)[1:-1]
    codes = np.empty((n, d), dtype=np.uint8)
    edges = []
    for f in range(d):
        e = np.unique(np.quantile(X[:, f], qs))
        e = e[np.isfinite(e)]
        edges.append(e)
        codes[:, f] = np.searchsorted(e, X[:, f], side="right")
    return codes, edges


def _gini(counts: np.ndarray, n) -> np.ndarray:
    with np.errstate(invalid="ignore", divide="ignore"):
        p = counts / np.asarray(n, dtype=np.float64)[..., None]
    g = 1.0 - np.sum(p * p, axis=-1)
    return np.nan_to_num(g)


class _TreeBuilder:
    def __init__(self, codes, edges, y_enc, n_classes, params, rng, n_total):
        self.codes = codes
        self.edges = edges
        self.y = y_enc
        self.C = n_classes
        self.params = params
        self.rng = rng
        self.n_total = n_total
        self.k = max(1, int(np.sqrt(codes.shape[1])))
        self.feature = []
        self.threshold = []
        self.left = []
        self.right = []
        self.counts = []
        self.importances = np.zeros(codes.shape[1])

    def build(self, rows) -> DecisionTree:
        self._node(rows, 0)
        return DecisionTree(np.array(self.feature), np.array(self.threshold),
                            np.array(self.left), np.array(self.right),
                            np.array(self.counts, dtype=np.float64))

    def _node(self, rows, depth) -> int:
        idx = len(self.feature)
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        n = rows.shape[0]
        total = np.bincount(self.y[rows], minlength=self.C).astype(np.float64)
        self.counts.append(total)
        if depth >= self.params.max_depth \
                or n < 2 * self.params.min_samples_leaf \
                or (total > 0).sum() < 2:
            return idx
        split = self._best_split(rows, total, n)
        if split is None:
            return idx
        f, split_bin, gain = split
        go_left = self.codes[rows, f] <= split_bin
        self.importances[f] += (n / self.n_total) * gain
        self.feature[idx] = f
        self.threshold[idx] = float(self.edges[f][split_bin])
        self.left[idx] = self._node(rows[go_left], depth + 1)
        self.right[idx] = self._node(rows[~go_left], depth + 1)
        return idx

    def _best_split(self, rows, total, n):
        """One fused histogram over all candidate features at this node."""
        d = self.codes.shape[1]
        feats = self.rng.choice(d, size=min(self.k, d), replace=False)
        parent = float(_gini(total, n))
        min_leaf = self.params.min_samples_leaf
        y_rows = self.y[rows]
        nf = feats.shape[0]
        nb = N_BINS  # histogram rows per feature (codes are < N_BINS)
        flat = (np.arange(nf)[None, :] * nb
                + self.codes[rows][:, feats].astype(np.int64)) * self.C \
            + y_rows[:, None]
        hist = np.bincount(flat.ravel(), minlength=nf * nb * self.C) \
            .reshape(nf, nb, self.C).astype(np.float64)
        cum = np.cumsum(hist, axis=1)[:, :-1]  # left counts per split bin
        nl = cum.sum(axis=2)
        nr = n - nl
        valid = (nl >= min_leaf) & (nr >= min_leaf)
        # split bin s must also be a real edge of that feature
        for fi, f in enumerate(feats):
            valid[fi, self.edges[f].shape[0]:] = False
        if not valid.any():
            return None
        child = (nl * _gini(cum, np.maximum(nl, 1))
                 + nr * _gini(total[None, None, :] - cum,
                              np.maximum(nr, 1))) / n
        gains = np.where(valid, parent - child, -np.inf)
        fi, s = np.unravel_index(int(np.argmax(gains)), gains.shape)
        if gains[fi, s] <= 1e-12:
            return None
        return int(feats[fi]), int(s), float(gains[fi, s])


def fit_forest(X, y, params: ForestParams = ForestParams(),
               seed: int = 0) -> ForestModel:
    """Bootstrap forest with sqrt-d feature subsets and Gini splits."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    classes, y_enc = np.unique(y, return_inverse=True)
    if classes.shape[0] < 2:
        raise DegenerateLabels("training labels contain a single class")
    n = X.shape[0]
    codes, edges = _bin_features(X, N_BINS)

    trees = []
    importances = np.zeros(X.shape[1])
    oob_votes = np.zeros((n, classes.shape[0]))
    for t in range(params.n_trees):
        rng = np.random.default_rng([seed, t])
        rows = rng.integers(0, n, size=n)
        builder = _TreeBuilder(codes, edges, y_enc, classes.shape[0], params,
                               rng, n)
        tree = builder.build(rows)
        s = builder.importances.sum()
        if s > 0:
            importances += builder.importances / s
        trees.append(tree)
        oob = np.ones(n, dtype=bool)
        oob[rows] = False
        if oob.any():
            counts = tree.predict_counts(X[oob])
            oob_votes[np.nonzero(oob)[0], counts.argmax(axis=1)] += 1

    total = importances.sum()
    if total > 0:
        importances /= total
    covered = oob_votes.sum(axis=1) > 0
    oob_acc = None
    if covered.any():
        pred = oob_votes[covered].argmax(axis=1)
        oob_acc = float(np.mean(pred == y_enc[covered]))
    return ForestModel(trees=trees, params=params, seed=seed, classes=classes,
                       importances=importances, oob_accuracy=oob_acc,
                       oob_coverage=float(np.mean(covered)))


def select_features(model: ForestModel, fallback_top: int = 10) -> np.ndarray:
    """Indices with importance above the mean; never empty.

    When nothing clears the mean (uniform or zero importances) the fallback
    keeps the top entries by importance, ties resolved by index order.
    """
    imp = model.importances
    selected = np.nonzero(imp > imp.mean())[0]
    if selected.size == 0:
        order = np.lexsort((np.arange(imp.shape[0]), -imp))
        selected = np.sort(order[:fallback_top])
    return selected
