"""Soft-margin RBF SVM trained by sequential minimal optimization, plus the
one-vs-rest Label Powerset multi-label wrapper.

The working pair maximizes the KKT violation (the first-order heuristic:
i and j realize max |E_i - E_j| over the eligible up/low index sets).  The
hot loop fuses the error-cache update with the next pair selection and is
JIT-compiled when the kernel matrix fits in memory; otherwise an LRU
row-cache variant (256 rows) runs the same updates.
"""

from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from numba import njit

from .errors import DimensionMismatch, NoConvergence, SingleClass, \
    SingleCombination

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-3
MAX_PASS_FACTOR = 10       # pass budget: 10 * n pair optimizations
MIN_STEP_BUDGET = 50_000   # floor so small problems are not budget-starved
KERNEL_CACHE_ROWS = 256
FULL_KERNEL_MAX_N = 16000  # above this, fall back to the row cache
FLOAT64_KERNEL_MAX_N = 4000
_MASK_OFF = 1e30           # additive ineligibility sentinel


def resolve_gamma(gamma: Union[float, str], X: np.ndarray) -> float:
    """Numeric gamma; "scale" means 1 / (d * Var(X)) over all entries."""
    if gamma == "scale":
        var = float(np.asarray(X).var())
        if var <= 0.0:
            return 1.0
        return 1.0 / (X.shape[1] * var)
    g = float(gamma)
    if g <= 0:
        raise ValueError("gamma must be positive")
    return g


def rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    """exp(-gamma * ||a - b||^2) for all row pairs."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    sq = (A * A).sum(axis=1)[:, None] + (B * B).sum(axis=1)[None, :] \
        - 2.0 * (A @ B.T)
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-gamma * sq)


def squared_distance_matrix(X: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Pairwise squared distances, shareable across an entire gamma grid."""
    Xc = np.asarray(X, dtype=dtype)
    sq = (Xc * Xc).sum(axis=1)
    D = Xc @ Xc.T
    D *= -2.0
    D += sq[:, None]
    D += sq[None, :]
    np.maximum(D, 0.0, out=D)
    return D


def kernel_from_distances(D: np.ndarray, gamma: float,
                          out: Optional[np.ndarray] = None) -> np.ndarray:
    """exp(-gamma * D) into a reusable buffer."""
    if out is None:
        out = np.empty_like(D)
    np.multiply(D, D.dtype.type(-gamma), out=out)
    np.exp(out, out=out)
    return out


def rbf_kernel_matrix(X: np.ndarray, gamma: float,
                      dtype=np.float64) -> np.ndarray:
    """Full training kernel; float32 keeps large matrices affordable."""
    D = squared_distance_matrix(X, dtype=dtype)
    return kernel_from_distances(D, gamma, out=D)


@njit(cache=True)
def _eligibility(y, alpha, box, k):  # pragma: no cover - jitted
    """(up_add, lo_add) additive mask entries for index k."""
    ak = alpha[k]
    up = (y[k] > 0 and ak < box[k]) or (y[k] < 0 and ak > 0.0)
    lo = (y[k] < 0 and ak < box[k]) or (y[k] > 0 and ak > 0.0)
    return (0.0 if up else -_MASK_OFF), (0.0 if lo else _MASK_OFF)


@njit(cache=True)
def _smo_solve(K, y, box, tol, max_steps, alpha, E):  # pragma: no cover
    """Maximal-violating-pair SMO on a precomputed kernel.

    ``alpha``/``E`` carry the start point (zeros and -y for a cold start;
    warm starts pass a feasible solution and its error cache).  The error
    update of one step is fused into the selection scan of the next, so each
    pass is a single sweep over the kernel rows of the previous pair.
    Returns (alpha, bias, steps, final_violation).
    """
    n = y.shape[0]
    up_add = np.empty(n)
    lo_add = np.empty(n)
    for k in range(n):
        up_add[k], lo_add[k] = _eligibility(y, alpha, box, k)

    excl = np.empty(n, dtype=np.int64)
    n_excl = 0
    reset_used = False
    steps = 0
    di = 0.0
    dj = 0.0
    ri = 0
    rj = 0
    # hopeless-run checkpoints: runs that will converge within the pass
    # budget sit orders of magnitude below these violation levels by then
    check1 = max_steps // 4
    check2 = max_steps // 2
    while steps < max_steps:
        m = -np.inf
        M = np.inf
        i = -1
        j = -1
        if di != 0.0 or dj != 0.0:
            Ki = K[ri]
            Kj = K[rj]
            for k in range(n):
                e = E[k] + di * Ki[k] + dj * Kj[k]
                E[k] = e
                vu = up_add[k] - e
                if vu > m:
                    m = vu
                    i = k
                vl = lo_add[k] - e
                if vl < M:
                    M = vl
                    j = k
        else:
            for k in range(n):
                e = E[k]
                vu = up_add[k] - e
                if vu > m:
                    m = vu
                    i = k
                vl = lo_add[k] - e
                if vl < M:
                    M = vl
                    j = k
        di = 0.0
        dj = 0.0
        if i < 0 or j < 0 or m < -0.5 * _MASK_OFF or M > 0.5 * _MASK_OFF \
                or m - M <= tol:
            if n_excl > 0 and not reset_used:
                for t in range(n_excl):
                    k = excl[t]
                    up_add[k], lo_add[k] = _eligibility(y, alpha, box, k)
                n_excl = 0
                reset_used = True
                continue
            break
        if (steps == check1 and m - M > 300.0 * tol) \
                or (steps == check2 and m - M > 30.0 * tol):
            break  # far from optimal at half budget: give up early

        s = y[i] * y[j]
        ai_old = alpha[i]
        aj_old = alpha[j]
        if s < 0:
            L = max(0.0, aj_old - ai_old)
            H = min(box[j], box[i] + aj_old - ai_old)
        else:
            L = max(0.0, ai_old + aj_old - box[i])
            H = min(box[j], ai_old + aj_old)
        eta = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if eta >= 1e-12:
            aj = aj_old + y[j] * (E[i] - E[j]) / eta
        else:
            # duplicate points: the objective is linear along this pair,
            # so move to whichever box end the derivative points at
            aj = H if y[j] * (E[i] - E[j]) > 0 else L
        if aj < L:
            aj = L
        elif aj > H:
            aj = H
        if abs(aj - aj_old) < 1e-14:
            # blocked pair (numerically immovable): set i aside until
            # progress elsewhere or one retry round
            up_add[i] = -_MASK_OFF
            excl[n_excl] = i
            n_excl += 1
            continue
        ai = ai_old + s * (aj_old - aj)
        # snap rounding residue to the exact bounds so eligibility
        # tests keep working (clipped updates leave ~1e-16 residues)
        sn = 1e-12 * max(1.0, box[i])
        if ai < sn:
            ai = 0.0
        elif ai > box[i] - sn:
            ai = box[i]
        sn = 1e-12 * max(1.0, box[j])
        if aj < sn:
            aj = 0.0
        elif aj > box[j] - sn:
            aj = box[j]
        alpha[i] = ai
        alpha[j] = aj
        di = (ai - ai_old) * y[i]
        dj = (aj - aj_old) * y[j]
        ri = i
        rj = j
        steps += 1
        if n_excl > 0:
            for t in range(n_excl):
                k = excl[t]
                up_add[k], lo_add[k] = _eligibility(y, alpha, box, k)
            n_excl = 0
        reset_used = False
        up_add[i], lo_add[i] = _eligibility(y, alpha, box, i)
        up_add[j], lo_add[j] = _eligibility(y, alpha, box, j)

    if di != 0.0 or dj != 0.0:  # flush the pending error update
        Ki = K[ri]
        Kj = K[rj]
        for k in range(n):
            E[k] += di * Ki[k] + dj * Kj[k]

    # bias: midpoint of the feasible interval [max_up(-E), min_low(-E)]
    m = -np.inf
    M = np.inf
    for k in range(n):
        up = (y[k] > 0 and alpha[k] < box[k]) or (y[k] < 0 and alpha[k] > 0.0)
        lo = (y[k] < 0 and alpha[k] < box[k]) or (y[k] > 0 and alpha[k] > 0.0)
        nek = -E[k]
        if up and nek > m:
            m = nek
        if lo and nek < M:
            M = nek
    if m > -np.inf and M < np.inf:
        return alpha, 0.5 * (m + M), steps, m - M
    if m > -np.inf:
        return alpha, m, steps, 0.0
    if M < np.inf:
        return alpha, M, steps, 0.0
    return alpha, 0.0, steps, 0.0


class _LruRows:
    """Least-recently-used kernel row cache."""

    def __init__(self, X, gamma, capacity=KERNEL_CACHE_ROWS):
        self.X = np.asarray(X, dtype=np.float64)
        self.sq = (self.X * self.X).sum(axis=1)
        self.gamma = gamma
        self.capacity = capacity
        self.rows: OrderedDict = OrderedDict()
        self.misses = 0

    def row(self, i: int) -> np.ndarray:
        if i in self.rows:
            self.rows.move_to_end(i)
            return self.rows[i]
        d = self.sq + self.sq[i] - 2.0 * (self.X @ self.X[i])
        np.maximum(d, 0.0, out=d)
        r = np.exp(-self.gamma * d)
        self.misses += 1
        self.rows[i] = r
        if len(self.rows) > self.capacity:
            self.rows.popitem(last=False)
        return r

    def diag(self) -> np.ndarray:
        return np.ones(self.X.shape[0])


def _smo_row_cache(cache: _LruRows, y, box, tol, max_steps):
    """Same selection and update rule with lazily fetched kernel rows."""
    n = y.shape[0]
    alpha = np.zeros(n)
    E = -y.copy()
    steps = 0
    while steps < max_steps:
        negE = -E
        up = ((y > 0) & (alpha < box)) | ((y < 0) & (alpha > 0))
        lo = ((y < 0) & (alpha < box)) | ((y > 0) & (alpha > 0))
        if not up.any() or not lo.any():
            break
        i = int(np.argmax(np.where(up, negE, -np.inf)))
        j = int(np.argmin(np.where(lo, negE, np.inf)))
        if negE[i] - negE[j] <= tol:
            break
        Ki, Kj = cache.row(i), cache.row(j)
        s = y[i] * y[j]
        ai_old, aj_old = alpha[i], alpha[j]
        if s < 0:
            L = max(0.0, aj_old - ai_old)
            H = min(box[j], box[i] + aj_old - ai_old)
        else:
            L = max(0.0, ai_old + aj_old - box[i])
            H = min(box[j], ai_old + aj_old)
        eta = Ki[i] + Kj[j] - 2.0 * Ki[j]
        if eta >= 1e-12:
            aj = aj_old + y[j] * (E[i] - E[j]) / eta
        else:
            aj = H if y[j] * (E[i] - E[j]) > 0 else L
        aj = float(min(max(aj, L), H))
        if abs(aj - aj_old) < 1e-14:
            break
        ai = ai_old + s * (aj_old - aj)
        for idx in (i, j):
            val = ai if idx == i else aj
            sn = 1e-12 * max(1.0, box[idx])
            if val < sn:
                val = 0.0
            elif val > box[idx] - sn:
                val = box[idx]
            if idx == i:
                ai = val
            else:
                aj = val
        alpha[i], alpha[j] = ai, aj
        E += (ai - ai_old) * y[i] * Ki + (aj - aj_old) * y[j] * Kj
        steps += 1

    up = ((y > 0) & (alpha < box)) | ((y < 0) & (alpha > 0))
    lo = ((y < 0) & (alpha < box)) | ((y > 0) & (alpha > 0))
    negE = -E
    m = float(negE[up].max()) if up.any() else None
    M = float(negE[lo].min()) if lo.any() else None
    if m is None and M is None:
        return alpha, 0.0, steps, 0.0
    if m is None:
        return alpha, M, steps, 0.0
    if M is None:
        return alpha, m, steps, 0.0
    return alpha, 0.5 * (m + M), steps, m - M


# ---------------------------------------------------------------------------
# Public SVM surface
# ---------------------------------------------------------------------------

@dataclass
class SvmModel:
    support_vectors: np.ndarray
    dual_coef: np.ndarray      # alpha_i * y_i at the support vectors
    bias: float
    gamma: float
    C: float
    class_weight: dict
    n_steps: int = 0
    kkt_violation: float = 0.0
    train_alpha: Optional[np.ndarray] = None  # full alphas, not serialized

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.support_vectors.shape[1]:
            raise DimensionMismatch(
                f"expected {self.support_vectors.shape[1]} features, "
                f"got {X.shape}")
        return rbf_kernel(X, self.support_vectors, self.gamma) \
            @ self.dual_coef + self.bias

    def predict(self, X: np.ndarray) -> np.ndarray:
        """+1/-1 labels; a decision value of exactly 0 goes to +1."""
        return np.where(self.decision_function(X) >= 0.0, 1, -1)


BALANCED_WEIGHT_CAP = 25.0  # keeps rare-class boxes solvable


def class_weights_balanced(y: np.ndarray) -> dict:
    """Inverse-frequency weights n / (2 * n_class), capped.

    The cap bounds the box constraint of very rare classes (powerset members
    can have a handful of positives), which would otherwise stall the solver
    without improving the fit.
    """
    n = y.shape[0]
    n_pos = int(np.sum(y > 0))
    return {1: min(BALANCED_WEIGHT_CAP, n / (2.0 * n_pos)),
            -1: min(BALANCED_WEIGHT_CAP, n / (2.0 * (n - n_pos)))}


def train_svm(X, y, C: float, gamma: Union[float, str] = "scale",
              class_weight: Union[str, dict, None] = "balanced",
              tol: float = DEFAULT_TOL, seed: int = 0,
              kernel_matrix: Optional[np.ndarray] = None,
              warm_alpha: Optional[np.ndarray] = None) -> SvmModel:
    """Solve the soft-margin dual by SMO.

    ``kernel_matrix`` lets a caller share one precomputed kernel (and the
    implied gamma) across several C values; ``warm_alpha`` restarts from a
    feasible solution of a smaller C on the same data.  ``seed`` is accepted
    for interface symmetry; the solver itself is deterministic.
    """
    X = np.asarray(X, dtype=np.float64)
    yv = np.asarray(y, dtype=np.float64)
    labels = set(np.unique(yv))
    if labels - {-1.0, 1.0}:
        raise ValueError("labels must be in {-1, +1}")
    if len(labels) < 2:
        raise SingleClass("training labels contain a single class")
    if not np.isfinite(X).all():
        raise ValueError("X must be finite (impute first)")
    n = X.shape[0]
    g = resolve_gamma(gamma, X)
    if class_weight == "balanced":
        weights = class_weights_balanced(yv)
    elif class_weight is None:
        weights = {1: 1.0, -1: 1.0}
    else:
        weights = {1: float(class_weight[1]), -1: float(class_weight[-1])}
    box = np.where(yv > 0, C * weights[1], C * weights[-1])
    max_steps = max(MAX_PASS_FACTOR * n, MIN_STEP_BUDGET)

    use_full = kernel_matrix is not None or n <= FULL_KERNEL_MAX_N
    if use_full:
        if kernel_matrix is not None:
            K = np.ascontiguousarray(kernel_matrix)
            if K.shape != (n, n):
                raise DimensionMismatch("kernel matrix shape mismatch")
        else:
            dtype = np.float64 if n <= FLOAT64_KERNEL_MAX_N else np.float32
            K = rbf_kernel_matrix(X, g, dtype=dtype)
        if warm_alpha is not None and np.all(warm_alpha <= box + 1e-12) \
                and abs(float(warm_alpha @ yv)) < 1e-6:
            alpha0 = np.minimum(warm_alpha, box)
            E0 = (K @ (alpha0 * yv).astype(K.dtype)).astype(np.float64) - yv
        else:
            alpha0 = np.zeros(n)
            E0 = -yv.copy()
        alpha, b, steps, viol = _smo_solve(K, yv, box, tol, max_steps,
                                           alpha0, E0)
    else:
        cache = _LruRows(X, g)
        alpha, b, steps, viol = _smo_row_cache(cache, yv, box, tol, max_steps)

    if viol > 2 * tol:
        raise NoConvergence(
            f"SMO stopped after {steps} of {max_steps} passes with "
            f"KKT violation {viol:.3g}", kkt_violation=float(viol))
    sv = alpha > 1e-12
    if not sv.any():
        sv[int(np.argmax(alpha))] = True
    return SvmModel(support_vectors=X[sv], dual_coef=(alpha * yv)[sv],
                    bias=float(b), gamma=g, C=C, class_weight=weights,
                    n_steps=int(steps), kkt_violation=float(max(viol, 0.0)),
                    train_alpha=alpha)


def predict_svm(model: SvmModel, X) -> tuple:
    """(labels in {-1,+1}, decision values)."""
    f = model.decision_function(X)
    return np.where(f >= 0.0, 1, -1), f


def kkt_violations(model: SvmModel, X, y) -> np.ndarray:
    """Per-row KKT violations of the trained model on its training set."""
    if model.train_alpha is None:
        raise ValueError("model was loaded without training alphas")
    X = np.asarray(X, dtype=np.float64)
    yv = np.asarray(y, dtype=np.float64)
    alpha = model.train_alpha
    box = np.where(yv > 0, model.C * model.class_weight[1],
                   model.C * model.class_weight[-1])
    margins = yv * model.decision_function(X)
    at_zero = alpha <= 1e-9
    at_box = alpha >= box - 1e-9
    free = ~at_zero & ~at_box
    v = np.zeros(X.shape[0])
    v[at_zero] = np.maximum(0.0, 1.0 - margins[at_zero])
    v[at_box] = np.maximum(0.0, margins[at_box] - 1.0)
    v[free] = np.abs(margins[free] - 1.0)
    return v


# ---------------------------------------------------------------------------
# Label Powerset
# ---------------------------------------------------------------------------

@dataclass
class PowersetModel:
    combos: list                  # observed 5-bit tuples, class id = index
    models: list = field(default_factory=list)  # one-vs-rest SvmModel per class
    constant: Optional[tuple] = None            # single-combination fallback

    def encode(self, Y: np.ndarray) -> np.ndarray:
        table = {c: i for i, c in enumerate(self.combos)}
        return np.array([table[tuple(int(v) for v in row)] for row in Y],
                        dtype=np.int64)

    def decode(self, class_ids: np.ndarray) -> np.ndarray:
        return np.array([self.combos[int(c)] for c in class_ids],
                        dtype=np.int8)


def train_powerset(X, Y, C: float, gamma: Union[float, str] = "scale",
                   class_weight: Union[str, dict, None] = "balanced",
                   tol: float = DEFAULT_TOL, seed: int = 0,
                   kernel_matrix: Optional[np.ndarray] = None
                   ) -> PowersetModel:
    """One-vs-rest SVMs over the observed label combinations."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y)
    if Y.ndim != 2 or Y.shape[1] != 5:
        raise ValueError("Y must be (n, 5) binary")
    combos = sorted({tuple(int(v) for v in row) for row in Y.astype(int)})
    model = PowersetModel(combos=combos)
    if len(combos) == 1:
        log.warning("single label combination observed; constant predictor")
        model.constant = combos[0]
        return model
    ids = model.encode(Y)
    for k in range(len(combos)):
        yk = np.where(ids == k, 1.0, -1.0)
        model.models.append(train_svm(
            X, yk, C=C, gamma=gamma, class_weight=class_weight, tol=tol,
            seed=seed, kernel_matrix=kernel_matrix))
    return model


def predict_powerset(model: PowersetModel, X) -> np.ndarray:
    """(n, 5) binary predictions; decision ties pick the lowest class id."""
    X = np.asarray(X, dtype=np.float64)
    if model.constant is not None:
        return np.tile(np.array(model.constant, dtype=np.int8),
                       (X.shape[0], 1))
    scores = np.column_stack([m.decision_function(X) for m in model.models])
    return model.decode(scores.argmax(axis=1))
