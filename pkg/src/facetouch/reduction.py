"""Dimensionality reduction: feature standardization, PCA via cyclic Jacobi
eigendecomposition of the covariance, and a rectifier autoencoder trained by
mini-batch gradient descent with adaptive moment estimates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import NonFiniteLoss, TooFewRows

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray  # entries below 1e-12 replaced by 1

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        X = np.asarray(X, dtype=np.float64)
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        std = np.where(std < 1e-12, 1.0, std)
        return cls(mean=mean, std=std)

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std


# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------

def jacobi_eigh(A: np.ndarray, tol: float = JACOBI_TOL,
                max_sweeps: int = JACOBI_MAX_SWEEPS) -> tuple:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues, eigenvectors-as-columns) in descending eigenvalue
    order.  Sweeps stop once the off-diagonal Frobenius norm falls below
    tol * max(1, ||A||_F).
    """
    A = np.array(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    d = A.shape[0]
    V = np.eye(d)
    fro = max(1.0, float(np.linalg.norm(A)))
    for _ in range(max_sweeps):
        off = np.sqrt(max(0.0, np.sum(A * A) - np.sum(np.diag(A) ** 2)))
        if off <= tol * fro:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = A[p, q]
                if abs(apq) <= tol * fro / d:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot_p = c * A[:, p] - s * A[:, q]
                rot_q = s * A[:, p] + c * A[:, q]
                A[:, p], A[:, q] = rot_p, rot_q
                rot_p = c * A[p, :] - s * A[q, :]
                rot_q = s * A[p, :] + c * A[q, :]
                A[p, :], A[q, :] = rot_p, rot_q
                vp = c * V[:, p] - s * V[:, q]
                vq = s * V[:, p] + c * V[:, q]
                V[:, p], V[:, q] = vp, vq
    eigvals = np.diag(A).copy()
    order = np.argsort(-eigvals, kind="stable")
    eigvals = eigvals[order]
    V = V[:, order]
    # fix the sign so the largest-magnitude component is positive
    for k in range(d):
        j = int(np.argmax(np.abs(V[:, k])))
        if V[j, k] < 0:
            V[:, k] = -V[:, k]
    return eigvals, V


@dataclass
class PcaModel:
    mean: np.ndarray
    components: np.ndarray               # rows, descending eigenvalue order
    explained_variance: np.ndarray
    explained_variance_ratio: np.ndarray
    retained_count: int = 0              # set by the latest transform


def fit_pca(X_std: np.ndarray) -> PcaModel:
    """Eigendecomposition of the sample covariance (n-1 divisor)."""
    X = np.asarray(X_std, dtype=np.float64)
    n = X.shape[0]
    if n < 2:
        raise TooFewRows(f"PCA needs at least 2 rows, got {n}")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / (n - 1)
    eigvals, vecs = jacobi_eigh(cov)
    eigvals = np.maximum(eigvals, 0.0)
    total = eigvals.sum()
    ratio = eigvals / total if total > 0 else np.zeros_like(eigvals)
    return PcaModel(mean=mean, components=vecs.T,
                    explained_variance=eigvals,
                    explained_variance_ratio=ratio)


def retained_for_threshold(model: PcaModel, variance_threshold: float) -> int:
    """Smallest k whose cumulative explained-variance ratio reaches the
    threshold (all components when the threshold is never reached)."""
    if not 0.0 < variance_threshold <= 1.0:
        raise ValueError("variance threshold must be in (0, 1]")
    cum = np.cumsum(model.explained_variance_ratio)
    reached = np.nonzero(cum >= variance_threshold - 1e-12)[0]
    return int(reached[0]) + 1 if reached.size else model.components.shape[0]


def transform_pca(model: PcaModel, X: np.ndarray,
                  variance_threshold: float) -> np.ndarray:
    k = retained_for_threshold(model, variance_threshold)
    model.retained_count = k
    return (np.asarray(X, dtype=np.float64) - model.mean) \
        @ model.components[:k].T


def reconstruct_pca(model: PcaModel, Z: np.ndarray) -> np.ndarray:
    k = Z.shape[1]
    return Z @ model.components[:k] + model.mean


# ---------------------------------------------------------------------------
# Autoencoder
# ---------------------------------------------------------------------------

ADAM_STEP = 1e-3
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
BATCH_SIZE = 64


@dataclass
class AutoencoderModel:
    """d -> h -> z -> h -> d with rectified hidden layers and linear
    latent/output layers; h = round((d + z) / 2)."""
    input_dim: int
    hidden_dim: int
    latent_dim: int
    weights: list           # [W1, b1, W2, b2, W3, b3, W4, b4]
    loss_log: list = field(default_factory=list)
    seed: int = 0
    epochs: int = 0

    def encode(self, X_std: np.ndarray) -> np.ndarray:
        W1, b1, W2, b2 = self.weights[:4]
        h = np.maximum(np.asarray(X_std, dtype=np.float64) @ W1 + b1, 0.0)
        return h @ W2 + b2

    def decode(self, Z: np.ndarray) -> np.ndarray:
        W3, b3, W4, b4 = self.weights[4:]
        h = np.maximum(np.asarray(Z, dtype=np.float64) @ W3 + b3, 0.0)
        return h @ W4 + b4

    def reconstruct(self, X_std: np.ndarray) -> np.ndarray:
        return self.decode(self.encode(X_std))


def _glorot(rng, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


def fit_autoencoder(X_std: np.ndarray, latent: int, epochs: int,
                    seed: int = 0, batch_size: int = BATCH_SIZE,
                    step: float = ADAM_STEP,
                    snapshot_epochs: Optional[list] = None) -> list:
    """Train the autoencoder on standardized data.

    Returns one AutoencoderModel per requested snapshot epoch (default: a
    single snapshot at ``epochs``), so an epoch grid can be evaluated from
    one training run.  Training runs in float32 for speed; snapshots store
    float64 weights.
    """
    X = np.asarray(X_std, dtype=np.float32)
    n, d = X.shape
    if latent >= d:
        raise ValueError(f"latent {latent} must be smaller than input {d}")
    if n == 0:
        raise TooFewRows("empty training matrix")
    snapshots = sorted(set(snapshot_epochs or [epochs]))
    if snapshots[-1] != epochs:
        raise ValueError("largest snapshot must equal epochs")
    h = int(round((d + latent) / 2))
    rng = np.random.default_rng(seed)
    dims = [(d, h), (h, latent), (latent, h), (h, d)]
    params = []
    for fi, fo in dims:
        params.append(_glorot(rng, fi, fo, np.float32))
        params.append(np.zeros(fo, dtype=np.float32))
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]

    loss_log = []
    out = []
    t_adam = 0
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        sq_sum = 0.0
        seen = 0
        for start in range(0, n, batch_size):
            xb = X[order[start:start + batch_size]]
            bs = xb.shape[0]
            W1, b1, W2, b2, W3, b3, W4, b4 = params
            a1 = xb @ W1 + b1
            h1 = np.maximum(a1, 0.0)
            z = h1 @ W2 + b2
            a3 = z @ W3 + b3
            h2 = np.maximum(a3, 0.0)
            xh = h2 @ W4 + b4

            diff = xh - xb
            batch_loss = float(np.mean(diff * diff))
            sq_sum += batch_loss * bs
            seen += bs

            gout = diff * (2.0 / (bs * d))
            gW4 = h2.T @ gout
            gb4 = gout.sum(axis=0)
            gh2 = gout @ W4.T
            ga3 = gh2 * (a3 > 0)
            gW3 = z.T @ ga3
            gb3 = ga3.sum(axis=0)
            gz = ga3 @ W3.T
            gW2 = h1.T @ gz
            gb2 = gz.sum(axis=0)
            gh1 = gz @ W2.T
            ga1 = gh1 * (a1 > 0)
            gW1 = xb.T @ ga1
            gb1 = ga1.sum(axis=0)

            grads = [gW1, gb1, gW2, gb2, gW3, gb3, gW4, gb4]
            t_adam += 1
            c1 = 1.0 - ADAM_BETA1 ** t_adam
            c2 = 1.0 - ADAM_BETA2 ** t_adam
            for k in range(8):
                m[k] = ADAM_BETA1 * m[k] + (1 - ADAM_BETA1) * grads[k]
                v[k] = ADAM_BETA2 * v[k] + (1 - ADAM_BETA2) * grads[k] ** 2
                params[k] = params[k] - step * (m[k] / c1) \
                    / (np.sqrt(v[k] / c2) + ADAM_EPS)
        epoch_loss = sq_sum / seen
        if not np.isfinite(epoch_loss):
            raise NonFiniteLoss(f"training diverged at epoch {epoch} "
                                f"(loss {epoch_loss})")
        loss_log.append(epoch_loss)
        if epoch in snapshots:
            out.append(AutoencoderModel(
                input_dim=d, hidden_dim=h, latent_dim=latent,
                weights=[p.astype(np.float64).copy() for p in params],
                loss_log=list(loss_log), seed=seed, epochs=epoch))
    return out
