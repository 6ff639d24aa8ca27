"""Shared numerical kernels: normalizations, stable softmax, PCA, pooling.

All functions are pure and accumulate in float64. Grid-valued helpers treat
the first two axes as a 2-D toroidal grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError


def l1_normalize(v, axis=-1):
    """Scale nonnegative entries to sum to 1 along `axis`.

    An all-zero slice maps to the uniform distribution so that downstream
    posteriors stay defined for blank inputs. Negative entries are rejected.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size and v.min() < 0:
        raise DomainError("l1_normalize: negative entries")
    s = v.sum(axis=axis, keepdims=True)
    n = v.shape[axis]
    safe = np.where(s > 0, s, 1.0)
    return np.where(s > 0, v / safe, 1.0 / n)


def log_softmax(scores, axis=-1):
    """Log of softmax(scores), stable under large score magnitudes."""
    s = np.asarray(scores, dtype=np.float64)
    if np.isnan(s).any():
        raise DomainError("log_softmax: NaN in scores")
    shifted = s - s.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def softmax(scores, axis=-1):
    return np.exp(log_softmax(scores, axis=axis))


def power_normalize(v, alpha):
    """Elementwise signed power map sign(x) * |x|**alpha, alpha in (0, 1]."""
    if not 0.0 < alpha <= 1.0:
        raise DomainError(f"power_normalize: alpha must be in (0, 1], got {alpha}")
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.abs(v) ** alpha


def l2_normalize(v, axis=-1):
    """Scale to unit Euclidean norm along `axis`; zero slices stay zero."""
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v, axis=axis, keepdims=True)
    return np.where(n > 0, v / np.where(n > 0, n, 1.0), 0.0)


@dataclass(frozen=True)
class PcaModel:
    """Fitted PCA basis: `basis` rows are orthonormal principal directions,
    sorted by decreasing `eigenvalues`. `epsilon` regularizes whitening."""

    mean: np.ndarray        # (D,)
    basis: np.ndarray       # (d, D), orthonormal rows
    eigenvalues: np.ndarray  # (d,), descending, all > 0
    epsilon: float = 1e-6

    @property
    def dim_in(self) -> int:
        return self.mean.shape[0]

    @property
    def dim_out(self) -> int:
        return self.basis.shape[0]


def pca_fit(rows, d, epsilon=1e-6) -> PcaModel:
    """Fit a d-component PCA by eigendecomposition of the sample covariance.

    Requires at least d linearly independent rows; eigenvalue ties keep the
    solver's deterministic order (stable sort on descending eigenvalue).
    """
    X = np.asarray(rows, dtype=np.float64)
    if X.ndim != 2:
        raise DomainError(f"pca_fit: expected 2-D row matrix, got shape {X.shape}")
    n, D = X.shape
    if d > D:
        raise ConfigError(f"pca_fit: d={d} exceeds input dimension {D}")
    if d < 1:
        raise ConfigError(f"pca_fit: d must be >= 1, got {d}")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / n
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(-evals, kind="stable")
    evals = evals[order]
    evecs = evecs[:, order]
    tol = max(n, D) * np.finfo(np.float64).eps * max(evals[0], 0.0)
    rank = int(np.count_nonzero(evals > tol))
    if rank < d:
        raise ConfigError(f"pca_fit: data rank {rank} below requested d={d}")
    return PcaModel(mean=mean, basis=evecs[:, :d].T.copy(),
                    eigenvalues=evals[:d].copy(), epsilon=float(epsilon))


def pca_project(model: PcaModel, v):
    """Rotate into the principal subspace without variance scaling."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != model.dim_in:
        raise DomainError(
            f"pca_project: last axis {v.shape[-1]} != model dim {model.dim_in}")
    return (v - model.mean) @ model.basis.T


def pca_whiten_project(model: PcaModel, v):
    """Project onto the basis and divide by sqrt(eigenvalue + epsilon) per axis."""
    return pca_project(model, v) / np.sqrt(model.eigenvalues + model.epsilon)


def avg_pool_3x3(m):
    """3x3, stride-1 average pooling on a 2-D map.

    Each output cell averages its in-bounds neighbors; the divisor is the
    count of valid neighbors (9 interior, 6 edge, 4 corner), which avoids
    attenuating mass at the border.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise DomainError(f"avg_pool_3x3: expected 2-D map, got shape {m.shape}")
    h, w = m.shape
    padded = np.zeros((h + 2, w + 2))
    padded[1:-1, 1:-1] = m
    sums = np.zeros((h, w))
    for di in range(3):
        for dj in range(3):
            sums += padded[di:di + h, dj:dj + w]
    counts = np.zeros((h + 2, w + 2))
    counts[1:-1, 1:-1] = 1.0
    cnt = np.zeros((h, w))
    for di in range(3):
        for dj in range(3):
            cnt += counts[di:di + h, dj:dj + w]
    return sums / cnt


def toroidal_window_sum(arr, window):
    """Sums of arr over bx-by windows anchored at every grid cell, with
    wrap-around. arr has grid shape (Ex, Ey, ...); output matches arr's shape
    and out[x, y] = sum of arr[x:x+bx, y:y+by] taken toroidally.

    Uses cumulative sums, so cost is independent of the window size.
    """
    arr = np.asarray(arr, dtype=np.float64)
    ex, ey = arr.shape[:2]
    bx, by = window
    if not (1 <= bx <= ex and 1 <= by <= ey):
        raise DomainError(f"toroidal_window_sum: window {window} exceeds grid ({ex}, {ey})")
    a = arr
    if bx > 1:
        a = np.concatenate([a, a[: bx - 1]], axis=0)
    if by > 1:
        a = np.concatenate([a, a[:, : by - 1]], axis=1)
    c = a.cumsum(axis=0).cumsum(axis=1)
    pad = ((1, 0), (1, 0)) + ((0, 0),) * (arr.ndim - 2)
    c = np.pad(c, pad)
    return c[bx:, by:] - c[:-bx, by:] - c[bx:, :-by] + c[:-bx, :-by]


def toroidal_window_sum_ending(arr, window):
    """Like toroidal_window_sum but windows END at the anchor:
    out[x, y] = sum of arr[x-bx+1:x+1, y-by+1:y+1], toroidally."""
    bx, by = window
    start = toroidal_window_sum(arr, window)
    return np.roll(start, (bx - 1, by - 1), axis=(0, 1))
