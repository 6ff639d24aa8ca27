"""Epitome model: Gaussian grid EM over feature tensors, plus the fast
two-stage fit that estimates alignments in a PCA-reduced space first.

A frame tensor (Wx, Wy, D) is generated by a window into an (Ex, Ey) torus of
per-location Gaussians (mu, sigma2). With the variance held fixed the E-step
log scores reduce to window sums of ||mu||^2 terms plus a cross-correlation
between frames and mu, which is evaluated as one matrix product per window
offset; per-sweep cost is O(T * Wx * Wy * Ex * Ey * D).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, NumericalError, ParseError
from .features import FeatureSequence
from .numerics import log_softmax, pca_fit, pca_project, toroidal_window_sum, \
    toroidal_window_sum_ending

SIGMA2_FIXED = 0.1
SIGMA2_MIN = 1e-4
# locations whose accumulated posterior mass falls below this keep their
# previous parameters; well above the denormal range where num/den loses
# all relative precision
ZERO_SUPPORT = 1e-8
MONOTONE_SLACK = 1e-6
EPIT_MAGIC = b"EPIT"
_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class Epitome:
    """Grid of Gaussian parameters; sigma2 is a fixed scalar or a learned
    (Ex, Ey, D) tensor floored at SIGMA2_MIN."""

    mu: np.ndarray
    sigma2: float | np.ndarray
    window: tuple[int, int]

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        if self.mu.ndim != 3:
            raise ConfigError(f"Epitome: mu must be (Ex, Ey, D), got {self.mu.shape}")
        ex, ey, _ = self.mu.shape
        wx, wy = self.window
        if wx < 1 or wy < 1 or wx > ex or wy > ey:
            raise ConfigError(f"Epitome: window {self.window} incompatible with grid ({ex}, {ey})")
        if isinstance(self.sigma2, np.ndarray) or not np.isscalar(self.sigma2):
            self.sigma2 = np.asarray(self.sigma2, dtype=np.float64)
            if self.sigma2.shape != self.mu.shape:
                raise ConfigError("Epitome: learned sigma2 must match mu's shape")
        else:
            self.sigma2 = float(self.sigma2)

    @property
    def grid_size(self) -> tuple[int, int]:
        return self.mu.shape[0], self.mu.shape[1]

    @property
    def dim(self) -> int:
        return self.mu.shape[2]

    @property
    def learned_sigma(self) -> bool:
        return isinstance(self.sigma2, np.ndarray)


def _check_frames(ep: Epitome, seq: FeatureSequence) -> np.ndarray:
    if seq.spatial != ep.window:
        raise DomainError(f"frame spatial size {seq.spatial} != epitome window {ep.window}")
    if seq.dim != ep.dim:
        raise DomainError(f"frame dim {seq.dim} != epitome dim {ep.dim}")
    return np.asarray(seq.frames, dtype=np.float64)


# offsets are processed in groups whose stacked kernels stay within roughly
# this many float64 elements, keeping peak memory modest at large D
_CHUNK_ELEMENTS = 8_000_000


def _offset_chunks(wx, wy, ex, ey, d):
    offsets = [(jx, jy) for jx in range(wx) for jy in range(wy)]
    group = max(1, _CHUNK_ELEMENTS // max(ex * ey * d, 1))
    return [offsets[i:i + group] for i in range(0, len(offsets), group)]


def _log_placement_scores(ep: Epitome, frames: np.ndarray) -> np.ndarray:
    """Full Gaussian log score of every toroidal placement, shape (T, Ex, Ey).

    Split per grid location into a constant term, a term linear in the frame
    values, and a quadratic term; each contributes a window sum or a
    cross-correlation, accumulated as one matrix product per group of window
    offsets (the kernels for a group are stacked so BLAS does the heavy work).
    """
    t, wx, wy, d = frames.shape
    ex, ey = ep.grid_size
    if ep.learned_sigma:
        a0 = -0.5 * (np.log(ep.sigma2) + _LOG_2PI + ep.mu ** 2 / ep.sigma2).sum(axis=-1)
        a1 = ep.mu / ep.sigma2
        a2 = -0.5 / ep.sigma2
    else:
        s2 = float(ep.sigma2)
        a0 = -0.5 * (d * (np.log(s2) + _LOG_2PI) + (ep.mu ** 2).sum(axis=-1) / s2)
        a1 = ep.mu / s2
        a2 = None

    scores = np.tile(toroidal_window_sum(a0, ep.window)[None], (t, 1, 1))
    if a2 is None:
        scores += (-0.5 / float(ep.sigma2)) * (frames ** 2).sum(axis=(1, 2, 3))[:, None, None]
    flat = scores.reshape(t, -1)
    def _stacked_kernel(field, group):
        rolled = np.stack([np.roll(field, (-x, -y), axis=(0, 1)) for x, y in group])
        # (g, Ex, Ey, d) -> (g * d, Ex * Ey) so one matmul covers the group
        return rolled.reshape(len(group), ex * ey, d).transpose(0, 2, 1) \
            .reshape(len(group) * d, ex * ey)

    for group in _offset_chunks(wx, wy, ex, ey, d):
        jx = [j[0] for j in group]
        jy = [j[1] for j in group]
        fg = frames[:, jx, jy, :].reshape(t, len(group) * d)
        flat += fg @ _stacked_kernel(a1, group)
        if a2 is not None:
            flat += fg ** 2 @ _stacked_kernel(a2, group)
    return scores


def _check_q(q, t, grid_size) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (t, *grid_size):
        raise DomainError(f"q shape {q.shape} != expected ({t}, {grid_size[0]}, {grid_size[1]})")
    if np.abs(q.sum(axis=(1, 2)) - 1.0).max() > 1e-6:
        raise DomainError("q must be normalized per frame")
    return q


def epitome_e_step(ep: Epitome, seq: FeatureSequence) -> np.ndarray:
    """Posterior q over placements, shape (T, Ex, Ey)."""
    frames = _check_frames(ep, seq)
    scores = _log_placement_scores(ep, frames)
    t = scores.shape[0]
    return np.exp(log_softmax(scores.reshape(t, -1), axis=-1)).reshape(scores.shape)


def epitome_log_likelihood(ep: Epitome, seq: FeatureSequence) -> float:
    """Marginal log likelihood under a uniform placement prior."""
    frames = _check_frames(ep, seq)
    scores = _log_placement_scores(ep, frames)
    t = scores.shape[0]
    flat = scores.reshape(t, -1)
    m = flat.max(axis=1)
    lse = m + np.log(np.exp(flat - m[:, None]).sum(axis=1))
    return float(lse.sum() - t * np.log(flat.shape[1]))


def epitome_m_step(seq: FeatureSequence, q, learn_sigma=False,
                   prev: Epitome | None = None) -> Epitome:
    """Posterior-weighted mean (and optionally variance) at every location.

    Every placement k deposits frame offset j onto location k + j (toroidal).
    Locations that receive ~zero posterior mass keep `prev`'s values, or the
    dataset mean (variance SIGMA2_FIXED) when no previous model is given.
    """
    frames = np.asarray(seq.frames, dtype=np.float64)
    t, wx, wy, d = frames.shape
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 3 or q.shape[0] != t:
        raise DomainError(f"q shape {q.shape} incompatible with {t} frames")
    ex, ey = q.shape[1:]
    q = _check_q(q, t, (ex, ey))
    if prev is not None and (prev.grid_size != (ex, ey) or prev.window != (wx, wy)
                             or prev.dim != d):
        raise DomainError("prev epitome geometry does not match seq/q")

    q_flat = q.reshape(t, -1)
    num = np.zeros((ex, ey, d))
    sumsq = np.zeros((ex, ey, d)) if learn_sigma else None
    for jx in range(wx):
        for jy in range(wy):
            g = (q_flat.T @ frames[:, jx, jy, :]).reshape(ex, ey, d)
            num += np.roll(g, (jx, jy), axis=(0, 1))
            if learn_sigma:
                g2 = (q_flat.T @ frames[:, jx, jy, :] ** 2).reshape(ex, ey, d)
                sumsq += np.roll(g2, (jx, jy), axis=(0, 1))
    den = toroidal_window_sum_ending(q.sum(axis=0), (wx, wy))

    covered = den > ZERO_SUPPORT
    if prev is not None:
        fill_mu = prev.mu
    else:
        fill_mu = np.broadcast_to(frames.mean(axis=(0, 1, 2)), (ex, ey, d))
    safe_den = np.where(covered, den, 1.0)[..., None]
    mu = np.where(covered[..., None], num / safe_den, fill_mu)

    if learn_sigma:
        if prev is not None and prev.learned_sigma:
            fill_s2 = prev.sigma2
        else:
            fill_s2 = np.full((ex, ey, d), SIGMA2_FIXED)
        var = sumsq / safe_den - mu ** 2
        sigma2 = np.where(covered[..., None], np.maximum(var, SIGMA2_MIN), fill_s2)
    else:
        sigma2 = SIGMA2_FIXED
    return Epitome(mu=mu, sigma2=sigma2, window=(wx, wy))


def epitome_init(seq: FeatureSequence, grid_size, seed=0, learn_sigma=False) -> Epitome:
    """Dataset mean plus small seeded per-entry noise scaled by feature std."""
    frames = np.asarray(seq.frames, dtype=np.float64)
    ex, ey = grid_size
    d = seq.dim
    rng = np.random.default_rng(seed)
    mean = frames.mean(axis=(0, 1, 2))
    std = frames.std(axis=(0, 1, 2))
    mu = mean + rng.standard_normal((ex, ey, d)) * (0.01 * std)
    sigma2 = np.full((ex, ey, d), SIGMA2_FIXED) if learn_sigma else SIGMA2_FIXED
    return Epitome(mu=mu, sigma2=sigma2, window=seq.spatial)


def epitome_fit(seq: FeatureSequence, grid_size, *, max_iters=30, tol=1e-5,
                seed=0, learn_sigma=False, init: Epitome | None = None):
    """EM to convergence; per-sweep log likelihood is asserted non-decreasing.

    Returns (epitome, q). Raises NumericalError on NaN likelihood or on a
    likelihood drop beyond a small slack.
    """
    ep = init if init is not None else epitome_init(seq, grid_size, seed=seed,
                                                    learn_sigma=learn_sigma)
    frames = _check_frames(ep, seq)

    def _q_ll(model):
        scores = _log_placement_scores(model, frames)
        t = scores.shape[0]
        flat = scores.reshape(t, -1)
        log_q = log_softmax(flat, axis=-1)
        m = flat.max(axis=1)
        ll = (m + np.log(np.exp(flat - m[:, None]).sum(axis=1))).sum() \
            - t * np.log(flat.shape[1])
        return np.exp(log_q).reshape(scores.shape), float(ll)

    q, ll = _q_ll(ep)
    if not np.isfinite(ll):
        raise NumericalError("epitome_fit: non-finite likelihood at initialization")
    for sweep in range(1, max_iters + 1):
        ep = epitome_m_step(seq, q, learn_sigma=learn_sigma, prev=ep)
        q_new, ll_new = _q_ll(ep)
        if not np.isfinite(ll_new):
            raise NumericalError(f"epitome_fit: non-finite likelihood at sweep {sweep}")
        if ll_new < ll - MONOTONE_SLACK:
            raise NumericalError(
                f"epitome_fit: likelihood decreased at sweep {sweep} ({ll:.6g} -> {ll_new:.6g})")
        converged = abs(ll_new - ll) < tol * max(abs(ll), 1.0)
        q, ll = q_new, ll_new
        if converged:
            break
    return ep, q


def epitome_two_step_fit(seq: FeatureSequence, grid_size, d=64, *, max_iters=30,
                         tol=1e-5, seed=0, learn_sigma=False,
                         init: Epitome | None = None, pca=None):
    """Fast fit: estimate alignments in a d-dimensional PCA rotation of the
    frame vectors (variance fixed), then compute the full-dimension model
    once from those alignments.

    The projection is a pure rotation (no whitening) so Euclidean distances,
    and hence fixed-variance placement scores, are preserved exactly when
    d equals the input dimension. Returns (epitome over the original
    dimension, q). `init` (optional) is an Epitome in the projected space;
    `pca` (optional) supplies a pre-fitted rotation.
    """
    frames = np.asarray(seq.frames, dtype=np.float64)
    t, wx, wy, dim = frames.shape
    if d > dim:
        raise ConfigError(f"epitome_two_step_fit: d={d} exceeds feature dim {dim}")
    if pca is None:
        pca = pca_fit(frames.reshape(-1, dim), d)
    elif pca.dim_out != d or pca.dim_in != dim:
        raise ConfigError("epitome_two_step_fit: supplied pca has wrong dimensions")
    projected = pca_project(pca, frames.reshape(-1, dim)).reshape(t, wx, wy, d)
    low_seq = FeatureSequence(video_id=seq.video_id, frames=projected, fps=seq.fps)
    _, q_hat = epitome_fit(low_seq, grid_size, max_iters=max_iters, tol=tol,
                           seed=seed, learn_sigma=False, init=init)
    ep = epitome_m_step(seq, q_hat, learn_sigma=learn_sigma, prev=None)
    return ep, q_hat


def save_epitome(path, ep: Epitome, q) -> None:
    """Imprint container: magic, geometry header with a variance-mode flag,
    mu payload, optional sigma2 payload, q payload (float32)."""
    q = np.asarray(q)
    ex, ey, d = ep.mu.shape
    wx, wy = ep.window
    mode = 1 if ep.learned_sigma else 0
    with open(path, "wb") as fh:
        fh.write(EPIT_MAGIC)
        fh.write(struct.pack("<7I", ex, ey, d, wx, wy, q.shape[0], mode))
        fh.write(np.ascontiguousarray(ep.mu, dtype="<f4").tobytes())
        if mode:
            fh.write(np.ascontiguousarray(ep.sigma2, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(q, dtype="<f4").tobytes())


def load_epitome(path):
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 32:
        raise ParseError(f"{path}: header truncated")
    if data[:4] != EPIT_MAGIC:
        raise ParseError(f"{path}: bad magic {data[:4]!r}")
    ex, ey, d, wx, wy, t, mode = struct.unpack("<7I", data[4:32])
    if mode not in (0, 1):
        raise ParseError(f"{path}: bad sigma mode {mode}")
    n_mu = ex * ey * d
    n_q = t * ex * ey
    need = 32 + 4 * (n_mu * (1 + mode) + n_q)
    if len(data) != need:
        raise ParseError(f"{path}: payload size {len(data)} != expected {need}")
    off = 32
    mu = np.frombuffer(data, dtype="<f4", count=n_mu, offset=off).reshape(ex, ey, d)
    off += 4 * n_mu
    if mode:
        sigma2 = np.frombuffer(data, dtype="<f4", count=n_mu, offset=off) \
            .reshape(ex, ey, d).astype(np.float64)
        off += 4 * n_mu
    else:
        sigma2 = SIGMA2_FIXED
    q = np.frombuffer(data, dtype="<f4", count=n_q, offset=off).reshape(t, ex, ey)
    ep = Epitome(mu=mu.astype(np.float64), sigma2=sigma2, window=(wx, wy))
    return ep, q.astype(np.float64)
