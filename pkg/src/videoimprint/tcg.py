"""Tessellated counting grid: EM alignment of count features on a torus.

The model places an Sx-by-Sy tessellation of count vectors inside a window
that slides (with wrap-around) over an Ex-by-Ey grid of normalized count
distributions `pi`. The E-step scores every window placement for every frame
through sub-window sums of `pi`; the M-step reweights `pi` multiplicatively
by the posterior-weighted counts. Sub-window sums are computed with
cumulative sums so each sweep costs O(T * Sx * Sy * Ex * Ey * Z).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, NumericalError, ParseError
from .numerics import l1_normalize, log_softmax, toroidal_window_sum, toroidal_window_sum_ending

PI_FLOOR = 1e-10
MONOTONE_SLACK = 1e-6
TCGI_MAGIC = b"TCGI"


@dataclass
class CountingGrid:
    """Grid of l1-normalized count distributions plus window geometry.

    pi has shape (Ex, Ey, Z); the window (Wx, Wy) must divide evenly into the
    tessellation (Sx, Sy) so sub-windows tile the window exactly.
    """

    pi: np.ndarray
    window: tuple[int, int]
    tessellation: tuple[int, int]

    def __post_init__(self):
        self.pi = np.asarray(self.pi, dtype=np.float64)
        if self.pi.ndim != 3:
            raise ConfigError(f"CountingGrid: pi must be (Ex, Ey, Z), got {self.pi.shape}")
        ex, ey, _ = self.pi.shape
        wx, wy = self.window
        sx, sy = self.tessellation
        if wx < 1 or wy < 1 or wx > ex or wy > ey:
            raise ConfigError(f"CountingGrid: window {self.window} incompatible with grid ({ex}, {ey})")
        if wx % sx or wy % sy:
            raise ConfigError(
                f"CountingGrid: window {self.window} not divisible by tessellation {self.tessellation}")

    @property
    def grid_size(self) -> tuple[int, int]:
        return self.pi.shape[0], self.pi.shape[1]

    @property
    def n_channels(self) -> int:
        return self.pi.shape[2]

    @property
    def block(self) -> tuple[int, int]:
        """Size of one sub-window cell on the grid."""
        return self.window[0] // self.tessellation[0], self.window[1] // self.tessellation[1]


def _check_counts(grid: CountingGrid, counts: np.ndarray) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.float64)
    sx, sy = grid.tessellation
    if counts.ndim != 4 or counts.shape[1:3] != (sx, sy) or counts.shape[3] != grid.n_channels:
        raise DomainError(
            f"counts shape {counts.shape} incompatible with tessellation {grid.tessellation} "
            f"and Z={grid.n_channels}")
    sums = counts.sum(axis=-1)
    if np.abs(sums - 1.0).max() > 1e-6:
        raise DomainError("counts cells must each sum to 1")
    return counts


def _log_placement_scores(grid: CountingGrid, counts: np.ndarray) -> np.ndarray:
    """Unnormalized log q: scores[t, kx, ky] sums counts against log
    sub-window sums of pi over all toroidal placements k."""
    bx, by = grid.block
    sx, sy = grid.tessellation
    block_sums = toroidal_window_sum(grid.pi, (bx, by))
    log_b = np.log(block_sums)
    t = counts.shape[0]
    ex, ey = grid.grid_size
    scores = np.zeros((t, ex, ey))
    for ix in range(sx):
        for iy in range(sy):
            shifted = np.roll(log_b, (-ix * bx, -iy * by), axis=(0, 1))
            scores += np.tensordot(counts[:, ix, iy, :], shifted, axes=(1, 2))
    return scores


def tcg_e_step(grid: CountingGrid, counts) -> np.ndarray:
    """Posterior q over window placements, shape (T, Ex, Ey)."""
    counts = _check_counts(grid, counts)
    scores = _log_placement_scores(grid, counts)
    t = scores.shape[0]
    log_q = log_softmax(scores.reshape(t, -1), axis=-1)
    return np.exp(log_q).reshape(scores.shape)


def tcg_free_energy(grid: CountingGrid, counts) -> float:
    """Variational free energy (negative evidence bound); EM never increases it."""
    counts = _check_counts(grid, counts)
    scores = _log_placement_scores(grid, counts)
    t = scores.shape[0]
    flat = scores.reshape(t, -1)
    m = flat.max(axis=1)
    return float(-(m + np.log(np.exp(flat - m[:, None]).sum(axis=1))).sum())


def tcg_m_step(grid: CountingGrid, counts, q) -> CountingGrid:
    """Multiplicative update of pi followed by per-location renormalization.

    Each grid location accumulates, over frames and tessellation cells, the
    posterior mass of every placement whose sub-window covers it, divided by
    that sub-window's current sum.
    """
    counts = _check_counts(grid, counts)
    q = np.asarray(q, dtype=np.float64)
    ex, ey = grid.grid_size
    if q.ndim != 3 or q.shape[1:] != (ex, ey) or q.shape[0] != counts.shape[0]:
        raise DomainError(f"q shape {q.shape} incompatible with grid ({ex}, {ey})")
    if np.abs(q.sum(axis=(1, 2)) - 1.0).max() > 1e-6:
        raise DomainError("q must be normalized per frame")

    bx, by = grid.block
    sx, sy = grid.tessellation
    inv_b = 1.0 / toroidal_window_sum(grid.pi, (bx, by))
    acc = np.zeros_like(grid.pi)
    for ix in range(sx):
        for iy in range(sy):
            # q at the placement whose (ix, iy) sub-window starts at u
            q_shift = np.roll(q, (ix * bx, iy * by), axis=(1, 2))
            weighted = np.tensordot(q_shift, counts[:, ix, iy, :], axes=(0, 0))
            acc += toroidal_window_sum_ending(weighted * inv_b, (bx, by))
    pi_new = l1_normalize(grid.pi * acc, axis=-1)
    pi_new = np.maximum(pi_new, PI_FLOOR)
    return CountingGrid(pi=pi_new, window=grid.window, tessellation=grid.tessellation)


def tcg_init(n_channels, grid_size, window, tessellation, seed=0) -> CountingGrid:
    """Near-uniform grid with a small seeded perturbation to break ties."""
    rng = np.random.default_rng(seed)
    ex, ey = grid_size
    pi = 1.0 + rng.uniform(0.0, 0.05, size=(ex, ey, n_channels))
    pi = np.maximum(l1_normalize(pi, axis=-1), PI_FLOOR)
    return CountingGrid(pi=pi, window=tuple(window), tessellation=tuple(tessellation))


def tcg_fit(counts, grid_size, window, *, max_iters=30, tol=1e-5, seed=0,
            init: CountingGrid | None = None):
    """Alternate E/M steps from a seeded initialization until the free energy
    improves by less than `tol` (relative) or `max_iters` is reached.

    Returns (grid, q). Raises NumericalError with the sweep index if the free
    energy turns NaN or increases beyond a small slack.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim != 4:
        raise DomainError(f"counts must be (T, Sx, Sy, Z), got {counts.shape}")
    tessellation = counts.shape[1:3]
    grid = init if init is not None else tcg_init(
        counts.shape[3], grid_size, window, tessellation, seed=seed)
    counts = _check_counts(grid, counts)

    def _scores_q_f(g):
        scores = _log_placement_scores(g, counts)
        t = scores.shape[0]
        flat = scores.reshape(t, -1)
        log_q = log_softmax(flat, axis=-1)
        m = flat.max(axis=1)
        f = -(m + np.log(np.exp(flat - m[:, None]).sum(axis=1))).sum()
        return np.exp(log_q).reshape(scores.shape), float(f)

    q, f = _scores_q_f(grid)
    if not np.isfinite(f):
        raise NumericalError("tcg_fit: non-finite free energy at initialization")
    for sweep in range(1, max_iters + 1):
        grid = tcg_m_step(grid, counts, q)
        q_new, f_new = _scores_q_f(grid)
        if not np.isfinite(f_new):
            raise NumericalError(f"tcg_fit: non-finite free energy at sweep {sweep}")
        if f_new > f + MONOTONE_SLACK:
            raise NumericalError(
                f"tcg_fit: free energy increased at sweep {sweep} ({f:.6g} -> {f_new:.6g})")
        converged = abs(f_new - f) < tol * max(abs(f), 1.0)
        q, f = q_new, f_new
        if converged:
            break
    return grid, q


def save_counting_grid(path, grid: CountingGrid, q) -> None:
    """Imprint container: magic, geometry header, pi payload, q payload (float32)."""
    q = np.asarray(q)
    ex, ey, z = grid.pi.shape
    wx, wy = grid.window
    sx, sy = grid.tessellation
    with open(path, "wb") as fh:
        fh.write(TCGI_MAGIC)
        fh.write(struct.pack("<8I", ex, ey, z, wx, wy, sx, sy, q.shape[0]))
        fh.write(np.ascontiguousarray(grid.pi, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(q, dtype="<f4").tobytes())


def load_counting_grid(path):
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 36:
        raise ParseError(f"{path}: header truncated")
    if data[:4] != TCGI_MAGIC:
        raise ParseError(f"{path}: bad magic {data[:4]!r}")
    ex, ey, z, wx, wy, sx, sy, t = struct.unpack("<8I", data[4:36])
    n_pi, n_q = ex * ey * z, t * ex * ey
    need = 36 + 4 * (n_pi + n_q)
    if len(data) != need:
        raise ParseError(f"{path}: payload size {len(data)} != expected {need}")
    pi = np.frombuffer(data, dtype="<f4", count=n_pi, offset=36).reshape(ex, ey, z)
    q = np.frombuffer(data, dtype="<f4", count=n_q, offset=36 + 4 * n_pi).reshape(t, ex, ey)
    grid = CountingGrid(pi=pi.astype(np.float64), window=(wx, wy), tessellation=(sx, sy))
    return grid, q.astype(np.float64)
