"""Turn a fitted grid plus posteriors into retrieval-ready artifacts:
active maps, aggregated video vectors, per-location descriptor sets, and the
descriptor post-processing chain (power norm, PCA whitening, l2)."""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .epitome import Epitome
from .errors import ConfigError, DomainError, ParseError
from .numerics import PcaModel, l2_normalize, pca_fit, pca_whiten_project, \
    power_normalize, toroidal_window_sum_ending
from .tcg import CountingGrid

VVEC_MAGIC = b"VVEC"


@dataclass
class ActiveMap:
    """Binary mask of grid locations covered by any window placement whose
    accumulated posterior mass exceeds tau."""

    a: np.ndarray  # (Ex, Ey) bool
    tau: float

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=bool)
        if self.a.ndim != 2:
            raise DomainError(f"ActiveMap: expected 2-D mask, got {self.a.shape}")

    @property
    def n_active(self) -> int:
        return int(self.a.sum())


def build_active_map(q, window, tau, normalize_by_frames=False) -> ActiveMap:
    """Accumulate posterior mass per placement and mark every location inside
    a window whose mass exceeds tau (toroidal coverage).

    With normalize_by_frames the mass is divided by the frame count first, so
    tau acts as a per-frame fraction instead of an absolute count.
    """
    if tau < 0:
        raise ConfigError(f"build_active_map: tau must be >= 0, got {tau}")
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 3:
        raise DomainError(f"build_active_map: q must be (T, Ex, Ey), got {q.shape}")
    mass = q.sum(axis=0)
    if normalize_by_frames:
        mass = mass / q.shape[0]
    hot = (mass > tau).astype(np.float64)
    coverage = toroidal_window_sum_ending(hot, window)
    return ActiveMap(a=coverage > 0.5, tau=float(tau))


def _descriptor_field(grid) -> np.ndarray:
    if isinstance(grid, CountingGrid):
        return grid.pi
    if isinstance(grid, Epitome):
        return grid.mu
    raise DomainError(f"expected CountingGrid or Epitome, got {type(grid).__name__}")


def aggregate(grid, active: ActiveMap) -> np.ndarray:
    """Unweighted sum of the descriptors at active locations (zero vector if
    nothing is active)."""
    field = _descriptor_field(grid)
    if field.shape[:2] != active.a.shape:
        raise DomainError(f"active map {active.a.shape} != grid {field.shape[:2]}")
    if not active.a.any():
        return np.zeros(field.shape[2])
    return field[active.a].sum(axis=0)


def sum_aggregate(stack) -> np.ndarray:
    """Baseline video vector: the plain average of all per-cell feature
    vectors across frames (no alignment)."""
    arr = np.asarray(stack, dtype=np.float64)
    return arr.reshape(-1, arr.shape[-1]).mean(axis=0)


@dataclass
class ImprintDescriptorSet:
    """Descriptors at active grid locations, in row-major location order.

    post_state tracks the processing applied so far: raw, power, or whitened.
    """

    locations: np.ndarray  # (n, 2) int
    vectors: np.ndarray    # (n, dim) float64
    source: str            # "tcg" or "epitome"
    post_state: str = "raw"

    def __post_init__(self):
        self.locations = np.asarray(self.locations, dtype=int)
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if len(self.locations) != len(self.vectors):
            raise DomainError("ImprintDescriptorSet: locations/vectors length mismatch")
        if self.source not in ("tcg", "epitome"):
            raise DomainError(f"ImprintDescriptorSet: bad source {self.source!r}")

    def __len__(self) -> int:
        return len(self.vectors)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def extract_descriptors(grid, active: ActiveMap) -> ImprintDescriptorSet:
    field = _descriptor_field(grid)
    if field.shape[:2] != active.a.shape:
        raise DomainError(f"active map {active.a.shape} != grid {field.shape[:2]}")
    locs = np.argwhere(active.a)
    source = "tcg" if isinstance(grid, CountingGrid) else "epitome"
    return ImprintDescriptorSet(locations=locs, vectors=field[active.a].copy(),
                                source=source, post_state="raw")


def postprocess_video_vector(v, pca: PcaModel) -> np.ndarray:
    """l2-normalize, PCA-whiten, l2-normalize again; unit norm on output.

    A zero input (or one that whitens to zero) cannot be normalized; it is
    returned as a zero vector with a RuntimeWarning.
    """
    v = np.asarray(v, dtype=np.float64)
    if not v.any():
        warnings.warn("postprocess_video_vector: zero vector", RuntimeWarning)
        return np.zeros(pca.dim_out)
    w = pca_whiten_project(pca, l2_normalize(v))
    if not w.any():
        warnings.warn("postprocess_video_vector: vector whitened to zero", RuntimeWarning)
        return np.zeros(pca.dim_out)
    return l2_normalize(w)


def postprocess_imprint_descriptors(dset: ImprintDescriptorSet, pca: PcaModel,
                                    alpha=0.2) -> ImprintDescriptorSet:
    """Per-descriptor chain: power normalization, PCA whitening, l2."""
    if len(dset) == 0:
        return ImprintDescriptorSet(locations=dset.locations,
                                    vectors=np.zeros((0, pca.dim_out)),
                                    source=dset.source, post_state="whitened")
    powered = power_normalize(dset.vectors, alpha)
    whitened = pca_whiten_project(pca, powered)
    return ImprintDescriptorSet(locations=dset.locations,
                                vectors=l2_normalize(whitened, axis=-1),
                                source=dset.source, post_state="whitened")


def fit_video_vector_pca(vectors, dim=None, epsilon=1e-6) -> PcaModel:
    """Corpus PCA for aggregated video vectors, fitted on the l2-normalized
    corpus (matching the first step of the post-processing chain)."""
    x = l2_normalize(np.asarray(vectors, dtype=np.float64), axis=-1)
    return pca_fit(x, dim or x.shape[1], epsilon=epsilon)


def fit_descriptor_pca(dsets, dim, alpha=0.2, epsilon=1e-6) -> PcaModel:
    """Corpus PCA for imprint descriptors, fitted on power-normalized
    descriptors pooled over all videos."""
    mats = [power_normalize(d.vectors, alpha) for d in dsets if len(d)]
    if not mats:
        raise ConfigError("fit_descriptor_pca: no descriptors to fit on")
    return pca_fit(np.concatenate(mats, axis=0), dim, epsilon=epsilon)


@dataclass
class VectorStore:
    """Named unit vectors for retrieval, in insertion order."""

    ids: list[str]
    vectors: np.ndarray  # (n, dim) float

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if len(self.ids) != len(self.vectors):
            raise DomainError("VectorStore: ids/vectors length mismatch")
        if len(set(self.ids)) != len(self.ids):
            raise DomainError("VectorStore: duplicate ids")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def get(self, video_id: str) -> np.ndarray:
        return self.vectors[self.ids.index(video_id)]


def save_vector_store(path, store: VectorStore) -> None:
    with open(path, "wb") as fh:
        fh.write(VVEC_MAGIC)
        fh.write(struct.pack("<2I", len(store), store.dim))
        for vid, vec in zip(store.ids, store.vectors):
            raw = vid.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(np.ascontiguousarray(vec, dtype="<f4").tobytes())


def load_vector_store(path) -> VectorStore:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 12:
        raise ParseError(f"{path}: header truncated")
    if data[:4] != VVEC_MAGIC:
        raise ParseError(f"{path}: bad magic {data[:4]!r}")
    n, dim = struct.unpack("<2I", data[4:12])
    ids, vectors = [], np.empty((n, dim), dtype=np.float64)
    off = 12
    for i in range(n):
        if off + 4 > len(data):
            raise ParseError(f"{path}: truncated at record {i}")
        (id_len,) = struct.unpack("<I", data[off:off + 4])
        off += 4
        if off + id_len + 4 * dim > len(data):
            raise ParseError(f"{path}: truncated at record {i}")
        ids.append(data[off:off + id_len].decode("utf-8"))
        off += id_len
        vectors[i] = np.frombuffer(data, dtype="<f4", count=dim, offset=off)
        off += 4 * dim
    if off != len(data):
        raise ParseError(f"{path}: {len(data) - off} trailing bytes")
    return VectorStore(ids=ids, vectors=vectors)
