"""Feature-tensor ingestion, manifests, resampling, and synthetic datasets.

Binary feature file format ("IMPR", little-endian):

    magic   4 bytes  b"IMPR"
    version u32      1
    T       u32      number of frames
    Wx, Wy  u32      spatial size of each frame feature map
    D       u32      channels
    payload T*Wx*Wy*D float32, C order (frame, row, column, channel)

Trailing bytes after the payload are an error. The dataset manifest is a JSON
object {"label_names": [...], "entries": [{"video_id", "path", "label",
"is_query"}, ...]}; label -1 marks distractor videos, which are never queries.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, ParseError
from .numerics import l1_normalize

IMPR_MAGIC = b"IMPR"
IMPR_VERSION = 1
# refuse payloads above 2^31 floats (8 GiB); headers beyond that are corrupt
_MAX_ELEMENTS = 2 ** 31


@dataclass
class FeatureSequence:
    """Per-video stack of frame feature maps, shape (T, Wx, Wy, D)."""

    video_id: str
    frames: np.ndarray
    fps: float | None = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 4 or self.frames.shape[0] < 1:
            raise DomainError(
                f"FeatureSequence: expected (T, Wx, Wy, D) with T >= 1, got {self.frames.shape}")
        if not np.isfinite(self.frames).all():
            raise DomainError("FeatureSequence: non-finite entries")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def spatial(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]

    @property
    def dim(self) -> int:
        return self.frames.shape[3]


@dataclass
class ManifestEntry:
    video_id: str
    path: str
    label: int
    is_query: bool


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    label_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        ids = [e.video_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise DomainError("DatasetManifest: duplicate video ids")

    def queries(self) -> list[ManifestEntry]:
        return [e for e in self.entries if e.is_query]

    def labels(self) -> dict[str, int]:
        return {e.video_id: e.label for e in self.entries}


def write_features(path, seq: FeatureSequence) -> None:
    t, wx, wy, d = seq.frames.shape
    payload = np.ascontiguousarray(seq.frames, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(IMPR_MAGIC)
        fh.write(struct.pack("<5I", IMPR_VERSION, t, wx, wy, d))
        fh.write(payload)


def read_features(path, video_id: str | None = None) -> FeatureSequence:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 24:
        raise ParseError(f"{path}: header truncated")
    if data[:4] != IMPR_MAGIC:
        raise ParseError(f"{path}: bad magic {data[:4]!r}")
    version, t, wx, wy, d = struct.unpack("<5I", data[4:24])
    if version != IMPR_VERSION:
        raise ParseError(f"{path}: unsupported version {version}")
    if min(t, wx, wy, d) < 1:
        raise ParseError(f"{path}: zero dimension in header ({t}, {wx}, {wy}, {d})")
    total = t * wx * wy * d
    if total > _MAX_ELEMENTS:
        raise ParseError(f"{path}: shape overflow ({t}, {wx}, {wy}, {d})")
    need = 24 + 4 * total
    if len(data) < need:
        raise ParseError(f"{path}: truncated payload ({len(data)} bytes, expected {need})")
    if len(data) > need:
        raise ParseError(f"{path}: {len(data) - need} trailing bytes")
    frames = np.frombuffer(data, dtype="<f4", offset=24).reshape(t, wx, wy, d)
    return FeatureSequence(video_id=video_id or path.stem, frames=frames.copy())


def save_manifest(path, manifest: DatasetManifest) -> None:
    doc = {
        "label_names": manifest.label_names,
        "entries": [
            {"video_id": e.video_id, "path": e.path, "label": e.label,
             "is_query": e.is_query}
            for e in manifest.entries
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_manifest(path, check_paths=True) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict) or "entries" not in doc:
        raise ParseError(f"{path}: manifest must be an object with an 'entries' array")
    entries = []
    for rec in doc["entries"]:
        try:
            entries.append(ManifestEntry(
                video_id=str(rec["video_id"]), path=str(rec["path"]),
                label=int(rec["label"]), is_query=bool(rec["is_query"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: bad manifest entry {rec!r}") from exc
    manifest = DatasetManifest(entries=entries,
                               label_names=list(doc.get("label_names", [])))
    if check_paths:
        base = path.parent
        for e in manifest.entries:
            p = Path(e.path)
            if not p.is_absolute():
                p = base / p
            if not p.exists():
                raise ParseError(f"{path}: feature file not found: {e.path}")
    return manifest


def resolve_feature_path(manifest_path, entry: ManifestEntry) -> Path:
    p = Path(entry.path)
    return p if p.is_absolute() else Path(manifest_path).parent / p


def bilinear_resize(arr, out_hw):
    """Resample the first two axes of arr to out_hw with bilinear interpolation.

    Sample centers follow the half-pixel convention: output cell i reads the
    input at (i + 0.5) * in/out - 0.5, clamped to the valid range.
    """
    arr = np.asarray(arr, dtype=np.float64)
    h_in, w_in = arr.shape[:2]
    h_out, w_out = out_hw
    if h_out < 1 or w_out < 1:
        raise DomainError(f"bilinear_resize: bad output size {out_hw}")

    def _axis_coords(n_in, n_out):
        x = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
        x = np.clip(x, 0.0, n_in - 1.0)
        lo = np.floor(x).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, x - lo

    x0, x1, fx = _axis_coords(h_in, h_out)
    y0, y1, fy = _axis_coords(w_in, w_out)
    r0, r1 = arr[x0], arr[x1]
    extra = (1,) * (arr.ndim - 2)
    fx = fx.reshape(-1, 1, *extra)
    fy = fy.reshape(1, -1, *extra)
    top = r0[:, y0] * (1 - fy) + r0[:, y1] * fy
    bot = r1[:, y0] * (1 - fy) + r1[:, y1] * fy
    return top * (1 - fx) + bot * fx


def downsample_to_tessellation(seq: FeatureSequence, tessellation):
    """Resample each frame to (Sx, Sy) cells and l1-normalize each cell.

    Returns float64 counts of shape (T, Sx, Sy, D). Inputs must be
    nonnegative (post-ReLU convention of count-style features).
    """
    sx, sy = tessellation
    wx, wy = seq.spatial
    if sx > wx or sy > wy:
        raise DomainError(
            f"downsample_to_tessellation: tessellation {tessellation} exceeds frame {seq.spatial}")
    frames = np.asarray(seq.frames, dtype=np.float64)
    if frames.min() < 0:
        raise DomainError("downsample_to_tessellation: negative entries (counts require >= 0)")
    cells = np.stack([bilinear_resize(f, (sx, sy)) for f in frames])
    return l1_normalize(cells, axis=-1)


@dataclass
class SynthSpec:
    """Parameters of the planted-shot synthetic dataset generator.

    Each event owns `shot_pool_size` prototype shot tensors supported on a
    channel block disjoint from other events; a shared distractor pool lives
    on its own block and is mixed into event videos (and makes up distractor
    videos entirely), planting cross-event redundancy. Videos are sequences
    of shot segments with run lengths up to `max_repeat`.
    """

    n_events: int = 3
    videos_per_event: int = 10
    frames_per_video: int = 24
    shot_pool_size: int = 4
    distractor_ratio: float = 0.5
    noise_sigma: float = 0.02
    seed: int = 0
    feature_dim: int = 48
    frame_size: tuple[int, int] = (8, 8)
    distractor_pool_size: int = 4
    distractor_frame_prob: float = 0.25
    max_repeat: int = 6
    queries_per_event: int = 2
    common_share: float = 0.4      # fraction of a block carrying the pool's shared backdrop
    spatial_density: float = 0.7   # fraction of cells where a shot is nonzero
    mix_concentration: float = 0.7  # Dirichlet skew of each video's shot mix

    def validate(self):
        counts = dict(n_events=self.n_events, videos_per_event=self.videos_per_event,
                      frames_per_video=self.frames_per_video,
                      shot_pool_size=self.shot_pool_size,
                      distractor_pool_size=self.distractor_pool_size,
                      max_repeat=self.max_repeat, feature_dim=self.feature_dim)
        for name, value in counts.items():
            if value < 1:
                raise ConfigError(f"SynthSpec: {name} must be >= 1, got {value}")
        if self.noise_sigma < 0:
            raise ConfigError("SynthSpec: noise_sigma must be >= 0")
        if self.distractor_ratio < 0:
            raise ConfigError("SynthSpec: distractor_ratio must be >= 0")
        if not 0.0 <= self.distractor_frame_prob < 1.0:
            raise ConfigError("SynthSpec: distractor_frame_prob must be in [0, 1)")
        if self.feature_dim < self.n_events + 1:
            raise ConfigError("SynthSpec: feature_dim must be >= n_events + 1 "
                              "(one channel block per event plus the distractor block)")
        if self.queries_per_event < 1 or self.queries_per_event > self.videos_per_event:
            raise ConfigError("SynthSpec: queries_per_event must be in [1, videos_per_event]")
        if not 0.0 <= self.common_share < 1.0 or not 0.0 < self.spatial_density <= 1.0:
            raise ConfigError("SynthSpec: common_share must be in [0, 1), "
                              "spatial_density in (0, 1]")
        if self.mix_concentration <= 0:
            raise ConfigError("SynthSpec: mix_concentration must be > 0")


def _channel_blocks(dim, n_groups):
    """Split [0, dim) into n_groups contiguous, disjoint channel blocks."""
    bounds = np.linspace(0, dim, n_groups + 1).astype(int)
    return [(int(bounds[i]), int(bounds[i + 1])) for i in range(n_groups)]


def _make_shots(rng, n_shots, frame_size, dim, block, common_share, spatial_density):
    """Sparse prototype shots on a channel block, mimicking the sparse firing
    of rectified convolutional maps.

    The pool shares a common backdrop on the first channels of the block (so
    every shot of one event stays recognizably similar), while each shot owns
    an exclusive slice of the remaining channels with its own spatial
    footprint (so shots are mutually distinguishable for alignment).
    """
    lo, hi = block
    width = hi - lo
    n_common = int(round(width * common_share))
    shots = np.zeros((n_shots, *frame_size, dim), dtype=np.float64)
    backdrop = np.zeros((*frame_size, width))
    if n_common:
        backdrop[..., :n_common] = rng.uniform(0.5, 1.5, size=(*frame_size, n_common)) \
            * (rng.random((*frame_size, 1)) < spatial_density)
    own = np.array_split(np.arange(n_common, width), n_shots)
    for s in range(n_shots):
        part = np.zeros((*frame_size, width))
        chans = own[s] if len(own[s]) else np.array([n_common + s % max(width - n_common, 1)])
        chans = chans[chans < width]
        part[..., chans] = rng.uniform(0.5, 1.5, size=(*frame_size, len(chans))) \
            * (rng.random((*frame_size, 1)) < spatial_density)
        shots[s, ..., lo:hi] = backdrop + part
    return shots


def _assemble_video(rng, spec: SynthSpec, event_shots, distractor_shots):
    """Draw a shot-segment sequence; returns (frames, source tags, shot ids).

    Event videos spend at most distractor_frame_prob of their frames on the
    shared distractor pool (budgeted, so no event video degenerates into
    mostly-distractor content); distractor videos use the shared pool only.
    Each video draws its own Dirichlet preference over the pool, so some
    shots recur far more than others (the redundancy sum-aggregation
    over-counts and alignment is meant to absorb).
    """
    n = spec.frames_per_video
    frames = np.empty((n, *spec.frame_size, spec.feature_dim), dtype=np.float64)
    sources, shot_ids = [], []
    budget = n if event_shots is None else int(round(spec.distractor_frame_prob * n))
    used_distractor = 0
    mix = {}
    for key, pool in (("event", event_shots), ("distractor", distractor_shots)):
        if pool is not None:
            mix[key] = rng.dirichlet(np.full(len(pool), spec.mix_concentration))
    t = 0
    while t < n:
        use_distractor = event_shots is None or (
            used_distractor < budget and rng.random() < spec.distractor_frame_prob)
        pool = distractor_shots if use_distractor else event_shots
        idx = int(rng.choice(len(pool),
                             p=mix["distractor" if use_distractor else "event"]))
        run = int(rng.integers(1, spec.max_repeat + 1))
        run = min(run, n - t)
        if use_distractor and event_shots is not None:
            run = min(run, budget - used_distractor)
            used_distractor += run
        noise = rng.normal(0.0, spec.noise_sigma, size=(run, *spec.frame_size, spec.feature_dim)) \
            if spec.noise_sigma > 0 else 0.0
        frames[t:t + run] = np.maximum(pool[idx] + noise, 0.0)
        sources.extend(["distractor" if use_distractor else "event"] * run)
        shot_ids.extend([idx] * run)
        t += run
    return frames, sources, shot_ids


def synth_two_shot_sequence(n_frames, frame_size=(8, 8), dim=64, noise_sigma=0.05,
                            seed=0, video_id="two_shot", proto_rank=4):
    """Single sequence alternating between two prototype shots in runs, with
    per-frame Gaussian noise (clipped at zero). Returns the sequence and the
    per-frame shot labels (0 or 1); handy for alignment benchmarks.

    Prototypes are low-rank across space (proto_rank spatial patterns times
    channel directions), mimicking the channel structure of real feature maps
    so that modest PCA projections preserve the placement geometry.
    """
    if n_frames < 2:
        raise ConfigError("synth_two_shot_sequence: need at least 2 frames")
    rng = np.random.default_rng(seed)
    spatial = rng.uniform(0.0, 1.0, size=(2, proto_rank, *frame_size))
    channel = rng.uniform(0.5, 1.5, size=(2, proto_rank, dim))
    protos = np.einsum("grxy,grd->gxyd", spatial, channel)
    frames = np.empty((n_frames, *frame_size, dim), dtype=np.float64)
    labels = np.empty(n_frames, dtype=int)
    t, shot = 0, 0
    while t < n_frames:
        run = min(int(rng.integers(2, 6)), n_frames - t)
        noise = rng.normal(0.0, noise_sigma, size=(run, *frame_size, dim)) \
            if noise_sigma > 0 else 0.0
        frames[t:t + run] = np.maximum(protos[shot] + noise, 0.0)
        labels[t:t + run] = shot
        shot = 1 - shot
        t += run
    seq = FeatureSequence(video_id=video_id, frames=frames.astype(np.float32))
    return seq, labels


def synth_event_dataset(spec: SynthSpec, out_dir):
    """Generate feature files plus a manifest for a planted-event dataset.

    Writes one IMPR file per video under out_dir/features, a manifest.json,
    and an annotations.json recording per-frame shot provenance (which
    segments came from the shared distractor pool). Deterministic in `seed`.
    Returns (manifest, annotations).
    """
    spec.validate()
    out_dir = Path(out_dir)
    feat_dir = out_dir / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)

    blocks = _channel_blocks(spec.feature_dim, spec.n_events + 1)
    event_pools = [_make_shots(rng, spec.shot_pool_size, spec.frame_size,
                               spec.feature_dim, blocks[e],
                               spec.common_share, spec.spatial_density)
                   for e in range(spec.n_events)]
    distractor_pool = _make_shots(rng, spec.distractor_pool_size, spec.frame_size,
                                  spec.feature_dim, blocks[-1],
                                  spec.common_share, spec.spatial_density)

    entries, annotations = [], {}

    def _emit(video_id, frames, label, is_query, sources, shot_ids):
        seq = FeatureSequence(video_id=video_id, frames=frames.astype(np.float32))
        rel = f"features/{video_id}.impr"
        write_features(out_dir / rel, seq)
        entries.append(ManifestEntry(video_id=video_id, path=rel, label=label,
                                     is_query=is_query))
        annotations[video_id] = {"source": sources, "shot_index": shot_ids}

    for e in range(spec.n_events):
        for v in range(spec.videos_per_event):
            frames, sources, shot_ids = _assemble_video(
                rng, spec, event_pools[e], distractor_pool)
            _emit(f"ev{e:02d}_v{v:03d}", frames, e, v < spec.queries_per_event,
                  sources, shot_ids)

    n_distractor_videos = int(round(spec.distractor_ratio
                                    * spec.n_events * spec.videos_per_event))
    for v in range(n_distractor_videos):
        frames, sources, shot_ids = _assemble_video(rng, spec, None, distractor_pool)
        _emit(f"dis_v{v:04d}", frames, -1, False, sources, shot_ids)

    manifest = DatasetManifest(entries=entries,
                               label_names=[f"event_{e}" for e in range(spec.n_events)])
    save_manifest(out_dir / "manifest.json", manifest)
    (out_dir / "annotations.json").write_text(json.dumps(annotations) + "\n")
    return manifest, annotations
