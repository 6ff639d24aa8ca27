"""Command-line pipeline: synthesize data, fit imprints, aggregate vectors,
train/evaluate the reasoning network, recount frames, retrieve, and benchmark
the two-stage epitome fit.

Configuration comes from a JSON config file plus flag overrides (flags win);
the effective configuration is echoed into every output directory. Exit
codes: 0 ok, 2 configuration, 3 data/parse, 4 numerical, 1 unexpected.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import epitome as ep_mod
from . import tcg as tcg_mod
from .errors import ConfigError, DomainError, NumericalError, ParseError, VideoImprintError
from .features import (DatasetManifest, FeatureSequence, SynthSpec, bilinear_resize,
                       downsample_to_tessellation, load_manifest, read_features,
                       resolve_feature_path, synth_event_dataset,
                       synth_two_shot_sequence)
from .imprint import (VectorStore, aggregate, build_active_map, extract_descriptors,
                      fit_descriptor_pca, fit_video_vector_pca, load_vector_store,
                      postprocess_imprint_descriptors, postprocess_video_vector,
                      save_vector_store, sum_aggregate)
from .numerics import PcaModel, pca_fit, pca_project
from .retrieval import aqe_rerank, don_rerank, evaluate_map, load_run, rank, \
    save_report, save_run
from .rnet import (load_rnet, recount, render_recounting, rnet_forward,
                   rnet_predict, rnet_train, save_rnet)

MODELS = ("tcg", "epitome", "epitome2step")
WORKERS_ENV = "VIDEOIMPRINT_WORKERS"


@dataclass
class PipelineConfig:
    model: str = "tcg"
    grid: tuple[int, int] = (24, 24)
    window: tuple[int, int] = (8, 8)
    tessellation: tuple[int, int] = (4, 4)
    d: int = 64                 # projection dim of the two-stage epitome fit
    tau: float = 4.0
    tau_per_frame: bool = False
    alpha: float = 0.2
    pca_dim: int = 16           # whitening target dim for vectors/descriptors
    hops: int = 3
    head: str = "softmax"
    epochs: int = 20
    base_lr: float = 0.025
    anneal_every: int = 5
    batch_size: int = 128
    clip_norm: float = 20.0
    init_sigma: float = 0.05
    max_iters: int = 30
    tol: float = 1e-5
    seed: int = 0
    workers: int = 1

    def validate(self):
        if self.model not in MODELS:
            raise ConfigError(f"config: model must be one of {MODELS}, got {self.model!r}")
        for name in ("grid", "window", "tessellation"):
            pair = getattr(self, name)
            if len(pair) != 2 or min(pair) < 1:
                raise ConfigError(f"config: {name} must be two positive ints, got {pair}")
        if self.window[0] > self.grid[0] or self.window[1] > self.grid[1]:
            raise ConfigError(f"config: window {self.window} exceeds grid {self.grid}")
        if self.window[0] % self.tessellation[0] or self.window[1] % self.tessellation[1]:
            raise ConfigError(
                f"config: window {self.window} not divisible by tessellation {self.tessellation}")
        if self.tau < 0:
            raise ConfigError(f"config: tau must be >= 0, got {self.tau}")
        if not 0 < self.alpha <= 1:
            raise ConfigError(f"config: alpha must be in (0, 1], got {self.alpha}")
        for name in ("d", "pca_dim", "hops", "epochs", "anneal_every", "batch_size",
                     "max_iters", "workers"):
            if getattr(self, name) < (0 if name in ("max_iters", "epochs") else 1):
                raise ConfigError(f"config: {name} out of range ({getattr(self, name)})")
        if self.head not in ("softmax", "mlp"):
            raise ConfigError(f"config: head must be softmax or mlp, got {self.head!r}")
        return self


def _parse_pair(text):
    parts = text.lower().replace("x", ",").split(",")
    if len(parts) == 1:
        parts = parts * 2
    try:
        return int(parts[0]), int(parts[1])
    except ValueError as exc:
        raise ConfigError(f"expected INT or INTxINT, got {text!r}") from exc


def load_config(path=None, overrides=None) -> PipelineConfig:
    cfg = PipelineConfig()
    if path:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"config file {path}: {exc}") from exc
        known = {f.name for f in fields(PipelineConfig)}
        bad = set(doc) - known
        if bad:
            raise ConfigError(f"config file {path}: unknown keys {sorted(bad)}")
        for name in ("grid", "window", "tessellation"):
            if name in doc:
                doc[name] = tuple(doc[name]) if isinstance(doc[name], list) \
                    else _parse_pair(str(doc[name]))
        cfg = replace(cfg, **doc)
    if overrides:
        cfg = replace(cfg, **overrides)
    return cfg.validate()


def echo_config(cfg: PipelineConfig, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "effective_config.json").write_text(
        json.dumps(asdict(cfg), indent=2, sort_keys=True) + "\n")


def _worker_count(cfg: PipelineConfig) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}") from exc
    return max(1, cfg.workers)


def _parallel_map(fn, items, workers):
    """Order-preserving map over a bounded thread pool; results are collected
    by index so the output never depends on the worker count."""
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# per-video pipeline pieces (also used by tests and demo scripts)

def imprint_path(out_dir, video_id, model) -> Path:
    ext = "tcgi" if model == "tcg" else "epit"
    return Path(out_dir) / f"{video_id}.{ext}"


def fit_video_imprint(seq: FeatureSequence, cfg: PipelineConfig, seed):
    """Fit one video's imprint; returns (grid_or_epitome, q)."""
    if cfg.model == "tcg":
        counts = downsample_to_tessellation(seq, cfg.tessellation)
        return tcg_mod.tcg_fit(counts, cfg.grid, cfg.window,
                               max_iters=cfg.max_iters, tol=cfg.tol, seed=seed)
    frames = np.asarray(seq.frames, dtype=np.float64)
    if seq.spatial != cfg.window:
        frames = np.stack([bilinear_resize(f, cfg.window) for f in frames])
        seq = FeatureSequence(video_id=seq.video_id, frames=frames, fps=seq.fps)
    if cfg.model == "epitome":
        return ep_mod.epitome_fit(seq, cfg.grid, max_iters=cfg.max_iters,
                                  tol=cfg.tol, seed=seed)
    d = min(cfg.d, seq.dim)
    return ep_mod.epitome_two_step_fit(seq, cfg.grid, d=d, max_iters=cfg.max_iters,
                                       tol=cfg.tol, seed=seed)


def load_imprint(path):
    """Load a saved imprint by magic; returns (grid_or_epitome, q)."""
    path = Path(path)
    magic = path.read_bytes()[:4]
    if magic == tcg_mod.TCGI_MAGIC:
        return tcg_mod.load_counting_grid(path)
    if magic == ep_mod.EPIT_MAGIC:
        return ep_mod.load_epitome(path)
    raise ParseError(f"{path}: unknown imprint magic {magic!r}")


def save_imprint(path, grid, q):
    if isinstance(grid, tcg_mod.CountingGrid):
        tcg_mod.save_counting_grid(path, grid, q)
    else:
        ep_mod.save_epitome(path, grid, q)


def video_descriptors(grid, q, cfg: PipelineConfig):
    """Active map and raw descriptor set for one fitted imprint."""
    window = grid.window
    active = build_active_map(q, window, cfg.tau, normalize_by_frames=cfg.tau_per_frame)
    return active, extract_descriptors(grid, active)


def save_pca(path, pca: PcaModel) -> None:
    np.savez(path, mean=pca.mean, basis=pca.basis, eigenvalues=pca.eigenvalues,
             epsilon=np.float64(pca.epsilon))


def load_pca(path) -> PcaModel:
    try:
        with np.load(path) as doc:
            return PcaModel(mean=doc["mean"], basis=doc["basis"],
                            eigenvalues=doc["eigenvalues"],
                            epsilon=float(doc["epsilon"]))
    except (OSError, KeyError, ValueError) as exc:
        raise ParseError(f"{path}: not a PCA model file ({exc})") from exc


def _check_overwrite(paths, overwrite):
    if overwrite:
        return
    clashes = [str(p) for p in paths if Path(p).exists()]
    if clashes:
        raise ConfigError(
            f"refusing to overwrite existing artifacts (use --overwrite): {clashes[:3]}")


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(args) -> int:
    cfg = load_config(args.config, _collect_overrides(args))
    spec = SynthSpec(n_events=args.events, videos_per_event=args.videos_per_event,
                     frames_per_video=args.frames, shot_pool_size=args.shot_pool,
                     distractor_ratio=args.distractor_ratio,
                     noise_sigma=args.noise_sigma, seed=cfg.seed,
                     feature_dim=args.feature_dim,
                     frame_size=cfg.window,
                     distractor_frame_prob=args.distractor_frame_prob,
                     queries_per_event=args.queries_per_event)
    out = Path(args.out)
    _check_overwrite([out / "manifest.json"], args.overwrite)
    manifest, _ = synth_event_dataset(spec, out)
    echo_config(cfg, out)
    n_distractors = sum(1 for e in manifest.entries if e.label < 0)
    print(f"synth: {len(manifest.entries)} videos "
          f"({spec.n_events} events, {n_distractors} distractors) -> {out}")
    return 0


def cmd_imprint(args) -> int:
    cfg = load_config(args.config, _collect_overrides(args))
    manifest = load_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = [imprint_path(out, e.video_id, cfg.model) for e in manifest.entries]
    _check_overwrite(paths, args.overwrite)

    def _one(idx_entry):
        idx, entry = idx_entry
        seq = read_features(resolve_feature_path(args.manifest, entry), entry.video_id)
        grid, q = fit_video_imprint(seq, cfg, seed=[cfg.seed, idx])
        save_imprint(paths[idx], grid, q)
        return entry.video_id

    done = _parallel_map(_one, list(enumerate(manifest.entries)), _worker_count(cfg))
    echo_config(cfg, out)
    print(f"imprint: {len(done)} videos -> {out} (model={cfg.model})")
    return 0


def _load_all_imprints(manifest, imprints_dir, cfg):
    pairs = []
    for entry in manifest.entries:
        path = imprint_path(imprints_dir, entry.video_id, cfg.model)
        if not path.exists():
            raise ParseError(f"missing imprint for {entry.video_id}: {path}")
        pairs.append((entry, *load_imprint(path)))
    return pairs


def cmd_aggregate(args) -> int:
    cfg = load_config(args.config, _collect_overrides(args))
    manifest = load_manifest(args.manifest)
    imprints = _load_all_imprints(manifest, Path(args.imprints), cfg)

    raw = []
    for entry, grid, q in imprints:
        active, _ = video_descriptors(grid, q, cfg)
        raw.append(aggregate(grid, active))
    raw = np.stack(raw)
    pca = fit_video_vector_pca(raw, min(cfg.pca_dim, raw.shape[1]))
    vectors = np.stack([postprocess_video_vector(v, pca) for v in raw])
    store = VectorStore(ids=[e.video_id for e in manifest.entries], vectors=vectors)
    _check_overwrite([args.out], args.overwrite)
    save_vector_store(args.out, store)
    echo_config(cfg, Path(args.out).parent)
    print(f"aggregate: {len(store)} vectors (dim={store.dim}) -> {args.out}")

    if args.baseline_out:
        base_raw = []
        for entry in manifest.entries:
            seq = read_features(resolve_feature_path(args.manifest, entry), entry.video_id)
            if cfg.model == "tcg":
                base_raw.append(sum_aggregate(downsample_to_tessellation(seq, cfg.tessellation)))
            else:
                base_raw.append(sum_aggregate(seq.frames))
        base_raw = np.stack(base_raw)
        base_pca = fit_video_vector_pca(base_raw, min(cfg.pca_dim, base_raw.shape[1]))
        base_vecs = np.stack([postprocess_video_vector(v, base_pca) for v in base_raw])
        base = VectorStore(ids=[e.video_id for e in manifest.entries], vectors=base_vecs)
        save_vector_store(args.baseline_out, base)
        print(f"aggregate: baseline store -> {args.baseline_out}")
    return 0


def make_training_samples(manifest, imprints_dir, cfg, pca=None):
    """Whitened descriptor sets plus labels for every non-distractor video.

    Fits the corpus descriptor PCA (power-normalized descriptors pooled over
    the dataset) unless one is supplied. Returns (samples, pca) where samples
    maps video_id -> (descriptor set, active map, label, is_query).
    """
    pairs = [(e, g, q) for e, g, q in _load_all_imprints(manifest, imprints_dir, cfg)
             if e.label >= 0]
    if not pairs:
        raise ConfigError("no labeled videos to train on")
    prepared = []
    for entry, grid, q in pairs:
        active, dset = video_descriptors(grid, q, cfg)
        prepared.append((entry, active, dset))
    if pca is None:
        dim = min(cfg.pca_dim, prepared[0][2].dim)
        pca = fit_descriptor_pca([d for _, _, d in prepared], dim, alpha=cfg.alpha)
    samples = {}
    for entry, active, dset in prepared:
        white = postprocess_imprint_descriptors(dset, pca, alpha=cfg.alpha)
        samples[entry.video_id] = (white, active, entry.label, entry.is_query)
    return samples, pca


def cmd_train(args) -> int:
    cfg = load_config(args.config, _collect_overrides(args))
    manifest = load_manifest(args.manifest)
    samples, pca = make_training_samples(manifest, Path(args.imprints), cfg)
    train = [(d, a, lab) for d, a, lab, is_q in samples.values() if not is_q]
    held = [(d, a, lab) for d, a, lab, is_q in samples.values() if is_q]
    if not train:
        raise ConfigError("no non-query training videos in manifest")
    n_classes = max(lab for _, _, lab in train) + 1
    net = rnet_train(train, n_classes, hops=cfg.hops, head_kind=cfg.head,
                     epochs=cfg.epochs, base_lr=cfg.base_lr,
                     anneal_every=cfg.anneal_every, batch_size=cfg.batch_size,
                     clip_norm=cfg.clip_norm, init_sigma=cfg.init_sigma,
                     seed=cfg.seed)
    _check_overwrite([args.out], args.overwrite)
    save_rnet(args.out, net)
    pca_path = args.pca_out or str(args.out) + ".pca.npz"
    save_pca(pca_path, pca)
    echo_config(cfg, Path(args.out).parent)

    def _acc(subset):
        if not subset:
            return float("nan")
        hits = sum(rnet_predict(net, d, a) == lab for d, a, lab in subset)
        return hits / len(subset)

    print(f"train: {len(train)} videos, {n_classes} classes -> {args.out} "
          f"(train acc={_acc(train):.3f}, query acc={_acc(held):.3f})")
    return 0


def cmd_recount(args) -> int:
    cfg = load_config(args.config, _collect_overrides(args))
    net = load_rnet(args.net)
    pca = load_pca(args.pca or str(args.net) + ".pca.npz")
    grid, q = load_imprint(args.imprint)
    active, dset = video_descriptors(grid, q, cfg)
    white = postprocess_imprint_descriptors(dset, pca, alpha=cfg.alpha)
    logp, trace = rnet_forward(net, white, active)
    result = recount(trace, q, grid.window)
    out = Path(args.out)
    _check_overwrite([out / "importance.csv"], args.overwrite)
    paths = render_recounting(result, out, display_size=_parse_pair(args.display_size))
    echo_config(cfg, out)
    top = ", ".join(str(int(i)) for i in result.ranking[:5])
    print(f"recount: {len(result.maps)} frames -> {out} "
          f"(predicted class {int(np.argmax(logp))}, top frames: {top})")
    return 0


def cmd_retrieve(args) -> int:
    cfg = load_config(args.config, _collect_overrides(args))
    manifest = load_manifest(args.manifest, check_paths=False)
    store = load_vector_store(args.store)
    queries = manifest.queries()
    if not queries:
        raise ConfigError("manifest has no queries")
    runs = {}
    for entry in queries:
        vec = store.get(entry.video_id)
        if args.rerank == "aqe":
            runs[entry.video_id] = aqe_rerank(entry.video_id, vec, store, n_expand=args.n1)
        elif args.rerank == "don":
            runs[entry.video_id] = don_rerank(entry.video_id, vec, store,
                                              n_expand=args.n1, n_background=args.n2)
        else:
            runs[entry.video_id] = rank(entry.video_id, vec, store)
    _check_overwrite([args.out], args.overwrite)
    save_run(args.out, runs)
    print(f"retrieve: {len(runs)} queries (rerank={args.rerank}) -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    manifest = load_manifest(args.manifest, check_paths=False)
    runs = load_run(args.run)
    report = evaluate_map(runs, manifest)
    _check_overwrite([args.out], args.overwrite)
    save_report(args.out, report)
    print(f"eval: overall mAP={report['overall']:.4f} "
          f"over {len(report['per_event'])} events -> {args.out}")
    return 0


def cmd_bench(args) -> int:
    cfg = load_config(args.config, _collect_overrides(args))
    seq, _ = synth_two_shot_sequence(args.frames, cfg.window, args.feature_dim,
                                     noise_sigma=args.noise_sigma, seed=cfg.seed)
    frames = np.asarray(seq.frames, dtype=np.float64)
    seq = FeatureSequence(video_id=seq.video_id, frames=frames)
    init_full = ep_mod.epitome_init(seq, cfg.grid, seed=cfg.seed)
    t0 = time.perf_counter()
    _, q_full = ep_mod.epitome_fit(seq, cfg.grid, max_iters=cfg.max_iters,
                                   tol=0.0, init=init_full)
    t_full = time.perf_counter() - t0

    d = min(cfg.d, seq.dim)
    t0 = time.perf_counter()
    pca = pca_fit(frames.reshape(-1, seq.dim), d)
    init_low = ep_mod.Epitome(mu=pca_project(pca, init_full.mu),
                              sigma2=init_full.sigma2, window=init_full.window)
    _, q_two = ep_mod.epitome_two_step_fit(seq, cfg.grid, d=d, max_iters=cfg.max_iters,
                                           tol=0.0, init=init_low, pca=pca)
    t_two = time.perf_counter() - t0

    dlogq = float(np.abs(np.log(np.maximum(q_full, 1e-300))
                         - np.log(np.maximum(q_two, 1e-300))).max())
    speedup = t_full / t_two if t_two > 0 else float("inf")
    _check_overwrite([args.out], args.overwrite)
    header = "D,d,seconds_full,seconds_two_step,speedup,max_abs_dlogq\n"
    row = f"{args.feature_dim},{d},{t_full:.4f},{t_two:.4f},{speedup:.3f},{dlogq:.6g}\n"
    Path(args.out).write_text(header + row)
    print(f"bench: full {t_full:.2f}s vs two-step {t_two:.2f}s "
          f"(speedup {speedup:.2f}x) -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# argument plumbing

_OVERRIDE_FLAGS = {
    "model": str, "grid": _parse_pair, "window": _parse_pair,
    "tessellation": _parse_pair, "d": int, "tau": float, "alpha": float,
    "pca_dim": int, "hops": int, "head": str, "epochs": int, "base_lr": float,
    "batch_size": int, "max_iters": int, "tol": float, "seed": int, "workers": int,
}


def _add_common(parser):
    parser.add_argument("--config", help="JSON config file (flags override it)")
    parser.add_argument("--overwrite", action="store_true",
                        help="replace existing output artifacts")
    for name, typ in _OVERRIDE_FLAGS.items():
        parser.add_argument(f"--{name.replace('_', '-')}", dest=f"cfg_{name}",
                            type=typ, default=None)


def _collect_overrides(args):
    out = {}
    for name in _OVERRIDE_FLAGS:
        val = getattr(args, f"cfg_{name}", None)
        if val is not None:
            out[name] = val
    if getattr(args, "tau_per_frame", False):
        out["tau_per_frame"] = True
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="videoimprint", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a planted-event synthetic dataset")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--events", type=int, default=3)
    p.add_argument("--videos-per-event", type=int, default=10)
    p.add_argument("--frames", type=int, default=24)
    p.add_argument("--shot-pool", type=int, default=4)
    p.add_argument("--distractor-ratio", type=float, default=0.5)
    p.add_argument("--noise-sigma", type=float, default=0.02)
    p.add_argument("--feature-dim", type=int, default=32)
    p.add_argument("--distractor-frame-prob", type=float, default=0.25)
    p.add_argument("--queries-per-event", type=int, default=2)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("imprint", help="fit one imprint per manifest video")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_imprint)

    p = sub.add_parser("aggregate", help="aggregate imprints into a vector store")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--imprints", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--baseline-out", help="also write the sum-aggregation store")
    p.add_argument("--tau-per-frame", action="store_true")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("train", help="train the reasoning network on imprints")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--imprints", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pca-out", help="descriptor PCA output (default <out>.pca.npz)")
    p.add_argument("--tau-per-frame", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("recount", help="render recounting maps for one imprint")
    _add_common(p)
    p.add_argument("--imprint", required=True)
    p.add_argument("--net", required=True, help="trained reasoning-network file")
    p.add_argument("--pca", help="descriptor PCA (default <net>.pca.npz)")
    p.add_argument("--out", required=True)
    p.add_argument("--display-size", default="64x64")
    p.add_argument("--tau-per-frame", action="store_true")
    p.set_defaults(func=cmd_recount)

    p = sub.add_parser("retrieve", help="rank every manifest query against a store")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rerank", choices=("none", "aqe", "don"), default="none")
    p.add_argument("--n1", type=int, default=10)
    p.add_argument("--n2", type=int, default=2000)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("eval", help="score a run file against manifest labels")
    _add_common(p)
    p.add_argument("--run", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time the full vs two-stage epitome fit")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--feature-dim", type=int, default=2048)
    p.add_argument("--frames", type=int, default=200)
    p.add_argument("--noise-sigma", type=float, default=0.05)
    p.set_defaults(func=cmd_bench)

    return parser


_EXIT_CODES = [
    (ConfigError, 2, "config"),
    (ParseError, 3, "parse"),
    (DomainError, 3, "data"),
    (NumericalError, 4, "numerical"),
]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except VideoImprintError as exc:
        for klass, code, category in _EXIT_CODES:
            if isinstance(exc, klass):
                print(f"error [{category}] {exc}", file=sys.stderr)
                return code
        print(f"error [library] {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error [io] {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
