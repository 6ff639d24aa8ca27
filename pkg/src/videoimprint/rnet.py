"""Reasoning network over imprint descriptors: shared-weight memory hops with
spatially pooled attention, a bias-free decision head, SGD training, and the
recounting maps that trace attention back to frames.

One hop scores every active descriptor against the internal state, softmaxes
over active locations, smooths the attention spatially (3x3 average pooling
on the grid, then renormalization over the active set), and adds the
attention-weighted sum of embedded descriptors to the state. Gradients are
computed by hand with reverse-mode accumulation; see rnet_loss_and_grads.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, DomainError, NumericalError, ParseError
from .features import bilinear_resize
from .imprint import ActiveMap, ImprintDescriptorSet
from .numerics import avg_pool_3x3, log_softmax

HEAD_KINDS = ("softmax", "mlp")
RNET_MAGIC = b"RNET"


@dataclass
class ReasoningNet:
    """Shared embeddings for all hops plus a bias-free decision head.

    The state update requires the embedding height to equal the descriptor
    dimension, so B and M are square. head `mlp` inserts one ReLU layer of
    the same width before the class weights.
    """

    emb_out: np.ndarray   # B, (h, d_in)
    emb_mem: np.ndarray   # M, (h, d_in)
    w_out: np.ndarray     # (C, h) or (C, h) after hidden
    hops: int
    head_kind: str = "softmax"
    w_hidden: np.ndarray | None = None  # (h, h) when head_kind == "mlp"

    def __post_init__(self):
        self.emb_out = np.asarray(self.emb_out, dtype=np.float64)
        self.emb_mem = np.asarray(self.emb_mem, dtype=np.float64)
        self.w_out = np.asarray(self.w_out, dtype=np.float64)
        if self.head_kind not in HEAD_KINDS:
            raise ConfigError(f"ReasoningNet: head_kind must be one of {HEAD_KINDS}")
        h, d = self.emb_out.shape
        if h != d:
            raise ConfigError("ReasoningNet: embeddings must be square (state dim == input dim)")
        if self.emb_mem.shape != (h, d):
            raise ConfigError("ReasoningNet: B and M shapes differ")
        if self.hops < 1:
            raise ConfigError("ReasoningNet: hops must be >= 1")
        if self.head_kind == "mlp":
            if self.w_hidden is None:
                raise ConfigError("ReasoningNet: mlp head requires w_hidden")
            self.w_hidden = np.asarray(self.w_hidden, dtype=np.float64)
            if self.w_hidden.shape != (h, h):
                raise ConfigError("ReasoningNet: w_hidden must be (h, h)")
        elif self.w_hidden is not None:
            raise ConfigError("ReasoningNet: softmax head takes no w_hidden")
        if self.w_out.shape[1] != h:
            raise ConfigError("ReasoningNet: w_out width must equal h")
        for arr in self.parameters().values():
            if not np.isfinite(arr).all():
                raise ConfigError("ReasoningNet: non-finite weights")

    @property
    def d_in(self) -> int:
        return self.emb_out.shape[1]

    @property
    def h(self) -> int:
        return self.emb_out.shape[0]

    @property
    def n_classes(self) -> int:
        return self.w_out.shape[0]

    def parameters(self) -> dict[str, np.ndarray]:
        params = {"emb_out": self.emb_out, "emb_mem": self.emb_mem, "w_out": self.w_out}
        if self.w_hidden is not None:
            params["w_hidden"] = self.w_hidden
        return params


@dataclass
class AttentionTrace:
    """Per-hop attention maps over the grid (zero at inactive locations),
    their sum, and the internal states before/after every hop."""

    maps: np.ndarray     # (hops, Ex, Ey)
    p_sum: np.ndarray    # (Ex, Ey)
    states: np.ndarray   # (hops + 1, h)


@dataclass
class RecountingResult:
    maps: np.ndarray        # (T, Wx, Wy)
    importance: np.ndarray  # (T,)
    ranking: np.ndarray     # (T,) frame indices, most important first


def rnet_init(d_in, n_classes, hops=3, head_kind="softmax", seed=0,
              init_sigma=0.05) -> ReasoningNet:
    """Gaussian init, zero mean, sigma 0.05 by default, all weight matrices."""
    rng = np.random.default_rng(seed)
    h = d_in
    w_hidden = rng.normal(0.0, init_sigma, (h, h)) if head_kind == "mlp" else None
    return ReasoningNet(
        emb_out=rng.normal(0.0, init_sigma, (h, d_in)),
        emb_mem=rng.normal(0.0, init_sigma, (h, d_in)),
        w_out=rng.normal(0.0, init_sigma, (n_classes, h)),
        hops=hops, head_kind=head_kind, w_hidden=w_hidden)


def _box_sum_3x3(m):
    """Plain 3x3 box sum with zero padding (adjoint building block for the
    valid-count average pool)."""
    h, w = m.shape
    padded = np.zeros((h + 2, w + 2))
    padded[1:-1, 1:-1] = m
    out = np.zeros((h, w))
    for di in range(3):
        for dj in range(3):
            out += padded[di:di + h, dj:dj + w]
    return out


def _pool_counts(shape):
    ones = np.ones(shape)
    return _box_sum_3x3(ones)


def _unpack_sample(net: ReasoningNet, dset: ImprintDescriptorSet, active: ActiveMap):
    if dset.dim != net.d_in:
        raise DomainError(f"descriptor dim {dset.dim} != net d_in {net.d_in}")
    if len(dset) == 0 or not active.a.any():
        raise DomainError("no evidence: video has no active imprint locations")
    shape = active.a.shape
    locs = (dset.locations[:, 0], dset.locations[:, 1])
    if not active.a[locs].all():
        raise DomainError("descriptor locations fall outside the active map")
    return dset.vectors, locs, shape


def _forward_pass(net: ReasoningNet, x, locs, shape, forced_attention=False):
    """Run the hops; returns (logits, trace, cache-for-backprop)."""
    n = len(x)
    counts = _pool_counts(shape)
    mx = x @ net.emb_mem.T
    bx = x @ net.emb_out.T
    u = x.sum(axis=0)
    states = [u]
    maps = np.zeros((net.hops, *shape))
    hop_cache = []
    for k in range(net.hops):
        if forced_attention:
            p_active = np.full(n, 1.0 / n)
            o = states[0] / n  # identity readout of the aggregate
            hop_cache.append(None)
        else:
            s = mx @ u
            sig = np.exp(log_softmax(s))
            grid = np.zeros(shape)
            grid[locs] = sig
            pooled_grid = avg_pool_3x3(grid)
            pooled = pooled_grid[locs]
            total = pooled.sum()
            p_active = pooled / total
            o = p_active @ bx
            hop_cache.append((u, sig, p_active, total))
        maps[k][locs] = p_active
        u = u + o
        states.append(u)
    if net.head_kind == "mlp":
        hidden_pre = net.w_hidden @ u
        hidden = np.maximum(hidden_pre, 0.0)
        logits = net.w_out @ hidden
        head_cache = (hidden_pre, hidden)
    else:
        logits = net.w_out @ u
        head_cache = None
    trace = AttentionTrace(maps=maps, p_sum=maps.sum(axis=0), states=np.stack(states))
    cache = (x, locs, shape, counts, mx, bx, hop_cache, head_cache,
             forced_attention, states[-1])
    return logits, trace, cache


def rnet_forward(net: ReasoningNet, dset: ImprintDescriptorSet, active: ActiveMap,
                 forced_attention=False):
    """Class log-probabilities and the attention trace for one video.

    forced_attention pins every hop's weights map to the normalized active
    map and reads out the raw descriptors, which collapses the network to a
    positive rescaling of the aggregated video vector (diagnostic mode).
    """
    x, locs, shape = _unpack_sample(net, dset, active)
    logits, trace, _ = _forward_pass(net, x, locs, shape, forced_attention)
    return log_softmax(logits), trace


def _backward_pass(net: ReasoningNet, cache, dlogits, grads):
    x, locs, shape, counts, mx, bx, hop_cache, head_cache, forced, u_last = cache
    if net.head_kind == "mlp":
        hidden_pre, hidden = head_cache
        grads["w_out"] += np.outer(dlogits, hidden)
        dhidden = net.w_out.T @ dlogits
        dpre = dhidden * (hidden_pre > 0)
        grads["w_hidden"] += np.outer(dpre, u_last)
        du = net.w_hidden.T @ dpre
    else:
        grads["w_out"] += np.outer(dlogits, u_last)
        du = net.w_out.T @ dlogits

    if forced:
        return  # pinned attention has no hop parameters in the graph

    dmx = np.zeros_like(mx)
    dbx = np.zeros_like(bx)
    for k in range(net.hops - 1, -1, -1):
        u_k, sig, p_active, total = hop_cache[k]
        do = du  # u_{k+1} = u_k + o_k
        dp = bx @ do
        dbx += np.outer(p_active, do)
        dpooled = (dp - dp @ p_active) / total
        # adjoint of: embed -> avg_pool_3x3 -> restrict
        grid = np.zeros(shape)
        grid[locs] = dpooled
        dsig = _box_sum_3x3(grid / counts)[locs]
        ds = sig * (dsig - dsig @ sig)
        dmx += np.outer(ds, u_k)
        du = du + mx.T @ ds
    grads["emb_mem"] += dmx.T @ x
    grads["emb_out"] += dbx.T @ x


def rnet_loss_and_grads(net: ReasoningNet, batch):
    """Mean cross-entropy over a batch of (descriptors, active map, label)
    and its gradients with respect to every weight matrix."""
    if not batch:
        raise DomainError("rnet_loss_and_grads: empty batch")
    grads = {name: np.zeros_like(arr) for name, arr in net.parameters().items()}
    total_loss = 0.0
    for dset, active, label in batch:
        if not 0 <= label < net.n_classes:
            raise DomainError(f"label {label} outside [0, {net.n_classes})")
        x, locs, shape = _unpack_sample(net, dset, active)
        logits, _, cache = _forward_pass(net, x, locs, shape)
        logp = log_softmax(logits)
        total_loss += -logp[label]
        dlogits = np.exp(logp)
        dlogits[label] -= 1.0
        _backward_pass(net, cache, dlogits, grads)
    scale = 1.0 / len(batch)
    for name in grads:
        grads[name] *= scale
    return total_loss * scale, grads


def sgd_learning_rate(epoch, base_lr=0.025, anneal_every=5):
    """Halving schedule: base_lr for the first anneal_every epochs, then
    halved every anneal_every epochs."""
    return base_lr * 0.5 ** (epoch // anneal_every)


def _clip_global_norm(grads, max_norm):
    total = np.sqrt(sum(float((g ** 2).sum()) for g in grads.values()))
    if total > max_norm:
        factor = max_norm / total
        for g in grads.values():
            g *= factor
    return total


def rnet_train(samples, n_classes, *, hops=3, head_kind="softmax", epochs=20,
               base_lr=0.025, anneal_every=5, batch_size=128, clip_norm=20.0,
               init_sigma=0.05, seed=0) -> ReasoningNet:
    """Plain SGD with the halving schedule: the learning rate starts at
    base_lr and is halved every `anneal_every` epochs; per-batch gradients
    with l2 norm above clip_norm are rescaled to clip_norm. Deterministic
    under `seed` (weight init and the shuffle stream).
    """
    if not samples:
        raise DomainError("rnet_train: empty dataset")
    d_in = samples[0][0].dim
    rng = np.random.default_rng(seed)
    net = rnet_init(d_in, n_classes, hops=hops, head_kind=head_kind,
                    seed=rng.integers(2 ** 31), init_sigma=init_sigma)
    n = len(samples)
    for epoch in range(epochs):
        lr = sgd_learning_rate(epoch, base_lr, anneal_every)
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            batch = [samples[i] for i in order[start:start + batch_size]]
            loss, grads = rnet_loss_and_grads(net, batch)
            if not np.isfinite(loss):
                raise NumericalError(
                    f"rnet_train: non-finite loss at epoch {epoch}, batch {start // batch_size}")
            _clip_global_norm(grads, clip_norm)
            params = net.parameters()
            for name, g in grads.items():
                params[name] -= lr * g
    return net


def rnet_predict(net: ReasoningNet, dset, active) -> int:
    logp, _ = rnet_forward(net, dset, active)
    return int(np.argmax(logp))


def train_linear_classifier(vectors, labels, n_classes, *, epochs=20,
                            base_lr=0.025, anneal_every=5, batch_size=128,
                            clip_norm=20.0, init_sigma=0.05, seed=0) -> np.ndarray:
    """Bias-free softmax regression trained with the same SGD schedule; the
    reference head for aggregated-vector baselines. Returns (C, dim) weights."""
    x = np.asarray(vectors, dtype=np.float64)
    y = np.asarray(labels, dtype=int)
    if len(x) != len(y) or len(x) == 0:
        raise DomainError("train_linear_classifier: bad dataset")
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, init_sigma, (n_classes, x.shape[1]))
    n = len(x)
    for epoch in range(epochs):
        lr = sgd_learning_rate(epoch, base_lr, anneal_every)
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            logits = x[idx] @ w.T
            logp = log_softmax(logits, axis=-1)
            probs = np.exp(logp)
            probs[np.arange(len(idx)), y[idx]] -= 1.0
            g = probs.T @ x[idx] / len(idx)
            norm = float(np.sqrt((g ** 2).sum()))
            if norm > clip_norm:
                g *= clip_norm / norm
            w -= lr * g
    return w


def recount(trace: AttentionTrace, q, window) -> RecountingResult:
    """Assemble per-frame heat maps: each placement contributes its posterior
    mass times the window crop of the summed attention map; the frame
    importance is the map total, ranked descending (ties by frame index)."""
    q = np.asarray(q, dtype=np.float64)
    p_sum = trace.p_sum
    if q.ndim != 3 or q.shape[1:] != p_sum.shape:
        raise DomainError(f"recount: q {q.shape} does not match attention grid {p_sum.shape}")
    wx, wy = window
    ex, ey = p_sum.shape
    if wx > ex or wy > ey:
        raise DomainError(f"recount: window {window} exceeds grid {p_sum.shape}")
    t = q.shape[0]
    q_flat = q.reshape(t, -1)
    maps = np.empty((t, wx, wy))
    for jx in range(wx):
        for jy in range(wy):
            rolled = np.roll(p_sum, (-jx, -jy), axis=(0, 1)).ravel()
            maps[:, jx, jy] = q_flat @ rolled
    importance = maps.sum(axis=(1, 2))
    ranking = np.lexsort((np.arange(t), -importance))
    return RecountingResult(maps=maps, importance=importance, ranking=ranking)


def render_recounting(result: RecountingResult, out_dir, display_size=(64, 64),
                      prefix="frame"):
    """Write one grayscale PNG heat map per frame (bilinearly upscaled, scaled
    to the video-wide maximum) plus an importance.csv. Returns output paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vmax = float(result.maps.max())
    if vmax <= 0:
        vmax = 1.0
    image_paths = []
    for t, frame_map in enumerate(result.maps):
        big = bilinear_resize(frame_map, display_size)
        arr = np.clip(np.round(255.0 * big / vmax), 0, 255).astype(np.uint8)
        path = out_dir / f"{prefix}_{t:04d}.png"
        Image.fromarray(arr, mode="L").save(path)
        image_paths.append(path)
    csv_path = out_dir / "importance.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame_index", "importance"])
        for t, score in enumerate(result.importance):
            writer.writerow([t, f"{score:.17g}"])
    return {"images": image_paths, "csv": csv_path}


def save_rnet(path, net: ReasoningNet) -> None:
    kind = HEAD_KINDS.index(net.head_kind)
    with open(path, "wb") as fh:
        fh.write(RNET_MAGIC)
        fh.write(struct.pack("<5I", net.d_in, net.h, net.n_classes, net.hops, kind))
        fh.write(np.ascontiguousarray(net.emb_out, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(net.emb_mem, dtype="<f4").tobytes())
        if net.head_kind == "mlp":
            fh.write(np.ascontiguousarray(net.w_hidden, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(net.w_out, dtype="<f4").tobytes())


def load_rnet(path) -> ReasoningNet:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 24:
        raise ParseError(f"{path}: header truncated")
    if data[:4] != RNET_MAGIC:
        raise ParseError(f"{path}: bad magic {data[:4]!r}")
    d_in, h, n_classes, hops, kind = struct.unpack("<5I", data[4:24])
    if kind >= len(HEAD_KINDS):
        raise ParseError(f"{path}: bad head kind {kind}")
    head_kind = HEAD_KINDS[kind]
    sizes = [("emb_out", (h, d_in)), ("emb_mem", (h, d_in))]
    if head_kind == "mlp":
        sizes.append(("w_hidden", (h, h)))
    sizes.append(("w_out", (n_classes, h)))
    need = 24 + 4 * sum(a * b for _, (a, b) in sizes)
    if len(data) != need:
        raise ParseError(f"{path}: payload size {len(data)} != expected {need}")
    off = 24
    arrays = {}
    for name, shape in sizes:
        count = shape[0] * shape[1]
        arrays[name] = np.frombuffer(data, dtype="<f4", count=count,
                                     offset=off).reshape(shape).astype(np.float64)
        off += 4 * count
    return ReasoningNet(emb_out=arrays["emb_out"], emb_mem=arrays["emb_mem"],
                        w_out=arrays["w_out"], hops=hops, head_kind=head_kind,
                        w_hidden=arrays.get("w_hidden"))
