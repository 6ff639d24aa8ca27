"""Cosine retrieval over aggregated video vectors, query-expansion
re-ranking (AQE and neighborhood-difference), and per-event mAP evaluation.

Ranked lists are deterministic: exhaustive dot products, descending score,
ties broken by ascending video id, the query itself excluded.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, ParseError
from .features import DatasetManifest
from .imprint import VectorStore
from .numerics import l2_normalize


@dataclass
class RankedList:
    query_id: str
    video_ids: list[str]
    scores: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if len(self.video_ids) != len(self.scores):
            raise DomainError("RankedList: ids/scores length mismatch")


def _order(ids, scores):
    idx = sorted(range(len(ids)), key=lambda i: (-scores[i], ids[i]))
    return [ids[i] for i in idx], scores[list(idx)]


def rank(query_id: str, query_vec, store: VectorStore) -> RankedList:
    """Exhaustive cosine scores against the store (vectors are unit norm, so
    dot product equals cosine), query id excluded."""
    if len(store) == 0:
        raise DomainError("rank: empty index")
    query_vec = np.asarray(query_vec, dtype=np.float64)
    keep = [i for i, vid in enumerate(store.ids) if vid != query_id]
    if not keep:
        raise DomainError("rank: index contains only the query")
    ids = [store.ids[i] for i in keep]
    scores = store.vectors[keep] @ query_vec
    ids, scores = _order(ids, scores)
    return RankedList(query_id=query_id, video_ids=ids, scores=scores)


def _expand_query(query_id, query_vec, store, n_expand):
    base = rank(query_id, query_vec, store)
    used = min(n_expand, len(base.video_ids))
    top = [base.video_ids[i] for i in range(used)]
    neighbors = np.stack([store.get(v) for v in top]) if top else np.zeros((0, store.dim))
    expanded = l2_normalize(np.vstack([query_vec[None], neighbors]).mean(axis=0))
    truncated = used < n_expand
    return expanded, {"n_expand_used": used, "truncated": truncated}


def aqe_rerank(query_id: str, query_vec, store: VectorStore, n_expand=10) -> RankedList:
    """Average query expansion: re-rank with the l2-normalized mean of the
    query and its top n_expand neighbors. A store smaller than n_expand uses
    every available neighbor and flags `truncated` in the metadata."""
    if n_expand < 1:
        raise DomainError(f"aqe_rerank: n_expand must be >= 1, got {n_expand}")
    expanded, meta = _expand_query(query_id, query_vec, store, n_expand)
    out = rank(query_id, expanded, store)
    out.meta.update(meta)
    return out


def don_rerank(query_id: str, query_vec, store: VectorStore, n_expand=10,
               n_background=2000) -> RankedList:
    """Neighborhood-difference re-ranking: score against the AQE-expanded
    query, then subtract each candidate's mean similarity to its own
    n_background nearest neighbors (itself excluded) as a hubness correction.
    """
    if n_expand < 1 or n_background < n_expand:
        raise DomainError(
            f"don_rerank: need n_background >= n_expand >= 1, got ({n_expand}, {n_background})")
    expanded, meta = _expand_query(query_id, query_vec, store, n_expand)
    keep = [i for i, vid in enumerate(store.ids) if vid != query_id]
    ids = [store.ids[i] for i in keep]
    vecs = store.vectors[keep]
    base_scores = vecs @ expanded

    sims = store.vectors @ store.vectors.T
    n_bg = min(n_background, len(store) - 1)
    corrections = np.empty(len(keep))
    for row, i in enumerate(keep):
        sim_i = np.delete(sims[i], i)
        top = np.sort(sim_i)[::-1][:n_bg]
        corrections[row] = top.mean()
    scores = base_scores - corrections
    ids, scores = _order(ids, scores)
    out = RankedList(query_id=query_id, video_ids=ids, scores=scores)
    out.meta.update(meta)
    out.meta["n_background_used"] = n_bg
    return out


def average_precision(ranked_ids, relevant: set, n_relevant_total=None) -> float:
    """Mean of precision at each relevant rank, over the total number of
    relevant targets (defaults to the number present in the list)."""
    total = n_relevant_total if n_relevant_total is not None else \
        sum(1 for v in ranked_ids if v in relevant)
    if total == 0:
        raise DomainError("average_precision: no relevant targets")
    hits = 0
    acc = 0.0
    for r, vid in enumerate(ranked_ids, start=1):
        if vid in relevant:
            hits += 1
            acc += hits / r
    return acc / total


def evaluate_map(runs: dict[str, RankedList], manifest: DatasetManifest):
    """Per-event mean average precision and their unweighted overall mean.

    Relevance is same-event-label; distractors (label -1) are never relevant.
    Queries with zero relevant targets are excluded and reported under
    "skipped".
    """
    labels = manifest.labels()
    per_event_aps: dict[int, list[float]] = {}
    skipped = []
    for query_id, ranked in runs.items():
        if query_id not in labels:
            raise DomainError(f"evaluate_map: unlabeled query {query_id}")
        label = labels[query_id]
        relevant = {vid for vid, lab in labels.items()
                    if lab == label and lab >= 0 and vid != query_id}
        if not relevant:
            skipped.append(query_id)
            continue
        ap = average_precision(ranked.video_ids, relevant, n_relevant_total=len(relevant))
        per_event_aps.setdefault(label, []).append(ap)

    def _name(label):
        if 0 <= label < len(manifest.label_names):
            return manifest.label_names[label]
        return str(label)

    per_event = {_name(lab): float(np.mean(aps))
                 for lab, aps in sorted(per_event_aps.items())}
    overall = float(np.mean(list(per_event.values()))) if per_event else 0.0
    return {"per_event": per_event, "overall": overall, "skipped": skipped}


def save_run(path, runs: dict[str, RankedList]) -> None:
    """TREC-style text: one 'query_id video_id rank score' line per result."""
    with open(path, "w") as fh:
        for query_id in runs:
            ranked = runs[query_id]
            for r, (vid, score) in enumerate(zip(ranked.video_ids, ranked.scores), start=1):
                fh.write(f"{query_id} {vid} {r} {score:.17g}\n")


def load_run(path) -> dict[str, RankedList]:
    path = Path(path)
    rows: dict[str, list[tuple[str, float]]] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ParseError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
        query_id, vid, _, score = parts
        try:
            rows.setdefault(query_id, []).append((vid, float(score)))
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: bad score {score!r}") from exc
    return {
        q: RankedList(query_id=q, video_ids=[v for v, _ in items],
                      scores=np.array([s for _, s in items]))
        for q, items in rows.items()
    }


def save_report(path, report: dict) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
