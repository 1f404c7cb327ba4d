"""Retrieval evaluation: pairwise distances, CMC curve, mAP, protocol runner."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data.records import DatasetIndex, ValidationError, split_query_gallery

DEFAULT_MAX_RANK = 20


@dataclass
class EvalReport:
    direction: str
    shot: str
    cmc: list[float]
    map: float
    num_queries: int
    num_gallery: int
    seeds: list[int] = field(default_factory=list)
    per_seed: list[dict] | None = None

    def to_json(self) -> str:
        doc = {
            "direction": self.direction,
            "shot": self.shot,
            "cmc": [round(float(v), 6) for v in self.cmc],
            "map": round(float(self.map), 6),
            "num_queries": self.num_queries,
            "num_gallery": self.num_gallery,
            "seeds": list(self.seeds),
        }
        if self.per_seed is not None:
            doc["per_seed"] = [
                {"seed": int(p["seed"]),
                 "cmc": [round(float(v), 6) for v in p["cmc"]],
                 "map": round(float(p["map"]), 6)}
                for p in self.per_seed
            ]
        return json.dumps(doc, indent=2) + "\n"


def pairwise_distances(query_feats: np.ndarray, gallery_feats: np.ndarray) -> np.ndarray:
    """Euclidean distance matrix [Nq, Ng]."""
    q = np.asarray(query_feats, dtype=np.float64)
    g = np.asarray(gallery_feats, dtype=np.float64)
    if q.shape[1] != g.shape[1]:
        raise ValueError(f"feature dim mismatch: {q.shape[1]} vs {g.shape[1]}")
    sq = (q * q).sum(1)[:, None] + (g * g).sum(1)[None, :] - 2.0 * q @ g.T
    return np.sqrt(np.maximum(sq, 0.0))


def _sorted_matches(dist: np.ndarray, query_ids, gallery_ids) -> np.ndarray:
    dist = np.asarray(dist, dtype=np.float64)
    query_ids = np.asarray(query_ids)
    gallery_ids = np.asarray(gallery_ids)
    absent = sorted(set(query_ids.tolist()) - set(gallery_ids.tolist()))
    if absent:
        raise ValidationError(f"query identities absent from gallery: {absent}")
    # stable sort ties break by gallery index
    order = np.argsort(dist, axis=1, kind="stable")
    return gallery_ids[order] == query_ids[:, None]


def cmc_curve(dist: np.ndarray, query_ids, gallery_ids,
              max_rank: int = DEFAULT_MAX_RANK) -> np.ndarray:
    """Rank-k accuracies for k = 1..max_rank, averaged over queries."""
    matches = _sorted_matches(dist, query_ids, gallery_ids)
    hits = np.minimum(matches.cumsum(axis=1), 1)
    num_g = matches.shape[1]
    curve = hits[:, :max_rank].mean(axis=0)
    if num_g < max_rank:
        # every query id exists in the gallery, so cmc saturates at 1 beyond Ng
        curve = np.concatenate([curve, np.full(max_rank - num_g, curve[-1])])
    return curve


def mean_average_precision(dist: np.ndarray, query_ids, gallery_ids) -> float:
    """mAP: per query, AP over its ranked positives, then the mean of APs."""
    matches = _sorted_matches(dist, query_ids, gallery_ids)
    aps = []
    for row in matches:
        positions = np.flatnonzero(row) + 1  # 1-based ranks of positives
        precision_at = np.arange(1, len(positions) + 1) / positions
        aps.append(precision_at.mean())
    return float(np.mean(aps))


def evaluate_protocol(embed_fn, index: DatasetIndex, direction: str, shot: str,
                      seeds=(0,), max_rank: int = DEFAULT_MAX_RANK,
                      keep_per_seed: bool = True) -> EvalReport:
    """Run one (direction, shot) protocol cell.

    *embed_fn* maps a list of SampleRecord to a [N, d] feature array
    (orientation-invariant features). Single-shot draws one gallery per seed
    and averages; multi-shot runs once.
    """
    if shot == "multi":
        seeds = [int(seeds[0])] if len(seeds) else [0]
    runs = []
    for seed in seeds:
        query, gallery = split_query_gallery(index, direction, shot, int(seed))
        qf = np.asarray(embed_fn(query))
        gf = np.asarray(embed_fn(gallery))
        dist = pairwise_distances(qf, gf)
        q_ids = [r.identity for r in query]
        g_ids = [r.identity for r in gallery]
        runs.append({
            "seed": int(seed),
            "cmc": cmc_curve(dist, q_ids, g_ids, max_rank).tolist(),
            "map": mean_average_precision(dist, q_ids, g_ids),
            "num_queries": len(query),
            "num_gallery": len(gallery),
        })
    cmc = np.mean([r["cmc"] for r in runs], axis=0).tolist()
    mAP = float(np.mean([r["map"] for r in runs]))
    return EvalReport(
        direction=direction,
        shot=shot,
        cmc=cmc,
        map=mAP,
        num_queries=runs[0]["num_queries"],
        num_gallery=runs[0]["num_gallery"],
        seeds=[int(s) for s in seeds],
        per_seed=runs if (shot == "single" and keep_per_seed) else None,
    )
