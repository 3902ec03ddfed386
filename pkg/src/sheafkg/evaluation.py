"""Filtered ranking, Hits@k / MRR aggregation, and KGC evaluation.

Ranking is ascending in energy. Tied scores receive the mean rank of the
tie group (the "realistic" convention), which keeps degenerate models from
scoring a spurious rank 1. Filtered candidates are removed from the pool
before the rank is computed, so a filtered entity can never influence it.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import CoverageError, UndefinedMetricError, UsageError


@dataclass(frozen=True)
class RankRecord:
    query_id: int
    true_id: int
    rank: float       # mean-over-ties, in [1, pool_size]
    pool_size: int


def rank_tail(scores: np.ndarray, true_id: int, filter_ids=()) -> RankRecord:
    """Filtered rank of ``true_id`` among ascending-sorted scores.

    ``filter_ids`` are removed from the candidate pool first; asking to
    filter the true id itself is a contract violation.
    """
    scores = np.asarray(scores, dtype=np.float64)
    mask = np.ones(scores.shape[0], dtype=bool)
    filter_ids = np.asarray(list(filter_ids), dtype=np.int64)
    if filter_ids.size:
        if np.any(filter_ids == true_id):
            raise UsageError("true id appears in the filter set")
        mask[filter_ids] = False
    s_true = scores[true_id]
    pool = scores[mask]
    better = int((pool < s_true).sum())
    ties = int((pool == s_true).sum())  # includes the true candidate itself
    rank = better + (ties + 1) / 2.0
    return RankRecord(-1, int(true_id), float(rank), int(pool.shape[0]))


def metrics(records, ks=(1, 3, 10)) -> dict:
    """hits@k for each k, mean reciprocal rank, and the record count."""
    records = list(records)
    if not records:
        raise UndefinedMetricError("metrics over an empty record set are undefined")
    ranks = np.array([rec.rank for rec in records], dtype=np.float64)
    out = {f"hits@{k}": float((ranks <= k).mean()) for k in ks}
    out["mrr"] = float((1.0 / ranks).mean())
    out["count"] = len(records)
    return out


def build_filter_index(*triple_arrays) -> dict:
    """(head, relation) -> set of known true tails, across all given arrays."""
    index: dict[tuple[int, int], set[int]] = {}
    for arr in triple_arrays:
        arr = np.asarray(arr, dtype=np.int64).reshape(-1, 3)
        for h, r, t in arr.tolist():
            index.setdefault((h, r), set()).add(t)
    return index


def score_all_tails(reps, embeddings: np.ndarray, h: int, r: int,
                    p: int = 2, tail_cache: dict | None = None) -> np.ndarray:
    """Energy of (h, r, t') for every entity t'."""
    rep = reps[r]
    if tail_cache is not None:
        transformed = tail_cache.get(r)
        if transformed is None:
            transformed = embeddings @ rep.tail.T
            tail_cache[r] = transformed
    else:
        transformed = embeddings @ rep.tail.T
    u = (rep.head @ embeddings[h] + rep.translation) - transformed
    sq = np.einsum("nd,nd->n", u, u)
    return sq if p == 2 else np.sqrt(sq)


def evaluate_kgc(reps, embeddings: np.ndarray, est_triples: np.ndarray,
                 filter_index: dict, ks=(1, 3, 10), p: int = 2):
    """Tail-side filtered ranking of every estimation triple.

    ``filter_index`` should cover all known true tails (observed plus
    estimation triples of the evaluated split). Returns (records, metrics).
    """
    est_triples = np.asarray(est_triples, dtype=np.int64).reshape(-1, 3)
    n = embeddings.shape[0]
    if est_triples.size:
        ents = np.concatenate([est_triples[:, 0], est_triples[:, 2]])
        if ents.max() >= n:
            raise CoverageError("estimation triple mentions an entity with no embedding")
    cache: dict[int, np.ndarray] = {}
    records = []
    for qid, (h, r, t) in enumerate(est_triples.tolist()):
        scores = score_all_tails(reps, embeddings, h, r, p=p, tail_cache=cache)
        known = filter_index.get((h, r), set())
        rec = rank_tail(scores, t, sorted(known - {t}))
        records.append(RankRecord(qid, rec.true_id, rec.rank, rec.pool_size))
    return records, metrics(records, ks)


# ---------------------------------------------------------------------------
# Reports


def make_report(model: str, split: str, mode: str, metric_values: dict,
                config_echo: dict, seed: int, wall_time: float) -> dict:
    return {
        "model": model,
        "split": split,
        "mode": mode,
        "metrics": metric_values,
        "config": config_echo,
        "seed": seed,
        "wall_time": wall_time,
    }


def write_report(path: str, report: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def append_report_csv(path: str, report: dict) -> None:
    """Flat one-row-per-run CSV for aggregating across runs."""
    row = {"model": report["model"], "split": report["split"],
           "mode": report["mode"], "seed": report["seed"],
           "wall_time": report["wall_time"]}
    for key, value in sorted(report["metrics"].items()):
        row[key] = value
    exists = os.path.exists(path)
    with open(path, "a", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(row.keys()))
        if not exists:
            writer.writeheader()
        writer.writerow(row)
