"""Conjunctive query answering by Schur-complement reduction.

A query is a small directed multigraph over anchor slots (embeddings
known), optional interior slots (existentially quantified), and one target
slot. Eliminating the interior block of the query's sheaf Laplacian yields
a dense quadratic form over anchors + target whose value at a candidate
target embedding equals the energy of the best possible interior
assignment; candidates are ranked ascending by that energy.

For representations with translations the reduced energy gains a linear
term and a candidate-independent constant; the constant is dropped while
ranking and only included when absolute energies are requested.

Local slot numbering is always anchors first, then interiors, target last,
and edges/relations follow the per-shape template order documented in
``SHAPES``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import CoverageError, ShapeError, UsageError
from .evaluation import RankRecord, metrics, rank_tail
from .sheaf import BlockSparseSymmetric, Coboundary, SheafSystem, system_from_edges

# shape -> (n_anchors, n_interior, edge template). Template nodes: "s<i>"
# anchor, "u<i>" interior, "t" target; edges are (from, to) with relations
# assigned in template order.
SHAPES = {
    "1p": (1, 0, [("s0", "t")]),
    "2p": (1, 1, [("s0", "u0"), ("u0", "t")]),
    "3p": (1, 2, [("s0", "u0"), ("u0", "u1"), ("u1", "t")]),
    "2i": (2, 0, [("s0", "t"), ("s1", "t")]),
    "3i": (3, 0, [("s0", "t"), ("s1", "t"), ("s2", "t")]),
    "pi": (2, 1, [("s0", "u0"), ("u0", "t"), ("s1", "t")]),
    "ip": (2, 1, [("s0", "u0"), ("s1", "u0"), ("u0", "t")]),
}


@dataclass(frozen=True)
class QueryGraph:
    shape: str
    anchors: tuple      # global entity ids, one per anchor slot
    relations: tuple    # global relation ids, one per edge (template order)
    edges: tuple        # (from_slot, relation_id, to_slot) local triples

    @property
    def n_anchors(self) -> int:
        return SHAPES[self.shape][0]

    @property
    def n_interior(self) -> int:
        return SHAPES[self.shape][1]

    @property
    def n_nodes(self) -> int:
        return self.n_anchors + self.n_interior + 1

    @property
    def anchor_slots(self):
        return list(range(self.n_anchors))

    @property
    def interior_slots(self):
        return list(range(self.n_anchors, self.n_anchors + self.n_interior))

    @property
    def target_slot(self) -> int:
        return self.n_nodes - 1


def build_query(shape: str, anchors, relations) -> QueryGraph:
    """Instantiate a query graph with canonical slot numbering."""
    if shape not in SHAPES:
        raise ShapeError(f"unknown query shape {shape!r}; expected one of {sorted(SHAPES)}")
    n_anchors, n_interior, template = SHAPES[shape]
    anchors = tuple(int(a) for a in anchors)
    relations = tuple(int(r) for r in relations)
    if len(anchors) != n_anchors:
        raise ShapeError(f"{shape} takes {n_anchors} anchors, got {len(anchors)}")
    if len(relations) != len(template):
        raise ShapeError(f"{shape} takes {len(template)} relations, got {len(relations)}")
    slot = {f"s{i}": i for i in range(n_anchors)}
    slot.update({f"u{i}": n_anchors + i for i in range(n_interior)})
    slot["t"] = n_anchors + n_interior
    edges = tuple((slot[a], relations[k], slot[b]) for k, (a, b) in enumerate(template))
    return QueryGraph(shape, anchors, relations, edges)


@dataclass(frozen=True)
class QueryInstance:
    query: QueryGraph
    easy_answers: frozenset = field(default_factory=frozenset)
    hard_answers: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "easy_answers", frozenset(int(e) for e in self.easy_answers))
        object.__setattr__(self, "hard_answers", frozenset(int(e) for e in self.hard_answers))
        if self.easy_answers & self.hard_answers:
            raise UsageError("easy and hard answer sets overlap")


def load_queries_jsonl(path: str) -> list[QueryInstance]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            qg = build_query(obj["shape"], obj["anchors"], obj["relations"])
            out.append(QueryInstance(qg, frozenset(obj.get("easy_answers", [])),
                                     frozenset(obj.get("hard_answers", []))))
    return out


def save_queries_jsonl(path: str, instances) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps({
                "shape": inst.query.shape,
                "anchors": list(inst.query.anchors),
                "relations": list(inst.query.relations),
                "easy_answers": sorted(inst.easy_answers),
                "hard_answers": sorted(inst.hard_answers),
            }) + "\n")


def save_answers_jsonl(path: str, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps({"query_index": rec.query_id,
                                 "hard_answer": rec.true_id,
                                 "filtered_rank": rec.rank}) + "\n")


def queries_from_triples(est_triples: np.ndarray, obs_index: dict) -> list[QueryInstance]:
    """1p instances grouped by (head, relation); observed tails are easy."""
    est_triples = np.asarray(est_triples, dtype=np.int64).reshape(-1, 3)
    grouped: dict[tuple[int, int], set[int]] = {}
    for h, r, t in est_triples.tolist():
        grouped.setdefault((h, r), set()).add(t)
    out = []
    for (h, r), tails in sorted(grouped.items()):
        easy = set(obs_index.get((h, r), set()))
        hard = tails - easy
        if hard:
            out.append(QueryInstance(build_query("1p", [h], [r]),
                                     frozenset(easy), frozenset(hard)))
    return out


# ---------------------------------------------------------------------------
# Reduction and scoring


def _pinv_sym(A: np.ndarray, cutoff: float = 1e-12) -> np.ndarray:
    w, q = np.linalg.eigh(A)
    wmax = float(np.abs(w).max()) if w.size else 0.0
    inv = np.where(np.abs(w) > cutoff * wmax, 1.0 / np.where(w != 0, w, 1.0), 0.0) \
        if wmax > 0 else np.zeros_like(w)
    return (q * inv) @ q.T


def query_system(qg: QueryGraph, reps, cutoff: float = 1e-10) -> SheafSystem:
    """Sheaf system of the query subgraph on its local slots."""
    edges = np.asarray(qg.edges, dtype=np.int64)
    return system_from_edges(edges, qg.n_nodes, reps, cutoff=cutoff)


def schur_reduce(matrix: BlockSparseSymmetric, interior) -> np.ndarray:
    """Dense Schur complement eliminating the listed node blocks.

    The result is ordered by the surviving nodes' original order; with the
    canonical slot numbering that is anchors first, target last. An empty
    interior returns the dense matrix unchanged.
    """
    interior = sorted(int(u) for u in interior)
    boundary = [i for i in range(matrix.n) if i not in interior]
    if not interior:
        return matrix.submatrix(boundary, boundary).to_dense()
    m_bb = matrix.submatrix(boundary, boundary).to_dense()
    m_bu = matrix.submatrix(boundary, interior).to_dense()
    m_uu = matrix.submatrix(interior, interior).to_dense()
    return m_bb - m_bu @ _pinv_sym(m_uu) @ m_bu.T


def translational_terms(matrix: BlockSparseSymmetric, cob: Coboundary,
                        interior, boundary) -> tuple[np.ndarray, float]:
    """Linear coefficient over the boundary slots and the constant term of
    the reduced energy for translational representations.

    The reduced energy is ``x_B^T (M/M[U,U]) x_B + linear . x_B + constant``.
    """
    r = cob.translations.ravel()
    delta_b = cob.columns_dense(boundary)
    if len(interior):
        delta_u = cob.columns_dense(interior)
        m_uu = matrix.submatrix(interior, interior).to_dense()
        m_ub = matrix.submatrix(interior, boundary).to_dense()
        pinv_uu = _pinv_sym(m_uu)
        linear = -2.0 * (delta_b.T @ r - m_ub.T @ (pinv_uu @ (delta_u.T @ r)))
        constant = float(r @ r - (delta_u.T @ r) @ pinv_uu @ (delta_u.T @ r))
    else:
        linear = -2.0 * (delta_b.T @ r)
        constant = float(r @ r)
    return linear, constant


def score_candidates_quadratic(reduced: np.ndarray, x_anchors: np.ndarray,
                               candidates: np.ndarray) -> np.ndarray:
    """Quadratic-form scores for each candidate target embedding.

    ``x_anchors`` (n_anchors, d) and ``candidates`` (n_cand, d) must already
    be in the frame the reduced matrix was built in.
    """
    return score_candidates_translational(reduced, None, x_anchors, candidates)


def score_candidates_translational(reduced: np.ndarray, linear: np.ndarray | None,
                                   x_anchors: np.ndarray, candidates: np.ndarray,
                                   constant: float = 0.0) -> np.ndarray:
    """Scores of the reduced energy with an optional linear term; the
    candidate-independent ``constant`` defaults to dropped (zero)."""
    candidates = np.asarray(candidates, dtype=np.float64)
    d = candidates.shape[1]
    a = np.asarray(x_anchors, dtype=np.float64).ravel()
    k = a.shape[0]
    if reduced.shape != (k + d, k + d):
        raise UsageError("reduced matrix does not match anchors + one target slot")
    m_aa, m_at, m_tt = reduced[:k, :k], reduced[:k, k:], reduced[k:, k:]
    base = float(a @ m_aa @ a) + constant
    v = 2.0 * (m_at.T @ a)
    if linear is not None:
        base += float(linear[:k] @ a)
        v = v + linear[k:]
    return base + candidates @ v + np.einsum("nd,de,ne->n", candidates, m_tt, candidates)


def target_scores(qg: QueryGraph, reps, embeddings: np.ndarray,
                  normalized: bool = True, include_constant: bool = False) -> np.ndarray:
    """Reduced-energy score of every entity placed in the target slot."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    for a in qg.anchors:
        if not 0 <= a < embeddings.shape[0]:
            raise CoverageError(f"anchor entity {a} has no embedding row")
    sys = query_system(qg, reps)
    M = sys.operator(normalized)
    cob = sys.scaled_coboundary if normalized else sys.coboundary
    interior = qg.interior_slots
    boundary = qg.anchor_slots + [qg.target_slot]
    reduced = schur_reduce(M, interior)
    if np.any(np.abs(cob.translations) > 0):
        linear, constant = translational_terms(M, cob, interior, boundary)
    else:
        linear, constant = None, 0.0
    y_anchors = sys.frame_in(embeddings[list(qg.anchors)], qg.anchor_slots, normalized)
    if normalized:
        candidates = embeddings @ sys.degree_half[qg.target_slot].T
    else:
        candidates = embeddings
    return score_candidates_translational(
        reduced, linear, y_anchors, candidates,
        constant=constant if include_constant else 0.0)


def answer_query(instance: QueryInstance, reps, embeddings: np.ndarray,
                 ks=(1, 3, 10), normalized: bool = True):
    """Rank every entity for the target slot and return the filtered rank of
    each hard answer plus aggregate metrics (None when no hard answers)."""
    scores = target_scores(instance.query, reps, embeddings, normalized=normalized)
    records = []
    for answer in sorted(instance.hard_answers):
        rec = rank_tail(scores, answer, sorted(instance.easy_answers))
        records.append(rec)
    return records, (metrics(records, ks) if records else None)
