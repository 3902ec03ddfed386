"""Knowledge-graph data model, TSV ingestion, split bookkeeping, and a
planted-parameter toy-graph generator used throughout the test suite.

A graph is a pair of insertion-ordered vocabularies (entities, relations)
plus a deduplicated array of directed (head, relation, tail) id triples.
Graphs are immutable after construction and safe to share across threads.

File format: UTF-8 text, one triple per line, three tab-separated fields
``head<TAB>relation<TAB>tail``. Lines starting with ``#`` are ignored.
Vocabulary exports are two-column TSV ``label<TAB>id``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import CoverageError, ParseError, SchemaError, UnknownSymbolError, UsageError

SEMI_INDUCTIVE = "semi_inductive"
INDUCTIVE = "inductive"
SPLIT_MODES = (SEMI_INDUCTIVE, INDUCTIVE)


class Vocab:
    """Bijection label <-> dense 0-based id, in first-occurrence order."""

    def __init__(self, labels=()):
        self._labels: list[str] = []
        self._index: dict[str, int] = {}
        self.frozen = False
        for lab in labels:
            self.add(lab)

    def __len__(self):
        return len(self._labels)

    def __contains__(self, label):
        return label in self._index

    def __eq__(self, other):
        return isinstance(other, Vocab) and self._labels == other._labels

    def labels(self) -> list[str]:
        return list(self._labels)

    def label(self, idx: int) -> str:
        return self._labels[idx]

    def id(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise UnknownSymbolError(f"unknown label {label!r}") from None

    def add(self, label: str) -> int:
        idx = self._index.get(label)
        if idx is not None:
            return idx
        if self.frozen:
            raise UnknownSymbolError(f"unknown label {label!r} (vocabulary is frozen)")
        idx = len(self._labels)
        self._labels.append(label)
        self._index[label] = idx
        return idx

    def copy(self) -> "Vocab":
        return Vocab(self._labels)


@dataclass(frozen=True)
class KnowledgeGraph:
    """Entity/relation vocabularies plus deduplicated directed triples."""

    entities: Vocab
    relations: Vocab
    triples: np.ndarray  # (m, 3) int64, columns (head, relation, tail)

    def __post_init__(self):
        t = np.asarray(self.triples, dtype=np.int64).reshape(-1, 3)
        object.__setattr__(self, "triples", t)
        if t.size:
            if t[:, 0].min() < 0 or t[:, 0].max() >= len(self.entities):
                raise CoverageError("head id out of range")
            if t[:, 2].min() < 0 or t[:, 2].max() >= len(self.entities):
                raise CoverageError("tail id out of range")
            if t[:, 1].min() < 0 or t[:, 1].max() >= len(self.relations):
                raise CoverageError("relation id out of range")

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    @property
    def n_triples(self) -> int:
        return self.triples.shape[0]

    def triple_set(self) -> set[tuple[int, int, int]]:
        return {tuple(row) for row in self.triples.tolist()}

    def true_tails(self) -> dict[tuple[int, int], set[int]]:
        """(head, relation) -> set of known true tails; the KGC filter index."""
        index: dict[tuple[int, int], set[int]] = {}
        for h, r, t in self.triples.tolist():
            index.setdefault((h, r), set()).add(t)
        return index


def _dedup_triples(rows: list[tuple[int, int, int]]) -> np.ndarray:
    seen = set()
    out = []
    for row in rows:
        if row not in seen:
            seen.add(row)
            out.append(row)
    return np.asarray(out, dtype=np.int64).reshape(-1, 3)


def load_triples(source, entities: Vocab | None = None, relations: Vocab | None = None,
                 freeze_entities: bool = False, freeze_relations: bool = False) -> KnowledgeGraph:
    """Parse a triple stream (path, text, or file object) into a graph.

    Existing vocabularies are reused and extended in place unless the
    corresponding freeze flag is set, in which case an unseen label raises
    :class:`UnknownSymbolError`. Exact duplicate triples are dropped;
    multiplicity is not preserved.
    """
    if isinstance(source, str) and "\t" not in source and "\n" not in source:
        stream = open(source, "r", encoding="utf-8")
        close = True
    elif isinstance(source, str):
        stream = io.StringIO(source)
        close = False
    else:
        stream = source
        close = False

    entities = Vocab() if entities is None else entities
    relations = Vocab() if relations is None else relations
    ent_was_frozen, rel_was_frozen = entities.frozen, relations.frozen
    entities.frozen = freeze_entities or ent_was_frozen
    relations.frozen = freeze_relations or rel_was_frozen

    rows: list[tuple[int, int, int]] = []
    try:
        for lineno, line in enumerate(stream, start=1):
            line = line.rstrip("\r\n")
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ParseError(f"expected 3 tab-separated fields, got {len(fields)}", lineno)
            h, r, t = fields
            try:
                rows.append((entities.add(h), relations.add(r), entities.add(t)))
            except UnknownSymbolError as exc:
                raise UnknownSymbolError(f"line {lineno}: {exc}") from None
    finally:
        entities.frozen = ent_was_frozen
        relations.frozen = rel_was_frozen
        if close:
            stream.close()

    return KnowledgeGraph(entities, relations, _dedup_triples(rows))


def save_triples(graph: KnowledgeGraph, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for h, r, t in graph.triples.tolist():
            fh.write(f"{graph.entities.label(h)}\t{graph.relations.label(r)}\t{graph.entities.label(t)}\n")


def save_vocab(vocab: Vocab, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for idx, lab in enumerate(vocab.labels()):
            fh.write(f"{lab}\t{idx}\n")


def load_vocab(path: str) -> Vocab:
    vocab = Vocab()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise ParseError("expected 2 tab-separated fields", lineno)
            if vocab.add(fields[0]) != int(fields[1]):
                raise ParseError(f"non-contiguous id for {fields[0]!r}", lineno)
    return vocab


@dataclass(frozen=True)
class SplitBundle:
    """Training graph, observable inference graph, estimation triples, and
    the boundary/interior entity partition implied by the split mode."""

    train: KnowledgeGraph
    inf_obs: KnowledgeGraph
    inf_est: np.ndarray  # (m, 3) id triples in inf_obs id space
    mode: str
    boundary: np.ndarray = field(default=None)  # entity ids fixed during extension
    interior: np.ndarray = field(default=None)  # entity ids to be inferred

    @property
    def n_entities(self) -> int:
        return self.inf_obs.n_entities


def build_split_bundle(train: KnowledgeGraph, inf_obs: KnowledgeGraph,
                       inf_est: np.ndarray, mode: str) -> SplitBundle:
    """Validate a (train, observed-inference, estimation) split and compute
    the boundary/interior partition.

    Semi-inductive mode anchors on the trained entities; inductive mode
    treats every inference entity as unknown.
    """
    if mode not in SPLIT_MODES:
        raise UsageError(f"mode must be one of {SPLIT_MODES}, got {mode!r}")
    if train.relations != inf_obs.relations:
        raise SchemaError("relation vocabularies of train and inf_obs differ")

    inf_est = np.asarray(inf_est, dtype=np.int64).reshape(-1, 3)
    n = inf_obs.n_entities
    if inf_est.size:
        ents = np.concatenate([inf_est[:, 0], inf_est[:, 2]])
        if ents.min() < 0 or ents.max() >= n:
            raise CoverageError("inf_est mentions an entity outside inf_obs")
        if inf_est[:, 1].min() < 0 or inf_est[:, 1].max() >= inf_obs.n_relations:
            raise CoverageError("inf_est mentions an unknown relation")

    if mode == SEMI_INDUCTIVE:
        for lab in train.entities.labels():
            if lab not in inf_obs.entities or inf_obs.entities.id(lab) != train.entities.id(lab):
                raise SchemaError(f"train entity {lab!r} has no matching id in inf_obs")
        boundary = np.arange(train.n_entities, dtype=np.int64)
    else:
        boundary = np.empty(0, dtype=np.int64)
    interior = np.setdiff1d(np.arange(n, dtype=np.int64), boundary)
    return SplitBundle(train, inf_obs, inf_est, mode, boundary, interior)


# ---------------------------------------------------------------------------
# Synthetic fixtures


def generate_toy_kg(n_entities: int, n_relations: int, family: str, d: int,
                    noise: float = 0.0, seed: int = 0, avg_degree: float = 3.0,
                    threshold: float | None = None):
    """Generate a deterministic toy graph with planted model parameters.

    Entities are placed by propagating a seed vector through randomly chosen
    relations, so every spanning edge has zero planted energy before the
    noise perturbation is applied. Additional edges are then proposed
    between existing entities and kept only when their planted energy falls
    below ``threshold`` (default ``1e-9 + 8 * d * noise**2``).

    Returns ``(graph, params)`` where ``params`` is a ready-made
    :class:`~sheafkg.models.ModelParams` holding the planted ground truth.
    """
    from . import models  # local import to avoid a cycle

    if n_entities < 2:
        raise UsageError("n_entities must be >= 2")
    if d < 1:
        raise UsageError("d must be >= 1")
    models.check_family(family, d)

    rng = np.random.default_rng(seed)
    params = _planted_params(family, d, n_entities, n_relations, rng)
    reps = models.to_sheaf_form(params)
    inv_head = [np.linalg.inv(reps[r].head) for r in range(n_relations)]
    inv_tail = [np.linalg.inv(reps[r].tail) for r in range(n_relations)]

    x = np.zeros((n_entities, d))
    x[0] = rng.standard_normal(d) / np.sqrt(d)
    rows: list[tuple[int, int, int]] = []
    for i in range(1, n_entities):
        j = int(rng.integers(0, i))
        r = int(rng.integers(0, n_relations))
        if rng.random() < 0.5:  # edge j -> i, place i to satisfy it exactly
            x[i] = inv_tail[r] @ (reps[r].head @ x[j] + reps[r].translation)
            rows.append((j, r, i))
        else:  # edge i -> j
            x[i] = inv_head[r] @ (reps[r].tail @ x[j] - reps[r].translation)
            rows.append((i, r, j))
        x[i] += noise * rng.standard_normal(d)
    params.entities = x

    if threshold is None:
        threshold = 1e-9 + 8.0 * d * noise ** 2
    seen = set(rows)
    n_attempts = max(0, int(round(avg_degree * n_entities / 2)) - (n_entities - 1))
    for _ in range(n_attempts):
        h = int(rng.integers(0, n_entities))
        r = int(rng.integers(0, n_relations))
        target = reps[r].head @ x[h] + reps[r].translation
        diff = x @ reps[r].tail.T - target
        energies = np.einsum("nd,nd->n", diff, diff)
        energies[h] = np.inf
        t = int(np.argmin(energies))
        if energies[t] < threshold and (h, r, t) not in seen:
            seen.add((h, r, t))
            rows.append((h, r, t))

    entities = Vocab(f"e{i}" for i in range(n_entities))
    relations = Vocab(f"r{i}" for i in range(n_relations))
    return KnowledgeGraph(entities, relations, _dedup_triples(rows)), params


def _planted_params(family, d, n_entities, n_relations, rng):
    from . import models

    params = models.ModelParams(family=family, entities=np.zeros((n_entities, d)))
    scale = 1.0 / np.sqrt(d)
    if family == models.SE:
        params.rel_head = np.stack([_random_orthogonal(d, rng) for _ in range(n_relations)])
        params.rel_tail = np.stack([_random_orthogonal(d, rng) for _ in range(n_relations)])
    elif family == models.TRANSR:
        params.rel_map = np.stack([_random_orthogonal(d, rng) for _ in range(n_relations)])
        params.rel_trans = rng.standard_normal((n_relations, d)) * scale
    elif family == models.TRANSE:
        params.rel_trans = rng.standard_normal((n_relations, d)) * scale
    else:  # rotate
        params.rel_phase = rng.uniform(-np.pi, np.pi, size=(n_relations, d // 2))
    return params


def _random_orthogonal(d: int, rng) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def holdout_entities(graph: KnowledgeGraph, n_holdout: int, seed: int = 0):
    """Carve a semi-inductive split out of a single graph.

    ``n_holdout`` entities are removed from the training graph. Edges
    between retained entities form the training graph; one incident edge
    per held-out entity is kept observable (anchoring its extension) and
    every other edge touching a held-out entity becomes an estimation
    triple. Entity ids are remapped so retained entities occupy the low id
    range, matching the boundary-first convention of extension.
    """
    if not 0 < n_holdout < graph.n_entities:
        raise UsageError("n_holdout must be in (0, n_entities)")
    rng = np.random.default_rng(seed)
    held = set(rng.choice(graph.n_entities, size=n_holdout, replace=False).tolist())

    retained_labels = [graph.entities.label(i) for i in range(graph.n_entities) if i not in held]
    held_labels = [graph.entities.label(i) for i in range(graph.n_entities) if i in held]
    new_entities = Vocab(retained_labels + held_labels)
    remap = {graph.entities.id(lab): new_entities.id(lab) for lab in new_entities.labels()}

    train_rows, obs_extra, est_rows = [], {}, []
    for h, r, t in graph.triples.tolist():
        row = (remap[h], r, remap[t])
        touched = [e for e in (h, t) if e in held]
        if not touched:
            train_rows.append(row)
            continue
        anchor_for = next((e for e in touched if e not in obs_extra), None)
        if anchor_for is not None:
            obs_extra[anchor_for] = row
        else:
            est_rows.append(row)

    train = KnowledgeGraph(Vocab(retained_labels), graph.relations.copy(),
                           _dedup_triples(train_rows))
    obs = KnowledgeGraph(new_entities, graph.relations.copy(),
                         _dedup_triples(train_rows + list(obs_extra.values())))
    return train, obs, _dedup_triples(est_rows)
