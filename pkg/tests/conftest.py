"""Shared fixture builders: random sheaves, random graphs, trivial sheaves."""

import numpy as np
import pytest

from sheafkg import kg
from sheafkg.sheaf import RelationRepresentation


def random_representations(n_rel, d, rng, translations=False, kind="se"):
    """Well-conditioned random relation representations.

    kind "se": independent head/tail maps; "transe": identity maps with
    translations; "transr": shared map with translation.
    """
    reps = []
    for _ in range(n_rel):
        if kind == "transe":
            head = np.eye(d)
            tail = np.eye(d)
        elif kind == "transr":
            head = tail = np.eye(d) + 0.3 * rng.standard_normal((d, d)) / np.sqrt(d)
        else:
            head = np.eye(d) + 0.3 * rng.standard_normal((d, d)) / np.sqrt(d)
            tail = np.eye(d) + 0.3 * rng.standard_normal((d, d)) / np.sqrt(d)
        trans = rng.standard_normal(d) if (translations or kind in ("transe", "transr")) \
            else np.zeros(d)
        reps.append(RelationRepresentation(head, tail, trans))
    return reps


def trivial_reps(n_rel=1):
    """The trivial sheaf: d=1, identity maps, no translations."""
    return [RelationRepresentation(np.eye(1), np.eye(1), np.zeros(1))
            for _ in range(n_rel)]


def random_edges(n_nodes, n_edges, n_rel, rng, connected=True):
    """Random directed labeled edges, deduplicated, optionally spanning."""
    rows = []
    seen = set()
    if connected:
        for i in range(1, n_nodes):
            j = int(rng.integers(0, i))
            r = int(rng.integers(0, n_rel))
            edge = (j, r, i) if rng.random() < 0.5 else (i, r, j)
            if edge not in seen:
                seen.add(edge)
                rows.append(edge)
    while len(rows) < n_edges:
        h, t = rng.integers(0, n_nodes, size=2)
        if h == t:
            continue
        edge = (int(h), int(rng.integers(0, n_rel)), int(t))
        if edge not in seen:
            seen.add(edge)
            rows.append(edge)
    return np.asarray(rows, dtype=np.int64)


def graph_from_edges(edges, n_nodes, n_rel):
    entities = kg.Vocab(f"e{i}" for i in range(n_nodes))
    relations = kg.Vocab(f"r{i}" for i in range(n_rel))
    return kg.KnowledgeGraph(entities, relations, np.asarray(edges, dtype=np.int64))


def path_graph(n=3):
    """Chain e0 -> e1 -> ... under a single relation."""
    edges = [(i, 0, i + 1) for i in range(n - 1)]
    return graph_from_edges(edges, n, 1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
