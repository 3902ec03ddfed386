"""Coboundary operator and block-sparse sheaf Laplacian.

Each directed edge h -> t under relation r carries a head map A_h, a tail
map A_t, and a translation b. The coboundary stacks one block row per edge,
``(delta x)_e = A_t x_t - A_h x_h``, so the graph energy is exactly
``||delta x - b||^2``. The Laplacian is ``L = delta^T delta`` and its
normalized form ``Delta = D^{-1/2} L D^{-1/2}`` (block-diagonal degree D)
has spectrum inside [0, 2].

Entity signals are (n, d) arrays, one row per node. Block sparsity is at
the node-pair level; individual d x d blocks are dense.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, SchemaError, UsageError


@dataclass
class RelationRepresentation:
    """Restriction data for one relation: head/tail d x d maps and a
    d-vector translation."""

    head: np.ndarray
    tail: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.head = np.asarray(self.head, dtype=np.float64)
        self.tail = np.asarray(self.tail, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        d = self.head.shape[0]
        if self.head.shape != (d, d) or self.tail.shape != (d, d):
            raise DimensionError("relation maps must be square and same-sized")
        if self.translation.shape != (d,):
            raise DimensionError("translation length must match map dimension")
        for arr in (self.head, self.tail, self.translation):
            if not np.all(np.isfinite(arr)):
                raise DimensionError("relation representation contains non-finite values")

    @property
    def dim(self) -> int:
        return self.head.shape[0]


class Coboundary:
    """Signed block rows of the coboundary, one per edge."""

    def __init__(self, heads, tails, head_maps, tail_maps, translations, n_nodes, d):
        self.heads = np.asarray(heads, dtype=np.int64)
        self.tails = np.asarray(tails, dtype=np.int64)
        self.head_maps = np.asarray(head_maps, dtype=np.float64).reshape(-1, d, d)
        self.tail_maps = np.asarray(tail_maps, dtype=np.float64).reshape(-1, d, d)
        self.translations = np.asarray(translations, dtype=np.float64).reshape(-1, d)
        self.n_nodes = int(n_nodes)
        self.d = int(d)

    @property
    def n_edges(self) -> int:
        return self.heads.shape[0]

    def apply(self, x: np.ndarray) -> np.ndarray:
        """(delta x)_e = A_t x_t - A_h x_h; x is (n, d), result (m, d)."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n_nodes, self.d):
            raise DimensionError(f"expected signal of shape {(self.n_nodes, self.d)}")
        return (np.einsum("eij,ej->ei", self.tail_maps, x[self.tails])
                - np.einsum("eij,ej->ei", self.head_maps, x[self.heads]))

    def apply_transpose(self, y: np.ndarray) -> np.ndarray:
        """delta^T y; y is (m, d), result (n, d)."""
        y = np.asarray(y, dtype=np.float64)
        out = np.zeros((self.n_nodes, self.d))
        np.add.at(out, self.tails, np.einsum("eji,ej->ei", self.tail_maps, y))
        np.add.at(out, self.heads, -np.einsum("eji,ej->ei", self.head_maps, y))
        return out

    def scaled(self, right_blocks: np.ndarray) -> "Coboundary":
        """Coboundary of the rescaled sheaf, delta S, for per-node blocks S."""
        return Coboundary(self.heads, self.tails,
                          np.einsum("eij,ejk->eik", self.head_maps, right_blocks[self.heads]),
                          np.einsum("eij,ejk->eik", self.tail_maps, right_blocks[self.tails]),
                          self.translations, self.n_nodes, self.d)

    def residual(self, x: np.ndarray) -> np.ndarray:
        return self.apply(x) - self.translations

    def columns_dense(self, node_ids) -> np.ndarray:
        """Dense (m*d, len(ids)*d) slice of delta restricted to node columns."""
        node_ids = list(node_ids)
        pos = {n: k for k, n in enumerate(node_ids)}
        out = np.zeros((self.n_edges * self.d, len(node_ids) * self.d))
        for e in range(self.n_edges):
            rs = slice(e * self.d, (e + 1) * self.d)
            t = self.tails[e]
            if t in pos:
                cs = slice(pos[t] * self.d, (pos[t] + 1) * self.d)
                out[rs, cs] += self.tail_maps[e]
            hnode = self.heads[e]
            if hnode in pos:
                cs = slice(pos[hnode] * self.d, (pos[hnode] + 1) * self.d)
                out[rs, cs] -= self.head_maps[e]
        return out


class BlockSparseRect:
    """Rectangular block-sparse view keyed by local (row, col) positions."""

    def __init__(self, n_rows, n_cols, d):
        self.n_rows, self.n_cols, self.d = n_rows, n_cols, d
        self._blocks: dict[tuple[int, int], np.ndarray] = {}
        self._stack = None

    def add_block(self, i, j, block):
        cur = self._blocks.get((i, j))
        self._blocks[(i, j)] = block.copy() if cur is None else cur + block
        self._stack = None

    def _stacked(self):
        if self._stack is None:
            items = sorted(self._blocks.items())
            rows = np.array([ij[0] for ij, _ in items], dtype=np.int64)
            cols = np.array([ij[1] for ij, _ in items], dtype=np.int64)
            blocks = (np.stack([b for _, b in items])
                      if items else np.zeros((0, self.d, self.d)))
            self._stack = (rows, cols, blocks)
        return self._stack

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n_cols, self.d):
            raise DimensionError(f"expected signal of shape {(self.n_cols, self.d)}")
        rows, cols, blocks = self._stacked()
        out = np.zeros((self.n_rows, self.d))
        if rows.size:
            np.add.at(out, rows, np.einsum("bij,bj->bi", blocks, x[cols]))
        return out

    def to_dense(self) -> np.ndarray:
        d = self.d
        out = np.zeros((self.n_rows * d, self.n_cols * d))
        for (i, j), b in self._blocks.items():
            out[i * d:(i + 1) * d, j * d:(j + 1) * d] = b
        return out


class BlockSparseSymmetric:
    """Symmetric block matrix storing only blocks with i <= j; the lower
    triangle is implied by L[j, i] = L[i, j]^T."""

    def __init__(self, n: int, d: int):
        self.n, self.d = int(n), int(d)
        self._blocks: dict[tuple[int, int], np.ndarray] = {}
        self._stack = None

    def add_block(self, i: int, j: int, block: np.ndarray) -> None:
        if i > j:
            i, j, block = j, i, block.T
        cur = self._blocks.get((i, j))
        self._blocks[(i, j)] = block.copy() if cur is None else cur + block
        self._stack = None

    def block(self, i: int, j: int) -> np.ndarray:
        """Dense (d, d) block at node pair (i, j); zeros when absent."""
        if i <= j:
            b = self._blocks.get((i, j))
            return np.zeros((self.d, self.d)) if b is None else b
        b = self._blocks.get((j, i))
        return np.zeros((self.d, self.d)) if b is None else b.T

    def diag_blocks(self) -> np.ndarray:
        out = np.zeros((self.n, self.d, self.d))
        for i in range(self.n):
            b = self._blocks.get((i, i))
            if b is not None:
                out[i] = b
        return out

    def _stacked(self):
        # Both orientations of the off-diagonal blocks, diagonal once.
        if self._stack is None:
            rows, cols, blocks = [], [], []
            for (i, j), b in self._blocks.items():
                rows.append(i)
                cols.append(j)
                blocks.append(b)
                if i != j:
                    rows.append(j)
                    cols.append(i)
                    blocks.append(b.T)
            self._stack = (np.asarray(rows, dtype=np.int64),
                           np.asarray(cols, dtype=np.int64),
                           np.stack(blocks) if blocks else np.zeros((0, self.d, self.d)))
        return self._stack

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n, self.d):
            raise DimensionError(f"expected signal of shape {(self.n, self.d)}")
        rows, cols, blocks = self._stacked()
        out = np.zeros((self.n, self.d))
        if rows.size:
            np.add.at(out, rows, np.einsum("bij,bj->bi", blocks, x[cols]))
        return out

    def submatrix(self, rows, cols) -> BlockSparseRect:
        """Block-sparse rectangular view of the listed node blocks."""
        rows = [int(i) for i in rows]
        cols = [int(j) for j in cols]
        for i in rows + cols:
            if not 0 <= i < self.n:
                raise IndexError(f"node id {i} out of range [0, {self.n})")
        rpos = {i: k for k, i in enumerate(rows)}
        cpos = {j: k for k, j in enumerate(cols)}
        out = BlockSparseRect(len(rows), len(cols), self.d)
        for (i, j), b in self._blocks.items():
            if i in rpos and j in cpos:
                out.add_block(rpos[i], cpos[j], b)
            if i != j and j in rpos and i in cpos:
                out.add_block(rpos[j], cpos[i], b.T)
        return out

    def transform_symmetric(self, side_blocks: np.ndarray) -> "BlockSparseSymmetric":
        """S M S for symmetric per-node blocks S (used for normalization)."""
        out = BlockSparseSymmetric(self.n, self.d)
        for (i, j), b in self._blocks.items():
            out.add_block(i, j, side_blocks[i] @ b @ side_blocks[j])
        return out

    def to_dense(self) -> np.ndarray:
        d = self.d
        out = np.zeros((self.n * d, self.n * d))
        for (i, j), b in self._blocks.items():
            out[i * d:(i + 1) * d, j * d:(j + 1) * d] = b
            if i != j:
                out[j * d:(j + 1) * d, i * d:(i + 1) * d] = b.T
        return out


def apply(matrix, x: np.ndarray) -> np.ndarray:
    """Blockwise matrix-vector product (module-level convenience)."""
    return matrix.apply(x)


def submatrix(matrix: BlockSparseSymmetric, rows, cols) -> BlockSparseRect:
    return matrix.submatrix(rows, cols)


# ---------------------------------------------------------------------------
# Assembly


def _check_reps(reps, n_relations: int) -> int:
    if len(reps) < n_relations:
        raise SchemaError(f"{n_relations} relations but only {len(reps)} representations")
    d = reps[0].dim
    for rep in reps:
        if rep.dim != d:
            raise SchemaError("relation representations have mixed dimensions")
    return d


def coboundary_from_edges(edges: np.ndarray, n_nodes: int, reps) -> Coboundary:
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 3)
    n_rel = int(edges[:, 1].max()) + 1 if edges.size else 0
    d = _check_reps(reps, n_rel)
    heads, rels, tails = edges[:, 0], edges[:, 1], edges[:, 2]
    head_maps = np.stack([reps[r].head for r in rels]) if edges.size else np.zeros((0, d, d))
    tail_maps = np.stack([reps[r].tail for r in rels]) if edges.size else np.zeros((0, d, d))
    trans = np.stack([reps[r].translation for r in rels]) if edges.size else np.zeros((0, d))
    return Coboundary(heads, tails, head_maps, tail_maps, trans, n_nodes, d)


def assemble_coboundary(graph, reps) -> Coboundary:
    """One block row per deduplicated triple, in triple iteration order."""
    d = _check_reps(reps, graph.n_relations)
    del d
    return coboundary_from_edges(graph.triples, graph.n_entities, reps)


def assemble_laplacian(cob: Coboundary) -> BlockSparseSymmetric:
    """L = delta^T delta, accumulated blockwise from the edge rows."""
    L = BlockSparseSymmetric(cob.n_nodes, cob.d)
    for e in range(cob.n_edges):
        h, t = int(cob.heads[e]), int(cob.tails[e])
        ah, at = cob.head_maps[e], cob.tail_maps[e]
        if h == t:
            row = at - ah
            L.add_block(h, h, row.T @ row)
            continue
        L.add_block(h, h, ah.T @ ah)
        L.add_block(t, t, at.T @ at)
        L.add_block(t, h, -(at.T @ ah))
    return L


@dataclass
class SheafSystem:
    """Assembled operators of one sheaf: raw and normalized Laplacians plus
    the per-node scaling blocks linking the two coordinate frames."""

    coboundary: Coboundary
    laplacian: BlockSparseSymmetric
    degree_half: np.ndarray       # (n, d, d) blocks of D^{1/2}
    scaling: np.ndarray           # (n, d, d) blocks of D^{-1/2} (pseudo-inverted)
    delta: BlockSparseSymmetric   # normalized Laplacian S L S
    scaled_coboundary: Coboundary

    @property
    def n_nodes(self) -> int:
        return self.laplacian.n

    @property
    def d(self) -> int:
        return self.laplacian.d

    def operator(self, normalized: bool) -> BlockSparseSymmetric:
        return self.delta if normalized else self.laplacian

    def frame_in(self, x: np.ndarray, ids, normalized: bool) -> np.ndarray:
        """Raw entity rows -> operating frame (y = D^{1/2} x when normalized)."""
        if not normalized:
            return np.array(x, dtype=np.float64)
        return np.einsum("bij,bj->bi", self.degree_half[ids], x)

    def frame_out(self, y: np.ndarray, ids, normalized: bool) -> np.ndarray:
        if not normalized:
            return np.array(y, dtype=np.float64)
        return np.einsum("bij,bj->bi", self.scaling[ids], y)


def normalize(L: BlockSparseSymmetric, cob: Coboundary,
              cutoff: float = 1e-10) -> SheafSystem:
    """Build the normalized system from an assembled Laplacian.

    Each degree block is eigendecomposed; eigenvalues below
    ``cutoff * lambda_max(block)`` are pseudo-inverted to zero so isolated
    or rank-deficient stalks cannot inject Inf/NaN.
    """
    D = L.diag_blocks()
    n, d = L.n, L.d
    half = np.zeros((n, d, d))
    inv_half = np.zeros((n, d, d))
    for i in range(n):
        w, q = np.linalg.eigh(D[i])
        w = np.clip(w, 0.0, None)
        wmax = w.max() if w.size else 0.0
        keep = w > cutoff * wmax if wmax > 0 else np.zeros_like(w, dtype=bool)
        sq = np.where(keep, np.sqrt(w), 0.0)
        isq = np.where(keep, 1.0 / np.where(keep, sq, 1.0), 0.0)
        half[i] = (q * sq) @ q.T
        inv_half[i] = (q * isq) @ q.T
    delta = L.transform_symmetric(inv_half)
    return SheafSystem(cob, L, half, inv_half, delta, cob.scaled(inv_half))


def build_system(graph, reps, cutoff: float = 1e-10) -> SheafSystem:
    """Assemble coboundary + Laplacian + normalization in one call."""
    cob = assemble_coboundary(graph, reps)
    return normalize(assemble_laplacian(cob), cob, cutoff=cutoff)


def system_from_edges(edges, n_nodes: int, reps, cutoff: float = 1e-10) -> SheafSystem:
    cob = coboundary_from_edges(edges, n_nodes, reps)
    return normalize(assemble_laplacian(cob), cob, cutoff=cutoff)


# ---------------------------------------------------------------------------
# Energy


def energy(x: np.ndarray, graph, reps, p: int = 2) -> float:
    """Total edge disagreement, summed directly over deduplicated triples
    (independent of the assembled operators)."""
    if p not in (1, 2):
        raise UsageError("p must be 1 or 2")
    x = np.asarray(x, dtype=np.float64)
    triples = graph.triples
    total = 0.0
    for rel in np.unique(triples[:, 1]) if triples.size else []:
        sub = triples[triples[:, 1] == rel]
        rep = reps[rel]
        u = x[sub[:, 0]] @ rep.head.T + rep.translation - x[sub[:, 2]] @ rep.tail.T
        sq = np.einsum("kd,kd->k", u, u)
        total += float(sq.sum() if p == 2 else np.sqrt(sq).sum())
    return total


def export_coo(matrix: BlockSparseSymmetric, path: str) -> None:
    """Debug dump: JSON header line then ``i j di dj value`` scalar entries."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# " + json.dumps({"n": matrix.n, "d": matrix.d}) + "\n")
        for (i, j), b in sorted(matrix._blocks.items()):
            for di in range(matrix.d):
                for dj in range(matrix.d):
                    if b[di, dj] != 0.0:
                        fh.write(f"{i} {j} {di} {dj} {float(b[di, dj])!r}\n")
