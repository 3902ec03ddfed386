"""Embedding model families: structured (SE), translational (TransE/TransR),
and rotational (RotatE), all realized as special cases of the generalized
energy ``f(h,r,t) = ||A_h x_h + b - A_t x_t||^p`` with lower = better.

RotatE is stored as phase angles and realified into 2x2 rotation blocks so
every family feeds the same real-linear sheaf pipeline downstream.
Gradients are analytic; the only public gradient entry point is
:func:`grad_from_requests`, which differentiates a weighted sum of triple
energies (all losses reduce to that form).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericError, UsageError
from .sheaf import RelationRepresentation

SE = "se"
TRANSE = "transe"
TRANSR = "transr"
ROTATE = "rotate"
FAMILIES = (SE, TRANSE, TRANSR, ROTATE)


def check_family(family: str, d: int | None = None) -> None:
    if family not in FAMILIES:
        raise UsageError(f"unknown model family {family!r}; expected one of {FAMILIES}")
    if family == ROTATE and d is not None and d % 2 != 0:
        raise DimensionError("rotate requires an even embedding dimension")


@dataclass
class ModelParams:
    """All trainable tensors of one model. Unused per-family fields stay None."""

    family: str
    entities: np.ndarray  # (n_entities, d)
    rel_head: np.ndarray | None = None   # (n_rel, d, d), se
    rel_tail: np.ndarray | None = None   # (n_rel, d, d), se
    rel_map: np.ndarray | None = None    # (n_rel, d, d), transr
    rel_trans: np.ndarray | None = None  # (n_rel, d), transe / transr
    rel_phase: np.ndarray | None = None  # (n_rel, d // 2), rotate

    @property
    def dim(self) -> int:
        return self.entities.shape[1]

    @property
    def n_entities(self) -> int:
        return self.entities.shape[0]

    @property
    def n_relations(self) -> int:
        for t in (self.rel_head, self.rel_map, self.rel_trans, self.rel_phase):
            if t is not None:
                return t.shape[0]
        return 0

    def tensors(self) -> dict[str, np.ndarray]:
        """Name -> array for every tensor the family actually uses."""
        out = {"entities": self.entities}
        for name in ("rel_head", "rel_tail", "rel_map", "rel_trans", "rel_phase"):
            arr = getattr(self, name)
            if arr is not None:
                out[name] = arr
        return out

    def set_tensor(self, name: str, arr: np.ndarray) -> None:
        setattr(self, name, arr)

    def copy(self) -> "ModelParams":
        kw = {name: arr.copy() for name, arr in self.tensors().items()}
        return ModelParams(family=self.family, **kw)

    def check_finite(self) -> None:
        for name, arr in self.tensors().items():
            if not np.all(np.isfinite(arr)):
                raise NumericError(f"non-finite values in parameter tensor {name!r}")


def init_params(family: str, d: int, n_entities: int, n_relations: int,
                seed: int = 0) -> ModelParams:
    """Seeded initialization: entity rows ~ N(0, 1/d); relation matrices are
    identity plus N(0, (0.1/sqrt(d))^2) perturbations; translations are
    uniform in +-0.5/sqrt(d) and rotation phases uniform in +-0.1*pi."""
    if d < 1:
        raise DimensionError("d must be >= 1")
    check_family(family, d)
    rng = np.random.default_rng(seed)
    params = ModelParams(family=family,
                         entities=rng.standard_normal((n_entities, d)) / np.sqrt(d))
    pert = 0.1 / np.sqrt(d)
    if family == SE:
        eye = np.eye(d)
        params.rel_head = eye + pert * rng.standard_normal((n_relations, d, d))
        params.rel_tail = eye + pert * rng.standard_normal((n_relations, d, d))
    elif family == TRANSR:
        params.rel_map = np.eye(d) + pert * rng.standard_normal((n_relations, d, d))
        params.rel_trans = rng.uniform(-0.5, 0.5, size=(n_relations, d)) / np.sqrt(d)
    elif family == TRANSE:
        params.rel_trans = rng.uniform(-0.5, 0.5, size=(n_relations, d)) / np.sqrt(d)
    else:
        params.rel_phase = rng.uniform(-0.1 * np.pi, 0.1 * np.pi,
                                       size=(n_relations, d // 2))
    return params


# ---------------------------------------------------------------------------
# Scoring


def _rotate_apply(phases: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Apply per-pair 2x2 rotations. phases (k, d/2), x (k, d)."""
    pairs = x.reshape(x.shape[0], -1, 2)
    c, s = np.cos(phases), np.sin(phases)
    out = np.empty_like(pairs)
    out[..., 0] = c * pairs[..., 0] - s * pairs[..., 1]
    out[..., 1] = s * pairs[..., 0] + c * pairs[..., 1]
    return out.reshape(x.shape)


def _rotate_apply_t(phases: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Transpose (inverse) rotation applied pairwise."""
    return _rotate_apply(-phases, x)


def _residuals(params: ModelParams, h: np.ndarray, r: np.ndarray,
               t: np.ndarray) -> np.ndarray:
    """u_k = A_h x_h + b - A_t x_t per request, grouped by relation."""
    X = params.entities
    xh, xt = X[h], X[t]
    u = np.empty_like(xh)
    fam = params.family
    for rel in np.unique(r):
        m = r == rel
        if fam == SE:
            u[m] = xh[m] @ params.rel_head[rel].T - xt[m] @ params.rel_tail[rel].T
        elif fam == TRANSE:
            u[m] = xh[m] + params.rel_trans[rel] - xt[m]
        elif fam == TRANSR:
            u[m] = (xh[m] - xt[m]) @ params.rel_map[rel].T + params.rel_trans[rel]
        else:
            u[m] = _rotate_apply(params.rel_phase[rel], xh[m]) - xt[m]
    return u


def batch_scores(params: ModelParams, h, r, t, p: int = 2) -> np.ndarray:
    """Energies of the requested triples; shape (len(h),)."""
    h = np.asarray(h, dtype=np.int64)
    r = np.asarray(r, dtype=np.int64)
    t = np.asarray(t, dtype=np.int64)
    u = _residuals(params, h, r, t)
    sq = np.einsum("kd,kd->k", u, u)
    return sq if p == 2 else np.sqrt(sq)


def score_triple(params: ModelParams, h: int, r: int, t: int, p: int = 2) -> float:
    return float(batch_scores(params, [h], [r], [t], p=p)[0])


def grad_from_requests(params: ModelParams, h, r, t, coeffs,
                       p: int = 2) -> dict[str, np.ndarray]:
    """Gradient of ``sum_k coeffs[k] * f(h_k, r_k, t_k)`` w.r.t. every tensor.

    Requests sharing a triple simply accumulate. For p=1 the subgradient at
    a zero residual is taken to be zero.
    """
    h = np.asarray(h, dtype=np.int64)
    r = np.asarray(r, dtype=np.int64)
    t = np.asarray(t, dtype=np.int64)
    coeffs = np.asarray(coeffs, dtype=np.float64)
    X = params.entities
    u = _residuals(params, h, r, t)
    if p == 2:
        v = (2.0 * coeffs)[:, None] * u
    else:
        norms = np.sqrt(np.einsum("kd,kd->k", u, u))
        safe = np.where(norms > 0, norms, 1.0)
        v = (coeffs / safe)[:, None] * u
        v[norms == 0] = 0.0

    grads = {name: np.zeros_like(arr) for name, arr in params.tensors().items()}
    gE = grads["entities"]
    xh, xt = X[h], X[t]
    fam = params.family
    for rel in np.unique(r):
        m = r == rel
        vm = v[m]
        if fam == SE:
            np.add.at(gE, h[m], vm @ params.rel_head[rel])
            np.add.at(gE, t[m], -(vm @ params.rel_tail[rel]))
            grads["rel_head"][rel] += vm.T @ xh[m]
            grads["rel_tail"][rel] -= vm.T @ xt[m]
        elif fam == TRANSE:
            np.add.at(gE, h[m], vm)
            np.add.at(gE, t[m], -vm)
            grads["rel_trans"][rel] += vm.sum(axis=0)
        elif fam == TRANSR:
            pulled = vm @ params.rel_map[rel]
            np.add.at(gE, h[m], pulled)
            np.add.at(gE, t[m], -pulled)
            grads["rel_map"][rel] += vm.T @ (xh[m] - xt[m])
            grads["rel_trans"][rel] += vm.sum(axis=0)
        else:
            phases = params.rel_phase[rel]
            np.add.at(gE, h[m], _rotate_apply_t(phases, vm))
            np.add.at(gE, t[m], -vm)
            # d(rot)/d(theta) maps (a, b) -> (-s*a - c*b, c*a - s*b)
            pa = xh[m].reshape(vm.shape[0], -1, 2)
            vp = vm.reshape(vm.shape[0], -1, 2)
            c, s = np.cos(phases), np.sin(phases)
            wa = -s * pa[..., 0] - c * pa[..., 1]
            wb = c * pa[..., 0] - s * pa[..., 1]
            grads["rel_phase"][rel] += (vp[..., 0] * wa + vp[..., 1] * wb).sum(axis=0)
    return grads


# ---------------------------------------------------------------------------
# Sheaf form


def rotation_matrix(phases: np.ndarray) -> np.ndarray:
    """Block-diagonal matrix of 2x2 rotations from a (d/2,) phase vector."""
    d = 2 * phases.shape[0]
    out = np.zeros((d, d))
    c, s = np.cos(phases), np.sin(phases)
    idx = np.arange(phases.shape[0])
    out[2 * idx, 2 * idx] = c
    out[2 * idx, 2 * idx + 1] = -s
    out[2 * idx + 1, 2 * idx] = s
    out[2 * idx + 1, 2 * idx + 1] = c
    return out


def to_sheaf_form(params: ModelParams) -> list[RelationRepresentation]:
    """Per-relation (head map, tail map, translation) triples realizing each
    family inside the generalized energy."""
    d = params.dim
    eye = np.eye(d)
    zero = np.zeros(d)
    reps = []
    for rel in range(params.n_relations):
        if params.family == SE:
            reps.append(RelationRepresentation(params.rel_head[rel].copy(),
                                               params.rel_tail[rel].copy(), zero.copy()))
        elif params.family == TRANSE:
            reps.append(RelationRepresentation(eye.copy(), eye.copy(),
                                               params.rel_trans[rel].copy()))
        elif params.family == TRANSR:
            reps.append(RelationRepresentation(params.rel_map[rel].copy(),
                                               params.rel_map[rel].copy(),
                                               params.rel_trans[rel].copy()))
        else:
            reps.append(RelationRepresentation(rotation_matrix(params.rel_phase[rel]),
                                               eye.copy(), zero.copy()))
    return reps
