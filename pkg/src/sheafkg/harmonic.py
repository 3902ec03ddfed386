"""Generalized harmonic extension of boundary entity embeddings.

Fixing rows x_B and minimizing the quadratic edge-disagreement energy over
the interior rows x_U has the closed-form solution

    x_U = Delta[U,U]^{-1} ( (delta^T r)_U - Delta[U,B] x_B )

and the same minimum is reached by explicit Euler steps on the energy
gradient, ``x_U <- x_U - alpha * (Delta[U,U] x_U + Delta[U,B] x_B -
(delta^T r)_U)``, which converges for alpha in (0, 1] because the
normalized operator's spectrum lies in [0, 2].

By default both solvers operate in the rescaled frame of the normalized
Laplacian: boundary rows are mapped in via y = D^{1/2} x and results are
mapped back via x = D^{-1/2} y, so the minimized quantity is the raw
energy. A flag switches to the unnormalized Laplacian, in which case the
step size is validated against a power-iteration estimate of the largest
eigenvalue.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import NumericError, SizeGuardError, UsageError, DivergenceError
from .sheaf import SheafSystem


class IterationRecord(NamedTuple):
    iteration: int
    residual: float
    energy: float


@dataclass
class ExtensionProblem:
    """One extension task: a sheaf system, a boundary/interior partition,
    fixed boundary rows, and solver knobs."""

    system: SheafSystem
    boundary: np.ndarray          # entity ids with known embeddings
    interior: np.ndarray          # entity ids to infer
    x_boundary: np.ndarray        # (|B|, d) raw coordinates
    x_interior_init: np.ndarray   # (|U|, d) raw coordinates
    alpha: float = 0.1
    max_iters: int = 1000
    tol: float = 0.0
    normalized: bool = True
    dense_limit: int = 4096

    def __post_init__(self):
        self.boundary = np.asarray(self.boundary, dtype=np.int64)
        self.interior = np.asarray(self.interior, dtype=np.int64)
        n = self.system.n_nodes
        ids = np.concatenate([self.boundary, self.interior])
        if len(np.unique(ids)) != len(ids):
            raise UsageError("boundary and interior sets overlap")
        if len(ids) != n:
            raise UsageError("boundary and interior must partition all nodes")
        self.x_boundary = np.asarray(self.x_boundary, dtype=np.float64).reshape(
            len(self.boundary), self.system.d)
        self.x_interior_init = np.asarray(self.x_interior_init, dtype=np.float64).reshape(
            len(self.interior), self.system.d)
        if not 0.0 < self.alpha:
            raise UsageError("alpha must be positive")
        if self.normalized and self.alpha > 1.0:
            raise UsageError("alpha must be <= 1 on the normalized system")
        if not self.normalized:
            lam = estimate_lambda_max(self.system.laplacian)
            if lam > 0 and self.alpha > 1.99 / lam:
                raise UsageError(
                    f"alpha={self.alpha} unstable for unnormalized system; "
                    f"use alpha <= {1.99 / lam:.3e} (lambda_max ~ {lam:.3e})")


def estimate_lambda_max(matrix, iters: int = 60, seed: int = 0) -> float:
    """Power-iteration estimate of the largest eigenvalue."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((matrix.n, matrix.d))
    lam = 0.0
    for _ in range(iters):
        y = matrix.apply(x)
        norm = float(np.sqrt((y * y).sum()))
        if norm == 0.0:
            return 0.0
        lam = norm / float(np.sqrt((x * x).sum()))
        x = y / norm
    return lam


def init_unknown(n_unknown: int, d: int, distribution: str = "normal",
                 seed: int = 0) -> np.ndarray:
    """Seeded initial interior rows: N(0, 1/d) entries or zeros."""
    if distribution == "zeros":
        return np.zeros((n_unknown, d))
    if distribution == "normal":
        rng = np.random.default_rng(seed)
        return rng.standard_normal((n_unknown, d)) / np.sqrt(d)
    raise UsageError(f"unknown init distribution {distribution!r}")


def translation_rhs(system: SheafSystem, normalized: bool = True) -> np.ndarray:
    """Full (n, d) vector delta^T r, computed with the scaled coboundary
    when operating in normalized coordinates."""
    cob = system.scaled_coboundary if normalized else system.coboundary
    return cob.apply_transpose(cob.translations)


def _pseudo_solve_sym(A: np.ndarray, b: np.ndarray, cutoff: float = 1e-12) -> np.ndarray:
    """Minimum-norm solution of the symmetric PSD system A x = b."""
    w, q = np.linalg.eigh(A)
    wmax = float(np.abs(w).max()) if w.size else 0.0
    inv = np.where(np.abs(w) > cutoff * wmax, 1.0 / np.where(w != 0, w, 1.0), 0.0) \
        if wmax > 0 else np.zeros_like(w)
    return q @ (inv * (q.T @ b))


def _setup(problem: ExtensionProblem):
    sys = problem.system
    B, U = problem.boundary, problem.interior
    M = sys.operator(problem.normalized)
    y_b = sys.frame_in(problem.x_boundary, B, problem.normalized)
    rhs = translation_rhs(sys, problem.normalized)[U] if len(U) else np.zeros((0, sys.d))
    A_uu = M.submatrix(U, U)
    A_ub = M.submatrix(U, B)
    return sys, B, U, y_b, rhs, A_uu, A_ub


def _assemble_output(problem: ExtensionProblem, x_u: np.ndarray) -> np.ndarray:
    sys = problem.system
    out = np.zeros((sys.n_nodes, sys.d))
    out[problem.boundary] = problem.x_boundary  # bitwise-identical boundary rows
    out[problem.interior] = x_u
    return out


def extend_closed_form(problem: ExtensionProblem) -> np.ndarray:
    """Dense solve of the extension system; pseudo-inverse when singular.

    Guarded by ``dense_limit`` on |U| * d; larger problems should use
    :func:`extend_iterative`.
    """
    sys, B, U, y_b, rhs, A_uu, A_ub = _setup(problem)
    if len(U) == 0:
        return _assemble_output(problem, problem.x_interior_init)
    size = len(U) * sys.d
    if size > problem.dense_limit:
        raise SizeGuardError(
            f"dense solve of size {size} exceeds limit {problem.dense_limit}; "
            "use extend_iterative")
    b = (rhs - A_ub.apply(y_b)).ravel()
    y_u = _pseudo_solve_sym(A_uu.to_dense(), b).reshape(len(U), sys.d)
    if not np.all(np.isfinite(y_u)):
        raise NumericError("closed-form extension produced non-finite values")
    return _assemble_output(problem, sys.frame_out(y_u, U, problem.normalized))


def extend_iterative(problem: ExtensionProblem):
    """Euler diffusion of the interior rows toward the harmonic extension.

    Returns ``(x, records)`` where records trace the interior gradient norm
    and total energy per iteration (iteration 0 is the initial state).
    Raises :class:`DivergenceError` after 10 consecutive energy increases.
    """
    sys, B, U, y_b, rhs, A_uu, A_ub = _setup(problem)
    cob = sys.scaled_coboundary if problem.normalized else sys.coboundary
    y_u = sys.frame_in(problem.x_interior_init, U, problem.normalized)

    y_full = np.zeros((sys.n_nodes, sys.d))
    y_full[B] = y_b

    def diagnostics(yu):
        y_full[U] = yu
        res = cob.residual(y_full)
        grad = A_uu.apply(yu) + const if len(U) else np.zeros((0, sys.d))
        return float(np.sqrt((grad * grad).sum())), float((res * res).sum())

    const = (A_ub.apply(y_b) - rhs) if len(U) else np.zeros((0, sys.d))
    residual, en = diagnostics(y_u)
    records = [IterationRecord(0, residual, en)]
    bad_streak = 0
    for k in range(1, problem.max_iters + 1):
        if residual <= problem.tol or len(U) == 0:
            break
        y_u = y_u - problem.alpha * (A_uu.apply(y_u) + const)
        prev_en = en
        residual, en = diagnostics(y_u)
        records.append(IterationRecord(k, residual, en))
        if not np.isfinite(en):
            raise NumericError(f"energy became non-finite at iteration {k}")
        if en > prev_en + 1e-12 * max(1.0, prev_en):
            bad_streak += 1
            if bad_streak >= 10:
                raise DivergenceError(
                    f"energy increased for {bad_streak} consecutive iterations; "
                    "reduce alpha")
        else:
            bad_streak = 0
    return _assemble_output(problem, sys.frame_out(y_u, U, problem.normalized)), records


def write_trace_csv(path: str, records) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "residual", "energy"])
        for rec in records:
            writer.writerow([rec.iteration, repr(rec.residual), repr(rec.energy)])
