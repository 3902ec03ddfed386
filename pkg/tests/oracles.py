"""Independent oracles used by the tests.

These deliberately avoid the library's coboundary/Laplacian/Schur machinery:
energies and their gradients are computed straight from the edge sums, and
constrained minima come from a dense least-squares stacking of the edge
residuals.
"""

import numpy as np


def edge_arrays(edges, reps):
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 3)
    head_maps = np.stack([reps[r].head for r in edges[:, 1]])
    tail_maps = np.stack([reps[r].tail for r in edges[:, 1]])
    trans = np.stack([reps[r].translation for r in edges[:, 1]])
    return edges, head_maps, tail_maps, trans


def edge_energy(edges, reps, x):
    """Sum over edges of ||A_h x_h + b - A_t x_t||^2, straight from the edges."""
    edges, head_maps, tail_maps, trans = edge_arrays(edges, reps)
    u = (np.einsum("eij,ej->ei", head_maps, x[edges[:, 0]]) + trans
         - np.einsum("eij,ej->ei", tail_maps, x[edges[:, 2]]))
    return float((u * u).sum())


def edge_energy_grad(edges, reps, x):
    """Analytic gradient of the edge-sum energy w.r.t. every row of x."""
    edges, head_maps, tail_maps, trans = edge_arrays(edges, reps)
    u = (np.einsum("eij,ej->ei", head_maps, x[edges[:, 0]]) + trans
         - np.einsum("eij,ej->ei", tail_maps, x[edges[:, 2]]))
    g = np.zeros_like(x)
    np.add.at(g, edges[:, 0], 2.0 * np.einsum("eji,ej->ei", head_maps, u))
    np.add.at(g, edges[:, 2], -2.0 * np.einsum("eji,ej->ei", tail_maps, u))
    return g


def gradient_descent_extension(edges, reps, x0, interior, steps=10000):
    """Minimize the edge-sum energy over the interior rows by plain gradient
    descent with a power-iteration step size; boundary rows stay fixed."""
    x = np.array(x0, dtype=np.float64)
    interior = np.asarray(interior, dtype=np.int64)

    def interior_grad(xc):
        return edge_energy_grad(edges, reps, xc)[interior]

    # Largest curvature of the quadratic via power iteration on the linear map.
    rng = np.random.default_rng(0)
    probe = np.zeros_like(x)
    v = rng.standard_normal((len(interior), x.shape[1]))
    zero_reps = [type(rep)(rep.head, rep.tail, np.zeros_like(rep.translation))
                 for rep in reps]
    lam = 1.0
    for _ in range(80):
        probe[:] = 0.0
        probe[interior] = v
        w = edge_energy_grad(edges, zero_reps, probe)[interior]
        norm = np.linalg.norm(w)
        if norm == 0:
            break
        lam = norm / np.linalg.norm(v)
        v = w / norm
    step = 0.9 / max(lam, 1e-12)
    for _ in range(steps):
        x[interior] -= step * interior_grad(x)
    return x


def min_energy_given_fixed(edges, reps, x_fixed: dict, free_nodes, d):
    """Exact constrained minimum of the edge-sum energy via dense least
    squares over the free rows. Returns (min_energy, x_free_rows)."""
    edges, head_maps, tail_maps, trans = edge_arrays(edges, reps)
    free_nodes = list(free_nodes)
    pos = {n: k for k, n in enumerate(free_nodes)}
    m = edges.shape[0]
    design = np.zeros((m * d, len(free_nodes) * d))
    offset = np.zeros(m * d)
    for e, (h, r, t) in enumerate(edges.tolist()):
        rows = slice(e * d, (e + 1) * d)
        offset[rows] += trans[e]
        if h in pos:
            design[rows, pos[h] * d:(pos[h] + 1) * d] += head_maps[e]
        else:
            offset[rows] += head_maps[e] @ x_fixed[h]
        if t in pos:
            design[rows, pos[t] * d:(pos[t] + 1) * d] -= tail_maps[e]
        else:
            offset[rows] -= tail_maps[e] @ x_fixed[t]
    if free_nodes:
        z, *_ = np.linalg.lstsq(design, -offset, rcond=None)
        resid = design @ z + offset
        return float(resid @ resid), z.reshape(len(free_nodes), d)
    return float(offset @ offset), np.zeros((0, d))
