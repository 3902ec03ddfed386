"""Coboundary, Laplacian assembly, normalization, and energy identities,
checked against dense-matrix oracles."""

import numpy as np
import pytest

from sheafkg import generate_toy_kg, to_sheaf_form
from sheafkg.sheaf import (BlockSparseSymmetric, assemble_coboundary,
                           assemble_laplacian, build_system, energy, export_coo,
                           normalize, submatrix, apply)
from sheafkg.errors import SchemaError

from conftest import (graph_from_edges, path_graph, random_edges,
                      random_representations, trivial_reps)


def build_random_system(seed, n_nodes=6, n_edges=9, n_rel=2, d=3, translations=False):
    rng = np.random.default_rng(seed)
    edges = random_edges(n_nodes, n_edges, n_rel, rng)
    graph = graph_from_edges(edges, n_nodes, n_rel)
    reps = random_representations(n_rel, d, rng, translations=translations)
    return graph, reps, build_system(graph, reps)


class TestCoboundary:
    def test_single_edge_d1(self):
        graph = graph_from_edges([(0, 0, 1)], 2, 1)
        cob = assemble_coboundary(graph, trivial_reps())
        x = np.array([[1.0], [3.0]])
        np.testing.assert_allclose(cob.apply(x), [[2.0]])

    def test_self_loop_identity_maps_vanishes(self):
        graph = graph_from_edges([(0, 0, 0)], 1, 1)
        cob = assemble_coboundary(graph, trivial_reps())
        for value in (0.0, 2.5, -7.0):
            np.testing.assert_allclose(cob.apply(np.array([[value]])), [[0.0]])

    def test_planted_section_in_kernel(self):
        # Noise-free SE fixture (r = 0): the planted assignment is a global section.
        graph, params = generate_toy_kg(12, 2, "se", 3, noise=0.0, seed=7)
        cob = assemble_coboundary(graph, to_sheaf_form(params))
        assert np.linalg.norm(cob.apply(params.entities)) < 1e-9

    def test_missing_representation_raises(self):
        graph = graph_from_edges([(0, 0, 1), (1, 1, 2)], 3, 2)
        with pytest.raises(SchemaError):
            assemble_coboundary(graph, trivial_reps(1))

    def test_transpose_matches_dense(self, rng):
        graph, reps, system = build_random_system(3, translations=True)
        cob = system.coboundary
        dense = cob.columns_dense(range(cob.n_nodes))
        y = rng.standard_normal((cob.n_edges, cob.d))
        expected = (dense.T @ y.ravel()).reshape(cob.n_nodes, cob.d)
        np.testing.assert_allclose(cob.apply_transpose(y), expected, atol=1e-12)


class TestLaplacian:
    def test_trivial_sheaf_is_graph_laplacian(self):
        L = assemble_laplacian(assemble_coboundary(path_graph(3), trivial_reps()))
        expected = np.array([[1.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 1.0]])
        np.testing.assert_array_equal(L.to_dense(), expected)

    def test_single_se_edge_blocks(self, rng):
        d = 3
        a = rng.standard_normal((d, d))
        b = rng.standard_normal((d, d))
        from sheafkg.sheaf import RelationRepresentation
        graph = graph_from_edges([(0, 0, 1)], 2, 1)
        L = assemble_laplacian(assemble_coboundary(
            graph, [RelationRepresentation(a, b, np.zeros(d))]))
        np.testing.assert_allclose(L.block(0, 0), a.T @ a, atol=1e-14)
        np.testing.assert_allclose(L.block(1, 1), b.T @ b, atol=1e-14)
        np.testing.assert_allclose(L.block(1, 0), -(b.T @ a), atol=1e-14)
        np.testing.assert_allclose(L.block(0, 1), -(a.T @ b), atol=1e-14)

    def test_quadratic_form_equals_coboundary_norm(self):
        graph, reps, system = build_random_system(11)
        rng = np.random.default_rng(0)
        for _ in range(50):
            x = rng.standard_normal((graph.n_entities, 3))
            lhs = float((x * system.laplacian.apply(x)).sum())
            rhs = float((system.coboundary.apply(x) ** 2).sum())
            assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)

    def test_symmetry_via_probes(self, rng):
        graph, reps, system = build_random_system(4)
        L = system.laplacian
        for _ in range(20):
            x = rng.standard_normal((graph.n_entities, 3))
            y = rng.standard_normal((graph.n_entities, 3))
            assert (x * L.apply(y)).sum() == pytest.approx((y * L.apply(x)).sum(),
                                                           rel=1e-12, abs=1e-12)

    def test_psd_probes(self, rng):
        for seed in range(5):
            graph, reps, system = build_random_system(seed)
            for _ in range(100):
                x = rng.standard_normal((graph.n_entities, 3))
                assert (x * system.laplacian.apply(x)).sum() >= -1e-12
                assert (x * system.delta.apply(x)).sum() >= -1e-12

    def test_kernel_holds_planted_section(self):
        graph, params = generate_toy_kg(15, 2, "se", 3, noise=0.0, seed=5)
        L = assemble_laplacian(assemble_coboundary(graph, to_sheaf_form(params)))
        x = params.entities
        assert np.abs(L.apply(x)).max() < 1e-8 * np.linalg.norm(x)

    def test_parallel_edges_sum(self):
        # Two relations over the same node pair contribute additively.
        reps = trivial_reps(2)
        one = assemble_laplacian(assemble_coboundary(
            graph_from_edges([(0, 0, 1)], 2, 2), reps))
        both = assemble_laplacian(assemble_coboundary(
            graph_from_edges([(0, 0, 1), (0, 1, 1)], 2, 2), reps))
        np.testing.assert_allclose(both.to_dense(), 2 * one.to_dense())


class TestNormalize:
    def test_trivial_sheaf_matches_classical_normalized_laplacian(self):
        graph = path_graph(4)
        system = build_system(graph, trivial_reps())
        adj = np.zeros((4, 4))
        for h, _, t in graph.triples.tolist():
            adj[h, t] = adj[t, h] = 1.0
        deg = adj.sum(axis=1)
        expected = np.eye(4) - adj / np.sqrt(np.outer(deg, deg))
        np.testing.assert_allclose(system.delta.to_dense(), expected, atol=1e-14)

    @pytest.mark.parametrize("seed", range(6))
    def test_spectrum_within_zero_two(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(4, 20))
        graph, reps, system = build_random_system(seed, n_nodes=n, n_edges=2 * n,
                                                  n_rel=2, d=2)
        w = np.linalg.eigvalsh(system.delta.to_dense())
        assert w.min() >= -1e-9
        assert w.max() <= 2 + 1e-9

    def test_isolated_node_rows_vanish(self):
        # Node 2 has no incident edges.
        graph = graph_from_edges([(0, 0, 1)], 3, 1)
        system = build_system(graph, trivial_reps())
        assert np.all(system.degree_half[2] == 0)
        assert np.all(system.scaling[2] == 0)
        dense = system.delta.to_dense()
        assert np.all(dense[2] == 0) and np.all(dense[:, 2] == 0)


class TestEnergy:
    def test_single_transe_edge_exact(self):
        from sheafkg.sheaf import RelationRepresentation
        graph = graph_from_edges([(0, 0, 1)], 2, 1)
        reps = [RelationRepresentation(np.eye(2), np.eye(2), np.array([1.0, 1.0]))]
        x = np.array([[0.0, 0.0], [1.0, 1.0]])
        assert energy(x, graph, reps) == pytest.approx(0.0, abs=1e-15)

    def test_planted_fixture_energy_zero(self):
        graph, params = generate_toy_kg(20, 3, "transe", 4, noise=0.0, seed=2)
        assert energy(params.entities, graph, to_sheaf_form(params)) < 1e-9

    def test_expansion_identity(self, rng):
        # E(x) = x'Lx - 2 r'(delta x) + r'r
        graph, reps, system = build_random_system(9, translations=True)
        cob = system.coboundary
        for _ in range(10):
            x = rng.standard_normal((graph.n_entities, 3))
            direct = energy(x, graph, reps)
            quad = float((x * system.laplacian.apply(x)).sum())
            lin = float((cob.translations * cob.apply(x)).sum())
            const = float((cob.translations ** 2).sum())
            assert direct == pytest.approx(quad - 2 * lin + const, rel=1e-12)


class TestSubmatrixAndApply:
    def test_full_selection_is_identity(self):
        graph, reps, system = build_random_system(1)
        L = system.laplacian
        ids = list(range(graph.n_entities))
        np.testing.assert_allclose(L.submatrix(ids, ids).to_dense(), L.to_dense())

    def test_path_fixture_blocks(self):
        L = assemble_laplacian(assemble_coboundary(path_graph(3), trivial_reps()))
        np.testing.assert_array_equal(L.submatrix([1], [1]).to_dense(), [[2.0]])
        np.testing.assert_array_equal(L.submatrix([1], [0, 2]).to_dense(), [[-1.0, -1.0]])

    def test_out_of_range_raises(self):
        L = BlockSparseSymmetric(3, 1)
        with pytest.raises(IndexError):
            L.submatrix([0], [5])

    def test_identity_blocks_apply(self):
        M = BlockSparseSymmetric(3, 2)
        for i in range(3):
            M.add_block(i, i, np.eye(2))
        x = np.arange(6.0).reshape(3, 2)
        np.testing.assert_array_equal(apply(M, x), x)

    def test_path_matvec(self):
        L = assemble_laplacian(assemble_coboundary(path_graph(3), trivial_reps()))
        np.testing.assert_array_equal(
            apply(L, np.array([[0.0], [1.0], [0.0]])), [[-1.0], [2.0], [-1.0]])

    def test_random_matvec_against_dense(self, rng):
        graph, reps, system = build_random_system(8)
        L = system.laplacian
        dense = L.to_dense()
        for _ in range(10):
            x = rng.standard_normal((graph.n_entities, 3))
            expected = (dense @ x.ravel()).reshape(x.shape)
            assert np.abs(L.apply(x) - expected).max() < 1e-12

    def test_rect_apply_against_dense(self, rng):
        graph, reps, system = build_random_system(13)
        rows, cols = [0, 2, 4], [1, 3, 5]
        rect = submatrix(system.laplacian, rows, cols)
        x = rng.standard_normal((3, 3))
        expected = (rect.to_dense() @ x.ravel()).reshape(3, 3)
        np.testing.assert_allclose(rect.apply(x), expected, atol=1e-12)


def test_export_coo_roundtrip(tmp_path):
    import json
    graph, reps, system = build_random_system(2, n_nodes=4, n_edges=5, d=2)
    path = tmp_path / "lap.coo"
    export_coo(system.laplacian, str(path))
    lines = path.read_text().splitlines()
    header = json.loads(lines[0].lstrip("# "))
    assert header == {"n": 4, "d": 2}
    rebuilt = np.zeros((8, 8))
    for line in lines[1:]:
        i, j, di, dj, value = line.split()
        i, j, di, dj = map(int, (i, j, di, dj))
        # only upper node-blocks are exported; the full matrix is symmetric
        rebuilt[2 * i + di, 2 * j + dj] = float(value)
        rebuilt[2 * j + dj, 2 * i + di] = float(value)
    np.testing.assert_allclose(rebuilt, system.laplacian.to_dense(), atol=1e-12)
