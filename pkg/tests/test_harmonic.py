"""Closed-form and iterative harmonic extension, checked against a
gradient-descent oracle on the raw edge-sum energy."""

import numpy as np
import pytest

from sheafkg import generate_toy_kg, to_sheaf_form
from sheafkg.errors import DivergenceError, SizeGuardError, UsageError
from sheafkg.harmonic import (ExtensionProblem, extend_closed_form,
                              extend_iterative, init_unknown, translation_rhs,
                              write_trace_csv)
from sheafkg.sheaf import RelationRepresentation, build_system

from conftest import (graph_from_edges, path_graph, random_edges,
                      random_representations, trivial_reps)
from oracles import edge_energy, gradient_descent_extension


def make_fixture(seed, n_nodes=6, n_edges=9, n_rel=2, d=2, kind="se",
                 n_boundary=2):
    rng = np.random.default_rng(seed)
    edges = random_edges(n_nodes, n_edges, n_rel, rng)
    graph = graph_from_edges(edges, n_nodes, n_rel)
    reps = random_representations(n_rel, d, rng, kind=kind)
    system = build_system(graph, reps)
    boundary = np.arange(n_boundary)
    interior = np.arange(n_boundary, n_nodes)
    x_b = rng.standard_normal((n_boundary, d))
    x_u0 = rng.standard_normal((n_nodes - n_boundary, d))
    return graph, reps, system, boundary, interior, x_b, x_u0


def path_problem(x_b_init=7.0, alpha=0.5, max_iters=200, tol=0.0):
    system = build_system(path_graph(3), trivial_reps())
    return ExtensionProblem(system, boundary=[0, 2], interior=[1],
                            x_boundary=np.array([[0.0], [1.0]]),
                            x_interior_init=np.array([[x_b_init]]),
                            alpha=alpha, max_iters=max_iters, tol=tol)


class TestTranslationRhs:
    def test_zero_translations(self):
        system = build_system(path_graph(3), trivial_reps())
        np.testing.assert_array_equal(translation_rhs(system), np.zeros((3, 1)))

    def test_single_transe_edge_unnormalized(self):
        graph = graph_from_edges([(0, 0, 1)], 2, 1)
        reps = [RelationRepresentation(np.eye(1), np.eye(1), np.array([1.0]))]
        system = build_system(graph, reps)
        np.testing.assert_allclose(translation_rhs(system, normalized=False),
                                   [[-1.0], [1.0]])

    def test_matches_dense_transpose_product(self):
        graph, reps, system, *_ = make_fixture(21, kind="transr")
        for normalized in (True, False):
            cob = system.scaled_coboundary if normalized else system.coboundary
            dense = cob.columns_dense(range(system.n_nodes))
            expected = (dense.T @ cob.translations.ravel()).reshape(system.n_nodes,
                                                                    system.d)
            got = translation_rhs(system, normalized=normalized)
            assert np.abs(got - expected).max() < 1e-12


class TestClosedForm:
    def test_empty_interior_returns_boundary(self, rng):
        system = build_system(path_graph(3), trivial_reps())
        x_b = rng.standard_normal((3, 1))
        problem = ExtensionProblem(system, boundary=[0, 1, 2], interior=[],
                                   x_boundary=x_b, x_interior_init=np.zeros((0, 1)))
        np.testing.assert_array_equal(extend_closed_form(problem), x_b)

    def test_path_midpoint(self):
        x = extend_closed_form(path_problem())
        assert x[1, 0] == pytest.approx(0.5, abs=1e-12)

    @pytest.mark.parametrize("kind", ["se", "transe"])
    def test_against_gradient_descent_oracle(self, kind):
        graph, reps, system, boundary, interior, x_b, x_u0 = make_fixture(
            33 if kind == "se" else 44, kind=kind)
        problem = ExtensionProblem(system, boundary, interior, x_b, x_u0)
        x_closed = extend_closed_form(problem)
        x0 = np.zeros((graph.n_entities, system.d))
        x0[boundary] = x_b
        x0[interior] = x_u0
        x_gd = gradient_descent_extension(graph.triples, reps, x0, interior,
                                          steps=10000)
        assert np.abs(x_closed[interior] - x_gd[interior]).max() < 1e-6

    def test_boundary_rows_bitwise_identical(self):
        graph, reps, system, boundary, interior, x_b, x_u0 = make_fixture(5)
        problem = ExtensionProblem(system, boundary, interior, x_b, x_u0)
        x = extend_closed_form(problem)
        assert np.array_equal(x[boundary], x_b)

    def test_stationarity(self):
        graph, reps, system, boundary, interior, x_b, x_u0 = make_fixture(6)
        problem = ExtensionProblem(system, boundary, interior, x_b, x_u0)
        x = extend_closed_form(problem)
        y = system.frame_in(x, range(system.n_nodes), True)
        resid = system.delta.apply(y) - translation_rhs(system)
        assert np.abs(resid[interior]).max() < 1e-8

    def test_optimality_against_perturbations(self, rng):
        graph, reps, system, boundary, interior, x_b, x_u0 = make_fixture(7, kind="transr")
        problem = ExtensionProblem(system, boundary, interior, x_b, x_u0)
        x = extend_closed_form(problem)
        base = edge_energy(graph.triples, reps, x)
        for _ in range(100):
            pert = x.copy()
            pert[interior] += 0.1 * rng.standard_normal(pert[interior].shape)
            assert edge_energy(graph.triples, reps, pert) >= base - 1e-10

    def test_size_guard(self):
        graph, reps, system, boundary, interior, x_b, x_u0 = make_fixture(8)
        problem = ExtensionProblem(system, boundary, interior, x_b, x_u0,
                                   dense_limit=3)
        with pytest.raises(SizeGuardError, match="extend_iterative"):
            extend_closed_form(problem)

    def test_unnormalized_frame_agrees(self):
        # Both frames minimize the same energy, so the minima coincide when
        # the degree blocks are invertible.
        graph, reps, system, boundary, interior, x_b, x_u0 = make_fixture(17)
        norm = extend_closed_form(ExtensionProblem(system, boundary, interior,
                                                   x_b, x_u0))
        raw = extend_closed_form(ExtensionProblem(system, boundary, interior,
                                                  x_b, x_u0, alpha=0.01,
                                                  normalized=False))
        assert np.abs(norm[interior] - raw[interior]).max() < 1e-8


class TestIterative:
    def test_zero_iterations_is_noop(self):
        problem = path_problem(max_iters=0)
        x, records = extend_iterative(problem)
        assert x[1, 0] == 7.0
        assert len(records) == 1 and records[0].iteration == 0

    def test_path_converges_to_half(self):
        x, records = extend_iterative(path_problem(alpha=0.5, max_iters=200,
                                                   tol=1e-9))
        assert abs(x[1, 0] - 0.5) < 1e-6
        assert records[-1].iteration <= 200

    def test_matches_closed_form_with_geometric_residual(self):
        graph, reps, system, boundary, interior, x_b, x_u0 = make_fixture(9)
        closed = extend_closed_form(ExtensionProblem(system, boundary, interior,
                                                     x_b, x_u0))
        problem = ExtensionProblem(system, boundary, interior, x_b, x_u0,
                                   alpha=0.5, max_iters=20000, tol=1e-10)
        x, records = extend_iterative(problem)
        assert np.abs(x[interior] - closed[interior]).max() < 1e-6
        resid = np.array([rec.residual for rec in records])
        # residual of a linear fixed-point iteration decays geometrically
        tail = resid[10:200]
        ratios = tail[1:] / tail[:-1]
        assert ratios.max() < 1.0

    def test_initialization_independence(self):
        graph, reps, system, boundary, interior, x_b, _ = make_fixture(10)
        finals = []
        for seed in (1, 2):
            x_u0 = init_unknown(len(interior), system.d, "normal", seed=seed)
            problem = ExtensionProblem(system, boundary, interior, x_b, x_u0,
                                       alpha=0.5, max_iters=5000, tol=0.0)
            x, _ = extend_iterative(problem)
            finals.append(x[interior])
        assert np.abs(finals[0] - finals[1]).max() < 1e-5

    def test_boundary_rows_bitwise_identical_every_step(self):
        graph, reps, system, boundary, interior, x_b, x_u0 = make_fixture(11)
        problem = ExtensionProblem(system, boundary, interior, x_b, x_u0,
                                   max_iters=50)
        x, _ = extend_iterative(problem)
        assert np.array_equal(x[boundary], x_b)

    @pytest.mark.parametrize("alpha", [0.1, 0.5, 1.0])
    def test_energy_trace_non_increasing(self, alpha):
        graph, reps, system, boundary, interior, x_b, x_u0 = make_fixture(
            12, kind="transr")
        problem = ExtensionProblem(system, boundary, interior, x_b, x_u0,
                                   alpha=alpha, max_iters=500)
        _, records = extend_iterative(problem)
        energies = np.array([rec.energy for rec in records])
        assert np.all(np.diff(energies) <= 1e-12 * np.maximum(1.0, energies[:-1]))

    def test_divergence_monitor(self):
        problem = path_problem(max_iters=100)
        problem.normalized = False
        problem.alpha = 5.0  # deliberately unstable for the unnormalized system
        with pytest.raises(DivergenceError, match="alpha"):
            extend_iterative(problem)

    def test_unstable_alpha_rejected_up_front(self):
        system = build_system(path_graph(3), trivial_reps())
        with pytest.raises(UsageError, match="alpha"):
            ExtensionProblem(system, boundary=[0, 2], interior=[1],
                             x_boundary=np.zeros((2, 1)),
                             x_interior_init=np.zeros((1, 1)),
                             alpha=5.0, normalized=False)

    def test_alpha_above_one_rejected_on_normalized(self):
        system = build_system(path_graph(3), trivial_reps())
        with pytest.raises(UsageError):
            ExtensionProblem(system, boundary=[0, 2], interior=[1],
                             x_boundary=np.zeros((2, 1)),
                             x_interior_init=np.zeros((1, 1)), alpha=1.5)


class TestInitUnknown:
    def test_zeros(self):
        np.testing.assert_array_equal(init_unknown(4, 3, "zeros"), np.zeros((4, 3)))

    def test_deterministic(self):
        np.testing.assert_array_equal(init_unknown(4, 3, "normal", seed=9),
                                      init_unknown(4, 3, "normal", seed=9))

    def test_unknown_distribution(self):
        with pytest.raises(UsageError):
            init_unknown(4, 3, "cauchy")


def test_trace_csv(tmp_path):
    problem = path_problem(max_iters=5)
    _, records = extend_iterative(problem)
    path = tmp_path / "trace.csv"
    write_trace_csv(str(path), records)
    lines = path.read_text().splitlines()
    assert lines[0] == "iter,residual,energy"
    assert len(lines) == len(records) + 1
