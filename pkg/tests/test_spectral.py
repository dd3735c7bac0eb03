import math

import networkx as nx
import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings as hyp_settings, strategies as st

from fiedlernet.core import spectral
from fiedlernet.core.errors import (
    AsymmetricMatrixError,
    DisconnectedGraphError,
    InvalidTestVectorError,
    SolverError,
)
from fiedlernet.core.graph import WeightedGraph, build_graph, edge_expansion_bruteforce, laplacian
from fiedlernet.core.spectral import (
    cheeger_bounds,
    edge_weight_gradient,
    eigenvalue_gradient,
    fiedler_pair,
    laplacian_eigenpair,
    project_test_vector,
    sweep_cut,
    test_vector_bound,
    weyl_change_bound,
)
from fiedlernet.services.network import init_model

from graph_factories import complete_graph, networkx_graph, path_graph, random_connected_graph


def second_eigenvalue(matrix: np.ndarray) -> float:
    return float(np.sort(np.linalg.eigvals(matrix).real)[1])


class TestFiedlerPair:
    def test_p3(self, p3):
        pair = fiedler_pair(laplacian(p3))
        assert pair.lambda2 == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(np.abs(pair.v2), np.array([1.0, 0.0, 1.0]) / math.sqrt(2), atol=1e-12)
        assert pair.v2[0] * pair.v2[2] < 0

    @pytest.mark.parametrize("n", [2, 3, 5, 8])
    def test_complete_graph(self, n):
        pair = fiedler_pair(laplacian(complete_graph(n)))
        assert pair.lambda2 == pytest.approx(n, rel=1e-12)

    def test_vector_is_unit_and_orthogonal_to_constant(self, rng):
        pair = fiedler_pair(laplacian(random_connected_graph(30, rng)))
        assert np.linalg.norm(pair.v2) == pytest.approx(1.0, abs=1e-12)
        assert abs(pair.v2.sum()) < 1e-10

    def test_dense_and_lanczos_agree(self):
        rng = np.random.default_rng(2024)
        for _ in range(200):
            n = int(rng.integers(5, 51))
            lap = laplacian(random_connected_graph(n, rng))
            dense = fiedler_pair(lap, method="dense")
            lanczos = fiedler_pair(lap, method="lanczos")
            assert lanczos.lambda2 == pytest.approx(dense.lambda2, rel=1e-8)
            assert lanczos.residual <= 1e-8 * max(1.0, lap.max_degree())

    def test_matches_networkx(self, rng):
        graph = random_connected_graph(25, rng)
        expected = nx.algebraic_connectivity(networkx_graph(graph), weight="weight", tol=1e-12)
        assert fiedler_pair(laplacian(graph)).lambda2 == pytest.approx(expected, rel=1e-6)

    def test_lanczos_on_larger_sparse_graph(self, rng):
        graph = random_connected_graph(120, rng, density=0.1)
        lap = laplacian(graph)
        pair = fiedler_pair(lap)
        assert pair.method == "lanczos"
        assert pair.lambda2 == pytest.approx(fiedler_pair(lap, method="dense").lambda2, rel=1e-8)

    def test_arpack_failure_becomes_solver_error(self, rng, monkeypatch):
        def failing_eigsh(*args, **kwargs):
            raise spectral.spla.ArpackError(-3)

        monkeypatch.setattr(spectral.spla, "eigsh", failing_eigsh)
        with pytest.raises(SolverError):
            fiedler_pair(laplacian(random_connected_graph(80, rng, density=0.1)), method="lanczos")

    def test_disconnected_raises(self):
        graph = WeightedGraph.from_edges(4, [(0, 1, 1.0), (2, 3, 1.0)])
        with pytest.raises(DisconnectedGraphError):
            fiedler_pair(laplacian(graph))

    def test_disconnected_allowed(self):
        graph = WeightedGraph.from_edges(4, [(0, 1, 1.0), (2, 3, 1.0)])
        pair = fiedler_pair(laplacian(graph), allow_disconnected=True)
        assert pair.lambda2 < 1e-12
        assert pair.disconnected

    def test_kth_eigenpair_agrees_with_fiedler(self, rng):
        lap = laplacian(random_connected_graph(12, rng))
        assert laplacian_eigenpair(lap, 2).value == pytest.approx(fiedler_pair(lap).lambda2, rel=1e-10)
        assert laplacian_eigenpair(lap, 1).value == pytest.approx(0.0, abs=1e-10)

    def test_sign_flip_invariance(self):
        model = init_model([4, 6, 3], seed=5)
        flipped = model.copy()
        flipped.weights = [-W for W in flipped.weights]
        a = fiedler_pair(laplacian(build_graph(model))).lambda2
        b = fiedler_pair(laplacian(build_graph(flipped))).lambda2
        assert a == b


class TestTestVectorBound:
    def test_upper_bounds_lambda2(self, rng):
        for _ in range(100):
            lap = laplacian(random_connected_graph(15, rng))
            lambda2 = fiedler_pair(lap).lambda2
            u = project_test_vector(rng.normal(size=15))
            assert test_vector_bound(lap, u) >= lambda2 - 1e-10

    def test_equality_at_fiedler_vector(self, rng):
        lap = laplacian(random_connected_graph(15, rng))
        pair = fiedler_pair(lap)
        assert test_vector_bound(lap, pair.v2) == pytest.approx(pair.lambda2, rel=1e-10)

    def test_unprojected_vector_is_projected(self, p3):
        lap = laplacian(p3)
        assert test_vector_bound(lap, np.array([3.0, 2.0, 1.0])) == pytest.approx(1.0)

    def test_constant_vector_rejected(self):
        with pytest.raises(InvalidTestVectorError):
            project_test_vector(np.ones(5))


class TestGradients:
    def test_entrywise_derivative_matches_finite_difference(self, rng):
        checked = 0
        while checked < 50:
            lap = laplacian(random_connected_graph(8, rng, density=0.5))
            pair = fiedler_pair(lap)
            if pair.gap < 1e-3:
                continue
            L = lap.dense()
            i, j = rng.choice(8, size=2, replace=False)
            h = 1e-6
            E = np.zeros_like(L)
            E[i, j] = h
            numeric = (second_eigenvalue(L + E) - second_eigenvalue(L - E)) / (2 * h)
            grad = eigenvalue_gradient(pair, int(i), int(j))
            assert grad.d_laplacian == pytest.approx(numeric, rel=1e-4, abs=1e-7)
            assert grad.d_weight == -grad.d_laplacian
            assert not grad.degenerate
            checked += 1

    def test_edge_weight_derivative_matches_finite_difference(self, rng):
        h = 1e-6
        checked = 0
        while checked < 50:
            graph = random_connected_graph(10, rng, density=0.4)
            pair = fiedler_pair(laplacian(graph))
            if pair.gap < 1e-3:
                continue
            for k in rng.choice(graph.num_edges, size=min(graph.num_edges, 3), replace=False):
                a, b = int(graph.src[k]), int(graph.dst[k])
                up, down = graph.weight.copy(), graph.weight.copy()
                up[k] += h
                down[k] -= h
                numeric = (
                    fiedler_pair(laplacian(graph.with_weights(up))).lambda2
                    - fiedler_pair(laplacian(graph.with_weights(down))).lambda2
                ) / (2 * h)
                assert edge_weight_gradient(pair.v2, a, b) == pytest.approx(numeric, rel=1e-4, abs=1e-7)
            checked += 1

    def test_degenerate_eigenvalue_flagged(self, k4):
        pair = fiedler_pair(laplacian(k4))
        assert eigenvalue_gradient(pair, 0, 1).degenerate


class TestStructuralProperties:
    def test_edge_removal_never_increases_lambda2(self, rng):
        for _ in range(100):
            graph = random_connected_graph(10, rng, density=0.5)
            before = fiedler_pair(laplacian(graph)).lambda2
            k = int(rng.integers(graph.num_edges))
            a, b = int(graph.src[k]), int(graph.dst[k])
            after = fiedler_pair(laplacian(graph.without_edge(a, b)), allow_disconnected=True).lambda2
            assert after <= before + 1e-10

    def test_concave_in_edge_weights(self, rng):
        for _ in range(100):
            graph = random_connected_graph(10, rng, density=0.5)
            w1 = rng.uniform(0.1, 2.0, graph.num_edges)
            w2 = rng.uniform(0.1, 2.0, graph.num_edges)
            t = rng.uniform(0.05, 0.95)
            lam1 = fiedler_pair(laplacian(graph.with_weights(w1))).lambda2
            lam2 = fiedler_pair(laplacian(graph.with_weights(w2))).lambda2
            mixed = fiedler_pair(laplacian(graph.with_weights(t * w1 + (1 - t) * w2))).lambda2
            assert mixed >= t * lam1 + (1 - t) * lam2 - 1e-10

    def test_scaling_weights_scales_lambda2(self, rng):
        for _ in range(20):
            graph = random_connected_graph(12, rng)
            base = fiedler_pair(laplacian(graph)).lambda2
            for c in (0.1, 0.5, 3.0):
                scaled = fiedler_pair(laplacian(graph.with_weights(c * graph.weight))).lambda2
                assert scaled == pytest.approx(c * base, rel=1e-9)
                assert (scaled < base) == (c < 1)

    def test_damping_network_weights_damps_lambda2(self):
        model = init_model([5, 6, 3], seed=2)
        base = fiedler_pair(laplacian(build_graph(model))).lambda2
        damped = model.copy()
        for W in damped.weights:
            W *= 0.5
        assert fiedler_pair(laplacian(build_graph(damped))).lambda2 == pytest.approx(0.5 * base, rel=1e-9)

    def test_weyl_bound(self, rng):
        for _ in range(100):
            lap = laplacian(random_connected_graph(12, rng)).dense()
            H = rng.normal(scale=0.3, size=(12, 12))
            H = (H + H.T) / 2
            shift = np.abs(np.linalg.eigvalsh(lap + H) - np.linalg.eigvalsh(lap)).max()
            assert shift <= weyl_change_bound(H) + 1e-10

    def test_weyl_bound_sparse(self, rng):
        H = sp.random(80, 80, density=0.05, random_state=3)
        H = H + H.T
        assert weyl_change_bound(H) == pytest.approx(np.abs(np.linalg.eigvalsh(H.toarray())).max(), rel=1e-8)

    def test_weyl_rejects_asymmetric(self):
        with pytest.raises(AsymmetricMatrixError):
            weyl_change_bound(np.array([[0.0, 1.0], [0.0, 0.0]]))

    def test_cheeger_sandwich(self, rng):
        for _ in range(100):
            n = int(rng.integers(4, 11))
            graph = random_connected_graph(n, rng, density=0.4)
            lap = laplacian(graph)
            phi, _ = edge_expansion_bruteforce(graph)
            lower, upper = cheeger_bounds(fiedler_pair(lap).lambda2, lap.max_degree())
            assert lower <= phi + 1e-10
            assert phi <= upper + 1e-10

    def test_sweep_cut_on_path(self, p4):
        ratio, subset = sweep_cut(p4, fiedler_pair(laplacian(p4)).v2)
        assert ratio == pytest.approx(0.5)
        assert subset.members in (frozenset({0, 1}), frozenset({2, 3}))

    def test_sweep_cut_never_beats_edge_expansion(self, rng):
        for _ in range(20):
            graph = random_connected_graph(9, rng, density=0.4)
            ratio, _ = sweep_cut(graph, fiedler_pair(laplacian(graph)).v2)
            phi, _ = edge_expansion_bruteforce(graph)
            assert ratio >= phi - 1e-10


@hyp_settings(max_examples=40, deadline=None)
@given(st.integers(2, 12), st.floats(0.1, 5.0))
def test_path_lambda2_closed_form(n, weight):
    expected = 2 * weight * (1 - math.cos(math.pi / n))
    assert fiedler_pair(laplacian(path_graph(n, weight))).lambda2 == pytest.approx(expected, rel=1e-9, abs=1e-12)
