import itertools

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings as hyp_settings, strategies as st

from fiedlernet.core.errors import (
    DisconnectedGraphError,
    GraphError,
    NonFiniteWeightError,
    VertexCapExceededError,
)
from fiedlernet.core.graph import (
    LaplacianTracker,
    VertexSubset,
    WeightedGraph,
    build_graph,
    connected_components,
    cut_size,
    edge_expansion_bruteforce,
    export_edge_list,
    import_edge_list,
    laplacian,
    quadratic_form,
    restrict_to_largest_component,
)
from fiedlernet.services.network import MlpModel, init_model

from graph_factories import networkx_graph, path_graph, random_connected_graph


class TestBuildGraph:
    def test_single_layer(self, single_layer_model):
        graph = build_graph(single_layer_model)
        assert graph.num_vertices == 3
        assert sorted(graph.edges) == [(0, 2, 2.0), (1, 2, 3.0)]
        assert list(graph.vertex_layer) == [0, 0, 1]

    def test_two_layer_counts(self):
        model = MlpModel(layer_dims=(2, 2, 1), weights=[np.full((2, 2), 0.5), np.full((1, 2), 0.5)])
        graph = build_graph(model)
        assert graph.num_vertices == 5
        assert graph.num_edges == 6
        assert np.all(graph.weight == 0.5)

    def test_zero_weights_are_not_edges(self):
        model = MlpModel(layer_dims=(2, 1), weights=[np.array([[0.0, -1.5]])])
        graph = build_graph(model)
        assert list(graph.edges) == [(1, 2, 1.5)]

    def test_non_finite_weight_rejected(self, tiny_model):
        tiny_model.weights[1][1, 2] = np.nan
        with pytest.raises(NonFiniteWeightError) as exc:
            build_graph(tiny_model)
        assert exc.value.layer == 2
        assert exc.value.index == (1, 2)

    def test_bias_vertices_follow_units(self):
        model = MlpModel(
            layer_dims=(2, 1),
            weights=[np.array([[1.0, 1.0]])],
            biases=[np.array([-0.25])],
        )
        graph = build_graph(model, include_biases=True)
        assert graph.num_vertices == 4
        assert (2, 3, 0.25) in {(min(a, b), max(a, b), w) for a, b, w in graph.edges}

    def test_negating_weights_leaves_graph_unchanged(self, tiny_model):
        flipped = tiny_model.copy()
        flipped.weights = [-W for W in flipped.weights]
        a, b = build_graph(tiny_model), build_graph(flipped)
        np.testing.assert_array_equal(a.weight, b.weight)
        np.testing.assert_array_equal(a.src, b.src)


class TestLaplacian:
    def test_k2(self, k2):
        np.testing.assert_array_equal(laplacian(k2).dense(), [[3.0, -3.0], [-3.0, 3.0]])

    def test_p3(self, p3):
        expected = [[1, -1, 0], [-1, 2, -1], [0, -1, 1]]
        np.testing.assert_array_equal(laplacian(p3).dense(), expected)

    def test_empty_graph_is_zero(self):
        graph = WeightedGraph.from_edges(4, [])
        assert not laplacian(graph).dense().any()

    def test_matches_networkx(self, rng):
        graph = random_connected_graph(12, rng)
        expected = nx.laplacian_matrix(networkx_graph(graph), nodelist=range(12), weight="weight").toarray()
        np.testing.assert_allclose(laplacian(graph).dense(), expected, atol=1e-12)

    def test_rows_sum_to_zero(self, rng):
        lap = laplacian(random_connected_graph(20, rng)).dense()
        np.testing.assert_allclose(lap.sum(axis=1), 0.0, atol=1e-12)
        np.testing.assert_array_equal(lap, lap.T)

    def test_quadratic_form_on_p3(self, p3):
        assert quadratic_form(p3, np.array([0.0, 1.0, 2.0])) == pytest.approx(2.0)
        assert quadratic_form(p3, np.ones(3)) == 0.0

    def test_quadratic_form_matches_matrix(self, rng):
        graph = random_connected_graph(15, rng)
        z = rng.normal(size=15)
        lap = laplacian(graph).dense()
        assert quadratic_form(graph, z) == pytest.approx(z @ lap @ z, rel=1e-10)


class TestCutsAndExpansion:
    def test_cut_matches_quadratic_form_of_indicator(self, rng):
        graph = random_connected_graph(7, rng, density=0.5)
        for size in range(8):
            for members in itertools.combinations(range(7), size):
                subset = VertexSubset.of(members)
                assert cut_size(graph, subset) == pytest.approx(quadratic_form(graph, subset.indicator(7)))

    def test_k2(self, k2):
        phi, subset = edge_expansion_bruteforce(k2)
        assert phi == 3.0
        assert subset.cardinality == 1

    def test_k4(self, k4):
        phi, _ = edge_expansion_bruteforce(k4)
        assert phi == 2.0

    def test_p4_bottleneck(self, p4):
        phi, subset = edge_expansion_bruteforce(p4)
        assert phi == 0.5
        assert subset.members == frozenset({0, 1})

    def test_disconnected_rejected(self):
        graph = WeightedGraph.from_edges(4, [(0, 1, 1.0), (2, 3, 1.0)])
        with pytest.raises(DisconnectedGraphError):
            edge_expansion_bruteforce(graph)

    def test_cap(self, rng):
        with pytest.raises(VertexCapExceededError):
            edge_expansion_bruteforce(random_connected_graph(9, rng), cap=8)


class TestComponents:
    def test_path_is_one_component(self, p3):
        assert connected_components(p3) == [[0, 1, 2]]

    def test_two_disjoint_edges(self):
        graph = WeightedGraph.from_edges(4, [(0, 1, 1.0), (2, 3, 1.0)])
        assert connected_components(graph) == [[0, 1], [2, 3]]

    def test_isolated_vertex(self):
        graph = WeightedGraph.from_edges(3, [(0, 1, 1.0)])
        assert connected_components(graph) == [[0, 1], [2]]

    def test_threshold_drops_light_edges(self, p3):
        light = p3.with_weights(np.array([1.0, 1e-6]))
        assert connected_components(light, threshold=1e-3) == [[0, 1], [2]]

    def test_restrict_keeps_largest(self):
        graph = WeightedGraph.from_edges(
            7, [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (3, 4, 1.0), (5, 6, 1.0)]
        )
        sub, kept = restrict_to_largest_component(laplacian(graph))
        assert list(kept) == [0, 1, 2, 3, 4]
        np.testing.assert_array_equal(sub.dense(), laplacian(path_graph(5)).dense())

    def test_restrict_tie_keeps_component_of_vertex_zero(self):
        graph = WeightedGraph.from_edges(4, [(0, 1, 1.0), (2, 3, 1.0)])
        _, kept = restrict_to_largest_component(laplacian(graph))
        assert list(kept) == [0, 1]

    def test_restrict_connected_is_identity(self, p4):
        lap = laplacian(p4)
        sub, kept = restrict_to_largest_component(lap)
        assert sub is lap
        assert list(kept) == [0, 1, 2, 3]


class TestEdgeList:
    def test_round_trip(self, tiny_model):
        graph = build_graph(tiny_model)
        restored = import_edge_list(export_edge_list(graph))
        assert restored.num_vertices == graph.num_vertices
        np.testing.assert_array_equal(restored.weight, graph.weight)
        np.testing.assert_array_equal(restored.vertex_layer, graph.vertex_layer)

    def test_edge_count_mismatch(self):
        with pytest.raises(GraphError):
            import_edge_list("3 2\n0 1 1.0\n")

    def test_self_loop_rejected(self):
        with pytest.raises(GraphError):
            import_edge_list("2 1\n1 1 1.0\n")


class TestLaplacianTracker:
    def test_matches_rebuilt_laplacian_after_updates(self, rng):
        model = init_model([4, 5, 3], seed=3)
        tracker = LaplacianTracker(model)
        for _ in range(5):
            for W in model.weights:
                W += rng.normal(scale=0.2, size=W.shape)
            model.weights[0][0, :] = 0.0
            tracker.update(model)
            np.testing.assert_allclose(
                tracker.laplacian().dense(), laplacian(build_graph(model)).dense(), atol=1e-12
            )

    def test_with_biases(self):
        model = init_model([3, 2, 2], seed=1)
        model.biases[0][:] = [0.5, -1.0]
        tracker = LaplacianTracker(model, include_biases=True)
        expected = laplacian(build_graph(model, include_biases=True)).dense()
        np.testing.assert_allclose(tracker.laplacian().dense(), expected, atol=1e-12)

    def test_change_since_refresh(self):
        model = init_model([2, 3, 2], seed=0)
        tracker = LaplacianTracker(model)
        before = tracker.laplacian().dense()
        model.weights[1] *= 2.0
        tracker.update(model)
        delta = tracker.change_since_refresh().toarray()
        np.testing.assert_allclose(delta, tracker.laplacian().dense() - before, atol=1e-12)
        tracker.mark_refresh()
        assert not np.any(tracker.change_since_refresh().toarray())


@hyp_settings(max_examples=50, deadline=None)
@given(
    st.lists(
        st.tuples(st.integers(0, 7), st.integers(0, 7), st.floats(0.01, 10.0)),
        min_size=1,
        max_size=20,
    )
)
def test_laplacian_is_positive_semidefinite(triples):
    edges = {}
    for a, b, w in triples:
        if a != b:
            edges[(min(a, b), max(a, b))] = w
    graph = WeightedGraph.from_edges(8, [(a, b, w) for (a, b), w in edges.items()])
    eigenvalues = np.linalg.eigvalsh(laplacian(graph).dense())
    assert eigenvalues.min() > -1e-9
    assert len(connected_components(graph)) == int(np.sum(eigenvalues < 1e-9))
