"""Connectivity summary of a network graph: lambda2, components, Cheeger sandwich, bottleneck cut."""
from typing import List, Optional

import structlog
from pydantic import BaseModel

from fiedlernet.config import settings
from fiedlernet.core.graph import (
    WeightedGraph,
    build_graph,
    connected_components,
    edge_expansion_bruteforce,
    laplacian,
)
from fiedlernet.core.spectral import cheeger_bounds, fiedler_pair, sweep_cut
from fiedlernet.services.network import MlpModel

logger = structlog.get_logger()


class GraphInspection(BaseModel):
    num_vertices: int
    num_edges: int
    components: int
    component_sizes: List[int]
    connected: bool
    lambda2: float
    solver: str
    max_degree: float
    cheeger_lower: float
    cheeger_upper: float
    sweep_ratio: Optional[float] = None
    sweep_side: Optional[List[int]] = None
    edge_expansion: Optional[float] = None


def inspect_graph(graph: WeightedGraph) -> GraphInspection:
    lap = laplacian(graph)
    components = connected_components(graph)
    d_max = lap.max_degree()
    pair = None
    if len(components) == 1 and graph.num_vertices >= 2:
        pair = fiedler_pair(lap, allow_disconnected=True)
    # a disconnected graph has lambda2 = 0 exactly
    lambda2 = pair.lambda2 if pair is not None else 0.0
    lower, upper = cheeger_bounds(lambda2, d_max)

    result = GraphInspection(
        num_vertices=graph.num_vertices,
        num_edges=graph.num_edges,
        components=len(components),
        component_sizes=[len(c) for c in components],
        connected=len(components) == 1,
        lambda2=lambda2,
        solver=pair.method if pair is not None else "components",
        max_degree=d_max,
        cheeger_lower=lower,
        cheeger_upper=upper,
    )
    if pair is not None:
        ratio, side = sweep_cut(graph, pair.v2)
        result.sweep_ratio = ratio
        result.sweep_side = sorted(side.members)
        if graph.num_vertices <= settings.edge_expansion_cap:
            result.edge_expansion, _ = edge_expansion_bruteforce(graph)
    logger.info(
        "Inspected graph",
        vertices=result.num_vertices,
        edges=result.num_edges,
        lambda2=result.lambda2,
        components=result.components,
    )
    return result


def inspect_model(model: MlpModel, include_biases: bool = False) -> GraphInspection:
    return inspect_graph(build_graph(model, include_biases=include_biases))
