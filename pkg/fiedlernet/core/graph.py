"""Weighted graph of a feedforward network and its Laplacian.

Vertices are units (inputs, hidden units, outputs), numbered input layer
first, then each hidden layer, then outputs; within a layer by unit index.
Optional bias vertices follow all unit vertices, one per weight layer.
Edge weights are the absolute values of the network weights.
"""
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
import structlog
from scipy.sparse.csgraph import connected_components as _csgraph_components

from fiedlernet.config import settings
from fiedlernet.core.errors import (
    DimensionMismatchError,
    DisconnectedGraphError,
    GraphError,
    NonFiniteWeightError,
    VertexCapExceededError,
)

logger = structlog.get_logger()


@dataclass(frozen=True)
class WeightedGraph:
    num_vertices: int
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    vertex_layer: np.ndarray

    def __post_init__(self):
        src = np.asarray(self.src, dtype=np.int64).reshape(-1)
        dst = np.asarray(self.dst, dtype=np.int64).reshape(-1)
        weight = np.asarray(self.weight, dtype=np.float64).reshape(-1)
        layers = np.asarray(self.vertex_layer, dtype=np.int64).reshape(-1)
        object.__setattr__(self, "src", src)
        object.__setattr__(self, "dst", dst)
        object.__setattr__(self, "weight", weight)
        object.__setattr__(self, "vertex_layer", layers)
        self._validate()

    def _validate(self):
        n = self.num_vertices
        if n < 0:
            raise GraphError(f"num_vertices must be >= 0, got {n}")
        if not (len(self.src) == len(self.dst) == len(self.weight)):
            raise GraphError("edge arrays have different lengths")
        if len(self.vertex_layer) != n:
            raise DimensionMismatchError("vertex_layer length", n, len(self.vertex_layer))
        if len(self.src) == 0:
            return
        if self.src.min() < 0 or self.dst.min() < 0 or max(self.src.max(), self.dst.max()) >= n:
            raise GraphError("edge endpoint outside 0..num_vertices-1")
        if np.any(self.src == self.dst):
            raise GraphError("self-loops are not allowed")
        if not np.all(np.isfinite(self.weight)) or np.any(self.weight < 0):
            raise GraphError("edge weights must be finite and non-negative")
        lo = np.minimum(self.src, self.dst)
        hi = np.maximum(self.src, self.dst)
        keys = lo * n + hi
        if len(np.unique(keys)) != len(keys):
            raise GraphError("each unordered vertex pair may appear at most once")

    @classmethod
    def from_edges(
        cls,
        num_vertices: int,
        edges: Sequence[Tuple[int, int, float]],
        vertex_layer: Optional[Sequence[int]] = None,
    ) -> "WeightedGraph":
        """Build a graph from (a, b, w) triples"""
        edges = list(edges)
        src = np.array([e[0] for e in edges], dtype=np.int64)
        dst = np.array([e[1] for e in edges], dtype=np.int64)
        weight = np.array([e[2] for e in edges], dtype=np.float64)
        if vertex_layer is None:
            vertex_layer = np.zeros(num_vertices, dtype=np.int64)
        return cls(num_vertices, src, dst, weight, np.asarray(vertex_layer))

    @property
    def num_edges(self) -> int:
        return len(self.weight)

    @property
    def edges(self) -> Iterator[Tuple[int, int, float]]:
        for a, b, w in zip(self.src, self.dst, self.weight):
            yield int(a), int(b), float(w)

    def adjacency(self) -> sp.csr_matrix:
        """Symmetric weighted adjacency |W| as CSR"""
        n = self.num_vertices
        rows = np.concatenate([self.src, self.dst])
        cols = np.concatenate([self.dst, self.src])
        data = np.concatenate([self.weight, self.weight])
        return sp.csr_matrix((data, (rows, cols)), shape=(n, n))

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.num_vertices)
        np.add.at(deg, self.src, self.weight)
        np.add.at(deg, self.dst, self.weight)
        return deg

    def without_edge(self, a: int, b: int) -> "WeightedGraph":
        keep = ~(((self.src == a) & (self.dst == b)) | ((self.src == b) & (self.dst == a)))
        return WeightedGraph(self.num_vertices, self.src[keep], self.dst[keep], self.weight[keep], self.vertex_layer)

    def with_weights(self, weight: np.ndarray) -> "WeightedGraph":
        return WeightedGraph(self.num_vertices, self.src, self.dst, weight, self.vertex_layer)


@dataclass(frozen=True)
class LaplacianMatrix:
    matrix: sp.csr_matrix
    source: Optional[WeightedGraph] = field(default=None, compare=False, repr=False)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def degrees(self) -> np.ndarray:
        return np.asarray(self.matrix.diagonal())

    def max_degree(self) -> float:
        if self.n == 0:
            return 0.0
        return float(self.degrees().max())

    def adjacency(self) -> sp.csr_matrix:
        """Recover |W| from the off-diagonal part"""
        adj = -(self.matrix - sp.diags(self.matrix.diagonal()))
        adj = sp.csr_matrix(adj)
        adj.eliminate_zeros()
        return adj

    def submatrix(self, keep: np.ndarray) -> "LaplacianMatrix":
        return LaplacianMatrix(sp.csr_matrix(self.matrix[keep][:, keep]))


@dataclass(frozen=True)
class VertexSubset:
    members: frozenset

    @classmethod
    def of(cls, members) -> "VertexSubset":
        return cls(frozenset(int(m) for m in members))

    @property
    def cardinality(self) -> int:
        return len(self.members)

    def indicator(self, num_vertices: int) -> np.ndarray:
        z = np.zeros(num_vertices)
        if self.members:
            z[list(self.members)] = 1.0
        return z


def layer_offsets(layer_dims: Sequence[int]) -> np.ndarray:
    """First vertex id of every layer, plus the total unit count"""
    return np.concatenate([[0], np.cumsum(layer_dims)]).astype(np.int64)


def _check_finite(model) -> None:
    for l, W in enumerate(model.weights, start=1):
        if not np.all(np.isfinite(W)):
            index = tuple(int(i) for i in np.argwhere(~np.isfinite(W))[0])
            raise NonFiniteWeightError(l, index, float(W[index]))
    for l, b in enumerate(model.biases or [], start=1):
        if b is not None and not np.all(np.isfinite(b)):
            index = tuple(int(i) for i in np.argwhere(~np.isfinite(b))[0])
            raise NonFiniteWeightError(l, index, float(b[index]))


def weight_blocks(model, include_biases: bool = False) -> Iterator[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Yield (output vertex ids, input vertex ids, |block|) for every weight block"""
    dims = list(model.layer_dims)
    offsets = layer_offsets(dims)
    n_units = int(offsets[-1])
    for l, W in enumerate(model.weights, start=1):
        out_ids = np.arange(offsets[l], offsets[l + 1])
        in_ids = np.arange(offsets[l - 1], offsets[l])
        yield out_ids, in_ids, np.abs(W)
    if include_biases and model.biases is not None:
        for l, b in enumerate(model.biases, start=1):
            if b is None:
                continue
            out_ids = np.arange(offsets[l], offsets[l + 1])
            bias_vertex = np.array([n_units + l - 1])
            yield out_ids, bias_vertex, np.abs(np.asarray(b)).reshape(-1, 1)


def graph_vertex_layers(layer_dims: Sequence[int], include_biases: bool = False) -> np.ndarray:
    layers = np.repeat(np.arange(len(layer_dims)), layer_dims)
    if include_biases:
        # bias vertex of weight layer l feeds layer l, so it sits in layer l-1
        layers = np.concatenate([layers, np.arange(len(layer_dims) - 1)])
    return layers


def build_graph(model, include_biases: bool = False) -> WeightedGraph:
    """Underlying weighted graph of an MLP, weights = |W|"""
    if len(model.weights) < 1:
        raise GraphError("model must have at least one weight layer")
    _check_finite(model)

    layers = graph_vertex_layers(model.layer_dims, include_biases and model.biases is not None)
    src_parts, dst_parts, w_parts = [], [], []
    for out_ids, in_ids, block in weight_blocks(model, include_biases):
        rows, cols = np.nonzero(block)
        src_parts.append(in_ids[cols])
        dst_parts.append(out_ids[rows])
        w_parts.append(block[rows, cols])

    return WeightedGraph(
        num_vertices=len(layers),
        src=np.concatenate(src_parts),
        dst=np.concatenate(dst_parts),
        weight=np.concatenate(w_parts),
        vertex_layer=layers,
    )


def laplacian(graph: WeightedGraph) -> LaplacianMatrix:
    """L = D - |W|"""
    adj = graph.adjacency()
    deg = np.asarray(adj.sum(axis=1)).reshape(-1)
    L = sp.diags(deg) - adj
    return LaplacianMatrix(sp.csr_matrix(L), source=graph)


def quadratic_form(graph: WeightedGraph, z: np.ndarray) -> float:
    """Sum over edges of |W|_ij (z(i) - z(j))^2"""
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if len(z) != graph.num_vertices:
        raise DimensionMismatchError("vector length", graph.num_vertices, len(z))
    diff = z[graph.src] - z[graph.dst]
    return float(np.dot(graph.weight, diff * diff))


def cut_size(graph: WeightedGraph, subset) -> float:
    """Total weight of edges with exactly one endpoint in the subset"""
    members = subset.members if isinstance(subset, VertexSubset) else frozenset(subset)
    inside = np.zeros(graph.num_vertices, dtype=bool)
    if members:
        inside[list(members)] = True
    crossing = inside[graph.src] != inside[graph.dst]
    return float(graph.weight[crossing].sum())


def connected_components(graph: WeightedGraph, threshold: float = 0.0) -> List[List[int]]:
    """Partition of vertex ids by reachability over edges with weight > threshold"""
    n = graph.num_vertices
    if n == 0:
        return []
    keep = graph.weight > threshold
    adj = sp.csr_matrix(
        (np.ones(int(keep.sum())), (graph.src[keep], graph.dst[keep])), shape=(n, n)
    )
    _, labels = _csgraph_components(adj, directed=False)
    return _group_labels(labels)


def _group_labels(labels: np.ndarray) -> List[List[int]]:
    groups = {}
    for vertex, label in enumerate(labels):
        groups.setdefault(int(label), []).append(vertex)
    # ordered by lowest member id
    return sorted(groups.values(), key=lambda members: members[0])


def laplacian_components(lap: LaplacianMatrix) -> List[List[int]]:
    adj = lap.adjacency()
    adj.data[adj.data <= 0] = 0
    adj.eliminate_zeros()
    _, labels = _csgraph_components(adj, directed=False)
    return _group_labels(labels)


def restrict_to_largest_component(lap: LaplacianMatrix) -> Tuple[LaplacianMatrix, np.ndarray]:
    """Drop rows/columns of every vertex outside the largest component"""
    components = laplacian_components(lap)
    if len(components) <= 1:
        return lap, np.arange(lap.n)
    # components are sorted by lowest id, so max() keeps the earliest on ties
    largest = max(components, key=len)
    kept = np.array(largest, dtype=np.int64)
    logger.debug("Restricted Laplacian to largest component", kept=len(kept), dropped=lap.n - len(kept))
    return lap.submatrix(kept), kept


def edge_expansion_bruteforce(graph: WeightedGraph, cap: Optional[int] = None) -> Tuple[float, VertexSubset]:
    """Exact edge expansion by enumerating every subset with n(S) <= n/2"""
    cap = settings.edge_expansion_cap if cap is None else cap
    n = graph.num_vertices
    if n > cap:
        raise VertexCapExceededError(n, cap)
    if n < 2:
        raise GraphError("edge expansion needs at least two vertices")
    if len(connected_components(graph)) > 1:
        raise DisconnectedGraphError(0.0, 0.0)

    masks = np.arange(1, 1 << n, dtype=np.int64)
    sizes = np.zeros(len(masks), dtype=np.int64)
    for v in range(n):
        sizes += (masks >> v) & 1
    cuts = np.zeros(len(masks))
    for a, b, w in graph.edges:
        cuts += w * (((masks >> a) ^ (masks >> b)) & 1)

    valid = sizes <= n // 2
    ratios = np.full(len(masks), np.inf)
    ratios[valid] = cuts[valid] / sizes[valid]
    best = int(np.argmin(ratios))
    mask = int(masks[best])
    members = [v for v in range(n) if (mask >> v) & 1]
    return float(ratios[best]), VertexSubset.of(members)


def export_edge_list(graph: WeightedGraph) -> str:
    """Plain-text edge list: "n m" header then one "a b w" line per edge"""
    lines = [f"{graph.num_vertices} {graph.num_edges}"]
    lines.extend(f"{a} {b} {w!r}" for a, b, w in graph.edges)
    if np.any(graph.vertex_layer != 0):
        lines.append("# layers " + " ".join(str(int(l)) for l in graph.vertex_layer))
    return "\n".join(lines) + "\n"


def import_edge_list(text: str) -> WeightedGraph:
    """Parse the format written by export_edge_list"""
    rows = [line.strip() for line in text.splitlines() if line.strip()]
    if not rows:
        raise GraphError("empty edge list")
    try:
        n, m = (int(tok) for tok in rows[0].split())
    except ValueError as e:
        raise GraphError(f"malformed header line: {rows[0]!r}") from e

    edges, layers = [], None
    for line in rows[1:]:
        if line.startswith("# layers"):
            layers = [int(tok) for tok in line[len("# layers"):].split()]
            continue
        if line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise GraphError(f"malformed edge line: {line!r}")
        edges.append((int(parts[0]), int(parts[1]), float(parts[2])))
    if len(edges) != m:
        raise GraphError(f"header announces {m} edges, found {len(edges)}")
    return WeightedGraph.from_edges(n, edges, layers)


class LaplacianTracker:
    """Sparse Laplacian of a layered architecture, updated from weight deltas.

    The sparsity pattern covers every potential connection, so a weight that
    reaches zero stays in the pattern as an explicit zero and the update is a
    single O(|E|) pass.
    """

    def __init__(self, model, include_biases: bool = False):
        self.include_biases = include_biases and model.biases is not None
        self.vertex_layer = graph_vertex_layers(model.layer_dims, self.include_biases)
        n = len(self.vertex_layer)

        blocks = list(weight_blocks(model, self.include_biases))
        rows, cols, tags = [], [], []
        next_tag = 1
        shapes = []
        for out_ids, in_ids, block in blocks:
            d_out, d_in = block.shape
            count = d_out * d_in
            r = np.repeat(out_ids, d_in)
            c = np.tile(in_ids, d_out)
            rows += [r, c]
            cols += [c, r]
            tags += [np.arange(next_tag, next_tag + count), np.arange(next_tag + count, next_tag + 2 * count)]
            shapes.append((d_out, d_in, next_tag))
            next_tag += 2 * count
        rows.append(np.arange(n))
        cols.append(np.arange(n))
        tags.append(np.arange(next_tag, next_tag + n))

        pattern = sp.csr_matrix(
            (np.concatenate(tags).astype(np.float64), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n),
        )
        pattern.sort_indices()
        position = np.empty(len(pattern.data), dtype=np.int64)
        position[pattern.data.astype(np.int64) - 1] = np.arange(len(pattern.data))

        self._block_ids = [(out_ids, in_ids) for out_ids, in_ids, _ in blocks]
        self._pos_fwd, self._pos_bwd = [], []
        for d_out, d_in, tag in shapes:
            count = d_out * d_in
            self._pos_fwd.append(position[tag - 1: tag - 1 + count].reshape(d_out, d_in))
            self._pos_bwd.append(position[tag - 1 + count: tag - 1 + 2 * count].reshape(d_out, d_in))
        self._pos_diag = position[next_tag - 1: next_tag - 1 + n]

        self._matrix = pattern
        self._matrix.data[:] = 0.0
        self._degree = np.zeros(n)
        self._abs = [np.zeros(block.shape) for _, _, block in blocks]
        self._snapshot = self._matrix.data.copy()
        self.update(model)
        self.mark_refresh()

    @property
    def n(self) -> int:
        return self._matrix.shape[0]

    def update(self, model) -> None:
        """Apply |W_new| - |W_old| to the stored Laplacian"""
        for k, (_, _, block) in enumerate(weight_blocks(model, self.include_biases)):
            out_ids, in_ids = self._block_ids[k]
            delta = block - self._abs[k]
            self._matrix.data[self._pos_fwd[k]] = -block
            self._matrix.data[self._pos_bwd[k]] = -block
            self._degree[out_ids] += delta.sum(axis=1)
            self._degree[in_ids] += delta.sum(axis=0)
            self._abs[k] = block.copy()
        self._matrix.data[self._pos_diag] = self._degree

    def laplacian(self) -> LaplacianMatrix:
        return LaplacianMatrix(self._matrix.copy())

    def mark_refresh(self) -> None:
        # resync degrees so round-off from incremental updates does not accumulate
        degree = np.zeros(self.n)
        for (out_ids, in_ids), block in zip(self._block_ids, self._abs):
            degree[out_ids] += block.sum(axis=1)
            degree[in_ids] += block.sum(axis=0)
        self._degree = degree
        self._matrix.data[self._pos_diag] = degree
        self._snapshot = self._matrix.data.copy()

    def change_since_refresh(self) -> sp.csr_matrix:
        """Accumulated symmetric perturbation since the last mark_refresh()"""
        delta = self._matrix.copy()
        delta.data = self._matrix.data - self._snapshot
        return delta
