"""Penalty terms and their gradients: variational/exact Fiedler, L1, weight decay, dropout."""
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog

from fiedlernet.config import settings
from fiedlernet.core.errors import DimensionMismatchError, UnknownPenaltyError
from fiedlernet.core.graph import build_graph, graph_vertex_layers, laplacian, layer_offsets
from fiedlernet.core.spectral import GAP_TOL, fiedler_pair, project_test_vector

if TYPE_CHECKING:
    from fiedlernet.services.network import MlpModel

logger = structlog.get_logger()

FIEDLER_MODES = ("variational", "exact")
BASELINE_KINDS = ("l1", "weight_decay")


@dataclass
class PenaltyResult:
    value: float
    weight_grads: List[np.ndarray]
    bias_grads: Optional[List[np.ndarray]] = None
    edges_visited: int = 0


def fiedler_edge_weights(u: np.ndarray, layer_dims: Sequence[int], include_biases: bool = False):
    """Per-layer (u(i) - u(j))^2 matrices: the weights of the weighted-L1 form.

    Returns (weight blocks of shape d_l x d_{l-1}, bias columns of length d_l or None).
    """
    dims = list(layer_dims)
    offsets = layer_offsets(dims)
    n_units = int(offsets[-1])
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    blocks = []
    for l in range(1, len(dims)):
        u_out = u[offsets[l]:offsets[l + 1]]
        u_in = u[offsets[l - 1]:offsets[l]]
        diff = u_out[:, None] - u_in[None, :]
        blocks.append(diff * diff)
    bias_cols = None
    if include_biases:
        bias_cols = []
        for l in range(1, len(dims)):
            u_out = u[offsets[l]:offsets[l + 1]]
            diff = u_out - u[n_units + l - 1]
            bias_cols.append(diff * diff)
    return blocks, bias_cols


@dataclass
class PenaltyState:
    u: np.ndarray
    layer_dims: Sequence[int]
    period: int = 100
    delta: float = 0.01
    mode: str = "variational"
    include_biases: bool = False
    counter: int = 0
    refreshes: int = 0
    last_lambda2: Optional[float] = None
    last_disconnected: bool = False
    kept_vertices: Optional[int] = None
    edge_weights: List[np.ndarray] = field(default_factory=list, repr=False)
    bias_weights: Optional[List[np.ndarray]] = field(default=None, repr=False)

    def __post_init__(self):
        if self.period < 1:
            raise ValueError(f"refresh period T must be >= 1, got {self.period}")
        if self.delta < 0:
            raise ValueError(f"penalty coefficient must be >= 0, got {self.delta}")
        if self.mode not in FIEDLER_MODES:
            raise UnknownPenaltyError(self.mode)
        self.set_test_vector(self.u)

    @property
    def num_vertices(self) -> int:
        return len(graph_vertex_layers(self.layer_dims, self.include_biases))

    def set_test_vector(self, u: np.ndarray, project: bool = True) -> None:
        u = np.asarray(u, dtype=np.float64).reshape(-1)
        if len(u) != self.num_vertices:
            raise DimensionMismatchError("test vector length", self.num_vertices, len(u))
        self.u = project_test_vector(u) if project else u
        self.edge_weights, self.bias_weights = fiedler_edge_weights(self.u, self.layer_dims, self.include_biases)


def _sign(W: np.ndarray) -> np.ndarray:
    # sign(0) := 0
    return np.sign(W)


def _edge_terms(W: np.ndarray, E: np.ndarray, delta: float) -> Tuple[float, np.ndarray, int]:
    """sum over nonzero entries of |W| * E, its gradient and the number of entries summed"""
    index = np.nonzero(W)
    w = W[index]
    e = E[index]
    grad = np.zeros_like(W)
    grad[index] = delta * e * np.sign(w)
    return float(np.abs(w) @ e), grad, len(w)


def _variational_penalty(model: "MlpModel", state: PenaltyState) -> PenaltyResult:
    value = 0.0
    edges = 0
    grads = []
    for W, E in zip(model.weights, state.edge_weights):
        term, grad, visited = _edge_terms(W, E, state.delta)
        value += term
        grads.append(grad)
        edges += visited
    bias_grads = None
    if state.include_biases and model.biases is not None:
        bias_grads = []
        for b, E in zip(model.biases, state.bias_weights):
            term, grad, visited = _edge_terms(b, E, state.delta)
            value += term
            bias_grads.append(grad)
            edges += visited
    return PenaltyResult(value=state.delta * value, weight_grads=grads, bias_grads=bias_grads, edges_visited=edges)


def _exact_penalty(model: "MlpModel", state: PenaltyState) -> PenaltyResult:
    graph = build_graph(model, include_biases=state.include_biases)
    if graph.num_vertices > settings.dense_solver_max_n:
        raise ValueError(
            f"exact Fiedler penalty is limited to n <= {settings.dense_solver_max_n} vertices, got {graph.num_vertices}"
        )
    pair = fiedler_pair(laplacian(graph), method="dense", allow_disconnected=True)
    if pair.gap <= GAP_TOL:
        logger.warning("Fiedler value is not simple; exact gradient uses the computed eigenvector", gap=pair.gap)
    # d lambda2 / d W_ij = (v(i) - v(j))^2 sign(W_ij)
    blocks, bias_cols = fiedler_edge_weights(pair.v2, model.layer_dims, state.include_biases)
    grads = [state.delta * E * _sign(W) for W, E in zip(model.weights, blocks)]
    bias_grads = None
    if state.include_biases and model.biases is not None:
        bias_grads = [state.delta * E * _sign(b) for b, E in zip(model.biases, bias_cols)]
    return PenaltyResult(
        value=state.delta * pair.lambda2,
        weight_grads=grads,
        bias_grads=bias_grads,
        edges_visited=graph.num_edges,
    )


def fiedler_penalty(model: "MlpModel", state: PenaltyState) -> PenaltyResult:
    """delta * u^T L u (variational) or delta * lambda2 (exact), with gradients w.r.t. signed weights"""
    if tuple(model.layer_dims) != tuple(state.layer_dims):
        raise DimensionMismatchError("penalty state layer_dims", tuple(state.layer_dims), tuple(model.layer_dims))
    if state.mode == "exact":
        return _exact_penalty(model, state)
    return _variational_penalty(model, state)


def baseline_penalty(model: "MlpModel", kind: str, coeff: float) -> PenaltyResult:
    """l1: coeff * sum|W|; weight_decay: coeff * sum W^2, applied through the objective"""
    if kind not in BASELINE_KINDS:
        raise UnknownPenaltyError(kind)
    if coeff < 0:
        raise ValueError(f"penalty coefficient must be >= 0, got {coeff}")
    value = 0.0
    edges = 0
    grads = []
    for W in model.weights:
        index = np.nonzero(W)
        w = W[index]
        grad = np.zeros_like(W)
        if kind == "l1":
            value += float(np.abs(w).sum())
            grad[index] = coeff * np.sign(w)
        else:
            value += float(w @ w)
            grad[index] = 2.0 * coeff * w
        grads.append(grad)
        edges += len(w)
    return PenaltyResult(value=coeff * value, weight_grads=grads, edges_visited=edges)


def apply_dropout(
    outputs: np.ndarray,
    p: float,
    rng: Union[np.random.Generator, int, None] = None,
    training: bool = True,
):
    """Inverted dropout; returns (masked outputs, scaled mask or None)"""
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must satisfy 0 <= p < 1, got {p}")
    if not training or p == 0:
        return outputs, None
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    mask = (rng.random(outputs.shape) >= p) / (1.0 - p)
    return outputs * mask, mask
