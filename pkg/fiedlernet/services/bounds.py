"""Rademacher-complexity and generalization bounds for weighted-L1 constrained networks."""
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import structlog
from pydantic import BaseModel, Field, model_validator

from fiedlernet.core.errors import ArchitectureError, DimensionMismatchError
from fiedlernet.core.graph import layer_offsets
from fiedlernet.services.network import MlpModel

logger = structlog.get_logger()


class BoundInputs(BaseModel):
    gamma: float = Field(1.0, ge=0)
    Lambda: int = Field(..., ge=1)
    B: List[float]
    c_vectors: Optional[List[List[float]]] = None
    C: float = Field(..., ge=0)
    d: int = Field(..., ge=1)
    N: int = Field(..., ge=1)
    # failure probability of the high-probability statement
    confidence: float = Field(0.05, gt=0, lt=1)

    @model_validator(mode="after")
    def _check_layers(self):
        if len(self.B) != self.Lambda:
            raise ValueError(f"expected {self.Lambda} budgets, got {len(self.B)}")
        if any(b < 0 for b in self.B):
            raise ValueError("budgets must be >= 0")
        if self.c_vectors is not None:
            if len(self.c_vectors) != self.Lambda:
                raise ValueError(f"expected {self.Lambda} weighting vectors, got {len(self.c_vectors)}")
            for c in self.c_vectors:
                if not c or any(x < 0 for x in c) or max(c) <= 0:
                    raise ValueError("weighting vectors need entries >= 0 with at least one > 0")
        return self


class BoundReport(BaseModel):
    rademacher: float
    generalization: float
    unbounded: bool
    l1_rademacher: float
    l1_generalization: float
    budgets: List[float]
    l1_budgets: List[float]
    min_weights: List[float]
    C: float
    d: int
    N: int
    gamma: float
    confidence: float


@dataclass(frozen=True)
class UMatrix:
    """U_ab = (u(a) - u(b))^2, evaluated on demand"""

    u: np.ndarray

    @property
    def n(self) -> int:
        return len(self.u)

    def __getitem__(self, key) -> float:
        a, b = key
        return float((self.u[a] - self.u[b]) ** 2)

    def block(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        diff = self.u[np.asarray(rows)][:, None] - self.u[np.asarray(cols)][None, :]
        return diff * diff

    def dense(self) -> np.ndarray:
        return self.block(np.arange(self.n), np.arange(self.n))


def u_matrix(u: np.ndarray) -> UMatrix:
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(u)):
        raise ValueError("test vector must be finite")
    return UMatrix(u=u)


def weighting_vectors(U: UMatrix, layer_dims: Sequence[int]) -> List[np.ndarray]:
    """c^{l-1}(b) = max over a in layer l of U[a, b], for every b in layer l-1"""
    dims = list(layer_dims)
    if len(dims) < 2 or min(dims) < 1:
        raise ArchitectureError(f"every layer needs positive width, got {dims}")
    offsets = layer_offsets(dims)
    if U.n < offsets[-1]:
        raise DimensionMismatchError("U matrix size", int(offsets[-1]), U.n)
    vectors = []
    for l in range(1, len(dims)):
        outs = np.arange(offsets[l], offsets[l + 1])
        ins = np.arange(offsets[l - 1], offsets[l])
        vectors.append(U.block(outs, ins).max(axis=0))
    return vectors


def _complexity_term(C: float, d: int, N: int) -> float:
    return C * math.sqrt(2.0 * math.log(2 * d) / N)


def linear_class_bound(B: float, C: float, d: int, N: int, c: Optional[Sequence[float]] = None) -> float:
    """B * C * sqrt(2 ln(2d) / N), with B replaced by B / min(c) under a weighted constraint.

    Returns inf when min(c) = 0 and B > 0.
    """
    if B < 0 or C < 0:
        raise ValueError(f"B and C must be >= 0, got {B}, {C}")
    if d < 1 or N < 1:
        raise ValueError(f"d and N must be >= 1, got {d}, {N}")
    if B == 0:
        return 0.0
    if c is not None:
        c_min = float(np.min(c))
        if c_min <= 0:
            logger.warning("Weighting vector has a zero entry; linear class is unbounded")
            return math.inf
        B = B / c_min
    return B * _complexity_term(C, d, N)


def network_rademacher_bound(inputs: BoundInputs) -> float:
    """(2 gamma)^(Lambda-1) * prod_l B_{l-1} / min(c^{l-1}) * C * sqrt(2 ln(2d) / N)

    A layer with B > 0 and a zero weighting entry makes the bound infinite, even when
    another layer's budget is zero.
    """
    c_vectors = inputs.c_vectors or [None] * inputs.Lambda
    c_mins = [1.0 if c is None else float(np.min(c)) for c in c_vectors]
    unbounded = [l + 1 for l, (B, c_min) in enumerate(zip(inputs.B, c_mins)) if B > 0 and c_min <= 0]
    if unbounded:
        logger.warning("Weighting vector has a zero entry; network bound is unbounded", layers=unbounded)
        return math.inf
    if any(B == 0 for B in inputs.B):
        return 0.0
    factor = 1.0
    for l in range(1, inputs.Lambda):
        factor *= 2.0 * inputs.gamma * inputs.B[l] / c_mins[l]
    return factor * linear_class_bound(inputs.B[0], inputs.C, inputs.d, inputs.N, c_vectors[0])


def generalization_bound(inputs: BoundInputs, rademacher: float) -> float:
    """2 * rademacher + sqrt(ln(1 / confidence) / (2N))"""
    return 2.0 * rademacher + math.sqrt(math.log(1.0 / inputs.confidence) / (2.0 * inputs.N))


def empirical_rademacher_mc(outputs: np.ndarray, trials: int = 1000, seed: int = 0, shards: int = 1) -> Tuple[float, float]:
    """Monte-Carlo estimate of E_sigma sup_h (1/N) sum_i sigma_i h(z_i).

    `outputs` has one row per function in the class and one column per point.
    Returns (estimate, standard error).
    """
    outputs = np.atleast_2d(np.asarray(outputs, dtype=np.float64))
    if outputs.size == 0:
        raise ValueError("function class is empty")
    if trials < 1 or shards < 1:
        raise ValueError("trials and shards must be >= 1")
    n_points = outputs.shape[1]

    sizes = [trials // shards + (1 if k < trials % shards else 0) for k in range(shards)]
    streams = np.random.SeedSequence(seed).spawn(shards)
    sups = []
    for size, stream in zip(sizes, streams):
        if size == 0:
            continue
        rng = np.random.default_rng(stream)
        signs = rng.choice(np.array([-1.0, 1.0]), size=(size, n_points))
        sups.append((signs @ outputs.T).max(axis=1) / n_points)
    values = np.concatenate(sups)
    stderr = float(values.std(ddof=1) / math.sqrt(len(values))) if len(values) > 1 else 0.0
    return float(values.mean()), stderr


def measure_budgets(model: MlpModel, c_vectors: Sequence[np.ndarray]) -> List[float]:
    """B_{l-1} = max over rows r of sum_b c^{l-1}(b) |W^(l)_{r,b}|"""
    if len(c_vectors) != model.num_layers:
        raise DimensionMismatchError("weighting vector count", model.num_layers, len(c_vectors))
    budgets = []
    for W, c in zip(model.weights, c_vectors):
        c = np.asarray(c, dtype=np.float64)
        if c.shape != (W.shape[1],):
            raise DimensionMismatchError("weighting vector length", W.shape[1], c.shape)
        budgets.append(float((np.abs(W) @ c).max()))
    return budgets


def unweighted_network_bound(model: MlpModel, C: float, d: int, N: int, gamma: float = 1.0) -> float:
    """Plain L1 instance: all weighting vectors are ones"""
    ones = [np.ones(W.shape[1]) for W in model.weights]
    inputs = BoundInputs(gamma=gamma, Lambda=model.num_layers, B=measure_budgets(model, ones), C=C, d=d, N=N)
    return network_rademacher_bound(inputs)


def bound_report(
    model: MlpModel,
    u: np.ndarray,
    C: float,
    d: int,
    N: int,
    gamma: Optional[float] = None,
    confidence: float = 0.05,
) -> BoundReport:
    """Fiedler-weighted bound measured on a trained model, next to the plain L1 bound"""
    gamma = model.gamma if gamma is None else gamma
    U = u_matrix(u)
    c_vectors = weighting_vectors(U, model.layer_dims)
    budgets = measure_budgets(model, c_vectors)
    min_weights = [float(c.min()) for c in c_vectors]

    ones = [np.ones(W.shape[1]) for W in model.weights]
    l1_budgets = measure_budgets(model, ones)
    l1_inputs = BoundInputs(gamma=gamma, Lambda=model.num_layers, B=l1_budgets, C=C, d=d, N=N, confidence=confidence)
    l1_rad = network_rademacher_bound(l1_inputs)

    if any(float(c.max()) <= 0 for c in c_vectors):
        # an all-zero weighting vector is not a valid constraint
        rademacher = math.inf
    else:
        inputs = BoundInputs(
            gamma=gamma,
            Lambda=model.num_layers,
            B=budgets,
            c_vectors=[c.tolist() for c in c_vectors],
            C=C,
            d=d,
            N=N,
            confidence=confidence,
        )
        rademacher = network_rademacher_bound(inputs)
    unbounded = math.isinf(rademacher)
    if unbounded:
        logger.warning("Fiedler-weighted bound is unbounded", min_weights=min_weights)

    return BoundReport(
        rademacher=rademacher,
        generalization=generalization_bound(l1_inputs, rademacher),
        unbounded=unbounded,
        l1_rademacher=l1_rad,
        l1_generalization=generalization_bound(l1_inputs, l1_rad),
        budgets=budgets,
        l1_budgets=l1_budgets,
        min_weights=min_weights,
        C=C,
        d=d,
        N=N,
        gamma=gamma,
        confidence=confidence,
    )
