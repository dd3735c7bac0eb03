"""Fiedler pair, test-vector bound, eigenvalue gradients and perturbation bounds."""
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple, Union

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla
import structlog

from fiedlernet.config import settings
from fiedlernet.core.errors import (
    AsymmetricMatrixError,
    DimensionMismatchError,
    DisconnectedGraphError,
    GraphError,
    InvalidTestVectorError,
    SolverError,
)
from fiedlernet.core.graph import LaplacianMatrix, VertexSubset, WeightedGraph

logger = structlog.get_logger()

DISCONNECT_TOL = 1e-9
GAP_TOL = 1e-8
SOLVER_TOL = 1e-8


@dataclass(frozen=True)
class FiedlerPair:
    lambda2: float
    v2: np.ndarray
    residual: float
    gap: float = math.inf
    method: str = "dense"

    @property
    def value(self) -> float:
        return self.lambda2

    @property
    def vector(self) -> np.ndarray:
        return self.v2

    @property
    def disconnected(self) -> bool:
        return self.lambda2 < DISCONNECT_TOL


@dataclass(frozen=True)
class EigenPair:
    k: int
    value: float
    vector: np.ndarray
    gap: float


class EigenGradient(NamedTuple):
    d_laplacian: float
    d_weight: float
    degenerate: bool


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    # largest-magnitude entry positive, first one on ties
    idx = int(np.argmax(np.abs(v)))
    return -v if v[idx] < 0 else v


def _residual(L, value: float, vector: np.ndarray) -> float:
    return float(np.linalg.norm(L @ vector - value * vector))


def _dense_fiedler(lap: LaplacianMatrix) -> Tuple[float, np.ndarray, float]:
    n = lap.n
    # orthonormal basis of the complement of the constant vector
    Q = la.null_space(np.ones((1, n)))
    M = Q.T @ lap.dense() @ Q
    w, Y = la.eigh((M + M.T) / 2)
    v2 = Q @ Y[:, 0]
    v2 /= np.linalg.norm(v2)
    gap = float(w[1] - w[0]) if len(w) > 1 else math.inf
    return float(w[0]), v2, gap


def _lanczos_fiedler(lap: LaplacianMatrix, v0: Optional[np.ndarray]) -> Tuple[float, np.ndarray, float]:
    n = lap.n
    L = lap.matrix
    # Gershgorin: every eigenvalue of L lies below 2 * d_max
    sigma = 2.0 * lap.max_degree() + 1.0

    def project(x):
        return x - x.mean()

    def matvec(x):
        x = project(np.asarray(x).reshape(-1))
        return project(sigma * x - L @ x)

    op = spla.LinearOperator((n, n), matvec=matvec, dtype=np.float64)
    if v0 is None:
        v0 = np.random.default_rng(0).uniform(-1.0, 1.0, n)
    v0 = project(np.asarray(v0, dtype=np.float64))
    if np.linalg.norm(v0) < 1e-12:
        v0 = project(np.random.default_rng(0).uniform(-1.0, 1.0, n))

    k = 2 if n > 3 else 1
    ncv = min(n, max(20, 2 * k + 1))
    try:
        theta, V = spla.eigsh(op, k=k, which="LA", v0=v0, ncv=ncv, tol=0, maxiter=max(1000, 10 * n))
    except spla.ArpackNoConvergence as e:
        raise SolverError(f"Lanczos did not converge: {e}") from e
    except spla.ArpackError as e:
        raise SolverError(f"ARPACK failed: {e}") from e

    order = np.argsort(theta)[::-1]
    theta, V = theta[order], V[:, order]
    v2 = project(V[:, 0])
    v2 /= np.linalg.norm(v2)
    lambda2 = float(v2 @ (L @ v2))
    gap = float(theta[0] - theta[1]) if k > 1 else math.inf
    return lambda2, v2, gap


def fiedler_pair(
    lap: LaplacianMatrix,
    tol: float = SOLVER_TOL,
    method: str = "auto",
    v0: Optional[np.ndarray] = None,
    disconnect_tol: float = DISCONNECT_TOL,
    allow_disconnected: bool = False,
) -> FiedlerPair:
    """Second-smallest Laplacian eigenpair, solved on the complement of the constant vector"""
    n = lap.n
    if n < 2:
        raise GraphError("a Fiedler pair needs at least two vertices")
    if method == "auto":
        method = "dense" if n <= settings.dense_solver_max_n else "lanczos"
    if method == "lanczos" and n < 4:
        method = "dense"

    if method == "dense":
        lambda2, v2, gap = _dense_fiedler(lap)
    elif method == "lanczos":
        lambda2, v2, gap = _lanczos_fiedler(lap, v0)
    else:
        raise ValueError(f"unknown eigensolver method: {method!r}")

    v2 = _canonical_sign(v2)
    lambda2 = max(lambda2, 0.0)
    residual = _residual(lap.matrix, lambda2, v2)
    if residual > tol * max(1.0, lap.max_degree()):
        raise SolverError(f"{method} eigensolver residual {residual:.3e} exceeds tolerance {tol:.1e}")

    if lambda2 < disconnect_tol and not allow_disconnected:
        raise DisconnectedGraphError(lambda2, disconnect_tol)

    return FiedlerPair(lambda2=lambda2, v2=v2, residual=residual, gap=gap, method=method)


def laplacian_eigenpair(lap: LaplacianMatrix, k: int) -> EigenPair:
    """k-th smallest eigenpair (1-based) via the dense solver"""
    n = lap.n
    if not 1 <= k <= n:
        raise DimensionMismatchError("eigenpair index", f"1..{n}", k)
    w, V = la.eigh(lap.dense())
    neighbours = [w[k - 1] - w[k - 2]] if k > 1 else []
    if k < n:
        neighbours.append(w[k] - w[k - 1])
    gap = float(min(neighbours)) if neighbours else math.inf
    return EigenPair(k=k, value=float(w[k - 1]), vector=_canonical_sign(V[:, k - 1]), gap=gap)


def project_test_vector(u: np.ndarray) -> np.ndarray:
    """Project against the constant vector and normalise"""
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    u = u - u.mean()
    norm = np.linalg.norm(u)
    if norm < 1e-12:
        raise InvalidTestVectorError("test vector vanishes after projection against the constant vector")
    return u / norm


def test_vector_bound(lap: LaplacianMatrix, u: np.ndarray, tol: float = 1e-8) -> float:
    """u^T L u for a unit vector orthogonal to 1; always >= lambda2"""
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    if len(u) != lap.n:
        raise DimensionMismatchError("test vector length", lap.n, len(u))
    if abs(np.linalg.norm(u) - 1.0) > tol or abs(u.sum()) > tol:
        logger.debug("Re-projecting test vector", norm=float(np.linalg.norm(u)), offset=float(u.sum()))
        u = project_test_vector(u)
    return float(u @ (lap.matrix @ u))


# keep pytest from collecting the function above as a test
test_vector_bound.__test__ = False


def eigenvalue_gradient(pair: Union[FiedlerPair, EigenPair], i: int, j: int, gap_tol: float = GAP_TOL) -> EigenGradient:
    """d lambda / d L_ij = v(i) v(j); d lambda / d |W|_ij = -v(i) v(j)"""
    if i == j:
        raise GraphError("eigenvalue gradient is defined for off-diagonal entries only")
    v = pair.vector
    degenerate = pair.gap <= gap_tol
    if degenerate:
        logger.warning("Eigenvalue is not simple; gradient uses the computed eigenvector", gap=pair.gap, i=i, j=j)
    d_lap = float(v[i] * v[j])
    return EigenGradient(d_laplacian=d_lap, d_weight=-d_lap, degenerate=degenerate)


def edge_weight_gradient(v: np.ndarray, a: int, b: int) -> float:
    """Derivative of the eigenvalue w.r.t. one edge weight |W|_ab.

    The edge enters L at (a,b), (b,a), (a,a) and (b,b); summing the entry-wise
    derivatives gives v(a)^2 + v(b)^2 - 2 v(a) v(b).
    """
    return float((v[a] - v[b]) ** 2)


def weyl_change_bound(H, symmetric_tol: float = 1e-12) -> float:
    """Operator norm of a symmetric perturbation: bounds |lambda_i(L+H) - lambda_i(L)|"""
    if sp.issparse(H):
        H = sp.csr_matrix(H)
        asym = abs(H - H.T).max() if H.nnz else 0.0
        scale = abs(H).max() if H.nnz else 0.0
    else:
        H = np.asarray(H, dtype=np.float64)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise DimensionMismatchError("perturbation shape", "square matrix", H.shape)
        asym = float(np.abs(H - H.T).max()) if H.size else 0.0
        scale = float(np.abs(H).max()) if H.size else 0.0
    if asym > symmetric_tol * max(1.0, scale):
        raise AsymmetricMatrixError(float(asym))

    n = H.shape[0]
    if n == 0:
        return 0.0
    if sp.issparse(H):
        if H.nnz == 0:
            return 0.0
        if n <= settings.dense_solver_max_n or n < 3:
            return float(np.abs(la.eigvalsh(H.toarray())).max())
        value = spla.eigsh(H, k=1, which="LM", return_eigenvectors=False, tol=0)
        return float(np.abs(value).max())
    return float(np.abs(la.eigvalsh((H + H.T) / 2)).max())


def cheeger_bounds(lambda2: float, d_max: float) -> Tuple[float, float]:
    """lambda2 / 2 <= phi <= sqrt(2 d_max lambda2)"""
    if lambda2 < 0 or d_max < 0:
        raise ValueError(f"lambda2 and d_max must be non-negative, got {lambda2}, {d_max}")
    return lambda2 / 2.0, math.sqrt(2.0 * d_max * lambda2)


def sweep_cut(graph: WeightedGraph, v2: np.ndarray) -> Tuple[float, VertexSubset]:
    """Best threshold cut along the sorted Fiedler vector"""
    n = graph.num_vertices
    v2 = np.asarray(v2).reshape(-1)
    if len(v2) != n:
        raise DimensionMismatchError("Fiedler vector length", n, len(v2))
    if n < 2:
        raise GraphError("sweep cut needs at least two vertices")

    adj = graph.adjacency()
    deg = graph.degrees()
    order = np.argsort(v2, kind="stable")
    inside = np.zeros(n, dtype=bool)
    cut = 0.0
    best_ratio, best_k = math.inf, 1
    for k in range(1, n):
        v = order[k - 1]
        start, end = adj.indptr[v], adj.indptr[v + 1]
        to_inside = float(adj.data[start:end][inside[adj.indices[start:end]]].sum())
        cut += deg[v] - 2.0 * to_inside
        inside[v] = True
        ratio = cut / min(k, n - k)
        if ratio < best_ratio:
            best_ratio, best_k = ratio, k

    prefix = order[:best_k]
    members = prefix if best_k <= n // 2 else order[best_k:]
    return float(max(best_ratio, 0.0)), VertexSubset.of(members)
