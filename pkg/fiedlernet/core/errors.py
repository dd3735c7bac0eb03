from typing import Any, Optional, Tuple


class FiedlerNetError(Exception):
    """Base class for all library errors"""


class GraphError(FiedlerNetError):
    """Graph violates the simple, non-negative, undirected invariants"""


class NonFiniteWeightError(FiedlerNetError):
    def __init__(self, layer: int, index: Tuple[int, ...], value: float):
        self.layer = layer
        self.index = index
        self.value = value
        super().__init__(f"Non-finite weight {value!r} in layer {layer} at index {index}")


class DimensionMismatchError(FiedlerNetError):
    def __init__(self, what: str, expected: Any, actual: Any):
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what}: expected {expected}, got {actual}")


class DisconnectedGraphError(FiedlerNetError):
    def __init__(self, lambda2: float = 0.0, tol: float = 0.0):
        self.lambda2 = lambda2
        self.tol = tol
        super().__init__(f"Graph is disconnected (lambda2={lambda2:.3e} < {tol:.1e})")


class VertexCapExceededError(FiedlerNetError):
    def __init__(self, num_vertices: int, cap: int):
        self.num_vertices = num_vertices
        self.cap = cap
        super().__init__(f"Brute-force enumeration needs n <= {cap}, got n = {num_vertices}")


class SolverError(FiedlerNetError):
    def __init__(self, message: str, iteration: Optional[int] = None):
        self.iteration = iteration
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)


class InvalidTestVectorError(FiedlerNetError):
    """Vector vanishes after projection against the constant vector"""


class DivergenceError(FiedlerNetError):
    def __init__(self, iteration: int, loss: float, report: Any = None):
        self.iteration = iteration
        self.loss = loss
        self.report = report
        super().__init__(f"Loss became non-finite ({loss}) at iteration {iteration}")


class DatasetFormatError(FiedlerNetError):
    """Dataset file could not be parsed"""


class UnknownPenaltyError(FiedlerNetError):
    def __init__(self, kind: str):
        self.kind = kind
        super().__init__(f"Unknown penalty kind: {kind!r}")


class CheckpointFormatError(FiedlerNetError):
    """Checkpoint file is missing fields or has an unsupported version"""


class AsymmetricMatrixError(FiedlerNetError):
    def __init__(self, asymmetry: float):
        self.asymmetry = asymmetry
        super().__init__(f"Perturbation matrix is not symmetric (max |H - H^T| = {asymmetry:.3e})")


class ArchitectureError(FiedlerNetError):
    """Layer dimensions are empty, non-positive or do not chain"""
