"""Minimal feedforward MLP: parameters, forward pass, backpropagation."""
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog
from scipy.special import log_softmax, softmax

from fiedlernet.core.errors import ArchitectureError, CheckpointFormatError, DimensionMismatchError, NonFiniteWeightError
from fiedlernet.services.regularization import apply_dropout

logger = structlog.get_logger()

CHECKPOINT_VERSION = 1
ACTIVATIONS = ("relu", "tanh")
# Lipschitz constants of the supported activations
LIPSCHITZ = {"relu": 1.0, "tanh": 1.0}


@dataclass
class MlpModel:
    layer_dims: Tuple[int, ...]
    weights: List[np.ndarray]
    biases: Optional[List[np.ndarray]] = None
    activation: str = "relu"

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if len(self.layer_dims) < 2 or min(self.layer_dims) < 1:
            raise ArchitectureError(f"layer_dims must have >= 2 positive entries, got {self.layer_dims}")
        if self.activation not in ACTIVATIONS:
            raise ArchitectureError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if len(self.weights) != len(self.layer_dims) - 1:
            raise ArchitectureError(f"expected {len(self.layer_dims) - 1} weight matrices, got {len(self.weights)}")
        for l, W in enumerate(self.weights, start=1):
            expected = (self.layer_dims[l], self.layer_dims[l - 1])
            if W.shape != expected:
                raise DimensionMismatchError(f"W^({l}) shape", expected, W.shape)
            if not np.all(np.isfinite(W)):
                index = tuple(int(i) for i in np.argwhere(~np.isfinite(W))[0])
                raise NonFiniteWeightError(l, index, float(W[index]))
        if self.biases is not None:
            if len(self.biases) != len(self.weights):
                raise ArchitectureError(f"expected {len(self.weights)} bias vectors, got {len(self.biases)}")
            for l, b in enumerate(self.biases, start=1):
                if b.shape != (self.layer_dims[l],):
                    raise DimensionMismatchError(f"b^({l}) shape", (self.layer_dims[l],), b.shape)

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def gamma(self) -> float:
        return LIPSCHITZ[self.activation]

    def copy(self) -> "MlpModel":
        return MlpModel(
            layer_dims=self.layer_dims,
            weights=[W.copy() for W in self.weights],
            biases=None if self.biases is None else [b.copy() for b in self.biases],
            activation=self.activation,
        )


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if inputs.ndim != 2 or inputs.shape[0] != len(labels):
            raise DimensionMismatchError("batch rows", len(labels), inputs.shape)
        if not np.all(np.isfinite(inputs)):
            raise ValueError("batch inputs must be finite")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)


@dataclass
class ForwardCache:
    activations: List[np.ndarray] = field(default_factory=list)
    preactivations: List[np.ndarray] = field(default_factory=list)
    masks: List[Optional[np.ndarray]] = field(default_factory=list)


@dataclass
class Gradients:
    weights: List[np.ndarray]
    biases: Optional[List[np.ndarray]] = None


def parameter_count(layer_dims: Sequence[int], biases: bool = True) -> int:
    dims = list(layer_dims)
    count = sum(dims[l] * dims[l - 1] for l in range(1, len(dims)))
    if biases:
        count += sum(dims[1:])
    return count


def init_model(layer_dims: Sequence[int], activation: str = "relu", seed: int = 0, biases: bool = True) -> MlpModel:
    """Uniform(-s, s) weights with s = sqrt(6 / (d_in + d_out)); zero biases"""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or min(dims) < 1:
        raise ArchitectureError(f"layer_dims must have >= 2 positive entries, got {dims}")
    rng = np.random.default_rng(seed)
    weights = []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        s = np.sqrt(6.0 / (d_in + d_out))
        weights.append(rng.uniform(-s, s, size=(d_out, d_in)))
    bias_list = [np.zeros(d) for d in dims[1:]] if biases else None
    return MlpModel(layer_dims=tuple(dims), weights=weights, biases=bias_list, activation=activation)


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activation_grad(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        # relu'(0) := 0
        return (z > 0).astype(z.dtype)
    t = np.tanh(z)
    return 1.0 - t * t


def forward(
    model: MlpModel,
    inputs: np.ndarray,
    dropout_p: float = 0.0,
    rng: Optional[np.random.Generator] = None,
    training: bool = False,
) -> Tuple[np.ndarray, ForwardCache]:
    """Logits of h^(l) = sigma(W^(l) h^(l-1) + b^(l)); no activation on the output layer"""
    h = np.asarray(inputs, dtype=np.float64)
    if h.ndim == 1:
        h = h.reshape(1, -1)
    if h.shape[1] != model.layer_dims[0]:
        raise DimensionMismatchError("input width", model.layer_dims[0], h.shape[1])

    cache = ForwardCache(activations=[h])
    last = model.num_layers - 1
    for l, W in enumerate(model.weights):
        z = h @ W.T
        if model.biases is not None:
            z = z + model.biases[l]
        if l == last:
            return z, cache
        h = _activate(z, model.activation)
        mask = None
        if training and dropout_p > 0:
            h, mask = apply_dropout(h, dropout_p, rng, training=True)
        cache.preactivations.append(z)
        cache.masks.append(mask)
        cache.activations.append(h)
    raise ArchitectureError("model has no layers")


def loss_and_grad(
    model: MlpModel,
    batch: Batch,
    dropout_p: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[float, Gradients]:
    """Mean softmax cross-entropy and its gradients by reverse-mode accumulation"""
    logits, cache = forward(model, batch.inputs, dropout_p=dropout_p, rng=rng, training=dropout_p > 0)
    n, classes = logits.shape
    if batch.labels.size and (batch.labels.min() < 0 or batch.labels.max() >= classes):
        raise DimensionMismatchError("label range", f"0..{classes - 1}", (int(batch.labels.min()), int(batch.labels.max())))

    rows = np.arange(n)
    loss = float(-log_softmax(logits, axis=1)[rows, batch.labels].mean())

    delta = softmax(logits, axis=1)
    delta[rows, batch.labels] -= 1.0
    delta /= n

    grad_w = [None] * model.num_layers
    grad_b = [None] * model.num_layers if model.biases is not None else None
    for l in range(model.num_layers - 1, -1, -1):
        h_prev = cache.activations[l]
        grad_w[l] = delta.T @ h_prev
        if grad_b is not None:
            grad_b[l] = delta.sum(axis=0)
        if l == 0:
            break
        dh = delta @ model.weights[l]
        mask = cache.masks[l - 1]
        if mask is not None:
            dh = dh * mask
        delta = dh * _activation_grad(cache.preactivations[l - 1], model.activation)

    return loss, Gradients(weights=grad_w, biases=grad_b)


def predict(model: MlpModel, inputs: np.ndarray, chunk: int = 4096) -> np.ndarray:
    inputs = np.asarray(inputs, dtype=np.float64)
    out = [np.argmax(forward(model, inputs[i:i + chunk])[0], axis=1) for i in range(0, len(inputs), chunk)]
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def evaluate(model: MlpModel, inputs: np.ndarray, labels: np.ndarray, chunk: int = 4096) -> Tuple[float, float]:
    """(mean cross-entropy, accuracy) without dropout"""
    inputs = np.asarray(inputs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        return float("nan"), float("nan")
    total_loss, correct = 0.0, 0
    for i in range(0, len(inputs), chunk):
        logits, _ = forward(model, inputs[i:i + chunk])
        y = labels[i:i + chunk]
        total_loss += float(-log_softmax(logits, axis=1)[np.arange(len(y)), y].sum())
        correct += int((np.argmax(logits, axis=1) == y).sum())
    return total_loss / len(labels), correct / len(labels)


def sparsity(model: MlpModel, threshold: float = 1e-6) -> float:
    """Fraction of weights with |W| < threshold"""
    total = sum(W.size for W in model.weights)
    small = sum(int((np.abs(W) < threshold).sum()) for W in model.weights)
    return small / total


def save_checkpoint(model: MlpModel, path: Union[str, Path]) -> Path:
    """Versioned .npz dump: format_version, layer_dims, activation, W{l}, b{l}"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {
        "format_version": np.array(CHECKPOINT_VERSION),
        "layer_dims": np.array(model.layer_dims, dtype=np.int64),
        "activation": np.array(model.activation),
        "has_biases": np.array(model.biases is not None),
    }
    for l, W in enumerate(model.weights):
        arrays[f"W{l}"] = W
    if model.biases is not None:
        for l, b in enumerate(model.biases):
            arrays[f"b{l}"] = b
    with open(path, "wb") as f:
        np.savez(f, **arrays)
    logger.info("Saved checkpoint", path=str(path), layer_dims=list(model.layer_dims))
    return path


def load_checkpoint(path: Union[str, Path]) -> MlpModel:
    try:
        with np.load(path, allow_pickle=False) as data:
            version = int(data["format_version"])
            if version != CHECKPOINT_VERSION:
                raise CheckpointFormatError(f"unsupported checkpoint version {version}")
            dims = tuple(int(d) for d in data["layer_dims"])
            activation = str(data["activation"])
            weights = [np.array(data[f"W{l}"], dtype=np.float64) for l in range(len(dims) - 1)]
            biases = None
            if bool(data["has_biases"]):
                biases = [np.array(data[f"b{l}"], dtype=np.float64) for l in range(len(dims) - 1)]
    except KeyError as e:
        raise CheckpointFormatError(f"checkpoint {path} is missing field {e}") from e
    return MlpModel(layer_dims=dims, weights=weights, biases=biases, activation=activation)
