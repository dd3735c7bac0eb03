"""Dataset loading (IDX, CIFAR-10 binary, CSV, synthetic), splitting and normalization."""
import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Annotated, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import structlog
from pydantic import BaseModel, Field, TypeAdapter

from fiedlernet.core.errors import DatasetFormatError

logger = structlog.get_logger()

IDX_IMAGE_MAGIC = 2051
IDX_LABEL_MAGIC = 2049
CIFAR10_RECORD = 1 + 32 * 32 * 3
CIFAR10_CLASSES = ("airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck")


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    class_count: int
    feature_bound: float
    class_names: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        features = np.array(self.features, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64).reshape(-1)
        if features.ndim != 2 or features.shape[0] != len(labels):
            raise DatasetFormatError(f"features {features.shape} do not match {len(labels)} labels")
        if len(labels) and (labels.min() < 0 or labels.max() >= self.class_count):
            raise DatasetFormatError(f"labels must lie in 0..{self.class_count - 1}")
        if features.size and np.abs(features).max() > self.feature_bound:
            raise DatasetFormatError(f"features exceed the declared bound C={self.feature_bound}")
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def build(cls, features, labels, class_count: int, class_names=None, feature_bound: Optional[float] = None) -> "Dataset":
        features = np.asarray(features, dtype=np.float64)
        if feature_bound is None:
            feature_bound = float(np.abs(features).max()) if features.size else 0.0
        names = tuple(class_names) if class_names is not None else None
        return cls(features=features, labels=labels, class_count=class_count, feature_bound=feature_bound, class_names=names)

    @property
    def num_samples(self) -> int:
        return len(self.labels)

    @property
    def dimension(self) -> int:
        return self.features.shape[1]

    def subset(self, index: np.ndarray, feature_bound: Optional[float] = None) -> "Dataset":
        return Dataset.build(
            self.features[index], self.labels[index], self.class_count, self.class_names, feature_bound
        )


class IdxSource(BaseModel):
    kind: Literal["idx"] = "idx"
    images: Path
    labels: Path
    num_classes: int = Field(10, ge=1)
    limit: Optional[int] = Field(None, ge=1)


class Cifar10Source(BaseModel):
    kind: Literal["cifar10"] = "cifar10"
    batches: List[Path]
    limit: Optional[int] = Field(None, ge=1)


class CsvSource(BaseModel):
    kind: Literal["csv"] = "csv"
    path: Path
    label_column: str = "label"
    # explicit class order; defaults to first appearance
    classes: Optional[List[str]] = None
    limit: Optional[int] = Field(None, ge=1)


class SyntheticSource(BaseModel):
    kind: Literal["synthetic"] = "synthetic"
    generator: Literal["two-gaussians"] = "two-gaussians"
    d: int = Field(20, ge=1)
    n: int = Field(500, ge=2)
    mu: float = Field(1.5, ge=0)
    seed: int = 0


DatasetSource = Annotated[Union[IdxSource, Cifar10Source, CsvSource, SyntheticSource], Field(discriminator="kind")]
_source_adapter = TypeAdapter(DatasetSource)


def parse_source(raw) -> DatasetSource:
    return _source_adapter.validate_python(raw)


def _open(path: Path):
    path = Path(path)
    if not path.exists():
        raise DatasetFormatError(f"dataset file not found: {path}")
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx_images(path: Union[str, Path], limit: Optional[int] = None) -> np.ndarray:
    """N x (rows*cols) pixels scaled to [0, 1]"""
    with _open(path) as f:
        header = f.read(16)
        if len(header) < 16:
            raise DatasetFormatError(f"{path}: truncated IDX header")
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != IDX_IMAGE_MAGIC:
            raise DatasetFormatError(f"{path}: magic number {magic:#010x} is not an IDX image file")
        if limit is not None:
            count = min(count, limit)
        size = count * rows * cols
        buf = f.read(size)
    if len(buf) != size:
        raise DatasetFormatError(f"{path}: expected {size} pixel bytes, found {len(buf)}")
    pixels = np.frombuffer(buf, dtype=np.uint8).reshape(count, rows * cols)
    return pixels.astype(np.float64) / 255.0


def read_idx_labels(path: Union[str, Path], limit: Optional[int] = None) -> np.ndarray:
    with _open(path) as f:
        header = f.read(8)
        if len(header) < 8:
            raise DatasetFormatError(f"{path}: truncated IDX header")
        magic, count = struct.unpack(">II", header)
        if magic != IDX_LABEL_MAGIC:
            raise DatasetFormatError(f"{path}: magic number {magic:#010x} is not an IDX label file")
        if limit is not None:
            count = min(count, limit)
        buf = f.read(count)
    if len(buf) != count:
        raise DatasetFormatError(f"{path}: expected {count} labels, found {len(buf)}")
    return np.frombuffer(buf, dtype=np.uint8).astype(np.int64)


def _load_idx(source: IdxSource) -> Dataset:
    images = read_idx_images(source.images, source.limit)
    labels = read_idx_labels(source.labels, source.limit)
    if len(images) != len(labels):
        raise DatasetFormatError(f"{len(images)} images but {len(labels)} labels")
    return Dataset.build(images, labels, source.num_classes, feature_bound=1.0)


def _load_cifar10(source: Cifar10Source) -> Dataset:
    """Binary batches: 1 label byte followed by 3072 pixel bytes per record"""
    features, labels = [], []
    remaining = source.limit
    for path in source.batches:
        with _open(path) as f:
            raw = f.read()
        if len(raw) % CIFAR10_RECORD:
            raise DatasetFormatError(f"{path}: size {len(raw)} is not a multiple of {CIFAR10_RECORD}")
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR10_RECORD)
        if remaining is not None:
            records = records[:remaining]
            remaining -= len(records)
        labels.append(records[:, 0].astype(np.int64))
        features.append(records[:, 1:].astype(np.float64) / 255.0)
        if remaining is not None and remaining <= 0:
            break
    if not labels:
        raise DatasetFormatError("no CIFAR-10 batches given")
    y = np.concatenate(labels)
    if y.size and y.max() >= len(CIFAR10_CLASSES):
        raise DatasetFormatError(f"CIFAR-10 label {int(y.max())} out of range")
    return Dataset.build(np.vstack(features), y, len(CIFAR10_CLASSES), CIFAR10_CLASSES, feature_bound=1.0)


def _load_csv(source: CsvSource) -> Dataset:
    if not Path(source.path).exists():
        raise DatasetFormatError(f"dataset file not found: {source.path}")
    # the header row fixes the width; wider data rows are parse errors
    nrows = None if source.limit is None else source.limit + 1
    try:
        raw = pd.read_csv(source.path, header=None, dtype=str, keep_default_na=False, nrows=nrows)
    except pd.errors.ParserError as e:
        raise DatasetFormatError(f"{source.path}: ragged CSV, {e}") from e
    except pd.errors.EmptyDataError as e:
        raise DatasetFormatError(f"{source.path}: {e}") from e
    frame = raw.iloc[1:].reset_index(drop=True)
    frame.columns = [str(name) for name in raw.iloc[0]]
    if source.label_column not in frame.columns:
        raise DatasetFormatError(f"{source.path}: no label column {source.label_column!r}")
    if frame.isna().any().any():
        row = int(np.argmax(frame.isna().any(axis=1).to_numpy()))
        raise DatasetFormatError(f"{source.path}: ragged row {row + 2}")

    raw_labels = frame.pop(source.label_column)
    try:
        features = frame.apply(pd.to_numeric).to_numpy(dtype=np.float64)
    except (ValueError, TypeError) as e:
        raise DatasetFormatError(f"{source.path}: non-numeric feature ({e})") from e
    if not np.all(np.isfinite(features)):
        raise DatasetFormatError(f"{source.path}: non-finite feature value")

    if source.classes is not None:
        lookup = {name: i for i, name in enumerate(source.classes)}
        unknown = sorted(set(raw_labels) - set(lookup))
        if unknown:
            raise DatasetFormatError(f"{source.path}: labels {unknown} not among the declared classes")
        labels = raw_labels.map(lookup).to_numpy(dtype=np.int64)
        names = list(source.classes)
    else:
        codes, uniques = pd.factorize(raw_labels, sort=False)
        labels = codes.astype(np.int64)
        names = [str(u) for u in uniques]
    return Dataset.build(features, labels, max(len(names), 1), names)


def _two_gaussians(source: SyntheticSource) -> Dataset:
    """Balanced classes drawn from N(+-mu * 1/sqrt(d), I)"""
    rng = np.random.default_rng(source.seed)
    labels = np.zeros(source.n, dtype=np.int64)
    labels[source.n // 2:] = 1
    labels = rng.permutation(labels)
    center = np.full(source.d, source.mu / np.sqrt(source.d))
    features = (2.0 * labels[:, None] - 1.0) * center + rng.standard_normal((source.n, source.d))
    return Dataset.build(features, labels, 2, ["negative", "positive"])


def load_dataset(source) -> Dataset:
    """Load any dataset source (model instance or dict with a `kind` key)"""
    if isinstance(source, dict):
        source = parse_source(source)
    try:
        if isinstance(source, IdxSource):
            dataset = _load_idx(source)
        elif isinstance(source, Cifar10Source):
            dataset = _load_cifar10(source)
        elif isinstance(source, CsvSource):
            dataset = _load_csv(source)
        elif isinstance(source, SyntheticSource):
            dataset = _two_gaussians(source)
        else:
            raise DatasetFormatError(f"unsupported dataset source: {type(source).__name__}")
    except DatasetFormatError as e:
        logger.error("Failed to load dataset", kind=getattr(source, "kind", None), error=str(e))
        raise
    logger.info(
        "Loaded dataset",
        kind=source.kind,
        samples=dataset.num_samples,
        dimension=dataset.dimension,
        classes=dataset.class_count,
    )
    return dataset


def normalize_pair(train: Dataset, test: Dataset, normalization: Literal["minmax", "none"] = "minmax") -> Tuple[Dataset, Dataset]:
    """Min-max to [-1, 1] with statistics from `train`, applied to both"""
    if normalization == "none":
        return train, test
    if normalization != "minmax":
        raise ValueError(f"unknown normalization: {normalization!r}")
    if test.dimension != train.dimension:
        raise DatasetFormatError(f"train has {train.dimension} features, test has {test.dimension}")

    low = train.features.min(axis=0)
    span = train.features.max(axis=0) - low
    # constant features map to 0
    scale = np.where(span > 0, 2.0 / np.where(span > 0, span, 1.0), 0.0)
    offset = (span > 0).astype(np.float64)
    return (
        Dataset.build((train.features - low) * scale - offset, train.labels, train.class_count, train.class_names),
        Dataset.build((test.features - low) * scale - offset, test.labels, test.class_count, test.class_names),
    )


def split_and_normalize(
    dataset: Dataset,
    train_fraction: float,
    seed: int = 0,
    normalization: Literal["minmax", "none"] = "minmax",
) -> Tuple[Dataset, Dataset]:
    """Seeded split; normalization statistics come from the training side only"""
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = dataset.num_samples
    n_train = int(round(n * train_fraction))
    if n_train == 0 or n_train == n:
        raise ValueError(f"split of {n} samples at {train_fraction} leaves one side empty")

    order = np.random.default_rng(seed).permutation(n)
    train_idx, test_idx = np.sort(order[:n_train]), np.sort(order[n_train:])
    train = dataset.subset(train_idx, dataset.feature_bound)
    test = dataset.subset(test_idx, dataset.feature_bound)
    return normalize_pair(train, test, normalization)


def export_csv(dataset: Dataset, path: Union[str, Path], label_column: str = "label") -> Path:
    """Header row x0..x{d-1}, label; labels written as class names"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = class_names_for(dataset)
    frame = pd.DataFrame(dataset.features, columns=[f"x{j}" for j in range(dataset.dimension)])
    frame[label_column] = [names[i] for i in dataset.labels]
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


def class_names_for(dataset: Dataset) -> Sequence[str]:
    return dataset.class_names or tuple(str(i) for i in range(dataset.class_count))
