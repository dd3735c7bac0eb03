"""Experiment runner: one training run per (regularizer, seed), merged into a comparison report."""
import json
from functools import lru_cache
from pathlib import Path
from typing import Callable, Dict, List, Literal, Optional

import numpy as np
import pandas as pd
import structlog
from pydantic import BaseModel, Field, model_validator

from fiedlernet.config import settings
from fiedlernet.core.celery_app import celery_app
from fiedlernet.core.errors import FiedlerNetError
from fiedlernet.database.models import ExperimentRun
from fiedlernet.services.data_io import (
    CsvSource,
    Cifar10Source,
    DatasetSource,
    IdxSource,
    SyntheticSource,
    load_dataset,
    normalize_pair,
    split_and_normalize,
)
from fiedlernet.services.network import init_model
from fiedlernet.services.trainer import PenaltyKind, TrainConfig, train, write_report

logger = structlog.get_logger()

EXIT_OK, EXIT_PARTIAL, EXIT_FATAL = 0, 1, 2

REGULARIZER_LABELS = {
    "none": "No regularization",
    "l1": "L1",
    "weight_decay": "Weight decay",
    "dropout": "Dropout",
    "fiedler": "Fiedler",
    "fiedler_exact": "Fiedler (exact)",
}


class RegularizerSpec(BaseModel):
    kind: PenaltyKind
    coefficient: float = Field(0.0, ge=0)

    @property
    def slug(self) -> str:
        return f"{self.kind}-{self.coefficient:g}"


def default_regularizers() -> List[RegularizerSpec]:
    return [
        RegularizerSpec(kind="none"),
        RegularizerSpec(kind="l1", coefficient=0.001),
        RegularizerSpec(kind="weight_decay", coefficient=0.01),
        RegularizerSpec(kind="dropout", coefficient=0.5),
        RegularizerSpec(kind="fiedler", coefficient=0.01),
    ]


class ExperimentSpec(BaseModel):
    name: str = "experiment"
    dataset: DatasetSource
    # when absent the dataset is split with train_fraction
    test_dataset: Optional[DatasetSource] = None
    train_fraction: float = Field(0.8, gt=0, lt=1)
    split_seed: int = 0
    normalization: Literal["minmax", "none"] = "minmax"
    hidden_layers: List[int] = Field(default_factory=lambda: [32, 32])
    activation: Literal["relu", "tanh"] = "relu"
    regularizers: List[RegularizerSpec] = Field(default_factory=default_regularizers, min_length=1)
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4], min_length=1)
    epochs: int = Field(10, ge=1)
    batch_size: int = Field(100, ge=1)
    learning_rate: float = Field(0.001, gt=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    refresh_period: int = Field(100, ge=1)
    include_biases: bool = False
    weyl_diagnostics: bool = False
    output_dir: Optional[Path] = None

    @model_validator(mode="after")
    def _check_hidden(self):
        if any(h < 1 for h in self.hidden_layers):
            raise ValueError("hidden layer widths must be >= 1")
        return self

    def resolved_output_dir(self) -> Path:
        return Path(self.output_dir) if self.output_dir is not None else Path(settings.output_root) / self.name

    def train_config(self, regularizer: RegularizerSpec, seed: int) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            batch_size=self.batch_size,
            epochs=self.epochs,
            penalty=regularizer.kind,
            coefficient=regularizer.coefficient,
            refresh_period=self.refresh_period,
            seed=seed,
            dataset_id=self.name,
            include_biases=self.include_biases,
            weyl_diagnostics=self.weyl_diagnostics,
        )


class RunOutcome(BaseModel):
    regularizer: str
    coefficient: float
    seed: int
    status: Literal["completed", "failed"]
    train_accuracy: Optional[float] = None
    test_accuracy: Optional[float] = None
    final_lambda2: Optional[float] = None
    sparsity: Optional[float] = None
    lambda2_history: List[List[float]] = Field(default_factory=list)
    error: Optional[str] = None


class SummaryRow(BaseModel):
    regularizer: str
    coefficient: float
    runs: int
    failed: int
    train_accuracy_median: Optional[float] = None
    train_accuracy_std: Optional[float] = None
    test_accuracy_median: Optional[float] = None
    test_accuracy_std: Optional[float] = None
    final_lambda2_median: Optional[float] = None
    sparsity_median: Optional[float] = None


class ExperimentResult(BaseModel):
    spec: ExperimentSpec
    rows: List[SummaryRow]
    runs: List[RunOutcome]
    exit_code: int
    output_dir: Path


DATA_FIELDS = {"dataset", "test_dataset", "train_fraction", "split_seed", "normalization"}


@lru_cache(maxsize=4)
def _prepared_data(data_json: str):
    spec = ExperimentSpec.model_validate_json(data_json)
    data = load_dataset(spec.dataset)
    if spec.test_dataset is None:
        return split_and_normalize(data, spec.train_fraction, seed=spec.split_seed, normalization=spec.normalization)
    return normalize_pair(data, load_dataset(spec.test_dataset), spec.normalization)


def prepare_data(spec: ExperimentSpec):
    """(train, test) datasets, shared by every run of the same data configuration"""
    return _prepared_data(spec.model_dump_json(include=DATA_FIELDS))


def execute_run(spec: ExperimentSpec, regularizer: RegularizerSpec, seed: int) -> RunOutcome:
    """Train one model and write its report under <output>/runs/<regularizer>-<coef>/seed-<seed>"""
    log = logger.bind(experiment=spec.name, regularizer=regularizer.kind, seed=seed)
    try:
        train_data, test_data = prepare_data(spec)
        dims = [train_data.dimension, *spec.hidden_layers, train_data.class_count]
        model = init_model(dims, activation=spec.activation, seed=seed)
        _, report = train(model, train_data, spec.train_config(regularizer, seed), test_data)
        write_report(report, spec.resolved_output_dir() / "runs" / regularizer.slug / f"seed-{seed}")
        last = report.epochs[-1]
        return RunOutcome(
            regularizer=regularizer.kind,
            coefficient=regularizer.coefficient,
            seed=seed,
            status="completed",
            train_accuracy=last.train_accuracy,
            test_accuracy=last.test_accuracy,
            final_lambda2=report.final_lambda2,
            sparsity=report.final_sparsity,
            lambda2_history=[[s.iteration, s.lambda2] for s in report.lambda2_history],
        )
    except (FiedlerNetError, ValueError, ArithmeticError) as e:
        log.error("Run failed", error=str(e))
        return _failed_outcome(regularizer, seed, e)
    except Exception as e:
        log.exception("Run failed unexpectedly", error=str(e))
        return _failed_outcome(regularizer, seed, e)


def _failed_outcome(regularizer: RegularizerSpec, seed: int, error: Exception) -> RunOutcome:
    return RunOutcome(
        regularizer=regularizer.kind,
        coefficient=regularizer.coefficient,
        seed=seed,
        status="failed",
        error=f"{type(error).__name__}: {error}",
    )


@celery_app.task(name="fiedlernet.services.experiment_service.run_single_task")
def run_single_task(spec_json: str, regularizer_index: int, seed: int) -> dict:
    """Background task for one (regularizer, seed) run"""
    spec = ExperimentSpec.model_validate_json(spec_json)
    outcome = execute_run(spec, spec.regularizers[regularizer_index], seed)
    return outcome.model_dump(mode="json")


def summarize(spec: ExperimentSpec, runs: List[RunOutcome]) -> List[SummaryRow]:
    """Median and standard deviation per regularizer, in spec order"""
    rows = []
    for regularizer in spec.regularizers:
        group = [r for r in runs if r.regularizer == regularizer.kind and r.coefficient == regularizer.coefficient]
        done = [r for r in group if r.status == "completed"]
        row = SummaryRow(
            regularizer=regularizer.kind,
            coefficient=regularizer.coefficient,
            runs=len(group),
            failed=len(group) - len(done),
        )
        if done:
            frame = pd.DataFrame([r.model_dump() for r in done])
            for column in ("train_accuracy", "test_accuracy"):
                values = frame[column].dropna().to_numpy(dtype=np.float64)
                if len(values):
                    setattr(row, f"{column}_median", float(np.median(values)))
                    setattr(row, f"{column}_std", float(np.std(values)))
            lambdas = frame["final_lambda2"].dropna().to_numpy(dtype=np.float64)
            if len(lambdas):
                row.final_lambda2_median = float(np.median(lambdas))
            row.sparsity_median = float(np.median(frame["sparsity"].to_numpy(dtype=np.float64)))
        rows.append(row)
    return rows


def _cell(median: Optional[float], std: Optional[float]) -> str:
    if median is None:
        return "n/a"
    return f"{100 * median:.1f} ± {100 * std:.2f}"


def format_table(spec: ExperimentSpec, rows: List[SummaryRow]) -> str:
    """Plain-text accuracy table (percent, median ± std)"""
    header = ("Regularizer", "Training Accuracy", "Test Accuracy")
    body = [
        (
            REGULARIZER_LABELS.get(row.regularizer, row.regularizer),
            _cell(row.train_accuracy_median, row.train_accuracy_std),
            _cell(row.test_accuracy_median, row.test_accuracy_std),
        )
        for row in rows
    ]
    widths = [max(len(line[i]) for line in [header, *body]) for i in range(3)]
    lines = [f"Classification accuracies for {spec.name} (units in percentages)", ""]
    lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    lines.append("  ".join("-" * w for w in widths))
    lines.extend("  ".join(c.ljust(w) for c, w in zip(line, widths)) for line in body)
    return "\n".join(lines) + "\n"


def write_outputs(result: ExperimentResult) -> None:
    out = result.output_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(result.model_dump_json(indent=2, exclude={"output_dir"}))
    frame = pd.DataFrame([r.model_dump(exclude={"lambda2_history"}) for r in result.runs])
    frame.to_csv(out / "results.csv", index=False)
    (out / "table.txt").write_text(format_table(result.spec, result.rows))


def _record_runs(session_factory: Callable, spec: ExperimentSpec, runs: List[RunOutcome]) -> None:
    db = session_factory()
    try:
        for run in runs:
            db.add(
                ExperimentRun(
                    experiment=spec.name,
                    regularizer=run.regularizer,
                    coefficient=run.coefficient,
                    seed=run.seed,
                    status=run.status,
                    train_accuracy=run.train_accuracy,
                    test_accuracy=run.test_accuracy,
                    final_lambda2=run.final_lambda2,
                    sparsity=run.sparsity,
                    lambda2_history=run.lambda2_history,
                    error_message=run.error,
                )
            )
        db.commit()
    except Exception as e:
        logger.error("Failed to record runs in the ledger", experiment=spec.name, error=str(e))
        db.rollback()
        raise
    finally:
        db.close()


def run_experiment(spec: ExperimentSpec, session_factory: Optional[Callable] = None) -> ExperimentResult:
    """Dispatch every (regularizer, seed) run, merge in spec order, write report.json, results.csv, table.txt"""
    spec_json = spec.model_dump_json()
    log = logger.bind(experiment=spec.name)
    log.info("Starting experiment", regularizers=len(spec.regularizers), seeds=len(spec.seeds))

    pending = [
        run_single_task.delay(spec_json, index, seed)
        for index in range(len(spec.regularizers))
        for seed in spec.seeds
    ]
    runs = [RunOutcome.model_validate(result.get()) for result in pending]

    failed = sum(r.status == "failed" for r in runs)
    if failed == len(runs):
        exit_code = EXIT_FATAL
    elif failed:
        exit_code = EXIT_PARTIAL
    else:
        exit_code = EXIT_OK

    result = ExperimentResult(
        spec=spec,
        rows=summarize(spec, runs),
        runs=runs,
        exit_code=exit_code,
        output_dir=spec.resolved_output_dir(),
    )
    write_outputs(result)

    if session_factory is None:
        from fiedlernet.database.database import SessionLocal, init_db

        init_db()
        session_factory = SessionLocal
    _record_runs(session_factory, spec, runs)

    log.info("Experiment finished", runs=len(runs), failed=failed, exit_code=exit_code)
    return result


def preset(name: str, data_dir: Optional[Path] = None, **overrides) -> ExperimentSpec:
    """Benchmark presets: 5 weight layers, standard batch sizes and epoch counts"""
    data_dir = Path(data_dir) if data_dir is not None else Path("data")
    regularizers = default_regularizers()
    if name == "mnist":
        raw = dict(
            dataset=IdxSource(images=data_dir / "train-images-idx3-ubyte", labels=data_dir / "train-labels-idx1-ubyte"),
            test_dataset=IdxSource(images=data_dir / "t10k-images-idx3-ubyte", labels=data_dir / "t10k-labels-idx1-ubyte"),
            hidden_layers=[500] * 4,
            batch_size=100,
            epochs=10,
        )
    elif name == "mnist-desk":
        raw = dict(
            dataset=IdxSource(
                images=data_dir / "train-images-idx3-ubyte", labels=data_dir / "train-labels-idx1-ubyte", limit=10000
            ),
            test_dataset=IdxSource(images=data_dir / "t10k-images-idx3-ubyte", labels=data_dir / "t10k-labels-idx1-ubyte"),
            hidden_layers=[128, 128],
            batch_size=100,
            epochs=5,
            seeds=[0, 1, 2],
        )
    elif name == "cifar10":
        raw = dict(
            dataset=Cifar10Source(batches=[data_dir / f"data_batch_{i}.bin" for i in range(1, 6)]),
            test_dataset=Cifar10Source(batches=[data_dir / "test_batch.bin"]),
            hidden_layers=[500] * 4,
            batch_size=100,
            epochs=10,
        )
    elif name == "tcga":
        raw = dict(
            dataset=CsvSource(path=data_dir / "tcga.csv", label_column="Class"),
            train_fraction=0.75,
            hidden_layers=[50] * 4,
            batch_size=10,
            epochs=5,
        )
    elif name == "two-gaussians":
        raw = dict(
            dataset=SyntheticSource(d=20, n=500, mu=1.5, seed=0),
            hidden_layers=[32, 32],
            batch_size=100,
            epochs=30,
            regularizers=[RegularizerSpec(kind="none"), RegularizerSpec(kind="fiedler", coefficient=0.01)],
        )
    else:
        raise ValueError(f"unknown preset: {name!r}")
    raw.setdefault("regularizers", regularizers)
    if name in ("mnist", "mnist-desk", "cifar10"):
        raw["normalization"] = "none"
    raw.update(name=name, **overrides)
    return ExperimentSpec.model_validate(raw)


PRESETS = ("mnist", "mnist-desk", "cifar10", "tcga", "two-gaussians")


def load_spec(path: Path, **overrides) -> ExperimentSpec:
    """Experiment spec from a JSON config file, with field overrides"""
    raw: Dict = json.loads(Path(path).read_text())
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentSpec.model_validate(raw)
