"""Minibatch SGD with momentum and the periodically refreshed Fiedler penalty."""
import hashlib
import json
import time
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

import numpy as np
import pandas as pd
import structlog
from pydantic import BaseModel, Field, model_validator

from fiedlernet.core.errors import DivergenceError, SolverError
from fiedlernet.core.graph import LaplacianMatrix, LaplacianTracker, restrict_to_largest_component
from fiedlernet.core.spectral import DISCONNECT_TOL, fiedler_pair, test_vector_bound, weyl_change_bound
from fiedlernet.services.network import Batch, MlpModel, evaluate, loss_and_grad, sparsity
from fiedlernet.services.regularization import PenaltyState, baseline_penalty, fiedler_penalty

logger = structlog.get_logger()

PenaltyKind = Literal["none", "fiedler", "fiedler_exact", "l1", "weight_decay", "dropout"]
WEYL_SLACK = 1e-9


class TrainConfig(BaseModel):
    learning_rate: float = Field(0.001, gt=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    batch_size: int = Field(100, ge=1)
    epochs: int = Field(10, ge=1)
    penalty: PenaltyKind = "none"
    # delta for fiedler, lambda for l1/weight_decay, p for dropout
    coefficient: float = Field(0.0, ge=0)
    refresh_period: int = Field(100, ge=1)
    seed: int = 0
    dataset_id: str = "unknown"
    include_biases: bool = False
    track_connectivity: bool = True
    weyl_diagnostics: bool = False
    disconnect_tol: float = Field(DISCONNECT_TOL, gt=0)

    @model_validator(mode="after")
    def _check_dropout(self):
        if self.penalty == "dropout" and self.coefficient >= 1:
            raise ValueError("dropout probability must be < 1")
        return self

    @property
    def uses_fiedler(self) -> bool:
        return self.penalty in ("fiedler", "fiedler_exact")


class EpochMetrics(BaseModel):
    epoch: int
    iterations: int
    train_loss: float
    train_accuracy: float
    test_loss: Optional[float] = None
    test_accuracy: Optional[float] = None
    penalty: float = 0.0


class Lambda2Sample(BaseModel):
    iteration: int
    epoch: int
    lambda2: float
    disconnected: bool
    kept_vertices: int
    # u^T L u with the test vector in use just before the refresh
    test_vector_value: Optional[float] = None


class TrainReport(BaseModel):
    config: TrainConfig
    epochs: List[EpochMetrics] = Field(default_factory=list)
    lambda2_history: List[Lambda2Sample] = Field(default_factory=list)
    iterations: int = 0
    refreshes: int = 0
    final_sparsity: Optional[float] = None
    final_lambda2: Optional[float] = None
    edges_visited: int = 0
    weyl_checks: int = 0
    weyl_violations: int = 0
    diverged: bool = False
    wall_clock_seconds: float = 0.0


def refresh_test_vector(
    state: PenaltyState,
    lap: LaplacianMatrix,
    iteration: Optional[int] = None,
    disconnect_tol: float = DISCONNECT_TOL,
) -> PenaltyState:
    """Set u to the current Fiedler vector; on a disconnected graph solve on the largest component"""
    try:
        pair = fiedler_pair(lap, v0=state.u, disconnect_tol=disconnect_tol, allow_disconnected=True)
        state.last_lambda2 = pair.lambda2
        state.last_disconnected = pair.lambda2 < disconnect_tol
        state.kept_vertices = lap.n
        if not state.last_disconnected:
            state.set_test_vector(pair.v2)
            return state

        sub, kept = restrict_to_largest_component(lap)
        state.kept_vertices = len(kept)
        if len(kept) == lap.n:
            # connected, only weakly
            state.set_test_vector(pair.v2)
            return state
        if len(kept) < 2:
            logger.warning("No component with two vertices; keeping previous test vector", iteration=iteration)
            return state

        sub_pair = fiedler_pair(sub, v0=state.u[kept], allow_disconnected=True)
        u = np.zeros(lap.n)
        u[kept] = sub_pair.v2
        u /= np.linalg.norm(u)
        state.set_test_vector(u, project=False)
        logger.warning(
            "Graph disconnected at refresh; solved on largest component",
            iteration=iteration,
            kept=len(kept),
            dropped=lap.n - len(kept),
        )
        return state
    except SolverError as e:
        logger.error("Eigensolver failed during refresh", iteration=iteration, error=str(e))
        if e.iteration is not None:
            raise
        raise SolverError(str(e), iteration=iteration) from e


def _add_into(target: List[np.ndarray], extra: Optional[List[np.ndarray]]) -> None:
    if extra is None or target is None:
        return
    for g, e in zip(target, extra):
        g += e


def train(model: MlpModel, data, config: TrainConfig, test_data=None) -> Tuple[MlpModel, TrainReport]:
    """Training loop: gradient step, Laplacian update, counter, refresh every T iterations.

    `data` and `test_data` are datasets exposing `features` and `labels`.
    The input model is not modified.
    """
    features = np.asarray(data.features, dtype=np.float64)
    labels = np.asarray(data.labels, dtype=np.int64)
    n_samples = len(labels)
    if n_samples == 0:
        raise ValueError("training data is empty")

    started = time.perf_counter()
    model = model.copy()
    report = TrainReport(config=config)
    shuffle_rng = np.random.default_rng(config.seed)
    dropout_rng = np.random.default_rng([config.seed, 1])
    dropout_p = config.coefficient if config.penalty == "dropout" else 0.0
    include_biases = config.include_biases and model.biases is not None

    tracker, state = None, None
    if config.uses_fiedler or config.track_connectivity:
        tracker = LaplacianTracker(model, include_biases=include_biases)
        n = tracker.n
        state = PenaltyState(
            u=np.linspace(-1.0, 1.0, n),
            layer_dims=model.layer_dims,
            period=config.refresh_period,
            delta=config.coefficient if config.uses_fiedler else 0.0,
            mode="exact" if config.penalty == "fiedler_exact" else "variational",
            include_biases=include_biases,
        )
        refresh_test_vector(state, tracker.laplacian(), iteration=0, disconnect_tol=config.disconnect_tol)
        tracker.mark_refresh()
        report.lambda2_history.append(_sample(state, iteration=0, epoch=0))

    vel_w = [np.zeros_like(W) for W in model.weights]
    vel_b = None if model.biases is None else [np.zeros_like(b) for b in model.biases]

    log = logger.bind(dataset=config.dataset_id, penalty=config.penalty, seed=config.seed)
    log.info("Starting training", layer_dims=list(model.layer_dims), samples=n_samples, epochs=config.epochs)

    iteration = 0
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n_samples)
        epoch_penalty = 0.0
        for start in range(0, n_samples, config.batch_size):
            idx = order[start:start + config.batch_size]
            batch = Batch(features[idx], labels[idx])
            loss, grads = loss_and_grad(model, batch, dropout_p=dropout_p, rng=dropout_rng)

            penalty_value = 0.0
            if config.coefficient > 0 and config.uses_fiedler:
                result = fiedler_penalty(model, state)
                _add_into(grads.weights, result.weight_grads)
                _add_into(grads.biases, result.bias_grads)
                penalty_value = result.value
                report.edges_visited = result.edges_visited
            elif config.coefficient > 0 and config.penalty in ("l1", "weight_decay"):
                result = baseline_penalty(model, config.penalty, config.coefficient)
                _add_into(grads.weights, result.weight_grads)
                penalty_value = result.value
                report.edges_visited = result.edges_visited

            objective = loss + penalty_value
            if not np.isfinite(objective):
                report.diverged = True
                report.iterations = iteration
                report.wall_clock_seconds = time.perf_counter() - started
                log.error("Training diverged", iteration=iteration, objective=objective)
                raise DivergenceError(iteration, objective, report=report)

            for l, g in enumerate(grads.weights):
                vel_w[l] = config.momentum * vel_w[l] + g
                model.weights[l] -= config.learning_rate * vel_w[l]
            if vel_b is not None:
                for l, g in enumerate(grads.biases):
                    vel_b[l] = config.momentum * vel_b[l] + g
                    model.biases[l] -= config.learning_rate * vel_b[l]
            iteration += 1
            epoch_penalty = penalty_value

            if not all(np.all(np.isfinite(W)) for W in model.weights):
                report.diverged = True
                report.iterations = iteration
                log.error("Weights became non-finite", iteration=iteration)
                raise DivergenceError(iteration, float("nan"), report=report)

            if tracker is not None:
                tracker.update(model)
                state.counter += 1
                if state.counter % state.period == 0:
                    _refresh(tracker, state, report, config, iteration, epoch)

        train_loss, train_acc = evaluate(model, features, labels)
        metrics = EpochMetrics(
            epoch=epoch,
            iterations=iteration,
            train_loss=train_loss,
            train_accuracy=train_acc,
            penalty=epoch_penalty,
        )
        if test_data is not None:
            metrics.test_loss, metrics.test_accuracy = evaluate(model, test_data.features, test_data.labels)
        report.epochs.append(metrics)
        log.info(
            "Epoch finished",
            epoch=epoch,
            train_accuracy=round(train_acc, 4),
            test_accuracy=None if metrics.test_accuracy is None else round(metrics.test_accuracy, 4),
            lambda2=None if state is None else state.last_lambda2,
        )

    report.iterations = iteration
    report.refreshes = 0 if state is None else state.refreshes
    report.final_sparsity = sparsity(model)
    if tracker is not None:
        _final_sample(tracker, state, report, config, iteration, config.epochs)
    report.final_lambda2 = None if state is None else state.last_lambda2
    report.wall_clock_seconds = time.perf_counter() - started
    if report.weyl_violations:
        log.warning("Weyl bound violated between refreshes", violations=report.weyl_violations)
    log.info("Training finished", iterations=iteration, refreshes=report.refreshes, sparsity=report.final_sparsity)
    return model, report


def _sample(state: PenaltyState, iteration: int, epoch: int, test_vector_value: Optional[float] = None) -> Lambda2Sample:
    return Lambda2Sample(
        iteration=iteration,
        epoch=epoch,
        lambda2=float(state.last_lambda2),
        disconnected=state.last_disconnected,
        kept_vertices=int(state.kept_vertices),
        test_vector_value=test_vector_value,
    )


def _refresh(tracker: LaplacianTracker, state: PenaltyState, report: TrainReport, config: TrainConfig, iteration: int, epoch: int):
    lap = tracker.laplacian()
    stale = test_vector_bound(lap, state.u)
    previous = state.last_lambda2
    change = tracker.change_since_refresh() if config.weyl_diagnostics else None

    refresh_test_vector(state, lap, iteration=iteration, disconnect_tol=config.disconnect_tol)
    state.refreshes += 1

    if change is not None and previous is not None:
        report.weyl_checks += 1
        bound = weyl_change_bound(change)
        if abs(state.last_lambda2 - previous) > bound + WEYL_SLACK:
            report.weyl_violations += 1
            logger.warning(
                "Weyl diagnostic violated",
                iteration=iteration,
                change=abs(state.last_lambda2 - previous),
                bound=bound,
            )
    tracker.mark_refresh()
    report.lambda2_history.append(_sample(state, iteration, epoch, test_vector_value=stale))
    logger.debug("Refreshed test vector", iteration=iteration, lambda2=state.last_lambda2, bound=stale)


def _final_sample(tracker: LaplacianTracker, state: PenaltyState, report: TrainReport, config: TrainConfig, iteration: int, epoch: int):
    """lambda2 of the returned model, appended unless the last refresh already sampled it"""
    if report.lambda2_history and report.lambda2_history[-1].iteration == iteration:
        return
    lap = tracker.laplacian()
    pair = fiedler_pair(lap, v0=state.u, disconnect_tol=config.disconnect_tol, allow_disconnected=True)
    state.last_lambda2 = pair.lambda2
    state.last_disconnected = pair.lambda2 < config.disconnect_tol
    state.kept_vertices = lap.n
    report.lambda2_history.append(_sample(state, iteration, epoch, test_vector_value=test_vector_bound(lap, state.u)))


def write_report(report: TrainReport, directory: Union[str, Path]) -> Path:
    """report.json (deterministic content), metrics.csv and timings.json"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    body = report.model_dump_json(indent=2, exclude={"wall_clock_seconds"})
    (directory / "report.json").write_text(body)

    frame = pd.DataFrame([m.model_dump() for m in report.epochs])
    frame.to_csv(directory / "metrics.csv", index=False)

    timings = {
        "wall_clock_seconds": report.wall_clock_seconds,
        "report_sha256": hashlib.sha256(body.encode()).hexdigest(),
    }
    (directory / "timings.json").write_text(json.dumps(timings, indent=2))
    logger.info("Wrote training report", directory=str(directory))
    return directory / "report.json"
