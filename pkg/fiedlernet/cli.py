"""Command line: train, bounds, experiment, inspect-graph, serve.

Exit codes: 0 ok, 1 partial failure, 2 fatal (invalid config or every run failed).
"""
import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
import structlog
from pydantic import ValidationError

from fiedlernet.config import settings
from fiedlernet.core.errors import DivergenceError, FiedlerNetError
from fiedlernet.core.graph import build_graph, export_edge_list, import_edge_list, laplacian
from fiedlernet.core.log import configure_logging
from fiedlernet.core.spectral import fiedler_pair
from fiedlernet.services import experiment_service
from fiedlernet.services.bounds import BoundInputs, bound_report, generalization_bound, network_rademacher_bound
from fiedlernet.services.inspection import inspect_graph
from fiedlernet.services.network import init_model, load_checkpoint, save_checkpoint
from fiedlernet.services.trainer import TrainConfig, train, write_report

logger = structlog.get_logger()

EXIT_OK, EXIT_PARTIAL, EXIT_FATAL = experiment_service.EXIT_OK, experiment_service.EXIT_PARTIAL, experiment_service.EXIT_FATAL


def _emit(payload, output: Optional[Path] = None) -> None:
    text = json.dumps(payload, indent=2, default=str)
    if output is not None:
        output.parent.mkdir(parents=True, exist_ok=True)
        output.write_text(text + "\n")
    sys.stdout.write(text + "\n")


def _finite_or_none(value: float):
    return value if np.isfinite(value) else None


def _load_spec(args) -> experiment_service.ExperimentSpec:
    overrides = {
        "epochs": args.epochs,
        "batch_size": getattr(args, "batch_size", None),
        "output_dir": str(args.output) if args.output else None,
    }
    if getattr(args, "seeds", None):
        overrides["seeds"] = args.seeds
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if args.config:
        return experiment_service.load_spec(args.config, **overrides)
    return experiment_service.preset(args.preset or "two-gaussians", data_dir=args.data_dir, **overrides)


def cmd_train(args) -> int:
    spec = _load_spec(args)
    regularizer = experiment_service.RegularizerSpec(kind=args.penalty, coefficient=args.coefficient)
    config: TrainConfig = spec.train_config(regularizer, args.seed)
    if args.refresh_period:
        config = TrainConfig.model_validate({**config.model_dump(), "refresh_period": args.refresh_period})

    train_data, test_data = experiment_service.prepare_data(spec)
    dims = [train_data.dimension, *spec.hidden_layers, train_data.class_count]
    model = init_model(dims, activation=spec.activation, seed=args.seed)
    out = Path(args.output) if args.output else Path(settings.output_root) / spec.name / "train" / regularizer.slug
    try:
        model, report = train(model, train_data, config, test_data)
    except DivergenceError as e:
        if e.report is not None:
            write_report(e.report, out)
        logger.error("Training diverged", iteration=e.iteration, output=str(out))
        return EXIT_PARTIAL
    write_report(report, out)
    save_checkpoint(model, out / "model.npz")
    last = report.epochs[-1]
    _emit({
        "output": str(out),
        "train_accuracy": last.train_accuracy,
        "test_accuracy": last.test_accuracy,
        "final_lambda2": report.final_lambda2,
        "sparsity": report.final_sparsity,
        "refreshes": report.refreshes,
    })
    return EXIT_OK


def cmd_bounds(args) -> int:
    if args.inputs:
        inputs = BoundInputs.model_validate_json(Path(args.inputs).read_text())
        rad = network_rademacher_bound(inputs)
        _emit({
            "rademacher": _finite_or_none(rad),
            "generalization": _finite_or_none(generalization_bound(inputs, rad)),
            "unbounded": not np.isfinite(rad),
        }, args.output)
        return EXIT_OK

    if not args.checkpoint:
        raise ValueError("bounds needs --inputs or --checkpoint")
    model = load_checkpoint(args.checkpoint)
    if args.test_vector:
        u = np.load(args.test_vector)
    else:
        u = fiedler_pair(laplacian(build_graph(model)), allow_disconnected=True).v2
    d = args.d if args.d is not None else model.layer_dims[0]
    report = bound_report(model, u, C=args.C, d=d, N=args.N, gamma=args.gamma, confidence=args.confidence)
    payload = report.model_dump()
    for key in ("rademacher", "generalization", "l1_rademacher", "l1_generalization"):
        payload[key] = _finite_or_none(payload[key])
    _emit(payload, args.output)
    return EXIT_OK


def cmd_experiment(args) -> int:
    spec = _load_spec(args)
    result = experiment_service.run_experiment(spec)
    sys.stdout.write(experiment_service.format_table(spec, result.rows))
    return result.exit_code


def cmd_inspect_graph(args) -> int:
    if args.edge_list:
        graph = import_edge_list(Path(args.edge_list).read_text())
    elif args.checkpoint:
        graph = build_graph(load_checkpoint(args.checkpoint), include_biases=args.include_biases)
    elif args.layer_dims:
        graph = build_graph(init_model(args.layer_dims, seed=args.seed), include_biases=args.include_biases)
    else:
        raise ValueError("inspect-graph needs --edge-list, --checkpoint or --layer-dims")
    if args.export_edges:
        Path(args.export_edges).write_text(export_edge_list(graph))
    _emit(inspect_graph(graph).model_dump(), args.output)
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run("fiedlernet.main:app", host=args.host, port=args.port, log_level=settings.log_level.lower())
    return EXIT_OK


def _add_spec_arguments(parser: argparse.ArgumentParser) -> None:
    source = parser.add_mutually_exclusive_group()
    source.add_argument("--config", type=Path, help="experiment spec JSON file")
    source.add_argument("--preset", choices=experiment_service.PRESETS)
    parser.add_argument("--data-dir", type=Path, help="directory holding the preset's dataset files")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--output", type=Path, help=f"output directory (default ${{FIEDLER_OUTPUT_ROOT}}/<name>)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fiedlernet", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default=None)
    parser.add_argument("--json-logs", action="store_true", default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model")
    _add_spec_arguments(p)
    p.add_argument("--penalty", default="fiedler", choices=["none", "fiedler", "fiedler_exact", "l1", "weight_decay", "dropout"])
    p.add_argument("--coefficient", type=float, default=0.01)
    p.add_argument("--refresh-period", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bounds", help="Rademacher and generalization bounds")
    p.add_argument("--inputs", type=Path, help="BoundInputs JSON file")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--test-vector", type=Path, help=".npy test vector (default: the checkpoint's Fiedler vector)")
    p.add_argument("--C", type=float, default=1.0)
    p.add_argument("--d", type=int)
    p.add_argument("--N", type=int, default=60000)
    p.add_argument("--gamma", type=float)
    p.add_argument("--confidence", type=float, default=0.05)
    p.add_argument("--output", type=Path)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("experiment", help="train every (regularizer, seed) pair and tabulate")
    _add_spec_arguments(p)
    p.add_argument("--seeds", type=int, nargs="+")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("inspect-graph", help="connectivity summary of a network graph")
    p.add_argument("--edge-list", type=Path)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--layer-dims", type=int, nargs="+")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--include-biases", action="store_true")
    p.add_argument("--export-edges", type=Path)
    p.add_argument("--output", type=Path)
    p.set_defaults(func=cmd_inspect_graph)

    p = sub.add_parser("serve", help="start the HTTP API")
    p.add_argument("--host", default=settings.api_host)
    p.add_argument("--port", type=int, default=settings.api_port)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(level=args.log_level, json=args.json_logs)
    try:
        return args.func(args)
    except ValidationError as e:
        logger.error("Invalid configuration", errors=str(e))
        return EXIT_FATAL
    except (FiedlerNetError, ValueError, FileNotFoundError) as e:
        logger.error("Command failed", command=args.command, error=str(e))
        return EXIT_FATAL
    except Exception as e:
        logger.exception("Command crashed", command=args.command, error=str(e))
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
