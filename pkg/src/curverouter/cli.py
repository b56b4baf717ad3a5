"""Command line: gen, train, route, sweep, eval, serve.

Every subcommand is a thin client of the library; deterministic for fixed
seeds. A JSON config file can supply defaults for any option, and explicit
flags win over the config. Exit codes: 0 success, 2 input error, 3 data or
coverage error, 4 training divergence.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from .core import CoverageError, DatasetError
from .dataset_io import load_dataset, save_dataset
from .evaluation import (
    build_report,
    default_lambda_grid,
    oracle_curve,
    oracle_point,
    router_strategy,
    sweep,
    write_report,
)
from .predictors import (
    EmptyCellError,
    TrainConfig,
    TrainingDivergedError,
    load_checkpoint,
    save_checkpoint,
    train_mlp_bank,
)
from .routing import NoFeasibleBudgetError, RoutingMode, RoutingPolicy, route
from .synth import generate, load_scenario

EXIT_INPUT = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4

ROUTER_METHODS = {"curve": RoutingMode.CONTINUOUS, "discrete": RoutingMode.DISCRETE, "reactive": RoutingMode.REACTIVE}
ORACLE_METHODS = {"oracle_point": oracle_point, "oracle_curve": oracle_curve}
ALL_METHODS = ["curve", "reactive", "oracle_point", "oracle_curve"]


def _fail(message: str, code: int) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        _fail(f"config not found: {p}", EXIT_INPUT)
    try:
        cfg = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        _fail(f"{p}: malformed JSON: {e}", EXIT_INPUT)
    if not isinstance(cfg, dict):
        _fail(f"{p}: config must be a JSON object", EXIT_INPUT)
    return cfg


def _resolve(flag, config: dict, key: str, default=None):
    if flag is not None:
        return flag
    return config.get(key, default)


@click.group()
def main() -> None:
    """Budget-aware model routing over quality-cost curves."""


@main.command()
@click.argument("scenario_path", type=click.Path())
@click.argument("out_dir", type=click.Path())
def gen(scenario_path: str, out_dir: str) -> None:
    """Generate a synthetic dataset from SCENARIO_PATH into OUT_DIR."""
    p = Path(scenario_path)
    if not p.exists():
        _fail(f"scenario not found: {p}", EXIT_INPUT)
    try:
        scenario = load_scenario(p)
        dataset = generate(scenario)
        save_dataset(dataset, out_dir)
    except (DatasetError, ValueError, KeyError) as e:
        _fail(str(e), EXIT_INPUT)
    click.echo(f"wrote {len(dataset.samples)} samples for {len(dataset.queries)} queries to {out_dir}")


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None, help="JSON config with defaults.")
@click.option("--data", "data_dir", type=click.Path(), default=None, help="Dataset directory.")
@click.option("--out", "out_path", type=click.Path(), default=None, help="Checkpoint output path.")
@click.option("--epochs", type=int, default=None)
@click.option("--learning-rate", type=float, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--seed", type=int, default=None)
def train(config_path, data_dir, out_path, epochs, learning_rate, batch_size, seed) -> None:
    """Train the quality-head bank on a dataset and write a checkpoint."""
    config = _load_config(config_path)
    data_dir = _resolve(data_dir, config, "data_dir")
    out_path = _resolve(out_path, config, "checkpoint")
    if data_dir is None or out_path is None:
        _fail("--data and --out are required (directly or via --config)", EXIT_INPUT)
    cfg = TrainConfig(
        epochs=_resolve(epochs, config, "epochs", 100),
        learning_rate=_resolve(learning_rate, config, "learning_rate", 1e-4),
        batch_size=_resolve(batch_size, config, "batch_size", 256),
        seed=_resolve(seed, config, "seed", 0),
    )
    try:
        dataset = load_dataset(data_dir, strict_coverage=False)
    except CoverageError as e:
        _fail(str(e), EXIT_DATA)
    except DatasetError as e:
        _fail(str(e), EXIT_INPUT)
    try:
        model = train_mlp_bank(dataset, cfg)
    except EmptyCellError as e:
        _fail(str(e), EXIT_DATA)
    except TrainingDivergedError as e:
        _fail(str(e), EXIT_DIVERGED)
    save_checkpoint(model, out_path)
    click.echo(f"checkpoint written to {out_path}")
    for cell, mse in model.training_meta["final_train_mse"].items():
        click.echo(f"  {cell}: final train MSE {mse:.6f}")


def _parse_embedding(text: str) -> np.ndarray:
    try:
        return np.asarray([float(v) for v in text.replace(",", " ").split()], dtype=np.float64)
    except ValueError:
        _fail("embedding must be a comma- or space-separated list of numbers", EXIT_INPUT)


def _iter_route_inputs(embedding, query_file):
    if (embedding is None) == (query_file is None):
        _fail("provide exactly one of --embedding or --query-file", EXIT_INPUT)
    if embedding is not None:
        yield "", _parse_embedding(embedding)
        return
    p = Path(query_file)
    if not p.exists():
        _fail(f"query file not found: {p}", EXIT_INPUT)
    with p.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                yield str(obj.get("query_id", f"line{lineno}")), np.asarray(obj["embedding"], dtype=np.float64)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                _fail(f"{p}:{lineno}: bad query line: {e}", EXIT_INPUT)


@main.command("route")
@click.option("--checkpoint", "checkpoint_path", type=click.Path(), required=True)
@click.option("--embedding", default=None, help="Inline embedding, comma- or space-separated.")
@click.option("--query-file", type=click.Path(), default=None, help="queries.jsonl to route, one decision per line.")
@click.option("--lambda", "lam", type=float, required=True, help="Cost sensitivity in [0,1].")
@click.option("--budget-limit", type=int, default=None)
@click.option("--mode", type=click.Choice([m.value for m in RoutingMode]), default=RoutingMode.DISCRETE.value)
def route_cmd(checkpoint_path, embedding, query_file, lam, budget_limit, mode) -> None:
    """Route queries against a checkpoint; prints decision JSON per query."""
    if not Path(checkpoint_path).exists():
        _fail(f"checkpoint not found: {checkpoint_path}", EXIT_INPUT)
    model = load_checkpoint(checkpoint_path)
    limit = budget_limit if budget_limit is not None else max(model.levels)
    try:
        policy = RoutingPolicy(lam=lam, budget_limit=limit, mode=RoutingMode(mode))
    except ValueError as e:
        _fail(str(e), EXIT_INPUT)
    for query_id, emb in _iter_route_inputs(embedding, query_file):
        if emb.shape[0] != model.embedding_dim:
            _fail(
                f"dimension mismatch: checkpoint expects {model.embedding_dim} components, got {emb.shape[0]}",
                EXIT_INPUT,
            )
        try:
            decision = route(model, emb, policy)
        except NoFeasibleBudgetError as e:
            _fail(str(e), EXIT_DATA)
        click.echo(json.dumps(decision.record(query_id=query_id)))


def _run_eval(checkpoint_path, data_dir, out_dir, methods, lambda_points, budget_limit, config_path) -> None:
    config = _load_config(config_path)
    checkpoint_path = _resolve(checkpoint_path, config, "checkpoint")
    data_dir = _resolve(data_dir, config, "data_dir")
    out_dir = _resolve(out_dir, config, "out_dir")
    if data_dir is None or out_dir is None:
        _fail("--data and --out are required (directly or via --config)", EXIT_INPUT)
    methods = list(methods) or list(config.get("methods", ALL_METHODS))
    unknown = [m for m in methods if m not in ROUTER_METHODS and m not in ORACLE_METHODS]
    if unknown:
        _fail(f"unknown methods: {unknown}", EXIT_INPUT)
    lambda_points = _resolve(lambda_points, config, "lambda_points", 64)

    try:
        test = load_dataset(data_dir, strict_coverage=True)
    except CoverageError as e:
        _fail(str(e), EXIT_DATA)
    except DatasetError as e:
        _fail(str(e), EXIT_INPUT)

    needs_model = any(m in ROUTER_METHODS for m in methods)
    model = None
    if needs_model:
        if checkpoint_path is None or not Path(checkpoint_path).exists():
            _fail(f"checkpoint not found: {checkpoint_path}", EXIT_INPUT)
        model = load_checkpoint(checkpoint_path)

    grid = default_lambda_grid(lambda_points)
    limit = budget_limit if budget_limit is not None else (max(model.levels) if model else max(test.grid.levels))
    curves = {}
    try:
        for name in methods:
            if name in ORACLE_METHODS:
                curves[name] = ORACLE_METHODS[name](test, grid)
            else:
                strategy = router_strategy(model, ROUTER_METHODS[name], limit)
                curves[name] = sweep(strategy, test, grid)
    except (CoverageError, KeyError) as e:
        _fail(str(e), EXIT_DATA)
    report = build_report(curves, test, grid)
    written = write_report(report, out_dir)
    for path in written:
        click.echo(f"wrote {path}")
    for name, curve in report.methods.items():
        click.echo(f"{name}: audc={curve.audc:.4f} qnc={curve.qnc} peak={curve.peak_quality:.4f}")


@main.command("eval")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--checkpoint", "checkpoint_path", type=click.Path(), default=None)
@click.option("--data", "data_dir", type=click.Path(), default=None)
@click.option("--out", "out_dir", type=click.Path(), default=None)
@click.option("--method", "methods", multiple=True,
              type=click.Choice(sorted(list(ROUTER_METHODS) + list(ORACLE_METHODS))))
@click.option("--lambda-points", type=int, default=None)
@click.option("--budget-limit", type=int, default=None)
def eval_cmd(config_path, checkpoint_path, data_dir, out_dir, methods, lambda_points, budget_limit) -> None:
    """Evaluate methods on a dataset; writes report.json and curve CSVs."""
    _run_eval(checkpoint_path, data_dir, out_dir, methods, lambda_points, budget_limit, config_path)


@main.command("sweep")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--checkpoint", "checkpoint_path", type=click.Path(), default=None)
@click.option("--data", "data_dir", type=click.Path(), default=None)
@click.option("--out", "out_dir", type=click.Path(), default=None)
@click.option("--method", "method",
              type=click.Choice(sorted(list(ROUTER_METHODS) + list(ORACLE_METHODS))), default="curve")
@click.option("--lambda-points", type=int, default=None)
@click.option("--budget-limit", type=int, default=None)
def sweep_cmd(config_path, checkpoint_path, data_dir, out_dir, method, lambda_points, budget_limit) -> None:
    """Trace one method's deferral curve (eval restricted to one method)."""
    _run_eval(checkpoint_path, data_dir, out_dir, (method,), lambda_points, budget_limit, config_path)


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--checkpoint", "checkpoint_path", type=click.Path(), default=None)
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
def serve(config_path, checkpoint_path, host, port) -> None:
    """Serve /route and /health over HTTP against a loaded checkpoint."""
    import uvicorn

    from .service import create_app

    config = _load_config(config_path)
    checkpoint_path = _resolve(checkpoint_path, config, "checkpoint")
    host = _resolve(host, config, "host", "127.0.0.1")
    port = _resolve(port, config, "port", 8000)
    if not (1 <= port <= 65535):
        _fail(f"port must lie in [1, 65535], got {port}", EXIT_INPUT)
    if checkpoint_path is None or not Path(checkpoint_path).exists():
        _fail(f"checkpoint not found: {checkpoint_path}", EXIT_INPUT)
    app = create_app(load_checkpoint(checkpoint_path))
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
