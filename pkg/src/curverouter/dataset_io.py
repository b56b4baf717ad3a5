"""Dataset files: loading with validation, and canonical serialization.

A dataset directory holds four files:

    pool.json      array of {model_id, display_name, input_price_per_1m,
                   output_price_per_1m}
    grid.json      {anchors: [int...], default_cap: int}
    queries.jsonl  one object per line: {query_id, embedding, raw_text?,
                   source_tag?}
    samples.jsonl  one object per line: {query_id, model_id, budget,
                   is_default, quality, actual_output_tokens, input_tokens}

Canonical form: UTF-8, LF line endings, keys in the order above, floats
rendered with at most 9 significant digits. Writing is deterministic, so
save(load(dir)) reproduces the bytes of a canonically written directory.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np

from .core import (
    BudgetGrid,
    Dataset,
    ModelSpec,
    ParseError,
    Query,
    ResponseSample,
    SchemaError,
)

POOL_FILE = "pool.json"
GRID_FILE = "grid.json"
QUERIES_FILE = "queries.jsonl"
SAMPLES_FILE = "samples.jsonl"


def format_float(x: float) -> str:
    """Render a float with at most 9 significant digits (canonical form)."""
    x = float(x)
    if x == 0.0:
        return "0"  # normalizes -0.0
    return format(x, ".9g")


def _require(obj: dict, key: str, where: str) -> Any:
    if key not in obj:
        raise SchemaError(f"{where}: missing field {key!r}")
    return obj[key]


def _as_number(value: Any, key: str, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"{where}: field {key!r} must be a number, got {value!r}")
    return float(value)


def _as_int(value: Any, key: str, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(f"{where}: field {key!r} must be an integer, got {value!r}")
    return value


def _read_json(path: Path) -> Any:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ParseError(f"{path}: {e}") from e
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: malformed JSON: {e}") from e


def _iter_jsonl(path: Path):
    try:
        with path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    yield lineno, json.loads(line)
                except json.JSONDecodeError as e:
                    raise ParseError(f"{path}:{lineno}: malformed line: {e}") from e
    except OSError as e:
        raise ParseError(f"{path}: {e}") from e


def load_pool(path: Path) -> tuple[ModelSpec, ...]:
    raw = _read_json(path)
    if not isinstance(raw, list):
        raise SchemaError(f"{path}: expected a JSON array of models")
    pool = []
    for i, entry in enumerate(raw):
        where = f"{path}[{i}]"
        pool.append(
            ModelSpec(
                model_id=str(_require(entry, "model_id", where)),
                display_name=str(entry.get("display_name", "")),
                input_price=_as_number(_require(entry, "input_price_per_1m", where), "input_price_per_1m", where),
                output_price=_as_number(_require(entry, "output_price_per_1m", where), "output_price_per_1m", where),
            )
        )
    return tuple(pool)


def load_grid(path: Path) -> BudgetGrid:
    raw = _read_json(path)
    if not isinstance(raw, dict):
        raise SchemaError(f"{path}: expected a JSON object")
    anchors = _require(raw, "anchors", str(path))
    if not isinstance(anchors, list) or not all(isinstance(a, int) and not isinstance(a, bool) for a in anchors):
        raise SchemaError(f"{path}: anchors must be a list of integers")
    return BudgetGrid(anchors=tuple(anchors), default_cap=_as_int(_require(raw, "default_cap", str(path)), "default_cap", str(path)))


def load_dataset(path: str | Path, strict_coverage: bool = True) -> Dataset:
    """Load a dataset directory; validate invariants.

    With ``strict_coverage`` every (query, model, level) triple must have a
    sample; missing triples raise :class:`CoverageError` listing the keys.
    """
    root = Path(path)
    if not root.is_dir():
        raise ParseError(f"{root}: not a dataset directory")

    pool = load_pool(root / POOL_FILE)
    grid = load_grid(root / GRID_FILE)

    queries = []
    embedding_dim: int | None = None
    qpath = root / QUERIES_FILE
    for lineno, obj in _iter_jsonl(qpath):
        where = f"{qpath}:{lineno}"
        emb = _require(obj, "embedding", where)
        if not isinstance(emb, list) or not emb:
            raise SchemaError(f"{where}: embedding must be a nonempty array")
        vec = np.asarray([_as_number(v, "embedding", where) for v in emb], dtype=np.float64)
        if embedding_dim is None:
            embedding_dim = vec.shape[0]
        elif vec.shape[0] != embedding_dim:
            raise SchemaError(
                f"{where}: dimension mismatch, expected {embedding_dim} components, got {vec.shape[0]}"
            )
        queries.append(
            Query(
                query_id=str(_require(obj, "query_id", where)),
                embedding=vec,
                raw_text=obj.get("raw_text"),
                source_tag=obj.get("source_tag"),
            )
        )

    samples = []
    spath = root / SAMPLES_FILE
    for lineno, obj in _iter_jsonl(spath):
        where = f"{spath}:{lineno}"
        try:
            samples.append(
                ResponseSample(
                    query_id=str(_require(obj, "query_id", where)),
                    model_id=str(_require(obj, "model_id", where)),
                    budget=_as_int(_require(obj, "budget", where), "budget", where),
                    is_default=bool(_require(obj, "is_default", where)),
                    quality=_as_number(_require(obj, "quality", where), "quality", where),
                    actual_output_tokens=_as_int(
                        _require(obj, "actual_output_tokens", where), "actual_output_tokens", where
                    ),
                    input_tokens=_as_int(_require(obj, "input_tokens", where), "input_tokens", where),
                )
            )
        except SchemaError as e:
            raise SchemaError(f"{where}: {e}") from e

    if embedding_dim is None:
        raise SchemaError(f"{qpath}: no queries")
    ds = Dataset(pool=pool, grid=grid, queries=tuple(queries), samples=tuple(samples), embedding_dim=embedding_dim)
    if strict_coverage:
        ds.require_complete()
    return ds


def _pool_json(pool: tuple[ModelSpec, ...]) -> str:
    rows = []
    for m in pool:
        rows.append(
            "  {"
            + f'"model_id": {json.dumps(m.model_id)}, '
            + f'"display_name": {json.dumps(m.display_name)}, '
            + f'"input_price_per_1m": {format_float(m.input_price)}, '
            + f'"output_price_per_1m": {format_float(m.output_price)}'
            + "}"
        )
    return "[\n" + ",\n".join(rows) + "\n]\n"


def _grid_json(grid: BudgetGrid) -> str:
    anchors = ", ".join(str(a) for a in grid.anchors)
    return f'{{"anchors": [{anchors}], "default_cap": {grid.default_cap}}}\n'


def _query_line(q: Query) -> str:
    emb = ", ".join(format_float(v) for v in q.embedding)
    parts = [f'"query_id": {json.dumps(q.query_id)}', f'"embedding": [{emb}]']
    if q.raw_text is not None:
        parts.append(f'"raw_text": {json.dumps(q.raw_text)}')
    if q.source_tag is not None:
        parts.append(f'"source_tag": {json.dumps(q.source_tag)}')
    return "{" + ", ".join(parts) + "}"


def _sample_line(s: ResponseSample) -> str:
    return (
        "{"
        + f'"query_id": {json.dumps(s.query_id)}, '
        + f'"model_id": {json.dumps(s.model_id)}, '
        + f'"budget": {s.budget}, '
        + f'"is_default": {"true" if s.is_default else "false"}, '
        + f'"quality": {format_float(s.quality)}, '
        + f'"actual_output_tokens": {s.actual_output_tokens}, '
        + f'"input_tokens": {s.input_tokens}'
        + "}"
    )


def save_dataset(d: Dataset, path: str | Path) -> None:
    """Write ``d`` to a directory in canonical form (deterministic bytes)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    (root / POOL_FILE).write_text(_pool_json(d.pool), encoding="utf-8", newline="\n")
    (root / GRID_FILE).write_text(_grid_json(d.grid), encoding="utf-8", newline="\n")
    (root / QUERIES_FILE).write_text(
        "".join(_query_line(q) + "\n" for q in d.queries), encoding="utf-8", newline="\n"
    )
    (root / SAMPLES_FILE).write_text(
        "".join(_sample_line(s) + "\n" for s in d.samples), encoding="utf-8", newline="\n"
    )
