"""Core domain types: model pool, budget grid, queries, recorded samples.

Everything here is immutable after construction and safe to share across
threads. Dollar amounts are plain floats; comparisons elsewhere use an
absolute tolerance of 1e-12 dollars (smallest real magnitudes are ~1e-9).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Judges emit rounded scores; tolerate tiny float excursions outside [0, 1].
QUALITY_TOLERANCE = 1e-9

COST_ABS_TOL = 1e-12


class DatasetError(ValueError):
    """Base class for dataset construction and loading failures."""


class SchemaError(DatasetError):
    """A record is malformed or violates a field invariant."""


class ParseError(DatasetError):
    """A file or line could not be parsed at all."""


class CoverageError(DatasetError):
    """Required (query, model, budget) triples are missing.

    ``missing`` lists the absent triples, capped for readability.
    """

    def __init__(self, missing: list[tuple[str, str, int]]):
        self.missing = missing
        shown = ", ".join(f"({q}, {m}, {b})" for q, m, b in missing[:20])
        more = "" if len(missing) <= 20 else f" ... and {len(missing) - 20} more"
        super().__init__(f"incomplete coverage, missing {len(missing)} samples: {shown}{more}")


class DegenerateSplitError(DatasetError):
    """A requested split would leave one side empty."""


@dataclass(frozen=True)
class ModelSpec:
    """A candidate model with per-token pricing.

    Prices are dollars per one million tokens, matching public price lists.
    """

    model_id: str
    input_price: float
    output_price: float
    display_name: str = ""

    def __post_init__(self) -> None:
        if not self.model_id:
            raise SchemaError("model_id must be a nonempty string")
        if self.input_price < 0 or self.output_price < 0:
            raise SchemaError(f"{self.model_id}: prices must be nonnegative")
        if not self.display_name:
            object.__setattr__(self, "display_name", self.model_id)


@dataclass(frozen=True)
class BudgetGrid:
    """The discrete token budgets (anchors) plus the unconstrained cap.

    The "default" level, where a model answers without a length instruction,
    is stored as the numeric budget ``default_cap`` so the budget axis stays
    totally ordered. ``levels`` is the full ordered axis.
    """

    anchors: tuple[int, ...]
    default_cap: int

    def __post_init__(self) -> None:
        anchors = tuple(int(a) for a in self.anchors)
        object.__setattr__(self, "anchors", anchors)
        object.__setattr__(self, "default_cap", int(self.default_cap))
        if not anchors:
            raise SchemaError("budget grid needs at least one anchor")
        if anchors[0] <= 0 or any(b <= a for a, b in zip(anchors, anchors[1:])):
            raise SchemaError(f"anchors must be strictly increasing positive ints, got {anchors}")
        if self.default_cap <= 0:
            raise SchemaError("default_cap must be positive")

    @property
    def levels(self) -> tuple[int, ...]:
        """All budget levels: anchors united with the default cap, ascending."""
        return tuple(sorted(set(self.anchors) | {self.default_cap}))


@dataclass(frozen=True, eq=False)
class Query:
    """One routed query: an identifier and its precomputed embedding."""

    query_id: str
    embedding: np.ndarray
    raw_text: str | None = None
    source_tag: str | None = None

    def __post_init__(self) -> None:
        emb = np.asarray(self.embedding, dtype=np.float64)
        if emb.ndim != 1 or emb.size == 0:
            raise SchemaError(f"{self.query_id}: embedding must be a nonempty 1-D vector")
        if not np.all(np.isfinite(emb)):
            raise SchemaError(f"{self.query_id}: embedding has non-finite components")
        emb.setflags(write=False)
        object.__setattr__(self, "embedding", emb)
        if not self.query_id:
            raise SchemaError("query_id must be nonempty")


@dataclass(frozen=True)
class ResponseSample:
    """One recorded (query, model, budget) outcome.

    ``budget`` is the instructed token cap, or the grid's ``default_cap``
    when the response was collected without an instruction (``is_default``).
    ``quality`` is the judged score in [0, 1]; token counts are what the
    model actually consumed.
    """

    query_id: str
    model_id: str
    budget: int
    quality: float
    actual_output_tokens: int
    input_tokens: int
    is_default: bool = False

    def __post_init__(self) -> None:
        q = float(self.quality)
        if q < 0.0 or q > 1.0:
            if q < -QUALITY_TOLERANCE or q > 1.0 + QUALITY_TOLERANCE:
                raise SchemaError(
                    f"({self.query_id}, {self.model_id}, {self.budget}): "
                    f"quality out of [0,1]: {q!r}"
                )
            q = min(max(q, 0.0), 1.0)
        object.__setattr__(self, "quality", q)
        object.__setattr__(self, "budget", int(self.budget))
        object.__setattr__(self, "actual_output_tokens", int(self.actual_output_tokens))
        object.__setattr__(self, "input_tokens", int(self.input_tokens))
        if self.budget <= 0:
            raise SchemaError(f"({self.query_id}, {self.model_id}): budget must be positive")
        if self.actual_output_tokens < 0 or self.input_tokens < 0:
            raise SchemaError(f"({self.query_id}, {self.model_id}): token counts must be >= 0")


@dataclass(frozen=True, eq=False)
class Dataset:
    """A pool, a budget grid, queries, and their recorded samples.

    Construction validates referential integrity (every sample points at a
    known query, model, and budget level). Completeness of the
    (query, model, level) cube is checked separately via ``missing_triples``
    / ``require_complete`` because training sets may legitimately be partial.
    """

    pool: tuple[ModelSpec, ...]
    grid: BudgetGrid
    queries: tuple[Query, ...]
    samples: tuple[ResponseSample, ...]
    embedding_dim: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "pool", tuple(self.pool))
        object.__setattr__(self, "queries", tuple(self.queries))
        object.__setattr__(self, "samples", tuple(self.samples))

        if not self.pool:
            raise SchemaError("pool must contain at least one model")
        if not self.queries:
            raise SchemaError("dataset must contain at least one query")
        models = {}
        for m in self.pool:
            if m.model_id in models:
                raise SchemaError(f"duplicate model_id in pool: {m.model_id}")
            models[m.model_id] = m
        queries = {}
        for q in self.queries:
            if q.query_id in queries:
                raise SchemaError(f"duplicate query_id: {q.query_id}")
            if q.embedding.shape[0] != self.embedding_dim:
                raise SchemaError(
                    f"{q.query_id}: dimension mismatch, embedding has "
                    f"{q.embedding.shape[0]} components, dataset declares {self.embedding_dim}"
                )
            queries[q.query_id] = q

        levels = set(self.grid.levels)
        index: dict[tuple[str, str, int], ResponseSample] = {}
        for s in self.samples:
            if s.query_id not in queries:
                raise SchemaError(f"sample references unknown query_id {s.query_id!r}")
            if s.model_id not in models:
                raise SchemaError(f"sample references unknown model_id {s.model_id!r}")
            if s.budget not in levels:
                raise SchemaError(
                    f"({s.query_id}, {s.model_id}): budget {s.budget} not in grid levels {sorted(levels)}"
                )
            if s.is_default != (s.budget == self.grid.default_cap):
                raise SchemaError(
                    f"({s.query_id}, {s.model_id}, {s.budget}): is_default must hold "
                    f"exactly for budget == default_cap ({self.grid.default_cap})"
                )
            key = (s.query_id, s.model_id, s.budget)
            if key in index:
                raise SchemaError(f"duplicate sample for {key}")
            index[key] = s

        object.__setattr__(self, "_models", models)
        object.__setattr__(self, "_queries", queries)
        object.__setattr__(self, "_index", index)

    def model(self, model_id: str) -> ModelSpec:
        return self._models[model_id]

    def query(self, query_id: str) -> Query:
        return self._queries[query_id]

    def sample(self, query_id: str, model_id: str, budget: int) -> ResponseSample:
        return self._index[(query_id, model_id, budget)]

    def has_sample(self, query_id: str, model_id: str, budget: int) -> bool:
        return (query_id, model_id, budget) in self._index

    def missing_triples(self) -> list[tuple[str, str, int]]:
        """All (query, model, level) triples without a recorded sample."""
        missing = []
        for q in self.queries:
            for m in self.pool:
                for b in self.grid.levels:
                    if (q.query_id, m.model_id, b) not in self._index:
                        missing.append((q.query_id, m.model_id, b))
        return missing

    def require_complete(self) -> None:
        missing = self.missing_triples()
        if missing:
            raise CoverageError(missing)

    def restrict_models(self, model_ids: list[str] | tuple[str, ...]) -> "Dataset":
        """A view of this dataset keeping only the given pool models."""
        keep = set(model_ids)
        unknown = keep - set(self._models)
        if unknown:
            raise SchemaError(f"unknown model_ids: {sorted(unknown)}")
        return Dataset(
            pool=tuple(m for m in self.pool if m.model_id in keep),
            grid=self.grid,
            queries=self.queries,
            samples=tuple(s for s in self.samples if s.model_id in keep),
            embedding_dim=self.embedding_dim,
        )

    def restrict_grid(self, grid: BudgetGrid) -> "Dataset":
        """A view keeping only samples whose budget lies on ``grid``."""
        levels = set(grid.levels)
        return Dataset(
            pool=self.pool,
            grid=grid,
            queries=self.queries,
            samples=tuple(s for s in self.samples if s.budget in levels),
            embedding_dim=self.embedding_dim,
        )


def output_cost(m: ModelSpec, tokens: int) -> float:
    """Dollar cost of generating ``tokens`` output tokens with ``m``."""
    if tokens < 0:
        raise ValueError("tokens must be nonnegative")
    return tokens * m.output_price / 1e6

def query_cost(m: ModelSpec, input_tokens: int, output_tokens: int) -> float:
    """Dollar cost of one call: input tokens plus generated output tokens."""
    if input_tokens < 0:
        raise ValueError("input_tokens must be nonnegative")
    return input_tokens * m.input_price / 1e6 + output_cost(m, output_tokens)


def split_dataset(d: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Partition ``d`` by query into (train, test).

    All samples of a query land on one side. The test side gets
    round-half-up ``test_fraction`` of the queries, clamped so neither side
    is empty; deterministic for a fixed seed.
    """
    if not (0.0 < test_fraction < 1.0):
        raise ValueError(f"test_fraction must lie in (0,1), got {test_fraction}")
    n = len(d.queries)
    if n < 2:
        raise DegenerateSplitError(f"cannot split {n} query into two nonempty sides")
    n_test = math.floor(test_fraction * n + 0.5)
    n_test = min(max(n_test, 1), n - 1)

    ids = sorted(q.query_id for q in d.queries)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    test_ids = {ids[i] for i in perm[:n_test]}

    def side(keep_test: bool) -> Dataset:
        qs = tuple(q for q in d.queries if (q.query_id in test_ids) == keep_test)
        ss = tuple(s for s in d.samples if (s.query_id in test_ids) == keep_test)
        return Dataset(d.pool, d.grid, qs, ss, d.embedding_dim)

    return side(False), side(True)
