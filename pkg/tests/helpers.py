"""Shared builders for tests: tiny datasets and hand-crafted router models."""

from __future__ import annotations

import math

import numpy as np

from curverouter.core import BudgetGrid, Dataset, ModelSpec, Query, ResponseSample
from curverouter.predictors import HIDDEN_DIMS, MlpHead, RouterModel, init_head
from curverouter.synth import SyntheticModelProfile, SyntheticScenario


def const_head(dim: int, quality: float) -> MlpHead:
    """A head that predicts ``quality`` for every input (zero weights)."""
    dims = (dim, *HIDDEN_DIMS, 1)
    weights = tuple(np.zeros((a, b)) for a, b in zip(dims[:-1], dims[1:]))
    biases = list(np.zeros(b) for b in dims[1:])
    biases[-1] = np.asarray([math.log(quality / (1.0 - quality))])
    return MlpHead(weights=weights, biases=tuple(biases))


def const_model(
    quality_map: dict[tuple[str, int], float],
    pool: tuple[ModelSpec, ...],
    grid: BudgetGrid,
    dim: int = 4,
) -> RouterModel:
    """RouterModel whose heads predict fixed qualities regardless of input."""
    heads = {cell: const_head(dim, q) for cell, q in quality_map.items()}
    return RouterModel(pool=pool, grid=grid, embedding_dim=dim, heads=heads, training_meta={})


def random_model(
    n_models: int = 3,
    n_anchors: int = 4,
    dim: int = 8,
    seed: int = 0,
    default_cap: int | None = None,
) -> RouterModel:
    """Randomly initialized bank over a random pool; no training involved."""
    rng = np.random.default_rng(seed)
    pool = tuple(
        ModelSpec(
            model_id=f"m{idx}",
            input_price=float(rng.uniform(0.0, 1.0)),
            output_price=float(rng.uniform(0.01, 2.0)),
        )
        for idx in range(n_models)
    )
    anchors = tuple(sorted(rng.choice(np.arange(10, 2000), size=n_anchors, replace=False).tolist()))
    cap = default_cap if default_cap is not None else int(anchors[-1]) * 2
    grid = BudgetGrid(anchors=anchors, default_cap=cap)
    heads = {}
    for m in pool:
        for b in grid.levels:
            base = init_head(dim, rng)
            # sprinkle bias noise so head outputs differ meaningfully
            heads[(m.model_id, b)] = MlpHead(
                weights=tuple(w * 2.0 for w in base.weights),
                biases=tuple(x + rng.normal(0, 0.5, x.shape) for x in base.biases),
            )
    return RouterModel(pool=pool, grid=grid, embedding_dim=dim, heads=heads, training_meta={})


def tiny_dataset(
    qualities: dict[tuple[str, str, int], float],
    pool: tuple[ModelSpec, ...],
    grid: BudgetGrid,
    tokens: dict[tuple[str, str, int], int] | None = None,
    input_tokens: int = 0,
    dim: int = 2,
) -> Dataset:
    """Dataset from explicit per-(query, model, budget) qualities/token counts."""
    tokens = tokens or {}
    qids = sorted({k[0] for k in qualities})
    rng = np.random.default_rng(0)
    queries = tuple(Query(query_id=qid, embedding=rng.standard_normal(dim)) for qid in qids)
    samples = tuple(
        ResponseSample(
            query_id=qid,
            model_id=mid,
            budget=b,
            quality=q,
            actual_output_tokens=tokens.get((qid, mid, b), b),
            input_tokens=input_tokens,
            is_default=(b == grid.default_cap),
        )
        for (qid, mid, b), q in sorted(qualities.items())
    )
    return Dataset(pool=pool, grid=grid, queries=queries, samples=samples, embedding_dim=dim)


def saturating_scenario(
    seed: int,
    n_queries: int = 400,
    embedding_dim: int = 24,
    noise_sd: float = 0.0,
    anchors: tuple[int, ...] = (10, 20, 40, 80, 160, 320, 640, 1280, 2000, 3000),
    default_cap: int = 4000,
) -> SyntheticScenario:
    """Heterogeneous ceilings and prices; flagship saturates fast and cheap models lag."""
    rng = np.random.default_rng([seed, 987])
    skills = [rng.normal(0.0, 0.45, 8) for _ in range(4)]
    profiles = (
        SyntheticModelProfile(
            spec=ModelSpec("flagship", 0.44, 1.76),
            ceiling=0.97, halflife=130.0, skill_vector=skills[0], compliance_reliability=0.95,
        ),
        SyntheticModelProfile(
            spec=ModelSpec("mid", 0.12, 0.30),
            ceiling=0.55, halflife=320.0, skill_vector=skills[1], compliance_reliability=0.90,
        ),
        SyntheticModelProfile(
            spec=ModelSpec("small", 0.02, 0.07),
            ceiling=0.36, halflife=520.0, skill_vector=skills[2], compliance_reliability=0.70,
        ),
        SyntheticModelProfile(
            spec=ModelSpec("tiny", 0.01, 0.02),
            ceiling=0.22, halflife=700.0, skill_vector=skills[3], compliance_reliability=0.55,
        ),
    )
    return SyntheticScenario(
        profiles=profiles,
        grid=BudgetGrid(anchors=anchors, default_cap=default_cap),
        n_queries=n_queries,
        embedding_dim=embedding_dim,
        seed=seed,
        noise_sd=noise_sd,
        input_tokens=200,
    )
