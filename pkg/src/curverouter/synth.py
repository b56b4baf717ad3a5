"""Synthetic benchmark generation with known ground-truth quality curves.

Each synthetic model has a saturating quality curve per query:

    quality(q, b) = affinity(q) * ceiling * (1 - exp(-b / halflife))

where affinity is a logistic score of the query embedding against the
model's skill vector. The curve is monotone and concave in the budget, so
quality grows with output length and saturates, and every evaluation
statistic can be checked against this closed form.

Token consumption follows a two-regime compliance model: a compliant draw
lands in [0.5*budget, budget]; a non-compliant draw overshoots into
(1.1*budget, 2*budget], i.e. always past the 1.1x compliance threshold, so
the measured compliance rate is an unbiased estimate of the configured
reliability. Responses at the default level are capped by the serving stack
rather than an instruction and always draw from the compliant regime.

Generation is a pure function of the scenario: every random draw comes from
a counter-based stream keyed by (seed, kind, query, model, level), so
changing one cell never shifts another and per-query work can run in any
order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import BudgetGrid, Dataset, ModelSpec, ParseError, Query, ResponseSample, SchemaError

_EMBED_STREAM = 0
_SAMPLE_STREAM = 1

DEFAULT_INPUT_TOKENS = 200


@dataclass(frozen=True, eq=False)
class SyntheticModelProfile:
    """Ground-truth behavior of one synthetic model."""

    spec: ModelSpec
    ceiling: float
    halflife: float
    skill_vector: np.ndarray
    compliance_reliability: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.ceiling <= 1.0):
            raise ValueError(f"{self.spec.model_id}: ceiling must lie in [0,1]")
        if self.halflife <= 0:
            raise ValueError(f"{self.spec.model_id}: halflife must be positive")
        if not (0.0 <= self.compliance_reliability <= 1.0):
            raise ValueError(f"{self.spec.model_id}: compliance_reliability must lie in [0,1]")
        skill = np.asarray(self.skill_vector, dtype=np.float64)
        if skill.ndim != 1 or skill.size == 0:
            raise ValueError(f"{self.spec.model_id}: skill_vector must be a nonempty 1-D vector")
        skill.setflags(write=False)
        object.__setattr__(self, "skill_vector", skill)


@dataclass(frozen=True, eq=False)
class SyntheticScenario:
    profiles: tuple[SyntheticModelProfile, ...]
    grid: BudgetGrid
    n_queries: int
    embedding_dim: int
    seed: int
    noise_sd: float = 0.0
    input_tokens: int = DEFAULT_INPUT_TOKENS

    def __post_init__(self) -> None:
        object.__setattr__(self, "profiles", tuple(self.profiles))
        if not self.profiles:
            raise ValueError("scenario needs at least one model profile")
        if self.n_queries <= 0 or self.embedding_dim <= 0:
            raise ValueError("n_queries and embedding_dim must be positive")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be nonnegative")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        if self.input_tokens < 0:
            raise ValueError("input_tokens must be nonnegative")
        for p in self.profiles:
            if p.skill_vector.size > self.embedding_dim:
                raise ValueError(
                    f"{p.spec.model_id}: skill_vector longer than embedding_dim "
                    f"({p.skill_vector.size} > {self.embedding_dim})"
                )

    @property
    def pool(self) -> tuple[ModelSpec, ...]:
        return tuple(p.spec for p in self.profiles)


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def affinity(profile: SyntheticModelProfile, q: Query) -> float:
    """Logistic match score between a query and a model's skills in (0,1)."""
    head = q.embedding[: profile.skill_vector.size]
    return _sigmoid(float(np.dot(head, profile.skill_vector)))


def true_quality(profile: SyntheticModelProfile, q: Query, budget: int) -> float:
    """Noise-free quality of ``profile`` on ``q`` at an output-token budget."""
    if budget < 0:
        raise ValueError("budget must be nonnegative")
    saturation = 1.0 - math.exp(-budget / profile.halflife)
    value = affinity(profile, q) * profile.ceiling * saturation
    return min(max(value, 0.0), 1.0)


def oracle_curve(
    profile: SyntheticModelProfile, q: Query, grid: BudgetGrid
) -> list[tuple[int, float]]:
    """Ground-truth (budget, quality) at every grid level, ascending."""
    return [(b, true_quality(profile, q, b)) for b in grid.levels]


def _query_rng(seed: int, qi: int) -> np.random.Generator:
    return np.random.default_rng([seed, _EMBED_STREAM, qi])


def _sample_rng(seed: int, qi: int, mi: int, li: int) -> np.random.Generator:
    return np.random.default_rng([seed, _SAMPLE_STREAM, qi, mi, li])


def _draw_tokens(rng: np.random.Generator, budget: int, reliability: float, is_default: bool) -> int:
    if is_default:
        # no instruction to violate; the serving cap truncates at the budget
        return int(rng.integers(math.ceil(0.5 * budget), budget + 1))
    if rng.random() < reliability:
        return int(rng.integers(math.ceil(0.5 * budget), budget + 1))
    lo = math.floor(1.1 * budget) + 1  # strictly past the compliance threshold
    return int(rng.integers(lo, 2 * budget + 1))


def generate(scn: SyntheticScenario) -> Dataset:
    """Materialize a complete-coverage dataset for the scenario."""
    levels = scn.grid.levels
    width = max(5, len(str(scn.n_queries)))

    queries = []
    for qi in range(scn.n_queries):
        emb = _query_rng(scn.seed, qi).standard_normal(scn.embedding_dim)
        queries.append(Query(query_id=f"q{qi:0{width}d}", embedding=emb, source_tag="synth"))

    samples = []
    for qi, q in enumerate(queries):
        for mi, profile in enumerate(scn.profiles):
            for li, budget in enumerate(levels):
                rng = _sample_rng(scn.seed, qi, mi, li)
                quality = true_quality(profile, q, budget)
                if scn.noise_sd > 0:
                    quality = min(max(quality + rng.normal(0.0, scn.noise_sd), 0.0), 1.0)
                is_default = budget == scn.grid.default_cap
                tokens = _draw_tokens(rng, budget, profile.compliance_reliability, is_default)
                samples.append(
                    ResponseSample(
                        query_id=q.query_id,
                        model_id=profile.spec.model_id,
                        budget=budget,
                        quality=quality,
                        actual_output_tokens=tokens,
                        input_tokens=scn.input_tokens,
                        is_default=is_default,
                    )
                )

    return Dataset(
        pool=scn.pool,
        grid=scn.grid,
        queries=tuple(queries),
        samples=tuple(samples),
        embedding_dim=scn.embedding_dim,
    )


def scenario_from_dict(raw: dict) -> SyntheticScenario:
    try:
        grid = BudgetGrid(anchors=tuple(raw["grid"]["anchors"]), default_cap=raw["grid"]["default_cap"])
        profiles = []
        for p in raw["profiles"]:
            profiles.append(
                SyntheticModelProfile(
                    spec=ModelSpec(
                        model_id=p["model_id"],
                        display_name=p.get("display_name", ""),
                        input_price=p["input_price_per_1m"],
                        output_price=p["output_price_per_1m"],
                    ),
                    ceiling=p["ceiling"],
                    halflife=p["halflife"],
                    skill_vector=np.asarray(p["skill"], dtype=np.float64),
                    compliance_reliability=p["compliance_reliability"],
                )
            )
        return SyntheticScenario(
            profiles=tuple(profiles),
            grid=grid,
            n_queries=raw["n_queries"],
            embedding_dim=raw["embedding_dim"],
            seed=raw.get("seed", 0),
            noise_sd=raw.get("noise_sd", 0.0),
            input_tokens=raw.get("input_tokens", DEFAULT_INPUT_TOKENS),
        )
    except KeyError as e:
        raise SchemaError(f"scenario: missing field {e.args[0]!r}") from e


def load_scenario(path: str | Path) -> SyntheticScenario:
    p = Path(path)
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except OSError as e:
        raise ParseError(f"{p}: {e}") from e
    except json.JSONDecodeError as e:
        raise ParseError(f"{p}: malformed JSON: {e}") from e
    return scenario_from_dict(raw)
