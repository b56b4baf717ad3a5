"""Decision making over predicted quality-cost curves.

Three modes:

* reactive: every model is a single fixed operating point (its assigned
  anchor, by default the unconstrained cap); the router only picks a model.
* discrete_curve: argmax of the trade-off score over every (model, budget
  level) pair at or below the caller's budget limit.
* continuous_curve: the budget axis is relaxed to [0, budget_limit] via
  piecewise-linear interpolation between level predictions. The objective
  is piecewise linear in the budget, so its maximum sits on a breakpoint;
  only {0, levels <= limit, limit} need evaluating.

The trade-off score is (1-lambda) * quality - lambda * cost / cost_scale.
Costs are normalized by the pool's most expensive (model, level) call so
lambda in [0, 1] spans the whole trade-off rather than a sliver of it.

Each mode factors into a per-query :class:`CandidateSet` (quality, cost,
model, budget options) plus :func:`decide`, the shared scored argmax; sweeps
that revisit one query under many lambdas reuse the candidate set, and every
argmax applies one fixed tie-break: higher score, then lower predicted cost,
then lexicographic model_id, then smaller budget. Decisions are pure
functions of (model, query, policy) and safe to run concurrently.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import CoverageError, Dataset, ModelSpec, Query, query_cost
from .predictors import RouterModel, UnknownCellError, predict_bank, predict_quality

TIE_BREAK = "score,cost,model_id,budget"

DEFAULT_SIGNATURE_TEMPERATURE = 0.1


class RoutingMode(str, Enum):
    REACTIVE = "reactive"
    DISCRETE = "discrete_curve"
    CONTINUOUS = "continuous_curve"


class NoFeasibleBudgetError(ValueError):
    """No budget level fits under the policy's budget limit."""


@dataclass(frozen=True)
class RoutingPolicy:
    """Cost sensitivity, budget cap, and search mode for one decision."""

    lam: float
    budget_limit: int
    mode: RoutingMode = RoutingMode.DISCRETE
    tie_break: str = TIE_BREAK

    def __post_init__(self) -> None:
        if not (0.0 <= self.lam <= 1.0):
            raise ValueError(f"lambda must lie in [0,1], got {self.lam}")
        if self.budget_limit <= 0:
            raise ValueError("budget_limit must be positive")
        object.__setattr__(self, "mode", RoutingMode(self.mode))
        if self.tie_break != TIE_BREAK:
            raise ValueError(f"unsupported tie_break rule {self.tie_break!r}")


@dataclass(frozen=True)
class ReactivePoint:
    """A model's single fixed operating point as a reactive router sees it."""

    model_id: str
    predicted_cost: float
    predicted_quality: float
    anchor_used: int


@dataclass(frozen=True)
class RoutingDecision:
    """The selected (model, budget) with its predicted quality, cost, score."""

    model_id: str
    budget: int
    predicted_quality: float
    predicted_cost: float
    score: float
    instruction: str

    def record(self, query_id: str = "") -> dict:
        """Wire-format decision record."""
        return {
            "query_id": query_id,
            "model_id": self.model_id,
            "budget": self.budget,
            "predicted_quality": self.predicted_quality,
            "predicted_cost_usd": self.predicted_cost,
            "score": self.score,
            "instruction": self.instruction,
        }


def instruction_for(budget: int) -> str:
    return f"Use at most {budget} tokens."


def score(quality: float, cost: float, lam: float, cost_scale: float) -> float:
    """Trade-off score (1-lam)*quality - lam*(cost/cost_scale)."""
    if cost_scale <= 0:
        raise ValueError("cost_scale must be positive")
    return (1.0 - lam) * quality - lam * (cost / cost_scale)


def pool_cost_scale(
    pool: tuple[ModelSpec, ...], levels: tuple[int, ...], input_tokens: int = 0
) -> float:
    """Most expensive (model, level) call; normalizes costs into [0, 1].

    Falls back to 1.0 for an all-free pool, where the cost term is moot.
    """
    scale = max(query_cost(m, input_tokens, b) for m in pool for b in levels)
    return scale if scale > 0 else 1.0


def _model_costs(rm: RouterModel, input_tokens: int) -> tuple[list[list[float]], float]:
    """Per-(model, level) call costs and the pool scale, cached on the model.

    Costs depend only on prices and levels, never on the query, so each
    (model, input_tokens) pair is computed once.
    """
    key = int(input_tokens)
    hit = rm._cost_cache.get(key)
    if hit is None:
        table = [[query_cost(m, input_tokens, b) for b in rm.levels] for m in rm.pool]
        scale = max(c for row in table for c in row)
        hit = (table, scale if scale > 0 else 1.0)
        rm._cost_cache[key] = hit
    return hit


@dataclass(frozen=True, eq=False)
class CandidateSet:
    """One query's routing options: (quality, cost, model_id, budget) tuples.

    Candidates do not depend on lambda, so a sweep builds them once per
    query and re-decides per lambda.
    """

    candidates: tuple[tuple[float, float, str, int], ...]
    cost_scale: float


def decide(cs: CandidateSet, lam: float) -> RoutingDecision:
    """Scored argmax over a candidate set with the fixed tie-break."""
    best = None
    best_key = None
    for quality, cost, model_id, budget in cs.candidates:
        s = score(quality, cost, lam, cs.cost_scale)
        key = (-s, cost, model_id, budget)
        if best_key is None or key < best_key:
            best_key = key
            best = (s, cost, model_id, budget, quality)
    s, cost, model_id, budget, quality = best
    return RoutingDecision(
        model_id=model_id,
        budget=int(budget),
        predicted_quality=float(quality),
        predicted_cost=float(cost),
        score=float(s),
        instruction=instruction_for(int(budget)),
    )


def reactive_points(
    rm: RouterModel,
    q: Query | np.ndarray,
    reactive_anchors: dict[str, int] | None = None,
    input_tokens: int = 0,
) -> list[ReactivePoint]:
    """Each model's fixed (cost, quality) operating point.

    Unassigned models default to the unconstrained cap, matching routers
    that let every model answer without a length instruction.
    """
    anchors = reactive_anchors or {}
    points = []
    for m in rm.pool:
        anchor = int(anchors.get(m.model_id, rm.grid.default_cap))
        if (m.model_id, anchor) not in rm.heads:
            raise UnknownCellError(f"no head for reactive anchor ({m.model_id}, {anchor})")
        quality = predict_quality(rm, q, m.model_id, anchor)
        points.append(
            ReactivePoint(
                model_id=m.model_id,
                predicted_cost=query_cost(m, input_tokens, anchor),
                predicted_quality=quality,
                anchor_used=anchor,
            )
        )
    return points


def reactive_candidates(
    rm: RouterModel,
    q: Query | np.ndarray,
    reactive_anchors: dict[str, int] | None = None,
    input_tokens: int = 0,
) -> CandidateSet:
    points = reactive_points(rm, q, reactive_anchors, input_tokens)
    return CandidateSet(
        candidates=tuple(
            (p.predicted_quality, p.predicted_cost, p.model_id, p.anchor_used) for p in points
        ),
        cost_scale=pool_cost_scale(rm.pool, rm.levels, input_tokens),
    )


def _feasible_levels(levels: tuple[int, ...], budget_limit: int) -> list[tuple[int, int]]:
    feasible = [(li, b) for li, b in enumerate(levels) if b <= budget_limit]
    if not feasible:
        raise NoFeasibleBudgetError(
            f"no feasible budget: limit {budget_limit} is below the smallest level {levels[0]}"
        )
    return feasible


def discrete_candidates(
    rm: RouterModel,
    q: Query | np.ndarray,
    budget_limit: int,
    input_tokens: int = 0,
) -> CandidateSet:
    levels = rm.levels
    feasible = _feasible_levels(levels, budget_limit)
    bank = predict_bank(rm, q)
    costs, scale = _model_costs(rm, input_tokens)
    cands = []
    for mi, m in enumerate(rm.pool):
        row = costs[mi]
        for li, b in feasible:
            cands.append((float(bank[mi, li]), row[li], m.model_id, b))
    return CandidateSet(tuple(cands), scale)


def _interp(levels: tuple[int, ...], values, b: float) -> float:
    """Piecewise-linear interpolation of level predictions at budget ``b``.

    Passes through (0, 0) below the smallest level and holds the last value
    flat beyond the largest (quality saturates with output length).
    """
    if b <= 0:
        return 0.0
    if b < levels[0]:
        return (b / levels[0]) * float(values[0])
    if b >= levels[-1]:
        return float(values[-1])
    hi = bisect_right(levels, b)
    lo = hi - 1
    if levels[lo] == b:
        return float(values[lo])
    alpha = (b - levels[lo]) / (levels[hi] - levels[lo])
    return (1.0 - alpha) * float(values[lo]) + alpha * float(values[hi])


def continuous_candidates(
    rm: RouterModel,
    q: Query | np.ndarray,
    budget_limit: int,
    input_tokens: int = 0,
) -> CandidateSet:
    """Breakpoints of the piecewise-linear objective: {0, levels <= limit, limit}.

    A zero budget is always feasible (zero quality, input cost only), so no
    budget limit is infeasible in continuous mode.
    """
    levels = rm.levels
    breakpoints = [0] + [b for b in levels if b <= budget_limit]
    if breakpoints[-1] != budget_limit:
        breakpoints.append(budget_limit)
    bank = predict_bank(rm, q)
    _, scale = _model_costs(rm, input_tokens)
    cands = []
    for mi, m in enumerate(rm.pool):
        row = bank[mi]
        for b in breakpoints:
            cands.append((_interp(levels, row, b), query_cost(m, input_tokens, b), m.model_id, int(b)))
    return CandidateSet(tuple(cands), scale)


def route_reactive(
    rm: RouterModel,
    q: Query | np.ndarray,
    policy: RoutingPolicy,
    reactive_anchors: dict[str, int] | None = None,
    input_tokens: int = 0,
) -> RoutingDecision:
    """Pick a model among fixed operating points (budgets are not searched).

    The budget limit does not filter here: a reactive router's points are
    fixed by assumption, whatever the caller would prefer to spend.
    """
    return decide(reactive_candidates(rm, q, reactive_anchors, input_tokens), policy.lam)


def route_discrete(
    rm: RouterModel,
    q: Query | np.ndarray,
    policy: RoutingPolicy,
    input_tokens: int = 0,
) -> RoutingDecision:
    """Argmax of the score over all (model, level) pairs within the limit."""
    return decide(discrete_candidates(rm, q, policy.budget_limit, input_tokens), policy.lam)


def route_continuous(
    rm: RouterModel,
    q: Query | np.ndarray,
    policy: RoutingPolicy,
    input_tokens: int = 0,
) -> RoutingDecision:
    """Maximize over the continuous budget range [0, limit] per model."""
    return decide(continuous_candidates(rm, q, policy.budget_limit, input_tokens), policy.lam)


def route(
    rm: RouterModel,
    q: Query | np.ndarray,
    policy: RoutingPolicy,
    reactive_anchors: dict[str, int] | None = None,
    input_tokens: int = 0,
) -> RoutingDecision:
    """Dispatch on the policy's mode."""
    if policy.mode is RoutingMode.REACTIVE:
        return route_reactive(rm, q, policy, reactive_anchors, input_tokens)
    if policy.mode is RoutingMode.DISCRETE:
        return route_discrete(rm, q, policy, input_tokens)
    return route_continuous(rm, q, policy, input_tokens)


def interpolate_quality(
    rm: RouterModel, q: Query | np.ndarray, model_id: str, b_prime: float
) -> float:
    """Predicted quality of ``model_id`` at an arbitrary budget.

    Exactly the head prediction when ``b_prime`` sits on a level; linear
    between levels; through (0, 0) below the smallest level; constant past
    the largest.
    """
    if b_prime < 0:
        raise ValueError("budget must be nonnegative")
    levels = rm.levels
    if (model_id, levels[0]) not in rm.heads:
        raise UnknownCellError(f"unknown model {model_id!r}")
    if b_prime <= 0:
        return 0.0
    if b_prime < levels[0]:
        return (b_prime / levels[0]) * predict_quality(rm, q, model_id, levels[0])
    if b_prime >= levels[-1]:
        return predict_quality(rm, q, model_id, levels[-1])
    hi = bisect_right(levels, b_prime)
    lo = hi - 1
    if levels[lo] == b_prime:
        return predict_quality(rm, q, model_id, levels[lo])
    alpha = (b_prime - levels[lo]) / (levels[hi] - levels[lo])
    return (1.0 - alpha) * predict_quality(rm, q, model_id, levels[lo]) + alpha * predict_quality(
        rm, q, model_id, levels[hi]
    )


def enumerate_search_spaces(
    rm: RouterModel,
    q: Query | np.ndarray,
    policy: RoutingPolicy,
    reactive_anchors: dict[str, int] | None = None,
    input_tokens: int = 0,
) -> dict[str, float]:
    """Best achievable score under the reactive and the full search space.

    The reactive space pins each model to one grid anchor; the full space
    is the whole (model, level) product, budget limit aside. Because the
    former is a subset of the latter and both maxima read the same computed
    scores, ``reasoning_best >= reactive_best`` holds exactly.
    """
    levels = rm.levels
    anchors = reactive_anchors or {}
    bank = predict_bank(rm, q)
    scale = pool_cost_scale(rm.pool, levels, input_tokens)
    level_index = {b: li for li, b in enumerate(levels)}

    scores = np.empty_like(bank)
    for mi, m in enumerate(rm.pool):
        for li, b in enumerate(levels):
            cost = query_cost(m, input_tokens, b)
            scores[mi, li] = score(float(bank[mi, li]), cost, policy.lam, scale)

    reactive_scores = []
    for mi, m in enumerate(rm.pool):
        anchor = int(anchors.get(m.model_id, rm.grid.default_cap))
        if anchor not in level_index:
            raise UnknownCellError(f"reactive anchor {anchor} for {m.model_id} is not a grid level")
        reactive_scores.append(scores[mi, level_index[anchor]])

    return {
        "reactive_best": float(max(reactive_scores)),
        "reasoning_best": float(scores.max()),
    }


@dataclass(frozen=True, eq=False)
class ModelSignature:
    """A model's per-level validation error profile.

    ``per_budget_error`` maps each budget level to the mean absolute gap
    between a reference predictor and the model's observed qualities; it
    acts as a capability fingerprint that transfers to models the router
    never trained on.
    """

    model_id: str
    per_budget_error: dict[int, float]
    mean_error: float

    def __post_init__(self) -> None:
        if not self.per_budget_error:
            raise ValueError("signature needs at least one level")
        if any(e < 0 for e in self.per_budget_error.values()):
            raise ValueError("signature errors must be nonnegative")

    def vector(self, levels: tuple[int, ...]) -> np.ndarray:
        if set(levels) != set(self.per_budget_error):
            raise ValueError(
                f"signature for {self.model_id} covers levels "
                f"{sorted(self.per_budget_error)}, expected {list(levels)}"
            )
        return np.asarray([self.per_budget_error[b] for b in levels], dtype=np.float64)


def build_signature(rm: RouterModel, val: Dataset, model_id: str) -> ModelSignature:
    """Fingerprint ``model_id`` by its validation error against the pool.

    The reference predictor at each level is the pool-average head output;
    the signature entry is the mean absolute difference between that
    reference and the model's observed qualities. Works for pool members
    and for models the bank has never seen, as long as the validation set
    covers them.
    """
    levels = rm.levels
    missing = [
        (q.query_id, model_id, b)
        for q in val.queries
        for b in levels
        if not val.has_sample(q.query_id, model_id, b)
    ]
    if missing:
        raise CoverageError(missing)

    abs_err_sums = np.zeros(len(levels))
    for q in val.queries:
        reference = predict_bank(rm, q).mean(axis=0)  # pool-average per level
        observed = np.asarray([val.sample(q.query_id, model_id, b).quality for b in levels])
        abs_err_sums += np.abs(reference - observed)
    per_level = abs_err_sums / len(val.queries)
    return ModelSignature(
        model_id=model_id,
        per_budget_error={b: float(e) for b, e in zip(levels, per_level)},
        mean_error=float(per_level.mean()),
    )


def signature_weights(
    trained: list[ModelSignature],
    new_sig: ModelSignature,
    levels: tuple[int, ...],
    temperature: float = DEFAULT_SIGNATURE_TEMPERATURE,
) -> np.ndarray:
    """Softmax similarity of a new model's signature to each trained one.

    Low temperature concentrates on the nearest signature; high temperature
    approaches a uniform blend.
    """
    if not trained:
        raise ValueError("at least one trained model signature is required")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    target = new_sig.vector(levels)
    dists = np.asarray([np.linalg.norm(target - s.vector(levels)) for s in trained])
    logits = -dists / temperature
    logits -= logits.max()
    w = np.exp(logits)
    return w / w.sum()


def unseen_candidates(
    rm: RouterModel,
    trained_sigs: list[ModelSignature],
    new_models: list[tuple[ModelSpec, ModelSignature]],
    q: Query | np.ndarray,
    budget_limit: int,
    temperature: float = DEFAULT_SIGNATURE_TEMPERATURE,
    input_tokens: int = 0,
) -> CandidateSet:
    levels = rm.levels
    if not trained_sigs:
        raise ValueError("at least one trained model signature is required")
    known = set(rm.model_ids)
    for s in trained_sigs:
        if s.model_id not in known:
            raise ValueError(f"trained signature {s.model_id!r} has no heads in the bank")
    feasible = _feasible_levels(levels, budget_limit)

    bank = predict_bank(rm, q)
    row_of = {m: i for i, m in enumerate(rm.model_ids)}
    augmented: list[tuple[ModelSpec, np.ndarray]] = [(m, bank[mi]) for mi, m in enumerate(rm.pool)]
    sig_rows = np.stack([bank[row_of[s.model_id]] for s in trained_sigs])
    for spec, sig in new_models:
        w = signature_weights(trained_sigs, sig, levels, temperature)
        augmented.append((spec, w @ sig_rows))

    scale = pool_cost_scale(tuple(m for m, _ in augmented), levels, input_tokens)
    cands = []
    for m, row in augmented:
        for li, b in feasible:
            cands.append((float(row[li]), query_cost(m, input_tokens, b), m.model_id, b))
    return CandidateSet(tuple(cands), scale)


def route_unseen(
    rm: RouterModel,
    trained_sigs: list[ModelSignature],
    new_models: list[tuple[ModelSpec, ModelSignature]],
    q: Query | np.ndarray,
    policy: RoutingPolicy,
    temperature: float = DEFAULT_SIGNATURE_TEMPERATURE,
    input_tokens: int = 0,
) -> RoutingDecision:
    """Route over the pool plus models that have signatures but no heads.

    Each new model's per-level quality is a signature-distance-weighted
    average of the trained models' head outputs; the decision is then the
    usual discrete argmax over the augmented pool.
    """
    cs = unseen_candidates(rm, trained_sigs, new_models, q, policy.budget_limit, temperature, input_tokens)
    return decide(cs, policy.lam)
