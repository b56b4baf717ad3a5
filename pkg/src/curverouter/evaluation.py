"""Deferral-curve evaluation: lambda sweeps, AUDC, QNC, oracles, compliance.

Sweeping the cost-sensitivity parameter over [0, 1] and replaying each
decision against the recorded samples traces a deferral curve of mean
realized quality versus mean realized cost. Three summary metrics:

* AUDC: area under the deferral curve on a shared cost axis, normalized to
  [0, 1]. The curve extends flat from cost 0 to its first point and from
  its last point to the axis maximum.
* QNC: the cheapest sweep point that matches the best single model's
  default-budget quality, as a fraction of that model's cost
  ("unreached" when the sweep never matches it).
* Peak quality: the best mean quality anywhere on the curve.

Oracles replay the argmax over realized outcomes instead of predictions:
the point oracle chooses among models at their default budgets only, the
curve oracle over every recorded (model, budget) pair.
"""

from __future__ import annotations

import dataclasses
import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .core import BudgetGrid, Dataset, ModelSpec, Query, query_cost
from .dataset_io import format_float
from .predictors import RouterModel, TrainConfig, train_mlp_bank
from .routing import (
    CandidateSet,
    ModelSignature,
    RoutingMode,
    continuous_candidates,
    decide,
    discrete_candidates,
    pool_cost_scale,
    reactive_candidates,
    unseen_candidates,
)

UNREACHED = "unreached"

#: decision callback used by sweeps: (query, lambda) -> (model_id, budget)
Strategy = Callable[[Query, float], tuple[str, int]]


def default_lambda_grid(n: int = 64) -> tuple[float, ...]:
    """Uniformly spaced lambda values over [0, 1] inclusive."""
    if n < 1:
        raise ValueError("lambda grid needs at least one point")
    if n == 1:
        return (0.0,)
    return tuple(float(x) for x in np.linspace(0.0, 1.0, n))


@dataclass(frozen=True)
class DeferralPoint:
    lam: float
    mean_quality: float
    total_cost: float
    mean_cost: float


@dataclass(frozen=True)
class BestSingle:
    """The pool model with the best mean default-budget quality."""

    model_id: str
    quality: float
    mean_cost: float


@dataclass(frozen=True, eq=False)
class DeferralCurve:
    """Sweep points ordered by ascending mean cost, with summary metrics."""

    points: tuple[DeferralPoint, ...]
    audc: float
    qnc: float | str
    peak_quality: float


def _sorted_points(points) -> list[DeferralPoint]:
    pts = sorted(points, key=lambda p: p.mean_cost)
    if not pts:
        raise ValueError("a deferral curve needs at least one point")
    return pts


def audc(points, cost_axis_max: float) -> float:
    """Normalized area under the curve of quality over cost.

    Trapezoidal between points, flat from cost 0 to the first point and
    from the last point out to ``cost_axis_max``, divided by the axis
    length. A single-point curve degenerates to that point's quality
    (rectangle rule) and emits a warning.
    """
    if isinstance(points, DeferralCurve):
        points = points.points
    pts = _sorted_points(points)
    if cost_axis_max <= 0:
        raise ValueError("cost_axis_max must be positive")
    if cost_axis_max < pts[-1].mean_cost - 1e-12:
        raise ValueError(
            f"cost_axis_max {cost_axis_max} is below the curve's largest cost {pts[-1].mean_cost}"
        )
    if len(pts) == 1:
        warnings.warn("single-point deferral curve: AUDC degenerates to its quality", stacklevel=2)
        return float(pts[0].mean_quality)
    xs = [0.0] + [p.mean_cost for p in pts] + [cost_axis_max]
    ys = [pts[0].mean_quality] + [p.mean_quality for p in pts] + [pts[-1].mean_quality]
    return float(np.trapezoid(ys, xs) / cost_axis_max)


def qnc(points, best_single: BestSingle) -> float | str:
    """Cheapest relative cost at which the sweep matches the best single model."""
    if isinstance(points, DeferralCurve):
        points = points.points
    if best_single.mean_cost <= 0:
        raise ValueError("best single model has zero mean cost; QNC undefined")
    qualifying = [p.mean_cost for p in points if p.mean_quality >= best_single.quality]
    if not qualifying:
        return UNREACHED
    return float(min(qualifying) / best_single.mean_cost)


def peak_quality(points) -> float:
    if isinstance(points, DeferralCurve):
        points = points.points
    return float(max(p.mean_quality for p in points))


def best_single_model(test: Dataset) -> BestSingle:
    """Highest mean default-budget quality in the pool; ties pick the cheaper."""
    cap = test.grid.default_cap
    stats = []
    for m in test.pool:
        qs, costs = [], []
        for q in test.queries:
            s = test.sample(q.query_id, m.model_id, cap)
            qs.append(s.quality)
            costs.append(query_cost(m, s.input_tokens, s.actual_output_tokens))
        stats.append((-float(np.mean(qs)), float(np.mean(costs)), m.model_id))
    neg_q, cost, model_id = min(stats)
    return BestSingle(model_id=model_id, quality=-neg_q, mean_cost=cost)


def make_curve(
    points,
    cost_axis_max: float | None = None,
    best_single: BestSingle | None = None,
) -> DeferralCurve:
    """Assemble a curve; metrics use the given axis or self-normalize."""
    pts = tuple(_sorted_points(points))
    axis = cost_axis_max if cost_axis_max is not None else pts[-1].mean_cost
    return DeferralCurve(
        points=pts,
        audc=audc(pts, axis),
        qnc=qnc(pts, best_single) if best_single is not None else UNREACHED,
        peak_quality=peak_quality(pts),
    )


def realized_outcome(test: Dataset, query_id: str, model_id: str, budget: int) -> tuple[float, float]:
    """Recorded (quality, dollar cost) of acting on a decision.

    Budgets between recorded levels snap up to the next covered level, which
    never understates cost.
    """
    if test.has_sample(query_id, model_id, budget):
        s = test.sample(query_id, model_id, budget)
    else:
        snapped = next((b for b in test.grid.levels if b >= budget), None)
        if snapped is None or not test.has_sample(query_id, model_id, snapped):
            raise KeyError(
                f"decided (model={model_id}, budget={budget}) has no recorded sample for {query_id}"
            )
        s = test.sample(query_id, model_id, snapped)
    cost = query_cost(test.model(model_id), s.input_tokens, s.actual_output_tokens)
    return s.quality, cost


def _check_lambda_grid(lambda_grid) -> tuple[float, ...]:
    grid = tuple(float(x) for x in lambda_grid)
    if not grid:
        raise ValueError("lambda grid must be nonempty")
    if any(not (0.0 <= x <= 1.0) for x in grid):
        raise ValueError("lambda grid values must lie in [0,1]")
    return grid


def sweep(strategy: Strategy, test: Dataset, lambda_grid=None) -> DeferralCurve:
    """Trace a deferral curve by routing every test query at each lambda."""
    grid = _check_lambda_grid(lambda_grid if lambda_grid is not None else default_lambda_grid())
    test.require_complete()
    n = len(test.queries)
    points = []
    for lam in grid:
        q_sum = 0.0
        c_sum = 0.0
        for q in test.queries:
            model_id, budget = strategy(q, lam)
            quality, cost = realized_outcome(test, q.query_id, model_id, budget)
            q_sum += quality
            c_sum += cost
        points.append(DeferralPoint(lam=lam, mean_quality=q_sum / n, total_cost=c_sum, mean_cost=c_sum / n))
    return make_curve(points, best_single=best_single_model(test))


def router_strategy(
    rm: RouterModel,
    mode: RoutingMode | str,
    budget_limit: int,
    reactive_anchors: dict[str, int] | None = None,
    input_tokens: int = 0,
) -> Strategy:
    """Routing strategy over a trained bank; candidates cached per query."""
    mode = RoutingMode(mode)
    cache: dict[str, CandidateSet] = {}

    def strategy(q: Query, lam: float) -> tuple[str, int]:
        cs = cache.get(q.query_id)
        if cs is None:
            if mode is RoutingMode.REACTIVE:
                cs = reactive_candidates(rm, q, reactive_anchors, input_tokens)
            elif mode is RoutingMode.DISCRETE:
                cs = discrete_candidates(rm, q, budget_limit, input_tokens)
            else:
                cs = continuous_candidates(rm, q, budget_limit, input_tokens)
            cache[q.query_id] = cs
        d = decide(cs, lam)
        return d.model_id, d.budget

    return strategy


def baseline_strategy(
    pool: tuple[ModelSpec, ...],
    grid: BudgetGrid,
    predict_fn: Callable[[Query, str, int], float],
    mode: RoutingMode | str,
    budget_limit: int,
    reactive_anchors: dict[str, int] | None = None,
    input_tokens: int = 0,
) -> Strategy:
    """Strategy over an arbitrary per-cell predictor (KNN, linear, ...).

    ``predict_fn(query, model_id, level)`` supplies the quality estimate;
    reactive mode pins each model to its assigned anchor (default: the
    unconstrained cap), discrete mode searches all levels within the limit.
    The same decide() tie-break applies, so baselines and the MLP router
    compare on equal footing.
    """
    mode = RoutingMode(mode)
    if mode is RoutingMode.CONTINUOUS:
        raise ValueError("baseline strategies support reactive and discrete_curve modes")
    levels = grid.levels
    scale = pool_cost_scale(pool, levels, input_tokens)
    anchors = reactive_anchors or {}
    cache: dict[str, CandidateSet] = {}

    def strategy(q: Query, lam: float) -> tuple[str, int]:
        cs = cache.get(q.query_id)
        if cs is None:
            cands = []
            for m in pool:
                if mode is RoutingMode.REACTIVE:
                    cells = [int(anchors.get(m.model_id, grid.default_cap))]
                else:
                    cells = [b for b in levels if b <= budget_limit]
                for b in cells:
                    cands.append((predict_fn(q, m.model_id, b), query_cost(m, input_tokens, b), m.model_id, b))
            if not cands:
                raise ValueError(f"no feasible budget at or below {budget_limit}")
            cs = CandidateSet(tuple(cands), scale)
            cache[q.query_id] = cs
        d = decide(cs, lam)
        return d.model_id, d.budget

    return strategy


def unseen_strategy(
    rm: RouterModel,
    trained_sigs: list[ModelSignature],
    new_models: list[tuple[ModelSpec, ModelSignature]],
    budget_limit: int,
    temperature: float = 0.1,
    input_tokens: int = 0,
) -> Strategy:
    """Strategy over the pool augmented with signature-only models."""
    cache: dict[str, CandidateSet] = {}

    def strategy(q: Query, lam: float) -> tuple[str, int]:
        cs = cache.get(q.query_id)
        if cs is None:
            cs = unseen_candidates(rm, trained_sigs, new_models, q, budget_limit, temperature, input_tokens)
            cache[q.query_id] = cs
        d = decide(cs, lam)
        return d.model_id, d.budget

    return strategy


def _oracle_points(test: Dataset, lambda_grid, default_only: bool) -> list[DeferralPoint]:
    grid = np.asarray(_check_lambda_grid(lambda_grid), dtype=np.float64)
    test.require_complete()
    levels = (test.grid.default_cap,) if default_only else test.grid.levels
    scale = pool_cost_scale(test.pool, test.grid.levels)

    n = len(test.queries)
    q_sums = np.zeros(grid.shape[0])
    c_sums = np.zeros(grid.shape[0])
    for q in test.queries:
        cands = []
        for m in test.pool:
            for b in levels:
                s = test.sample(q.query_id, m.model_id, b)
                cost = query_cost(m, s.input_tokens, s.actual_output_tokens)
                cands.append((cost, m.model_id, b, s.quality))
        # presort by the tie-break suffix so the first argmax wins ties
        cands.sort(key=lambda c: (c[0], c[1], c[2]))
        qual = np.asarray([c[3] for c in cands])
        costs = np.asarray([c[0] for c in cands])
        scores = np.outer(1.0 - grid, qual) - np.outer(grid, costs / scale)
        idx = scores.argmax(axis=1)
        q_sums += qual[idx]
        c_sums += costs[idx]

    return [
        DeferralPoint(lam=float(lam), mean_quality=q_sums[i] / n, total_cost=float(c_sums[i]), mean_cost=c_sums[i] / n)
        for i, lam in enumerate(grid)
    ]


def oracle_point(test: Dataset, lambda_grid=None) -> DeferralCurve:
    """Hindsight-optimal selection among models at their default budgets."""
    grid = lambda_grid if lambda_grid is not None else default_lambda_grid()
    return make_curve(_oracle_points(test, grid, default_only=True), best_single=best_single_model(test))


def oracle_curve(test: Dataset, lambda_grid=None) -> DeferralCurve:
    """Hindsight-optimal selection among all recorded (model, budget) pairs."""
    grid = lambda_grid if lambda_grid is not None else default_lambda_grid()
    return make_curve(_oracle_points(test, grid, default_only=False), best_single=best_single_model(test))


def compliance_table(d: Dataset, threshold_ratio: float = 1.1) -> dict[tuple[str, int], float]:
    """Per (model, budget) fraction of responses within threshold * budget.

    Default-budget cells are excluded: they carry no instruction to comply
    with.
    """
    if threshold_ratio <= 0:
        raise ValueError("threshold_ratio must be positive")
    hits: dict[tuple[str, int], int] = {}
    totals: dict[tuple[str, int], int] = {}
    for s in d.samples:
        if s.is_default:
            continue
        key = (s.model_id, s.budget)
        totals[key] = totals.get(key, 0) + 1
        if s.actual_output_tokens <= threshold_ratio * s.budget:
            hits[key] = hits.get(key, 0) + 1
    return {key: hits.get(key, 0) / total for key, total in sorted(totals.items())}


def geometric_anchor_subset(anchors: tuple[int, ...], k: int) -> tuple[int, ...]:
    """Pick k anchors spread geometrically, always keeping min and max."""
    anchors = tuple(sorted(anchors))
    if k < 2:
        raise ValueError("anchor subsets need at least 2 anchors")
    if k > len(anchors):
        raise ValueError(f"k={k} exceeds available anchors ({len(anchors)})")
    if k == len(anchors):
        return anchors
    targets = np.geomspace(anchors[0], anchors[-1], k)
    available = list(anchors)
    chosen = []
    for t in targets:
        i = int(np.argmin([abs(np.log(a) - np.log(t)) for a in available]))
        chosen.append(available.pop(i))
    return tuple(sorted(chosen))


def anchor_ablation(
    train: Dataset,
    test: Dataset,
    k_values: list[int],
    lambda_grid=None,
    seed: int = 0,
    cfg: TrainConfig | None = None,
) -> dict[int, dict]:
    """Train and evaluate continuous-mode routers restricted to k anchors.

    AUDC values share one cost axis across all k so they are comparable.
    """
    grid_vals = lambda_grid if lambda_grid is not None else default_lambda_grid()
    cfg = dataclasses.replace(cfg or TrainConfig(), seed=seed)
    budget_limit = max(train.grid.levels)

    curves: dict[int, DeferralCurve] = {}
    for k in k_values:
        sub = geometric_anchor_subset(train.grid.anchors, k)
        sub_grid = BudgetGrid(anchors=sub, default_cap=train.grid.default_cap)
        rm = train_mlp_bank(train.restrict_grid(sub_grid), cfg)
        strategy = router_strategy(rm, RoutingMode.CONTINUOUS, budget_limit)
        curves[k] = sweep(strategy, test, grid_vals)

    shared_axis = max(p.mean_cost for c in curves.values() for p in c.points)
    return {
        k: {"audc": audc(c.points, shared_axis), "qnc": c.qnc, "peak_quality": c.peak_quality}
        for k, c in curves.items()
    }


def replicate(run_fn: Callable[[int], dict], seeds: list[int]) -> dict:
    """Run an experiment per seed; report sample mean and sd per metric.

    A single seed reports sd 0 and flags itself as a single replicate.
    """
    if not seeds:
        raise ValueError("at least one seed is required")
    runs = [run_fn(int(s)) for s in seeds]
    keys = list(runs[0].keys())
    for r in runs[1:]:
        if list(r.keys()) != keys:
            raise ValueError("replicates returned differing metric sets")
    metrics = {}
    for key in keys:
        values = [float(r[key]) for r in runs]
        sd = 0.0 if len(values) == 1 else float(np.std(values, ddof=1))
        metrics[key] = {"mean": float(np.mean(values)), "sd": sd, "values": values}
    return {"n": len(seeds), "single_replicate": len(seeds) == 1, "metrics": metrics}


@dataclass(eq=False)
class EvalReport:
    """Cross-method comparison on one test set and lambda grid."""

    lambda_grid: tuple[float, ...]
    cost_axis_max: float
    best_single: BestSingle
    methods: dict[str, DeferralCurve]
    compliance: dict[tuple[str, int], float]
    replicates: dict | None = None


def build_report(
    curves: dict[str, DeferralCurve],
    test: Dataset,
    lambda_grid,
    compliance_threshold: float = 1.1,
    replicates: dict | None = None,
) -> EvalReport:
    """Re-normalize method curves onto one shared cost axis and bundle stats."""
    if not curves:
        raise ValueError("report needs at least one method")
    bs = best_single_model(test)
    shared = max(p.mean_cost for c in curves.values() for p in c.points)
    methods = {name: make_curve(c.points, cost_axis_max=shared, best_single=bs) for name, c in curves.items()}
    return EvalReport(
        lambda_grid=_check_lambda_grid(lambda_grid),
        cost_axis_max=shared,
        best_single=bs,
        methods=methods,
        compliance=compliance_table(test, compliance_threshold),
        replicates=replicates,
    )


def report_to_dict(report: EvalReport) -> dict:
    return {
        "lambda_grid": list(report.lambda_grid),
        "cost_axis_max": report.cost_axis_max,
        "best_single": {
            "model_id": report.best_single.model_id,
            "quality": report.best_single.quality,
            "mean_cost": report.best_single.mean_cost,
        },
        "methods": {
            name: {
                "audc": c.audc,
                "qnc": c.qnc,
                "peak_quality": c.peak_quality,
                "points": [
                    {
                        "lambda": p.lam,
                        "mean_quality": p.mean_quality,
                        "total_cost": p.total_cost,
                        "mean_cost": p.mean_cost,
                    }
                    for p in c.points
                ],
            }
            for name, c in report.methods.items()
        },
        "compliance": [
            {"model_id": m, "budget": b, "rate": rate} for (m, b), rate in report.compliance.items()
        ],
        "replicates": report.replicates,
    }


def write_report(report: EvalReport, out_dir: str | Path) -> list[Path]:
    """Write report.json, one curve_<method>.csv per method, compliance.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    report_path = out / "report.json"
    report_path.write_text(json.dumps(report_to_dict(report), indent=1) + "\n", encoding="utf-8", newline="\n")
    written.append(report_path)

    for name, curve in report.methods.items():
        path = out / f"curve_{name}.csv"
        rows = ["lambda,mean_cost_usd,mean_quality"]
        for p in sorted(curve.points, key=lambda p: p.lam):
            rows.append(f"{format_float(p.lam)},{format_float(p.mean_cost)},{format_float(p.mean_quality)}")
        path.write_text("\n".join(rows) + "\n", encoding="utf-8", newline="\n")
        written.append(path)

    cpath = out / "compliance.csv"
    rows = ["model_id,budget,rate"]
    for (m, b), rate in report.compliance.items():
        rows.append(f"{m},{b},{format_float(rate)}")
    cpath.write_text("\n".join(rows) + "\n", encoding="utf-8", newline="\n")
    written.append(cpath)
    return written
