"""Budget-aware model routing over quality-cost curves.

Instead of treating each candidate model as one fixed (quality, cost)
point, the router predicts how a model's quality varies with its output
token budget and picks the best (model, budget) pair per query, enforced
downstream via "Use at most N tokens." instructions. The package bundles a
synthetic benchmark generator, trainable quality predictors, the router,
and a deferral-curve evaluation harness.
"""

from .core import (
    BudgetGrid,
    CoverageError,
    Dataset,
    DatasetError,
    DegenerateSplitError,
    ModelSpec,
    ParseError,
    Query,
    ResponseSample,
    SchemaError,
    output_cost,
    query_cost,
    split_dataset,
)
from .dataset_io import load_dataset, save_dataset
from .evaluation import (
    BestSingle,
    DeferralCurve,
    DeferralPoint,
    EvalReport,
    anchor_ablation,
    audc,
    baseline_strategy,
    best_single_model,
    build_report,
    compliance_table,
    default_lambda_grid,
    oracle_curve,
    oracle_point,
    qnc,
    replicate,
    router_strategy,
    sweep,
    unseen_strategy,
    write_report,
)
from .predictors import (
    EmptyCellError,
    KnnPredictor,
    LinearPredictor,
    MlpHead,
    RouterModel,
    TrainConfig,
    TrainingDivergedError,
    UnknownCellError,
    knn_fit,
    knn_predict,
    linear_fit,
    linear_predict,
    load_checkpoint,
    mlp_gradient,
    predict_bank,
    predict_quality,
    save_checkpoint,
    train_mlp_bank,
)
from .pricing import bundled_pool
from .routing import (
    ModelSignature,
    NoFeasibleBudgetError,
    ReactivePoint,
    RoutingDecision,
    RoutingMode,
    RoutingPolicy,
    build_signature,
    enumerate_search_spaces,
    interpolate_quality,
    route,
    route_continuous,
    route_discrete,
    route_reactive,
    route_unseen,
    score,
)
from .synth import SyntheticModelProfile, SyntheticScenario, generate, oracle_curve as true_curve, true_quality

__version__ = "0.1.0"
