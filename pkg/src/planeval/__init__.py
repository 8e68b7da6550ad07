"""Tool-aware plan evaluation toolkit.

Parse and validate plan DAGs, score them with a seven-metric rubric and a
one-shot plan-to-reference evaluator, refine them through a step-wise
evaluator -> plan optimizer loop, learn metric weights from lineage
triples, and compute agreement/sensitivity statistics.
"""

from .errors import PlanEvalError, PlanParseError
from .gateway import DecodingConfig, JudgeGateway, JudgeRequest, ScriptedJudge, presets
from .lineage import PlanLineage, append_if_changed, derive_metadata
from .loop import DiagnosticTag, LoopConfig, LoopJudges, run_loop
from .metrics import (
    EvalMode,
    MetricKind,
    MetricScore,
    PlanScorecard,
    WeightVector,
    aggregate,
    normalized_average,
    parse_metric_response,
    score_metric,
    score_plan,
)
from .oneshot import (
    OneShotResult,
    QualityBucketRates,
    RatingTier,
    bucket_rates,
    evaluate_oneshot,
    rating_from_f1,
    symmetric_similarity,
)
from .plan import (
    HopCategory,
    HopProfile,
    Placeholder,
    Plan,
    Step,
    ToolKind,
    ValidationReport,
    canonicalize,
    extract_placeholders,
    hop_profile,
    parse_plan,
    validate,
)
from .stats import bootstrap_ci, cohen_kappa, fleiss_kappa, spearman_rho, weighted_kappa
from .weights import LineageTriple, learn_weights, quantize, sensitivity

__version__ = "0.1.0"

__all__ = [
    "DecodingConfig",
    "DiagnosticTag",
    "EvalMode",
    "HopCategory",
    "HopProfile",
    "JudgeGateway",
    "JudgeRequest",
    "LineageTriple",
    "LoopConfig",
    "LoopJudges",
    "MetricKind",
    "MetricScore",
    "OneShotResult",
    "Placeholder",
    "Plan",
    "PlanEvalError",
    "PlanLineage",
    "PlanParseError",
    "PlanScorecard",
    "QualityBucketRates",
    "RatingTier",
    "ScriptedJudge",
    "Step",
    "ToolKind",
    "ValidationReport",
    "WeightVector",
    "aggregate",
    "append_if_changed",
    "bootstrap_ci",
    "bucket_rates",
    "canonicalize",
    "cohen_kappa",
    "derive_metadata",
    "evaluate_oneshot",
    "extract_placeholders",
    "fleiss_kappa",
    "hop_profile",
    "learn_weights",
    "normalized_average",
    "parse_metric_response",
    "parse_plan",
    "presets",
    "quantize",
    "rating_from_f1",
    "run_loop",
    "score_metric",
    "score_plan",
    "sensitivity",
    "spearman_rho",
    "symmetric_similarity",
    "validate",
    "weighted_kappa",
]
