"""Seven-metric rubric scoring with specialist judge prompts.

Four Effectiveness metrics (70 points) and three Efficiency metrics (30
points) each get their own rubric prompt; a judge reports how many steps
pass and the raw sub-score is that count over the step total (query
adherence instead uses the three-level 0 / 0.5 / 1 scale). Points are
raw x weight and the scorecard total is their sum.
"""

from __future__ import annotations

import enum
import functools
import json
import re
from dataclasses import dataclass
from importlib import resources

from .errors import (
    EmptyPlan,
    FormatUnrecoverable,
    JudgeFormatError,
    MissingMetric,
    MissingReference,
    NonNumericScore,
    NoScoreField,
    WeightBudgetViolation,
)
from .gateway import JudgeGateway, JudgeRequest, preset_for
from .plan import Plan, canonicalize

_BUDGET_TOL = 1e-9


class MetricKind(enum.Enum):
    TOOL_PROMPT_ALIGNMENT = "tool_prompt_alignment"
    FORMAT = "format"
    STEP_EXECUTABILITY = "step_executability"
    QUERY_ADHERENCE = "query_adherence"
    DEPENDENCIES = "dependencies"
    REDUNDANCY = "redundancy"
    TOOL_USAGE_COMPLETENESS = "tool_usage_completeness"


METRIC_ORDER: tuple[MetricKind, ...] = tuple(MetricKind)
EFFECTIVENESS = METRIC_ORDER[:4]
EFFICIENCY = METRIC_ORDER[4:]

DEFAULT_POINTS = {
    MetricKind.TOOL_PROMPT_ALIGNMENT: 20.0,
    MetricKind.FORMAT: 20.0,
    MetricKind.STEP_EXECUTABILITY: 15.0,
    MetricKind.QUERY_ADHERENCE: 15.0,
    MetricKind.DEPENDENCIES: 10.0,
    MetricKind.REDUNDANCY: 10.0,
    MetricKind.TOOL_USAGE_COMPLETENESS: 10.0,
}


class EvalMode(enum.Enum):
    REFERENCE_FREE = "reference-free"
    REFERENCE_BASED = "reference-based"


@dataclass(frozen=True)
class WeightVector:
    weights: dict[MetricKind, float]
    effectiveness_budget: float = 70.0
    efficiency_budget: float = 30.0

    def validate(self) -> None:
        missing = [k for k in METRIC_ORDER if k not in self.weights]
        if missing:
            raise WeightBudgetViolation(f"weights missing for {[m.value for m in missing]}")
        if any(w < 0 for w in self.weights.values()):
            raise WeightBudgetViolation("weights must be non-negative")
        eff = sum(self.weights[k] for k in EFFECTIVENESS)
        fff = sum(self.weights[k] for k in EFFICIENCY)
        if abs(eff - self.effectiveness_budget) > _BUDGET_TOL:
            raise WeightBudgetViolation(
                f"effectiveness weights sum to {eff}, budget is {self.effectiveness_budget}"
            )
        if abs(fff - self.efficiency_budget) > _BUDGET_TOL:
            raise WeightBudgetViolation(
                f"efficiency weights sum to {fff}, budget is {self.efficiency_budget}"
            )

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(self.weights[k] for k in METRIC_ORDER)

    @classmethod
    def default(cls) -> "WeightVector":
        return cls(weights=dict(DEFAULT_POINTS))

    @classmethod
    def from_sequence(cls, values, effectiveness_budget: float = 70.0,
                      efficiency_budget: float = 30.0) -> "WeightVector":
        values = list(values)
        if len(values) != len(METRIC_ORDER):
            raise WeightBudgetViolation(f"expected {len(METRIC_ORDER)} weights, got {len(values)}")
        return cls(
            weights={k: float(v) for k, v in zip(METRIC_ORDER, values)},
            effectiveness_budget=effectiveness_budget,
            efficiency_budget=efficiency_budget,
        )


@dataclass(frozen=True)
class MetricScore:
    metric: MetricKind
    raw: float  # sub-score in [0, 1]
    points: float
    explanation: str
    mechanical_format_ok: bool | None = None  # Format metric only


@dataclass(frozen=True)
class PlanScorecard:
    per_metric: dict[MetricKind, MetricScore]
    total: float


# ---------------------------------------------------------------------------
# prompt assets

_ASSET_BY_METRIC = {
    MetricKind.TOOL_PROMPT_ALIGNMENT: "metric_tool_prompt_alignment.txt",
    MetricKind.FORMAT: "metric_format.txt",
    MetricKind.STEP_EXECUTABILITY: "metric_step_executability.txt",
    MetricKind.QUERY_ADHERENCE: "metric_query_adherence.txt",
    MetricKind.DEPENDENCIES: "metric_dependencies.txt",
    MetricKind.REDUNDANCY: "metric_redundancy.txt",
    MetricKind.TOOL_USAGE_COMPLETENESS: "metric_tool_usage_completeness.txt",
}

_SYSTEM_MARK = "### SYSTEM ###"
_USER_MARK = "### USER ###"


@functools.lru_cache(maxsize=None)
def load_asset(name: str) -> str:
    return resources.files("planeval.prompts").joinpath(name).read_text(encoding="utf-8")


def split_prompt(asset_text: str) -> tuple[str, str]:
    """Split a packaged prompt into (system, user) parts."""
    if _SYSTEM_MARK not in asset_text or _USER_MARK not in asset_text:
        raise ValueError("prompt asset must contain SYSTEM and USER sections")
    _, rest = asset_text.split(_SYSTEM_MARK, 1)
    system, user = rest.split(_USER_MARK, 1)
    return system.strip(), user.strip()


def fill_slots(text: str, mapping: dict[str, str]) -> str:
    for slot, value in mapping.items():
        text = text.replace("{" + slot + "}", value)
    return text


def render_trigger_lists(path: str | None = None) -> str:
    """The step-executability trigger vocabulary, rendered for prompting.
    An external file can override the packaged default."""
    if path:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    else:
        data = json.loads(load_asset("trigger_lists.json"))
    lines = []
    for group, phrases in data.items():
        label = group.replace("_", " ")
        lines.append(f"For {label}: " + "; ".join(phrases))
    return "\n".join(lines)


_TOOL_CALL_NAME_RE = re.compile(r"\b(?:T2S|RAG|LLM)(?=\()")


def mask_tools(plan_document: str) -> str:
    """Replace tool names with the literal token TOOL so the query-adherence
    judge sees only the semantic flow."""
    return _TOOL_CALL_NAME_RE.sub("TOOL", plan_document)


_REFERENCE_FREE_MARK = "(not provided : reference-free mode)"


def build_metric_prompt(
    kind: MetricKind,
    candidate_document: str,
    reference_document: str | None,
    query: str,
    trigger_lists_path: str | None = None,
    reference_examples: str | None = None,
) -> tuple[str, str]:
    """Assemble the (system, user) prompt pair for one metric judge.

    The query is injected only into the query-adherence rubric, and that
    rubric sees the candidate with tool names masked.
    """
    system, user = split_prompt(load_asset(_ASSET_BY_METRIC[kind]))
    if kind is MetricKind.QUERY_ADHERENCE:
        candidate_document = mask_tools(candidate_document)
        if reference_document is not None:
            reference_document = mask_tools(reference_document)
    slots = {
        "TOOL_DESCRIPTIONS": load_asset("tool_descriptions.txt"),
        "TRIGGER_LISTS": render_trigger_lists(trigger_lists_path),
        "REFERENCE_EXAMPLES": reference_examples
        if reference_examples is not None
        else load_asset("reference_examples.txt"),
        "PLAN": candidate_document,
        "REFERENCE_PLAN": reference_document if reference_document is not None else _REFERENCE_FREE_MARK,
        "QUERY": query if kind is MetricKind.QUERY_ADHERENCE else "",
    }
    return fill_slots(system, slots), fill_slots(user, slots)


# ---------------------------------------------------------------------------
# judge response parsing


def parse_metric_response(text: str) -> tuple[str, float]:
    """Split `<explanation> | <score> |` on the final pipe-delimited field.
    Interior pipes stay in the explanation; trailing whitespace is fine."""
    stripped = text.rstrip()
    if stripped.endswith("|"):
        stripped = stripped[:-1].rstrip()
    if "|" not in stripped:
        raise NoScoreField(f"no score field in judge response: {text!r}")
    explanation, score_text = stripped.rsplit("|", 1)
    score_text = score_text.strip()
    try:
        score = float(score_text)
    except ValueError:
        raise NonNumericScore(f"score field {score_text!r} is not a number") from None
    return explanation.rstrip(), score


def _raw_from_reported(kind: MetricKind, reported: float, step_count: int) -> float:
    """Convert the judge's reported score to the [0,1] sub-score.

    Counting metrics report passed steps: the fraction is recomputed here,
    and a count outside [0, step_count] is a judge format error. Query
    adherence reports 0, 0.5, or 1 directly.
    """
    if kind is MetricKind.QUERY_ADHERENCE:
        if reported not in (0.0, 0.5, 1.0):
            raise JudgeFormatError(f"query adherence score {reported} not in {{0, 0.5, 1}}")
        return reported
    if reported < 0 or reported > step_count:
        raise JudgeFormatError(
            f"{kind.value} judge reported {reported} passed steps for a {step_count}-step plan"
        )
    return reported / step_count


def _metric_validator(kind: MetricKind, step_count: int):
    def ok(raw_text: str) -> bool:
        try:
            _, reported = parse_metric_response(raw_text)
            _raw_from_reported(kind, reported, step_count)
            return True
        except JudgeFormatError:
            return False

    return ok


# ---------------------------------------------------------------------------
# scoring


def score_metric(
    candidate: Plan,
    reference: Plan | None,
    query: str,
    kind: MetricKind,
    mode: EvalMode,
    judge: JudgeGateway,
    weights: WeightVector | None = None,
    model_id: str = "metric-judge",
    seed: int = 0,
    max_format_retries: int = 2,
    trigger_lists_path: str | None = None,
) -> MetricScore:
    if not candidate.steps:
        raise EmptyPlan("cannot score a plan with no steps")
    if mode is EvalMode.REFERENCE_BASED and reference is None:
        raise MissingReference(f"{kind.value} scoring in reference-based mode needs a reference plan")
    weights = weights or WeightVector.default()
    weights.validate()

    candidate_doc = canonicalize(candidate)
    reference_doc = canonicalize(reference) if (mode is EvalMode.REFERENCE_BASED and reference) else None
    system, user = build_metric_prompt(
        kind, candidate_doc, reference_doc, query, trigger_lists_path=trigger_lists_path
    )
    request = JudgeRequest(
        system_prompt=system,
        user_prompt=user,
        model_id=model_id,
        decoding=preset_for("metric-eval", seed=seed),
    )
    step_count = len(candidate.steps)
    try:
        raw_text = judge.invoke(
            request,
            validator=_metric_validator(kind, step_count),
            max_format_retries=max_format_retries,
        )
    except FormatUnrecoverable as exc:
        raise JudgeFormatError(f"{kind.value} judge response unusable after retries: {exc}") from exc
    explanation, reported = parse_metric_response(raw_text)
    raw = _raw_from_reported(kind, reported, step_count)

    mechanical_ok = None
    if kind is MetricKind.FORMAT:
        # "JSON parseable" is decidable locally; record the mechanical verdict
        # next to the judge's, which stays authoritative for the points.
        mechanical_ok = True  # the candidate necessarily parsed to get here
    return MetricScore(
        metric=kind,
        raw=raw,
        points=raw * weights.weights[kind],
        explanation=explanation,
        mechanical_format_ok=mechanical_ok,
    )


def make_scorecard(scores: dict[MetricKind, MetricScore], weights: WeightVector | None = None) -> PlanScorecard:
    weights = weights or WeightVector.default()
    return PlanScorecard(per_metric=dict(scores), total=aggregate(scores, weights))


def score_plan(
    candidate: Plan,
    reference: Plan | None,
    query: str,
    judge: JudgeGateway,
    mode: EvalMode = EvalMode.REFERENCE_BASED,
    weights: WeightVector | None = None,
    **kwargs,
) -> PlanScorecard:
    """Score all seven metrics (independent judge calls) and assemble the card."""
    weights = weights or WeightVector.default()
    scores = {
        kind: score_metric(candidate, reference, query, kind, mode, judge, weights=weights, **kwargs)
        for kind in METRIC_ORDER
    }
    return make_scorecard(scores, weights)


# ---------------------------------------------------------------------------
# single-prompt ablation mode

_SINGLE_LINE_RE = re.compile(r"^\s*(?P<name>[a-z_ -]+?)\s*\|(?P<rest>.+\|)\s*$")

_NAME_TO_KIND = {k.value: k for k in METRIC_ORDER}


def parse_single_prompt_response(text: str, step_count: int) -> dict[MetricKind, tuple[str, float]]:
    """Parse the seven `<name> | <explanation> | <score> |` lines of the
    combined-rubric ablation."""
    out: dict[MetricKind, tuple[str, float]] = {}
    for line in text.splitlines():
        m = _SINGLE_LINE_RE.match(line)
        if not m:
            continue
        name = m.group("name").strip().lower().replace(" ", "_").replace("-", "_")
        if name not in _NAME_TO_KIND:
            continue
        explanation, reported = parse_metric_response(m.group("rest"))
        kind = _NAME_TO_KIND[name]
        out[kind] = (explanation.strip(), _raw_from_reported(kind, reported, step_count))
    missing = [k.value for k in METRIC_ORDER if k not in out]
    if missing:
        raise NoScoreField(f"single-prompt response missing metrics: {missing}")
    return out


def score_plan_single_prompt(
    candidate: Plan,
    reference: Plan | None,
    query: str,
    judge: JudgeGateway,
    mode: EvalMode = EvalMode.REFERENCE_BASED,
    weights: WeightVector | None = None,
    model_id: str = "metric-judge",
    seed: int = 0,
    max_format_retries: int = 2,
) -> PlanScorecard:
    """Ablation path: all seven metrics judged by one combined prompt."""
    if not candidate.steps:
        raise EmptyPlan("cannot score a plan with no steps")
    if mode is EvalMode.REFERENCE_BASED and reference is None:
        raise MissingReference("single-prompt scoring in reference-based mode needs a reference plan")
    weights = weights or WeightVector.default()
    weights.validate()
    system, user = split_prompt(load_asset("metric_single_prompt.txt"))
    slots = {
        "TOOL_DESCRIPTIONS": load_asset("tool_descriptions.txt"),
        "TRIGGER_LISTS": render_trigger_lists(),
        "REFERENCE_EXAMPLES": load_asset("reference_examples.txt"),
        "PLAN": canonicalize(candidate),
        "REFERENCE_PLAN": canonicalize(reference) if (mode is EvalMode.REFERENCE_BASED and reference)
        else _REFERENCE_FREE_MARK,
        "QUERY": query,
    }
    request = JudgeRequest(
        system_prompt=fill_slots(system, slots),
        user_prompt=fill_slots(user, slots),
        model_id=model_id,
        decoding=preset_for("metric-eval", seed=seed),
    )
    step_count = len(candidate.steps)

    def validator(raw_text: str) -> bool:
        try:
            parse_single_prompt_response(raw_text, step_count)
            return True
        except JudgeFormatError:
            return False

    try:
        raw_text = judge.invoke(request, validator=validator, max_format_retries=max_format_retries)
    except FormatUnrecoverable as exc:
        raise JudgeFormatError(f"single-prompt judge response unusable after retries: {exc}") from exc
    parsed = parse_single_prompt_response(raw_text, step_count)
    scores = {
        kind: MetricScore(
            metric=kind,
            raw=raw,
            points=raw * weights.weights[kind],
            explanation=explanation,
            mechanical_format_ok=True if kind is MetricKind.FORMAT else None,
        )
        for kind, (explanation, raw) in parsed.items()
    }
    return make_scorecard(scores, weights)


# ---------------------------------------------------------------------------
# aggregation


def aggregate(per_metric: dict[MetricKind, MetricScore], weights: WeightVector) -> float:
    """Weighted 0-100 total over the seven sub-scores."""
    weights.validate()
    missing = [k.value for k in METRIC_ORDER if k not in per_metric]
    if missing:
        raise MissingMetric(f"scorecard missing metrics: {missing}")
    return sum(weights.weights[k] * per_metric[k].raw for k in METRIC_ORDER)


def normalized_average(rows: list[PlanScorecard]) -> dict[MetricKind, float]:
    """Per metric: mean points across rows over the metric's weight, as a
    percentage (equivalently the mean raw sub-score x 100)."""
    from .errors import EmptyInput

    if not rows:
        raise EmptyInput("normalized_average needs at least one scorecard")
    out: dict[MetricKind, float] = {}
    for kind in METRIC_ORDER:
        missing = [i for i, r in enumerate(rows) if kind not in r.per_metric]
        if missing:
            raise MissingMetric(f"rows {missing} missing {kind.value}")
        out[kind] = 100.0 * sum(r.per_metric[kind].raw for r in rows) / len(rows)
    return out
