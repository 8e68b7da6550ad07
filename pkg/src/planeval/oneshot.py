"""One-shot plan-to-reference evaluation.

A judge compares a candidate plan with the reference plan, reporting
step-level precision/recall plus format, dependency, and placeholder checks
on the candidate alone. The seven-tier rating is recomputed locally from
the F1 and format verdict; the judge's own rating is kept for audit but
never adopted.
"""

from __future__ import annotations

import enum
import functools
import json
from dataclasses import dataclass, field

from .errors import EmptyInput, FormatUnrecoverable, JudgeFormatError, MissingReference, PlanParseError
from .gateway import JudgeGateway, JudgeRequest, preset_for
from .metrics import fill_slots, load_asset, split_prompt
from .plan import Plan, canonicalize, parse_plan


@functools.total_ordering
class RatingTier(enum.Enum):
    EXTREMELY_BAD = (0, "Extremely Bad")
    VERY_BAD = (1, "Very Bad")
    BAD = (2, "Bad")
    ACCEPTABLE = (3, "Acceptable")
    GOOD = (4, "Good")
    VERY_GOOD = (5, "Very Good")
    EXTREMELY_GOOD = (6, "Extremely Good")

    @property
    def rank(self) -> int:
        return self.value[0]

    @property
    def label(self) -> str:
        return self.value[1]

    def __lt__(self, other: "RatingTier") -> bool:
        return self.rank < other.rank

    @classmethod
    def from_label(cls, label: str) -> "RatingTier":
        for tier in cls:
            if tier.label.lower() == label.strip().lower():
                return tier
        raise ValueError(f"unknown rating tier {label!r}")


TIERS_ASCENDING: tuple[RatingTier, ...] = tuple(sorted(RatingTier))


def rating_from_f1(f1: float, json_ok: bool) -> RatingTier:
    """Strict thresholds; a plan that is not valid JSON is Extremely Bad
    regardless of F1."""
    if not json_ok:
        return RatingTier.EXTREMELY_BAD
    if f1 > 0.95:
        return RatingTier.EXTREMELY_GOOD
    if f1 > 0.85:
        return RatingTier.VERY_GOOD
    if f1 > 0.75:
        return RatingTier.GOOD
    if f1 > 0.60:
        return RatingTier.ACCEPTABLE
    if f1 > 0.45:
        return RatingTier.BAD
    if f1 > 0.30:
        return RatingTier.VERY_BAD
    return RatingTier.EXTREMELY_BAD


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class OneShotResult:
    precision: float
    recall: float
    f1: float
    format_ok: bool
    format_fraction: float
    dependencies_ok_fraction: float
    placeholders_ok_fraction: float
    rating: RatingTier
    rationale: dict[str, str] = field(default_factory=dict)
    judge_rating: RatingTier | None = None  # as self-reported, audit only


@dataclass(frozen=True)
class QualityBucketRates:
    """Nested rating aggregates, as percentages: A+ is the top two tiers,
    A adds Good, B adds Acceptable."""

    a_plus: float
    a: float
    b: float


_SCORE_KEYS = (
    "precision",
    "recall",
    "f1_score",
    "format_correctness",
    "dependencies",
    "placeholders",
    "rating",
)


def parse_oneshot_response(text: str) -> tuple[dict[str, str], dict]:
    """The judge must return one JSON object with rationale and score blocks
    naming all seven dimensions."""
    start, end = text.find("{"), text.rfind("}")
    if start == -1 or end <= start:
        raise JudgeFormatError("one-shot response contains no JSON object")
    try:
        obj = json.loads(text[start : end + 1])
    except json.JSONDecodeError as exc:
        raise JudgeFormatError(f"one-shot response is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict) or "rationale" not in obj or "score" not in obj:
        raise JudgeFormatError("one-shot response must carry rationale and score blocks")
    rationale, score = obj["rationale"], obj["score"]
    if not isinstance(rationale, dict) or not isinstance(score, dict):
        raise JudgeFormatError("rationale and score must be objects")
    missing = [k for k in _SCORE_KEYS if k not in score]
    if missing:
        raise JudgeFormatError(f"one-shot score block missing {missing}")
    for key in _SCORE_KEYS[:-1]:
        v = score[key]
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not (0 <= float(v) <= 1):
            raise JudgeFormatError(f"score field {key}={v!r} is not a fraction in [0, 1]")
    RatingTier.from_label(str(score["rating"]))
    return {k: str(v) for k, v in rationale.items()}, score


def _oneshot_validator(raw_text: str) -> bool:
    try:
        parse_oneshot_response(raw_text)
        return True
    except (JudgeFormatError, ValueError):
        return False


def _unparseable_result() -> OneShotResult:
    return OneShotResult(
        precision=0.0,
        recall=0.0,
        f1=0.0,
        format_ok=False,
        format_fraction=0.0,
        dependencies_ok_fraction=0.0,
        placeholders_ok_fraction=0.0,
        rating=RatingTier.EXTREMELY_BAD,
        rationale={"format_correctness": "candidate plan is not parseable"},
    )


def evaluate_oneshot(
    candidate: Plan | str,
    reference: Plan,
    query: str,
    judge: JudgeGateway,
    model_id: str = "oneshot-judge",
    seed: int = 0,
    max_format_retries: int = 2,
) -> OneShotResult:
    """Judge the candidate against the reference. Unparseable candidate text
    short-circuits to Extremely Bad without a judge call."""
    if reference is None:
        raise MissingReference("one-shot evaluation needs a reference plan")
    if isinstance(candidate, str):
        try:
            candidate = parse_plan(candidate)
        except PlanParseError:
            return _unparseable_result()

    system, user = split_prompt(load_asset("oneshot.txt"))
    slots = {
        "TOOL_DESCRIPTIONS": load_asset("tool_descriptions.txt"),
        "REFERENCE_EXAMPLES": load_asset("reference_examples.txt"),
        "CANDIDATE_PLAN": canonicalize(candidate),
        "REFERENCE_PLAN": canonicalize(reference),
        "QUERY": query,
    }
    request = JudgeRequest(
        system_prompt=fill_slots(system, slots),
        user_prompt=fill_slots(user, slots),
        model_id=model_id,
        decoding=preset_for("one-shot-judge", seed=seed),
    )
    try:
        raw_text = judge.invoke(request, validator=_oneshot_validator, max_format_retries=max_format_retries)
    except FormatUnrecoverable as exc:
        raise JudgeFormatError(f"one-shot judge response unusable after retries: {exc}") from exc
    rationale, score = parse_oneshot_response(raw_text)

    precision = float(score["precision"])
    recall = float(score["recall"])
    f1 = f1_score(precision, recall)
    json_ok = float(score["format_correctness"]) > 0
    return OneShotResult(
        precision=precision,
        recall=recall,
        f1=f1,
        format_ok=json_ok,
        format_fraction=float(score["format_correctness"]),
        dependencies_ok_fraction=float(score["dependencies"]),
        placeholders_ok_fraction=float(score["placeholders"]),
        rating=rating_from_f1(f1, json_ok),
        rationale=rationale,
        judge_rating=RatingTier.from_label(str(score["rating"])),
    )


def bucket_rates(tiers: list[RatingTier]) -> QualityBucketRates:
    if not tiers:
        raise EmptyInput("bucket_rates needs at least one rating")
    n = len(tiers)
    a_plus = sum(1 for t in tiers if t >= RatingTier.VERY_GOOD)
    a = a_plus + sum(1 for t in tiers if t is RatingTier.GOOD)
    b = a + sum(1 for t in tiers if t is RatingTier.ACCEPTABLE)
    return QualityBucketRates(a_plus=100.0 * a_plus / n, a=100.0 * a / n, b=100.0 * b / n)


def symmetric_similarity(
    plan_a: Plan | str,
    plan_b: Plan | str,
    query: str,
    judge: JudgeGateway,
    **kwargs,
) -> tuple[float, RatingTier]:
    """Order-free closeness of two plans: the one-shot evaluator runs in both
    directions and the directional F1 scores are averaged. The format gate
    passes only when both plans pass format checks."""

    def as_plan(p):
        if isinstance(p, str):
            try:
                return parse_plan(p)
            except PlanParseError:
                return None
        return p

    a, b = as_plan(plan_a), as_plan(plan_b)
    if a is None or b is None:
        return 0.0, RatingTier.EXTREMELY_BAD
    forward = evaluate_oneshot(a, b, query, judge, **kwargs)
    backward = evaluate_oneshot(b, a, query, judge, **kwargs)
    # rounding shields the strict tier thresholds from representation noise
    # ((0.8 + 0.9) / 2 lands one ulp above 0.85 in binary floating point)
    score = round((forward.f1 + backward.f1) / 2, 12)
    gate = forward.format_ok and backward.format_ok
    return score, rating_from_f1(score, gate)
