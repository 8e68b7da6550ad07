"""Exception types shared across the package.

Every error raised by planeval derives from PlanEvalError so callers can
catch the whole family with one clause. Names mirror the failure they
signal rather than carrying an Error suffix.
"""

from __future__ import annotations

from dataclasses import dataclass


class PlanEvalError(Exception):
    """Base class for all planeval errors."""


# ---------------------------------------------------------------------------
# plan parsing / validation


@dataclass(frozen=True)
class ParseIssue:
    """One problem found while parsing a plan document.

    kind is one of: NotParseable, UnknownTool, BadStepKey, MissingField,
    MalformedToolCall.
    """

    kind: str
    where: str
    message: str

    def __str__(self) -> str:
        return f"{self.kind} at {self.where}: {self.message}"


class PlanParseError(PlanEvalError):
    def __init__(self, issues: list[ParseIssue]):
        self.issues = issues
        super().__init__("; ".join(str(i) for i in issues))

    @classmethod
    def single(cls, kind: str, where: str, message: str) -> "PlanParseError":
        return cls([ParseIssue(kind, where, message)])

    @property
    def kinds(self) -> set[str]:
        return {i.kind for i in self.issues}


class InvalidPlan(PlanEvalError):
    """Operation requires a plan that passes validation."""


# ---------------------------------------------------------------------------
# lineage


class BoundaryMismatch(PlanEvalError):
    """Pass boundaries do not account for every lineage revision."""


# ---------------------------------------------------------------------------
# judge gateway


class BackendUnavailable(PlanEvalError):
    """Transport retries exhausted with no successful response."""


class FormatUnrecoverable(PlanEvalError):
    """Response validator was never satisfied within the retry budget."""

    def __init__(self, message: str, last_response: str = ""):
        super().__init__(message)
        self.last_response = last_response


class QuotaExceeded(PlanEvalError):
    """Backend kept signalling rate/quota exhaustion."""


class UnknownRole(PlanEvalError):
    """No decoding preset exists for the requested role."""


# ---------------------------------------------------------------------------
# metric evaluation


class JudgeFormatError(PlanEvalError):
    """Judge output did not match the required response format."""


class NoScoreField(JudgeFormatError):
    pass


class NonNumericScore(JudgeFormatError):
    pass


class MissingReference(PlanEvalError):
    """Reference-based scoring invoked without a reference plan."""


class EmptyPlan(PlanEvalError):
    """Scoring a plan with no steps is undefined."""


class MissingMetric(PlanEvalError):
    """Aggregation needs all seven metric scores."""


class WeightBudgetViolation(PlanEvalError):
    """Weight vector does not respect the group point budgets."""


# ---------------------------------------------------------------------------
# refinement loop


class UnknownTag(JudgeFormatError):
    """Step evaluator emitted a tag outside the closed set (or an illegal
    NO CHANGE co-occurrence)."""


class InvalidRevisedPlan(PlanEvalError):
    """Optimizer output never yielded a parseable, valid plan."""


class LoopAborted(PlanEvalError):
    """Judge failure aborted the loop; the partial trace is preserved."""

    def __init__(self, message: str, trace, cause: Exception):
        super().__init__(message)
        self.trace = trace
        self.cause = cause


# ---------------------------------------------------------------------------
# weight learning


class EmptyTriples(PlanEvalError):
    pass


class DegenerateGrid(PlanEvalError):
    pass


class InfeasibleLattice(PlanEvalError):
    pass


class TooFewPlanners(PlanEvalError):
    pass


# ---------------------------------------------------------------------------
# agreement statistics


class LengthMismatch(PlanEvalError):
    pass


class EmptySeries(PlanEvalError):
    pass


class LabelOutOfRange(PlanEvalError):
    pass


class RowSumMismatch(PlanEvalError):
    pass


class ZeroVariance(PlanEvalError):
    pass


class EmptyItems(PlanEvalError):
    pass


class EmptyInput(PlanEvalError):
    pass


# ---------------------------------------------------------------------------
# dataset ingestion


class MissingColumn(PlanEvalError):
    pass


class DuplicateTripleKey(PlanEvalError):
    pass


class InvalidBestPlan(PlanEvalError):
    pass
