"""Iterative step-wise evaluator -> plan optimizer refinement loop.

Each pass scans the current plan step by step. The evaluator tags a step
with diagnostic findings; unless the only tag is NO CHANGE, the optimizer
proposes a revised plan. Revisions are appended to the lineage when they
actually change the plan; a revision that changes the plan's length causes
the same index to be re-checked instead of advancing. The loop stops after
a full pass without changes or when the pass cap is hit.

A per-pass budget on optimizer calls keeps the loop finite for every
possible judge behavior (an optimizer that flips plan length at one index
forever would otherwise never finish a pass).
"""

from __future__ import annotations

import enum
import hashlib
import json
import re
from dataclasses import dataclass, field

from .errors import (
    BackendUnavailable,
    FormatUnrecoverable,
    InvalidRevisedPlan,
    JudgeFormatError,
    LoopAborted,
    PlanParseError,
    QuotaExceeded,
    UnknownTag,
)
from .gateway import JudgeGateway, JudgeRequest, preset_for
from .lineage import PlanLineage, append_if_changed
from .metrics import fill_slots, load_asset, split_prompt
from .plan import InvalidPlan, Plan, canonicalize, parse_plan, validate


class DiagnosticTag(enum.Enum):
    INCORRECT_TOOL = "INCORRECT TOOL"
    INCORRECT_PROMPT = "INCORRECT PROMPT"
    COMPLEX_PROMPT = "COMPLEX PROMPT"
    REPEATED_DETAIL = "REPEATED DETAIL"
    MULTI_TOOL_PROMPT = "MULTI-TOOL PROMPT"
    NO_CHANGE = "NO CHANGE"


@dataclass(frozen=True)
class StepDiagnosis:
    step_index: int
    findings: tuple[tuple[str, DiagnosticTag], ...]  # (rationale, tag), at least one

    def __post_init__(self):
        if not self.findings:
            raise ValueError("a diagnosis carries at least one finding")

    @property
    def tags(self) -> set[DiagnosticTag]:
        return {tag for _, tag in self.findings}

    @property
    def no_change(self) -> bool:
        return self.tags == {DiagnosticTag.NO_CHANGE}

    def render(self) -> str:
        lines = [str(self.step_index)]
        for n, (rationale, tag) in enumerate(self.findings, start=1):
            lines.append(f"{n}. {rationale}: {tag.value}")
        return "\n".join(lines)


@dataclass(frozen=True)
class OptimizerEdit:
    change0: str
    change1: str
    new_plan: Plan


@dataclass(frozen=True)
class LoopConfig:
    max_passes: int = 4
    # backstop so a pass always finishes no matter what the judges return
    max_optimizer_calls_per_pass: int = 64

    def __post_init__(self):
        if self.max_passes < 1:
            raise ValueError("max_passes must be >= 1")
        if self.max_optimizer_calls_per_pass < 1:
            raise ValueError("max_optimizer_calls_per_pass must be >= 1")


class StopReason(enum.Enum):
    NO_CHANGE_PASS = "NoChangePass"
    MAX_PASSES = "MaxPasses"


@dataclass
class LoopTrace:
    lineage: PlanLineage
    pass_boundaries: list[int]
    stop_reason: StopReason | None
    events: list[dict]

    def to_json(self) -> str:
        return json.dumps(
            {
                "query_id": self.lineage.query_id,
                "lineage": [json.loads(canonicalize(p)) for p in self.lineage.plans],
                "pass_boundaries": self.pass_boundaries,
                "stop_reason": self.stop_reason.value if self.stop_reason else None,
                "events": self.events,
            },
            ensure_ascii=False,
            indent=2,
        )


@dataclass
class LoopJudges:
    """Evaluator and optimizer backends are configured independently; both
    may point at the same gateway."""

    evaluator: JudgeGateway
    optimizer: JudgeGateway
    evaluator_model: str = "step-evaluator"
    optimizer_model: str = "plan-optimizer"
    seed: int = 0
    max_format_retries: int = 2


# ---------------------------------------------------------------------------
# step-wise evaluator

_TAG_ALTERNATION = "|".join(re.escape(t.value) for t in DiagnosticTag)
_FINDING_RE = re.compile(
    rf"^\s*\d+[.)]\s*(?P<reason>.*?)\s*:\s*(?P<tag>{_TAG_ALTERNATION})\s*$",
    re.IGNORECASE,
)
_NUMBERED_LINE_RE = re.compile(r"^\s*\d+[.)]\s+\S")


def parse_step_diagnosis(text: str, step_index: int) -> StepDiagnosis:
    """Parse `<step>` then numbered `<reasoning>: <TAG>` lines. A numbered
    line whose trailing tag is not in the closed set, or NO CHANGE appearing
    alongside another tag, is an UnknownTag failure."""
    findings: list[tuple[str, DiagnosticTag]] = []
    for line in text.splitlines():
        if not line.strip():
            continue
        m = _FINDING_RE.match(line)
        if m:
            tag = DiagnosticTag(m.group("tag").upper())
            findings.append((m.group("reason").strip(), tag))
            continue
        if _NUMBERED_LINE_RE.match(line) and ":" in line:
            raise UnknownTag(f"unrecognized diagnostic tag in line: {line.strip()!r}")
    if not findings:
        raise JudgeFormatError(f"no diagnostic findings in response: {text!r}")
    tags = {tag for _, tag in findings}
    if DiagnosticTag.NO_CHANGE in tags and len(tags) > 1:
        raise UnknownTag("NO CHANGE cannot co-occur with other tags")
    return StepDiagnosis(step_index=step_index, findings=tuple(findings))


def _render_step(plan: Plan, index: int) -> str:
    s = plan.step(index)
    return f'"{s.index}": ' + json.dumps(
        {"query": s.tool_call_text(), "depends_on": sorted(s.depends_on)}, ensure_ascii=False
    )


def stepwise_evaluate(
    plan: Plan,
    i: int,
    judge: JudgeGateway,
    model_id: str = "step-evaluator",
    seed: int = 0,
    max_format_retries: int = 2,
) -> StepDiagnosis:
    step = plan.step(i)  # KeyError if i is not a step
    deps = "\n".join(_render_step(plan, d) for d in sorted(step.depends_on)) or "(none)"
    system, user = split_prompt(load_asset("step_evaluator.txt"))
    slots = {
        "TOOL_DESCRIPTIONS": load_asset("tool_descriptions.txt"),
        "REFERENCE_EXAMPLES": load_asset("reference_examples.txt"),
        "STEP_INDEX": str(i),
        "STEP": _render_step(plan, i),
        "DEPENDENT_STEPS": deps,
    }
    request = JudgeRequest(
        system_prompt=fill_slots(system, slots),
        user_prompt=fill_slots(user, slots),
        model_id=model_id,
        decoding=preset_for("step-evaluator", seed=seed),
    )

    def validator(raw: str) -> bool:
        try:
            parse_step_diagnosis(raw, i)
            return True
        except JudgeFormatError:
            return False

    try:
        raw = judge.invoke(request, validator=validator, max_format_retries=max_format_retries)
    except FormatUnrecoverable as exc:
        try:
            parse_step_diagnosis(exc.last_response, i)
        except JudgeFormatError as parse_exc:
            raise parse_exc from exc
        raise JudgeFormatError(str(exc)) from exc
    return parse_step_diagnosis(raw, i)


# ---------------------------------------------------------------------------
# plan optimizer

_CHANGE0_RE = re.compile(r'"?CHANGE 0"?\s*:\s*', re.IGNORECASE)
_CHANGE1_RE = re.compile(r'"?CHANGE 1"?\s*:\s*', re.IGNORECASE)
_NEW_PLAN_RE = re.compile(r'"?NEW PLAN STARTS"?\s*:?\s*', re.IGNORECASE)


def parse_optimizer_response(text: str) -> tuple[str, str, Plan]:
    m0, m1, mp = _CHANGE0_RE.search(text), _CHANGE1_RE.search(text), _NEW_PLAN_RE.search(text)
    if not (m0 and m1 and mp) or not (m0.start() < m1.start() < mp.start()):
        raise JudgeFormatError("optimizer response missing CHANGE 0 / CHANGE 1 / NEW PLAN STARTS")
    change0 = text[m0.end() : m1.start()].strip().strip('"')
    change1 = text[m1.end() : mp.start()].strip().strip('"')
    plan_text = text[mp.end() :].strip()
    try:
        plan = parse_plan(plan_text)
    except PlanParseError as exc:
        raise InvalidRevisedPlan(f"revised plan does not parse: {exc}") from exc
    report = validate(plan)
    if not report.valid:
        raise InvalidRevisedPlan(
            "revised plan fails validation: "
            + "; ".join(f"{v.kind}: {v.message}" for v in report.violations)
        )
    return change0, change1, plan


def optimize_step(
    plan: Plan,
    i: int,
    diagnosis: StepDiagnosis,
    query: str,
    judge: JudgeGateway,
    model_id: str = "plan-optimizer",
    seed: int = 0,
    max_format_retries: int = 2,
) -> OptimizerEdit:
    system, user = split_prompt(load_asset("optimizer.txt"))
    slots = {
        "TOOL_DESCRIPTIONS": load_asset("tool_descriptions.txt"),
        "QUERY": query,
        "PLAN": canonicalize(plan),
        "DIAGNOSIS": diagnosis.render(),
    }
    request = JudgeRequest(
        system_prompt=fill_slots(system, slots),
        user_prompt=fill_slots(user, slots),
        model_id=model_id,
        decoding=preset_for("plan-optimizer", seed=seed),
    )

    def validator(raw: str) -> bool:
        try:
            parse_optimizer_response(raw)
            return True
        except (JudgeFormatError, InvalidRevisedPlan):
            return False

    try:
        raw = judge.invoke(request, validator=validator, max_format_retries=max_format_retries)
    except FormatUnrecoverable as exc:
        try:
            parse_optimizer_response(exc.last_response)
        except (JudgeFormatError, InvalidRevisedPlan) as parse_exc:
            raise parse_exc from exc
        raise JudgeFormatError(str(exc)) from exc
    change0, change1, new_plan = parse_optimizer_response(raw)
    return OptimizerEdit(change0=change0, change1=change1, new_plan=new_plan)


# ---------------------------------------------------------------------------
# the loop


def _default_query_id(query: str) -> str:
    return "q-" + hashlib.sha256(query.encode("utf-8")).hexdigest()[:12]


def run_loop(
    initial: Plan,
    query: str,
    judges: LoopJudges,
    config: LoopConfig | None = None,
    query_id: str | None = None,
) -> LoopTrace:
    """Refine a plan to convergence, producing the lineage and a per-step
    event log. Judge transport failures abort the loop; the partial trace
    travels with the raised LoopAborted."""
    config = config or LoopConfig()
    report = validate(initial)
    if not report.valid:
        raise InvalidPlan("initial plan fails validation: " + "; ".join(v.kind for v in report.violations))

    lineage = PlanLineage(query_id=query_id or _default_query_id(query), plans=[initial])
    events: list[dict] = []
    boundaries: list[int] = []
    trace = LoopTrace(lineage=lineage, pass_boundaries=boundaries, stop_reason=None, events=events)

    current = initial
    pass_no = 0
    changed = True
    try:
        while changed and pass_no < config.max_passes:
            changed = False
            appended_this_pass = 0
            optimizer_calls = 0
            i = 1
            length = len(current)
            while i <= length:
                diagnosis = stepwise_evaluate(
                    current,
                    i,
                    judges.evaluator,
                    model_id=judges.evaluator_model,
                    seed=judges.seed,
                    max_format_retries=judges.max_format_retries,
                )
                event = {
                    "pass": pass_no + 1,
                    "index": i,
                    "tags": sorted(t.value for t in diagnosis.tags),
                    "appended": False,
                    "len_before": length,
                    "len_after": length,
                    "action": "advance",
                }
                if diagnosis.no_change:
                    events.append(event)
                    i += 1
                    continue
                if optimizer_calls >= config.max_optimizer_calls_per_pass:
                    event["action"] = "pass-budget-exhausted"
                    events.append(event)
                    break
                optimizer_calls += 1
                try:
                    edit = optimize_step(
                        current,
                        i,
                        diagnosis,
                        query,
                        judges.optimizer,
                        model_id=judges.optimizer_model,
                        seed=judges.seed,
                        max_format_retries=judges.max_format_retries,
                    )
                except InvalidRevisedPlan:
                    # broken revision is discarded; the step counts as unchanged
                    event["action"] = "invalid-revision-discarded"
                    events.append(event)
                    i += 1
                    continue
                appended = append_if_changed(lineage, edit.new_plan)
                if not appended:
                    # optimizer no-op (possibly a key reordering): advance
                    events.append(event)
                    i += 1
                    continue
                appended_this_pass += 1
                changed = True
                current = edit.new_plan
                event["appended"] = True
                event["len_after"] = len(current)
                if len(current) == length:
                    events.append(event)
                    i += 1
                else:
                    length = len(current)
                    i = min(i, length)  # re-check the same index; clamp if the plan shrank
                    event["action"] = "recheck"
                    events.append(event)
            boundaries.append(appended_this_pass)
            pass_no += 1
    except (JudgeFormatError, BackendUnavailable, QuotaExceeded) as exc:
        raise LoopAborted(f"judge failure during pass {pass_no + 1}: {exc}", trace, exc) from exc

    trace.stop_reason = StopReason.NO_CHANGE_PASS if not changed else StopReason.MAX_PASSES
    return trace
