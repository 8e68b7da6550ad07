from __future__ import annotations

import json
import re

import pytest

from planeval.gateway import FunctionBackend, JudgeGateway, JudgeRequest
from planeval.plan import Plan, Step, ToolKind, parse_plan

# The six-step reference plan used across the suite: a filter step feeding a
# transcript analysis, an id-extraction step, two parallel QA rollups, and a
# final synthesis. Depth profile pinned in the hop tests.
SIX_STEP_PLAN_TEXT = """{
  "1": {"query": "T2S([], 'Fetch interaction_ids of unresolved calls')", "depends_on": []},
  "2": {"query": "RAG((1), 'Fetch calls where the sentiment transitioned from negative to positive within the transcript')", "depends_on": [1]},
  "3": {"query": "LLM('Extract interaction_ids from Data Insights in (2).')", "depends_on": [2]},
  "4": {"query": "T2S((3), 'Retrieve QA scores for resolution procedures in these calls.')", "depends_on": [3]},
  "5": {"query": "T2S((3), 'Retrieve QA scores for professionalism in these calls.')", "depends_on": [3]},
  "6": {"query": "LLM('Compare QA scores from (4) vs. (5) in light of unresolved status and sentiment transitions.')", "depends_on": [4,5]}
}"""

# The same plan in the lenient dialect: unquoted keys, "step" field, bare
# tool calls, double-quoted prompts, trailing comma.
SIX_STEP_PLAN_DIALECT = """{
  1: {"step": T2S([], "Fetch interaction_ids of unresolved calls"), "depends_on": []},
  2: {"step": RAG((1), "Fetch calls where the sentiment transitioned from negative to positive within the transcript"), "depends_on": [1]},
  3: {"step": LLM("Extract interaction_ids from Data Insights in (2)."), "depends_on": [2]},
  4: {"step": T2S((3), "Retrieve QA scores for resolution procedures in these calls."), "depends_on": [3]},
  5: {"step": T2S((3), "Retrieve QA scores for professionalism in these calls."), "depends_on": [3]},
  6: {"step": LLM("Compare QA scores from (4) vs. (5) in light of unresolved status and sentiment transitions."), "depends_on": [4, 5]},
}"""

TWO_STEP_PLAN_TEXT = (
    '{"1": {"query": "T2S([], \'Fetch call_ids of refund calls\')", "depends_on": []}, '
    '"2": {"query": "RAG((1), \'What are customers most unhappy about?\')", "depends_on": [1]}}'
)


@pytest.fixture
def six_step_plan() -> Plan:
    return parse_plan(SIX_STEP_PLAN_TEXT)


@pytest.fixture
def two_step_plan() -> Plan:
    return parse_plan(TWO_STEP_PLAN_TEXT)


def make_step(index: int, tool: ToolKind, prompt: str, deps=(), arg_refs=None) -> Step:
    if arg_refs is None:
        arg_refs = () if tool is ToolKind.LLM else tuple(sorted(deps))
    return Step(
        index=index,
        tool=tool,
        arg_refs=tuple(arg_refs),
        prompt=prompt,
        depends_on=frozenset(deps),
    )


# ---------------------------------------------------------------------------
# deterministic judge backends

_PLAN_SECTION_RE = re.compile(
    r"Plan to be evaluated:\n(?P<doc>.+?)(?:\n\nBest possible plan:|\Z)", re.DOTALL
)


def _step_count_of(user_prompt: str) -> int:
    m = _PLAN_SECTION_RE.search(user_prompt)
    assert m, f"no plan section in prompt: {user_prompt[:200]}"
    return len(parse_plan(m.group("doc").strip()))


def oneshot_response(precision=1.0, recall=1.0, fmt=1.0, deps=1.0, ph=1.0, rating="Extremely Good"):
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return json.dumps(
        {
            "rationale": {k: "scripted" for k in (
                "precision", "recall", "f1_score", "format_correctness",
                "dependencies", "placeholders", "rating")},
            "score": {
                "precision": precision, "recall": recall, "f1_score": f1,
                "format_correctness": fmt, "dependencies": deps,
                "placeholders": ph, "rating": rating,
            },
        }
    )


def perfect_backend() -> FunctionBackend:
    """A judge that awards a full pass everywhere: counting rubrics report
    every step passing, query adherence reports 1, the one-shot judge
    reports a perfect match, and the step evaluator returns NO CHANGE."""

    def responder(request: JudgeRequest) -> str:
        system, user = request.system_prompt, request.user_prompt
        if "Step under evaluation" in user:
            return "1\n1. the step is sound as written : NO CHANGE"
        if "Candidate plan (P):" in user:
            return oneshot_response()
        if "query adherence" in system:
            return "plan fully answers the query | 1 |"
        if "Plan to be evaluated:" in user:
            return f"every step passes | {_step_count_of(user)} |"
        raise AssertionError(f"unexpected prompt: {user[:160]}")

    return FunctionBackend(responder)


@pytest.fixture
def perfect_gateway() -> JudgeGateway:
    return JudgeGateway(perfect_backend())


def gateway_for(responder) -> JudgeGateway:
    return JudgeGateway(FunctionBackend(responder))
