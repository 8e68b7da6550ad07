"""Plan lineages: ordered revisions of a plan for one query, weakest first.

A lineage only records distinct plans; a candidate equal to the current
head (by canonical bytes) is dropped. The interchange form is a JSON array
of plan documents, which is what the plan_lineage column of queries.csv
carries.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field

from .errors import BoundaryMismatch
from .plan import HopProfile, Plan, canonicalize, hop_profile, parse_plan


@dataclass
class PlanLineage:
    query_id: str
    plans: list[Plan]

    def __post_init__(self):
        if not self.plans:
            raise ValueError("a lineage holds at least one plan")

    @property
    def head(self) -> Plan:
        """The most recent (best) plan."""
        return self.plans[-1]

    def __len__(self) -> int:
        return len(self.plans)


@dataclass(frozen=True)
class LineageMetadata:
    lineage_length: int
    passes_to_convergence: int
    revisions_per_pass: tuple[int, ...]
    head_step_count: int
    hop_profile: HopProfile


def append_if_changed(lineage: PlanLineage, candidate: Plan) -> bool:
    """Append iff the candidate differs from the current head.

    Only head equality blocks: re-introducing a plan equal to an earlier,
    non-head revision still appends.
    """
    if canonicalize(candidate) == canonicalize(lineage.head):
        return False
    lineage.plans.append(candidate)
    return True


def derive_metadata(lineage: PlanLineage, pass_boundaries: list[int]) -> LineageMetadata:
    """Lineage bookkeeping. pass_boundaries lists how many revisions each
    refinement pass appended; they must account for every revision."""
    n = len(lineage.plans)
    if sum(pass_boundaries) != n - 1:
        raise BoundaryMismatch(
            f"pass boundaries {pass_boundaries} sum to {sum(pass_boundaries)}, expected {n - 1}"
        )
    return LineageMetadata(
        lineage_length=n,
        passes_to_convergence=len(pass_boundaries),
        revisions_per_pass=tuple(pass_boundaries),
        head_step_count=len(lineage.head),
        hop_profile=hop_profile(lineage.head),
    )


def lineage_to_json(lineage: PlanLineage) -> str:
    """JSON array of plan documents (each one itself a JSON object)."""
    return json.dumps([json.loads(canonicalize(p)) for p in lineage.plans], ensure_ascii=False)


def lineage_from_json(query_id: str, text: str) -> PlanLineage:
    docs = json.loads(text)
    if not isinstance(docs, list) or not docs:
        raise ValueError("plan_lineage must be a non-empty JSON array")
    plans = []
    for doc in docs:
        plans.append(parse_plan(doc if isinstance(doc, str) else json.dumps(doc)))
    return PlanLineage(query_id=query_id, plans=plans)


class LineageStore:
    """Append-only keyed collection of lineages. Appends to different
    query_ids may happen concurrently; per-query appends are serialized by
    the caller (the refinement loop is sequential per query)."""

    def __init__(self):
        self._lineages: dict[str, PlanLineage] = {}
        self._lock = threading.Lock()

    def open(self, query_id: str, initial: Plan) -> PlanLineage:
        with self._lock:
            if query_id in self._lineages:
                raise KeyError(f"lineage for {query_id!r} already exists")
            lineage = PlanLineage(query_id=query_id, plans=[initial])
            self._lineages[query_id] = lineage
            return lineage

    def put(self, lineage: PlanLineage) -> None:
        with self._lock:
            if lineage.query_id in self._lineages:
                raise KeyError(f"lineage for {lineage.query_id!r} already exists")
            self._lineages[lineage.query_id] = lineage

    def get(self, query_id: str) -> PlanLineage:
        with self._lock:
            return self._lineages[query_id]

    def query_ids(self) -> list[str]:
        with self._lock:
            return sorted(self._lineages)

    def __contains__(self, query_id: str) -> bool:
        with self._lock:
            return query_id in self._lineages
