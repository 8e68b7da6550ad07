"""Benchmark corpus ingestion and emission.

queries.csv holds one row per query with the human-edited reference plan
and the full plan lineage (both JSON strings); plans.csv holds one row per
query-planner-prompt triple with the generated plan left as raw text, since
unparseability is a scored outcome rather than an ingestion error.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    DuplicateTripleKey,
    InvalidBestPlan,
    MissingColumn,
    PlanParseError,
)
from .lineage import PlanLineage, lineage_from_json, lineage_to_json
from .metrics import METRIC_ORDER
from .plan import Plan, canonicalize, parse_plan, validate
from .weights import LineageTriple

QUERIES_COLUMNS = (
    "query_id",
    "Sample",
    "query",
    "is_query_subjective",
    "is_query_compound",
    "# steps in the BPP",
    "# steps in the BPP - Grouped",
    "best_plan",
    "plan_lineage",
)

PLANS_COLUMNS = ("query_id", "llm", "prompt_type", "plan")

GROUPED_BUCKETS = ("[1,2]", "[3,4]", "[5,15]")
PROMPT_TYPES = ("with_lineage", "without_lineage")

SCORE_COLUMNS = tuple(f"score_{k.value}" for k in METRIC_ORDER)


@dataclass(frozen=True)
class QueryRecord:
    query_id: str
    sample_split: str  # Train | Test
    query: str
    is_subjective: bool
    is_compound: bool
    bpp_steps: int
    bpp_steps_grouped: str
    best_plan: Plan
    plan_lineage: PlanLineage


@dataclass(frozen=True)
class GeneratedPlanRecord:
    query_id: str
    llm: str
    prompt_type: str
    plan: str  # raw text, possibly unparseable
    parse_error: str | None = None

    @property
    def parseable(self) -> bool:
        return self.parse_error is None


@dataclass
class IngestResult:
    queries: list[QueryRecord]
    plans: list[GeneratedPlanRecord]
    summary: dict = field(default_factory=dict)


def _parse_bool(text: str) -> bool:
    return str(text).strip().lower() in ("1", "true", "yes")


def _check_columns(fieldnames, required, path):
    missing = [c for c in required if c not in (fieldnames or [])]
    if missing:
        raise MissingColumn(f"{path}: missing columns {missing}")


def grouped_bucket(step_count: int) -> str:
    if step_count <= 2:
        return "[1,2]"
    if step_count <= 4:
        return "[3,4]"
    return "[5,15]"


def read_queries(path: str | Path) -> list[QueryRecord]:
    records: list[QueryRecord] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        _check_columns(reader.fieldnames, QUERIES_COLUMNS, path)
        for row in reader:
            qid = row["query_id"]
            try:
                best = parse_plan(row["best_plan"])
            except PlanParseError as exc:
                raise InvalidBestPlan(f"{qid}: best plan does not parse: {exc}") from exc
            report = validate(best)
            if not report.valid:
                raise InvalidBestPlan(
                    f"{qid}: best plan fails validation: "
                    + "; ".join(v.kind for v in report.violations)
                )
            lineage = lineage_from_json(qid, row["plan_lineage"])
            if canonicalize(lineage.head) != canonicalize(best):
                raise InvalidBestPlan(f"{qid}: lineage head differs from best_plan")
            records.append(
                QueryRecord(
                    query_id=qid,
                    sample_split=row["Sample"],
                    query=row["query"],
                    is_subjective=_parse_bool(row["is_query_subjective"]),
                    is_compound=_parse_bool(row["is_query_compound"]),
                    bpp_steps=int(row["# steps in the BPP"]),
                    bpp_steps_grouped=row["# steps in the BPP - Grouped"],
                    best_plan=best,
                    plan_lineage=lineage,
                )
            )
    return records


def read_plans(path: str | Path) -> list[GeneratedPlanRecord]:
    records: list[GeneratedPlanRecord] = []
    seen: set[tuple[str, str, str]] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        _check_columns(reader.fieldnames, PLANS_COLUMNS, path)
        for row in reader:
            key = (row["query_id"], row["llm"], row["prompt_type"])
            if key in seen:
                raise DuplicateTripleKey(f"{path}: duplicate (query_id, llm, prompt_type) {key}")
            seen.add(key)
            error: str | None = None
            try:
                plan = parse_plan(row["plan"])
                report = validate(plan)
                if not report.valid:
                    error = "invalid: " + "; ".join(v.kind for v in report.violations)
            except PlanParseError as exc:
                error = "unparseable: " + "; ".join(sorted(exc.kinds))
            records.append(
                GeneratedPlanRecord(
                    query_id=row["query_id"],
                    llm=row["llm"],
                    prompt_type=row["prompt_type"],
                    plan=row["plan"],
                    parse_error=error,
                )
            )
    return records


def ingest(queries_path: str | Path, plans_path: str | Path) -> IngestResult:
    """Load and cross-check both tables; generated plans stay raw, with
    unparseability recorded per row."""
    queries = read_queries(queries_path)
    plans = read_plans(plans_path)
    known = {q.query_id for q in queries}
    orphans = sorted({p.query_id for p in plans} - known)
    flagged = [p for p in plans if not p.parseable]
    result = IngestResult(
        queries=queries,
        plans=plans,
        summary={
            "query_rows": len(queries),
            "plan_rows": len(plans),
            "unparseable_plans": len(flagged),
            "orphan_query_ids": orphans,
            "planners": sorted({p.llm for p in plans}),
            "prompt_types": sorted({p.prompt_type for p in plans}),
        },
    )
    return result


def write_queries(records: list[QueryRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=QUERIES_COLUMNS)
        writer.writeheader()
        for r in records:
            writer.writerow(
                {
                    "query_id": r.query_id,
                    "Sample": r.sample_split,
                    "query": r.query,
                    "is_query_subjective": str(r.is_subjective),
                    "is_query_compound": str(r.is_compound),
                    "# steps in the BPP": r.bpp_steps,
                    "# steps in the BPP - Grouped": r.bpp_steps_grouped,
                    "best_plan": canonicalize(r.best_plan),
                    "plan_lineage": lineage_to_json(r.plan_lineage),
                }
            )


def write_plans(records: list[GeneratedPlanRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=PLANS_COLUMNS)
        writer.writeheader()
        for r in records:
            writer.writerow(
                {"query_id": r.query_id, "llm": r.llm, "prompt_type": r.prompt_type, "plan": r.plan}
            )


# ---------------------------------------------------------------------------
# lineage-triple CSV for weight learning

TRIPLES_COLUMNS = ("query_id", "plan_rank") + SCORE_COLUMNS
_RANKS = ("best", "pen", "ante")


def read_triples(path: str | Path) -> list[LineageTriple]:
    """Rows carry query_id, plan_rank in {best, pen, ante}, then the seven
    raw sub-scores in canonical metric order."""
    by_query: dict[str, dict[str, tuple[float, ...]]] = {}
    order: list[str] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        _check_columns(reader.fieldnames, TRIPLES_COLUMNS, path)
        for row in reader:
            qid, rank = row["query_id"], row["plan_rank"]
            if rank not in _RANKS:
                raise ValueError(f"{path}: plan_rank {rank!r} not in {_RANKS}")
            if qid not in by_query:
                by_query[qid] = {}
                order.append(qid)
            if rank in by_query[qid]:
                raise DuplicateTripleKey(f"{path}: duplicate ({qid}, {rank})")
            by_query[qid][rank] = tuple(float(row[c]) for c in SCORE_COLUMNS)
    triples = []
    for qid in order:
        ranks = by_query[qid]
        missing = [r for r in _RANKS if r not in ranks]
        if missing:
            raise MissingColumn(f"{path}: query {qid} missing plan_rank rows {missing}")
        triples.append(
            LineageTriple(query_id=qid, s_best=ranks["best"], s_pen=ranks["pen"], s_ante=ranks["ante"])
        )
    return triples


def write_triples(triples: list[LineageTriple], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRIPLES_COLUMNS)
        for t in triples:
            for rank, vec in (("best", t.s_best), ("pen", t.s_pen), ("ante", t.s_ante)):
                writer.writerow([t.query_id, rank, *vec])


# ---------------------------------------------------------------------------
# rater-label CSV for agreement statistics


def read_labels(path: str | Path) -> list[tuple[str, str, str]]:
    """(item_id, rater_a, rater_b) rows for the agreement report."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        _check_columns(reader.fieldnames, ("item_id", "rater_a", "rater_b"), path)
        for row in reader:
            rows.append((row["item_id"], row["rater_a"], row["rater_b"]))
    return rows
