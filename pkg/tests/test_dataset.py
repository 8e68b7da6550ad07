from __future__ import annotations

import csv

import pytest

from planeval.dataset import (
    GROUPED_BUCKETS,
    GeneratedPlanRecord,
    grouped_bucket,
    ingest,
    read_triples,
    write_plans,
    write_queries,
    write_triples,
)
from planeval.errors import DuplicateTripleKey, InvalidBestPlan, MissingColumn
from planeval.weights import LineageTriple

from .corpus import best_plan_doc, write_corpus


def test_ingest_counts(tmp_path):
    queries_path, plans_path = write_corpus(tmp_path, n_queries=6, llms=("a", "b"), garbage_every=5)
    result = ingest(queries_path, plans_path)
    assert result.summary["query_rows"] == 6
    assert result.summary["plan_rows"] == 24
    assert result.summary["unparseable_plans"] == 4
    assert result.summary["planners"] == ["a", "b"]


def test_garbage_plan_is_flagged_not_fatal(tmp_path):
    queries_path, plans_path = write_corpus(tmp_path, n_queries=2, llms=("a",), garbage_every=3)
    result = ingest(queries_path, plans_path)
    flagged = [p for p in result.plans if not p.parseable]
    assert flagged and all("unparseable" in p.parse_error for p in flagged)


def test_duplicate_triple_key(tmp_path):
    queries_path, plans_path = write_corpus(tmp_path, n_queries=1, llms=("a",))
    with open(plans_path, "a", newline="", encoding="utf-8") as fh:
        csv.writer(fh).writerow(["q0000", "a", "with_lineage", best_plan_doc("late deliveries")])
    with pytest.raises(DuplicateTripleKey):
        ingest(queries_path, plans_path)


def test_missing_column(tmp_path):
    queries_path, plans_path = write_corpus(tmp_path, n_queries=1)
    broken = tmp_path / "broken.csv"
    broken.write_text("query_id,llm\nq0000,a\n", encoding="utf-8")
    with pytest.raises(MissingColumn):
        ingest(queries_path, broken)


def test_invalid_best_plan(tmp_path):
    queries_path, plans_path = write_corpus(tmp_path, n_queries=1)
    text = queries_path.read_text(encoding="utf-8")
    queries_path.write_text(text.replace("T2S", "SQL"), encoding="utf-8")
    with pytest.raises(InvalidBestPlan):
        ingest(queries_path, plans_path)


def test_lineage_head_must_match_best_plan(tmp_path):
    queries_path, plans_path = write_corpus(tmp_path, n_queries=1)
    rows = list(csv.DictReader(open(queries_path, encoding="utf-8")))
    rows[0]["plan_lineage"] = "[" + best_plan_doc("missing items") + "]"
    with open(queries_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    with pytest.raises(InvalidBestPlan):
        ingest(queries_path, plans_path)


def test_round_trip_queries_and_plans(tmp_path):
    queries_path, plans_path = write_corpus(tmp_path, n_queries=4, garbage_every=7)
    first = ingest(queries_path, plans_path)
    write_queries(first.queries, tmp_path / "q2.csv")
    write_plans(first.plans, tmp_path / "p2.csv")
    second = ingest(tmp_path / "q2.csv", tmp_path / "p2.csv")
    assert second.queries == first.queries
    assert second.plans == first.plans


def test_grouped_bucket_rule():
    assert grouped_bucket(1) == grouped_bucket(2) == "[1,2]"
    assert grouped_bucket(3) == grouped_bucket(4) == "[3,4]"
    assert grouped_bucket(5) == grouped_bucket(15) == "[5,15]"
    assert set(GROUPED_BUCKETS) == {"[1,2]", "[3,4]", "[5,15]"}


def test_triples_round_trip(tmp_path):
    triples = [
        LineageTriple("q1", (1.0,) * 7, (0.5,) * 7, (0.0,) * 7),
        LineageTriple("q2", (0.9,) * 7, (0.8,) * 7, (0.2,) * 7),
    ]
    path = tmp_path / "triples.csv"
    write_triples(triples, path)
    assert read_triples(path) == triples


def test_triples_require_all_ranks(tmp_path):
    path = tmp_path / "triples.csv"
    triples = [LineageTriple("q1", (1.0,) * 7, (0.5,) * 7, (0.0,) * 7)]
    write_triples(triples, path)
    lines = path.read_text(encoding="utf-8").strip().splitlines()
    path.write_text("\n".join(lines[:-1]) + "\n", encoding="utf-8")  # drop the ante row
    with pytest.raises(MissingColumn):
        read_triples(path)


def test_generated_record_parseable_flag():
    ok = GeneratedPlanRecord("q", "llm", "with_lineage", best_plan_doc("x"))
    assert ok.parseable
    bad = GeneratedPlanRecord("q", "llm", "with_lineage", "junk", parse_error="unparseable: NotParseable")
    assert not bad.parseable
