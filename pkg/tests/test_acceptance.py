"""Acceptance suite: one test per exit criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v` (add -s to see the lines as
they print).
"""

from __future__ import annotations

import hashlib
import itertools
import math
import random
import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from planeval.cli import main
from planeval.gateway import FunctionBackend, JudgeGateway
from planeval.loop import LoopConfig, LoopJudges, run_loop
from planeval.metrics import METRIC_ORDER, MetricScore, WeightVector, aggregate, normalized_average
from planeval.oneshot import RatingTier, bucket_rates, rating_from_f1
from planeval.plan import HopCategory, Plan, Step, ToolKind, canonicalize, hop_profile, parse_plan, validate
from planeval.stats import bootstrap_ci, cohen_kappa, spearman_rho, weighted_kappa
from planeval.weights import LineageTriple, learn_weights, quantize

from .conftest import SIX_STEP_PLAN_TEXT
from .corpus import write_corpus, write_scripted_judge
from .refvalues import (
    METRIC_ROWS_WITH_LINEAGE,
    METRIC_ROWS_WITHOUT_LINEAGE,
    NORMALIZED_FOOTER_WITH_LINEAGE,
    SENSITIVITY_WITH_LINEAGE,
    SENSITIVITY_WITHOUT_LINEAGE,
)

_BY_NAME = {k.value: k for k in METRIC_ORDER}


def _passed(n: int, label: str) -> None:
    print(f"[ACCEPTANCE] criterion {n} ({label}): PASS")


def _card_from_points(points_by_name, weights: WeightVector):
    return {
        _BY_NAME[name]: MetricScore(
            metric=_BY_NAME[name],
            raw=points / weights.weights[_BY_NAME[name]],
            points=points,
            explanation="",
        )
        for name, points in points_by_name.items()
    }


# ---------------------------------------------------------------------------
# 1. aggregation reproduction


def test_criterion_1_aggregation_reproduction():
    weights = WeightVector.default()
    for table in (METRIC_ROWS_WITH_LINEAGE, METRIC_ROWS_WITHOUT_LINEAGE):
        for llm, (overall, points) in table.items():
            total = aggregate(_card_from_points(points, weights), weights)
            assert abs(total - overall) <= 0.05, (llm, total, overall)
    best = aggregate(_card_from_points(METRIC_ROWS_WITH_LINEAGE["claude-3-7-sonnet"][1], weights), weights)
    assert best == pytest.approx(84.81, abs=1e-9)
    exact = aggregate(_card_from_points(METRIC_ROWS_WITHOUT_LINEAGE["gpt-4o"][1], weights), weights)
    assert exact == pytest.approx(82.82, abs=1e-9)
    _passed(1, "aggregation reproduction")


# ---------------------------------------------------------------------------
# 2. normalized-average reproduction


def test_criterion_2_normalized_average_reproduction():
    from planeval.metrics import make_scorecard

    weights = WeightVector.default()
    cards = [
        make_scorecard(_card_from_points(points, weights), weights)
        for _, points in METRIC_ROWS_WITH_LINEAGE.values()
    ]
    footer = normalized_average(cards)
    for name, expected in NORMALIZED_FOOTER_WITH_LINEAGE.items():
        if name == "overall":
            overall = sum(c.total for c in cards) / len(cards)
            assert abs(overall - expected) <= 0.05
            continue
        assert abs(footer[_BY_NAME[name]] - expected) <= 0.05, name
    assert round(footer[_BY_NAME["tool_usage_completeness"]], 2) == 48.74
    assert abs(footer[_BY_NAME["format"]] - 70.43) <= 0.05
    _passed(2, "normalized-average reproduction")


# ---------------------------------------------------------------------------
# 3. Spearman reproduction


def test_criterion_3_spearman_reproduction():
    for columns, expected_fraction, published in (
        (SENSITIVITY_WITH_LINEAGE, 1 - 180.0 / 2730.0, "0.934"),
        (SENSITIVITY_WITHOUT_LINEAGE, 1 - 288.0 / 2730.0, "0.894"),
    ):
        planners = sorted(columns)
        learned = [columns[p][0] for p in planners]
        equal = [columns[p][1] for p in planners]
        rho = spearman_rho(learned, equal)
        assert rho == pytest.approx(expected_fraction, abs=1e-12)
        assert f"{math.floor(rho * 1000) / 1000:.3f}" == published
    _passed(3, "Spearman reproduction")


# ---------------------------------------------------------------------------
# 4. rating map


def test_criterion_4_rating_map():
    eps = 1e-9
    table = [
        (0.30, RatingTier.EXTREMELY_BAD, RatingTier.VERY_BAD),
        (0.45, RatingTier.VERY_BAD, RatingTier.BAD),
        (0.60, RatingTier.BAD, RatingTier.ACCEPTABLE),
        (0.75, RatingTier.ACCEPTABLE, RatingTier.GOOD),
        (0.85, RatingTier.GOOD, RatingTier.VERY_GOOD),
        (0.95, RatingTier.VERY_GOOD, RatingTier.EXTREMELY_GOOD),
    ]
    for boundary, at, above in table:
        assert rating_from_f1(boundary, True) is at
        assert rating_from_f1(boundary + eps, True) is above
        assert rating_from_f1(boundary - eps, True) <= at
        assert rating_from_f1(boundary, False) is RatingTier.EXTREMELY_BAD
        assert rating_from_f1(boundary + eps, False) is RatingTier.EXTREMELY_BAD

    @given(st.lists(st.sampled_from(list(RatingTier)), min_size=1, max_size=80))
    @settings(max_examples=200, deadline=None)
    def nesting(tiers):
        rates = bucket_rates(tiers)
        assert 0 <= rates.a_plus <= rates.a <= rates.b <= 100

    nesting()
    _passed(4, "rating map and bucket nesting")


# ---------------------------------------------------------------------------
# 5. loop guarantees under randomized judges


def _random_small_plan(rng: random.Random) -> Plan:
    n = rng.randint(1, 3)
    steps = []
    for k in range(1, n + 1):
        tool = rng.choice(list(ToolKind))
        deps = frozenset(d for d in range(1, k) if rng.random() < 0.5)
        prompt = f"probe {k}" + "".join(f" ({d})" for d in sorted(deps))
        steps.append(Step(
            index=k, tool=tool,
            arg_refs=() if tool is ToolKind.LLM else tuple(sorted(deps)),
            prompt=prompt, depends_on=deps,
        ))
    return Plan(steps=tuple(steps))


def _mutate(plan: Plan, choice: int, salt: int) -> Plan:
    if choice == 0:  # same-length prompt tweak on the last step
        steps = [
            s if s.index != len(plan) else Step(
                index=s.index, tool=s.tool, arg_refs=s.arg_refs,
                prompt=s.prompt + f" v{salt}", depends_on=s.depends_on)
            for s in plan.steps
        ]
        return Plan(steps=tuple(steps))
    if choice == 1 or len(plan) == 1:  # grow: append an independent probe
        extra = Step(index=len(plan) + 1, tool=ToolKind.T2S, arg_refs=(),
                     prompt=f"extra probe {len(plan) + 1}", depends_on=frozenset())
        return Plan(steps=plan.steps + (extra,))
    return Plan(steps=plan.steps[:-1])  # shrink: drop the sink with the top index


def _fuzz_judges(case_seed: int) -> LoopJudges:
    import re

    def rand(text: str, salt: str) -> int:
        digest = hashlib.sha256(f"{case_seed}|{salt}|{text}".encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "big")

    def responder(request):
        user = request.user_prompt
        if "Step under evaluation" in user:
            r = rand(user, "eval") % 10
            if r < 6:
                return "1\n1. fine as written : NO CHANGE"
            if r < 8:
                return "1\n1. prompt drifts : INCORRECT PROMPT"
            return "1\n1. too much at once : COMPLEX PROMPT"
        m = re.search(r"Plan:\n(?P<doc>.*?)\n\nStep evaluator output:", user, re.DOTALL)
        plan = parse_plan(m.group("doc").strip())
        r = rand(user, "opt")
        choice = r % 4  # 0 tweak, 1 grow, 2 shrink, 3 echo (no-op)
        new_plan = plan if choice == 3 else _mutate(plan, min(choice, 2), r % 1000)
        return (
            '"CHANGE 0": scripted local repair\n'
            '"CHANGE 1": scripted coherence repair\n'
            '"NEW PLAN STARTS":\n' + canonicalize(new_plan)
        )

    gw = JudgeGateway(FunctionBackend(responder))
    return LoopJudges(evaluator=gw, optimizer=gw)


def _assert_trace_follows_control_flow(trace, max_passes: int) -> None:
    assert trace.stop_reason is not None
    assert len(trace.pass_boundaries) <= max_passes
    for plan in trace.lineage.plans:
        assert validate(plan).valid
    docs = [canonicalize(p) for p in trace.lineage.plans]
    assert all(a != b for a, b in zip(docs, docs[1:]))
    # replay the index pointer per pass: advance on unchanged or same-length
    # edits, re-check (clamped) on length changes
    for pass_no in sorted({e["pass"] for e in trace.events}):
        events = [e for e in trace.events if e["pass"] == pass_no]
        expected_i = 1
        for event in events:
            if event["action"] == "pass-budget-exhausted":
                break
            assert event["index"] == expected_i, (pass_no, event, events)
            if event["appended"] and event["len_after"] != event["len_before"]:
                expected_i = min(expected_i, event["len_after"])
            else:
                expected_i += 1


def test_criterion_5_loop_guarantees():
    start = time.monotonic()
    appended_total = 0
    for case in range(1000):
        rng = random.Random(case)
        initial = _random_small_plan(rng)
        judges = _fuzz_judges(case)
        trace = run_loop(initial, f"fuzz query {case}", judges, LoopConfig(max_passes=4))
        _assert_trace_follows_control_flow(trace, 4)
        appended_total += len(trace.lineage) - 1
    elapsed = time.monotonic() - start
    assert appended_total > 0  # the fuzz actually exercised revisions
    assert elapsed < 60, f"fuzz took {elapsed:.1f}s"
    _passed(5, f"loop guarantees over 1000 fuzz cases in {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 6. weight learner oracle equivalence


def _oracle_learn(triples, budgets=(70.0, 30.0), grid_step=0.1):
    """Independent enumeration and selection over the same grid."""
    r = round(1.0 / grid_step)
    eff = [c for c in itertools.product(range(r + 1), repeat=4) if sum(c) == r]
    fff = [c for c in itertools.product(range(r + 1), repeat=3) if sum(c) == r]
    cands = np.array(
        [[x * budgets[0] / r for x in e] + [y * budgets[1] / r for y in f]
         for e in eff for f in fff]
    )
    deltas = np.array(
        [[b - p for b, p in zip(t.s_best, t.s_pen)] for t in triples]
        + [[p - a for p, a in zip(t.s_pen, t.s_ante)] for t in triples]
    )
    margins = cands @ deltas.T
    counts = (margins >= -1e-12).sum(axis=1)
    medians = np.median(margins, axis=1)
    best = 0
    for k in range(1, len(cands)):
        if counts[k] > counts[best] or (counts[k] == counts[best] and medians[k] > medians[best]):
            best = k
    return int(counts[best]), tuple(cands[best])


def test_criterion_6_weight_learner_oracle_equivalence():
    start = time.monotonic()
    rng = np.random.default_rng(2024)
    for _ in range(200):
        n_triples = int(rng.integers(1, 4))
        triples = []
        for q in range(n_triples):
            vecs = rng.integers(0, 65, size=(3, 7)) / 64.0  # binary-exact lattice
            triples.append(LineageTriple(f"q{q}", tuple(vecs[0]), tuple(vecs[1]), tuple(vecs[2])))
        ours = learn_weights(triples, grid_step=0.1)
        count, weights = _oracle_learn(triples, grid_step=0.1)
        assert ours.satisfied == count
        assert ours.weights.as_tuple() == weights

    # quantize is always lattice- and budget-exact
    for _ in range(200):
        eff = rng.dirichlet(np.ones(4)) * 70
        fff = rng.dirichlet(np.ones(3)) * 30
        wv = WeightVector.from_sequence(np.concatenate([eff / eff.sum() * 70, fff / fff.sum() * 30]))
        out = quantize(wv, lattice=5)
        values = out.as_tuple()
        assert all(v >= 0 and abs(v / 5 - round(v / 5)) < 1e-9 for v in values)
        assert sum(values[:4]) == pytest.approx(70, abs=1e-9)
        assert sum(values[4:]) == pytest.approx(30, abs=1e-9)

    # the production weight vector satisfies the budgets
    WeightVector.from_sequence([20, 20, 15, 15, 10, 10, 10]).validate()
    elapsed = time.monotonic() - start
    assert elapsed < 30, f"oracle equivalence took {elapsed:.1f}s"
    _passed(6, f"weight learner oracle equivalence in {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 7. hop classifier


def _all_dependency_paths(plan: Plan, k: int) -> list[list[int]]:
    step = plan.step(k)
    if not step.depends_on:
        return [[k]]
    return [path + [k] for d in step.depends_on for path in _all_dependency_paths(plan, d)]


def test_criterion_7_hop_classifier():
    plan = parse_plan(SIX_STEP_PLAN_TEXT)
    profile = hop_profile(plan)
    assert profile.hops == 4
    assert profile.category is HopCategory.THREE_PLUS

    single = parse_plan('{"1": {"query": "T2S([], \'one aggregate\')", "depends_on": []}}')
    assert hop_profile(single).category is HopCategory.ZERO_HOP

    synthesis = parse_plan(
        '{"1": {"query": "T2S([], \'count them\')", "depends_on": []},'
        ' "2": {"query": "RAG([], \'what do transcripts say\')", "depends_on": []},'
        ' "3": {"query": "LLM(\'merge (1) and (2)\')", "depends_on": [1, 2]}}'
    )
    assert hop_profile(synthesis).hops == 1
    assert hop_profile(synthesis).category is HopCategory.ONE_HOP

    # property: depth recursion agrees with explicit longest-path enumeration
    rng = random.Random(99)
    for _ in range(300):
        plan = _random_plan_for_hops(rng)
        profile = hop_profile(plan)
        longest = max(
            len(path) - 1
            for sink in plan.sinks()
            for path in _all_dependency_paths(plan, sink)
        )
        assert profile.hops == longest
        for k in plan.indices:
            assert profile.per_step_depth[k] == max(
                len(p) - 1 for p in _all_dependency_paths(plan, k)
            )
    _passed(7, "hop classifier")


def _random_plan_for_hops(rng: random.Random) -> Plan:
    n = rng.randint(1, 7)
    steps = []
    for k in range(1, n + 1):
        deps = frozenset(d for d in range(1, k) if rng.random() < 0.45)
        tool = rng.choice(list(ToolKind))
        prompt = f"work {k}" + "".join(f" ({d})" for d in sorted(deps))
        steps.append(Step(
            index=k, tool=tool,
            arg_refs=() if tool is ToolKind.LLM else tuple(sorted(deps)),
            prompt=prompt, depends_on=deps,
        ))
    return Plan(steps=tuple(steps))


# ---------------------------------------------------------------------------
# 8. statistics


def test_criterion_8_statistics():
    assert cohen_kappa(list("ABAB"), list("ABAB")) == 1.0
    assert cohen_kappa(["X", "X", "Y", "Y"], ["X", "Y", "X", "Y"]) == pytest.approx(0.0, abs=1e-15)
    assert cohen_kappa(["X", "Y"], ["Y", "X"]) == pytest.approx(-1.0, abs=1e-15)
    assert weighted_kappa([1, 2, 3], [3, 2, 1], K=3, scheme="quadratic") == pytest.approx(-1.0, abs=1e-12)

    x = [4.0, 1.0, 3.0, 2.0, 5.0]
    assert spearman_rho(x, x) == pytest.approx(1.0, abs=1e-15)
    assert spearman_rho(x, [-v for v in x]) == pytest.approx(-1.0, abs=1e-15)

    rng = np.random.default_rng(0)
    a = rng.integers(1, 4, size=20).tolist()
    b = rng.integers(1, 4, size=20).tolist()
    pairs = list(zip(a, b))

    def stat(sample):
        try:
            return cohen_kappa([p[0] for p in sample], [p[1] for p in sample])
        except Exception:
            return 0.0

    first = bootstrap_ci(stat, pairs, resamples=1000, seed=13)
    second = bootstrap_ci(stat, pairs, resamples=1000, seed=13)
    assert first == second
    _passed(8, "statistics hand cases and bootstrap stability")


# ---------------------------------------------------------------------------
# 9. determinism of the full pipeline


def _dir_digest(root: Path) -> dict[str, str]:
    out = {}
    for path in sorted(root.rglob("*")):
        if path.is_file():
            out[str(path.relative_to(root))] = hashlib.sha256(path.read_bytes()).hexdigest()
    return out


def test_criterion_9_pipeline_determinism(tmp_path):
    queries, plans = write_corpus(tmp_path / "corpus", n_queries=6,
                                  llms=("planner-a", "planner-b", "planner-c"), garbage_every=9)
    judge = write_scripted_judge(tmp_path / "judge.json")
    digests = []
    for run in ("one", "two"):
        out = tmp_path / f"run-{run}"
        rc = main([
            "report", "--queries", str(queries), "--plans", str(plans),
            "--judge", f"scripted:{judge}", "--out", str(out), "--seed", "7",
            "--cache-dir", str(tmp_path / f"cache-{run}"),
        ])
        assert rc == 0
        digests.append(_dir_digest(out))
    assert digests[0] == digests[1]
    _passed(9, "byte-identical pipeline reruns")


# ---------------------------------------------------------------------------
# 10. end-to-end dataset ingest at the public-release scale


def test_criterion_10_end_to_end_scale(tmp_path):
    start = time.monotonic()
    llms = tuple(f"planner-{i:02d}-{tier}" for i, tier in
                 zip(range(1, 15), itertools.cycle(("a", "b", "c"))))
    assert len(llms) == 14
    queries, plans = write_corpus(tmp_path / "corpus", n_queries=200, llms=llms, garbage_every=41)
    judge = write_scripted_judge(tmp_path / "judge.json")

    from planeval.dataset import ingest

    data = ingest(queries, plans)
    assert data.summary["query_rows"] == 200
    assert data.summary["plan_rows"] == 5600

    out = tmp_path / "out"
    rc = main([
        "report", "--queries", str(queries), "--plans", str(plans),
        "--judge", f"scripted:{judge}", "--out", str(out), "--seed", "1",
        "--cache-dir", str(tmp_path / "cache"),
    ])
    assert rc == 0
    for name in (
        "validation_report.csv", "scorecards.csv", "ratings.csv", "buckets.csv",
        "summary_with_lineage.csv", "summary_without_lineage.csv", "sensitivity.csv",
        "metric_summary.png", "buckets.png", "sensitivity.png",
    ):
        assert (out / name).exists(), name
    elapsed = time.monotonic() - start
    assert elapsed < 120, f"end-to-end run took {elapsed:.1f}s"
    _passed(10, f"end-to-end 200x(14x2) corpus in {elapsed:.1f}s")
