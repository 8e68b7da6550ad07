"""Report emission: runs the evaluators over an ingested corpus and writes
the delimited tables (plus figures and optional aligned-text renders).

Work is scheduled over (query, planner, prompt_type) tasks; results are
reduced in sorted key order so worker count never changes the output bytes.
Commands never mutate their input files.
"""

from __future__ import annotations

import csv
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from statistics import median

from . import figures
from .config import RunConfig
from .dataset import GeneratedPlanRecord, IngestResult, QueryRecord, read_labels, read_triples
from .errors import LoopAborted, PlanEvalError
from .gateway import JudgeGateway
from .lineage import lineage_to_json
from .loop import LoopConfig, LoopJudges, run_loop
from .metrics import (
    METRIC_ORDER,
    EvalMode,
    MetricKind,
    PlanScorecard,
    WeightVector,
    score_plan,
    score_plan_single_prompt,
)
from .oneshot import RatingTier, bucket_rates, evaluate_oneshot
from .plan import parse_plan
from .stats import kappa_with_ci
from .weights import LineageTriple, learn_weights, quantize, sensitivity

_TIERS = tuple(sorted(RatingTier))


def _write_csv(path: Path, headers: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(headers)
        writer.writerows(rows)


def render_table(headers: list[str], rows: list[list]) -> str:
    """Aligned-text rendering of a table, for the --render-text flag."""
    cells = [[str(c) for c in row] for row in [headers, *rows]]
    widths = [max(len(row[i]) for row in cells) for i in range(len(headers))]
    lines = []
    for r, row in enumerate(cells):
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        if r == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _maybe_render(path: Path, headers: list[str], rows: list[list], enabled: bool) -> None:
    if enabled:
        path.write_text(render_table(headers, rows), encoding="utf-8")


def write_manifest(out_dir: Path, config: RunConfig, inputs: dict[str, str]) -> None:
    digests = {}
    for name, p in inputs.items():
        digests[name] = hashlib.sha256(Path(p).read_bytes()).hexdigest()
    (out_dir / "manifest.json").write_text(
        json.dumps({"inputs": digests, "config": config.snapshot()}, indent=2, sort_keys=True),
        encoding="utf-8",
    )


def _queries_by_id(data: IngestResult) -> dict[str, QueryRecord]:
    return {q.query_id: q for q in data.queries}


def _map_tasks(tasks, fn, workers: int):
    if workers <= 1:
        return [fn(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


# ---------------------------------------------------------------------------
# score


@dataclass
class ScoreRow:
    record: GeneratedPlanRecord
    scorecard: PlanScorecard | None  # None for unparseable candidates


def run_score(
    data: IngestResult,
    gateway: JudgeGateway,
    config: RunConfig,
    out_dir: str | Path,
) -> list[ScoreRow]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    weights = config.load_weights()
    queries = _queries_by_id(data)
    tasks = sorted(data.plans, key=lambda p: (p.query_id, p.llm, p.prompt_type))

    def score_one(record: GeneratedPlanRecord) -> ScoreRow:
        if not record.parseable:
            return ScoreRow(record=record, scorecard=None)
        q = queries[record.query_id]
        candidate = parse_plan(record.plan)
        scorer = score_plan_single_prompt if config.prompt_style == "single" else score_plan
        card = scorer(
            candidate,
            q.best_plan if config.mode is EvalMode.REFERENCE_BASED else None,
            q.query,
            gateway,
            mode=config.mode,
            weights=weights,
            model_id=config.models["metric-eval"],
            seed=config.seed,
        )
        return ScoreRow(record=record, scorecard=card)

    rows = _map_tasks(tasks, score_one, config.workers)

    headers = (
        ["query_id", "llm", "prompt_type", "parseable"]
        + [f"points_{k.value}" for k in METRIC_ORDER]
        + [f"raw_{k.value}" for k in METRIC_ORDER]
        + ["total", "format_mechanical_ok", "format_disagreement"]
    )
    table: list[list] = []
    for row in rows:
        if row.scorecard is None:
            table.append(
                [row.record.query_id, row.record.llm, row.record.prompt_type, False]
                + ["0.00"] * len(METRIC_ORDER)
                + ["0.000000"] * len(METRIC_ORDER)
                + ["0.00", False, False]
            )
            continue
        card = row.scorecard
        fmt = card.per_metric[MetricKind.FORMAT]
        table.append(
            [row.record.query_id, row.record.llm, row.record.prompt_type, True]
            + [f"{card.per_metric[k].points:.2f}" for k in METRIC_ORDER]
            + [f"{card.per_metric[k].raw:.6f}" for k in METRIC_ORDER]
            + [f"{card.total:.2f}", fmt.mechanical_format_ok, bool(fmt.mechanical_format_ok and fmt.raw == 0)]
        )
    _write_csv(out / "scorecards.csv", headers, table)
    _maybe_render(out / "scorecards.txt", headers, table, config.render_text)

    # per-planner summaries with the normalized-average footer
    normalized_by_type: dict[str, dict[str, float]] = {}
    for ptype in sorted({r.record.prompt_type for r in rows}):
        subset = [r for r in rows if r.record.prompt_type == ptype]
        planners = sorted({r.record.llm for r in subset})
        sum_headers = ["llm", "overall"] + [k.value for k in METRIC_ORDER]
        sum_rows: list[list] = []
        planner_means: dict[str, list[float]] = {}
        for llm in planners:
            mine = [r for r in subset if r.record.llm == llm]
            per_metric = []
            for k in METRIC_ORDER:
                pts = [r.scorecard.per_metric[k].points if r.scorecard else 0.0 for r in mine]
                per_metric.append(sum(pts) / len(pts))
            overall = sum(per_metric)
            planner_means[llm] = per_metric
            sum_rows.append([llm, f"{overall:.2f}"] + [f"{v:.2f}" for v in per_metric])
        footer = ["Average (Normalized)"]
        overall_mean = sum(sum(m) for m in planner_means.values()) / len(planner_means)
        footer.append(f"{overall_mean:.2f}")
        normalized: dict[str, float] = {}
        for idx, k in enumerate(METRIC_ORDER):
            col_mean = sum(m[idx] for m in planner_means.values()) / len(planner_means)
            normalized[k.value] = 100.0 * col_mean / weights.weights[k]
            footer.append(f"{normalized[k.value]:.2f}")
        sum_rows.append(footer)
        normalized_by_type[ptype] = normalized
        _write_csv(out / f"summary_{ptype}.csv", sum_headers, sum_rows)
        _maybe_render(out / f"summary_{ptype}.txt", sum_headers, sum_rows, config.render_text)

    if config.figures and normalized_by_type:
        figures.normalized_metrics_figure(normalized_by_type, out / "metric_summary.png")
    return rows


# ---------------------------------------------------------------------------
# one-shot


def run_oneshot(
    data: IngestResult,
    gateway: JudgeGateway,
    config: RunConfig,
    out_dir: str | Path,
) -> list[dict]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    queries = _queries_by_id(data)
    tasks = sorted(data.plans, key=lambda p: (p.query_id, p.llm, p.prompt_type))

    def eval_one(record: GeneratedPlanRecord) -> dict:
        q = queries[record.query_id]
        result = evaluate_oneshot(
            record.plan,
            q.best_plan,
            q.query,
            gateway,
            model_id=config.models["one-shot-judge"],
            seed=config.seed,
        )
        return {
            "query_id": record.query_id,
            "llm": record.llm,
            "prompt_type": record.prompt_type,
            "result": result,
        }

    rows = _map_tasks(tasks, eval_one, config.workers)

    headers = [
        "query_id", "llm", "prompt_type", "precision", "recall", "f1",
        "format_ok", "format_fraction", "dependencies_ok_fraction",
        "placeholders_ok_fraction", "rating", "judge_rating",
    ]
    table = []
    for row in rows:
        r = row["result"]
        table.append([
            row["query_id"], row["llm"], row["prompt_type"],
            f"{r.precision:.6f}", f"{r.recall:.6f}", f"{r.f1:.6f}",
            r.format_ok, f"{r.format_fraction:.6f}",
            f"{r.dependencies_ok_fraction:.6f}", f"{r.placeholders_ok_fraction:.6f}",
            r.rating.label, r.judge_rating.label if r.judge_rating else "",
        ])
    _write_csv(out / "ratings.csv", headers, table)
    _maybe_render(out / "ratings.txt", headers, table, config.render_text)

    bucket_headers = ["llm", "prompt_type", "a_plus", "a", "b"]
    bucket_rows: list[list] = []
    bucket_data: list[dict] = []
    for ptype in sorted({r["prompt_type"] for r in rows}):
        for llm in sorted({r["llm"] for r in rows if r["prompt_type"] == ptype}):
            tiers = [r["result"].rating for r in rows if r["llm"] == llm and r["prompt_type"] == ptype]
            rates = bucket_rates(tiers)
            bucket_rows.append([llm, ptype, f"{rates.a_plus:.2f}", f"{rates.a:.2f}", f"{rates.b:.2f}"])
            bucket_data.append(
                {"llm": llm, "prompt_type": ptype, "a_plus": rates.a_plus, "a": rates.a, "b": rates.b}
            )
    _write_csv(out / "buckets.csv", bucket_headers, bucket_rows)
    _maybe_render(out / "buckets.txt", bucket_headers, bucket_rows, config.render_text)
    if config.figures and bucket_data:
        figures.bucket_rates_figure(bucket_data, out / "buckets.png")
    return rows


# ---------------------------------------------------------------------------
# refine


def run_refine(
    data: IngestResult,
    gateway: JudgeGateway,
    config: RunConfig,
    out_dir: str | Path,
) -> dict:
    """Run the refinement loop per query (initial plan = first lineage
    entry), then compare pre- and post-loop ratings against the reference
    plan. Partial traces are written before a judge failure propagates."""
    out = Path(out_dir)
    traces_dir = out / "traces"
    traces_dir.mkdir(parents=True, exist_ok=True)
    judges = LoopJudges(
        evaluator=gateway,
        optimizer=gateway,
        evaluator_model=config.models["step-evaluator"],
        optimizer_model=config.models["plan-optimizer"],
        seed=config.seed,
    )
    pre_counts = {t.label: 0 for t in _TIERS}
    post_counts = {t.label: 0 for t in _TIERS}
    results = {}
    for q in sorted(data.queries, key=lambda q: q.query_id):
        initial = q.plan_lineage.plans[0]
        try:
            trace = run_loop(initial, q.query, judges, config.loop, query_id=q.query_id)
        except LoopAborted as exc:
            (traces_dir / f"{q.query_id}.json").write_text(exc.trace.to_json(), encoding="utf-8")
            raise
        (traces_dir / f"{q.query_id}.json").write_text(trace.to_json(), encoding="utf-8")
        pre = evaluate_oneshot(initial, q.best_plan, q.query, gateway,
                               model_id=config.models["one-shot-judge"], seed=config.seed)
        post = evaluate_oneshot(trace.lineage.head, q.best_plan, q.query, gateway,
                                model_id=config.models["one-shot-judge"], seed=config.seed)
        pre_counts[pre.rating.label] += 1
        post_counts[post.rating.label] += 1
        results[q.query_id] = {"trace": trace, "pre": pre.rating, "post": post.rating}

    total = max(1, len(results))
    headers = ["tier", "pre_count", "pre_pct", "post_count", "post_pct"]
    table = [
        [t.label, pre_counts[t.label], f"{100.0 * pre_counts[t.label] / total:.2f}",
         post_counts[t.label], f"{100.0 * post_counts[t.label] / total:.2f}"]
        for t in _TIERS
    ]
    _write_csv(out / "tier_shift.csv", headers, table)
    _maybe_render(out / "tier_shift.txt", headers, table, config.render_text)
    if config.figures:
        figures.tier_shift_figure(pre_counts, post_counts, out / "tier_shift.png")
    return results


# ---------------------------------------------------------------------------
# weight learning / sensitivity


def run_learn_weights(
    triples_path: str | Path,
    out_dir: str | Path,
    budgets: tuple[float, float] = (70.0, 30.0),
    grid_step: float = 0.02,
    lattice: float = 5.0,
    render_text: bool = False,
) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    triples = read_triples(triples_path)
    result = learn_weights(triples, budgets=budgets, grid_step=grid_step)
    quantized = quantize(result.weights, lattice=lattice, budgets=budgets, triples=triples)
    payload = {
        "continuous": {k.value: result.weights.weights[k] for k in METRIC_ORDER},
        "quantized": {k.value: quantized.weights[k] for k in METRIC_ORDER},
        "margin": result.margin,
        "satisfied": result.satisfied,
        "total_constraints": result.satisfied + len(result.violations),
        "violations": [
            {"query_id": qid, "inequality": which, "slack": slack}
            for qid, which, slack in result.violations
        ],
    }
    (out / "weights.json").write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    headers = ["metric", "continuous", "quantized"]
    table = [
        [k.value, f"{result.weights.weights[k]:.4f}", f"{quantized.weights[k]:.4f}"]
        for k in METRIC_ORDER
    ]
    _write_csv(out / "weights.csv", headers, table)
    _maybe_render(out / "weights.txt", headers, table, render_text)
    return payload


def planner_mean_raws(score_rows: list[ScoreRow]) -> dict[str, dict[str, list[float]]]:
    """prompt_type -> planner -> mean raw sub-scores, unparseable rows
    counting as zeros."""
    out: dict[str, dict[str, list[float]]] = {}
    for ptype in sorted({r.record.prompt_type for r in score_rows}):
        subset = [r for r in score_rows if r.record.prompt_type == ptype]
        per: dict[str, list[float]] = {}
        for llm in sorted({r.record.llm for r in subset}):
            mine = [r for r in subset if r.record.llm == llm]
            per[llm] = [
                sum(r.scorecard.per_metric[k].raw if r.scorecard else 0.0 for r in mine) / len(mine)
                for k in METRIC_ORDER
            ]
        out[ptype] = per
    return out


def run_sensitivity(
    means_by_type: dict[str, dict[str, list[float]]],
    learned: WeightVector,
    out_dir: str | Path,
    n_draws: int = 10,
    seed: int = 0,
    make_figures: bool = True,
    render_text: bool = False,
) -> list[dict]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    headers = ["prompt_type", "rho_equal", "rho_min", "rho_median", "rho_max", "n_draws"]
    table: list[list] = []
    fig_rows: list[dict] = []
    draws_payload = {}
    for ptype in sorted(means_by_type):
        report = sensitivity(means_by_type[ptype], learned, n_draws=n_draws, seed=seed)
        if report.rho_random:
            lo, mid, hi = min(report.rho_random), median(report.rho_random), max(report.rho_random)
            table.append([ptype, f"{report.rho_equal:.3f}", f"{lo:.3f}", f"{mid:.3f}", f"{hi:.3f}", n_draws])
        else:
            table.append([ptype, f"{report.rho_equal:.3f}", "", "", "", 0])
        fig_rows.append({"prompt_type": ptype, "rho_equal": report.rho_equal,
                         "rho_random": list(report.rho_random)})
        draws_payload[ptype] = {
            "seed": report.seed,
            "rho_equal": report.rho_equal,
            "rho_random": list(report.rho_random),
            "draws": [[d.weights[k] for k in METRIC_ORDER] for d in report.draws],
        }
    _write_csv(out / "sensitivity.csv", headers, table)
    _maybe_render(out / "sensitivity.txt", headers, table, render_text)
    (out / "sensitivity_draws.json").write_text(
        json.dumps(draws_payload, indent=2, sort_keys=True), encoding="utf-8"
    )
    if make_figures and fig_rows:
        figures.sensitivity_figure(fig_rows, out / "sensitivity.png")
    return fig_rows


# ---------------------------------------------------------------------------
# agreement


def run_agree(
    labels_path: str | Path,
    out_dir: str | Path,
    ordinal_k: int | None = None,
    resamples: int = 1000,
    seed: int = 0,
    render_text: bool = False,
) -> list[list]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = read_labels(labels_path)
    a = [r[1] for r in rows]
    b = [r[2] for r in rows]
    headers = ["statistic", "value", "ci_low", "ci_high", "resamples"]
    table: list[list] = []
    nominal = kappa_with_ci(a, b, resamples=resamples, seed=seed)
    table.append(["cohen_kappa", f"{nominal.kappa:.6f}", f"{nominal.ci_low:.6f}",
                  f"{nominal.ci_high:.6f}", resamples])
    if ordinal_k:
        ia, ib = [int(x) for x in a], [int(x) for x in b]
        for scheme in ("linear", "quadratic"):
            res = kappa_with_ci(ia, ib, resamples=resamples, seed=seed, weighted=scheme, K=ordinal_k)
            table.append([f"weighted_kappa_{scheme}", f"{res.kappa:.6f}", f"{res.ci_low:.6f}",
                          f"{res.ci_high:.6f}", resamples])
    _write_csv(out / "agreement.csv", headers, table)
    _maybe_render(out / "agreement.txt", headers, table, render_text)
    return table


# ---------------------------------------------------------------------------
# validate


def run_validate(data: IngestResult, out_dir: str | Path, render_text: bool = False) -> list[list]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    headers = ["query_id", "llm", "prompt_type", "status", "detail"]
    table: list[list] = []
    for p in sorted(data.plans, key=lambda p: (p.query_id, p.llm, p.prompt_type)):
        status = "ok" if p.parseable else "flagged"
        table.append([p.query_id, p.llm, p.prompt_type, status, p.parse_error or ""])
    _write_csv(out / "validation_report.csv", headers, table)
    _maybe_render(out / "validation_report.txt", headers, table, render_text)
    return table
