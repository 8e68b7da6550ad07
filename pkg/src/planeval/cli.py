"""Command-line interface.

Subcommands: validate, score, oneshot, refine, learn-weights, sensitivity,
agree, report. Each writes delimited tables (and figures on report paths)
under --out; nothing ever mutates an input file.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .config import RunConfig
from .dataset import ingest
from .errors import PlanEvalError
from .metrics import METRIC_ORDER, EvalMode
from .reports import (
    planner_mean_raws,
    run_agree,
    run_learn_weights,
    run_oneshot,
    run_refine,
    run_score,
    run_sensitivity,
    run_validate,
    write_manifest,
)


def _add_common(parser: argparse.ArgumentParser, needs_corpus: bool = True) -> None:
    parser.add_argument("--config", help="JSON run-config file")
    if needs_corpus:
        parser.add_argument("--queries", help="queries.csv path")
        parser.add_argument("--plans", help="plans.csv path")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seed", type=int, help="random seed")
    parser.add_argument("--judge", help="judge backend: remote | scripted:PATH")
    parser.add_argument("--mode", choices=["reference-based", "reference-free"])
    parser.add_argument("--prompt-style", choices=["single", "deconstructed"])
    parser.add_argument("--max-passes", type=int, help="refinement pass cap")
    parser.add_argument("--workers", type=int, help="parallel worker count")
    parser.add_argument("--weights", dest="weights_path", help="weights JSON (learn-weights output)")
    parser.add_argument("--cache-dir", help="judge response cache root")
    parser.add_argument("--no-figures", action="store_true", help="skip figure rendering")
    parser.add_argument("--render-text", action="store_true", help="also write aligned-text tables")


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    if getattr(args, "judge", None):
        cfg.judge = args.judge
    if getattr(args, "mode", None):
        cfg.mode = EvalMode(args.mode)
    if getattr(args, "prompt_style", None):
        cfg.prompt_style = args.prompt_style
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "max_passes", None):
        from .loop import LoopConfig

        cfg.loop = LoopConfig(max_passes=args.max_passes,
                              max_optimizer_calls_per_pass=cfg.loop.max_optimizer_calls_per_pass)
    if getattr(args, "workers", None):
        cfg.workers = args.workers
    if getattr(args, "weights_path", None):
        cfg.weights_path = args.weights_path
    if getattr(args, "cache_dir", None):
        cfg.cache_dir = args.cache_dir
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    if getattr(args, "no_figures", False):
        cfg.figures = False
    if getattr(args, "render_text", False):
        cfg.render_text = True
    return cfg


def _ingest_for(args: argparse.Namespace, cfg: RunConfig):
    if not args.queries or not args.plans:
        raise PlanEvalError("this command needs --queries and --plans")
    data = ingest(args.queries, args.plans)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out, cfg, {"queries": args.queries, "plans": args.plans})
    return data


def cmd_validate(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    data = _ingest_for(args, cfg)
    run_validate(data, cfg.out_dir, render_text=cfg.render_text)
    print(json.dumps(data.summary, indent=2, sort_keys=True))
    return 0


def cmd_score(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    data = _ingest_for(args, cfg)
    gateway = cfg.build_gateway()
    rows = run_score(data, gateway, cfg, cfg.out_dir)
    print(f"scored {len(rows)} plans -> {cfg.out_dir}/scorecards.csv")
    return 0


def cmd_oneshot(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    data = _ingest_for(args, cfg)
    gateway = cfg.build_gateway()
    rows = run_oneshot(data, gateway, cfg, cfg.out_dir)
    print(f"rated {len(rows)} plans -> {cfg.out_dir}/ratings.csv")
    return 0


def cmd_refine(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    data = _ingest_for(args, cfg)
    gateway = cfg.build_gateway()
    results = run_refine(data, gateway, cfg, cfg.out_dir)
    print(f"refined {len(results)} queries -> {cfg.out_dir}/traces/")
    return 0


def cmd_learn_weights(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    payload = run_learn_weights(
        args.triples,
        cfg.out_dir,
        grid_step=args.grid_step,
        lattice=args.lattice,
        render_text=cfg.render_text,
    )
    print(json.dumps({k: payload[k] for k in ("quantized", "margin", "satisfied")}, indent=2, sort_keys=True))
    return 0


def cmd_sensitivity(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    learned = cfg.load_weights()
    means_by_type: dict[str, dict[str, list[float]]] = {}
    with open(args.scorecards, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    buckets: dict[tuple[str, str], list[list[float]]] = {}
    for row in rows:
        key = (row["prompt_type"], row["llm"])
        buckets.setdefault(key, []).append([float(row[f"raw_{k.value}"]) for k in METRIC_ORDER])
    for (ptype, llm), vecs in buckets.items():
        means = [sum(v[i] for v in vecs) / len(vecs) for i in range(len(METRIC_ORDER))]
        means_by_type.setdefault(ptype, {})[llm] = means
    run_sensitivity(
        means_by_type,
        learned,
        cfg.out_dir,
        n_draws=args.draws,
        seed=cfg.seed,
        make_figures=cfg.figures,
        render_text=cfg.render_text,
    )
    print(f"sensitivity tables -> {cfg.out_dir}/sensitivity.csv")
    return 0


def cmd_agree(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    table = run_agree(
        args.labels,
        cfg.out_dir,
        ordinal_k=args.ordinal_k,
        resamples=args.resamples,
        seed=cfg.seed,
        render_text=cfg.render_text,
    )
    for row in table:
        print(f"{row[0]}: {row[1]} [{row[2]}, {row[3]}]")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    """Full pipeline over a corpus: validate, score, one-shot, sensitivity,
    figures, one output directory."""
    cfg = _config_from_args(args)
    data = _ingest_for(args, cfg)
    gateway = cfg.build_gateway()
    run_validate(data, cfg.out_dir, render_text=cfg.render_text)
    score_rows = run_score(data, gateway, cfg, cfg.out_dir)
    run_oneshot(data, gateway, cfg, cfg.out_dir)
    means = planner_mean_raws(score_rows)
    if all(len(per) >= 3 for per in means.values()) and means:
        run_sensitivity(
            means,
            cfg.load_weights(),
            cfg.out_dir,
            seed=cfg.seed,
            make_figures=cfg.figures,
            render_text=cfg.render_text,
        )
    print(f"report tables -> {cfg.out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="planeval",
        description="Tool-aware plan evaluation: parse and validate plan DAGs, score them "
        "against references, refine them, learn metric weights, and compute agreement stats.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="ingest a corpus and report parse/validation outcomes")
    _add_common(p)
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("score", help="metric-wise scoring of generated plans")
    _add_common(p)
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser("oneshot", help="one-shot plan-to-reference ratings and quality buckets")
    _add_common(p)
    p.set_defaults(fn=cmd_oneshot)

    p = sub.add_parser("refine", help="run the evaluator->optimizer loop per query")
    _add_common(p)
    p.set_defaults(fn=cmd_refine)

    p = sub.add_parser("learn-weights", help="learn metric weights from lineage triples")
    _add_common(p, needs_corpus=False)
    p.add_argument("--triples", required=True, help="lineage-triples CSV")
    p.add_argument("--grid-step", type=float, default=0.02)
    p.add_argument("--lattice", type=float, default=5.0)
    p.set_defaults(fn=cmd_learn_weights)

    p = sub.add_parser("sensitivity", help="weight-sensitivity analysis over a scorecards table")
    _add_common(p, needs_corpus=False)
    p.add_argument("--scorecards", required=True, help="scorecards.csv from the score command")
    p.add_argument("--draws", type=int, default=10)
    p.set_defaults(fn=cmd_sensitivity)

    p = sub.add_parser("agree", help="inter-annotator agreement statistics")
    _add_common(p, needs_corpus=False)
    p.add_argument("--labels", required=True, help="CSV with item_id, rater_a, rater_b")
    p.add_argument("--ordinal-k", type=int, help="treat labels as ordinal 1..K and add weighted kappa")
    p.add_argument("--resamples", type=int, default=1000)
    p.set_defaults(fn=cmd_agree)

    p = sub.add_parser("report", help="validate + score + oneshot + sensitivity in one run")
    _add_common(p)
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (PlanEvalError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
