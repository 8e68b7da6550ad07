"""Matplotlib renderings saved next to the delimited report tables.

Every renderer takes plain data and an output path, draws with the Agg
backend, and writes a PNG with fixed metadata so repeated runs produce
byte-identical files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

_SAVE_KWARGS = {"dpi": 100, "metadata": {"Software": "planeval"}}
_TIER_LABELS = (
    "Extremely Bad",
    "Very Bad",
    "Bad",
    "Acceptable",
    "Good",
    "Very Good",
    "Extremely Good",
)


def _finish(fig, out_path: str | Path) -> Path:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(out_path, **_SAVE_KWARGS)
    plt.close(fig)
    return out_path


def normalized_metrics_figure(per_prompt_type: dict[str, dict[str, float]], out_path: str | Path) -> Path:
    """Grouped bars: normalized average (percent) per metric, one group of
    bars per prompt type."""
    prompt_types = sorted(per_prompt_type)
    metrics = list(next(iter(per_prompt_type.values())))
    fig, ax = plt.subplots(figsize=(9, 4))
    width = 0.8 / max(1, len(prompt_types))
    for t, ptype in enumerate(prompt_types):
        values = [per_prompt_type[ptype].get(m, 0.0) for m in metrics]
        xs = [i + t * width for i in range(len(metrics))]
        ax.bar(xs, values, width=width, label=ptype)
    ax.set_xticks([i + width * (len(prompt_types) - 1) / 2 for i in range(len(metrics))])
    ax.set_xticklabels(metrics, rotation=30, ha="right")
    ax.set_ylabel("normalized average (%)")
    ax.set_ylim(0, 100)
    ax.set_title("Metric-wise quality, normalized per metric budget")
    ax.legend()
    return _finish(fig, out_path)


def bucket_rates_figure(rows: list[dict], out_path: str | Path) -> Path:
    """Per-planner A+/A/B percentages, one panel per prompt type."""
    prompt_types = sorted({r["prompt_type"] for r in rows})
    fig, axes = plt.subplots(1, max(1, len(prompt_types)), figsize=(6 * max(1, len(prompt_types)), 4.5),
                             squeeze=False)
    for ax, ptype in zip(axes[0], prompt_types):
        subset = sorted((r for r in rows if r["prompt_type"] == ptype),
                        key=lambda r: -r["a_plus"])
        names = [r["llm"] for r in subset]
        xs = range(len(subset))
        for key, label in (("b", "B"), ("a", "A"), ("a_plus", "A+")):
            ax.bar(list(xs), [r[key] for r in subset], label=label)
        ax.set_xticks(list(xs))
        ax.set_xticklabels(names, rotation=60, ha="right", fontsize=7)
        ax.set_ylabel("% of plans")
        ax.set_ylim(0, 100)
        ax.set_title(f"Quality buckets ({ptype})")
        ax.legend()
    return _finish(fig, out_path)


def tier_shift_figure(pre_counts: dict[str, int], post_counts: dict[str, int], out_path: str | Path) -> Path:
    """Pre-loop vs post-loop rating distributions."""
    fig, ax = plt.subplots(figsize=(9, 4))
    xs = range(len(_TIER_LABELS))
    width = 0.4
    ax.bar([x - width / 2 for x in xs], [pre_counts.get(t, 0) for t in _TIER_LABELS],
           width=width, label="pre-loop")
    ax.bar([x + width / 2 for x in xs], [post_counts.get(t, 0) for t in _TIER_LABELS],
           width=width, label="post-loop")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(_TIER_LABELS, rotation=30, ha="right")
    ax.set_ylabel("plans")
    ax.set_title("Rating distribution before and after refinement")
    ax.legend()
    return _finish(fig, out_path)


def sensitivity_figure(rows: list[dict], out_path: str | Path) -> Path:
    """Equal-weights rho and the random-draw rho spread per prompt type."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for i, row in enumerate(rows):
        draws = row["rho_random"]
        ax.scatter([i] * len(draws), draws, marker="o", alpha=0.6, label="random draws" if i == 0 else None)
        ax.scatter([i], [row["rho_equal"]], marker="D", s=70, zorder=3,
                   label="equal weights" if i == 0 else None)
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels([r["prompt_type"] for r in rows])
    ax.set_ylabel("Spearman rho vs learned weights")
    ax.set_ylim(0, 1.05)
    ax.set_title("Ranking stability under alternative metric weights")
    ax.legend(loc="lower right")
    return _finish(fig, out_path)
