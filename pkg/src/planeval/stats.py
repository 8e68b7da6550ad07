"""Agreement and correlation statistics: Cohen's kappa, weighted kappa,
Fleiss' kappa, Spearman rank correlation, and bootstrap confidence
intervals. All pure functions, deterministic given a seed."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import (
    EmptyItems,
    EmptySeries,
    LabelOutOfRange,
    LengthMismatch,
    RowSumMismatch,
    ZeroVariance,
)


@dataclass(frozen=True)
class KappaResult:
    kappa: float
    ci_low: float
    ci_high: float
    resamples: int


def _check_paired(a: Sequence, b: Sequence) -> None:
    if len(a) != len(b):
        raise LengthMismatch(f"series lengths differ: {len(a)} vs {len(b)}")
    if len(a) == 0:
        raise EmptySeries("series are empty")


def cohen_kappa(a: Sequence, b: Sequence) -> float:
    """kappa = (p_o - p_e) / (1 - p_e), chance agreement from the marginal
    products. When both raters use a single identical category (p_e = 1,
    p_o = 1) the agreement is perfect by convention."""
    _check_paired(a, b)
    n = len(a)
    labels = sorted(set(a) | set(b), key=str)
    index = {lab: i for i, lab in enumerate(labels)}
    observed = np.zeros((len(labels), len(labels)))
    for x, y in zip(a, b):
        observed[index[x], index[y]] += 1
    observed /= n
    p_o = float(np.trace(observed))
    marg_a = observed.sum(axis=1)
    marg_b = observed.sum(axis=0)
    p_e = float(marg_a @ marg_b)
    if abs(1 - p_e) < 1e-12:
        if abs(1 - p_o) < 1e-12:
            return 1.0
        raise ZeroVariance("chance agreement is 1 but observed agreement is not")
    return (p_o - p_e) / (1 - p_e)


def weighted_kappa(a: Sequence[int], b: Sequence[int], K: int, scheme: str = "quadratic") -> float:
    """Weighted kappa in penalty form: 1 - sum(penalty*O) / sum(penalty*E)
    where the quadratic penalty is ((i-j)/(K-1))^2 and the linear penalty is
    |i-j|/(K-1). The nominal scheme (0/1 identity weights) reduces to
    Cohen's kappa. Labels are 1..K."""
    _check_paired(a, b)
    if scheme not in ("quadratic", "linear", "nominal"):
        raise ValueError(f"unknown weighting scheme {scheme!r}")
    for series in (a, b):
        for lab in series:
            if not isinstance(lab, (int, np.integer)) or not (1 <= int(lab) <= K):
                raise LabelOutOfRange(f"label {lab!r} outside 1..{K}")
    n = len(a)
    observed = np.zeros((K, K))
    for x, y in zip(a, b):
        observed[x - 1, y - 1] += 1
    marg_a = observed.sum(axis=1)
    marg_b = observed.sum(axis=0)
    expected = np.outer(marg_a, marg_b) / n

    i = np.arange(K)[:, None]
    j = np.arange(K)[None, :]
    if scheme == "nominal":
        penalty = (i != j).astype(float)
    elif K == 1:
        penalty = np.zeros((1, 1))
    elif scheme == "quadratic":
        penalty = ((i - j) / (K - 1)) ** 2
    else:
        penalty = np.abs(i - j) / (K - 1)

    denom = float((penalty * expected).sum())
    num = float((penalty * observed).sum())
    if denom < 1e-12:
        # both raters stuck to one identical category: perfect by convention
        return 1.0
    return 1.0 - num / denom


def fleiss_kappa(ratings: Sequence[Sequence[int]], raters_per_item: int) -> float:
    """Fleiss' kappa over an items x categories count matrix. Each row must
    sum to the rater count. A single category used everywhere makes the
    denominator degenerate; that is perfect agreement by convention."""
    table = np.asarray(ratings, dtype=float)
    if table.ndim != 2 or table.shape[0] == 0:
        raise EmptySeries("ratings matrix must be non-empty and 2-D")
    if raters_per_item < 2:
        raise RowSumMismatch("need at least 2 raters per item")
    sums = table.sum(axis=1)
    if not np.all(sums == raters_per_item):
        bad = int(np.argmax(sums != raters_per_item))
        raise RowSumMismatch(f"row {bad} sums to {sums[bad]}, expected {raters_per_item}")
    n_items, _ = table.shape
    m = raters_per_item
    p_i = ((table * table).sum(axis=1) - m) / (m * (m - 1))
    p_bar = float(p_i.mean())
    p_cat = table.sum(axis=0) / (n_items * m)
    p_e = float((p_cat * p_cat).sum())
    if abs(1 - p_e) < 1e-12:
        return 1.0
    return (p_bar - p_e) / (1 - p_e)


def average_ranks(x: Sequence[float]) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    arr = np.asarray(x, dtype=float)
    order = np.argsort(arr, kind="stable")
    ranks = np.empty(len(arr), dtype=float)
    i = 0
    while i < len(arr):
        j = i
        while j + 1 < len(arr) and arr[order[j + 1]] == arr[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def spearman_rho(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson correlation of average ranks."""
    _check_paired(x, y)
    if len(x) < 3:
        raise LengthMismatch("spearman_rho needs at least 3 paired values")
    rx, ry = average_ranks(x), average_ranks(y)
    rx_c = rx - rx.mean()
    ry_c = ry - ry.mean()
    denom = float(np.sqrt((rx_c @ rx_c) * (ry_c @ ry_c)))
    if denom < 1e-12:
        raise ZeroVariance("an input series is constant; ranks have no variance")
    return float((rx_c @ ry_c) / denom)


def bootstrap_ci(
    statistic: Callable[[list], float],
    items: Sequence,
    resamples: int = 1000,
    level: float = 0.95,
    seed: int = 0,
) -> tuple[float, float]:
    """Seeded nonparametric bootstrap percentile interval for a statistic
    over item resamples (with replacement)."""
    items = list(items)
    if not items:
        raise EmptyItems("bootstrap needs at least one item")
    if resamples < 1:
        raise ValueError("resamples must be >= 1")
    rng = np.random.default_rng(seed)
    n = len(items)
    values = np.empty(resamples)
    for r in range(resamples):
        draw = rng.integers(0, n, size=n)
        values[r] = statistic([items[k] for k in draw])
    alpha = (1 - level) / 2
    low, high = np.quantile(values, [alpha, 1 - alpha])
    return float(low), float(high)


def kappa_with_ci(
    a: Sequence,
    b: Sequence,
    resamples: int = 1000,
    level: float = 0.95,
    seed: int = 0,
    weighted: bool | str = False,
    K: int | None = None,
) -> KappaResult:
    """Point estimate plus bootstrap CI for Cohen's kappa (optionally
    weighted, scheme 'linear' or 'quadratic')."""
    _check_paired(a, b)
    pairs = list(zip(a, b))

    def stat(sample_pairs: list) -> float:
        xs = [p[0] for p in sample_pairs]
        ys = [p[1] for p in sample_pairs]
        try:
            if weighted:
                scheme = weighted if isinstance(weighted, str) else "quadratic"
                return weighted_kappa(xs, ys, K=K or max(max(xs), max(ys)), scheme=scheme)
            return cohen_kappa(xs, ys)
        except ZeroVariance:
            return 1.0 if xs == ys else 0.0

    point = stat(pairs)
    low, high = bootstrap_ci(stat, pairs, resamples=resamples, level=level, seed=seed)
    return KappaResult(kappa=point, ci_low=low, ci_high=high, resamples=resamples)
