"""Metric-weight learning from human-ordered lineage triples, plus the
weight-sensitivity analysis.

For each validation query the three best plans in its lineage give two
ordering constraints (best over penultimate, penultimate over
antepenultimate) on the weighted total. The learner walks a grid over the
two group simplices (Effectiveness scaled to 70 points, Efficiency to 30),
keeping the vector that satisfies the most constraints and, among ties, the
one with the largest median margin; remaining ties go to the first vector
in lexicographic grid order, so the search parallelizes without changing
the winner.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import DegenerateGrid, EmptyTriples, InfeasibleLattice, TooFewPlanners
from .metrics import EFFECTIVENESS, EFFICIENCY, METRIC_ORDER, WeightVector
from .stats import spearman_rho

_N_EFF = len(EFFECTIVENESS)
_N_FFF = len(EFFICIENCY)
_SAT_TOL = 1e-12


@dataclass(frozen=True)
class LineageTriple:
    """Raw seven-metric sub-scores for the three best plans of one query,
    in canonical metric order."""

    query_id: str
    s_best: tuple[float, ...]
    s_pen: tuple[float, ...]
    s_ante: tuple[float, ...]

    def __post_init__(self):
        for name, vec in (("s_best", self.s_best), ("s_pen", self.s_pen), ("s_ante", self.s_ante)):
            if len(vec) != len(METRIC_ORDER):
                raise ValueError(f"{name} must have {len(METRIC_ORDER)} components")
            if any(not (0 <= v <= 1) for v in vec):
                raise ValueError(f"{name} components must lie in [0, 1]")


@dataclass(frozen=True)
class LearnResult:
    weights: WeightVector
    margin: float
    satisfied: int
    violations: tuple[tuple[str, str, float], ...]  # (query_id, inequality, slack)


@dataclass(frozen=True)
class SensitivityReport:
    rho_equal: float
    rho_random: tuple[float, ...]
    draws: tuple[WeightVector, ...]
    seed: int


# ---------------------------------------------------------------------------
# grid enumeration


def compositions(total: int, parts: int) -> Iterator[tuple[int, ...]]:
    """All tuples of `parts` non-negative ints summing to `total`, in
    lexicographic order."""
    if parts == 1:
        yield (total,)
        return
    for head in range(total + 1):
        for tail in compositions(total - head, parts - 1):
            yield (head, *tail)


def _resolution(grid_step: float) -> int:
    if grid_step <= 0 or grid_step > 1:
        raise DegenerateGrid(f"grid step {grid_step} must lie in (0, 1]")
    r = round(1.0 / grid_step)
    if abs(r * grid_step - 1.0) > 1e-9:
        raise DegenerateGrid(f"grid step {grid_step} does not divide the simplex")
    return r


def constraint_matrix(triples: Sequence[LineageTriple]) -> tuple[np.ndarray, list[tuple[str, str]]]:
    """Stack the best>pen rows then the pen>ante rows; each row is the
    seven-component score difference."""
    rows, labels = [], []
    for t in triples:
        rows.append(np.asarray(t.s_best) - np.asarray(t.s_pen))
        labels.append((t.query_id, "best>pen"))
    for t in triples:
        rows.append(np.asarray(t.s_pen) - np.asarray(t.s_ante))
        labels.append((t.query_id, "pen>ante"))
    return np.asarray(rows, dtype=float), labels


def learn_weights(
    triples: Sequence[LineageTriple],
    budgets: tuple[float, float] = (70.0, 30.0),
    grid_step: float = 0.02,
) -> LearnResult:
    if not triples:
        raise EmptyTriples("weight learning needs at least one triple")
    r = _resolution(grid_step)
    b_eff, b_fff = budgets

    eff_grid = np.asarray(list(compositions(r, _N_EFF)), dtype=float) * (b_eff / r)
    fff_grid = np.asarray(list(compositions(r, _N_FFF)), dtype=float) * (b_fff / r)
    deltas, labels = constraint_matrix(triples)
    n_con = deltas.shape[0]

    # margins decompose over the two group simplices, so candidate (i, j)
    # has margin column eff_part[:, i] + fff_part[:, j]
    eff_part = deltas[:, :_N_EFF] @ eff_grid.T  # (n_con, n_eff)
    fff_part = deltas[:, _N_EFF:] @ fff_grid.T  # (n_con, n_fff)
    n_eff, n_fff = eff_grid.shape[0], fff_grid.shape[0]
    chunk = max(1, int(5e6 // max(1, n_fff * n_con)))

    # phase 1: the best satisfied-constraint count
    best_count = -1
    for start in range(0, n_eff, chunk):
        margins = eff_part[:, start : start + chunk, None] + fff_part[:, None, :]
        counts = (margins >= -_SAT_TOL).sum(axis=0)
        best_count = max(best_count, int(counts.max()))

    # phase 2: among max-satisfied candidates, maximize the median margin;
    # remaining ties go to the first candidate in lexicographic (eff, fff)
    # grid order, which chunked iteration preserves via strict comparisons
    best_median = -np.inf
    best_pair: tuple[int, int] | None = None
    for start in range(0, n_eff, chunk):
        margins = eff_part[:, start : start + chunk, None] + fff_part[:, None, :]
        counts = (margins >= -_SAT_TOL).sum(axis=0)
        hit_i, hit_j = np.nonzero(counts == best_count)
        if hit_i.size == 0:
            continue
        medians = np.median(margins[:, hit_i, hit_j], axis=0)
        chunk_best = float(medians.max())
        if chunk_best <= best_median:
            continue
        top = np.nonzero(medians == chunk_best)[0]
        k = top[np.lexsort((hit_j[top], hit_i[top]))[0]]
        best_median = chunk_best
        best_pair = (start + int(hit_i[k]), int(hit_j[k]))

    assert best_pair is not None
    i, j = best_pair
    w = np.concatenate([eff_grid[i], fff_grid[j]])
    margins = deltas @ w
    satisfied_mask = margins >= -_SAT_TOL
    satisfied = int(satisfied_mask.sum())
    gamma = float(max(0.0, margins.min())) if satisfied == n_con else 0.0
    violations = tuple(
        (labels[c][0], labels[c][1], float(-margins[c])) for c in range(n_con) if not satisfied_mask[c]
    )
    weights = WeightVector.from_sequence(w, effectiveness_budget=b_eff, efficiency_budget=b_fff)
    return LearnResult(weights=weights, margin=gamma, satisfied=satisfied, violations=violations)


def hinge_relaxed_objective(
    weights: WeightVector,
    triples: Sequence[LineageTriple],
    gamma: float,
    penalty: float = 1.0,
) -> float:
    """gamma minus penalty times the total slack by which constraints miss
    the target margin; ranks grid candidates when no vector satisfies
    everything."""
    if penalty <= 0:
        raise ValueError("penalty must be positive")
    deltas, _ = constraint_matrix(triples)
    margins = deltas @ np.asarray(weights.as_tuple())
    slack = np.maximum(0.0, gamma - margins)
    return float(gamma - penalty * slack.sum())


# ---------------------------------------------------------------------------
# quantization


def _quantize_group(values: Sequence[float], lattice: float, budget: float) -> list[float]:
    target_units = round(budget / lattice)
    if abs(target_units * lattice - budget) > 1e-9:
        raise InfeasibleLattice(f"lattice {lattice} does not divide budget {budget}")
    units = [v / lattice for v in values]
    floors = [int(np.floor(u + 1e-12)) for u in units]
    leftover = target_units - sum(floors)
    if leftover < 0:
        raise InfeasibleLattice("group exceeds its budget")
    # largest remainder first; ties break on the earlier component
    order = sorted(range(len(values)), key=lambda k: (-(units[k] - floors[k]), k))
    for k in order[:leftover]:
        floors[k] += 1
    return [f * lattice for f in floors]


def quantize(
    weights: WeightVector,
    lattice: float = 5.0,
    budgets: tuple[float, float] | None = None,
    triples: Sequence[LineageTriple] | None = None,
) -> WeightVector:
    """Round to the lattice by largest remainder, preserving both group sums
    exactly (this is the minimum-L1 sum-preserving rounding). When triples
    are supplied, warns if quantization costs satisfied constraints."""
    if lattice <= 0:
        raise InfeasibleLattice("lattice must be positive")
    b_eff = budgets[0] if budgets else weights.effectiveness_budget
    b_fff = budgets[1] if budgets else weights.efficiency_budget
    eff = _quantize_group([weights.weights[k] for k in EFFECTIVENESS], lattice, b_eff)
    fff = _quantize_group([weights.weights[k] for k in EFFICIENCY], lattice, b_fff)
    result = WeightVector.from_sequence(eff + fff, effectiveness_budget=b_eff, efficiency_budget=b_fff)
    if triples:
        deltas, _ = constraint_matrix(triples)
        before = int((deltas @ np.asarray(weights.as_tuple()) >= -_SAT_TOL).sum())
        after = int((deltas @ np.asarray(result.as_tuple()) >= -_SAT_TOL).sum())
        if after < before:
            warnings.warn(
                f"quantization dropped satisfied constraints: {before} -> {after}",
                stacklevel=2,
            )
    return result


# ---------------------------------------------------------------------------
# sensitivity analysis


def _scores_under(weights_vec: np.ndarray, means: np.ndarray) -> np.ndarray:
    return means @ weights_vec


def sensitivity(
    per_planner_scorecards: Mapping[str, Sequence[float]],
    learned: WeightVector,
    n_draws: int = 10,
    seed: int = 0,
) -> SensitivityReport:
    """Spearman correlation between the planner ranking under the learned
    weights and (a) equal weights over normalized metrics, (b) random
    budget-preserving weight vectors (independent symmetric Dirichlet per
    group, scaled to the point budgets)."""
    planners = sorted(per_planner_scorecards)
    if len(planners) < 3:
        raise TooFewPlanners(f"sensitivity needs at least 3 planners, got {len(planners)}")
    means = np.asarray([per_planner_scorecards[p] for p in planners], dtype=float)
    if means.shape[1] != len(METRIC_ORDER):
        raise ValueError("per-planner sub-score vectors must have 7 components")

    learned_scores = _scores_under(np.asarray(learned.as_tuple()), means)
    equal_scores = means.mean(axis=1) * 100.0
    rho_equal = spearman_rho(learned_scores, equal_scores)

    rng = np.random.default_rng(seed)
    draws: list[WeightVector] = []
    rhos: list[float] = []
    for _ in range(n_draws):
        eff = rng.dirichlet(np.ones(len(EFFECTIVENESS)))
        fff = rng.dirichlet(np.ones(len(EFFICIENCY)))
        eff = eff / eff.sum() * learned.effectiveness_budget
        fff = fff / fff.sum() * learned.efficiency_budget
        draw = WeightVector.from_sequence(
            np.concatenate([eff, fff]),
            effectiveness_budget=learned.effectiveness_budget,
            efficiency_budget=learned.efficiency_budget,
        )
        draws.append(draw)
        rhos.append(spearman_rho(learned_scores, _scores_under(np.asarray(draw.as_tuple()), means)))
    return SensitivityReport(rho_equal=rho_equal, rho_random=tuple(rhos), draws=tuple(draws), seed=seed)
