"""Accuracy-vs-budget Pareto machinery: dominance, sorting, crowded selection.

Accuracy is maximized, every budget dimension is minimized. Ids are assigned
in insertion order by the engine (zero-padded), so the id tie-break used
throughout keeps selection fully deterministic and permutation-invariant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class ScoredPoint:
    id: str
    accuracy: float
    budgets: tuple[float, ...]


def dominates(a: ScoredPoint, b: ScoredPoint) -> bool:
    """True when a is at least as good everywhere and strictly better somewhere."""
    if len(a.budgets) != len(b.budgets):
        raise ValueError("points have mismatched budget dimensionality")
    if a.accuracy < b.accuracy:
        return False
    if any(ab > bb for ab, bb in zip(a.budgets, b.budgets)):
        return False
    return a.accuracy > b.accuracy or any(
        ab < bb for ab, bb in zip(a.budgets, b.budgets)
    )


def non_dominated_sort(points: list[ScoredPoint]) -> list[list[ScoredPoint]]:
    """Fast non-dominated sort into fronts; each front is returned in id order.

    Duplicate points never dominate each other, so they share a front.
    """
    n = len(points)
    if n == 0:
        return []
    dominated_by: list[list[int]] = [[] for _ in range(n)]
    domination_count = [0] * n
    for i in range(n):
        for j in range(i + 1, n):
            if dominates(points[i], points[j]):
                dominated_by[i].append(j)
                domination_count[j] += 1
            elif dominates(points[j], points[i]):
                dominated_by[j].append(i)
                domination_count[i] += 1
    fronts: list[list[ScoredPoint]] = []
    current = [i for i in range(n) if domination_count[i] == 0]
    while current:
        fronts.append(sorted((points[i] for i in current), key=lambda p: p.id))
        nxt: list[int] = []
        for i in current:
            for j in dominated_by[i]:
                domination_count[j] -= 1
                if domination_count[j] == 0:
                    nxt.append(j)
        current = nxt
    return fronts


def crowding_distance(front: list[ScoredPoint]) -> dict[str, float]:
    """Crowding distance per point id over accuracy plus every budget axis.

    Boundary points on an axis get +inf; interior points accumulate the
    normalized gap to their neighbors. An axis where all values coincide is
    skipped entirely (contributes 0, assigns no inf).
    """
    dist: dict[str, float] = {p.id: 0.0 for p in front}
    if not front:
        return dist
    n_budgets = len(front[0].budgets)
    axes = [lambda p: p.accuracy] + [
        (lambda k: lambda p: p.budgets[k])(k) for k in range(n_budgets)
    ]
    for axis in axes:
        ordered = sorted(front, key=lambda p: (axis(p), p.id))
        lo, hi = axis(ordered[0]), axis(ordered[-1])
        rng = hi - lo
        if rng == 0:
            continue
        dist[ordered[0].id] = math.inf
        dist[ordered[-1].id] = math.inf
        for i in range(1, len(ordered) - 1):
            if dist[ordered[i].id] != math.inf:
                dist[ordered[i].id] += (axis(ordered[i + 1]) - axis(ordered[i - 1])) / rng
    return dist


def select_pareto_parents(points: list[ScoredPoint], k: int) -> list[ScoredPoint]:
    """NSGA-II style parent pick: whole fronts first, crowding for the split.

    Whole fronts come through in id order. The front that does not fit is
    ranked by crowding distance descending, ties to the lower id.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if k >= len(points):
        return [p for front in non_dominated_sort(points) for p in front]
    selected: list[ScoredPoint] = []
    for front in non_dominated_sort(points):
        room = k - len(selected)
        if room == 0:
            break
        if len(front) <= room:
            selected.extend(front)
            continue
        cd = crowding_distance(front)
        ranked = sorted(front, key=lambda p: (-cd[p.id], p.id))
        selected.extend(ranked[:room])
        break
    return selected
