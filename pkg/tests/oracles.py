"""Independent recomputations used to freeze expected test values.

Deliberately naive implementations sharing no code with the package:
correctness over speed.
"""

from __future__ import annotations

import math


def brute_force_fronts(points) -> list[list[str]]:
    """Peel non-dominated layers with a quadratic scan per layer.

    Returns lists of ids, each layer sorted. Duplicated value vectors never
    dominate each other (no strict coordinate) so they share a layer.
    """

    def beats(i: int, j: int) -> bool:
        a, b = points[i], points[j]
        if a.accuracy < b.accuracy:
            return False
        if any(x > y for x, y in zip(a.budgets, b.budgets)):
            return False
        return a.accuracy > b.accuracy or any(
            x < y for x, y in zip(a.budgets, b.budgets)
        )

    remaining = set(range(len(points)))
    fronts: list[list[str]] = []
    while remaining:
        layer = [
            i
            for i in remaining
            if not any(beats(j, i) for j in remaining if j != i)
        ]
        fronts.append(sorted(points[i].id for i in layer))
        remaining -= set(layer)
    return fronts


def surrogate_params(depth: int, width: int) -> float:
    return float(depth * width * width * 64)


def surrogate_flops(depth: int, width: int) -> float:
    return surrogate_params(depth, width) * 1024.0


def surrogate_val(depth: int, width: int, bonus_tags: int) -> float:
    raw = 100.0 * (1.0 - math.exp(-depth * width / 256.0))
    return min(99.0, raw * (1.0 + 0.01 * bonus_tags))


def chi_square(counts: dict[str, int], total: int) -> float:
    """Pearson statistic against the uniform expectation."""
    k = len(counts)
    expected = total / k
    return sum((c - expected) ** 2 / expected for c in counts.values())
