"""Independent brute-force implementations used as test oracles.

These deliberately evaluate the defining formulas directly (double sums,
per-term share loops, cumulative scans) and share no code with the
package's implementations.
"""

from __future__ import annotations

import math

import numpy as np


def clamp_negatives(values):
    return [0 if v < 0 else v for v in values]


def gini_double_sum_python(values) -> float | None:
    """Literal mean-absolute-difference double sum over clamped values."""
    x = clamp_negatives([float(v) for v in values])
    n = len(x)
    mu = sum(x) / n
    if mu == 0:
        return None
    total = 0.0
    for xi in x:
        for xj in x:
            total += abs(xi - xj)
    return total / (2 * n * n * mu)


def entropy_bits_python(values) -> float | None:
    x = clamp_negatives([float(v) for v in values])
    total = sum(x)
    if total == 0:
        return None
    h = 0.0
    for v in x:
        p = v / total
        if p > 0:
            h -= p * math.log2(p)
    return h


def hhi_python(values) -> float | None:
    x = clamp_negatives([float(v) for v in values])
    total = sum(x)
    if total == 0:
        return None
    return sum((v / total) ** 2 for v in x)


def nakamoto_numpy(values) -> int | None:
    """Cumulative scan over the descending-sorted clamped vector."""
    x = np.clip(np.asarray([float(v) for v in values]), 0.0, None)
    total = x.sum()
    if total <= 0:
        return None
    ordered = np.sort(x)[::-1]
    cumulative = np.cumsum(ordered)
    above = np.nonzero(2.0 * cumulative > total)[0]
    return int(above[0]) + 1
