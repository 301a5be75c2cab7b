"""Binomial confidence intervals."""

from __future__ import annotations

import math
from statistics import NormalDist


class DomainError(ValueError):
    pass


def wilson_interval(successes: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    """Two-sided Wilson score interval for a binomial proportion, as fractions in [0, 1]."""
    if trials < 1:
        raise DomainError("Wilson interval needs at least one trial")
    if not 0 <= successes <= trials:
        raise DomainError(f"successes must lie in [0, {trials}], got {successes}")
    if not 0 < confidence < 1:
        raise DomainError("confidence must lie strictly between 0 and 1")
    z = NormalDist().inv_cdf(0.5 + confidence / 2)
    n, p = trials, successes / trials
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    lo, hi = centre - half, centre + half
    # the closed form reaches the boundary exactly in real arithmetic
    if successes == 0:
        lo = 0.0
    if successes == trials:
        hi = 1.0
    return max(0.0, lo), min(1.0, hi)


def as_percent(interval: tuple[float, float], digits: int = 1) -> tuple[float, float]:
    return round(interval[0] * 100, digits), round(interval[1] * 100, digits)
