import random

import pytest

from helpers import reference_wilson
from reqsmith.stats import DomainError, as_percent, wilson_interval


@pytest.mark.parametrize(
    "s, n, expected",
    [
        (2, 64, (0.9, 10.7)),
        (64, 64, (94.3, 100.0)),
        (39, 39, (91.0, 100.0)),
        (0, 64, (0.0, 5.7)),
    ],
)
def test_published_intervals(s, n, expected):
    assert as_percent(wilson_interval(s, n)) == expected


@pytest.mark.parametrize("s, n", [(0, 0), (-1, 5), (6, 5)])
def test_domain_errors(s, n):
    with pytest.raises(DomainError):
        wilson_interval(s, n)


def test_confidence_bounds():
    with pytest.raises(DomainError):
        wilson_interval(1, 2, confidence=1.0)
    narrow, wide = wilson_interval(5, 10, 0.5), wilson_interval(5, 10, 0.99)
    assert wide[0] < narrow[0] < narrow[1] < wide[1]


def test_agrees_with_high_precision_reference():
    rng = random.Random(2024)
    worst = 0.0
    for _ in range(1000):
        n = rng.randint(1, 5000)
        s = rng.randint(0, n)
        got, ref = wilson_interval(s, n), reference_wilson(s, n)
        worst = max(worst, abs(got[0] - ref[0]), abs(got[1] - ref[1]))
    assert worst < 1e-9


def test_interval_contains_point_estimate():
    for n in range(1, 40):
        for s in range(n + 1):
            lo, hi = wilson_interval(s, n)
            assert 0.0 <= lo <= s / n <= hi <= 1.0
