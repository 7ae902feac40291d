"""Closed-form expected-test formulas and integer pool-size optimizers.

All tests-per-patient (TPP) helpers use the asymptotic ``m / n`` pool count;
remainders are only modelled by the executable strategies.

Optimizers follow one convention: size 1 means "test everyone individually"
and is scored at TPP 1.0, so a result with ``best_size == 1`` says pooling
does not pay at that prevalence.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Dict

import numpy as np

from .model import (
    MAX_POOL,
    InfectionVector,
    StrategyOutcome,
    check_pool_size,
    check_population,
    check_probability,
)

BRUTE_FORCE_MAX_N = 12


class GridTooLargeError(ValueError):
    """The n x n matrix needs more samples than the population holds."""

    code = "grid-exceeds-population"


class PrevalenceTooHighError(ValueError):
    """Expected positives per matrix exceed n, outside the worst-case formula's range."""

    code = "prevalence-above-1/n"


@dataclass(frozen=True)
class OptimizationResult:
    best_size: int
    best_tpp: float
    profile: Dict[int, float] = field(default_factory=dict)

    @property
    def pooling(self) -> bool:
        return self.best_size > 1


def _argmin_smallest(profile: Dict[int, float]) -> OptimizationResult:
    best = min(sorted(profile), key=lambda k: profile[k])
    return OptimizationResult(best, profile[best], dict(sorted(profile.items())))


# -- single (Dorfman) pooling -------------------------------------------------


def dorfman_expected_tests(p: float, n: int, m: int) -> float:
    p = check_probability(p)
    n = check_pool_size(n)
    m = check_population(m)
    neg = (1.0 - p) ** n
    return ((1.0 - neg) * (n + 1) + neg) * m / n


def dorfman_tpp(p: float, n: int) -> float:
    p = check_probability(p)
    n = check_pool_size(n)
    return 1.0 + 1.0 / n - (1.0 - p) ** n


def dorfman_optimal_size(p: float, max_n: int = MAX_POOL) -> OptimizationResult:
    p = check_probability(p)
    max_n = check_pool_size(max_n, name="max_n")
    sizes = np.arange(2, max_n + 1)
    tpp = 1.0 + 1.0 / sizes - (1.0 - p) ** sizes
    profile = {1: 1.0}
    profile.update(zip(sizes.tolist(), tpp.tolist()))
    return _argmin_smallest(profile)


# -- 2D matrix pooling --------------------------------------------------------


def grid2d_validity_bound(n: int) -> float:
    """Largest prevalence for which worst-case matrix pooling beats individual tests."""
    if int(n) != n or n < 2:
        raise ValueError(f"matrix side must be an integer >= 2, got {n!r}")
    return math.sqrt((n - 2) / n**3)


def grid2d_worstcase_tests(p: float, n: int, m: int) -> float:
    """Tests for ``m`` samples in n x n matrices when every expected positive
    sits alone on its row and column, i.e. ``(pn^2)^2`` retests per matrix."""
    p = check_probability(p)
    n = check_pool_size(n)
    m = check_population(m)
    if n * n > m:
        raise GridTooLargeError(f"{n}x{n} matrix needs {n * n} samples, population is {m}")
    if p > 1.0 / n:
        raise PrevalenceTooHighError(f"p={p} exceeds 1/n={1.0 / n:.4g}")
    k = p * n * n
    return (2 * n + k * k) * m / (n * n)


def grid2d_worstcase_tpp(p: float, n: int) -> float:
    return (2 * n + (p * n * n) ** 2) / (n * n)


def grid2d_optimal_size(p: float, m: int, max_n: int = MAX_POOL) -> OptimizationResult:
    p = check_probability(p)
    m = check_population(m)
    max_n = check_pool_size(max_n, name="max_n")
    profile = {1: 1.0}
    for n in range(2, min(max_n, math.isqrt(m)) + 1):
        if p <= 1.0 / n and p < grid2d_validity_bound(n):
            profile[n] = grid2d_worstcase_tpp(p, n)
    return _argmin_smallest(profile)


# -- double pooling -----------------------------------------------------------


def double_pooling_tpp(p: float, s: int) -> float:
    """Two pool tests per ``s`` patients, plus an individual retest whenever
    both of a patient's pools are positive."""
    p = check_probability(p)
    s = check_pool_size(s)
    q = 1.0 - p
    return 2.0 / s + p + q * (1.0 - q ** (s - 1)) ** 2


def double_pooling_optimal_size(p: float, max_s: int = MAX_POOL) -> OptimizationResult:
    p = check_probability(p)
    max_s = check_pool_size(max_s, name="max_s")
    profile = {1: 1.0}
    profile.update({s: double_pooling_tpp(p, s) for s in range(2, max_s + 1)})
    return _argmin_smallest(profile)


# -- exhaustive oracle --------------------------------------------------------


def brute_force_expected_tests(
    strategy: Callable[[InfectionVector], StrategyOutcome], p: float, n: int
) -> float:
    """Exact expected test count of ``strategy`` over ``n`` samples.

    Every one of the 2**n infection patterns is run through the strategy and
    weighted by its Bernoulli probability. Raises ``AssertionError`` if the
    strategy misclassifies any pattern.
    """
    p = check_probability(p)
    if int(n) != n or not 1 <= n <= BRUTE_FORCE_MAX_N:
        raise ValueError(f"exhaustive enumeration supports 1 <= n <= {BRUTE_FORCE_MAX_N}")
    total = 0.0
    for bits in itertools.product((False, True), repeat=n):
        vector = InfectionVector(np.array(bits))
        outcome = strategy(vector)
        if not outcome.is_exact(vector):
            raise AssertionError(f"strategy misclassified {np.flatnonzero(bits).tolist()}")
        k = vector.positives
        weight = p**k * (1.0 - p) ** (n - k)
        total += weight * outcome.tests
    return total
