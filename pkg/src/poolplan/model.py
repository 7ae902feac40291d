"""Core types: the perfect pooled-test oracle, strategy outcomes and
seeded infection vectors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

MAX_POOL = 32


def check_probability(p: float, name: str = "p") -> float:
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {p!r}")
    return p


def check_pool_size(n: int, max_pool: int = MAX_POOL, name: str = "pool size") -> int:
    if max_pool > MAX_POOL:
        raise ValueError(f"max_pool cannot exceed {MAX_POOL}")
    if int(n) != n or not 1 <= n <= max_pool:
        raise ValueError(f"{name} must be an integer in [1, {max_pool}], got {n!r}")
    return int(n)


def check_population(m: int, name: str = "population size") -> int:
    if int(m) != m or m < 1:
        raise ValueError(f"{name} must be a positive integer, got {m!r}")
    return int(m)


@dataclass(frozen=True, eq=False)
class InfectionVector:
    """Ground-truth positive/negative status of ``m`` ordered samples."""

    statuses: np.ndarray

    def __post_init__(self):
        arr = np.array(self.statuses, dtype=bool).ravel()
        arr.setflags(write=False)
        object.__setattr__(self, "statuses", arr)

    def __len__(self) -> int:
        return self.statuses.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, InfectionVector):
            return NotImplemented
        return np.array_equal(self.statuses, other.statuses)

    def __hash__(self):
        return hash(self.statuses.tobytes())

    @property
    def positives(self) -> int:
        return int(self.statuses.sum())

    @classmethod
    def from_positions(cls, m: int, positives: Iterable[int]) -> "InfectionVector":
        arr = np.zeros(m, dtype=bool)
        arr[list(positives)] = True
        return cls(arr)


def sample_infection_vector(p: float, m: int, seed: int) -> InfectionVector:
    """Each of ``m`` samples is positive independently with probability ``p``."""
    p = check_probability(p)
    m = check_population(m)
    rng = np.random.default_rng(seed)
    return InfectionVector(rng.random(m) < p)


def pool_negative_probability(p: float, n: int) -> float:
    """Probability that a random pool of ``n`` samples tests negative."""
    p = check_probability(p)
    n = check_pool_size(n)
    return (1.0 - p) ** n


class TestOracle:
    """Perfect pooled assay over one infection vector.

    Strategies call :meth:`test` with the round the query belongs to; the
    oracle keeps the test count, the latest round used and how many tests
    each sample took part in.
    """

    __test__ = False  # not a pytest class

    def __init__(self, vector: InfectionVector, max_pool: int = MAX_POOL):
        self.vector = vector
        self.max_pool = check_pool_size(max_pool, name="max_pool")
        self.tests_issued = 0
        self.rounds = 0
        self.participation = np.zeros(len(vector), dtype=np.int64)
        self.subset_size_total = 0

    def test(self, subset: Sequence[int] | np.ndarray, round: int = 1) -> bool:
        idx = np.asarray(subset, dtype=np.intp).ravel()
        if idx.size == 0:
            raise ValueError("pooled test needs a non-empty subset")
        if idx.size > self.max_pool:
            raise ValueError(f"pool of {idx.size} samples exceeds the cap of {self.max_pool}")
        m = len(self.vector)
        if idx.min() < 0 or idx.max() >= m:
            raise IndexError(f"sample index out of range for population of {m}")
        if np.unique(idx).size != idx.size:
            raise ValueError("pooled test subset contains duplicate indices")
        if round < 1:
            raise ValueError("rounds are numbered from 1")
        self.tests_issued += 1
        self.rounds = max(self.rounds, int(round))
        self.participation[idx] += 1
        self.subset_size_total += idx.size
        return bool(self.vector.statuses[idx].any())

    def outcome(self, classifications: np.ndarray) -> "StrategyOutcome":
        return StrategyOutcome(
            tests=self.tests_issued,
            rounds=self.rounds,
            max_participation=int(self.participation.max(initial=0)),
            extra_aliquots=int((self.participation >= 2).sum()),
            classifications=np.asarray(classifications, dtype=bool),
        )


def pooled_test(oracle: TestOracle, subset, round: int = 1) -> bool:
    return oracle.test(subset, round=round)


@dataclass(frozen=True, eq=False)
class StrategyOutcome:
    """Result of running one strategy over one infection vector.

    ``max_participation`` is the largest number of tests any single sample
    took part in; ``extra_aliquots`` counts samples that appeared in two or
    more tests and therefore had to be split.
    """

    tests: int
    rounds: int
    max_participation: int
    extra_aliquots: int
    classifications: np.ndarray

    def is_exact(self, vector: InfectionVector) -> bool:
        return np.array_equal(self.classifications, vector.statuses)
