import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from poolplan.model import (
    InfectionVector,
    TestOracle,
    pool_negative_probability,
    pooled_test,
    sample_infection_vector,
)


@pytest.fixture
def one_positive():
    return InfectionVector.from_positions(40, [7])


def test_all_negative_pool_is_negative():
    oracle = TestOracle(InfectionVector(np.zeros(10, bool)))
    assert pooled_test(oracle, range(5)) is False


def test_pool_with_one_positive_is_positive(one_positive):
    oracle = TestOracle(one_positive)
    assert pooled_test(oracle, [3, 7, 9]) is True
    assert oracle.tests_issued == 1
    assert oracle.participation[[3, 7, 9]].tolist() == [1, 1, 1]


@pytest.mark.parametrize("subset, error", [
    ([], ValueError),
    (list(range(33)), ValueError),
    ([0, 40], IndexError),
    ([-1], IndexError),
    ([2, 2], ValueError),
])
def test_rejected_subsets(one_positive, subset, error):
    oracle = TestOracle(one_positive)
    with pytest.raises(error):
        oracle.test(subset)
    assert oracle.tests_issued == 0


def test_cap_can_be_lowered_not_raised(one_positive):
    oracle = TestOracle(one_positive, max_pool=8)
    with pytest.raises(ValueError):
        oracle.test(range(9))
    with pytest.raises(ValueError):
        TestOracle(one_positive, max_pool=33)


def test_rounds_track_latest_declared_round(one_positive):
    oracle = TestOracle(one_positive)
    oracle.test([0], round=2)
    oracle.test([1], round=1)
    assert oracle.rounds == 2


def test_vector_is_immutable(one_positive):
    with pytest.raises(ValueError):
        one_positive.statuses[0] = True


def test_sample_extremes():
    assert sample_infection_vector(0.0, 32, 5).positives == 0
    assert sample_infection_vector(1.0, 10, 5).positives == 10


def test_sample_positive_fraction():
    # binomial sd at p=0.1, m=1e5 is ~0.00095, so +-0.005 is over 5 sd
    v = sample_infection_vector(0.1, 100_000, 12345)
    assert abs(v.positives / 100_000 - 0.1) < 0.005


@given(st.floats(0, 1), st.integers(1, 200), st.integers(0, 2**32))
def test_sampling_is_deterministic(p, m, seed):
    assert sample_infection_vector(p, m, seed) == sample_infection_vector(p, m, seed)


@given(st.lists(st.booleans(), min_size=1, max_size=60), st.data())
def test_oracle_accounting(bits, data):
    vector = InfectionVector(np.array(bits))
    before = vector.statuses.copy()
    oracle = TestOracle(vector)
    for _ in range(data.draw(st.integers(1, 10))):
        subset = data.draw(st.sets(st.integers(0, len(bits) - 1), min_size=1, max_size=min(32, len(bits))))
        got = oracle.test(sorted(subset))
        assert got == any(bits[i] for i in subset)
    assert oracle.participation.sum() == oracle.subset_size_total
    assert np.array_equal(vector.statuses, before)


def test_pool_negative_probability():
    assert pool_negative_probability(0.08, 32) == pytest.approx(0.92**32)
    assert round(pool_negative_probability(0.08, 32), 4) == 0.0694
    assert pool_negative_probability(0.0, 12) == 1.0
    assert pool_negative_probability(1.0, 5) == 0.0
    with pytest.raises(ValueError):
        pool_negative_probability(0.1, 33)
