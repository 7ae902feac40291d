"""Pooled-testing strategies, optimizers, simulation and cohort planning."""

from .analytic import (
    OptimizationResult,
    brute_force_expected_tests,
    dorfman_expected_tests,
    dorfman_optimal_size,
    dorfman_tpp,
    double_pooling_optimal_size,
    double_pooling_tpp,
    grid2d_optimal_size,
    grid2d_validity_bound,
    grid2d_worstcase_tests,
)
from .model import (
    InfectionVector,
    StrategyOutcome,
    TestOracle,
    pool_negative_probability,
    pooled_test,
    sample_infection_vector,
)
from .strategies import (
    Strategy,
    run_binary_tree,
    run_double_pooling,
    run_grid2d,
    run_individual,
    run_single_pooling,
)
from .simulator import SimulationConfig, SimulationSummary, simulate

__version__ = "0.1.0"
