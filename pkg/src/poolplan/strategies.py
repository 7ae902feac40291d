"""Executable pooling strategies.

Each ``run_*`` function classifies every sample of an infection vector by
querying a :class:`~poolplan.model.TestOracle`, and declares which round
each test belongs to. A test goes in the earliest round whose results it
depends on, so the reported round count is the critical path length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .analytic import dorfman_optimal_size
from .model import (
    MAX_POOL,
    InfectionVector,
    StrategyOutcome,
    TestOracle,
    check_pool_size,
)

STRATEGIES = ("individual", "dorfman", "tree", "grid2d", "double")


# -- helpers shared by several strategies -------------------------------------


def _blocks(indices: np.ndarray, n: int):
    for start in range(0, indices.size, n):
        yield indices[start:start + n]


def _single_pool(oracle: TestOracle, indices: np.ndarray, n: int, out: np.ndarray) -> None:
    for pool in _blocks(indices, n):
        positive = oracle.test(pool, round=1)
        if not positive:
            continue
        if pool.size == 1:
            out[pool] = True
            continue
        for i in pool:
            out[i] = oracle.test([i], round=2)


def _tree_resolve(oracle, node, known_at, optimize, out):
    """Identify the positives in ``node``, already known to be positive at
    round ``known_at``."""
    if node.size == 1:
        out[node[0]] = True
        return
    half = (node.size + 1) // 2
    left, right = node[:half], node[half:]
    if optimize:
        if oracle.test(left, round=known_at + 1):
            _tree_resolve(oracle, left, known_at + 1, optimize, out)
            if oracle.test(right, round=known_at + 2):
                _tree_resolve(oracle, right, known_at + 2, optimize, out)
        else:
            # left negative, so the right half must hold the positive
            _tree_resolve(oracle, right, known_at + 1, optimize, out)
    else:
        left_pos = oracle.test(left, round=known_at + 1)
        right_pos = oracle.test(right, round=known_at + 1)
        if left_pos:
            _tree_resolve(oracle, left, known_at + 1, optimize, out)
        if right_pos:
            _tree_resolve(oracle, right, known_at + 1, optimize, out)


def _grid_decode(oracle, grid, row_pos, col_pos, optimize, out):
    rows = np.flatnonzero(row_pos)
    cols = np.flatnonzero(col_pos)
    if rows.size == 0 or cols.size == 0:
        return
    if rows.size == 1 or cols.size == 1:
        # every positive line crosses the single positive line of the other axis
        out[grid[np.ix_(rows, cols)].ravel()] = True
        return
    if not optimize:
        for i in rows:
            for j in cols:
                out[grid[i, j]] = oracle.test([grid[i, j]], round=2)
        return

    last_row, last_col = rows[-1], cols[-1]
    inner_rows, inner_cols = rows[:-1], cols[:-1]
    for j in inner_cols:
        for i in inner_rows:
            out[grid[i, j]] = oracle.test([grid[i, j]], round=2)
    for j in inner_cols:
        if out[grid[inner_rows, j]].any():
            out[grid[last_row, j]] = oracle.test([grid[last_row, j]], round=3)
        else:
            out[grid[last_row, j]] = True
    for i in inner_rows:
        if out[grid[i, inner_cols]].any():
            out[grid[i, last_col]] = oracle.test([grid[i, last_col]], round=3)
        else:
            out[grid[i, last_col]] = True
    out[grid[last_row, last_col]] = oracle.test([grid[last_row, last_col]], round=3)


# -- public strategies ---------------------------------------------------------


def run_individual(vector: InfectionVector) -> StrategyOutcome:
    oracle = TestOracle(vector)
    out = np.zeros(len(vector), dtype=bool)
    for i in range(len(vector)):
        out[i] = oracle.test([i], round=1)
    return oracle.outcome(out)


def run_single_pooling(vector: InfectionVector, n: int) -> StrategyOutcome:
    """Dorfman pooling over consecutive pools of ``n`` (last pool may be short)."""
    n = check_pool_size(n)
    oracle = TestOracle(vector)
    out = np.zeros(len(vector), dtype=bool)
    _single_pool(oracle, np.arange(len(vector)), n, out)
    return oracle.outcome(out)


def run_binary_tree(vector: InfectionVector, n: int, optimize: bool = True) -> StrategyOutcome:
    """Adaptive halving of positive pools, per consecutive block of ``n``.

    Odd nodes split with the larger half on the left. With ``optimize`` the
    left child is tested first and, when negative, the right child is taken
    as positive without a test; the right child is then only tested after
    the left result is in, which costs extra rounds.
    """
    n = check_pool_size(n)
    oracle = TestOracle(vector)
    out = np.zeros(len(vector), dtype=bool)
    for block in _blocks(np.arange(len(vector)), n):
        if oracle.test(block, round=1):
            _tree_resolve(oracle, block, 1, optimize, out)
    return oracle.outcome(out)


def run_grid2d(
    vector: InfectionVector,
    n: int,
    optimize: bool = True,
    *,
    p: Optional[float] = None,
    leftover_pool_size: Optional[int] = None,
) -> StrategyOutcome:
    """Row/column matrix pooling over consecutive n x n matrices.

    Samples fill each matrix row by row. Round 1 tests every row and column
    pool; candidates are the crossings of positive rows and columns. When
    only one row or one column is positive every candidate is known positive.
    Otherwise the candidates are retested individually in round 2; with
    ``optimize``, round 2 covers all candidates off the last positive row and
    column, and in round 3 a last-row (last-column) candidate is taken as
    positive untested when the rest of its column (row) came back negative.

    Samples beyond the last full matrix go through single pooling with
    ``leftover_pool_size``, or the Dorfman-optimal size for ``p``, or are
    tested individually when neither is given.
    """
    n = check_pool_size(n)
    if n < 2:
        raise ValueError("matrix side must be at least 2")
    m = len(vector)
    if n * n > m:
        raise ValueError(f"{n}x{n} matrix needs {n * n} samples, vector has {m}")
    if leftover_pool_size is None:
        leftover_pool_size = dorfman_optimal_size(p).best_size if p is not None else 1
    oracle = TestOracle(vector)
    out = np.zeros(m, dtype=bool)
    n_mat = m // (n * n)
    grids = np.arange(n_mat * n * n).reshape(n_mat, n, n)
    pools = []
    for grid in grids:
        row_pos = np.array([oracle.test(grid[i], round=1) for i in range(n)])
        col_pos = np.array([oracle.test(grid[:, j], round=1) for j in range(n)])
        pools.append((grid, row_pos, col_pos))
    _single_pool(oracle, np.arange(n_mat * n * n, m), leftover_pool_size, out)
    for grid, row_pos, col_pos in pools:
        _grid_decode(oracle, grid, row_pos, col_pos, optimize, out)
    return oracle.outcome(out)


def double_pooling_permutations(m: int, s: int, rng: np.random.Generator, count: int) -> np.ndarray:
    """Draw ``count`` random orderings that define the second partition.

    The second partition's pools are consecutive runs of ``s`` in the
    returned order. When the first partition has at least ``s + 2`` pools,
    the order is built so that no second-partition pool holds two members
    of the same first-partition pool; smaller populations get a plain
    uniform shuffle.
    """
    n_a = -(-m // s)
    if n_a < s + 2:
        return np.argsort(rng.random((count, m)), axis=1, kind="stable")
    grid = np.full(n_a * s, -1, dtype=np.int64)
    grid[:m] = np.arange(m)
    grid = np.broadcast_to(grid.reshape(n_a, s), (count, n_a, s))
    keys = rng.random((count, n_a, s))
    keys[grid < 0] = 2.0
    grid = np.take_along_axis(grid, np.argsort(keys, axis=2, kind="stable"), axis=2)
    row_order = np.argsort(rng.random((count, n_a)), axis=1, kind="stable")
    grid = np.take_along_axis(grid, row_order[:, :, None], axis=1)
    flat = grid.transpose(0, 2, 1).reshape(count, -1)
    return flat[flat >= 0].reshape(count, m)


def run_double_pooling(
    vector: InfectionVector,
    s: int,
    partition_seed: int = 0,
    *,
    permutation: Optional[np.ndarray] = None,
) -> StrategyOutcome:
    """Two parallel partitions into pools of ``s``; retest only patients
    whose pools in both partitions are positive.

    Partition A is consecutive blocks. Partition B is consecutive blocks of
    ``permutation``, drawn from ``partition_seed`` when not supplied.
    """
    s = check_pool_size(s)
    m = len(vector)
    if permutation is None:
        rng = np.random.default_rng(partition_seed)
        permutation = double_pooling_permutations(m, s, rng, 1)[0]
    permutation = np.asarray(permutation, dtype=np.intp)
    if not np.array_equal(np.sort(permutation), np.arange(m)):
        raise ValueError("permutation must be an ordering of all sample indices")
    oracle = TestOracle(vector)
    out = np.zeros(m, dtype=bool)
    a_pos = np.zeros(m, dtype=bool)
    b_pos = np.zeros(m, dtype=bool)
    for pool in _blocks(np.arange(m), s):
        a_pos[pool] = oracle.test(pool, round=1)
    for pool in _blocks(permutation, s):
        b_pos[pool] = oracle.test(pool, round=1)
    for i in np.flatnonzero(a_pos & b_pos):
        out[i] = oracle.test([i], round=2)
    return oracle.outcome(out)


# -- strategy descriptors ------------------------------------------------------


@dataclass(frozen=True)
class Strategy:
    """A strategy plus its parameters, callable on an infection vector."""

    kind: str
    pool_size: int = 1
    optimize: bool = True
    partition_seed: int = 0
    leftover_pool_size: Optional[int] = None

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.kind!r}; choose from {STRATEGIES}")
        check_pool_size(self.pool_size)

    def __call__(self, vector: InfectionVector, **kwargs) -> StrategyOutcome:
        if self.kind == "individual":
            return run_individual(vector)
        if self.kind == "dorfman":
            return run_single_pooling(vector, self.pool_size)
        if self.kind == "tree":
            return run_binary_tree(vector, self.pool_size, self.optimize)
        if self.kind == "grid2d":
            return run_grid2d(vector, self.pool_size, self.optimize,
                              leftover_pool_size=self.leftover_pool_size or 1)
        return run_double_pooling(vector, self.pool_size, self.partition_seed, **kwargs)

    def max_rounds(self) -> int:
        """Upper bound on rounds for this configuration."""
        if self.kind == "individual":
            return 1
        if self.kind == "tree":
            depth = math.ceil(math.log2(self.pool_size)) if self.pool_size > 1 else 0
            return 1 + (2 * depth if self.optimize else depth)
        if self.kind == "grid2d" and self.optimize:
            return 3
        return 2


__all__ = [
    "MAX_POOL",
    "STRATEGIES",
    "Strategy",
    "double_pooling_permutations",
    "run_binary_tree",
    "run_double_pooling",
    "run_grid2d",
    "run_individual",
    "run_single_pooling",
]
