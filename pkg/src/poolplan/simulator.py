"""Seeded Monte Carlo estimates of tests, rounds and TPP per strategy.

Trials are grouped in fixed chunks of ``CHUNK`` trials. Chunk ``c`` draws
its uniforms from a Philox stream keyed by ``(master_seed, c)``, so trial
``t`` always sees the same infection vector whatever the total trial count,
evaluation order or number of worker processes. Per-trial test counts are
integers and are aggregated as exact integer sums.

Two engines compute identical per-trial counts: ``"vectorized"`` uses numpy
counting kernels over whole chunks, ``"exact"`` runs the oracle-backed
strategies one vector at a time.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from functools import lru_cache
from importlib import resources
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import analytic
from .model import InfectionVector, check_pool_size, check_population, check_probability
from .strategies import STRATEGIES, Strategy, double_pooling_permutations

CHUNK = 4096

TABLE1_P = (0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4)
TABLE1_N = (1, 2, 4, 8, 16, 32)
TABLE1_PUBLISHED = np.array([
    [32.0, 32.0, 32.0, 32.0, 32.0, 32.0, 32.0, 32.0, 32.0],
    [16.0, 18.5, 21.3, 23.5, 25.3, 27.1, 29.1, 30.6, 32.2],
    [8.0, 12.7, 17.1, 21.1, 24.8, 28.2, 31.4, 33.5, 36.3],
    [4.0, 10.4, 15.9, 22.5, 26.6, 30.3, 33.5, 37.4, 40.4],
    [2.0, 10.3, 17.2, 23.2, 28.0, 31.9, 36.2, 38.6, 42.2],
    [1.0, 10.8, 18.2, 23.8, 28.4, 33.3, 36.7, 40.0, 43.2],
])

TABLE2_P = (0.01, 0.02, 0.03, 0.04, 0.05)
TABLE2_PUBLISHED = {
    "single-pooling": (0.20, 0.27, 0.33, 0.38, 0.43),
    "binary tree": (0.10, 0.17, 0.23, 0.27, 0.33),
    "2D-pooling (worst-case)": (0.14, 0.22, 0.29, 0.35, 0.41),
    "2D-pooling (simulated)": (0.10, 0.13, 0.20, 0.27, 0.32),
}
DOUBLE_PUBLISHED = (0.13, 0.21, 0.27, 0.32, 0.37)
TABLE2_GRID_M = 400


@dataclass(frozen=True)
class SimulationConfig:
    strategy: str
    p: float
    m: int
    trials: int
    master_seed: int = 0
    pool_size: int = 1
    optimize: bool = True
    leftover_pool_size: Optional[int] = None
    engine: str = "vectorized"

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        check_probability(self.p)
        check_population(self.m)
        check_pool_size(self.pool_size)
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.master_seed < 0:
            raise ValueError("master_seed must be non-negative")
        if self.engine not in ("vectorized", "exact"):
            raise ValueError(f"unknown engine {self.engine!r}")
        if self.strategy == "grid2d":
            if self.pool_size < 2 or self.pool_size**2 > self.m:
                raise ValueError(f"grid side {self.pool_size} does not fit m={self.m}")

    @property
    def descriptor(self) -> Strategy:
        leftover = self.leftover_pool_size
        if self.strategy == "grid2d" and leftover is None:
            leftover = analytic.dorfman_optimal_size(self.p).best_size
        return Strategy(self.strategy, self.pool_size, self.optimize,
                        leftover_pool_size=leftover)


@dataclass(frozen=True)
class SimulationSummary:
    strategy: str
    p: float
    n: int
    m: int
    trials: int
    mean_tests: float
    stderr_tests: float
    mean_tpp: float
    mean_rounds: float

    def as_row(self) -> dict:
        return asdict(self)


CSV_COLUMNS = ("strategy", "p", "n", "m", "trials", "mean_tests", "stderr", "mean_tpp", "mean_rounds")


# -- trial streams -------------------------------------------------------------


def chunk_rng(master_seed: int, chunk: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([master_seed, chunk, stream])))


def chunk_uniforms(master_seed: int, chunk: int, m: int) -> np.ndarray:
    return chunk_rng(master_seed, chunk).random((CHUNK, m))


def trial_vectors(master_seed: int, p: float, m: int, start: int, stop: int) -> np.ndarray:
    """Infection vectors of trials ``start .. stop-1`` as a boolean matrix."""
    out = []
    for chunk in range(start // CHUNK, (stop - 1) // CHUNK + 1):
        lo = max(start, chunk * CHUNK) - chunk * CHUNK
        hi = min(stop, (chunk + 1) * CHUNK) - chunk * CHUNK
        out.append(chunk_uniforms(master_seed, chunk, m)[lo:hi] < p)
    return np.concatenate(out) if out else np.zeros((0, m), dtype=bool)


# -- counting kernels ----------------------------------------------------------


def _pool_positive(X: np.ndarray, n: int) -> Tuple[np.ndarray, np.ndarray]:
    starts = np.arange(0, X.shape[1], n)
    sizes = np.diff(np.append(starts, X.shape[1]))
    return np.logical_or.reduceat(X, starts, axis=1), sizes


def _dorfman_counts(X, n):
    T, m = X.shape
    if m == 0:
        return np.zeros(T, np.int64), np.zeros(T, np.int64)
    pos, sizes = _pool_positive(X, n)
    retest = pos & (sizes > 1)
    tests = sizes.size + (retest * sizes).sum(axis=1)
    return tests.astype(np.int64), 1 + retest.any(axis=1).astype(np.int64)


def _tree_node(X, active, known_at, optimize):
    T, s = X.shape
    tests = np.zeros(T, np.int64)
    rounds = np.zeros(T, np.int64)
    if s == 1 or not active.any():
        return tests, rounds
    half = (s + 1) // 2
    left, right = X[:, :half], X[:, half:]
    left_pos, right_pos = left.any(axis=1), right.any(axis=1)
    if optimize:
        tests += active.astype(np.int64) + (active & left_pos)
        right_at = np.where(left_pos, known_at + 2, known_at + 1)
        rounds = np.where(active, right_at, 0)
    else:
        tests += 2 * active
        right_at = known_at + 1
        rounds = np.where(active, known_at + 1, 0)
    lt, lr = _tree_node(left, active & left_pos, known_at + 1, optimize)
    rt, rr = _tree_node(right, active & right_pos, right_at, optimize)
    return tests + lt + rt, np.maximum(rounds, np.maximum(lr, rr))


def _tree_counts(X, n, optimize):
    T, m = X.shape
    tests = np.zeros(T, np.int64)
    rounds = np.zeros(T, np.int64)
    for start in range(0, m, n):
        block = X[:, start:start + n]
        bt, br = _tree_node(block, block.any(axis=1), np.ones(T, np.int64), optimize)
        tests += 1 + bt
        rounds = np.maximum(rounds, np.maximum(br, 1))
    return tests, rounds


def _last_true(mask):
    n = mask.shape[-1]
    return n - 1 - np.argmax(mask[..., ::-1], axis=-1)


def _grid_counts(X, n, optimize, leftover):
    T, m = X.shape
    n_mat = m // (n * n)
    G = X[:, : n_mat * n * n].reshape(T, n_mat, n, n)
    rows, cols = G.any(axis=3), G.any(axis=2)
    r, c = rows.sum(axis=2), cols.sum(axis=2)
    multi = (r >= 2) & (c >= 2)
    if optimize:
        eye = np.eye(n, dtype=bool)
        inner_rows = rows & ~eye[_last_true(rows)]
        inner_cols = cols & ~eye[_last_true(cols)]
        inner = G & inner_rows[..., :, None] & inner_cols[..., None, :]
        last_row_tested = (inner.any(axis=2) & inner_cols).sum(axis=2)
        last_col_tested = (inner.any(axis=3) & inner_rows).sum(axis=2)
        retest = np.where(multi, (r - 1) * (c - 1) + last_row_tested + last_col_tested + 1, 0)
        mat_rounds = np.where(multi, 3, 1)
    else:
        retest = np.where(multi, r * c, 0)
        mat_rounds = np.where(multi, 2, 1)
    tests = 2 * n * n_mat + retest.sum(axis=1)
    rounds = mat_rounds.max(axis=1)
    lt, lr = _dorfman_counts(X[:, n_mat * n * n:], leftover)
    return (tests + lt).astype(np.int64), np.maximum(rounds, lr).astype(np.int64)


def _double_counts(X, s, perms):
    T, m = X.shape
    a_pos, _ = _pool_positive(X, s)
    a_of = np.arange(m) // s
    XB = np.take_along_axis(X, perms, axis=1)
    b_pos, _ = _pool_positive(XB, s)
    # walk patients in partition-B order
    both = b_pos[:, a_of] & np.take_along_axis(a_pos[:, a_of], perms, axis=1)
    retests = both.sum(axis=1)
    tests = 2 * a_pos.shape[1] + retests
    return tests.astype(np.int64), (1 + (retests > 0)).astype(np.int64)


def count_tests(strategy: Strategy, X: np.ndarray, perms: Optional[np.ndarray] = None):
    """Per-row test and round counts of ``strategy`` over boolean matrix ``X``."""
    X = np.asarray(X, dtype=bool)
    T, m = X.shape
    if m == 0:
        return np.zeros(T, np.int64), np.zeros(T, np.int64)
    kind, n = strategy.kind, strategy.pool_size
    if kind == "individual":
        return np.full(T, m, np.int64), np.ones(T, np.int64)
    if kind == "dorfman":
        return _dorfman_counts(X, n)
    if kind == "tree":
        return _tree_counts(X, n, strategy.optimize)
    if kind == "grid2d":
        return _grid_counts(X, n, strategy.optimize, strategy.leftover_pool_size or 1)
    if perms is None:
        raise ValueError("double pooling needs the partition-B orderings")
    return _double_counts(X, n, perms)


# -- simulate --------------------------------------------------------------------


def _chunk_sums(config: SimulationConfig, chunk: int) -> Tuple[int, int, int, int]:
    lo = chunk * CHUNK
    count = min(config.trials, lo + CHUNK) - lo
    X = chunk_uniforms(config.master_seed, chunk, config.m)[:count] < config.p
    perms = None
    strategy = config.descriptor
    if config.strategy == "double":
        rng = chunk_rng(config.master_seed, chunk, stream=1)
        perms = double_pooling_permutations(config.m, config.pool_size, rng, CHUNK)[:count]
    if config.engine == "vectorized":
        tests, rounds = count_tests(strategy, X, perms)
    else:
        tests = np.empty(count, np.int64)
        rounds = np.empty(count, np.int64)
        for t in range(count):
            vector = InfectionVector(X[t])
            kwargs = {"permutation": perms[t]} if perms is not None else {}
            outcome = strategy(vector, **kwargs)
            if not outcome.is_exact(vector):
                raise AssertionError(f"{strategy} misclassified trial {lo + t}")
            tests[t], rounds[t] = outcome.tests, outcome.rounds
    return count, int(tests.sum()), int((tests * tests).sum()), int(rounds.sum())


def _chunk_sums_star(args):
    return _chunk_sums(*args)


def simulate(config: SimulationConfig, workers: int = 1) -> SimulationSummary:
    """Estimate expected tests of one strategy configuration.

    Results are bit-identical for any ``workers`` value.
    """
    n_chunks = -(-config.trials // CHUNK)
    jobs = [(config, c) for c in range(n_chunks)]
    if workers > 1 and n_chunks > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_chunk_sums_star, jobs))
    else:
        parts = [_chunk_sums(*job) for job in jobs]
    T = sum(part[0] for part in parts)
    s1 = sum(part[1] for part in parts)
    s2 = sum(part[2] for part in parts)
    sr = sum(part[3] for part in parts)
    mean = s1 / T
    if T > 1:
        var = max(s2 * T - s1 * s1, 0) / (T * (T - 1))
        stderr = math.sqrt(var / T)
    else:
        stderr = 0.0
    return SimulationSummary(
        strategy=config.strategy,
        p=config.p,
        n=config.pool_size,
        m=config.m,
        trials=T,
        mean_tests=mean,
        stderr_tests=stderr,
        mean_tpp=mean / config.m,
        mean_rounds=sr / T,
    )


# -- published table replication ---------------------------------------------


@dataclass
class TableReplication:
    name: str
    row_labels: List[str]
    col_labels: List[float]
    values: np.ndarray
    published: np.ndarray
    best_sizes: Optional[np.ndarray] = None

    @property
    def deltas(self) -> np.ndarray:
        return self.values - self.published

    def rows(self) -> List[dict]:
        out = []
        for i, label in enumerate(self.row_labels):
            for j, p in enumerate(self.col_labels):
                row = {"table": self.name, "row": label, "p": p,
                       "value": float(self.values[i, j]), "published": float(self.published[i, j]),
                       "delta": float(self.deltas[i, j])}
                if self.best_sizes is not None:
                    row["best_n"] = int(self.best_sizes[i, j])
                out.append(row)
        return out


def replicate_table1(trials: int = 100_000, master_seed: int = 0, workers: int = 1) -> TableReplication:
    """Mean tests of the optimized binary tree for m = 32."""
    values = np.empty(TABLE1_PUBLISHED.shape)
    for i, n in enumerate(TABLE1_N):
        for j, p in enumerate(TABLE1_P):
            kind = "individual" if n == 1 else "tree"
            cfg = SimulationConfig(kind, p, 32, trials, master_seed, pool_size=n, optimize=True)
            values[i, j] = simulate(cfg, workers).mean_tests
    return TableReplication("table1", [f"n={n}" for n in TABLE1_N], list(TABLE1_P), values, TABLE1_PUBLISHED.copy())


def _best_simulated(kind, p, sizes, trials, master_seed, workers, m_of):
    best = None
    for n in sizes:
        if n == 1:
            tpp = 1.0
        else:
            cfg = SimulationConfig(kind, p, m_of(n), trials, master_seed, pool_size=n, optimize=True)
            tpp = simulate(cfg, workers).mean_tpp
        if best is None or tpp < best[0]:
            best = (tpp, n)
    return best


def replicate_table2(trials: int = 100_000, master_seed: int = 0, workers: int = 1,
                     grid_m: int = TABLE2_GRID_M) -> TableReplication:
    """Best-n tests per patient for the four comparison rows.

    Closed-form rows come from the analytic optimizers; the tree is simulated
    on single blocks of every n in 1..32 and the matrix on single n x n
    grids with n^2 <= ``grid_m``.
    """
    labels = list(TABLE2_PUBLISHED)
    values = np.empty((4, len(TABLE2_P)))
    sizes = np.empty((4, len(TABLE2_P)), dtype=int)
    grid_sides = range(2, math.isqrt(grid_m) + 1)
    for j, p in enumerate(TABLE2_P):
        single = analytic.dorfman_optimal_size(p)
        worst = analytic.grid2d_optimal_size(p, grid_m)
        tree = _best_simulated("tree", p, range(1, 33), trials, master_seed, workers, lambda n: n)
        grid = _best_simulated("grid2d", p, grid_sides, trials, master_seed, workers, lambda n: n * n)
        values[:, j] = (single.best_tpp, tree[0], worst.best_tpp, grid[0])
        sizes[:, j] = (single.best_size, tree[1], worst.best_size, grid[1])
    published = np.array([TABLE2_PUBLISHED[k] for k in labels])
    return TableReplication("table2", labels, list(TABLE2_P), values, published, sizes)


def truncate2(x: float) -> float:
    return math.floor(x * 100 + 1e-9) / 100


def replicate_double_table() -> TableReplication:
    """Double-pooling TPP at the formula-optimal pool size per p."""
    results = [analytic.double_pooling_optimal_size(p) for p in TABLE2_P]
    values = np.array([[r.best_tpp for r in results]])
    sizes = np.array([[r.best_size for r in results]])
    return TableReplication("double", ["double pooling"], list(TABLE2_P), values,
                            np.array([DOUBLE_PUBLISHED]), sizes)


# -- sweeps ------------------------------------------------------------------------


def sweep(strategy: str, ps: Iterable[float], ns: Iterable[int], m: int, trials: int = 10_000,
          master_seed: int = 0, simulated: bool = False, workers: int = 1) -> List[dict]:
    """TPP over a (p, n) grid, as rows with the ``CSV_COLUMNS`` keys.

    Dorfman, worst-case 2D and double pooling use closed forms unless
    ``simulated`` is set; the tree is always simulated. Closed-form rows
    report ``trials = 0`` and no stderr or rounds.
    """
    rows = []
    for p in ps:
        for n in ns:
            if strategy == "grid2d" and (n < 2 or n * n > m):
                continue
            closed = None
            if not simulated:
                if strategy == "dorfman":
                    closed = 1.0 if n == 1 else analytic.dorfman_tpp(p, n)
                elif strategy == "grid2d":
                    closed = analytic.grid2d_worstcase_tpp(p, n)
                elif strategy == "double":
                    closed = 1.0 if n == 1 else analytic.double_pooling_tpp(p, n)
                elif strategy == "individual":
                    closed = 1.0
            if closed is not None:
                rows.append({"strategy": strategy, "p": p, "n": n, "m": m, "trials": 0,
                             "mean_tests": closed * m, "stderr": "", "mean_tpp": closed,
                             "mean_rounds": ""})
                continue
            cfg = SimulationConfig(strategy, p, m, trials, master_seed, pool_size=n)
            s = simulate(cfg, workers)
            rows.append({"strategy": strategy, "p": p, "n": n, "m": m, "trials": s.trials,
                         "mean_tests": s.mean_tests, "stderr": s.stderr_tests,
                         "mean_tpp": s.mean_tpp, "mean_rounds": s.mean_rounds})
    return rows


def rows_to_csv(rows: Sequence[dict], columns: Sequence[str] = CSV_COLUMNS) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(row.get(k, "")) for k in columns})
    return buf.getvalue()


def _fmt(value):
    if isinstance(value, float):
        return repr(round(value, 10))
    return value


# -- tree TPP grid used by the planner --------------------------------------------

TREE_GRID_P = tuple(round(0.01 * i, 2) for i in range(41))
TREE_GRID_N = tuple(range(1, 33))
TREE_TABLE_FILE = "tree_tpp_grid.csv"


def build_tree_tpp_table(ps: Sequence[float] = TREE_GRID_P, ns: Sequence[int] = TREE_GRID_N,
                         trials: int = 20_000, master_seed: int = 2020) -> np.ndarray:
    """Simulated optimized-tree TPP on single blocks, shape ``(len(ps), len(ns))``."""
    table = np.ones((len(ps), len(ns)))
    for i, p in enumerate(ps):
        for j, n in enumerate(ns):
            if n > 1:
                cfg = SimulationConfig("tree", p, n, trials, master_seed, pool_size=n)
                table[i, j] = simulate(cfg).mean_tpp
    return table


def write_tree_tpp_table(path, table: np.ndarray, ps=TREE_GRID_P, ns=TREE_GRID_N) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["p", *ns])
        for p, row in zip(ps, table):
            writer.writerow([p, *(repr(float(v)) for v in row)])


@lru_cache(maxsize=1)
def tree_tpp_table() -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bundled (p grid, n grid, TPP table) for the optimized binary tree."""
    text = resources.files("poolplan.data").joinpath(TREE_TABLE_FILE).read_text()
    rows = list(csv.reader(io.StringIO(text)))
    ns = np.array([int(v) for v in rows[0][1:]])
    ps = np.array([float(r[0]) for r in rows[1:]])
    table = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return ps, ns, table


def tree_tpp(p: float) -> np.ndarray:
    """Interpolated tree TPP at prevalence ``p`` for every bundled pool size."""
    ps, ns, table = tree_tpp_table()
    p = min(max(p, ps[0]), ps[-1])
    k = min(int(np.searchsorted(ps, p, side="right")) - 1, ps.size - 2)
    w = (p - ps[k]) / (ps[k + 1] - ps[k])
    return (1.0 - w) * table[k] + w * table[k + 1]


def tree_optimal_size(p: float, max_n: int = 32) -> analytic.OptimizationResult:
    _, ns, _ = tree_tpp_table()
    values = tree_tpp(check_probability(p))
    profile = {int(n): (1.0 if n == 1 else float(v)) for n, v in zip(ns, values) if n <= max_n}
    return analytic._argmin_smallest(profile)
