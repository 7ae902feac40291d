"""Risk-sorted pooling plans for a cohort of patients.

Patients arrive with a predicted probability of being positive. Sorting by
that value puts patients of similar risk next to each other, so each group
can be pooled with the size that suits its risk. Groups are closed greedily
in a single pass over the sorted list.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, Iterable, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np

from . import analytic, simulator
from .model import MAX_POOL, check_pool_size, check_population, check_probability
from .strategies import Strategy, double_pooling_permutations

FAMILIES = ("individual", "dorfman", "tree", "grid2d", "double")
PATIENT_HEADER = ("patient_id", "risk")
CDF_HEADER = ("risk", "cum_fraction")
SYNTHETIC_CDF_FILE = "synthetic_risk_cdf.csv"
PLAN_COLUMNS = ("group", "strategy", "pool_size", "group_size", "risk", "expected_tpp",
                "expected_tests", "members")

Source = Union[str, os.PathLike, TextIO]


class CohortFormatError(ValueError):
    """Malformed patients, CDF or plan file. ``row`` is the 1-based line number."""

    def __init__(self, message: str, row: Optional[int] = None):
        self.row = row
        super().__init__(f"row {row}: {message}" if row is not None else message)


@dataclass(frozen=True, eq=False)
class Cohort:
    ids: Tuple[str, ...]
    risks: np.ndarray

    def __post_init__(self):
        risks = np.asarray(self.risks, dtype=float).copy()
        risks.setflags(write=False)
        object.__setattr__(self, "risks", risks)
        object.__setattr__(self, "ids", tuple(self.ids))
        if len(self.ids) != risks.size:
            raise ValueError("ids and risks differ in length")

    def __len__(self) -> int:
        return len(self.ids)

    @classmethod
    def uniform(cls, risk: float, size: int, prefix: str = "P") -> "Cohort":
        width = len(str(size))
        return cls([f"{prefix}{i:0{width}d}" for i in range(size)], np.full(size, risk))


# -- input files ---------------------------------------------------------------


def _open_text(source: Source):
    if hasattr(source, "read"):
        return source, False
    return open(source, newline="", encoding="utf-8-sig"), True


def _read_rows(source: Source, header: Sequence[str]):
    fh, owned = _open_text(source)
    try:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None:
            raise CohortFormatError("empty file", 1)
        first = [c.strip().lstrip("﻿") for c in first]
        if tuple(first) != tuple(header):
            raise CohortFormatError(f"expected header {','.join(header)!r}, got {','.join(first)!r}", 1)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            yield line, row
    finally:
        if owned:
            fh.close()


def _parse_unit(value: str, what: str, line: int) -> float:
    try:
        x = float(value)
    except ValueError:
        raise CohortFormatError(f"{what} {value!r} is not a number", line) from None
    if not 0.0 <= x <= 1.0 or math.isnan(x):
        raise CohortFormatError(f"{what} {x} outside [0, 1]", line)
    return x


def load_patients(source: Source) -> Cohort:
    """Read a ``patient_id,risk`` file; input order is kept."""
    ids: List[str] = []
    risks: List[float] = []
    seen: Dict[str, int] = {}
    for line, row in _read_rows(source, PATIENT_HEADER):
        if len(row) != 2:
            raise CohortFormatError(f"expected 2 fields, got {len(row)}", line)
        pid = row[0].strip()
        if not pid:
            raise CohortFormatError("empty patient_id", line)
        if pid in seen:
            raise CohortFormatError(f"duplicate patient_id {pid!r} (first on row {seen[pid]})", line)
        seen[pid] = line
        ids.append(pid)
        risks.append(_parse_unit(row[1].strip(), "risk", line))
    return Cohort(ids, np.array(risks))


def write_patients(cohort: Cohort, target: Source) -> None:
    fh, owned = (target, False) if hasattr(target, "write") else (open(target, "w", newline=""), True)
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PATIENT_HEADER)
        for pid, risk in zip(cohort.ids, cohort.risks):
            writer.writerow([pid, repr(float(risk))])
    finally:
        if owned:
            fh.close()


@dataclass(frozen=True, eq=False)
class RiskCdf:
    """Piecewise-linear cumulative distribution of per-patient risk.

    Mass below the first breakpoint sits at the first risk value.
    """

    risks: np.ndarray
    fractions: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.risks, dtype=float)
        f = np.asarray(self.fractions, dtype=float)
        if r.size == 0 or r.size != f.size:
            raise ValueError("CDF needs matching, non-empty risk and fraction columns")
        if np.any(np.diff(r) <= 0):
            raise ValueError("CDF risks must be strictly increasing")
        if np.any(np.diff(f) < 0):
            raise ValueError("CDF fractions must be non-decreasing")
        if r.min() < 0 or r.max() > 1 or f.min() < 0 or f.max() > 1:
            raise ValueError("CDF values must lie in [0, 1]")
        if abs(f[-1] - 1.0) > 1e-9:
            raise ValueError("CDF must end at cumulative fraction 1")
        object.__setattr__(self, "risks", r)
        object.__setattr__(self, "fractions", f)

    def cdf(self, x) -> np.ndarray:
        xp = np.concatenate(([self.risks[0]], self.risks))
        fp = np.concatenate(([0.0], self.fractions))
        out = np.interp(x, xp, fp, left=0.0, right=1.0)
        return np.where(np.asarray(x) < self.risks[0], 0.0, out)

    def quantile(self, u) -> np.ndarray:
        xp = np.concatenate(([0.0], self.fractions))
        fp = np.concatenate(([self.risks[0]], self.risks))
        return np.interp(u, xp, fp)


def load_cdf(source: Source) -> RiskCdf:
    risks, fracs = [], []
    for line, row in _read_rows(source, CDF_HEADER):
        if len(row) != 2:
            raise CohortFormatError(f"expected 2 fields, got {len(row)}", line)
        r = _parse_unit(row[0].strip(), "risk", line)
        f = _parse_unit(row[1].strip(), "cum_fraction", line)
        if risks and r <= risks[-1]:
            raise CohortFormatError("risks must be strictly increasing", line)
        if fracs and f < fracs[-1]:
            raise CohortFormatError("cum_fraction must be non-decreasing", line)
        risks.append(r)
        fracs.append(f)
    try:
        return RiskCdf(np.array(risks), np.array(fracs))
    except ValueError as exc:
        raise CohortFormatError(str(exc)) from None


def synthetic_cdf() -> RiskCdf:
    """Bundled risk CDF with 81% of patients below risk 0.02."""
    text = resources.files("poolplan.data").joinpath(SYNTHETIC_CDF_FILE).read_text()
    return load_cdf(io.StringIO(text))


def sample_cohort(cdf: RiskCdf, m: int, seed: int, prefix: str = "S") -> Cohort:
    m = check_population(m)
    u = np.random.default_rng(seed).random(m)
    width = len(str(m))
    return Cohort([f"{prefix}{i:0{width}d}" for i in range(m)], cdf.quantile(u))


# -- plans ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PlanGroup:
    members: np.ndarray
    strategy: str
    pool_size: int
    risk: float
    expected_tpp: float

    @property
    def size(self) -> int:
        return int(self.members.size)

    @property
    def pooled(self) -> bool:
        return self.strategy != "individual"

    @property
    def expected_tests(self) -> float:
        return self.size * self.expected_tpp

    @property
    def descriptor(self) -> Strategy:
        return Strategy(self.strategy, self.pool_size, optimize=True, leftover_pool_size=1)


@dataclass(eq=False)
class PoolingPlan:
    cohort: Cohort
    family: str
    groups: List[PlanGroup] = field(default_factory=list)

    @property
    def expected_tests(self) -> float:
        return math.fsum(g.expected_tests for g in self.groups)

    @property
    def expected_tpp(self) -> float:
        return self.expected_tests / len(self.cohort)

    @property
    def worst_case_rounds(self) -> int:
        return max((g.descriptor.max_rounds() for g in self.groups), default=0)

    @property
    def duplication(self) -> List[str]:
        """Patients whose sample must be split in case their pool is positive."""
        return [self.cohort.ids[i] for g in self.groups if g.pooled for i in g.members]

    def summary(self) -> dict:
        return {
            "family": self.family,
            "patients": len(self.cohort),
            "group_count": len(self.groups),
            "expected_tests": self.expected_tests,
            "expected_tpp": self.expected_tpp,
            "reduction": 1.0 - self.expected_tpp,
            "worst_case_rounds": self.worst_case_rounds,
            "duplication_count": sum(g.size for g in self.groups if g.pooled),
        }


@dataclass(frozen=True)
class _Choice:
    strategy: str
    pool_size: int
    group_size: int
    tpp: float


_INDIVIDUAL = _Choice("individual", 1, 1, 1.0)


def group_tpp(strategy: str, risk: float, pool_size: int) -> float:
    """Expected tests per patient for one group at a given risk."""
    if strategy == "individual" or pool_size == 1:
        return 1.0
    if strategy == "dorfman":
        return analytic.dorfman_tpp(risk, pool_size)
    if strategy == "grid2d":
        return analytic.grid2d_worstcase_tpp(risk, pool_size)
    if strategy == "double":
        return analytic.double_pooling_tpp(risk, pool_size)
    if strategy == "tree":
        return float(simulator.tree_tpp(risk)[pool_size - 1])
    raise ValueError(f"unknown strategy {strategy!r}")


def _choose(family: str, risk: float, cap: int, max_pool: int) -> _Choice:
    if family == "individual" or cap < 2:
        return _INDIVIDUAL
    if family == "dorfman":
        n = min(analytic.dorfman_optimal_size(risk, max_pool).best_size, cap)
    elif family == "tree":
        n = min(simulator.tree_optimal_size(risk, max_pool).best_size, cap)
    elif family == "double":
        s = analytic.double_pooling_optimal_size(risk, max_pool).best_size
        if s == 1:
            return _INDIVIDUAL
        size = min(s * (s + 2), cap)
        s = min(s, size)
        tpp = group_tpp("double", risk, s) if s > 1 else 1.0
        return _Choice("double", s, size, tpp) if tpp < 1.0 else _INDIVIDUAL
    elif family == "grid2d":
        fallback = _choose("dorfman", risk, cap, max_pool)
        grid = analytic.grid2d_optimal_size(risk, cap, max_pool)
        if grid.best_size > 1 and grid.best_tpp <= fallback.tpp:
            n = grid.best_size
            return _Choice("grid2d", n, n * n, grid.best_tpp)
        return fallback
    else:
        raise ValueError(f"unknown family {family!r}; choose from {FAMILIES}")
    if n < 2:
        return _INDIVIDUAL
    tpp = group_tpp(family, risk, n)
    return _Choice(family, n, n, tpp) if tpp < 1.0 else _INDIVIDUAL


def partition(
    cohort: Cohort,
    family: str = "dorfman",
    *,
    sort: bool = True,
    estimator: str = "mean",
    max_spread: Optional[float] = 0.05,
    max_pool: int = MAX_POOL,
) -> PoolingPlan:
    """Split the cohort into groups and assign each a strategy and pool size.

    Walking the (sorted) list, a group's size is chosen by the family's
    optimizer at the group's estimated risk; the estimate is the mean (or
    the max) of the members, re-evaluated until the size settles. On sorted
    input no pooled group spans more than ``max_spread`` in risk. Patients
    whose best option is individual testing are collected into individual
    groups.
    """
    if len(cohort) == 0:
        raise ValueError("cannot plan an empty cohort")
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; choose from {FAMILIES}")
    if estimator not in ("mean", "max"):
        raise ValueError("estimator must be 'mean' or 'max'")
    max_pool = check_pool_size(max_pool, name="max_pool")
    order = np.argsort(cohort.risks, kind="stable") if sort else np.arange(len(cohort))
    r = cohort.risks[order]
    csum = np.concatenate(([0.0], np.cumsum(r)))
    N = r.size

    def estimate(i, g):
        if estimator == "mean":
            return float((csum[i + g] - csum[i]) / g)
        return float(r[i:i + g].max())

    groups: List[PlanGroup] = []
    solo: List[np.ndarray] = []

    def flush():
        if solo:
            merged = np.concatenate(solo)
            groups.append(PlanGroup(merged, "individual", 1, float(cohort.risks[merged].mean()), 1.0))
            solo.clear()

    i = 0
    while i < N:
        cap = N - i
        if sort and max_spread is not None:
            cap = min(cap, int(np.searchsorted(r, r[i] + max_spread, side="right")) - i)
        choice = _choose(family, float(r[i]), cap, max_pool)
        for _ in range(8):
            new = _choose(family, estimate(i, choice.group_size), cap, max_pool)
            if new.group_size == choice.group_size and new.strategy == choice.strategy:
                break
            choice = new
        g = choice.group_size
        risk = estimate(i, g)
        tpp = group_tpp(choice.strategy, risk, choice.pool_size)
        if choice.strategy != "individual" and tpp >= 1.0:
            choice, g, tpp = _INDIVIDUAL, 1, 1.0
        members = order[i:i + g]
        if choice.strategy == "individual":
            solo.append(members)
        else:
            flush()
            groups.append(PlanGroup(members, choice.strategy, choice.pool_size, risk, tpp))
        i += g
    flush()
    return PoolingPlan(cohort, family, groups)


def plan_expected_tpp(plan: PoolingPlan) -> float:
    return plan.expected_tpp


# -- evaluation ------------------------------------------------------------------


def _plan_rows_per_chunk(n_patients: int) -> int:
    return max(1, min(simulator.CHUNK, 4_000_000 // max(n_patients, 1)))


def plan_trial_tests(plan: PoolingPlan, trials: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Per-trial total tests and rounds of executing ``plan``.

    Patient statuses are drawn from their own risks, keyed by cohort
    position, so two plans over the same cohort see identical statuses.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    risks = plan.cohort.risks
    N = risks.size
    rows = _plan_rows_per_chunk(N)
    buckets: Dict[tuple, List[PlanGroup]] = {}
    for g in plan.groups:
        buckets.setdefault((g.strategy, g.pool_size, g.size), []).append(g)
    tests = np.zeros(trials, np.int64)
    rounds = np.zeros(trials, np.int64)
    for chunk in range(-(-trials // rows)):
        lo = chunk * rows
        count = min(trials, lo + rows) - lo
        status = simulator.chunk_rng(seed, chunk).random((rows, N))[:count] < risks
        perm_rng = simulator.chunk_rng(seed, chunk, stream=1)
        for (strategy, pool_size, size), members in buckets.items():
            idx = np.stack([g.members for g in members])
            X = status[:, idx].reshape(count * len(members), size)
            descriptor = members[0].descriptor
            perms = None
            if strategy == "double":
                perms = double_pooling_permutations(size, pool_size, perm_rng, X.shape[0])
            t, rd = simulator.count_tests(descriptor, X, perms)
            tests[lo:lo + count] += t.reshape(count, len(members)).sum(axis=1)
            rounds[lo:lo + count] = np.maximum(rounds[lo:lo + count],
                                               rd.reshape(count, len(members)).max(axis=1))
    return tests, rounds


def evaluate_plan(plan: PoolingPlan, trials: int, seed: int) -> simulator.SimulationSummary:
    tests, rounds = plan_trial_tests(plan, trials, seed)
    N = len(plan.cohort)
    mean = float(tests.mean())
    stderr = float(tests.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    return simulator.SimulationSummary(
        strategy=plan.family,
        p=float(plan.cohort.risks.mean()),
        n=0,
        m=N,
        trials=trials,
        mean_tests=mean,
        stderr_tests=stderr,
        mean_tpp=mean / N,
        mean_rounds=float(rounds.mean()),
    )


@dataclass(frozen=True)
class PlanComparison:
    mean_tpp_a: float
    mean_tpp_b: float
    mean_diff: float
    stderr_diff: float

    def a_better(self, z: float = 1.96) -> bool:
        """True when plan A needs fewer tests at the given two-sided z level."""
        return self.mean_diff + z * self.stderr_diff < 0


def compare_plans(a: PoolingPlan, b: PoolingPlan, trials: int, seed: int) -> PlanComparison:
    """Paired comparison of two plans over one cohort (difference is A - B, in TPP)."""
    if a.cohort is not b.cohort and not np.array_equal(a.cohort.risks, b.cohort.risks):
        raise ValueError("paired comparison needs both plans over the same cohort")
    ta, _ = plan_trial_tests(a, trials, seed)
    tb, _ = plan_trial_tests(b, trials, seed)
    N = len(a.cohort)
    d = (ta - tb) / N
    se = float(d.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    return PlanComparison(float(ta.mean() / N), float(tb.mean() / N), float(d.mean()), se)


# -- plan documents --------------------------------------------------------------


def plan_rows(plan: PoolingPlan) -> List[dict]:
    ids = plan.cohort.ids
    return [
        {
            "group": k,
            "strategy": g.strategy,
            "pool_size": g.pool_size,
            "group_size": g.size,
            "risk": g.risk,
            "expected_tpp": g.expected_tpp,
            "expected_tests": g.expected_tests,
            "members": ";".join(ids[i] for i in g.members),
        }
        for k, g in enumerate(plan.groups)
    ]


def plan_to_csv(plan: PoolingPlan) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=PLAN_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in plan_rows(plan):
        row = dict(row, risk=repr(round(row["risk"], 12)),
                   expected_tpp=repr(round(row["expected_tpp"], 12)),
                   expected_tests=repr(round(row["expected_tests"], 10)))
        writer.writerow(row)
    return buf.getvalue()


def plan_to_json(plan: PoolingPlan) -> str:
    doc = dict(plan.summary())
    doc["duplication"] = plan.duplication
    doc["groups"] = [dict(row, members=row["members"].split(";")) for row in plan_rows(plan)]
    return json.dumps(doc, indent=2, sort_keys=False) + "\n"


def read_plan_csv(source: Source) -> List[Tuple[str, int, List[str]]]:
    """Parse a plan CSV back into ``(strategy, pool_size, member ids)`` per group."""
    out = []
    for line, row in _read_rows(source, PLAN_COLUMNS):
        if len(row) != len(PLAN_COLUMNS):
            raise CohortFormatError(f"expected {len(PLAN_COLUMNS)} fields, got {len(row)}", line)
        rec = dict(zip(PLAN_COLUMNS, row))
        members = rec["members"].split(";") if rec["members"] else []
        if len(members) != int(rec["group_size"]):
            raise CohortFormatError("group_size does not match member count", line)
        out.append((rec["strategy"], int(rec["pool_size"]), members))
    return out
