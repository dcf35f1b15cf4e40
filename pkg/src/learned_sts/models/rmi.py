"""Two-layer RMI, a fixed candidate grid and SY-RMI mining with the UB rule."""

from __future__ import annotations

import json
import logging
import math
import statistics
import time
import warnings
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .._jit import key_offset
from ..search import SearchRange, bbs_kernel
from ..tables import QueryBatch, make_query_batch
from .atomic import certified_eps, error_interval, fit_polynomial, horner, normalized
from .base import ModelError, PredictorMixin, composed_checksum, lower_bound_ranks, table_keys

log = logging.getLogger(__name__)

ROOT_DEGREES = {"linear": 1, "cubic": 3}
LEAF_KINDS = ("linear",)
GRID_BRANCHING = tuple(2**e for e in range(6, 19, 2))
MAX_CANDIDATES = 10
MINING_REPS = 5
DEFAULT_BUDGETS = (0.05, 0.7, 2.0)
LEAF_BYTES = 24  # slope, intercept, error


@njit(inline="always")
def _route(root, u, b):
    c = np.floor(horner(root, u))
    if not c > 0.0:
        return 0
    if c >= b - 1:
        return b - 1
    return np.int64(c)


@njit(cache=True)
def _route_all(root, keys, key_min, inv_span, b):
    out = np.empty(keys.size, dtype=np.int64)
    for i in range(keys.size):
        out[i] = _route(root, key_offset(keys[i], key_min) * inv_span, b)
    return out


@njit(cache=True)
def _fit_leaves(keys, ranks, leaf, key_min, inv_span, b):
    """Per-leaf least squares of rank on the normalized key, then its max error."""
    cnt = np.zeros(b, dtype=np.int64)
    mu = np.zeros(b)
    my = np.zeros(b)
    for i in range(keys.size):
        j = leaf[i]
        cnt[j] += 1
        mu[j] += key_offset(keys[i], key_min) * inv_span
        my[j] += ranks[i]
    for j in range(b):
        if cnt[j] > 0:
            mu[j] /= cnt[j]
            my[j] /= cnt[j]
    suu = np.zeros(b)
    suy = np.zeros(b)
    for i in range(keys.size):
        j = leaf[i]
        du = key_offset(keys[i], key_min) * inv_span - mu[j]
        suu[j] += du * du
        suy[j] += du * (ranks[i] - my[j])
    slope = np.zeros(b)
    intercept = np.zeros(b)
    seen = 0
    for j in range(b):
        if cnt[j] == 0:
            # Nothing routes here in training; predict where the keys of the
            # following leaves begin.
            intercept[j] = seen
        elif suu[j] > 0.0:
            slope[j] = suy[j] / suu[j]
            intercept[j] = my[j] - slope[j] * mu[j]
        else:
            intercept[j] = my[j]
        seen += cnt[j]
    err = np.zeros(b)
    for i in range(keys.size):
        j = leaf[i]
        f = slope[j] * (key_offset(keys[i], key_min) * inv_span) + intercept[j]
        d = abs(f - ranks[i])
        if d > err[j] or d != d:
            err[j] = d
    return slope, intercept, err


@njit(cache=True)
def _rmi_kernel(params, x):
    root, key_min, inv_span, slope, intercept, err, n = params
    u = key_offset(x, key_min) * inv_span
    j = _route(root, u, slope.size)
    f = slope[j] * u + intercept[j]
    return error_interval(f, err[j], np.int64(0), n)


@dataclass(frozen=True, eq=False)
class RmiModel(PredictorMixin):
    """Root polynomial routes to one of ``b`` linear leaves; each leaf keeps its own error."""

    root_kind: str
    leaf_kind: str
    b: int
    root: np.ndarray
    slope: np.ndarray
    intercept: np.ndarray
    leaf_err: np.ndarray
    n: int
    key_min: int
    key_max: int
    key_dtype: np.dtype

    @property
    def arch(self) -> tuple[str, str]:
        return (self.root_kind, self.leaf_kind)

    @property
    def name(self) -> str:
        return f"RMI-{self.root_kind}-{self.leaf_kind}-{self.b}"

    @property
    def inv_span(self) -> float:
        span = float(self.key_max) - float(self.key_min)
        return 1.0 / span if span > 0 else 0.0

    @property
    def kernel(self):
        return _rmi_kernel

    @cached_property
    def params(self):
        return (
            self.root,
            self.key_dtype.type(self.key_min),
            float(self.inv_span),
            self.slope,
            self.intercept,
            self.leaf_err,
            np.int64(self.n),
        )

    def route(self, xs) -> np.ndarray:
        xs = np.asarray(xs).astype(self.key_dtype, copy=False)
        return _route_all(self.root, xs, self.key_dtype.type(self.key_min), self.inv_span, self.b)

    def header_bytes(self) -> int:
        # root coefficients, key_min, inv_span, n, b
        return 8 * self.root.size + 4 * 8

    def size_bytes(self) -> int:
        return self.header_bytes() + LEAF_BYTES * self.b


def train_rmi(t, root_kind: str = "linear", leaf_kind: str = "linear", b: int = 1024) -> RmiModel:
    """Root fits ``key -> rank * b / n``; every key goes to leaf ``floor(root)``
    clamped to ``[0, b-1]`` and each leaf fits its routed keys."""
    if root_kind not in ROOT_DEGREES:
        raise ModelError(f"unknown root kind {root_kind!r}")
    if leaf_kind not in LEAF_KINDS:
        raise ModelError(f"unknown leaf kind {leaf_kind!r}")
    b = int(b)
    if b < 1:
        raise ModelError("branching factor must be >= 1")
    keys = table_keys(t)
    n = keys.size
    if n < 2:
        raise ModelError("RMI needs at least 2 keys")
    ranks = lower_bound_ranks(keys)
    key_min, key_max = keys[0], keys[-1]
    span = float(key_max) - float(key_min)
    inv_span = 1.0 / span if span > 0 else 0.0
    u = normalized(keys, key_min, inv_span)
    if span > 0:
        root = fit_polynomial(u, ranks * (b / n), ROOT_DEGREES[root_kind])
    else:
        root = np.zeros(1)
    kmin = keys.dtype.type(key_min)
    if b == 1:
        # a single leaf is exactly the atomic linear fit
        c = fit_polynomial(u, ranks, 1 if span > 0 else 0)
        slope = np.array([c[1] if c.size > 1 else 0.0])
        intercept = np.array([c[0]])
        leaf = np.zeros(n, dtype=np.int64)
        err = np.array([np.max(np.abs(slope[0] * u + intercept[0] - ranks))])
    else:
        leaf = _route_all(root, keys, kmin, inv_span, b)
        slope, intercept, err = _fit_leaves(keys, ranks.astype(np.float64), leaf, kmin, inv_span, b)
    leaf_err = np.array([certified_eps(e) for e in err], dtype=np.int64)
    return RmiModel(
        root_kind=root_kind,
        leaf_kind=leaf_kind,
        b=b,
        root=np.ascontiguousarray(root),
        slope=slope,
        intercept=intercept,
        leaf_err=leaf_err,
        n=n,
        key_min=int(key_min),
        key_max=int(key_max),
        key_dtype=keys.dtype,
    )


def predict_rmi(m: RmiModel, x) -> SearchRange:
    return m.predict(x)


# ---------------------------------------------------------------------------
# Candidate grid


@dataclass(frozen=True)
class RmiCandidate:
    root_kind: str
    leaf_kind: str
    b: int
    size_bytes: int
    avg_ns: float
    model: Optional[RmiModel] = field(default=None, compare=False, repr=False)

    @property
    def arch(self) -> tuple[str, str]:
        return (self.root_kind, self.leaf_kind)

    def record(self) -> dict:
        return {
            "root_kind": self.root_kind,
            "leaf_kind": self.leaf_kind,
            "b": self.b,
            "size_bytes": self.size_bytes,
            "avg_ns": self.avg_ns,
        }


@dataclass
class RmiCandidateSet:
    candidates: list
    table: str = ""
    n: int = 0

    def __len__(self):
        return len(self.candidates)

    def fastest(self) -> RmiCandidate:
        return min(self.candidates, key=lambda c: (c.avg_ns, c.size_bytes))

    def to_dict(self) -> dict:
        return {"table": self.table, "n": self.n, "candidates": [c.record() for c in self.candidates]}

    @classmethod
    def from_dict(cls, d) -> "RmiCandidateSet":
        cands = [
            RmiCandidate(c["root_kind"], c["leaf_kind"], int(c["b"]), int(c["size_bytes"]), float(c["avg_ns"]))
            for c in d["candidates"]
        ]
        return cls(cands, d.get("table", ""), int(d.get("n", 0)))


def calibration_batch(t, fraction: float = 0.01, m_full: int = 1_000_000, seed: int = 0) -> QueryBatch:
    """Query batch at ``fraction`` of the full query count."""
    return make_query_batch(t, max(1, int(round(m_full * fraction))), seed)


def time_model(model, t, q: QueryBatch, reps: int = MINING_REPS) -> float:
    """Median over ``reps`` of the average ns per query, model composed with BBS."""
    keys = table_keys(t)
    xs = q.queries.astype(keys.dtype, copy=False)
    k, p = model.kernel, model.params
    composed_checksum(k, p, bbs_kernel, keys, 0, xs[:1])
    avgs = []
    for _ in range(reps):
        t0 = time.perf_counter_ns()
        composed_checksum(k, p, bbs_kernel, keys, 0, xs)
        avgs.append((time.perf_counter_ns() - t0) / xs.size)
    return float(statistics.median(avgs))


def build_candidate_grid(
    t,
    calib: Optional[QueryBatch] = None,
    branching: Sequence[int] = GRID_BRANCHING,
    roots: Sequence[str] = tuple(ROOT_DEGREES),
    keep: int = MAX_CANDIDATES,
    reps: int = MINING_REPS,
    table: str = "",
    seed: int = 0,
    workers: int = 1,
) -> RmiCandidateSet:
    """Train every (root, linear leaf, b) grid point and keep the ``keep`` fastest.

    Training may use ``workers`` threads; timing always runs serially.
    """
    if calib is None:
        calib = calibration_batch(t, seed=seed)
    grid = [(root_kind, b) for root_kind in roots for b in branching]

    def train(cell):
        return train_rmi(t, cell[0], "linear", cell[1])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            models = list(ex.map(train, grid))
    else:
        models = [train(c) for c in grid]
    cands = [
        RmiCandidate(m.root_kind, m.leaf_kind, m.b, m.size_bytes(), time_model(m, t, calib, reps), m)
        for m in models
    ]
    cands.sort(key=lambda c: (c.avg_ns, c.size_bytes, c.root_kind, c.b))
    return RmiCandidateSet(cands[:keep], table, table_keys(t).size)


# ---------------------------------------------------------------------------
# SY-RMI


@dataclass(frozen=True)
class SyRmiSpec:
    ub: float
    winner_arch: tuple
    space_budget_pct: float = 2.0
    level: str = ""

    def __post_init__(self):
        if not self.ub > 0:
            raise ModelError("ub must be positive")
        if not self.space_budget_pct > 0:
            raise ModelError("space budget must be positive")

    def with_budget(self, pct: float) -> "SyRmiSpec":
        return SyRmiSpec(self.ub, self.winner_arch, pct, self.level)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["winner_arch"] = list(self.winner_arch)
        return d

    @classmethod
    def from_dict(cls, d) -> "SyRmiSpec":
        return cls(float(d["ub"]), tuple(d["winner_arch"]), float(d.get("space_budget_pct", 2.0)), d.get("level", ""))


def mine_sy_rmi(pool: Sequence[RmiCandidateSet], calib=None, level: str = "") -> SyRmiSpec:
    """UB is the median of ``b / size_bytes`` over every candidate in the pool;
    the winning architecture is the one fastest on the most tables.

    With ``calib`` (one QueryBatch per table, plus the tables as ``(table, batch)``
    pairs) the query times are re-measured; otherwise the stored ``avg_ns`` are used.
    """
    pool = [p for p in pool]
    if not pool or not any(len(p) for p in pool):
        raise ModelError("empty candidate pool")
    if calib is not None:
        pool = [_retime(p, tb) for p, tb in zip(pool, calib)]
    ratios = [c.b / c.size_bytes for p in pool for c in p.candidates]
    ub = float(statistics.median(ratios))
    wins = Counter()
    win_bytes = Counter()
    for p in pool:
        if not p.candidates:
            continue
        best = p.fastest()
        wins[best.arch] += 1
        win_bytes[best.arch] += best.size_bytes
    top = max(wins.values())
    tied = sorted(a for a, w in wins.items() if w == top)
    winner = min(tied, key=lambda a: win_bytes[a] / wins[a])
    if len(tied) > 1:
        log.info("SY-RMI winner tie among %s broken by size: %s", tied, winner)
    return SyRmiSpec(ub=ub, winner_arch=tuple(winner), level=level)


def _retime(cset: RmiCandidateSet, table_and_batch) -> RmiCandidateSet:
    t, q = table_and_batch
    out = []
    for c in cset.candidates:
        m = c.model or train_rmi(t, c.root_kind, c.leaf_kind, c.b)
        out.append(RmiCandidate(c.root_kind, c.leaf_kind, c.b, m.size_bytes(), time_model(m, t, q), m))
    return RmiCandidateSet(out, cset.table, cset.n)


def sy_rmi_branching(ub: float, n: int, width: int, budget_pct: float) -> int:
    """``max(1, floor(ub * budget_bytes))`` with ``budget_bytes = pct/100 * n * key_bytes``."""
    if not budget_pct > 0:
        raise ModelError("space budget must be positive")
    budget_bytes = budget_pct / 100.0 * n * (width // 8)
    b = math.floor(ub * budget_bytes)
    if b < 1:
        warnings.warn(
            f"budget {budget_pct}% of {n} keys gives branching {ub * budget_bytes:.3g}; using b=1",
            RuntimeWarning,
            stacklevel=2,
        )
        b = 1
    return int(b)


def instantiate_sy_rmi(t, spec: SyRmiSpec, budget_pct: Optional[float] = None) -> RmiModel:
    """Train the winning architecture with ``b`` derived from UB and the byte budget.

    Leaves take at most the budget; the fixed header (root and normalization)
    is the documented slack on top of it.
    """
    keys = table_keys(t)
    pct = spec.space_budget_pct if budget_pct is None else budget_pct
    b = sy_rmi_branching(spec.ub, keys.size, keys.dtype.itemsize * 8, pct)
    root_kind, leaf_kind = spec.winner_arch
    return train_rmi(t, root_kind, leaf_kind, b)


def header_slack_bytes(root_kind: str) -> int:
    return 8 * (ROOT_DEGREES[root_kind] + 1) + 4 * 8


# ---------------------------------------------------------------------------
# JSON pool files


def save_pool(pool: Sequence[RmiCandidateSet], path, level: str = "") -> None:
    doc = {"level": level, "tables": [p.to_dict() for p in pool]}
    Path(path).write_text(json.dumps(doc, indent=2))


def load_pool(path) -> tuple[str, list]:
    doc = json.loads(Path(path).read_text())
    return doc.get("level", ""), [RmiCandidateSet.from_dict(d) for d in doc["tables"]]


def save_spec(spec: SyRmiSpec, path) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2))


def load_spec(path) -> SyRmiSpec:
    return SyRmiSpec.from_dict(json.loads(Path(path).read_text()))
