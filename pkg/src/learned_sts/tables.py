"""Sorted tables, Eytzinger layout, SOSD key files and level-sized datasets."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from numba import njit

log = logging.getLogger(__name__)

# Table sizes per memory level on the reference machine (64Kb L1, 256Kb L2,
# 8Mb L3). L4 is "the whole file"; None means use the source size.
LEVEL_SIZES = {"L1": 3_700, "L2": 31_500, "L3": 750_000, "L4": None}
# Desk-scale stand-in for the 200M-key L4 tables.
DESK_L4_SIZE = 2_000_000

_DTYPES = {32: np.dtype("<u4"), 64: np.dtype("<u8")}


class TableError(ValueError):
    pass


class DatasetRejectedError(RuntimeError):
    """Every sampling trial was rejected by the KS test."""

    def __init__(self, message, best_keys, best_statistic, critical_value):
        super().__init__(message)
        self.best_keys = best_keys
        self.best_statistic = best_statistic
        self.critical_value = critical_value


@dataclass(frozen=True, eq=False)
class SortedTable:
    keys: np.ndarray
    width: int = 64

    def __post_init__(self):
        if self.width not in _DTYPES:
            raise TableError(f"unsupported key width {self.width}")
        keys = np.array(self.keys, dtype=_DTYPES[self.width].newbyteorder("="), copy=True)
        if keys.ndim != 1 or keys.size == 0:
            raise TableError("empty table")
        if keys.size > 1 and np.any(keys[1:] < keys[:-1]):
            raise TableError("keys must be non-decreasing")
        keys.flags.writeable = False
        object.__setattr__(self, "keys", keys)

    @classmethod
    def from_unsorted(cls, keys, width=64, dedup=False):
        arr = np.asarray(keys, dtype=_DTYPES[width].newbyteorder("="))
        arr = np.unique(arr) if dedup else np.sort(arr, kind="stable")
        return cls(arr, width)

    @property
    def n(self) -> int:
        return int(self.keys.size)

    @property
    def dtype(self):
        return self.keys.dtype

    @property
    def nbytes(self) -> int:
        return self.n * (self.width // 8)

    def __len__(self):
        return self.n

    def __getitem__(self, i):
        return self.keys[i]

    def coerce(self, x):
        """Cast query key(s) to the table's key dtype."""
        return np.asarray(x).astype(self.keys.dtype, copy=False)


@dataclass(frozen=True, eq=False)
class EytzingerTable:
    """Keys in BFS order of the implicit complete BST.

    ``rank[i]`` is the sorted position of ``keys[i]``; ``rank`` has one extra
    trailing slot holding ``n`` so a miss maps to ``n`` without a branch.
    """

    keys: np.ndarray
    rank: np.ndarray

    @property
    def n(self) -> int:
        return int(self.keys.size)


@dataclass(frozen=True)
class DatasetSpec:
    source: Path
    level: str = "L1"
    target_n: Optional[int] = None
    trials: int = 100
    ks_alpha: float = 0.05
    histogram_bins: int = 64
    width: int = 64

    def __post_init__(self):
        if self.level not in LEVEL_SIZES:
            raise ValueError(f"unknown level {self.level!r}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not 0.0 < self.ks_alpha < 1.0:
            raise ValueError("ks_alpha must lie in (0, 1)")
        if self.histogram_bins < 1:
            raise ValueError("histogram_bins must be >= 1")


@dataclass
class KsKlReport:
    level: str
    source_n: int
    target_n: int
    trials: int
    ks_alpha: float
    ks_critical: float
    accepted: int
    chosen_trial: int
    chosen_ks: float
    chosen_kl: float
    ks_statistics: list = field(default_factory=list, repr=False)
    kl_divergences: list = field(default_factory=list, repr=False)

    @property
    def acceptance_pct(self) -> float:
        return 100.0 * self.accepted / self.trials

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "source_n": self.source_n,
            "target_n": self.target_n,
            "trials": self.trials,
            "ks_alpha": self.ks_alpha,
            "ks_critical": self.ks_critical,
            "accepted": self.accepted,
            "acceptance_pct": self.acceptance_pct,
            "chosen_trial": self.chosen_trial,
            "chosen_ks": self.chosen_ks,
            "chosen_kl": self.chosen_kl,
            "ks_statistics": list(self.ks_statistics),
            "kl_divergences": list(self.kl_divergences),
        }


@dataclass(frozen=True, eq=False)
class QueryBatch:
    queries: np.ndarray
    seed: Optional[int] = None

    @property
    def m(self) -> int:
        return int(self.queries.size)

    def __len__(self):
        return self.m


# ---------------------------------------------------------------------------
# SOSD key files


def load_keys(path, width=64, dedup=False) -> SortedTable:
    """Read an SOSD-format key file: u64 count, then ``count`` LE keys."""
    dtype = _DTYPES.get(width)
    if dtype is None:
        raise TableError(f"unsupported key width {width}")
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise TableError(f"{path}: truncated header")
    count = int(np.frombuffer(raw[:8], dtype="<u8")[0])
    if count == 0:
        raise TableError(f"{path}: empty table")
    body = len(raw) - 8
    expected = count * dtype.itemsize
    if body < expected:
        raise TableError(
            f"{path}: truncated, header says {count} keys but only "
            f"{body // dtype.itemsize} present"
        )
    if body != expected:
        raise TableError(f"{path}: {body - expected} trailing bytes after {count} keys")
    keys = np.frombuffer(raw, dtype=dtype, count=count, offset=8)
    return SortedTable.from_unsorted(keys, width=width, dedup=dedup)


def store_keys(table, path) -> None:
    keys = table.keys if isinstance(table, SortedTable) else np.asarray(table)
    width = table.width if isinstance(table, SortedTable) else keys.dtype.itemsize * 8
    with open(path, "wb") as fh:
        fh.write(np.array([keys.size], dtype="<u8").tobytes())
        fh.write(keys.astype(_DTYPES[width], copy=False).tobytes())


# ---------------------------------------------------------------------------
# Eytzinger layout


@njit(cache=True)
def _eytzinger_fill(src, out, rank, i, k):
    # In-order walk of the implicit tree; i is the next sorted position.
    stack = np.empty(64, dtype=np.int64)
    top = 0
    node = k
    n = out.size
    while True:
        while node < n:
            stack[top] = node
            top += 1
            node = 2 * node + 1
        if top == 0:
            return i
        top -= 1
        node = stack[top]
        out[node] = src[i]
        rank[node] = i
        i += 1
        node = 2 * node + 2


def build_eytzinger(table) -> EytzingerTable:
    keys = table.keys if isinstance(table, SortedTable) else np.asarray(table)
    n = keys.size
    if n < 1:
        raise TableError("empty table")
    out = np.empty_like(keys)
    rank = np.empty(n + 1, dtype=np.int64)
    rank[n] = n
    _eytzinger_fill(keys, out, rank, 0, 0)
    out.flags.writeable = False
    rank.flags.writeable = False
    return EytzingerTable(out, rank)


# ---------------------------------------------------------------------------
# KS / KL machinery


def ks_critical_value(n, m, alpha=0.05) -> float:
    """Asymptotic two-sample KS critical value at level ``alpha``."""
    c = math.sqrt(-0.5 * math.log(alpha / 2.0))
    return c * math.sqrt((n + m) / (n * m))


@njit(cache=True)
def _ks_merge(a, b):
    na, nb = a.size, b.size
    i = 0
    j = 0
    d = 0.0
    while i < na and j < nb:
        v = a[i] if a[i] <= b[j] else b[j]
        while i < na and a[i] == v:
            i += 1
        while j < nb and b[j] == v:
            j += 1
        diff = abs(i / na - j / nb)
        if diff > d:
            d = diff
    # Tail: one ECDF is already 1, the other jumps to 1 at its last value.
    return d


def ks_statistic(a, b) -> float:
    """Two-sample KS statistic ``sup |F_a - F_b|`` for sorted inputs."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.size == 0 or b.size == 0:
        raise ValueError("KS statistic needs two non-empty samples")
    if a.dtype != b.dtype:
        b = b.astype(a.dtype)
    return float(_ks_merge(a, b))


@njit(cache=True)
def _ks_subset(lb, ub, idx, n_source):
    # Sample = source[idx] (idx sorted). lb/ub give, per source position,
    # the lower/upper bound of its value in the source, so both ECDFs are
    # available without touching the source keys.
    m = idx.size
    d = 0.0
    k = 0
    while k < m:
        v_lb = lb[idx[k]]
        v_ub = ub[idx[k]]
        k_end = k
        while k_end < m and lb[idx[k_end]] == v_lb:
            k_end += 1
        # Just below the value: sample ECDF k/m, source ECDF climbs to lb/n.
        left = abs(v_lb / n_source - k / m)
        right = abs(v_ub / n_source - k_end / m)
        if left > d:
            d = left
        if right > d:
            d = right
        k = k_end
    return d


def _bin_index(keys, lo, hi, bins):
    span = float(hi - lo) if hi > lo else 1.0
    off = (keys - keys.dtype.type(lo)).astype(np.float64)
    idx = np.floor(off / span * bins).astype(np.int64)
    return np.clip(idx, 0, bins - 1)


def histogram_pdf(keys, lo, hi, bins=64) -> np.ndarray:
    """Equal-width histogram over ``[lo, hi]``; empty bins get one pseudo-count."""
    counts = np.bincount(_bin_index(np.asarray(keys), lo, hi, bins), minlength=bins)
    return _pdf_from_counts(counts)


def _pdf_from_counts(counts):
    counts = counts.astype(np.float64)
    counts[counts == 0] = 1.0
    return counts / counts.sum()


def kl_divergence(p, q) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    return float(np.sum(p * np.log(p / q)))


def sample_sorted_indices(n, m, rng) -> np.ndarray:
    """Sorted uniform sample of ``m`` distinct positions out of ``n``."""
    if m > n:
        raise ValueError("sample larger than population")
    if m == n:
        return np.arange(n, dtype=np.int64)
    if 16 * m < n:
        idx = rng.choice(n, size=m, replace=False)
        idx.sort()
        return idx.astype(np.int64)
    # Dense samples: mark a bitmap and read it back in order, which avoids the sort.
    mask = np.zeros(n, dtype=bool)
    mask[rng.choice(n, size=m, replace=False, shuffle=False)] = True
    return np.flatnonzero(mask).astype(np.int64)


def sample_from_keys(
    source,
    target_n,
    trials=100,
    ks_alpha=0.05,
    histogram_bins=64,
    seed=0,
    level="",
):
    """Draw ``trials`` samples of ``source``; keep the KS-accepted one with least KL."""
    src = source.keys if isinstance(source, SortedTable) else np.asarray(source)
    width = source.width if isinstance(source, SortedTable) else src.dtype.itemsize * 8
    n = src.size
    if not 1 <= target_n <= n:
        raise ValueError(f"target_n={target_n} outside [1, {n}]")
    lb = np.searchsorted(src, src, side="left")
    ub = np.searchsorted(src, src, side="right")
    bins_of = _bin_index(src, src[0], src[-1], histogram_bins)
    q = _pdf_from_counts(np.bincount(bins_of, minlength=histogram_bins))
    crit = ks_critical_value(n, target_n, ks_alpha)

    ks_stats, kls = [], []
    best = None  # (kl, trial, idx, ks)
    fallback = None  # (ks, idx)
    accepted = 0
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial])
        idx = sample_sorted_indices(n, target_n, rng)
        d = float(_ks_subset(lb, ub, idx, n))
        ks_stats.append(d)
        if d > crit:
            kls.append(float("nan"))
            if fallback is None or d < fallback[0]:
                fallback = (d, idx)
            continue
        accepted += 1
        p = _pdf_from_counts(np.bincount(bins_of[idx], minlength=histogram_bins))
        kl = kl_divergence(p, q)
        kls.append(kl)
        if best is None or kl < best[0]:
            best = (kl, trial, idx, d)
    if best is None:
        raise DatasetRejectedError(
            f"all {trials} samples rejected by KS at alpha={ks_alpha}",
            SortedTable(src[fallback[1]], width),
            fallback[0],
            crit,
        )
    kl, trial, idx, d = best
    report = KsKlReport(
        level=level,
        source_n=n,
        target_n=target_n,
        trials=trials,
        ks_alpha=ks_alpha,
        ks_critical=crit,
        accepted=accepted,
        chosen_trial=trial,
        chosen_ks=d,
        chosen_kl=kl,
        ks_statistics=ks_stats,
        kl_divergences=kls,
    )
    log.info(
        "%s: %d/%d samples accepted, chosen KL %.3g", level or "sample", accepted, trials, kl
    )
    return SortedTable(src[idx], width), report


def level_size(level, source_n) -> int:
    size = LEVEL_SIZES[level]
    return source_n if size is None else size


def sample_level_dataset(spec: DatasetSpec, seed=0):
    source = load_keys(spec.source, width=spec.width)
    target = spec.target_n if spec.target_n is not None else level_size(spec.level, source.n)
    if target > source.n:
        raise ValueError(f"target_n={target} exceeds source size {source.n}")
    return sample_from_keys(
        source,
        target,
        trials=spec.trials,
        ks_alpha=spec.ks_alpha,
        histogram_bins=spec.histogram_bins,
        seed=seed,
        level=spec.level,
    )


def make_query_batch(table, m, seed=0) -> QueryBatch:
    if m < 1:
        raise ValueError("query batch needs m >= 1")
    keys = table.keys if isinstance(table, SortedTable) else np.asarray(table)
    rng = np.random.default_rng(seed)
    return QueryBatch(keys[rng.integers(0, keys.size, size=m)], seed)


# ---------------------------------------------------------------------------
# Synthetic sources standing in for the SOSD datasets

SYNTHETIC_KINDS = ("uniform", "lognormal", "normal", "clustered", "steps")


def synthetic_keys(kind, n, seed=0, width=64) -> SortedTable:
    """Sorted synthetic keys with a recognisable CDF shape.

    ``uniform`` mimics the near-uniform ``face`` IDs, ``lognormal`` the skewed
    ``amzn`` popularity data, ``clustered`` the dense cells of ``osm`` and
    ``steps`` the bursty ``wiki`` timestamps.
    """
    rng = np.random.default_rng(seed)
    top = float(2**width - 1)
    if kind == "uniform":
        hi = np.iinfo(_DTYPES[width]).max
        keys = rng.integers(0, hi, size=n, dtype=_DTYPES[width].newbyteorder("="), endpoint=True)
        return SortedTable.from_unsorted(keys, width)
    if kind == "lognormal":
        v = rng.lognormal(0.0, 2.0, size=n)
        v = v / v.max()
    elif kind == "normal":
        v = rng.normal(0.5, 0.1, size=n)
    elif kind == "clustered":
        centers = rng.random(64)
        scales = 10.0 ** rng.uniform(-7, -3, size=64)
        which = rng.integers(0, 64, size=n)
        v = centers[which] + rng.standard_normal(n) * scales[which]
    elif kind == "steps":
        edges = np.sort(rng.random(257))
        weights = rng.pareto(1.2, size=256) + 1e-3
        which = rng.choice(256, size=n, p=weights / weights.sum())
        v = edges[which] + rng.random(n) * (edges[which + 1] - edges[which])
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}; pick one of {SYNTHETIC_KINDS}")
    v = np.clip(v, 0.0, 1.0) * (top * 0.999)
    return SortedTable.from_unsorted(v.astype(_DTYPES[width]), width)
