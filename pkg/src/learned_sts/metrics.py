"""Reduction factor, training and query timing, and model space accounting."""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .tables import QueryBatch, SortedTable

DEFAULT_TRAIN_REPS = 5


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class ReductionFactorStats:
    """Mean percentage of the table excluded by a model's predicted intervals."""

    mean_rf: float
    n: int
    m: int
    widths: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if not 0.0 <= self.mean_rf <= 100.0:
            raise MetricsError(f"reduction factor {self.mean_rf} outside [0, 100]")


@dataclass(frozen=True)
class TimingRecord:
    """``total_ns`` is the median over ``repetitions``; ``per_op_ns = total_ns / count``."""

    total_ns: float
    per_op_ns: float
    repetitions: int
    count: int
    checksum: Optional[int] = None
    samples_ns: tuple = ()

    @property
    def per_op_seconds(self) -> float:
        return self.per_op_ns * 1e-9


def _queries(q) -> np.ndarray:
    return q.queries if isinstance(q, QueryBatch) else np.asarray(q)


def _n(t) -> int:
    return t.n if isinstance(t, SortedTable) else int(np.asarray(t).size)


def reduction_factor(model, t, q, keep_widths=False) -> ReductionFactorStats:
    """``100 * (1 - mean(hi - lo) / n)`` over the predicted ranges of ``q``."""
    xs = _queries(q)
    n = _n(t)
    if xs.size == 0:
        raise MetricsError("reduction factor needs at least one query")
    lo, hi = model.predict_batch(xs)
    widths = hi - lo
    rf = 100.0 * (1.0 - float(widths.sum()) / (xs.size * n))
    return ReductionFactorStats(
        mean_rf=min(100.0, max(0.0, rf)),
        n=n,
        m=int(xs.size),
        widths=widths if keep_widths else None,
    )


def time_training(build: Callable[[], object], n: int, repetitions: int = DEFAULT_TRAIN_REPS):
    """Median wall clock of ``build()`` over ``repetitions`` runs.

    Returns ``(TimingRecord, result_of_last_build)``; ``per_op_ns`` is per element.
    """
    if repetitions < 1:
        raise MetricsError("repetitions must be >= 1")
    if n < 1:
        raise MetricsError("n must be >= 1")
    samples = []
    result = None
    for _ in range(repetitions):
        t0 = time.perf_counter_ns()
        result = build()
        samples.append(time.perf_counter_ns() - t0)
    total = float(statistics.median(samples))
    return (
        TimingRecord(
            total_ns=total,
            per_op_ns=total / n,
            repetitions=repetitions,
            count=n,
            samples_ns=tuple(samples),
        ),
        result,
    )


def time_queries(method: Callable[[np.ndarray], int], q, repetitions: int = 1, warmup: bool = True) -> TimingRecord:
    """Time ``method(queries) -> checksum`` over the whole batch.

    A warm-up call (compilation, cold caches) is excluded. The checksum of the
    timed runs is returned so callers can compare it with an oracle; runs that
    disagree with each other raise.
    """
    xs = _queries(q)
    m = int(xs.size)
    if m == 0:
        raise MetricsError("query batch is empty")
    if repetitions < 1:
        raise MetricsError("repetitions must be >= 1")
    if warmup:
        method(xs)
    samples = []
    checksum = None
    for _ in range(repetitions):
        t0 = time.perf_counter_ns()
        c = int(method(xs))
        samples.append(time.perf_counter_ns() - t0)
        if checksum is not None and c != checksum:
            raise MetricsError("checksum changed between repetitions")
        checksum = c
    total = float(statistics.median(samples))
    return TimingRecord(
        total_ns=total,
        per_op_ns=total / m,
        repetitions=repetitions,
        count=m,
        checksum=checksum,
        samples_ns=tuple(samples),
    )


def oracle_checksum(t, queries) -> int:
    """Sum of lower-bound indices mod 2^64, the value every timed run must reproduce."""
    keys = t.keys if isinstance(t, SortedTable) else np.asarray(t)
    xs = np.asarray(_queries(queries)).astype(keys.dtype, copy=False)
    idx = np.searchsorted(keys, xs, side="left").astype(np.uint64)
    return int(idx.sum(dtype=np.uint64))


def space_pct(size_bytes: int, n: int, width: int = 64) -> float:
    """Model size as a percentage of the table's key bytes."""
    return 100.0 * size_bytes / (n * (width // 8))
