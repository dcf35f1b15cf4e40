"""KO: k equal table segments, each served by its best atomic model."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numba import njit

from .._jit import key_offset
from ..search import SearchRange
from .atomic import (
    error_interval,
    fit_polynomial,
    horner,
    normalized,
    poly_max_error,
    poly_widths,
    certified_eps,
)
from .base import ModelError, PredictorMixin, lower_bound_ranks, table_keys

K_MIN, K_MAX = 3, 20
MIN_SEGMENT = 4
DEFAULT_K = 15


@dataclass(frozen=True)
class SegmentModel:
    """Atomic model of one KO segment; ``degree`` 0 marks a constant fallback."""

    degree: int
    coeffs: np.ndarray
    eps: int
    key_min: int
    inv_span: float
    rf: float


@njit(cache=True)
def _ko_kernel(params, x):
    mins, coeffs, seg_min, inv_span, eps, starts = params
    k = mins.size
    # Segment s serves mins[s] <= x < mins[s + 1]. It starts at the lower bound
    # of mins[s], so the answer for any such x lies in [starts[s], starts[s + 1]]
    # even when duplicates straddle a boundary.
    s = 0
    while s + 1 < k and mins[s + 1] <= x:
        s += 1
    f = horner(coeffs[s], key_offset(x, seg_min[s]) * inv_span[s])
    return error_interval(f, eps[s], starts[s], starts[s + 1])


@dataclass(frozen=True, eq=False)
class KoModel(PredictorMixin):
    k: int
    boundaries: np.ndarray
    per_segment: tuple
    n: int
    key_dtype: np.dtype
    mins: np.ndarray
    starts: np.ndarray
    search_kind: str = "BFS"

    @property
    def name(self) -> str:
        return f"KO-{self.k}"

    @property
    def degrees(self) -> list[int]:
        return [s.degree for s in self.per_segment]

    @property
    def kernel(self):
        return _ko_kernel

    @cached_property
    def params(self):
        coeffs = np.zeros((self.k, 4))
        for i, s in enumerate(self.per_segment):
            coeffs[i, : s.coeffs.size] = s.coeffs
        return (
            self.mins,
            coeffs,
            np.array([s.key_min for s in self.per_segment], dtype=self.key_dtype),
            np.array([s.inv_span for s in self.per_segment], dtype=np.float64),
            np.array([s.eps for s in self.per_segment], dtype=np.int64),
            self.starts,
        )

    def size_bytes(self) -> int:
        # per segment: 4 coefficients, eps, key_min, inv_span, minimum key;
        # plus the k + 1 segment starts
        return 8 * (self.k * 8 + self.k + 1)


def segment_bounds(n: int, k: int) -> np.ndarray:
    return (np.arange(k + 1, dtype=np.int64) * n) // k


def _fit_segment(keys, ranks, degree, lo, hi):
    key_min = keys[0]
    span = float(keys[-1]) - float(key_min)
    inv_span = 1.0 / span if span > 0 else 0.0
    coeffs = fit_polynomial(normalized(keys, key_min, inv_span), ranks, degree)
    kmin = keys.dtype.type(key_min)
    eps = certified_eps(poly_max_error(coeffs, keys, kmin, inv_span, ranks))
    widths = poly_widths(coeffs, keys, kmin, inv_span, np.int64(eps), np.int64(lo), np.int64(hi))
    rf = 1.0 - float(np.mean(widths)) / max(hi - lo, 1)
    return SegmentModel(degree, coeffs, eps, int(key_min), inv_span, rf)


def train_ko(t, k: int = DEFAULT_K, search_kind: str = "BFS") -> KoModel:
    """Split the table into ``k`` equal index ranges and keep, per segment, the
    degree 1-3 fit with the best reduction factor over the keys it serves
    (ties go to the lower degree)."""
    if not K_MIN <= k <= K_MAX:
        raise ModelError(f"k must be in [{K_MIN}, {K_MAX}], got {k}")
    keys = table_keys(t)
    n = keys.size
    if n < MIN_SEGMENT * k:
        raise ModelError(f"segment too small: n={n} with k={k} leaves fewer than {MIN_SEGMENT} keys")
    bounds = segment_bounds(n, k)
    mins = np.ascontiguousarray(keys[bounds[:-1]])
    starts = np.append(np.searchsorted(keys, mins, side="left"), n).astype(np.int64)
    starts[0] = 0
    ranks = lower_bound_ranks(keys)
    segs = []
    for s in range(k):
        lo, hi = int(starts[s]), int(starts[s + 1])
        if lo == hi:
            # only reachable when mins[s] == mins[s + 1]; routing skips it
            segs.append(SegmentModel(0, np.array([float(lo)]), 0, int(mins[s]), 0.0, 0.0))
            continue
        sk, sr = keys[lo:hi], ranks[lo:hi]
        if sk[0] == sk[-1]:
            segs.append(_fit_segment(sk, sr, 0, lo, hi))
            continue
        best = None
        for degree in (1, 2, 3):
            cand = _fit_segment(sk, sr, degree, lo, hi)
            if best is None or cand.rf > best.rf:
                best = cand
        segs.append(best)
    return KoModel(
        k=k,
        boundaries=bounds,
        per_segment=tuple(segs),
        n=n,
        key_dtype=keys.dtype,
        mins=mins,
        starts=starts,
        search_kind=search_kind,
    )


def predict_ko(m: KoModel, x) -> SearchRange:
    return m.predict(x)
