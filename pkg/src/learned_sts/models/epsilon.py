"""Error-bounded models: optimal PLA, the recursive PGM index with bi-criteria
space tuning, and the radix spline."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np
from numba import njit

from .._jit import key_offset, round_clamped
from ..search import SearchRange
from .atomic import error_interval
from .base import ModelError, PredictorMixin, table_keys

log = logging.getLogger(__name__)

# Float slack accepted when certifying a segment; any value below 0.5 keeps
# the rounded prediction within eps of the true rank.
FIT_TOL = 1e-6
SEGMENT_BYTES = 24  # first_key, slope, intercept
SPLINE_POINT_BYTES = 16  # key, rank
CACHE_LINE_BYTES = 64
DEFAULT_A_VALUES = (0.5, 1.0, 1.5, 2.0)


# ---------------------------------------------------------------------------
# Optimal piecewise linear approximation


@njit(inline="always")
def _lt(dx1, dy1, dx2, dy2):
    # slope (dx1, dy1) < slope (dx2, dy2) for dx of equal sign
    return dy1 * dx2 < dx1 * dy2


@njit(inline="always")
def _gt(dx1, dy1, dx2, dy2):
    return dy1 * dx2 > dx1 * dy2


@njit(inline="always")
def _cross(ox, oy, ax, ay, bx, by):
    return (ax - ox) * (by - oy) - (ay - oy) * (bx - ox)


@njit(cache=True)
def _pla(keys, ranks, eps):
    """Streaming optimal PLA over strictly increasing ``keys``.

    Each segment grows while some line stays within ``eps`` of every point,
    tracked by the upper/lower convex hulls of the ``y +- eps`` bounds and the
    two extreme feasible lines (``rx``/``ry``). Returns the first point index,
    slope and intercept (value at the first key) of every segment.
    """
    n = keys.size
    starts = np.empty(n, dtype=np.int64)
    slopes = np.empty(n)
    icpts = np.empty(n)
    ux = np.empty(n)
    uy = np.empty(n)
    lx = np.empty(n)
    ly = np.empty(n)
    rx = np.empty(4)
    ry = np.empty(4)
    nseg = 0
    i = 0
    while i < n:
        start = i
        k0 = keys[i]
        y = ranks[i]
        rx[0] = 0.0
        ry[0] = y + eps
        rx[1] = 0.0
        ry[1] = y - eps
        ux[0] = 0.0
        uy[0] = y + eps
        lx[0] = 0.0
        ly[0] = y - eps
        usz = 1
        lsz = 1
        ustart = 0
        lstart = 0
        npts = 1
        i += 1
        while i < n:
            px = np.float64(keys[i] - k0)
            y = ranks[i]
            p1y = y + eps
            p2y = y - eps
            if npts == 1:
                rx[2] = px
                ry[2] = p2y
                rx[3] = px
                ry[3] = p1y
                ux[usz] = px
                uy[usz] = p1y
                usz += 1
                lx[lsz] = px
                ly[lsz] = p2y
                lsz += 1
                npts += 1
                i += 1
                continue
            s1dx = rx[2] - rx[0]
            s1dy = ry[2] - ry[0]
            s2dx = rx[3] - rx[1]
            s2dy = ry[3] - ry[1]
            if _lt(px - rx[2], p1y - ry[2], s1dx, s1dy) or _gt(px - rx[3], p2y - ry[3], s2dx, s2dy):
                break
            if _lt(px - rx[1], p1y - ry[1], s2dx, s2dy):
                mdx = lx[lstart] - px
                mdy = ly[lstart] - p1y
                mi = lstart
                for j in range(lstart + 1, lsz):
                    vdx = lx[j] - px
                    vdy = ly[j] - p1y
                    if _gt(vdx, vdy, mdx, mdy):
                        break
                    mdx = vdx
                    mdy = vdy
                    mi = j
                rx[1] = lx[mi]
                ry[1] = ly[mi]
                rx[3] = px
                ry[3] = p1y
                lstart = mi
                end = usz
                while end >= ustart + 2 and _cross(ux[end - 2], uy[end - 2], ux[end - 1], uy[end - 1], px, p1y) <= 0:
                    end -= 1
                usz = end
                ux[usz] = px
                uy[usz] = p1y
                usz += 1
            if _gt(px - rx[0], p2y - ry[0], s1dx, s1dy):
                mdx = ux[ustart] - px
                mdy = uy[ustart] - p2y
                mi = ustart
                for j in range(ustart + 1, usz):
                    vdx = ux[j] - px
                    vdy = uy[j] - p2y
                    if _lt(vdx, vdy, mdx, mdy):
                        break
                    mdx = vdx
                    mdy = vdy
                    mi = j
                rx[0] = ux[mi]
                ry[0] = uy[mi]
                rx[2] = px
                ry[2] = p2y
                ustart = mi
                end = lsz
                while end >= lstart + 2 and _cross(lx[end - 2], ly[end - 2], lx[end - 1], ly[end - 1], px, p2y) >= 0:
                    end -= 1
                lsz = end
                lx[lsz] = px
                ly[lsz] = p2y
                lsz += 1
            npts += 1
            i += 1

        if npts == 1:
            slope = 0.0
            icpt = ranks[start]
        else:
            s1dx = rx[2] - rx[0]
            s1dy = ry[2] - ry[0]
            s2dx = rx[3] - rx[1]
            s2dy = ry[3] - ry[1]
            a = s1dx * s2dy - s1dy * s2dx
            if a == 0.0:
                ix = rx[0]
                iy = ry[0]
            else:
                b = (rx[1] - rx[0]) * (ry[3] - ry[1]) - (ry[1] - ry[0]) * (rx[3] - rx[1])
                ix = rx[0] + b * s1dx / a
                iy = ry[0] + b * s1dy / a
            slope = 0.5 * (s1dy / s1dx + s2dy / s2dx)
            # ranks never decrease, so the steepest feasible line is not
            # negative; keep predictions monotone in the key
            if slope < 0.0:
                slope = 0.0
            icpt = iy - ix * slope

        # Certify; on a float-precision miss cut the segment at the first
        # offending point and resume from there.
        for j in range(start, i):
            d = abs(slope * np.float64(keys[j] - k0) + icpt - ranks[j])
            if not d <= eps + FIT_TOL:
                if j == start:
                    slope = 0.0
                    icpt = ranks[start]
                    i = start + 1
                else:
                    i = j
                break
        starts[nseg] = start
        slopes[nseg] = slope
        icpts[nseg] = icpt
        nseg += 1
    return starts[:nseg].copy(), slopes[:nseg].copy(), icpts[:nseg].copy()


@dataclass(frozen=True)
class PlaSegment:
    first_key: int
    slope: float
    intercept: float

    def __call__(self, x) -> float:
        return self.slope * (float(x) - float(self.first_key)) + self.intercept


def unique_points(keys) -> tuple[np.ndarray, np.ndarray]:
    """Distinct keys and the lower-bound rank of each."""
    keys = np.asarray(keys)
    if keys.size == 0:
        return keys, np.empty(0)
    first = np.empty(keys.size, dtype=bool)
    first[0] = True
    np.not_equal(keys[1:], keys[:-1], out=first[1:])
    idx = np.flatnonzero(first)
    return np.ascontiguousarray(keys[idx]), idx.astype(np.float64)


def _points(t_or_pairs):
    if isinstance(t_or_pairs, tuple) and len(t_or_pairs) == 2:
        keys = np.ascontiguousarray(t_or_pairs[0])
        ranks = np.ascontiguousarray(t_or_pairs[1], dtype=np.float64)
        if keys.size != ranks.size:
            raise ModelError("keys and ranks differ in length")
        if keys.size > 1 and np.any(keys[1:] <= keys[:-1]):
            raise ModelError("PLA points need strictly increasing keys")
        return keys, ranks
    return unique_points(table_keys(t_or_pairs))


def pla_arrays(t_or_pairs, eps) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """``(first_keys, slopes, intercepts, start_indices)`` of the optimal segmentation."""
    if eps < 0:
        raise ModelError("eps must be >= 0")
    keys, ranks = _points(t_or_pairs)
    if keys.size == 0:
        raise ModelError("no points to segment")
    starts, slopes, icpts = _pla(keys, ranks, float(eps))
    return np.ascontiguousarray(keys[starts]), slopes, icpts, starts


def build_pla(t_or_pairs, eps) -> list[PlaSegment]:
    """Minimum number of segments, each within ``eps`` of its points.

    Accepts a table (duplicates collapse to their first rank) or a
    ``(keys, ranks)`` pair with strictly increasing keys.
    """
    fk, slopes, icpts, _ = pla_arrays(t_or_pairs, eps)
    return [PlaSegment(int(k), float(s), float(c)) for k, s, c in zip(fk, slopes, icpts)]


# ---------------------------------------------------------------------------
# PGM index


@njit(inline="always")
def _seg_value(fk, slope, icpt, j, next_j, x):
    v = slope[j] * key_offset(x, fk[j]) + icpt[j]
    # never predict past where the next segment starts
    if next_j >= 0 and v > icpt[next_j]:
        v = icpt[next_j]
    return v


@njit(cache=True)
def _pgm_kernel(params, x):
    fk, slope, icpt, offs, eps, eps_rec, n = params
    nlev = offs.size - 1
    j = 0
    for lev in range(nlev - 1, 0, -1):
        base = offs[lev]
        size = offs[lev + 1] - base
        nxt = base + j + 1 if j + 1 < size else -1
        v = _seg_value(fk, slope, icpt, base + j, nxt, x)
        below = offs[lev - 1]
        bsize = base - below
        pos = round_clamped(v, np.int64(0), bsize - 1)
        lo = pos - eps_rec - 1
        if lo < 0:
            lo = 0
        hi = pos + eps_rec + 2
        if hi > bsize:
            hi = bsize
        # last segment in [lo, hi) whose first key is <= x
        a = lo
        b = hi
        while a < b:
            mid = (a + b) >> 1
            if fk[below + mid] <= x:
                a = mid + 1
            else:
                b = mid
        j = a - 1
        if j < lo:
            j = lo
    size0 = offs[1]
    nxt = j + 1 if j + 1 < size0 else -1
    v = _seg_value(fk, slope, icpt, j, nxt, x)
    return error_interval(v, eps, np.int64(0), n)


@dataclass(frozen=True, eq=False)
class PgmIndex(PredictorMixin):
    """Recursive PLA: ``levels[0]`` covers the table, each level above covers
    the first keys of the one below, and the last level has one segment."""

    levels: tuple
    eps: int
    eps_recursive: int
    n: int
    key_dtype: np.dtype

    name = "PGM"

    @property
    def segment_counts(self) -> list[int]:
        return [lv[0].size for lv in self.levels]

    def level_segments(self, i: int) -> list[PlaSegment]:
        fk, s, c = self.levels[i]
        return [PlaSegment(int(a), float(b), float(d)) for a, b, d in zip(fk, s, c)]

    @property
    def kernel(self):
        return _pgm_kernel

    @cached_property
    def params(self):
        fk = np.concatenate([lv[0] for lv in self.levels]).astype(self.key_dtype)
        slope = np.concatenate([lv[1] for lv in self.levels])
        icpt = np.concatenate([lv[2] for lv in self.levels])
        offs = np.concatenate([[0], np.cumsum(self.segment_counts)]).astype(np.int64)
        return (fk, slope, icpt, offs, np.int64(self.eps), np.int64(self.eps_recursive), np.int64(self.n))

    def size_bytes(self) -> int:
        return pgm_size_bytes(self.segment_counts)


def pgm_size_bytes(segment_counts) -> int:
    # segments plus one offset per level boundary
    return SEGMENT_BYTES * int(sum(segment_counts)) + 8 * (len(segment_counts) + 1)


def build_pgm(t, eps: int, eps_recursive: Optional[int] = None) -> PgmIndex:
    """Build levels bottom-up until a single segment covers the level below."""
    eps = int(eps)
    eps_rec = eps if eps_recursive is None else int(eps_recursive)
    if eps < 0 or eps_rec < 0:
        raise ModelError("eps must be >= 0")
    keys = table_keys(t)
    fk, s, c, _ = pla_arrays(keys, eps)
    levels = [(fk, s, c)]
    while fk.size > 1:
        prev = fk.size
        fk, s, c, _ = pla_arrays((fk, np.arange(fk.size, dtype=np.float64)), eps_rec)
        if fk.size >= prev:
            raise ModelError("PGM level did not shrink")
        levels.append((fk, s, c))
    return PgmIndex(tuple(levels), eps, eps_rec, keys.size, keys.dtype)


def query_pgm(ix: PgmIndex, x) -> SearchRange:
    return ix.predict(x)


@dataclass(frozen=True)
class BiCriteriaConfig:
    space_budget_bytes: float
    a: float = 2.0
    cls: int = CACHE_LINE_BYTES
    elem_size: int = 8
    eps_max: Optional[int] = None

    def __post_init__(self):
        if not self.space_budget_bytes > 0:
            raise ModelError("space budget must be positive")
        if self.eps_min < 1:
            raise ModelError(f"eps_m = a*cls/elem_size = {self.a * self.cls / self.elem_size} < 1")

    @property
    def eps_min(self) -> int:
        return int(math.ceil(self.a * self.cls / self.elem_size))

    @classmethod
    def from_pct(cls, t, pct: float, a: float = 2.0, **kw) -> "BiCriteriaConfig":
        keys = table_keys(t)
        return cls(pct / 100.0 * keys.size * keys.dtype.itemsize, a, elem_size=keys.dtype.itemsize, **kw)


class BudgetError(ModelError):
    def __init__(self, message, min_size_bytes):
        super().__init__(message)
        self.min_size_bytes = min_size_bytes


def bicriteria_pgm(t, cfg: BiCriteriaConfig) -> PgmIndex:
    """Smallest eps in ``[eps_m, eps_M]`` whose index fits ``cfg.space_budget_bytes``.

    Binary search assumes size is non-increasing in eps; the answer is then
    walked down while the next smaller eps still fits, which covers the odd
    non-monotone step of the recursive levels.
    """
    keys = table_keys(t)
    lo = cfg.eps_min
    hi = keys.size if cfg.eps_max is None else int(cfg.eps_max)
    hi = max(hi, lo)
    cache = {}

    def build(e):
        if e not in cache:
            cache[e] = build_pgm(keys, e)
        return cache[e]

    def fits(e):
        return build(e).size_bytes() <= cfg.space_budget_bytes

    if not fits(hi):
        raise BudgetError(
            f"budget {cfg.space_budget_bytes:.0f} bytes is below the smallest index "
            f"({build(hi).size_bytes()} bytes at eps={hi})",
            build(hi).size_bytes(),
        )
    while lo < hi:
        mid = (lo + hi) // 2
        if fits(mid):
            hi = mid
        else:
            lo = mid + 1
    best = lo
    while best - 1 >= cfg.eps_min and fits(best - 1):
        log.info("bi-criteria: size not monotone at eps=%d, moving down", best)
        best -= 1
    return build(best)


# ---------------------------------------------------------------------------
# Radix spline


@njit(cache=True)
def _greedy_spline(keys, ranks, eps):
    """Indices of spline points such that linear interpolation between
    consecutive points stays within ``eps`` of every point in between."""
    n = keys.size
    out = np.empty(n, dtype=np.int64)
    out[0] = 0
    m = 1
    if n == 1:
        return out[:1].copy()
    base = 0
    upper = np.inf
    lower = -np.inf
    for i in range(1, n):
        dx = np.float64(keys[i] - keys[base])
        dy = ranks[i] - ranks[base]
        if i == base + 1:
            upper = (dy + eps) / dx
            lower = (dy - eps) / dx
            continue
        s = dy / dx
        if s > upper or s < lower:
            base = i - 1
            out[m] = base
            m += 1
            dx = np.float64(keys[i] - keys[base])
            dy = ranks[i] - ranks[base]
            upper = (dy + eps) / dx
            lower = (dy - eps) / dx
        else:
            u = (dy + eps) / dx
            lo = (dy - eps) / dx
            if u < upper:
                upper = u
            if lo > lower:
                lower = lo
    if out[m - 1] != n - 1:
        out[m] = n - 1
        m += 1
    return out[:m].copy()


@njit(cache=True)
def _spline_max_error(keys, ranks, sp):
    worst = 0.0
    for s in range(sp.size - 1):
        a = sp[s]
        b = sp[s + 1]
        slope = (ranks[b] - ranks[a]) / np.float64(keys[b] - keys[a])
        for i in range(a, b + 1):
            d = abs(ranks[a] + np.float64(keys[i] - keys[a]) * slope - ranks[i])
            if d > worst:
                worst = d
    return worst


@njit(cache=True)
def _radix_table(spline_x, key_min, shift, nbuckets):
    table = np.empty(nbuckets + 1, dtype=np.uint32)
    table[0] = 0
    prev = 0
    for i in range(spline_x.size):
        p = np.int64((spline_x[i] - key_min) >> shift)
        if p == prev:
            continue
        for q in range(prev + 1, p + 1):
            table[q] = i
        prev = p
    for q in range(prev + 1, nbuckets + 1):
        table[q] = spline_x.size
    return table


@njit(cache=True)
def _rs_kernel(params, x):
    sx, sy, radix, key_min, key_max, shift, eps, n = params
    if x <= key_min:
        return np.int64(0), np.int64(1)
    if x > key_max:
        return n, n
    p = np.int64((x - key_min) >> shift)
    a = np.int64(radix[p])
    b = np.int64(radix[p + 1])
    if b > sx.size - 1:
        b = sx.size - 1
    # first spline point with key >= x
    while a < b:
        mid = (a + b) >> 1
        if sx[mid] < x:
            a = mid + 1
        else:
            b = mid
    up = a
    down = up - 1
    slope = (sy[up] - sy[down]) / np.float64(sx[up] - sx[down])
    v = sy[down] + np.float64(x - sx[down]) * slope
    return error_interval(v, eps, np.int64(0), n)


@dataclass(frozen=True, eq=False)
class RadixSplineIndex(PredictorMixin):
    radix_bits: int
    radix_table: np.ndarray
    spline_keys: np.ndarray
    spline_ranks: np.ndarray
    eps: int
    n: int
    key_min: int
    key_max: int
    shift: int
    key_dtype: np.dtype

    name = "RS"

    @property
    def spline(self) -> list[tuple[int, float]]:
        return list(zip(self.spline_keys.tolist(), self.spline_ranks.tolist()))

    @property
    def kernel(self):
        return _rs_kernel

    @cached_property
    def params(self):
        dt = self.key_dtype.type
        return (
            self.spline_keys,
            self.spline_ranks,
            self.radix_table,
            dt(self.key_min),
            dt(self.key_max),
            dt(self.shift),
            np.int64(self.eps),
            np.int64(self.n),
        )

    def size_bytes(self) -> int:
        # radix table, spline points, and key_min, key_max, shift, eps, n
        return 4 * self.radix_table.size + SPLINE_POINT_BYTES * self.spline_keys.size + 5 * 8


def default_radix_bits(n: int) -> int:
    """Largest r with a radix table of at most about 1% of the key bytes."""
    return int(min(28, max(1, math.floor(math.log2(max(2.0, 0.02 * n))))))


def build_radix_spline(t, eps: int, radix_bits: Optional[int] = None) -> RadixSplineIndex:
    eps = int(eps)
    if eps < 0:
        raise ModelError("eps must be >= 0")
    keys = table_keys(t)
    n = keys.size
    r = default_radix_bits(n) if radix_bits is None else int(radix_bits)
    if not 1 <= r <= 28:
        raise ModelError("radix_bits must be in [1, 28]")
    ukeys, uranks = unique_points(keys)
    sp = _greedy_spline(ukeys, uranks, float(eps))
    if _spline_max_error(ukeys, uranks, sp) > eps + FIT_TOL:
        raise ModelError("spline corridor lost precision")
    sx = np.ascontiguousarray(ukeys[sp])
    sy = np.ascontiguousarray(uranks[sp])
    key_min, key_max = keys[0], keys[-1]
    span_bits = int(key_max - key_min).bit_length()
    shift = max(0, span_bits - r)
    table = _radix_table(sx, key_min, keys.dtype.type(shift), 1 << r)
    return RadixSplineIndex(
        radix_bits=r,
        radix_table=table,
        spline_keys=sx,
        spline_ranks=sy,
        eps=eps,
        n=n,
        key_min=int(key_min),
        key_max=int(key_max),
        shift=shift,
        key_dtype=keys.dtype,
    )


def query_radix_spline(ix: RadixSplineIndex, x) -> SearchRange:
    return ix.predict(x)
