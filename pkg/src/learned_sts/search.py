"""Constant-space sorted table search kernels.

Every kernel answers the same question: the smallest index ``i`` in
``[lo, hi)`` with ``t[i] >= x``, or ``hi`` when there is none. All share the
signature ``kernel(t, x, lo, hi, arg)`` so the composed drivers in
:mod:`learned_sts.models.base` can take any of them; ``arg`` carries the one
tuning knob a kernel has (``k`` for k-ary search, ``guard`` for TIP) and is
ignored otherwise.

Branch-freedom is a codegen property, not something the tests can observe.
To check it, dump the assembly of a kernel, e.g.
``bfs_prefetch_kernel.inspect_asm(bfs_prefetch_kernel.signatures[0])``, and
look for ``cmov`` in the loop body and ``prefetchnta`` for the hints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from ._jit import prefetch
from .tables import EytzingerTable, SortedTable, build_eytzinger

DEFAULT_TIP_GUARD = 8
CACHE_LINE_BYTES = 64


@dataclass(frozen=True)
class SearchRange:
    lo: int
    hi: int

    def __post_init__(self):
        if not 0 <= self.lo <= self.hi:
            raise ValueError(f"invalid range [{self.lo}, {self.hi})")

    @property
    def width(self) -> int:
        return self.hi - self.lo

    def __contains__(self, i) -> bool:
        return self.lo <= i < self.hi


@dataclass(frozen=True)
class TipConfig:
    guard: int = DEFAULT_TIP_GUARD

    def __post_init__(self):
        if self.guard < 1:
            raise ValueError("TIP guard must be >= 1")


# ---------------------------------------------------------------------------
# kernels


@njit(cache=True)
def sequential_kernel(t, x, lo, hi, arg):
    i = lo
    while i < hi and t[i] < x:
        i += 1
    return i


@njit(cache=True)
def bbs_kernel(t, x, lo, hi, arg):
    # Textbook binary search: exits as soon as it hits the key.
    while lo < hi:
        mid = (lo + hi) >> 1
        v = t[mid]
        if v < x:
            lo = mid + 1
        elif v > x:
            hi = mid
        else:
            if mid == lo or t[mid - 1] < x:
                return mid
            hi = mid
    return lo


@njit(cache=True)
def bfs_kernel(t, x, lo, hi, arg):
    n = hi - lo
    if n <= 0:
        return lo
    base = lo
    while n > 1:
        half = n >> 1
        base += half * (t[base + half] < x)
        n -= half
    return base + (t[base] < x)


@njit(cache=True)
def bfs_prefetch_kernel(t, x, lo, hi, arg):
    n = hi - lo
    if n <= 0:
        return lo
    base = lo
    while n > 1:
        half = n >> 1
        prefetch(t, base + (half >> 1))
        prefetch(t, base + half + (half >> 1))
        base += half * (t[base + half] < x)
        n -= half
    return base + (t[base] < x)


@njit(cache=True)
def kary_bbs_kernel(t, x, lo, hi, k):
    if hi <= lo:
        return lo
    left = lo
    right = hi - 1
    while left < right:
        seg_left = left
        seg_right = left + (right - left) // k
        for i in range(2, k + 1):
            if x <= t[seg_right]:
                break
            seg_left = seg_right + 1
            seg_right = left + (i * (right - left)) // k
        left = seg_left
        right = seg_right
    return left + (t[left] < x)


@njit(cache=True)
def kary_bfs_kernel(t, x, lo, hi, k):
    # Same boundaries as the branchy variant, but every probe of a round is
    # evaluated and counted instead of leaving the loop at the first hit.
    if hi <= lo:
        return lo
    left = lo
    right = hi - 1
    while left < right:
        span = right - left
        below = 0
        for i in range(1, k):
            below += t[left + (i * span) // k] < x
        new_left = left + (below * span) // k + (below > 0)
        right = left + ((below + 1) * span) // k
        left = new_left
    return left + (t[left] < x)


@njit(cache=True)
def eytzinger_kernel(e, x, lo, hi, arg):
    # e = (bfs_keys, rank, multiplier, offset); the range is the whole table.
    keys, rank, multiplier, offset = e
    n = keys.size
    i = 0
    while i < n:
        prefetch(keys, multiplier * i + offset)
        i = 2 * i + 1 + (keys[i] < x)
    j = i + 1
    # j >> ffs(~j): drop the trailing one bits and the zero above them.
    while j & 1:
        j >>= 1
    j >>= 1
    return rank[j - 1] if j != 0 else rank[n]


@njit(cache=True)
def interpolation_kernel(t, x, lo, hi, arg):
    if hi <= lo:
        return lo
    left = lo
    right = hi - 1
    # Invariant: t[i] < x for i < left, t[i] >= x for i > right.
    while left <= right and x >= t[left] and x <= t[right]:
        a = t[left]
        b = t[right]
        if a == b:
            return left
        frac = np.float64(x - a) / np.float64(b - a)
        pos = left + np.int64(frac * np.float64(right - left))
        if pos < left:
            pos = left
        elif pos > right:
            pos = right
        v = t[pos]
        if v == x:
            # First occurrence lies in [left, pos].
            return bbs_kernel(t, x, left, pos, 0) if pos > left and t[pos - 1] >= x else pos
        if v < x:
            left = pos + 1
        else:
            right = pos - 1
    if left <= right and x > t[right]:
        return right + 1
    return left


@njit(cache=True)
def _tip_finish(t, x, left, right):
    return bbs_kernel(t, x, left, right + 1, 0)


@njit(cache=True)
def sequential_from(t, x, lo, hi, start):
    """Linear lower-bound scan in ``[lo, hi)`` that starts at ``start``."""
    if start < lo:
        start = lo
    if start > hi - 1:
        start = hi - 1
    if start < lo:
        return lo
    i = start
    if t[i] < x:
        i += 1
        while i < hi and t[i] < x:
            i += 1
        return i
    while i > lo and t[i - 1] >= x:
        i -= 1
    return i


@njit(cache=True)
def tip_kernel(t, x, lo, hi, guard):
    if hi - lo < 3:
        return sequential_kernel(t, x, lo, hi, 0)
    left = lo
    right = hi - 1
    # Invariant: the answer lies in [left, right + 1].
    mid = (left + right) >> 1
    y0 = np.float64(t[left]) - np.float64(x)
    y1 = np.float64(t[mid]) - np.float64(x)
    y2 = np.float64(t[right]) - np.float64(x)
    if y1 == y2:
        return _tip_finish(t, x, left, right)
    ratio = (y0 - y1) / (y1 - y2)
    num = y1 * (mid - left) * (1.0 + ratio)
    den = y0 - y2 * ratio
    if den == 0.0 or not np.isfinite(num / den):
        return _tip_finish(t, x, left, right)
    step = num / den
    if step > 2.0**62 or step < -(2.0**62):
        return _tip_finish(t, x, left, right)
    expected = mid + np.int64(step)
    while left < right and left <= expected and expected <= right:
        if abs(expected - mid) < guard:
            return sequential_from(t, x, left, right + 1, expected)
        if t[mid] < x:
            left = mid
        else:
            right = mid
        if expected + guard >= right or expected - guard <= left:
            return sequential_from(t, x, left, right + 1, expected)
        mid = expected
        y0 = np.float64(t[left]) - np.float64(x)
        y1 = np.float64(t[mid]) - np.float64(x)
        y2 = np.float64(t[right]) - np.float64(x)
        num = y1 * (mid - right) * (mid - left) * (y2 - y0)
        den = y2 * (mid - right) * (y0 - y1) + y0 * (mid - left) * (y1 - y2)
        if den == 0.0:
            break
        step = num / den
        if not np.isfinite(step) or step > 2.0**62 or step < -(2.0**62):
            break
        expected = mid + np.int64(step)
    return _tip_finish(t, x, left, right)


# ---------------------------------------------------------------------------
# batch drivers
#
# Drivers that take a kernel as an argument are not disk-cached: numba keys
# those entries on the dispatcher's address, so they never hit in a new
# process and the index only grows.


@njit
def search_batch(kernel, t, queries, lo, hi, arg):
    out = np.empty(queries.size, dtype=np.int64)
    for i in range(queries.size):
        out[i] = kernel(t, queries[i], lo, hi, arg)
    return out


@njit
def search_checksum(kernel, t, queries, lo, hi, arg):
    acc = np.uint64(0)
    for i in range(queries.size):
        acc += np.uint64(kernel(t, queries[i], lo, hi, arg))
    return acc


# ---------------------------------------------------------------------------
# Python-facing API


def _keys(t):
    return t.keys if isinstance(t, SortedTable) else np.asarray(t)


def _bounds(keys, r):
    if r is None:
        return 0, keys.size
    lo, hi = (r.lo, r.hi) if isinstance(r, SearchRange) else r
    if not 0 <= lo <= hi <= keys.size:
        raise ValueError(f"range [{lo}, {hi}) outside table of {keys.size}")
    return int(lo), int(hi)


def _run(kernel, t, x, r, arg=0):
    keys = _keys(t)
    lo, hi = _bounds(keys, r)
    return int(kernel(keys, keys.dtype.type(x), lo, hi, arg))


def sequential(t, x, r=None) -> int:
    return _run(sequential_kernel, t, x, r)


def bbs(t, x, r=None) -> int:
    return _run(bbs_kernel, t, x, r)


def bfs(t, x, r=None) -> int:
    """Branch-free binary search without prefetch hints."""
    return _run(bfs_kernel, t, x, r)


def bfs_prefetch(t, x, r=None) -> int:
    return _run(bfs_prefetch_kernel, t, x, r)


def kary_search(t, x, r=None, k=3, branch_free=True) -> int:
    if k < 2:
        raise ValueError("k-ary search needs k >= 2")
    kernel = kary_bfs_kernel if branch_free else kary_bbs_kernel
    return _run(kernel, t, x, r, int(k))


def interpolation_search(t, x, r=None) -> int:
    return _run(interpolation_kernel, t, x, r)


def tip_search(t, x, r=None, cfg: TipConfig = TipConfig()) -> int:
    return _run(tip_kernel, t, x, r, int(cfg.guard))


def eytzinger_params(e: EytzingerTable, multiplier=None, offset=None):
    """Kernel parameters; the prefetch multiplier defaults to keys per cache line."""
    if multiplier is None:
        multiplier = CACHE_LINE_BYTES // e.keys.dtype.itemsize
    if offset is None:
        offset = multiplier - 1
    return (e.keys, e.rank, np.int64(multiplier), np.int64(offset))


def eytzinger_search(e: EytzingerTable, x, multiplier=None, offset=None) -> int:
    params = eytzinger_params(e, multiplier, offset)
    return int(eytzinger_kernel(params, e.keys.dtype.type(x), 0, e.n, 0))


def contains(t, x, r=None) -> bool:
    keys = _keys(t)
    i = bbs(keys, x, r)
    return i < keys.size and keys[i] == keys.dtype.type(x)


def predecessor(t, x, r=None) -> int:
    """Index of the last key ``<= x``, or -1 when every key is larger."""
    keys = _keys(t)
    i = bbs(keys, x, r)
    lo, hi = _bounds(keys, r)
    # Step over the run of keys equal to x.
    if i < hi and keys[i] == keys.dtype.type(x):
        return int(np.searchsorted(keys[:hi], keys[i], side="right")) - 1
    return i - 1 if i > lo else -1


# Name -> (kernel, default arg). "BFE" needs an EytzingerTable, see eytzinger_params.
KERNELS = {
    "SEQ": (sequential_kernel, 0),
    "BBS": (bbs_kernel, 0),
    "BFS": (bfs_prefetch_kernel, 0),
    "BFS-NOPF": (bfs_kernel, 0),
    "K-BBS": (kary_bbs_kernel, 6),
    "K-BFS": (kary_bfs_kernel, 6),
    "IBS": (interpolation_kernel, 0),
    "TIP": (tip_kernel, DEFAULT_TIP_GUARD),
    "BFE": (eytzinger_kernel, 0),
}


def lower_bound_batch(method, t, queries, k=None, guard=DEFAULT_TIP_GUARD) -> np.ndarray:
    """Answer a whole batch with the named kernel over the full table."""
    if method == "BFE":
        e = t if isinstance(t, EytzingerTable) else build_eytzinger(t)
        q = np.asarray(queries).astype(e.keys.dtype, copy=False)
        return search_batch(eytzinger_kernel, eytzinger_params(e), q, 0, e.n, 0)
    kernel, arg = KERNELS[method]
    if method.startswith("K-"):
        arg = arg if k is None else int(k)
        if arg < 2:
            raise ValueError("k-ary search needs k >= 2")
    elif method == "TIP":
        arg = int(guard)
    keys = _keys(t)
    q = np.asarray(queries).astype(keys.dtype, copy=False)
    return search_batch(kernel, keys, q, 0, keys.size, arg)


