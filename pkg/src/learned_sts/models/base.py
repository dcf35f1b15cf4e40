"""Uniform predictor interface and the jitted drivers that compose models with searches."""

from __future__ import annotations

from typing import Protocol

import numpy as np
from numba import njit

from ..search import KERNELS, SearchRange, bbs_kernel
from ..tables import SortedTable


class ModelError(ValueError):
    pass


class Predictor(Protocol):
    """Anything that maps a query key to a search interval.

    ``kernel`` is an njit function ``kernel(params, x) -> (lo, hi)`` and
    ``params`` the tuple of arrays/scalars it reads; together they let the
    composed drivers run prediction and search in one compiled loop.
    """

    n: int

    @property
    def kernel(self): ...

    @property
    def params(self) -> tuple: ...

    def size_bytes(self) -> int: ...


class PredictorMixin:
    def predict(self, x) -> SearchRange:
        lo, hi = self.kernel(self.params, self._key(x))
        return SearchRange(int(lo), int(hi))

    def predict_batch(self, xs):
        xs = np.asarray(xs).astype(self.key_dtype, copy=False)
        return predict_many(self.kernel, self.params, xs)

    def _key(self, x):
        return self.key_dtype.type(x)


@njit(cache=True)
def _full_range_kernel(params, x):
    return np.int64(0), params[0]


class FullRange(PredictorMixin):
    """The "no model" baseline: every query gets the whole table."""

    name = "none"

    def __init__(self, n, key_dtype=np.dtype(np.uint64)):
        self.n = int(n)
        self.key_dtype = np.dtype(key_dtype)

    @property
    def kernel(self):
        return _full_range_kernel

    @property
    def params(self):
        return (np.int64(self.n),)

    def size_bytes(self) -> int:
        return 0


# Not disk-cached for the reason given above search.search_batch.
@njit
def predict_many(kernel, params, xs):
    lo = np.empty(xs.size, dtype=np.int64)
    hi = np.empty(xs.size, dtype=np.int64)
    for i in range(xs.size):
        a, b = kernel(params, xs[i])
        lo[i] = a
        hi[i] = b
    return lo, hi


@njit
def composed_batch(predict, params, search, t, arg, queries):
    out = np.empty(queries.size, dtype=np.int64)
    for i in range(queries.size):
        x = queries[i]
        lo, hi = predict(params, x)
        out[i] = search(t, x, lo, hi, arg)
    return out


@njit
def composed_checksum(predict, params, search, t, arg, queries):
    acc = np.uint64(0)
    for i in range(queries.size):
        x = queries[i]
        lo, hi = predict(params, x)
        acc += np.uint64(search(t, x, lo, hi, arg))
    return acc


@njit
def _checked_lookup(predict, params, search, t, arg, x):
    lo, hi = predict(params, x)
    i = search(t, x, lo, hi, arg)
    n = t.size
    # A model only certifies keys it was trained on; repair misses outside
    # the interval so arbitrary probes still get the exact lower bound.
    if i == lo and lo > 0 and t[lo - 1] >= x:
        return bbs_kernel(t, x, 0, lo, 0)
    if i == hi and hi < n and t[hi] < x:
        return bbs_kernel(t, x, hi, n, 0)
    return i


def lookup(model, table, x, method="BBS", arg=None) -> int:
    """Exact lower bound of ``x`` using ``model`` to narrow the search."""
    keys = table.keys if isinstance(table, SortedTable) else np.asarray(table)
    kernel, default = KERNELS[method]
    return int(
        _checked_lookup(
            model.kernel,
            model.params,
            kernel,
            keys,
            default if arg is None else arg,
            keys.dtype.type(x),
        )
    )


def lower_bound_ranks(keys) -> np.ndarray:
    """Position of the first occurrence of every key (its lower bound)."""
    return np.searchsorted(keys, keys, side="left").astype(np.int64)


def table_keys(t) -> np.ndarray:
    return t.keys if isinstance(t, SortedTable) else np.asarray(t)
