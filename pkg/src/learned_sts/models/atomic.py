"""Constant-space regression models: a degree 1-3 polynomial CDF fit with certified rank error."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .._jit import key_offset, round_clamped
from ..search import SearchRange
from .base import ModelError, PredictorMixin, lower_bound_ranks, table_keys

DEGREE_NAMES = {1: "L", 2: "Q", 3: "C"}


@njit(inline="always")
def horner(coeffs, u):
    acc = 0.0
    for j in range(coeffs.size - 1, -1, -1):
        acc = acc * u + coeffs[j]
    return acc


@njit(inline="always")
def error_interval(f, eps, lo, hi):
    """``[round(f) - eps, round(f) + eps + 1)`` clamped into ``[lo, hi]``."""
    pos = round_clamped(f, lo - eps - 1, hi + eps)
    a = pos - eps
    b = pos + eps + 1
    if a < lo:
        a = lo
    if b > hi:
        b = hi
    if a > b:
        a = b
    return a, b


@njit(cache=True)
def poly_max_error(coeffs, keys, key_min, inv_span, ranks):
    worst = 0.0
    for i in range(keys.size):
        f = horner(coeffs, key_offset(keys[i], key_min) * inv_span)
        d = abs(f - ranks[i])
        if d > worst or d != d:
            worst = d
    return worst


@njit(cache=True)
def poly_widths(coeffs, keys, key_min, inv_span, eps, lo, hi):
    out = np.empty(keys.size, dtype=np.int64)
    for i in range(keys.size):
        f = horner(coeffs, key_offset(keys[i], key_min) * inv_span)
        a, b = error_interval(f, eps, lo, hi)
        out[i] = b - a
    return out


def normalized(keys, key_min, inv_span) -> np.ndarray:
    """Keys mapped to ``[0, 1]`` as float64, computed without unsigned wraparound."""
    k = np.asarray(keys)
    if k.dtype.kind == "u":
        d = (k - k.dtype.type(key_min)).astype(np.float64)
    else:
        d = k.astype(np.float64) - float(key_min)
    return d * inv_span


def fit_polynomial(u, y, degree) -> np.ndarray:
    """Least-squares coefficients (ascending powers) of ``y`` on ``u``."""
    if degree == 0:
        return np.array([float(np.mean(y))])
    v = np.vander(u, degree + 1, increasing=True)
    coeffs, *_ = np.linalg.lstsq(v, np.asarray(y, dtype=np.float64), rcond=None)
    return np.ascontiguousarray(coeffs, dtype=np.float64)


# Float noise on an exact fit must not inflate eps by one. Any slack below 0.5
# keeps containment because the prediction is rounded to the nearest rank.
EPS_SLACK = 1e-6


def certified_eps(max_err) -> int:
    if not math.isfinite(max_err):
        raise ModelError("model produced a non-finite prediction")
    return max(0, int(math.ceil(max_err - EPS_SLACK)))


@njit(cache=True)
def _atomic_kernel(params, x):
    coeffs, key_min, inv_span, eps, n = params
    f = horner(coeffs, key_offset(x, key_min) * inv_span)
    return error_interval(f, eps, np.int64(0), n)


@dataclass(frozen=True, eq=False)
class AtomicModel(PredictorMixin):
    """Polynomial ``F`` of the normalized key with max rank error ``eps``.

    ``coeffs`` are ascending powers of ``u = (x - key_min) / (key_max - key_min)``.
    """

    degree: int
    coeffs: np.ndarray
    eps: int
    n: int
    key_min: int
    key_max: int
    key_dtype: np.dtype = np.dtype(np.uint64)
    max_error: float = 0.0

    @property
    def name(self) -> str:
        return DEGREE_NAMES.get(self.degree, f"P{self.degree}")

    @property
    def inv_span(self) -> float:
        span = float(self.key_max) - float(self.key_min)
        return 1.0 / span if span > 0 else 0.0

    @property
    def kernel(self):
        return _atomic_kernel

    @property
    def params(self):
        return (
            self.coeffs,
            self.key_dtype.type(self.key_min),
            float(self.inv_span),
            np.int64(self.eps),
            np.int64(self.n),
        )

    def evaluate(self, x) -> float:
        """Raw prediction ``F(x)`` in rank units."""
        u = normalized(np.asarray([x], dtype=self.key_dtype), self.key_min, self.inv_span)
        return float(np.polynomial.polynomial.polyval(u[0], self.coeffs))

    def size_bytes(self) -> int:
        # coefficients, eps, n, key_min, key_max
        return 8 * (self.degree + 1) + 4 * 8


def _fit_atomic(keys, ranks, degree, n) -> AtomicModel:
    key_min, key_max = keys[0], keys[-1]
    span = float(key_max) - float(key_min)
    inv_span = 1.0 / span if span > 0 else 0.0
    coeffs = fit_polynomial(normalized(keys, key_min, inv_span), ranks, degree)
    err = poly_max_error(coeffs, keys, keys.dtype.type(key_min), inv_span, ranks)
    return AtomicModel(
        degree=degree,
        coeffs=coeffs,
        eps=certified_eps(err),
        n=n,
        key_min=int(key_min),
        key_max=int(key_max),
        key_dtype=keys.dtype,
        max_error=float(err),
    )


def train_atomic(t, degree: int) -> AtomicModel:
    """Fit rank on key with a degree 1, 2 or 3 polynomial and certify its error.

    Ranks are lower-bound positions, so duplicated keys share the rank of their
    first occurrence. ``eps`` is ``ceil(max |F(key) - rank|)`` over the table, ignoring float
    noise below ``EPS_SLACK``.
    """
    if degree not in (1, 2, 3):
        raise ModelError(f"degree must be 1, 2 or 3, got {degree}")
    keys = table_keys(t)
    n = keys.size
    if n < degree + 1:
        raise ModelError(f"degree {degree} needs at least {degree + 1} keys, got {n}")
    if keys[0] == keys[-1]:
        raise ModelError("singular fit: all keys are equal")
    return _fit_atomic(keys, lower_bound_ranks(keys), degree, n)


def constant_model(t) -> AtomicModel:
    """Degree-0 model predicting the mean rank; used where a fit is singular."""
    keys = table_keys(t)
    return _fit_atomic(keys, lower_bound_ranks(keys), 0, keys.size)


def predict_atomic(m: AtomicModel, x) -> SearchRange:
    return m.predict(x)
