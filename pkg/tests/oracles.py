"""Independent reference implementations used by the test suites."""

import numpy as np


def _fits_with(xs, ys, i, j, eps):
    """Does the new point j keep points i..j within one line of Chebyshev error <= eps?

    By Helly's theorem in the (slope, intercept) plane the strips intersect iff
    every triple does; triples not involving j were checked when j-1 was added.
    For x_a < x_b < x_c the best line misses b by half the vertical gap to the
    chord a-c, so the test is |(y_b - y_a)(x_c - x_a) - (y_c - y_a)(x_b - x_a)| <= 2 eps (x_c - x_a),
    all in integers.
    """
    if j - i < 2:
        return True
    a, b = np.triu_indices(j - i, k=1)
    a, b = a + i, b + i
    lhs = np.abs((ys[b] - ys[a]) * (xs[j] - xs[a]) - (ys[j] - ys[a]) * (xs[b] - xs[a]))
    return not np.any(lhs > 2 * eps * (xs[j] - xs[a]))


def brute_min_segments(xs, ys, eps):
    n = xs.size
    reach = np.empty(n, dtype=np.int64)
    for i in range(n):
        j = i + 1
        while j < n and _fits_with(xs, ys, i, j, eps):
            j += 1
        reach[i] = j
    best = [0] + [n + 1] * n
    for j in range(1, n + 1):
        best[j] = min(best[i] + 1 for i in range(j) if reach[i] >= j)
    return best[n]


def seg_errors(xs, ys, fk, slopes, icpts):
    s = np.searchsorted(fk, xs, side="right") - 1
    f = slopes[s] * (xs - fk[s]).astype(np.float64) + icpts[s]
    return np.abs(f - ys)


def scan_lower_bound(keys, queries):
    """Linear-scan oracle: number of keys strictly below each query."""
    keys = np.asarray(keys)
    queries = np.atleast_1d(np.asarray(queries))
    return (keys[None, :] < queries[:, None]).sum(axis=1).astype(np.int64)


def random_table(rng, n, dup=False, hi=2**63):
    if dup:
        pool = rng.integers(0, max(2, n // 3), size=n, dtype=np.uint64)
        keys = pool * np.uint64(7919)
    else:
        keys = rng.integers(0, hi, size=n, dtype=np.uint64)
    return np.sort(keys)


def mixed_queries(rng, keys, m):
    """Present keys, neighbours of present keys, and out-of-range values."""
    present = keys[rng.integers(0, keys.size, size=m)]
    kind = rng.integers(0, 4, size=m)
    q = present.copy()
    up = (kind == 1) & (present < np.iinfo(np.uint64).max)
    q[up] = present[up] + np.uint64(1)
    down = (kind == 2) & (present > 0)
    q[down] = present[down] - np.uint64(1)
    wild = kind == 3
    q[wild] = rng.integers(0, 2**64 - 1, size=int(wild.sum()), dtype=np.uint64, endpoint=True)
    q[: min(2, m)] = [0, np.iinfo(np.uint64).max][: min(2, m)]
    return q
