import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from learned_sts.models import ModelError, lookup, predict_ko, train_ko
from learned_sts.search import bbs
from learned_sts.tables import SortedTable, synthetic_keys


def piecewise_linear(k, per, seed=0):
    rng = np.random.default_rng(seed)
    keys, start = [], 1000
    for _ in range(k):
        step = int(rng.integers(1, 1000))
        keys.append(start + step * np.arange(per))
        start = keys[-1][-1] + int(rng.integers(1, 10**6))
    return np.concatenate(keys).astype(np.uint64)


def interval(f, eps, lo, hi):
    pos = min(max(int(np.rint(f)), lo - eps - 1), hi + eps)
    return max(lo, pos - eps), min(hi, pos + eps + 1)


def oracle_rf(keys, lo, hi, degree):
    """Independent fit and RF over the keys a segment serves."""
    sk = keys[lo:hi]
    ranks = np.searchsorted(keys, sk, side="left").astype(np.float64)
    u = (sk - sk[0]).astype(np.float64) / (float(sk[-1]) - float(sk[0]))
    c = np.polynomial.polynomial.polyfit(u, ranks, degree)
    f = np.polynomial.polynomial.polyval(u, c)
    eps = max(0, int(np.ceil(np.max(np.abs(f - ranks)) - 1e-6)))
    widths = [b - a for a, b in (interval(v, eps, lo, hi) for v in f)]
    return 1.0 - np.mean(widths) / (hi - lo), eps


class TestExamples:
    def test_piecewise_linear_is_exact(self):
        keys = piecewise_linear(15, 200)
        m = train_ko(SortedTable(keys), 15)
        assert m.degrees == [1] * 15
        assert all(s.eps == 0 for s in m.per_segment)
        lo, hi = m.predict_batch(keys)
        assert np.array_equal(lo, np.arange(keys.size)) and np.all(hi == lo + 1)

    def test_boundaries(self):
        t = synthetic_keys("lognormal", 10_007, seed=1)
        m = train_ko(t, 15)
        assert m.k == 15 and len(m.per_segment) == 15
        assert m.boundaries.tolist() == [i * 10_007 // 15 for i in range(16)]

    def test_below_first_key(self):
        t = synthetic_keys("uniform", 1000, seed=2)
        r = predict_ko(train_ko(t, 5), int(t.keys[0]) - 1)
        assert r.lo == 0

    def test_above_last_key(self):
        t = synthetic_keys("uniform", 1000, seed=2)
        r = predict_ko(train_ko(t, 5), 2**64 - 1)
        assert r.hi == 1000


class TestDegreeChoice:
    @pytest.mark.parametrize("kind", ["uniform", "lognormal", "normal", "clustered", "steps"])
    def test_matches_oracle(self, kind):
        t = synthetic_keys(kind, 30_000, seed=3)
        m = train_ko(t, 15)
        for s, seg in enumerate(m.per_segment):
            lo, hi = int(m.starts[s]), int(m.starts[s + 1])
            if t.keys[lo] == t.keys[hi - 1]:
                assert seg.degree == 0
                continue
            scores = {d: oracle_rf(t.keys, lo, hi, d) for d in (1, 2, 3)}
            best = max(scores[d][0] for d in scores)
            close = [d for d in (1, 2, 3) if scores[d][0] >= best - 1e-9]
            assert seg.degree in close
            assert seg.eps == scores[seg.degree][1]


def tables():
    return st.lists(st.integers(0, 500), min_size=12, max_size=400).map(lambda xs: np.array(sorted(xs), dtype=np.uint64))


class TestProperties:
    @given(tables(), st.integers(3, 20))
    def test_containment_with_duplicates(self, keys, k):
        if keys.size < 4 * k:
            k = max(3, keys.size // 4)
        m = train_ko(SortedTable(keys), k)
        lo, hi = m.predict_batch(keys)
        ranks = np.searchsorted(keys, keys, side="left")
        assert np.all((lo <= ranks) & (ranks < hi))

    @given(tables(), st.integers(0, 600))
    def test_routed_segment_holds_lower_bound(self, keys, x):
        m = train_ko(SortedTable(keys), 3)
        s = max(0, int(np.searchsorted(m.mins, np.uint64(x), side="right")) - 1)
        want = int(np.searchsorted(keys, np.uint64(x)))
        assert m.starts[s] <= want <= m.starts[s + 1]
        r = m.predict(x)
        assert m.starts[s] <= r.lo <= r.hi <= m.starts[s + 1]

    @given(tables(), st.integers(0, 600))
    def test_end_to_end(self, keys, x):
        m = train_ko(SortedTable(keys), 3)
        assert lookup(m, keys, x, "BFS") == bbs(keys, x)
        assert lookup(m, keys, x, "BBS") == bbs(keys, x)

    def test_containment_at_scale(self):
        for kind in ("uniform", "lognormal", "clustered", "steps"):
            t = synthetic_keys(kind, 200_000, seed=4)
            m = train_ko(t, 15)
            lo, hi = m.predict_batch(t.keys)
            ranks = np.searchsorted(t.keys, t.keys, side="left")
            assert np.all((lo <= ranks) & (ranks < hi)), kind


class TestSpaceAndErrors:
    def test_size_is_theta_k(self):
        for k in (3, 15, 20):
            a = train_ko(synthetic_keys("uniform", 1000, seed=1), k).size_bytes()
            b = train_ko(synthetic_keys("uniform", 100_000, seed=1), k).size_bytes()
            assert a == b <= 8 * (k * (4 + 1 + 3) + (k + 1))

    @pytest.mark.parametrize("k", [2, 21])
    def test_k_range(self, k):
        with pytest.raises(ModelError):
            train_ko(synthetic_keys("uniform", 1000), k)

    def test_segment_too_small(self):
        with pytest.raises(ModelError, match="segment too small"):
            train_ko(synthetic_keys("uniform", 59), 15)
