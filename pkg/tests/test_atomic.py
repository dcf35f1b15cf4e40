import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from learned_sts.models import ModelError, constant_model, lookup, predict_atomic, train_atomic
from learned_sts.search import bbs
from learned_sts.tables import SortedTable, synthetic_keys

TEN_KEYS = np.array([47, 105, 140, 289, 316, 358, 386, 398, 819, 939], dtype=np.uint64)


def lb_ranks(keys):
    return np.searchsorted(keys, keys, side="left")


def oracle_max_error(keys, degree, base=0):
    """Independent fit on raw keys in float64, then a full pass for the max error."""
    x = keys.astype(np.float64)
    y = lb_ranks(keys).astype(np.float64) + base
    c = np.polynomial.polynomial.polyfit(x, y, degree)
    return float(np.max(np.abs(np.polynomial.polynomial.polyval(x, c) - y)))


def model_max_error(m, keys):
    f = np.array([m.evaluate(k) for k in keys])
    return float(np.max(np.abs(f - lb_ranks(keys))))


class TestTenKeyExample:
    @pytest.mark.parametrize("base", [0, 1])
    def test_eps_is_three(self, base):
        # a rank-base shift only moves the intercept, so both conventions agree
        err = oracle_max_error(TEN_KEYS, 1, base)
        assert math.ceil(err) == 3
        assert train_atomic(SortedTable(TEN_KEYS), 1).eps == 3

    def test_model_error_matches_oracle(self):
        m = train_atomic(SortedTable(TEN_KEYS), 1)
        assert m.max_error == pytest.approx(oracle_max_error(TEN_KEYS, 1), abs=1e-9)

    def test_query_316(self):
        r = predict_atomic(train_atomic(SortedTable(TEN_KEYS), 1), 316)
        assert 4 in r


class TestExactFit:
    def test_arithmetic_progression(self):
        keys = np.arange(1000, 1000 + 7 * 500, 7, dtype=np.uint64)
        m = train_atomic(SortedTable(keys), 1)
        assert m.eps == 0
        for i in (0, 13, 250, 499):
            r = m.predict(keys[i])
            assert (r.lo, r.hi) == (i, i + 1)

    def test_huge_keys_do_not_wrap(self):
        keys = np.arange(2**64 - 1000 * 2**40, 2**64 - 1, 2**40, dtype=np.uint64)
        m = train_atomic(SortedTable(keys), 1)
        assert m.eps == 0
        assert m.predict(keys[-1]).lo == keys.size - 1


class TestEpsOracle:
    @pytest.mark.parametrize("kind", ["uniform", "lognormal", "normal", "clustered", "steps"])
    @pytest.mark.parametrize("degree", [1, 2, 3])
    def test_eps_equals_brute_force(self, kind, degree):
        t = synthetic_keys(kind, 20_000, seed=degree)
        m = train_atomic(t, degree)
        assert m.eps == max(0, math.ceil(model_max_error(m, t.keys) - 1e-6))

    @pytest.mark.parametrize("degree", [1, 2, 3])
    def test_independent_fit_agrees(self, degree):
        keys = np.sort(np.random.default_rng(degree).integers(0, 10**6, 5000)).astype(np.uint64)
        m = train_atomic(SortedTable(keys), degree)
        assert m.max_error == pytest.approx(oracle_max_error(keys, degree), rel=1e-6)


def key_lists():
    return st.lists(st.integers(0, 2**64 - 1), min_size=4, max_size=300).filter(lambda xs: min(xs) != max(xs))


class TestProperties:
    @given(key_lists(), st.sampled_from([1, 2, 3]))
    def test_containment_and_width(self, xs, degree):
        keys = np.array(sorted(xs), dtype=np.uint64)
        m = train_atomic(SortedTable(keys), degree)
        lo, hi = m.predict_batch(keys)
        ranks = lb_ranks(keys)
        assert np.all((lo <= ranks) & (ranks < hi))
        assert np.all(hi - lo <= 2 * m.eps + 1)
        interior = (lo > 0) & (hi < keys.size)
        assert np.all((hi - lo)[interior] == 2 * m.eps + 1)

    @given(key_lists(), st.integers(0, 2**64 - 1))
    def test_lookup_any_query(self, xs, x):
        keys = np.array(sorted(xs), dtype=np.uint64)
        m = train_atomic(SortedTable(keys), 1)
        assert lookup(m, keys, x) == bbs(keys, x)

    def test_size_independent_of_n(self):
        a = train_atomic(synthetic_keys("uniform", 100, seed=1), 3)
        b = train_atomic(synthetic_keys("uniform", 100_000, seed=1), 3)
        assert a.size_bytes() == b.size_bytes() == 8 * 4 + 32


class TestErrors:
    def test_all_equal(self):
        with pytest.raises(ModelError):
            train_atomic(SortedTable(np.full(10, 5, dtype=np.uint64)), 1)

    def test_too_few_keys(self):
        with pytest.raises(ModelError):
            train_atomic(SortedTable(np.array([1, 2, 3], dtype=np.uint64)), 3)

    def test_bad_degree(self):
        with pytest.raises(ModelError):
            train_atomic(SortedTable(TEN_KEYS), 4)

    def test_constant_model_contains(self):
        keys = np.full(10, 5, dtype=np.uint64)
        m = constant_model(keys)
        r = m.predict(5)
        assert 0 in r
