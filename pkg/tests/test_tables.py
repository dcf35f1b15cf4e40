import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from learned_sts.tables import (
    DatasetRejectedError,
    DatasetSpec,
    SortedTable,
    TableError,
    build_eytzinger,
    histogram_pdf,
    kl_divergence,
    ks_critical_value,
    ks_statistic,
    load_keys,
    make_query_batch,
    sample_sorted_indices,
    sample_from_keys,
    sample_level_dataset,
    store_keys,
    synthetic_keys,
)


def write_raw(path, count, keys, fmt="<Q"):
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", count))
        for k in keys:
            f.write(struct.pack(fmt, k))


def eytzinger_oracle(sorted_keys):
    """Recursive in-order fill of the implicit complete tree."""
    n = len(sorted_keys)
    out = [None] * n
    it = iter(sorted_keys)

    def fill(i):
        if i < n:
            fill(2 * i + 1)
            out[i] = next(it)
            fill(2 * i + 2)

    fill(0)
    return out


class TestSortedTable:
    def test_rejects_empty(self):
        with pytest.raises(TableError):
            SortedTable(np.array([], dtype=np.uint64))

    def test_rejects_unsorted(self):
        with pytest.raises(TableError):
            SortedTable(np.array([3, 1], dtype=np.uint64))

    def test_keys_are_read_only_copy(self):
        src = np.array([1, 2, 3], dtype=np.uint64)
        t = SortedTable(src)
        assert src.flags.writeable
        with pytest.raises(ValueError):
            t.keys[0] = 9
        src[0] = 0
        assert t.keys[0] == 1

    def test_duplicates_retained(self):
        assert SortedTable(np.array([1, 1, 2], dtype=np.uint64)).n == 3

    def test_32_bit_mode(self):
        t = SortedTable(np.array([1, 2], dtype=np.uint32), width=32)
        assert t.dtype == np.uint32 and t.nbytes == 8


class TestKeyFiles:
    def test_load_sorts(self, tmp_path):
        p = tmp_path / "k.bin"
        write_raw(p, 3, [2, 1, 3])
        t = load_keys(p)
        assert t.keys.tolist() == [1, 2, 3] and t.n == 3

    def test_empty_header(self, tmp_path):
        p = tmp_path / "k.bin"
        write_raw(p, 0, [])
        with pytest.raises(TableError, match="empty table"):
            load_keys(p)

    def test_truncated_keys(self, tmp_path):
        p = tmp_path / "k.bin"
        write_raw(p, 5, [1, 2, 3, 4])
        with pytest.raises(TableError, match="truncat"):
            load_keys(p)

    def test_truncated_header(self, tmp_path):
        p = tmp_path / "k.bin"
        p.write_bytes(b"\x01\x00")
        with pytest.raises(TableError):
            load_keys(p)

    def test_trailing_bytes(self, tmp_path):
        p = tmp_path / "k.bin"
        write_raw(p, 1, [1, 2])
        with pytest.raises(TableError):
            load_keys(p)

    def test_dedup_flag(self, tmp_path):
        p = tmp_path / "k.bin"
        write_raw(p, 4, [5, 5, 1, 5])
        assert load_keys(p, dedup=True).keys.tolist() == [1, 5]

    def test_32_bit_file(self, tmp_path):
        p = tmp_path / "k.bin"
        write_raw(p, 3, [9, 2, 4], fmt="<I")
        assert load_keys(p, width=32).keys.tolist() == [2, 4, 9]

    @given(st.lists(st.integers(0, 2**64 - 1), min_size=1, max_size=50))
    def test_round_trip_bit_exact(self, tmp_path_factory, keys):
        d = tmp_path_factory.mktemp("rt")
        t = SortedTable.from_unsorted(np.array(keys, dtype=np.uint64))
        store_keys(t, d / "a.bin")
        t2 = load_keys(d / "a.bin")
        store_keys(t2, d / "b.bin")
        assert (d / "a.bin").read_bytes() == (d / "b.bin").read_bytes()
        assert np.array_equal(t.keys, t2.keys)


class TestEytzinger:
    def test_fifteen_elements(self):
        e = build_eytzinger(SortedTable(np.arange(15, dtype=np.uint64)))
        assert e.keys.tolist() == [7, 3, 11, 1, 5, 9, 13, 0, 2, 4, 6, 8, 10, 12, 14]
        assert e.keys.tolist() == eytzinger_oracle(list(range(15)))

    def test_single(self):
        assert build_eytzinger(SortedTable(np.array([42], dtype=np.uint64))).keys.tolist() == [42]

    def test_three(self):
        assert build_eytzinger(SortedTable(np.array([1, 2, 3], dtype=np.uint64))).keys.tolist() == [2, 1, 3]

    @given(st.lists(st.integers(0, 1000), min_size=1, max_size=200))
    def test_permutation_and_oracle(self, keys):
        t = SortedTable.from_unsorted(np.array(keys, dtype=np.uint64))
        e = build_eytzinger(t)
        assert sorted(e.keys.tolist()) == t.keys.tolist()
        assert e.keys.tolist() == eytzinger_oracle(t.keys.tolist())
        assert np.array_equal(t.keys[e.rank[:-1]], e.keys)
        assert e.rank[-1] == t.n


class TestKsKl:
    def test_critical_value_formula(self):
        # c(0.05) = 1.3581 for the asymptotic two-sample test
        assert ks_critical_value(100, 100, 0.05) == pytest.approx(1.3581 * np.sqrt(200 / 10000), rel=1e-4)

    def test_statistic_matches_scipy(self, rng):
        for _ in range(20):
            a = np.sort(rng.integers(0, 50, size=rng.integers(1, 300))).astype(np.uint64)
            b = np.sort(rng.integers(0, 50, size=rng.integers(1, 300))).astype(np.uint64)
            assert ks_statistic(a, b) == pytest.approx(stats.ks_2samp(a, b).statistic, abs=1e-12)

    def test_self_is_zero(self, rng):
        a = np.sort(rng.integers(0, 2**63, size=500, dtype=np.uint64))
        assert ks_statistic(a, a) == 0.0
        p = histogram_pdf(a, a[0], a[-1], 64)
        assert kl_divergence(p, p) == 0.0

    def test_kl_matches_brute_force(self, rng):
        p = rng.random(64)
        q = rng.random(64)
        p, q = p / p.sum(), q / q.sum()
        assert kl_divergence(p, q) == pytest.approx(sum(a * np.log(a / b) for a, b in zip(p, q)), rel=1e-12)

    def test_kl_non_negative(self, rng):
        for _ in range(20):
            p = rng.random(16)
            q = rng.random(16)
            assert kl_divergence(p / p.sum(), q / q.sum()) >= 0.0


class TestSampling:
    def test_full_sample_is_identical(self):
        src = synthetic_keys("uniform", 2000, seed=1)
        t, rep = sample_from_keys(src, src.n, trials=3, seed=0)
        assert np.array_equal(t.keys, src.keys)
        assert rep.chosen_ks == 0.0 and rep.chosen_kl == 0.0

    def test_uniform_source_accepted(self):
        src = synthetic_keys("uniform", 370_000, seed=2)
        t, rep = sample_from_keys(src, 3700, trials=100, seed=0)
        assert t.n == 3700
        assert rep.acceptance_pct >= 90.0
        assert 0.0 <= rep.chosen_kl < 1e-3 * 20
        assert set(t.keys.tolist()) <= set(src.keys.tolist())

    def test_chosen_kl_is_recomputable(self):
        src = synthetic_keys("lognormal", 50_000, seed=3)
        t, rep = sample_from_keys(src, 3700, trials=10, seed=4)
        p = histogram_pdf(t.keys, src.keys[0], src.keys[-1], 64)
        q = histogram_pdf(src.keys, src.keys[0], src.keys[-1], 64)
        assert rep.chosen_kl == pytest.approx(kl_divergence(p, q), rel=1e-12)
        assert rep.chosen_kl == min(k for k in rep.kl_divergences if k == k)

    def test_deterministic(self):
        src = synthetic_keys("clustered", 20_000, seed=5)
        a, ra = sample_from_keys(src, 1000, trials=5, seed=9)
        b, rb = sample_from_keys(src, 1000, trials=5, seed=9)
        assert np.array_equal(a.keys, b.keys) and ra.to_dict() == rb.to_dict()

    def test_all_rejected(self, monkeypatch):
        import learned_sts.tables as tables

        monkeypatch.setattr(tables, "ks_critical_value", lambda n, m, alpha=0.05: 0.0)
        src = synthetic_keys("uniform", 10_000, seed=6)
        with pytest.raises(DatasetRejectedError) as ei:
            sample_from_keys(src, 5000, trials=3, seed=0)
        assert ei.value.best_statistic > ei.value.critical_value
        assert ei.value.best_keys.n == 5000

    def test_level_dataset_from_file(self, tmp_path):
        store_keys(synthetic_keys("uniform", 10_000, seed=7), tmp_path / "src.bin")
        spec = DatasetSpec(tmp_path / "src.bin", "L1", trials=5)
        t, rep = sample_level_dataset(spec, seed=1)
        assert t.n == 3700 and rep.level == "L1"

    def test_spec_validation(self, tmp_path):
        with pytest.raises(ValueError):
            DatasetSpec(tmp_path, "L9")
        with pytest.raises(ValueError):
            DatasetSpec(tmp_path, "L1", trials=0)
        with pytest.raises(ValueError):
            DatasetSpec(tmp_path, "L1", ks_alpha=1.0)


class TestSortedIndices:
    @pytest.mark.parametrize("n,m", [(1000, 10), (1000, 500), (1000, 1000), (10, 1)])
    def test_sorted_distinct_exact_size(self, n, m):
        idx = sample_sorted_indices(n, m, np.random.default_rng(0))
        assert idx.size == m and np.all(np.diff(idx) > 0)
        assert idx[0] >= 0 and idx[-1] < n

    def test_uniform_inclusion(self):
        # every position should be picked about m/n of the time on both paths
        for n, m in ((400, 10), (400, 200)):
            hits = np.zeros(n)
            rng = np.random.default_rng(1)
            for _ in range(2000):
                hits[sample_sorted_indices(n, m, rng)] += 1
            expect = 2000 * m / n
            assert np.abs(hits - expect).max() < 6 * np.sqrt(expect)

    def test_too_large(self):
        with pytest.raises(ValueError):
            sample_sorted_indices(3, 4, np.random.default_rng(0))


class TestQueryBatch:
    def test_single_key(self):
        assert make_query_batch(SortedTable(np.array([5], dtype=np.uint64)), 3).queries.tolist() == [5, 5, 5]

    def test_deterministic(self):
        t = synthetic_keys("uniform", 1000, seed=1)
        assert np.array_equal(make_query_batch(t, 100, 3).queries, make_query_batch(t, 100, 3).queries)

    def test_members_at_scale(self):
        t = synthetic_keys("uniform", 750_000, seed=1)
        q = make_query_batch(t, 1_000_000, seed=2)
        idx = np.searchsorted(t.keys, q.queries)
        assert np.all(t.keys[idx] == q.queries)

    def test_m_must_be_positive(self):
        with pytest.raises(ValueError):
            make_query_batch(synthetic_keys("uniform", 10), 0)
