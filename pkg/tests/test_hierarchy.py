import numpy as np
import pytest

from bhm.accum import Domain, SampleAccumulator
from bhm.hierarchy import bins_inside, build
from oracles import ListAccumulator, rel_close


def _filled(levels=4, n=800, seed=0):
    rng = np.random.default_rng(seed)
    acc = SampleAccumulator(Domain(0.0, 2.0), levels)
    ref = ListAccumulator(acc.edges)
    x = rng.uniform(0, 2, n)
    v = rng.normal(1.0, 2.0, n)
    acc.record_many(x, v)
    ref.extend(x, v)
    return acc, ref


def test_layout_and_edges():
    acc, _ = _filled()
    h = build(acc, 10)
    assert len(h) == 2**5 - 1
    assert h.K == 4
    for n in range(5):
        sl = h.level_slice(n)
        assert np.all(h.level[sl] == n)
        assert np.allclose(h.hi[sl] - h.lo[sl], 2.0 / 2**n)
    assert np.allclose(h.weight, 2.0 ** -h.level)


def test_parent_stats_match_list_oracle():
    acc, ref = _filled(levels=5, n=2000, seed=1)
    h = build(acc, 10)
    for j in range(len(h)):
        n, i = h.level[j], h.index[j]
        width = 2 ** (h.K - n)
        c, mu, m2 = ref.stats(i * width, (i + 1) * width)
        assert h.count[j] == c
        assert rel_close(h.mean[j], mu, 1e-12, 1e-14)
        assert rel_close(h.m2[j], m2, 1e-12, 1e-12)
        val, err = ref.integral(i * width, (i + 1) * width)
        assert rel_close(h.value[j], val, 1e-12, 1e-15)
        assert rel_close(h.error[j], err, 1e-12, 1e-15)


def test_root_of_positive_importance_sample_is_exact():
    acc = SampleAccumulator(Domain(0.0, 1.0), 6).record_many(np.random.default_rng(2).random(500))
    h = build(acc, 10)
    assert h.value[0] == 1.0 and h.error[0] == 0.0


def test_usable_flags():
    acc = SampleAccumulator(Domain(0.0, 1.0), 2).record_many([0.1] * 12 + [0.3] * 3 + [0.9] * 10)
    h = build(acc, 10)
    assert list(h.usable[h.level_slice(2)]) == [True, False, False, True]
    assert h.n_usable(1) == 2
    assert build(acc, 13).n_usable(2) == 0


def test_bins_inside():
    acc, _ = _filled(levels=3)
    h = build(acc, 10)
    got = bins_inside(h, 0.5, 1.5, 2)
    assert [b.index for b in got] == [1, 2]
    assert all(0.5 <= b.lo and b.hi <= 1.5 for b in got)
    with pytest.raises(ValueError):
        bins_inside(h, 1.0, 1.0, 1)


def test_build_needs_two_samples():
    with pytest.raises(ValueError):
        build(SampleAccumulator(Domain(0.0, 1.0), 2).record(0.5), 10)
