import numpy as np
import pytest
from sklearn.base import clone

from bhm import BinHierarchyDensity, DomainTransform, ZeroSignalError
from bhm import testbed as tb


def cubic_draws(n, seed):
    return tb.Sampler(tb.builtin("cubic"), seed).draw(n)


def test_params_round_trip():
    est = BinHierarchyDensity(levels=8, order=2, jump_constraint=False)
    other = clone(est)
    assert other.get_params() == est.get_params()
    assert other.get_params()["levels"] == 8


def test_fit_predict_cubic():
    x, v = cubic_draws(10**5, 0)
    d = tb.builtin("cubic")
    est = BinHierarchyDensity(domain=d.domain).fit(x, sample_weight=v)
    assert est.accepted_ and est.n_pieces_ >= 1
    assert not est.check_zero().consistent_with_zero
    grid = np.linspace(1.0, 2.8, 50)
    value, sigma = est.predict(grid, return_std=True)
    assert value.shape == sigma.shape == grid.shape
    assert np.all(sigma > 0)
    assert np.mean(np.abs(value - d.truth(grid)) < 3 * sigma) > 0.9
    assert np.allclose(est.predict(grid[:, None]), value)


def test_partial_fit_equals_single_fit():
    x, v = cubic_draws(20000, 1)
    one = BinHierarchyDensity(domain=(1.0, 2.8), levels=8).fit(x, sample_weight=v)
    two = BinHierarchyDensity(domain=(1.0, 2.8), levels=8)
    two.partial_fit(x[:7000], sample_weight=v[:7000]).partial_fit(x[7000:], sample_weight=v[7000:])
    assert two.accumulator_.total == 20000
    assert np.allclose(one.accumulator_.mean, two.accumulator_.mean, rtol=1e-12, atol=1e-15)
    grid = np.linspace(1.0, 2.8, 9)
    assert np.allclose(one.predict(grid), two.predict(grid), rtol=1e-9)


def test_require_signal():
    rng = np.random.default_rng(2)
    x = rng.random(20000)
    v = rng.choice([-1.0, 1.0], x.size)
    with pytest.raises(ZeroSignalError):
        BinHierarchyDensity(domain=(0, 1), levels=6, require_signal=True).fit(x, sample_weight=v)
    est = BinHierarchyDensity(domain=(0, 1), levels=6).fit(x, sample_weight=v)
    assert est.check_zero().consistent_with_zero


def test_semi_infinite_domain():
    d = tb.builtin("divergent")
    x, v = tb.Sampler(d, 3).draw(10**5)
    est = BinHierarchyDensity(transform="arctan", weight_power=0.5).fit(x, sample_weight=v)
    grid = np.geomspace(0.01, 50, 40)
    value, sigma = est.predict(grid, return_std=True)
    assert np.mean(np.abs(value - d.truth(grid)) < 3 * sigma) > 0.9


def test_input_validation():
    est = BinHierarchyDensity(domain=(0, 1))
    with pytest.raises(ValueError):
        est.fit(np.zeros((5, 2)))
    with pytest.raises(ValueError):
        est.fit(np.full(5, 0.5), sample_weight=np.ones(4))
    with pytest.raises(ValueError):
        est.fit(np.array([0.5, np.nan]))
    with pytest.raises(ValueError):
        BinHierarchyDensity(domain=(1, 0)).fit(np.full(5, 0.5))
    with pytest.raises(Exception):
        BinHierarchyDensity().predict([0.5])


def test_domain_transform():
    t = DomainTransform("exp", weight_power=1.0).fit(None)
    x = np.array([0.0, 0.5, 3.0])
    y = t.transform(x)
    assert np.allclose(t.inverse_transform(y), x)
    assert np.allclose(t.sample_weight(x), x * np.exp(-x))
    assert np.allclose(t.fit_transform(x), y)
