import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from svpl import dgp
from svpl.core import Rng, argmax_mask, split_three_way
from svpl.glb import GlbPolicy, bound_level, fit_glb, glb_mask_from_bounds, glb_maxmin, glb_set
from svpl.learners import BoundedArmRegressor, FunctionRegressor, fit_linear_arm_regressor


class FixedBounds(BoundedArmRegressor):
    """Constant bounds regardless of x, for threshold examples."""

    def __init__(self, lower, upper):
        self.lo = np.asarray(lower, float)
        self.hi = np.asarray(upper, float)
        self.K = self.lo.size
        self.meta = {"learner": "fixed"}

    def predict(self, X):
        return np.tile((self.lo + self.hi) / 2, (len(np.atleast_2d(X)), 1))

    def bounds(self, X, level):
        m = len(np.atleast_2d(X))
        return np.tile(self.lo, (m, 1)), np.tile(self.hi, (m, 1))


X0 = np.zeros(4)


def test_bound_level():
    assert bound_level(0.1) == pytest.approx(0.95)


def test_maxmin_examples():
    assert glb_maxmin(X0, FixedBounds([1, 2, 3, 2, 1], [9] * 5), 0.1) == 3
    assert glb_maxmin(X0, FixedBounds([1] * 5, [2] * 5), 0.1) == 1
    assert glb_maxmin(X0, FunctionRegressor(dgp.mean_matrix, 5), 0.1) == 1


def test_set_threshold_example():
    mask = glb_mask_from_bounds(np.array([[4.5, 0, 0, 0, 0]]), np.array([[5, 5, 0, 0, 0.0]]))
    assert mask.tolist() == [[True, True, False, False, False]]


def test_set_zero_width_oracle():
    pol = GlbPolicy(FunctionRegressor(dgp.mean_matrix, 5), 0.1)
    assert glb_set(X0, pol).members == (1, 2)


def test_set_wide_bounds_full():
    pol = GlbPolicy(FixedBounds([0, 1, 2, 3, 4], [10] * 5), 0.1)
    assert glb_set(X0, pol).members == (1, 2, 3, 4, 5)


def test_alpha_validation():
    with pytest.raises(ValueError):
        GlbPolicy(FixedBounds([0] * 5, [1] * 5), 0.0)


@given(st.integers(0, 10_000))
def test_nonempty_and_contains_maxmin(seed):
    g = np.random.default_rng(seed)
    lo = g.normal(size=(20, 5))
    hi = lo + np.abs(g.normal(size=(20, 5)))
    mask = glb_mask_from_bounds(lo, hi)
    assert mask[np.arange(20), lo.argmax(axis=1)].all()


def test_zero_width_oracle_grid_equals_argmax():
    g = np.linspace(-3, 3, 100)
    x1, x2 = np.meshgrid(g, g)
    X = np.column_stack([x1.ravel(), x2.ravel(), np.zeros(x1.size), np.zeros(x1.size)])
    pol = GlbPolicy(FunctionRegressor(dgp.mean_matrix, 5), 0.1)
    np.testing.assert_array_equal(pol.predict_mask(X), argmax_mask(dgp.mean_matrix(X)))


@pytest.mark.parametrize("seed", range(3))
def test_monotone_in_alpha_for_ols(seed):
    ds = dgp.generate(dgp.SyntheticConfig(n=900), Rng(seed))
    reg = fit_linear_arm_regressor(ds, None, "dgp-aware")
    X = ds.X[:300]
    prev = None
    for a in (0.01, 0.05, 0.1, 0.2, 0.5, 0.9):
        m = GlbPolicy(reg, a).predict_mask(X)
        if prev is not None:
            assert np.all(m <= prev)
        prev = m


def test_fixed_halfwidth_covers_everywhere():
    # bounds mu +- w: an optimal arm's upper bound always reaches the benchmark
    g = np.random.default_rng(0)
    X = g.standard_normal((5000, 4)) * 2
    mu = dgp.mean_matrix(X)
    opt = argmax_mask(mu)
    for w in (0.01, 0.5, 3.0):
        mask = GlbPolicy(FunctionRegressor(dgp.mean_matrix, 5, half_width=w), 0.1).predict_mask(X)
        assert (mask & opt).any(axis=1).all()


def test_fit_glb_split_maxmin(small_ds):
    sp = split_three_way(small_ds, (1 / 3, 1 / 3, 1 / 3), Rng(0))
    pol = fit_glb(small_ds, sp, 0.1, "ols")
    assert pol.maxmin is not None
    single = fit_glb(small_ds, sp, 0.1, "ols", split_maxmin=False)
    assert single.maxmin is None
    np.testing.assert_array_equal(single.maxmin_arms(small_ds.X[:50]),
                                  single.bounded.lower(small_ds.X[:50], 0.95).argmax(axis=1))
    meta = pol.as_policy().meta
    assert meta["method"] == "glb" and meta["split_maxmin"]
    # single-fold sets always contain their benchmark arm
    m = single.predict_mask(small_ds.X)
    assert m[np.arange(small_ds.n), single.maxmin_arms(small_ds.X)].all()


def test_fit_glb_knn(small_ds):
    sp = split_three_way(small_ds, (1 / 3, 1 / 3, 1 / 3), Rng(0))
    pol = fit_glb(small_ds, sp, 0.1, "knn", k=10, B=50, rng=Rng(1))
    m = pol.predict_mask(small_ds.X[:100])
    assert m.shape == (100, 5)
    again = fit_glb(small_ds, sp, 0.1, "knn", k=10, B=50, rng=Rng(1)).predict_mask(small_ds.X[:100])
    np.testing.assert_array_equal(m, again)
