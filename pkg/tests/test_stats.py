import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from odin.stats import TrialMatrix, loglog_slope, mse_and_se, paired_ttest, qq_points
from oracles import t_two_sided_p


def test_mse_hand_values():
    s = mse_and_se([1.0, 2.0, 3.0], 2.5)
    assert s.mean == 2.0
    assert s.bias == -0.5
    assert s.variance == 1.0
    assert s.mse == pytest.approx((2.25 + 0.25 + 0.25) / 3)
    assert s.se == pytest.approx(1 / math.sqrt(3))


def test_mse_errors():
    with pytest.raises(ValueError):
        mse_and_se([1.0], 0.0)
    with pytest.raises(ValueError):
        mse_and_se([1.0, np.nan], 0.0)


@pytest.mark.property
@given(arrays(float, st.integers(2, 50), elements=st.floats(-100, 100)), st.floats(-100, 100))
def test_mse_decomposition(est, truth):
    # mean squared error = bias^2 + biased variance
    s = mse_and_se(est, truth)
    T = est.size
    assert s.mse == pytest.approx(s.bias**2 + s.variance * (T - 1) / T, rel=1e-9, abs=1e-9)


def test_slope_exact_power_law():
    ns = np.array([100, 240, 560, 1330])
    assert loglog_slope(ns, 3.0 * ns**-0.8) == pytest.approx(0.8, abs=1e-12)


def test_slope_errors():
    with pytest.raises(ValueError):
        loglog_slope([100, 100], [1.0, 2.0])
    with pytest.raises(ValueError):
        loglog_slope([100, 200], [1.0, 0.0])
    with pytest.raises(ValueError):
        loglog_slope([100, 200], [1.0])


def test_ttest_hand_example():
    r = paired_ttest([1, 2, 3, 4, 5], [0, 0, 0, 0, 0])
    assert r.t == pytest.approx(3 / (math.sqrt(2.5) / math.sqrt(5)), rel=1e-12)
    assert r.t == pytest.approx(4.2426, abs=1e-4)
    assert r.df == 4
    assert r.p == pytest.approx(0.0132, abs=1e-4)
    assert r.p == pytest.approx(t_two_sided_p(r.t, 4), rel=1e-5)


def test_ttest_one_sided_halves():
    a, b = [1.0, 2.5, 3.0, 4.5, 5.0], [0.5, 0.2, 0.1, 0.9, 0.0]
    two = paired_ttest(a, b)
    gt = paired_ttest(a, b, "greater")
    lt = paired_ttest(a, b, "a<b")
    assert gt.p == pytest.approx(two.p / 2, rel=1e-12)
    assert lt.p == pytest.approx(1 - two.p / 2, rel=1e-12)


def test_ttest_degenerate_and_errors():
    assert paired_ttest([1.0, 1.0], [1.0, 1.0]).p == 1.0
    r = paired_ttest([2.0, 2.0, 2.0], [1.0, 1.0, 1.0], "greater")
    assert r.t == math.inf and r.p == 0.0
    with pytest.raises(ValueError):
        paired_ttest([1.0], [2.0])
    with pytest.raises(ValueError):
        paired_ttest([1.0, 2.0], [2.0])
    with pytest.raises(ValueError):
        paired_ttest([1.0, 2.0], [2.0, 3.0], "sideways")


@pytest.mark.parametrize("t,df", [(0.5, 3), (2.0, 10), (4.2426, 4), (1.3, 99)])
def test_ttest_p_matches_quadrature(t, df):
    rng = np.random.default_rng(df)
    # build a paired sample with the target t statistic
    z = rng.standard_normal(df + 1)
    z = (z - z.mean()) / z.std(ddof=1)
    diff = z + t / math.sqrt(df + 1)
    r = paired_ttest(diff, np.zeros_like(diff))
    assert r.t == pytest.approx(t, rel=1e-10)
    assert r.p == pytest.approx(t_two_sided_p(t, df), rel=1e-5)


def test_qq_perfect_normal_quantiles():
    from scipy.stats import norm

    v = norm.ppf((np.arange(1, 51) - 0.5) / 50)
    q = qq_points(v)
    assert q.correlation == pytest.approx(1.0, abs=1e-12)
    assert len(list(q.rows())) == 50


def test_qq_errors():
    with pytest.raises(ValueError):
        qq_points(np.arange(5.0))
    with pytest.raises(ValueError):
        qq_points(np.ones(20))


@pytest.mark.property
@given(arrays(float, st.integers(10, 60), elements=st.floats(-50, 50)), st.floats(0.01, 100), st.floats(-100, 100))
def test_qq_invariant_under_affine_maps(v, scale, shift):
    if np.std(v) < 1e-6:
        return
    a = qq_points(v)
    b = qq_points(v * scale + shift)
    assert np.allclose(a.empirical, b.empirical, atol=1e-8)
    assert a.correlation == pytest.approx(b.correlation, abs=1e-9)


def test_trial_matrix():
    m = TrialMatrix([[1.0, 2.0], [3.0, 4.0]], [2.0, 3.0])
    s = m.summaries()
    assert [x.mse for x in s] == [1.0, 1.0]
    with pytest.raises(ValueError):
        TrialMatrix([[1.0, 2.0]], [1.0])
