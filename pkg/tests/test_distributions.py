import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate
from scipy import stats as sps

from odin.distributions import (
    QuadratureError,
    TruncatedGaussianSpec,
    adaptive_simpson,
    marginal_pdf,
    tg_pdf,
    tg_sample,
    true_divergence,
)
from odin.functionals import kl, renyi
from oracles import erf_truncnorm_pdf

RENYI_D4 = 0.6274583129326178
RENYI_FACTOR = 0.8900127318230366


def test_spec_validation():
    with pytest.raises(ValueError):
        TruncatedGaussianSpec((0.5,), 0.0)
    with pytest.raises(ValueError):
        TruncatedGaussianSpec((0.5,), 0.1, box=(1.0, 0.0))
    s = TruncatedGaussianSpec.isotropic(3, 0.7, 0.1)
    assert s.d == 3 and s.sigma == pytest.approx(math.sqrt(0.1))


@pytest.mark.parametrize("mu,var", [(0.7, 0.1), (0.3, 0.3), (0.5, 0.01), (0.95, 0.02)])
def test_pdf_matches_erf_formula(mu, var):
    for x in np.linspace(0, 1, 11):
        assert marginal_pdf(mu, var)(x) == pytest.approx(erf_truncnorm_pdf(x, mu, var), rel=1e-12)


def test_pdf_zero_outside_box_and_product_form():
    s = TruncatedGaussianSpec((0.7, 0.3), 0.1)
    assert tg_pdf(s, [1.1, 0.5]) == 0.0
    x = np.array([0.2, 0.9])
    assert tg_pdf(s, x) == pytest.approx(erf_truncnorm_pdf(0.2, 0.7, 0.1) * erf_truncnorm_pdf(0.9, 0.3, 0.1), rel=1e-12)
    with pytest.raises(ValueError):
        tg_pdf(s, [0.5])


@pytest.mark.parametrize("mu,var", [(0.7, 0.1), (0.3, 0.3), (0.5, 0.05)])
def test_pdf_integrates_to_one(mu, var):
    v, _ = integrate.quad(marginal_pdf(mu, var), 0, 1, epsabs=1e-13)
    assert v == pytest.approx(1.0, abs=1e-10)


def test_far_tail_normalizer_is_accurate():
    # mean far above the box: the direct Phi difference would cancel badly
    s = TruncatedGaussianSpec((6.0,), 0.25)
    a, b = (0 - 6.0) / 0.5, (1 - 6.0) / 0.5
    expect = sps.norm.sf(-b) - sps.norm.sf(-a)
    assert s.normalizers()[0] == pytest.approx(expect, rel=1e-9)


def test_sampler_is_reproducible_and_in_box():
    s = TruncatedGaussianSpec.isotropic(3, 0.7, 0.1)
    a = tg_sample(s, 500, 11, (0, 1, 2))
    b = tg_sample(s, 500, 11, (0, 1, 2))
    c = tg_sample(s, 500, 11, (0, 1, 3))
    assert np.array_equal(a.points, b.points)
    assert not np.array_equal(a.points, c.points)
    assert a.points.min() > 0 and a.points.max() < 1
    with pytest.raises(ValueError):
        tg_sample(s, 0, 1)


@pytest.mark.property
@pytest.mark.parametrize("mu,var", [(0.7, 0.1), (0.3, 0.3), (0.3, 0.1), (1.8, 0.2)])
def test_sampler_ks(mu, var):
    s = TruncatedGaussianSpec((mu, mu), var)
    x = tg_sample(s, 10_000, 2024).points
    sd = math.sqrt(var)
    ref = sps.truncnorm((0 - mu) / sd, (1 - mu) / sd, loc=mu, scale=sd)
    for k in range(2):
        assert sps.kstest(x[:, k], ref.cdf).pvalue > 1e-3


def test_sampler_mean_matches_quadrature():
    mu, var = 0.7, 0.1
    f = marginal_pdf(mu, var)
    m1, _ = integrate.quad(lambda t: t * f(t), 0, 1)
    m2, _ = integrate.quad(lambda t: t * t * f(t), 0, 1)
    x = tg_sample(TruncatedGaussianSpec((mu,), var), 100_000, 5).points[:, 0]
    se = math.sqrt((m2 - m1 * m1) / x.size)
    assert abs(x.mean() - m1) < 4 * se


@pytest.mark.property
@given(st.floats(-0.5, 1.5), st.floats(0.005, 1.0), st.integers(0, 2**32 - 1))
def test_sampler_stays_in_box(mu, var, seed):
    x = tg_sample(TruncatedGaussianSpec((mu,), var), 200, seed).points
    assert np.all((x > 0) & (x < 1))


# --- quadrature --------------------------------------------------------------


def test_simpson_polynomials_and_transcendentals():
    v, err = adaptive_simpson(lambda x: x**3 - 2 * x, 0.0, 2.0)
    assert v == pytest.approx(0.0, abs=1e-12)
    v, _ = adaptive_simpson(np.sin, 0.0, math.pi)
    assert v == pytest.approx(2.0, abs=1e-10)
    v, _ = adaptive_simpson(np.exp, -1.0, 1.0, tol=1e-13)
    assert v == pytest.approx(math.e - 1 / math.e, abs=1e-12)


def test_simpson_reports_failure():
    with pytest.raises(QuadratureError):
        adaptive_simpson(lambda x: np.where(x < 1 / 3, 0.0, 1.0) * 1e6, 0.0, 1.0, tol=1e-14, max_depth=6)


# --- ground truth ---------------------------------------------------------------


@pytest.mark.parametrize("mu,var", [(0.3, 0.3), (0.7, 0.1)])
def test_divergence_of_density_with_itself(mu, var):
    p = TruncatedGaussianSpec.isotropic(4, mu, var)
    assert true_divergence(kl(), p, p).value == pytest.approx(0.0, abs=1e-9)
    assert true_divergence(renyi(0.5), p, p).value == pytest.approx(1.0, abs=1e-9)


def test_frozen_renyi_value():
    p = TruncatedGaussianSpec.isotropic(4, 0.7, 0.1)
    q = TruncatedGaussianSpec.isotropic(4, 0.3, 0.1)
    ov = true_divergence(renyi(0.5), p, q)
    assert ov.value == pytest.approx(RENYI_D4, abs=1e-12)
    assert ov.factors[0] == pytest.approx(RENYI_FACTOR, abs=1e-13)
    assert ov.value == pytest.approx(RENYI_FACTOR**4, rel=1e-12)
    assert ov.tolerance < 1e-9


def test_renyi_factor_matches_scipy_quad():
    f1, f2 = marginal_pdf(0.7, 0.1), marginal_pdf(0.3, 0.1)
    v, _ = integrate.quad(lambda x: math.sqrt(f1(x) * f2(x)), 0, 1, epsabs=1e-14)
    assert v == pytest.approx(RENYI_FACTOR, abs=1e-11)


def test_kl_matches_scipy_quad_and_is_additive():
    f1, f2 = marginal_pdf(0.7, 0.1), marginal_pdf(0.3, 0.3)
    one, _ = integrate.quad(lambda x: f2(x) * math.log(f2(x) / f1(x)), 0, 1, epsabs=1e-14)
    p = TruncatedGaussianSpec.isotropic(6, 0.7, 0.1)
    q = TruncatedGaussianSpec.isotropic(6, 0.3, 0.3)
    assert true_divergence(kl(), p, q).value == pytest.approx(6 * one, abs=1e-9)


def test_renyi_mc_cross_check_small():
    p = TruncatedGaussianSpec.isotropic(4, 0.7, 0.1)
    q = TruncatedGaussianSpec.isotropic(4, 0.3, 0.1)
    x = tg_sample(q, 200_000, 99).points
    ratio = np.sqrt(tg_pdf(p, x) / tg_pdf(q, x))
    se = ratio.std(ddof=1) / math.sqrt(ratio.size)
    assert abs(ratio.mean() - RENYI_D4) < 3 * se


def test_divergence_errors():
    p = TruncatedGaussianSpec.isotropic(2, 0.5, 0.1)
    with pytest.raises(ValueError):
        true_divergence(kl(), p, TruncatedGaussianSpec.isotropic(3, 0.5, 0.1))
    with pytest.raises(ValueError):
        true_divergence(kl(), p, TruncatedGaussianSpec((0.5, 0.5), 0.1, box=(0.0, 2.0)))
    from odin.functionals import constant

    with pytest.raises(ValueError):
        true_divergence(constant(), p, p)
