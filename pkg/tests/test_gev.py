import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from stormlevels.gev import (GevParams, gev_cdf, gev_logpdf, gev_logpdf_grad, gev_quantile,
                             gev_sample, return_level, support_ok, to_frechet)


def test_gumbel_mode_logpdf():
    assert gev_logpdf(0.0, (0.0, 0.0, 0.0)) == pytest.approx(-1.0, abs=1e-15)


def test_matches_scipy_genextreme():
    # scipy uses c = -xi
    y = np.linspace(-2, 6, 41)
    for xi in (-0.3, 0.1, 0.4):
        ref = stats.genextreme.logpdf(y, -xi, loc=1.0, scale=2.0)
        ours = gev_logpdf(y, (1.0, np.log(2.0), xi))
        np.testing.assert_allclose(ours, ref, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(gev_cdf(y, (1.0, np.log(2.0), xi)),
                                   stats.genextreme.cdf(y, -xi, loc=1.0, scale=2.0), atol=1e-13)


def test_support_handling():
    p = (0.0, 0.0, 0.5)  # lower endpoint -2
    assert gev_logpdf(-2.5, p) == -np.inf
    assert gev_cdf(-2.5, p) == 0.0
    q = (0.0, 0.0, -0.5)  # upper endpoint 2
    assert gev_cdf(3.0, q) == 1.0
    assert not support_ok(3.0, q)


def test_quantile_rejects_boundary_probabilities():
    for p in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            gev_quantile(p, (0.0, 0.0, 0.1))


def test_params_validation():
    with pytest.raises(ValueError):
        GevParams(0.0, 0.0, 6.0)
    with pytest.raises(ValueError):
        GevParams(np.nan, 0.0, 0.0)
    g = GevParams.from_sigma(1.0, 2.0, 0.1)
    assert g.sigma == pytest.approx(2.0)
    arr = GevParams.from_array(np.array([[1, 0, 0.1], [2, 0.5, -0.1]]))
    assert len(arr) == 2 and arr[1].mu == 2


@settings(max_examples=200, deadline=None)
@given(mu=st.floats(-50, 50), ls=st.floats(-3, 3), xi=st.floats(-0.9, 0.9),
       p=st.floats(1e-6, 1 - 1e-6))
def test_roundtrip_property(mu, ls, xi, p):
    y = gev_quantile(p, (mu, ls, xi))
    assert gev_cdf(y, (mu, ls, xi)) == pytest.approx(p, abs=1e-9)


def test_xi_continuity_near_zero():
    y = np.linspace(-2, 8, 21)
    g = gev_logpdf(y, (0.0, 0.0, 0.0))
    for xi in (1e-7, -1e-7, 1e-9):
        np.testing.assert_allclose(gev_logpdf(y, (0.0, 0.0, xi)), g, atol=5e-6)
    assert gev_quantile(0.99, (0, 0, 1e-9)) == pytest.approx(gev_quantile(0.99, (0, 0, 0)),
                                                             abs=1e-7)


def test_gradient_gumbel_branch():
    y = np.linspace(-1, 4, 7)
    h = 1e-6
    g = gev_logpdf_grad(y, (0.3, 0.2, 0.0))
    for c in range(2):
        up, dn = [0.3, 0.2, 0.0], [0.3, 0.2, 0.0]
        up[c] += h
        dn[c] -= h
        fd = (gev_logpdf(y, tuple(up)) - gev_logpdf(y, tuple(dn))) / (2 * h)
        np.testing.assert_allclose(g[:, c], fd, rtol=1e-6, atol=1e-8)
    fd_xi = (gev_logpdf(y, (0.3, 0.2, 1e-4)) - gev_logpdf(y, (0.3, 0.2, -1e-4))) / 2e-4
    np.testing.assert_allclose(g[:, 2], fd_xi, rtol=1e-5, atol=1e-6)


def test_sampling_is_deterministic_and_distributed():
    p = (5.0, 0.3, 0.2)
    a = gev_sample(20000, p, np.random.default_rng(3))
    b = gev_sample(20000, p, np.random.default_rng(3))
    assert np.array_equal(a, b)
    ks = stats.kstest(a, lambda v: gev_cdf(v, p)).statistic
    assert ks < 0.015


def test_frechet_and_return_level():
    assert to_frechet(np.exp(-1.0)) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        to_frechet(1.0)
    params = GevParams(10.0, 1.0, 0.1)
    assert return_level(params, 0.99) == pytest.approx(gev_quantile(0.99, params))


def test_density_integrates_to_one_heavy_tail():
    val, _ = integrate.quad(lambda v: np.exp(gev_logpdf(v, (0, 0, 0.45))), -1 / 0.45, np.inf,
                            limit=400, epsabs=1e-12, epsrel=1e-12)
    assert val == pytest.approx(1.0, abs=1e-6)


def test_hand_values():
    e1 = np.exp(-1.0)
    assert gev_cdf(1.0, (1.0, 0.0, 1.0)) == pytest.approx(e1, abs=1e-15)
    assert gev_cdf(3.0, (3.0, 0.0, 0.0)) == pytest.approx(e1, abs=1e-15)
    assert gev_cdf(-0.5, (0.0, 0.0, 1.0)) == pytest.approx(np.exp(-2.0), abs=1e-15)
    assert gev_cdf(-1.5, (0.0, 0.0, 1.0)) == 0.0
    assert gev_logpdf(-2.0, (0.0, 0.0, 1.0)) == -np.inf
    assert gev_quantile(e1, (0.0, 0.0, 0.0)) == pytest.approx(0.0, abs=1e-15)
    assert gev_quantile(e1, (0.0, 0.0, 1.0)) == pytest.approx(0.0, abs=1e-15)
    assert gev_quantile(np.exp(-0.5), (0.0, 0.0, 1.0)) == pytest.approx(1.0, rel=1e-14)
    for z in (1.0, 2.0, 10.0):
        assert to_frechet(np.exp(-1.0 / z)) == pytest.approx(z, rel=1e-14)
