import numpy as np
import pytest
from scipy import integrate

from stormlevels.gev import gev_logpdf
from stormlevels.model import (FitData, HyperPrior, LatentState, ModelSpec, build_design,
                               effective_info, fit_gev_ml, gumbel_moments, initial_state,
                               log_posterior, variogram_hyperpriors, weighted_loglik,
                               weighted_loglik_grad)
from stormlevels.pcprior import (XI_HIGH, XI_LOW, PcTable, pc_distance, pc_distance_slope,
                                 pc_logprior)
from stormlevels.simulate import GeneratorConfig, assemble_dataset


@pytest.fixture(scope="module")
def data():
    ds = assemble_dataset(GeneratorConfig(n_sites=10, n_years=30, dependence="moderate", seed=2))
    return FitData.from_arrays(ds.y, ds.sites), ds


def priors():
    return {k: HyperPrior.centered(1.0, 5.0) for k in ("mu", "log_sigma", "xi")}


def test_weighted_loglik_hand_value():
    assert weighted_loglik(np.array([[0.0]]), np.array([[0.0, 0.0, 0.0]]), [0.5]) == \
        pytest.approx(-0.5, abs=1e-15)


def test_weighted_loglik_linear_in_weights(data):
    d, ds = data
    eta = ds.truth.as_array()
    u = weighted_loglik(d.y, eta, np.ones(d.n_sites))
    assert u == pytest.approx(np.sum(gev_logpdf(d.y, (ds.truth.mu, ds.truth.log_sigma,
                                                        ds.truth.xi))))
    assert weighted_loglik(d.y, eta, np.full(d.n_sites, 0.3)) == pytest.approx(0.3 * u)


def test_weighted_loglik_outside_support():
    eta = np.array([[0.0, 0.0, 0.5]])
    assert weighted_loglik(np.array([[-3.0]]), eta, [1.0]) == -np.inf


def test_gradient_matches_finite_differences(data):
    d, ds = data
    eta = ds.truth.as_array()
    w = np.linspace(0.2, 1.0, d.n_sites)
    g = weighted_loglik_grad(d.y, eta, w)
    h = 1e-6
    for j in (0, 4):
        for c in range(3):
            up, dn = eta.copy(), eta.copy()
            up[j, c] += h
            dn[j, c] -= h
            fd = (weighted_loglik(d.y, up, w) - weighted_loglik(d.y, dn, w)) / (2 * h)
            assert g[j, c] == pytest.approx(fd, rel=1e-5, abs=1e-6)


def test_effective_info():
    assert effective_info(1.0, 50) == 50
    assert effective_info(1 / 50, 50) == pytest.approx(1.0)
    assert effective_info(0.6, 60) == pytest.approx(36.0)


def test_model_nesting(data):
    d, _ = data
    spec_u = ModelSpec.named("unweighted", hyperpriors=priors())
    spec_w = ModelSpec.named("weighted", hyperpriors=priors())
    state = initial_state(d, spec_u)
    assert log_posterior(state, d, spec_w) == log_posterior(state, d, spec_u)


def test_location_equivariance(data):
    d, ds = data
    eta = ds.truth.as_array()
    shifted = eta.copy()
    shifted[:, 0] += 7.0
    w = np.ones(d.n_sites)
    assert weighted_loglik(d.y + 7.0, shifted, w) == pytest.approx(weighted_loglik(d.y, eta, w),
                                                                    rel=1e-12)


def test_pc_small_lambda_matches_unweighted_ordering(data):
    d, _ = data
    su = ModelSpec.named("unweighted", hyperpriors=priors())
    sp = ModelSpec.named("pc_prior", hyperpriors=priors())
    a = initial_state(d, su)
    b = a.copy()
    b.eta[:, 2] += 0.05
    diffs = []
    for lam in (1e-3, 1e-5, 1e-7):
        a.pc_lambda = b.pc_lambda = lam
        du = log_posterior(b, d, su) - log_posterior(a, d, su)
        dp = log_posterior(b, d, sp) - log_posterior(a, d, sp)
        diffs.append(dp - du)
    # the gap tends to a lambda-free constant (slope and side terms), shrinking linearly in lambda
    assert abs(diffs[2] - diffs[1]) < 0.02 * abs(diffs[1] - diffs[0]) + 1e-12


def test_spec_validation():
    with pytest.raises(ValueError):
        ModelSpec("unweighted", "fixed")
    with pytest.raises(ValueError):
        ModelSpec("weighted", None)
    with pytest.raises(ValueError):
        HyperPrior((2.0, -1.0))
    assert ModelSpec.named("weighted_gibbs").weight_mode == "gibbs_updated"
    with pytest.raises(ValueError):
        log_posterior(None, None, ModelSpec())


def test_state_weight_validation():
    with pytest.raises(ValueError):
        LatentState(np.zeros((4, 3)), [], [], np.full(4, 0.1))


def test_ml_fit_recovers_parameters():
    rng = np.random.default_rng(0)
    from stormlevels.gev import gev_sample
    y = gev_sample(2000, (20.0, np.log(5.0), 0.1), rng)
    est = fit_gev_ml(y)
    assert est[0] == pytest.approx(20.0, abs=0.4)
    assert np.exp(est[1]) == pytest.approx(5.0, rel=0.06)
    assert est[2] == pytest.approx(0.1, abs=0.04)
    g = gumbel_moments(y)
    assert g[2] == 0.0 and np.isfinite(np.sum(gev_logpdf(y, tuple(g))))


def test_single_site_flat_prior_mode_matches_ml():
    # with one site, a huge sill and diffuse coefficients the posterior mode is the ML fit
    from scipy import optimize
    rng = np.random.default_rng(1)
    from stormlevels.gev import gev_sample
    y = gev_sample(80, (10.0, 0.5, 0.1), rng)[:, None]
    d = FitData.from_arrays(y, np.zeros((1, 2)), terms={"mu": ["1"], "log_sigma": ["1"],
                                                         "xi": ["1"]})
    big = {k: HyperPrior((1e-9, 1e-9), (2.0, 1.0)) for k in ("mu", "log_sigma", "xi")}
    spec = ModelSpec.named("unweighted", hyperpriors=big)
    st = initial_state(d, spec)
    ml = st.eta[0].copy()

    def neg(e):
        s = st.copy()
        s.eta[0] = e
        s.beta = [np.array([v]) for v in e]
        return -log_posterior(s, d, spec)

    res = optimize.minimize(neg, ml + 0.01, method="Nelder-Mead",
                            options=dict(xatol=1e-9, fatol=1e-12, maxiter=5000))
    np.testing.assert_allclose(res.x, ml, atol=1e-4)


def test_design_and_variogram_priors(data):
    d, _ = data
    X = build_design(d.sites, {"elev": np.arange(d.n_sites)}, ["1", "x", "elev"])
    assert X.shape == (d.n_sites, 3) and X[3, 2] == 3
    with pytest.raises(KeyError):
        build_design(d.sites, None, ["nope"])
    eta0 = np.array([fit_gev_ml(d.y[:, j]) for j in range(d.n_sites)])
    hp = variogram_hyperpriors(eta0, d.sites, d.designs)
    for v in hp.values():
        assert v.sill[1] > 0 and v.range[1] > 0


# -------------------------------------------------------------------- PC prior

def test_pc_distance_zero_and_monotone():
    assert pc_distance(0.0) == 0.0
    vals = [pc_distance(x) for x in np.arange(0.0, 0.51, 0.1)]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    neg = [pc_distance(-x) for x in np.arange(0.0, 0.51, 0.1)]
    assert all(b > a for a, b in zip(neg, neg[1:]))


def test_pc_distance_small_xi_quadratic_kl():
    # KL ~ c xi^2 near 0, so d is close to linear: d(2x)/d(x) -> 2
    assert pc_distance(0.02) / pc_distance(0.01) == pytest.approx(2.0, rel=0.02)


@pytest.mark.parametrize("lam", [0.5, 1.0, 2.0])
def test_pc_normalization(lam):
    f = lambda x: np.exp(pc_logprior(x, lam))
    a, _ = integrate.quad(f, XI_LOW, 0.0, limit=200)
    b, _ = integrate.quad(f, 0.0, XI_HIGH, limit=400, points=[0.9, 0.99])
    assert a == pytest.approx(0.5, abs=1e-4)
    assert a + b == pytest.approx(1.0, abs=1e-3)


def test_pc_window_and_table():
    with pytest.raises(ValueError):
        pc_logprior(1.2, 1.0)
    with pytest.raises(ValueError):
        pc_logprior(0.1, 0.0)
    tab = PcTable(4001)
    x = np.linspace(-0.49, 0.95, 37)
    np.testing.assert_allclose(tab.logpdf(x, 1.3), pc_logprior(x, 1.3), atol=5e-5)
    assert tab.logpdf(np.array([2.0]), 1.0)[0] == -np.inf
    assert np.all(pc_distance_slope(np.array([-0.3, 0.0, 0.3])) > 0)
