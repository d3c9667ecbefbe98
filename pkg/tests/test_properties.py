import numpy as np
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st

from occuhet import (Dataset, FrequencyTable, MixtureSpec, bias_rho, cell_prob, fit_zib_homogeneous,
                     fit_zip_homogeneous, fit_zip_regression, ht_psi_bar)
from occuhet._engine import psi_equation
from occuhet.cells import BetaBinomialCells

counts = st.dictionaries(st.integers(0, 12), st.integers(0, 60), min_size=1, max_size=8)
SETTINGS = settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])


@given(counts)
@SETTINGS
def test_frequency_table_invariants(table):
    assume(sum(table.values()) > 0)
    freq = FrequencyTable(table)
    assert sum(freq.counts.values()) == freq.n
    assert freq.m_plus == freq.n - freq.m0


@given(st.floats(0.05, 6.0), st.floats(0.3, 50.0))
@SETTINGS
def test_negative_binomial_normalized(mu, kappa):
    total = cell_prob(MixtureSpec("gamma", mu=mu, kappa=kappa), np.arange(4000)).sum()
    assert abs(total - 1.0) < 1e-12


@given(st.lists(st.floats(0.05, 8.0), min_size=1, max_size=4), st.data())
@SETTINGS
def test_finite_mixture_normalized(lams, data):
    raw = np.array(data.draw(st.lists(st.floats(0.05, 1.0), min_size=len(lams), max_size=len(lams))))
    spec = MixtureSpec("finite", intensities=tuple(lams), weights=tuple(raw / raw.sum()))
    assert abs(cell_prob(spec, np.arange(200)).sum() - 1.0) < 1e-12
    assert list(spec.intensities) == sorted(spec.intensities)


@given(st.integers(2, 20), st.floats(-4, 4), st.floats(-3, 10))
@SETTINGS
def test_beta_binomial_normalized(T, m, s):
    assert abs(BetaBinomialCells(T).probs(np.array([m, s]), np.arange(T + 1)).sum() - 1.0) < 1e-12


@given(st.integers(1, 50), st.lists(st.floats(0.01, 0.99), min_size=1, max_size=40))
@SETTINGS
def test_psi_equation_strictly_decreasing(mplus, pi_absent):
    score = psi_equation(float(mplus), np.array(pi_absent))
    vals = [score(p) for p in np.linspace(0.01, 0.99, 60)]
    assert np.all(np.diff(vals) < 0)


@given(st.floats(0.01, 20.0), st.one_of(st.just(0.0), st.floats(1e-8, 50.0)))
@SETTINGS
def test_rho_bounds(mu, sigma2):
    rho = bias_rho(mu, sigma2).rho
    assert 0 < rho <= 1
    assert (rho == 1.0) == (sigma2 == 0.0)


@given(st.floats(0.05, 10.0), st.floats(0.01, 20.0))
@SETTINGS
def test_rho_monotone(mu, sigma2):
    r = bias_rho(mu, sigma2).rho
    assert bias_rho(mu * 1.1, sigma2).rho > r
    assert bias_rho(mu, sigma2 * 1.1).rho < r


@given(counts)
@SETTINGS
def test_homogeneous_ml_equals_cl(table):
    freq = FrequencyTable(table)
    assume(freq.m_plus > 0 and freq.mean_positive() > 1.0 and freq.m0 > 0)
    ml, cl = fit_zip_homogeneous(freq, "ml"), fit_zip_homogeneous(freq, "cl")
    assume(ml.converged and not ml.boundary)
    np.testing.assert_allclose(ml.coef, cl.coef, atol=1e-6)


@given(st.dictionaries(st.integers(0, 4), st.integers(0, 40), min_size=2))
@SETTINGS
def test_zib_homogeneous_ml_equals_cl(table):
    freq = FrequencyTable(table)
    assume(freq.m_plus > 0 and 1.0 < freq.mean_positive() < 4 and freq.m0 > 0)
    ml, cl = fit_zib_homogeneous(freq, 4, "ml"), fit_zib_homogeneous(freq, 4, "cl")
    assume(ml.converged and not ml.boundary)
    np.testing.assert_allclose(ml.coef, cl.coef, atol=1e-6)


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_ht_at_least_naive(seed):
    rng = np.random.default_rng(seed)
    n = 80
    x = rng.standard_normal(n)
    y = np.where(rng.random(n) < 0.6, rng.poisson(np.exp(0.5 + 0.5 * x)), 0)
    ds = Dataset(y, 1, {"x": x})
    assume(np.sum(y > 0) >= 5 and len(set(y[y > 0])) >= 2)
    fit = fit_zip_regression(ds, "1 + x", "1", "cl")
    ht = ht_psi_bar(ds, fit, variance=False)
    assert ht.psi_bar_hat >= ds.m_plus / ds.n


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_fit_deterministic(seed):
    rng = np.random.default_rng(seed)
    y = np.where(rng.random(60) < 0.5, rng.poisson(2.0, 60), 0)
    assume(np.sum(y > 1) > 0)
    freq = FrequencyTable.from_counts(y)
    a, b = fit_zip_homogeneous(freq, "ml"), fit_zip_homogeneous(freq, "ml")
    assert a.to_json() == b.to_json()
