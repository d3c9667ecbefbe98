import numpy as np
import pytest
from scipy import stats

from occuhet import MixtureSpec, cell_prob
from occuhet.cells import (BetaBinomialCells, BinomialCells, FiniteMixtureCells, NegBinCells,
                           PoissonCells, regression_family)
from occuhet.optim import numeric_gradient


def test_gamma_poisson_limit():
    assert abs(cell_prob(MixtureSpec("gamma", mu=2.0, kappa=1e8), 0) - np.exp(-2.0)) < 1e-6


def test_finite_single_component():
    assert abs(cell_prob(MixtureSpec("finite", intensities=(1.0,), weights=(1.0,)), 1) - np.exp(-1.0)) < 1e-14


def test_geometric_case():
    assert abs(cell_prob(MixtureSpec("gamma", mu=1.0, kappa=1.0), 0) - 0.5) < 1e-14


def test_gamma_matches_scipy_negative_binomial():
    mu, kappa = 2.5, 0.7
    ks = np.arange(30)
    ours = cell_prob(MixtureSpec("gamma", mu=mu, kappa=kappa), ks)
    ref = stats.nbinom.pmf(ks, kappa, kappa / (kappa + mu))
    np.testing.assert_allclose(ours, ref, rtol=1e-12)


def test_finite_sorted_and_normalized():
    spec = MixtureSpec("finite", intensities=(3.0, 0.5), weights=(0.4, 0.6))
    assert spec.intensities == (0.5, 3.0)
    assert spec.weights == (0.6, 0.4)
    total = cell_prob(spec, np.arange(80)).sum()
    assert abs(total - 1.0) < 1e-12


def test_invalid_specs():
    with pytest.raises(ValueError):
        MixtureSpec("gamma", mu=1.0, kappa=0.0)
    with pytest.raises(ValueError):
        MixtureSpec("finite", intensities=(1.0, 2.0), weights=(0.5, 0.6))
    with pytest.raises(ValueError):
        cell_prob(MixtureSpec("gamma"), -1)


def test_beta_binomial_degenerate_limit():
    cells = BetaBinomialCells(3)
    p = cells.probs(np.array([0.0, np.log(2e8)]), np.arange(4))
    np.testing.assert_allclose(p, stats.binom.pmf(np.arange(4), 3, 0.5), atol=1e-6)


@pytest.mark.parametrize("cells,theta,ks", [
    (PoissonCells(), np.array([0.3]), np.arange(40)),
    (NegBinCells(), np.array([0.7, -0.4]), np.arange(400)),
    (FiniteMixtureCells(3), np.array([-1.0, 0.5, 1.5, 0.2, -0.3]), np.arange(60)),
    (BinomialCells(4), np.array([-0.2]), np.arange(5)),
    (BetaBinomialCells(6), np.array([0.4, 1.1]), np.arange(7)),
])
def test_normalization_and_gradients(cells, theta, ks):
    lp, dlp = cells.log_probs(theta, ks)
    assert abs(np.exp(lp).sum() - 1.0) < 1e-12
    for k in (0, 1, 3):
        num = numeric_gradient(lambda t: cells.log_probs(t, np.array([k]))[0][0], theta)
        np.testing.assert_allclose(dlp[k], num, atol=1e-7)


@pytest.mark.parametrize("family,T", [("poisson", 1), ("binomial", 3)])
def test_regression_family_derivatives(family, T):
    fam = regression_family(family, T)
    eta = np.linspace(-2.0, 2.0, 9)
    y = np.minimum(np.arange(9) % 4, T if family == "binomial" else 10)
    _, d = fam.logpmf(y, eta)
    h = 1e-6
    num = (fam.logpmf(y, eta + h)[0] - fam.logpmf(y, eta - h)[0]) / (2 * h)
    np.testing.assert_allclose(d, num, atol=1e-6)
    pi, dpi, _ = fam.detect(eta)
    num = (fam.detect(eta + h)[0] - fam.detect(eta - h)[0]) / (2 * h)
    np.testing.assert_allclose(dpi, num, atol=1e-7)


def test_binomial_detect_mapping():
    pi = regression_family("binomial", 3).detect(np.array([0.0]))[0]
    assert abs(pi[0] - 0.875) < 1e-15
