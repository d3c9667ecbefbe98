import numpy as np
import pytest
from scipy import stats

from occuhet import (Dataset, FrequencyTable, ModelError, fit_zib_homogeneous, fit_zib_mixture,
                     fit_zib_regression)
from occuhet.optim import find_root
from occuhet.sim import ScenarioConfig, generate
from occuhet.zib_models import truncated_binomial_mean


def test_trout_homogeneous(trout):
    fit = fit_zib_homogeneous(trout, 3, "cl")
    p_root = find_root(lambda p: 3 * p / (1 - (1 - p) ** 3) - 57 / 32, (1e-9, 1 - 1e-9), 1e-13)
    p = fit.natural["p"]
    assert abs(p - p_root) < 1e-9
    assert abs(p - 0.533) < 1e-3 and abs(fit.psi - 0.462) < 1e-3
    assert abs(fit.psi - 32 / (77 * (1 - (1 - p) ** 3))) < 1e-12


def test_trout_ml_equals_cl(trout):
    ml, cl = fit_zib_homogeneous(trout, 3, "ml"), fit_zib_homogeneous(trout, 3, "cl")
    np.testing.assert_allclose(ml.coef, cl.coef, atol=1e-6)


def test_perfect_detection_pattern():
    fit = fit_zib_homogeneous(FrequencyTable({0: 50, 3: 50}), 3, "cl")
    assert fit.boundary
    assert fit.natural["p"] > 1 - 1e-6
    assert abs(fit.psi - 0.5) < 1e-6


def test_single_visit_unidentifiable():
    with pytest.raises(ModelError, match="jointly unidentifiable"):
        fit_zib_homogeneous(FrequencyTable({0: 5, 1: 5}), 1)


def test_truncated_mean_monotone():
    p = np.linspace(1e-4, 1 - 1e-4, 2000)
    for T in (2, 3, 7):
        m = truncated_binomial_mean(p, T)
        assert np.all(np.diff(m) > 0)
        assert m[0] > 1 and m[-1] < T


def test_beta_binomial_recovers_truth():
    cfg = ScenarioConfig("zib-a", n=2000, replicates=2, seed=2, visits=5, mean_p=0.4, precision=4.0, psi=0.6)
    ds = generate(cfg, 0)
    ml = fit_zib_mixture(ds.frequency_table(), 5, "ml")
    cl = fit_zib_mixture(ds.frequency_table(), 5, "cl")
    np.testing.assert_allclose(ml.coef, cl.coef, atol=1e-6)
    truth = (np.log(0.4 / 0.6), np.log(4.0), 0.6)
    for j in range(3):
        assert abs(ml.coef[j] - truth[j]) < 3 * ml.se[j]
    assert abs(ml.m_plus - ml.n * ml.psi * (1 - ml.cell_probs[0])) < 1e-9


def test_beta_binomial_needs_three_visits():
    with pytest.raises(ModelError):
        fit_zib_mixture(FrequencyTable({0: 5, 1: 5, 2: 3}), 2)


def test_beta_binomial_binomial_boundary():
    rng = np.random.default_rng(0)
    y = np.where(rng.random(2000) < 0.5, rng.binomial(4, 0.5, 2000), 0)
    fit = fit_zib_mixture(FrequencyTable.from_counts(y), 4, "cl")
    if fit.boundary:
        assert "binomial_boundary" in fit.flags
        hom = fit_zib_homogeneous(FrequencyTable.from_counts(y), 4, "cl")
        assert abs(fit.psi - hom.psi) < 1e-8
    else:
        assert fit.natural["alpha"] + fit.natural["beta"] > 10


def test_regression_constant_matches_homogeneous(trout):
    y = np.repeat(list(trout.counts), list(trout.counts.values()))
    ds = Dataset(y, 3, family="binomial")
    for method in ("ml", "cl"):
        reg = fit_zib_regression(ds, "1", "1", method)
        hom = fit_zib_homogeneous(trout, 3, method)
        np.testing.assert_allclose(reg.coef, hom.coef, atol=1e-6)


def test_regression_prop2_ordering():
    diff, se_gap = 0.0, 0.0
    for seed in range(20):
        ds = generate(ScenarioConfig("zib-b", n=400, replicates=2, seed=seed, psi=0.75), 0)
        ml = fit_zib_regression(ds, "1 + x1 + x2", "1", "ml")
        cl = fit_zib_regression(ds, "1 + x1 + x2", "1", "cl")
        diff = diff + (cl.theta_vcov - ml.theta_vcov) / 20
        se_gap += (cl.psi_se - ml.psi_se) / 20
    assert np.linalg.eigvalsh(diff).min() >= -1e-8
    assert se_gap >= -1e-8


def test_regression_needs_binomial_dataset():
    with pytest.raises(ModelError):
        fit_zib_regression(Dataset([0, 1, 2], 1), "1", "1")


def test_binomial_scenario_b_unbiased():
    cfg = ScenarioConfig("zib-b", n=200, replicates=200, seed=9, psi=0.75)
    est = []
    for r in range(cfg.replicates):
        fit = fit_zib_regression(generate(cfg, r), "1 + x1 + x2", "1", "ml")
        if fit.converged and not fit.boundary:
            est.append(fit.psi)
    est = np.array(est)
    assert abs(est.mean() - 0.75) < 3 * est.std(ddof=1) / np.sqrt(est.size)


def test_beta_binomial_cells_sum():
    from occuhet.cells import BetaBinomialCells
    cells = BetaBinomialCells(8)
    for theta in ([0.0, 0.0], [2.0, -3.0], [-3.0, 8.0]):
        assert abs(cells.probs(np.array(theta), np.arange(9)).sum() - 1.0) < 1e-12
    a, b = 2.0, 3.0
    p = cells.probs(np.array([np.log(a / b), np.log(a + b)]), np.arange(9))
    np.testing.assert_allclose(p, stats.betabinom.pmf(np.arange(9), 8, a, b), rtol=1e-10)
