import numpy as np
import pytest

from occuhet import (Dataset, FrequencyTable, ModelError, fit_zip_homogeneous, fit_zip_mixture,
                     fit_zip_regression, score_components)
from occuhet.optim import numeric_gradient
from occuhet.sim import ScenarioConfig, generate

from conftest import regression_data

SMALL = FrequencyTable({0: 85, 1: 10, 2: 5})


def _grid_max(loglik, lam_grid, psi_grid):
    vals = np.array([[loglik(a, b) for b in psi_grid] for a in lam_grid])
    i, j = np.unravel_index(np.argmax(vals), vals.shape)
    return lam_grid[i], psi_grid[j]


def test_homogeneous_oracle():
    fit = fit_zip_homogeneous(SMALL, "cl")
    lam = fit.natural["lambda"]
    assert abs(lam / -np.expm1(-lam) - 4.0 / 3.0) < 1e-10
    assert abs(lam - 0.606) < 1e-3 and abs(fit.psi - 0.330) < 1e-3

    def loglik(lam, psi):
        return (85 * np.log(1 - psi + psi * np.exp(-lam)) + 15 * np.log(psi) - 15 * lam
                + 20 * np.log(lam) - 5 * np.log(2.0))

    g_lam, g_psi = _grid_max(loglik, np.linspace(0.4, 0.8, 401), np.linspace(0.2, 0.5, 301))
    assert abs(g_lam - lam) < 2e-3 and abs(g_psi - fit.psi) < 2e-3


def test_homogeneous_ml_equals_cl():
    ml, cl = fit_zip_homogeneous(SMALL, "ml"), fit_zip_homogeneous(SMALL, "cl")
    np.testing.assert_allclose(ml.coef, cl.coef, atol=1e-8)
    np.testing.assert_allclose(ml.se, cl.se, rtol=1e-4)
    assert abs(ml.loglik - cl.loglik) < 1e-10


def test_no_excess_zeros_boundary():
    fit = fit_zip_homogeneous(FrequencyTable({0: 0, 3: 50}), "cl")
    assert fit.boundary and fit.psi >= 1.0


def test_unidentifiable():
    with pytest.raises(ModelError, match="presence unidentifiable"):
        fit_zip_homogeneous(FrequencyTable({0: 10}))


def test_all_ones_flagged():
    fit = fit_zip_homogeneous(FrequencyTable({0: 10, 1: 5}), "cl")
    assert fit.boundary and "detection_boundary" in fit.flags


def test_psi_identity_cl():
    for fit in (fit_zip_homogeneous(SMALL, "cl"),
                fit_zip_mixture(FrequencyTable({0: 120, 1: 30, 2: 20, 3: 10, 5: 8, 9: 4}), "gamma", "cl")):
        p_plus = 1.0 - fit.cell_probs[0]
        assert abs(fit.m_plus - fit.n * fit.psi * p_plus) < 1e-9


def test_gamma_mixture_recovers_truth():
    ds = generate(ScenarioConfig("a", n=2000, replicates=2, seed=3, mu=2.0, kappa=1.0, psi=0.5), 0)
    fit = fit_zip_mixture(ds.frequency_table(), "gamma", "ml")
    assert fit.converged
    for j, truth in enumerate((np.log(2.0), 0.0, 0.5)):
        assert abs(fit.coef[j] - truth) < 3 * fit.se[j]


def test_gamma_ml_equals_cl():
    freq = FrequencyTable({0: 120, 1: 30, 2: 20, 3: 10, 5: 8, 9: 4})
    ml, cl = fit_zip_mixture(freq, "gamma", "ml"), fit_zip_mixture(freq, "gamma", "cl")
    np.testing.assert_allclose(ml.coef, cl.coef, atol=1e-6)
    assert ml.natural["kappa"] > 0


def test_gamma_on_underdispersed_data_hits_poisson_boundary():
    freq = FrequencyTable({0: 100, 1: 20, 2: 20, 3: 20})
    fit = fit_zip_mixture(freq, "gamma", "cl")
    hom = fit_zip_homogeneous(freq, "cl")
    assert fit.boundary and "poisson_boundary" in fit.flags
    assert abs(fit.natural["mu"] - hom.natural["lambda"]) < 1e-4


def test_gamma_on_poisson_data_close_to_homogeneous():
    rng = np.random.default_rng(4)
    y = np.where(rng.random(3000) < 0.6, rng.poisson(1.5, 3000), 0)
    freq = FrequencyTable.from_counts(y)
    fit, hom = fit_zip_mixture(freq, "gamma", "ml"), fit_zip_homogeneous(freq, "ml")
    if fit.boundary:
        assert abs(fit.natural["mu"] - hom.natural["lambda"]) < 1e-4
    else:
        assert fit.natural["kappa"] > 20
        assert abs(fit.natural["mu"] - hom.natural["lambda"]) < 0.05


def test_finite_mixture():
    rng = np.random.default_rng(5)
    n = 3000
    lam = np.where(rng.random(n) < 0.6, 0.5, 4.0)
    y = np.where(rng.random(n) < 0.7, rng.poisson(lam), 0)
    freq = FrequencyTable.from_counts(y)
    ml, cl = fit_zip_mixture(freq, "finite", "ml"), fit_zip_mixture(freq, "finite", "cl")
    np.testing.assert_allclose(ml.coef, cl.coef, atol=1e-6)
    assert ml.natural["lambda1"] < ml.natural["lambda2"]
    assert abs(ml.natural["lambda2"] - 4.0) < 0.5


def test_finite_one_component_nests_homogeneous():
    a = fit_zip_mixture(SMALL, "finite", "ml", components=1)
    b = fit_zip_homogeneous(SMALL, "ml")
    np.testing.assert_allclose(a.coef, b.coef, atol=1e-6)


def test_finite_insufficient_support():
    with pytest.raises(ModelError):
        fit_zip_mixture(SMALL, "finite", components=2)


def test_regression_constant_matches_homogeneous():
    ds = generate(ScenarioConfig("a", replicates=2, seed=1, kappa=5.0), 0)
    for method in ("ml", "cl"):
        reg = fit_zip_regression(ds, "1", "1", method)
        hom = fit_zip_homogeneous(ds.frequency_table(), method)
        np.testing.assert_allclose(reg.coef, hom.coef, atol=1e-6)
        assert abs(reg.psi_se - hom.psi_se) < 1e-5


def test_two_site_boundary_root():
    ds = Dataset([1, 0], 1)
    from occuhet._engine import solve_psi
    psi, at_boundary = solve_psi(1.0, np.array([0.5]))
    assert psi == 1.0 and at_boundary
    fit = fit_zip_regression(ds, "1", "1", "cl")
    assert fit.boundary


def test_regression_scores_vanish():
    ds = regression_data(seed=2)
    for method in ("ml", "cl"):
        fit = fit_zip_regression(ds, "1 + x1 + x2", "1", method)
        sc = score_components(fit, ds)
        if method == "cl":
            assert np.linalg.norm(sc.conditional_score) < 1e-6
        else:
            assert np.linalg.norm(sc.ml_score) < 1e-6


def test_score_components_zero_site():
    ds = regression_data(seed=3)
    fit = fit_zip_regression(ds, "1 + x1 + x2", "1", "cl")
    sc = score_components(fit, ds)
    zero = ds.y == 0
    assert np.all(sc.g[zero] == 0.0)
    assert np.all(np.isfinite(sc.h))


def test_conditional_score_matches_numeric_gradient():
    from occuhet._engine import RegressionLikelihood
    from occuhet.cells import regression_family
    ds = regression_data(seed=6)
    X = ds.design("1 + x1 + x2")
    lik = RegressionLikelihood(ds, regression_family("poisson", 1), X, X[:, :1])
    theta = np.array([0.8, -0.7, 1.1])
    np.testing.assert_allclose(lik.conditional_grad(theta), numeric_gradient(lik.conditional, theta), rtol=1e-6)


def test_prop2_variance_ordering():
    # the ordering holds for the information matrices, so it is checked on
    # the variance estimates averaged over datasets rather than per fit
    diff, se_gap = 0.0, 0.0
    for seed in range(20):
        ds = generate(ScenarioConfig("b", n=400, replicates=2, seed=seed, psi=0.75), 0)
        ml = fit_zip_regression(ds, "1 + x1 + x2", "1", "ml")
        cl = fit_zip_regression(ds, "1 + x1 + x2", "1", "cl")
        diff = diff + (cl.theta_vcov - ml.theta_vcov) / 20
        se_gap += (cl.psi_se - ml.psi_se) / 20
    assert np.linalg.eigvalsh(diff).min() >= -1e-8
    assert se_gap >= -1e-8


def test_occurrence_regression():
    ds = generate(ScenarioConfig("c", n=1000, replicates=2, seed=8, case="c0"), 0)
    for method in ("ml", "cl"):
        fit = fit_zip_regression(ds, "1 + x1 + x2", "1 + x1", method)
        assert fit.converged
        gamma = fit.occurrence_coef
        assert np.all(np.abs(gamma - 1.0) < 4 * fit.se[-2:])
        assert 0 < fit.psi < 1


def test_separation_flagged():
    x = np.r_[np.zeros(30), np.ones(30)]
    y = np.r_[np.zeros(30, dtype=int), np.full(30, 3)]
    fit = fit_zip_regression(Dataset(y, 1, {"x": x}), "1", "1 + x", "ml")
    assert not fit.converged


def test_rank_deficiency():
    x = np.linspace(0, 1, 40)
    ds = Dataset(np.arange(40) % 3, 1, {"a": x, "b": 2 * x})
    with pytest.raises(ModelError):
        fit_zip_regression(ds, "1 + a + b", "1", "cl")


def test_to_json_round_trip():
    import json
    doc = json.loads(fit_zip_homogeneous(SMALL, "ml").to_json())
    assert doc["method"] == "ml"
    assert [p["name"] for p in doc["parameters"]] == ["log_lambda", "psi"]
    assert len(doc["vcov"]) == 4
