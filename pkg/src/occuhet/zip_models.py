"""Zero-inflated Poisson occupancy models for abundance data.

Homogeneous, mixture-detection (gamma or finite Poisson mixture) and
log-linear regression detection models, each fitted by full maximum
likelihood (``method="ml"``) or two-stage conditional likelihood
(``method="cl"``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._engine import (FrequencyLikelihood, ModelError, boundary_fit, conditional_stage,
                      fit_frequency, fit_regression)
from .cells import FiniteMixtureCells, NegBinCells, PoissonCells, regression_family
from .data import Dataset, FrequencyTable
from .optim import OptimOptions, find_root
from .results import FitResult

# Dispersion beyond this is treated as the Poisson limit.
KAPPA_MAX = 1e6
LAMBDA_TOL = 1e-13


def truncated_poisson_mean(lam):
    """Mean of a zero-truncated Poisson, ``lam / (1 - exp(-lam))``."""
    lam = np.asarray(lam, dtype=float)
    return lam / -np.expm1(-lam)


def solve_truncated_poisson(mean_positive: float) -> float:
    """Intensity whose zero-truncated mean equals `mean_positive` (> 1)."""
    if not mean_positive > 1.0:
        raise ModelError("mean of positive counts must exceed 1")
    return find_root(lambda lam: truncated_poisson_mean(lam) - mean_positive,
                     (1e-8, mean_positive), LAMBDA_TOL)


def fit_zip_homogeneous(freq: FrequencyTable, method: str = "ml", *,
                        options: Optional[OptimOptions] = None, ml_init=None) -> FitResult:
    """Constant intensity and constant presence.

    The conditional stage solves the zero-truncated mean equation, then
    sets ``psi = m+ / (n (1 - exp(-lambda)))``. When every detected site
    has a count of one the intensity is pinned at zero and the fit is
    returned with a boundary flag.
    """
    if freq.m_plus == 0:
        raise ModelError("presence unidentifiable: no site has a detection")
    mean = freq.mean_positive()
    cells = PoissonCells()
    if mean <= 1.0:
        return boundary_fit(freq, cells, np.array([np.log(1e-8)]), method, family="poisson",
                            model="homogeneous", flags=["detection_boundary"])
    lam = solve_truncated_poisson(mean)
    return fit_frequency(freq, cells, method, family="poisson", model="homogeneous",
                         theta_cl=np.array([np.log(lam)]), ml_init=ml_init, options=options)


def _grid_start(objective, axes):
    best, arg = -np.inf, None
    for point in np.array(np.meshgrid(*axes, indexing="ij")).reshape(len(axes), -1).T:
        with np.errstate(all="ignore"):
            try:
                v = objective(point)
            except (FloatingPointError, ValueError):
                continue
        if np.isfinite(v) and v > best:
            best, arg = v, point
    return arg


def _poisson_boundary(freq, method, options):
    base = fit_zip_homogeneous(freq, method, options=options)
    k = 2
    vcov = np.full((k + 1, k + 1), np.nan)
    vcov[0, 0] = base.vcov[0, 0]
    vcov[0, 2] = vcov[2, 0] = base.vcov[0, 1]
    vcov[2, 2] = base.vcov[1, 1]
    nat = {"mu": base.natural["lambda"], "kappa": float("inf"), "psi": base.psi}
    nat_se = {"mu": base.natural_se["lambda"], "kappa": float("nan"), "psi": base.psi_se}
    return FitResult(
        family="poisson", model="gamma", method=method, names=["log_mu", "log_kappa", "psi"],
        coef=np.array([base.coef[0], np.inf, base.psi]), vcov=vcov, n_detection=2,
        psi=base.psi, psi_se=base.psi_se, loglik=base.loglik, n=base.n, m_plus=base.m_plus,
        converged=base.converged, boundary=True, natural=nat, natural_se=nat_se,
        conditional_loglik=base.conditional_loglik, cell_probs=base.cell_probs,
        flags=base.flags + ["poisson_boundary"], diagnostics=base.diagnostics,
    )


def _finite_starts(freq, C):
    ks, ms = freq.positive()
    order = np.repeat(ks, ms.astype(int)).astype(float)
    starts = []
    for spread in (1.0, 0.5, 2.0):
        qs = np.quantile(order, (np.arange(C) + 0.5) / C)
        lam = np.maximum(qs * spread ** (np.arange(C) - (C - 1) / 2), 0.05)
        lam = np.maximum.accumulate(lam + 1e-3 * np.arange(C))
        starts.append(np.concatenate((np.log(lam), np.zeros(C - 1))))
    return starts


def fit_zip_mixture(freq: FrequencyTable, kind: str = "gamma", method: str = "ml", *,
                    components: int = 2, options: Optional[OptimOptions] = None,
                    ml_init=None) -> FitResult:
    """Mixed-intensity detection with constant presence.

    ``kind="gamma"`` gives negative-binomial counts with working
    parameters ``(log mu, log kappa)``; a dispersion diverging past
    ``KAPPA_MAX`` is reported as the Poisson-boundary fit, and one
    collapsing below ``1 / KAPPA_MAX`` is flagged as a boundary fit.
    ``kind="finite"`` mixes `components` Poisson intensities, reported in
    increasing order.
    """
    if freq.m_plus == 0:
        raise ModelError("presence unidentifiable: no site has a detection")
    if kind == "gamma":
        cells = NegBinCells()
        if len(freq.positive()[0]) < 2:
            raise ModelError("gamma mixture needs at least two distinct positive counts")
        lik = FrequencyLikelihood(freq, cells)
        mean = max(freq.mean_positive(), 1.0)
        start = _grid_start(lik.conditional, [np.log(mean) + np.linspace(-2.0, 1.0, 7),
                                              np.linspace(-3.0, 6.0, 10)])
        theta, _, info = conditional_stage(lik, start, options)
        if theta[1] > np.log(KAPPA_MAX):
            return _poisson_boundary(freq, method, options)
        fit = fit_frequency(freq, cells, method, family="poisson", model="gamma",
                            theta_cl=theta if info["converged"] else None,
                            theta_init=theta, ml_init=ml_init, options=options)
        if not info["converged"]:
            fit.converged = False
            fit.flags.append("conditional_stage_not_converged")
        if fit.coef[1] > np.log(KAPPA_MAX):
            return _poisson_boundary(freq, method, options)
        if fit.coef[1] < -np.log(KAPPA_MAX):
            # truncated counts tend to a logarithmic series; p+ and psi degenerate
            fit.boundary = True
            fit.flags.append("dispersion_zero_boundary")
        return fit

    if kind != "finite":
        raise ValueError(f"unknown mixture kind {kind!r}")
    C = int(components)
    if C == 1:
        fit = fit_zip_homogeneous(freq, method, options=options, ml_init=ml_init)
        fit.model = "finite"
        fit.names = ["log_lambda1", "psi"]
        fit.natural = {"lambda1": fit.natural["lambda"], "weight1": 1.0, "psi": fit.psi}
        fit.natural_se = {"lambda1": fit.natural_se.get("lambda", float("nan")), "weight1": 0.0,
                          "psi": fit.psi_se}
        return fit
    if len(freq.positive()[0]) < 2 * C - 1:
        raise ModelError(f"finite mixture with {C} components needs at least {2 * C - 1} distinct positive counts")
    cells = FiniteMixtureCells(C)
    lik = FrequencyLikelihood(freq, cells)
    best = None
    for start in _finite_starts(freq, C):
        theta, _, info = conditional_stage(lik, start, options)
        val = lik.conditional(theta)
        if best is None or val > best[0] + 1e-9:
            best = (val, theta, info)
    _, theta, info = best
    theta = cells.sorted_theta(theta)
    fit = fit_frequency(freq, cells, method, family="poisson", model="finite",
                        theta_cl=theta, ml_init=ml_init, options=options)
    _sort_components(fit, cells)
    if not info["converged"]:
        fit.converged = False
        fit.flags.append("conditional_stage_not_converged")
    return fit


def _sort_components(fit: FitResult, cells: FiniteMixtureCells):
    C, k = cells.C, cells.dim
    theta = fit.coef[:k]
    order = np.argsort(theta[:C], kind="stable")
    if np.all(order == np.arange(C)):
        return
    M = np.zeros((k, k))
    M[:C, :C] = np.eye(C)[order]
    # eta_full = (0, eta_2..C); sorted logits re-referenced to the new first component
    E = np.zeros((C, C - 1))
    E[1:, :] = np.eye(C - 1)
    Ep = E[order]
    M[C:, C:] = Ep[1:] - Ep[0]
    big = np.eye(len(fit.coef))
    big[:k, :k] = M
    fit.coef = big @ fit.coef
    fit.vcov = big @ fit.vcov @ big.T
    nat, nat_se = {}, {}
    lam = [fit.natural[f"lambda{c + 1}"] for c in order]
    w = [fit.natural[f"weight{c + 1}"] for c in order]
    lam_se = [fit.natural_se[f"lambda{c + 1}"] for c in order]
    w_se = [fit.natural_se[f"weight{c + 1}"] for c in order]
    for c in range(C):
        nat[f"lambda{c + 1}"], nat_se[f"lambda{c + 1}"] = lam[c], lam_se[c]
    for c in range(C):
        nat[f"weight{c + 1}"], nat_se[f"weight{c + 1}"] = w[c], w_se[c]
    nat["psi"], nat_se["psi"] = fit.natural["psi"], fit.natural_se["psi"]
    fit.natural, fit.natural_se = nat, nat_se


def fit_zip_regression(dataset: Dataset, detection: Optional[str] = "1", occurrence: Optional[str] = "1",
                       method: str = "ml", *, options: Optional[OptimOptions] = None,
                       ml_init=None) -> FitResult:
    """Log-linear detection intensity with constant or logistic presence.

    The conditional stage maximizes the zero-truncated Poisson regression
    likelihood over detected sites only. A constant presence probability
    is then the bisection root of the profile score; a presence
    regression maximizes the profile likelihood with intensities fixed.
    """
    fam = regression_family("poisson", dataset.visits)
    return fit_regression(dataset, fam, detection, occurrence, method, options, ml_init)


@dataclass(frozen=True)
class ScoreComponents:
    """Per-site estimating-function pieces at a constant-presence fit."""

    g: np.ndarray
    h: np.ndarray
    pi: np.ndarray
    indicator: np.ndarray
    weight: np.ndarray
    conditional_score: np.ndarray
    ml_score: np.ndarray

    def sums(self) -> dict:
        return {
            "sum_g": float(self.g.sum()),
            "sum_h": float(self.h.sum()),
            "conditional_score_norm": float(np.linalg.norm(self.conditional_score)),
            "ml_score_norm": float(np.linalg.norm(self.ml_score)),
        }


def score_components(fit: FitResult, dataset: Dataset, detection: Optional[str] = None) -> ScoreComponents:
    """Per-site ``g_i`` (detection) and ``h_i`` (presence) estimating functions.

    ``g_i = I_i (d log f(y_i) - d log pi_i)`` on the linear-predictor scale,
    which for Poisson counts is ``y_i - I_i lambda_i / pi_i``, and
    ``h_i = (I_i - psi pi_i) / (psi (1 - psi pi_i))``. The conditional
    score is ``X' g``; the full-likelihood score is
    ``(X' (g + w h), sum h)`` with ``w_i = psi (d pi_i / d eta_i) / pi_i``.
    """
    if fit.occurrence_coef.size != 1:
        raise ModelError("score components need a constant presence probability")
    if detection is None:
        detection = " + ".join(["1"] + list(fit.detection_terms))
    fam = regression_family(dataset.family, dataset.visits)
    X = dataset.design(detection)
    if X.shape[1] != fit.n_detection:
        raise ModelError("detection formula does not match the fit")
    eta = X @ fit.theta_hat
    psi = fit.psi
    y = dataset.y.astype(float)
    ind = (y > 0).astype(float)
    _, dlp = fam.logpmf(y, eta)
    pi, dpi, _ = fam.detect(eta)
    g = ind * (dlp - dpi / pi)
    h = (ind - psi * pi) / (psi * (1.0 - psi * pi))
    w = psi * dpi / pi
    return ScoreComponents(
        g=g, h=h, pi=pi, indicator=ind, weight=w,
        conditional_score=X.T @ g,
        ml_score=np.append(X.T @ (g + w * h), h.sum()),
    )
