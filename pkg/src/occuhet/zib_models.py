"""Zero-inflated binomial occupancy models for presence-absence data.

Site totals ``y_i`` over ``T`` visits follow ``(1 - psi) I(0) + psi Bin(T, p)``,
with constant, beta-mixed or logistic-regression detection.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from scipy.special import logit

from ._engine import (FrequencyLikelihood, ModelError, boundary_fit, conditional_stage,
                      fit_frequency, fit_regression)
from .cells import BetaBinomialCells, BinomialCells, regression_family
from .data import Dataset, FrequencyTable
from .optim import OptimOptions, find_root
from .results import FitResult

P_TOL = 1e-13
P_EDGE = 1e-12
# Beta precision beyond this is treated as the binomial limit.
PRECISION_MAX = 1e6
SHAPE_MIN = 1e-4


def truncated_binomial_mean(p, T: int):
    """Mean of a zero-truncated ``Bin(T, p)``: ``T p / (1 - (1 - p)^T)``."""
    p = np.asarray(p, dtype=float)
    return T * p / -np.expm1(T * np.log1p(-p))


def solve_truncated_binomial(mean_positive: float, T: int) -> float:
    """Detection probability whose zero-truncated mean is `mean_positive`."""
    if not 1.0 < mean_positive < T:
        raise ModelError("mean of positive counts must lie strictly between 1 and T")
    return find_root(lambda p: truncated_binomial_mean(p, T) - mean_positive,
                     (P_EDGE, 1.0 - P_EDGE), P_TOL)


def detection_probability(p, T: int):
    """Probability of at least one detection in T visits, ``1 - (1 - p)^T``."""
    return -np.expm1(T * np.log1p(-np.asarray(p, dtype=float)))


def _check_T(T):
    T = int(T)
    if T < 2:
        raise ModelError("psi and p jointly unidentifiable with a single visit (T=1)")
    return T


def fit_zib_homogeneous(freq: FrequencyTable, T: int, method: str = "ml", *,
                        options: Optional[OptimOptions] = None, ml_init=None) -> FitResult:
    """Constant detection probability and constant presence.

    The conditional stage solves the zero-truncated binomial mean equation
    by bisection; ``psi = m+ / (n (1 - (1 - p)^T))``.
    """
    T = _check_T(T)
    if freq.m_plus == 0:
        raise ModelError("presence unidentifiable: no site has a detection")
    cells = BinomialCells(T)
    mean = freq.mean_positive()
    if mean >= T:
        return boundary_fit(freq, cells, np.array([logit(1.0 - P_EDGE)]), method, family="binomial",
                            model="homogeneous", visits=T, flags=["detection_boundary"])
    if mean <= 1.0:
        return boundary_fit(freq, cells, np.array([logit(P_EDGE)]), method, family="binomial",
                            model="homogeneous", visits=T, flags=["detection_boundary"])
    p = solve_truncated_binomial(mean, T)
    return fit_frequency(freq, cells, method, family="binomial", model="homogeneous", visits=T,
                         theta_cl=np.array([logit(p)]), ml_init=ml_init, options=options)


def _binomial_boundary(freq, T, method, options):
    base = fit_zib_homogeneous(freq, T, method, options=options)
    vcov = np.full((3, 3), np.nan)
    vcov[0, 0] = base.vcov[0, 0]
    vcov[0, 2] = vcov[2, 0] = base.vcov[0, 1]
    vcov[2, 2] = base.vcov[1, 1]
    p = base.natural["p"]
    nat = {"alpha": float("inf"), "beta": float("inf"), "mean_p": p, "psi": base.psi}
    return FitResult(
        family="binomial", model="beta", method=method,
        names=["logit_mean_p", "log_precision", "psi"],
        coef=np.array([base.coef[0], np.inf, base.psi]), vcov=vcov, n_detection=2,
        psi=base.psi, psi_se=base.psi_se, loglik=base.loglik, n=base.n, m_plus=base.m_plus,
        converged=base.converged, boundary=True, visits=T, natural=nat,
        natural_se={"mean_p": base.natural_se["p"], "psi": base.psi_se},
        conditional_loglik=base.conditional_loglik, cell_probs=base.cell_probs,
        flags=base.flags + ["binomial_boundary"], diagnostics=base.diagnostics,
    )


def fit_zib_mixture(freq: FrequencyTable, T: int, method: str = "ml", *,
                    options: Optional[OptimOptions] = None, ml_init=None) -> FitResult:
    """Beta-binomial detection heterogeneity with constant presence.

    Needs ``T >= 3``. A precision diverging past ``PRECISION_MAX`` is
    reported as the binomial-boundary fit; a shape parameter collapsing
    below ``SHAPE_MIN`` is flagged.
    """
    T = int(T)
    if T < 3:
        raise ModelError("beta-binomial detection needs at least three visits")
    if freq.m_plus == 0:
        raise ModelError("presence unidentifiable: no site has a detection")
    cells = BetaBinomialCells(T)
    lik = FrequencyLikelihood(freq, cells)
    mean = min(max(freq.mean_positive() / T, 0.05), 0.95)
    start = _grid(lik.conditional, [logit(mean) + np.linspace(-2.0, 1.0, 7), np.linspace(-1.0, 6.0, 8)])
    theta, _, info = conditional_stage(lik, start, options)
    if theta[1] > np.log(PRECISION_MAX):
        return _binomial_boundary(freq, T, method, options)
    fit = fit_frequency(freq, cells, method, family="binomial", model="beta", visits=T,
                        theta_cl=theta if info["converged"] else None, theta_init=theta,
                        ml_init=ml_init, options=options)
    if fit.coef[1] > np.log(PRECISION_MAX):
        return _binomial_boundary(freq, T, method, options)
    if not info["converged"]:
        fit.converged = False
        fit.flags.append("conditional_stage_not_converged")
    if min(fit.natural["alpha"], fit.natural["beta"]) < SHAPE_MIN:
        fit.boundary = True
        fit.flags.append("shape_boundary")
    return fit


def _grid(objective, axes):
    best, arg = -np.inf, None
    for point in np.array(np.meshgrid(*axes, indexing="ij")).reshape(len(axes), -1).T:
        with np.errstate(all="ignore"):
            v = objective(point)
        if np.isfinite(v) and v > best:
            best, arg = v, point
    return arg


def fit_zib_regression(dataset: Dataset, detection: Optional[str] = "1", occurrence: Optional[str] = "1",
                       method: str = "ml", *, options: Optional[OptimOptions] = None,
                       ml_init=None) -> FitResult:
    """Logistic detection ``p_i = H(theta' x_i)`` with constant or logistic presence.

    The conditional stage is the zero-truncated binomial logistic
    regression over detected sites; presence then follows from the
    profile score with ``pi_i = 1 - (1 - p_i)^T``.
    """
    if dataset.family != "binomial":
        raise ModelError("binomial models need a binomial dataset")
    T = _check_T(dataset.visits)
    fam = regression_family("binomial", T)
    return fit_regression(dataset, fam, detection, occurrence, method, options, ml_init)
