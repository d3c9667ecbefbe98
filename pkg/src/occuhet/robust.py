"""Heterogeneity bias, the constant-presence limit, and the Horvitz-Thompson
average-presence estimator.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .cells import regression_family
from .data import Dataset
from .optim import find_root
from .results import FitResult, _clean


@dataclass(frozen=True)
class BiasReport:
    mu: float
    sigma2: float
    rho: float
    psi: Optional[float] = None

    @property
    def asymptotic_limit(self) -> Optional[float]:
        return None if self.psi is None else self.rho * self.psi

    @property
    def relative_bias(self) -> float:
        return self.rho - 1.0

    @property
    def relative_bias_pct(self) -> float:
        return 100.0 * (self.rho - 1.0)

    def to_dict(self) -> dict:
        out = asdict(self)
        out.update(asymptotic_limit=self.asymptotic_limit, relative_bias=self.relative_bias,
                   relative_bias_pct=self.relative_bias_pct)
        return _clean(out)


def bias_rho(mu: float, sigma2: float, psi: Optional[float] = None) -> BiasReport:
    """Attenuation of the homogeneous-model presence estimate.

    Ignoring detection heterogeneity with mixing mean `mu` and variance
    `sigma2` drives the estimate towards ``rho * psi`` with
    ``rho = 1 / (1 + 0.5 sigma2 / (exp(mu) - 1 - mu))``.
    """
    if not mu > 0:
        raise ValueError("mu must be positive")
    if sigma2 < 0:
        raise ValueError("sigma2 must be nonnegative")
    rho = 1.0 / (1.0 + 0.5 * sigma2 / (np.expm1(mu) - mu))
    return BiasReport(mu=float(mu), sigma2=float(sigma2), rho=float(rho), psi=psi)


def gamma_bias_rho(mu: float, kappa: float, psi: Optional[float] = None) -> BiasReport:
    """`bias_rho` for a gamma mixing distribution (variance ``mu**2 / kappa``)."""
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    sigma2 = 0.0 if np.isinf(kappa) else mu ** 2 / kappa
    return bias_rho(mu, sigma2, psi)


def limit_omega(pi, psi):
    """Limit of the constant-presence estimator under presence heterogeneity.

    Returns ``(omega_exact, omega_approx)``: the root in ``(0, 1/max pi)``
    of ``sum (pi_i psi_i - omega pi_i) / (1 - omega pi_i)``, and the
    first-order value ``mean(psi * pi) / mean(pi)``.
    """
    pi = np.asarray(pi, dtype=float)
    psi = np.asarray(psi, dtype=float)
    if pi.size == 0 or pi.shape != psi.shape:
        raise ValueError("pi and psi must be nonempty and of equal length")
    if np.any((pi <= 0) | (pi > 1)) or np.any((psi <= 0) | (psi > 1)):
        raise ValueError("entries must lie in (0, 1]")

    def f(w):
        return float(np.sum(pi * (psi - w) / (1.0 - w * pi)))

    hi = (1.0 - 1e-12) / pi.max()
    approx = float(np.mean(psi * pi) / np.mean(pi))
    if f(hi) >= 0:
        return hi, approx
    return find_root(f, (0.0, hi), 1e-13), approx


@dataclass
class HtEstimate:
    psi_bar_hat: float
    se: float
    n: int
    detected: int
    pi_hat: np.ndarray
    site_term: float = float("nan")
    parameter_term: float = float("nan")

    @property
    def boundary(self) -> bool:
        return self.psi_bar_hat > 1.0

    @property
    def variance(self) -> float:
        return self.se ** 2

    def to_dict(self) -> dict:
        return _clean({
            "psi_bar_hat": self.psi_bar_hat, "se": self.se, "n": self.n,
            "detected": self.detected, "boundary": self.boundary,
            "variance_site_term": self.site_term,
            "variance_parameter_term": self.parameter_term,
        })


def _detection_terms(dataset: Dataset, fit: FitResult, family: Optional[str]):
    if fit.method != "cl":
        raise ValueError("the Horvitz-Thompson estimator needs a conditional-likelihood detection fit")
    if fit.model not in ("regression", "homogeneous"):
        raise ValueError("the Horvitz-Thompson estimator needs a homogeneous or regression detection fit")
    family = family or fit.family
    if family != fit.family:
        raise ValueError("family does not match the detection fit")
    if family == "binomial" and dataset.visits != fit.visits:
        raise ValueError("number of visits does not match the detection fit")
    X = dataset.design(" + ".join(["1"] + list(fit.detection_terms)))
    fam = regression_family(family, dataset.visits)
    det = dataset.y > 0
    XA = X[det]
    pi, dpi, _ = fam.detect(XA @ fit.theta_hat)
    return XA, pi, dpi


def ht_psi_bar(dataset: Dataset, detection_fit: FitResult, family: Optional[str] = None,
               variance: bool = True) -> HtEstimate:
    """Average presence ``n^-1 sum_{detected} 1 / pi_i``.

    ``pi_i`` is ``1 - exp(-lambda_i)`` (Poisson) or ``1 - (1 - p_i)^T``
    (binomial) at the conditional-likelihood detection estimates.
    """
    XA, pi, dpi = _detection_terms(dataset, detection_fit, family)
    if np.any(pi <= 0):
        raise ValueError("zero detection probability at a detected site")
    n = dataset.n
    est = HtEstimate(psi_bar_hat=float(np.sum(1.0 / pi) / n), se=float("nan"), n=n,
                     detected=int(pi.size), pi_hat=pi)
    if variance:
        site, par = _ht_variance_terms(est, XA, pi, dpi, detection_fit.theta_vcov)
        est.site_term, est.parameter_term = site, par
        est.se = float(np.sqrt(site + par))
    return est


def ht_gradient(XA, pi, dpi) -> np.ndarray:
    """``D = sum_{detected} x_i (d pi_i / d eta_i) / pi_i^2``."""
    return XA.T @ (dpi / pi ** 2)


def _ht_variance_terms(ht: HtEstimate, XA, pi, dpi, vtheta):
    if vtheta is None or not np.all(np.isfinite(vtheta)):
        raise ValueError("detection fit has no usable variance matrix")
    n2 = float(ht.n) ** 2
    site = float(np.sum((1.0 - ht.psi_bar_hat * pi) / pi ** 2)) / n2
    D = ht_gradient(XA, pi, dpi)
    par = float(D @ vtheta @ D) / n2
    return site, par


def ht_variance(dataset: Dataset, detection_fit: FitResult, ht: HtEstimate,
                family: Optional[str] = None) -> float:
    """Delta-method variance of the Horvitz-Thompson estimate.

    A per-site term with each unknown ``psi_i`` replaced by the estimate,
    plus ``D' var(theta_c) D``, both scaled by ``n^-2``.
    """
    XA, pi, dpi = _detection_terms(dataset, detection_fit, family)
    site, par = _ht_variance_terms(ht, XA, pi, dpi, detection_fit.theta_vcov)
    return site + par
