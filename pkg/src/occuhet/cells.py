"""Count distributions of an occupied site.

Two flavours live here. Cell models give ``log p_k(theta)`` and its
gradient on the working scale for a vector of counts ``k``; they drive the
frequency-table likelihoods. Regression families give per-site log masses
as functions of a linear predictor; they drive the covariate models.

Ratios of gamma functions at integer offsets are evaluated as finite sums
of logs so that near-degenerate mixing (huge dispersion or precision)
keeps full precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, gammaln, log_expit, logsumexp


def _rising(a: float, ks: np.ndarray):
    """``sum_{j<k} log(a + j)`` and ``sum_{j<k} 1/(a + j)`` for each k."""
    ks = np.asarray(ks, dtype=int)
    top = int(ks.max()) if ks.size else 0
    j = np.arange(top, dtype=float)
    logs = np.concatenate(([0.0], np.cumsum(np.log(a + j))))
    invs = np.concatenate(([0.0], np.cumsum(1.0 / (a + j))))
    return logs[ks], invs[ks]


def _log_choose(T, k):
    return gammaln(T + 1.0) - gammaln(k + 1.0) - gammaln(T - k + 1.0)


class CellModel:
    """Base class: ``p_k(theta)`` for an occupied site."""

    names: tuple = ()

    @property
    def dim(self) -> int:
        return len(self.names)

    def log_probs(self, theta, ks):
        """Return ``(log p_k, d log p_k / d theta)`` with shapes (K,), (K, dim)."""
        raise NotImplementedError

    def probs(self, theta, ks) -> np.ndarray:
        return np.exp(self.log_probs(theta, ks)[0])

    def natural(self, theta) -> dict:
        raise NotImplementedError

    def natural_jacobian(self, theta) -> np.ndarray:
        """Jacobian of ``natural(theta).values()`` with respect to `theta`."""
        raise NotImplementedError

    def support_max(self):
        return None


class PoissonCells(CellModel):
    names = ("log_lambda",)

    def log_probs(self, theta, ks):
        ks = np.asarray(ks, dtype=float)
        lam = np.exp(theta[0])
        lp = ks * theta[0] - lam - gammaln(ks + 1.0)
        return lp, (ks - lam)[:, None]

    def natural(self, theta):
        return {"lambda": float(np.exp(theta[0]))}

    def natural_jacobian(self, theta):
        return np.array([[np.exp(theta[0])]])


class NegBinCells(CellModel):
    """Gamma-mixed Poisson: mean ``mu``, dispersion ``kappa`` (mixing variance mu**2/kappa)."""

    names = ("log_mu", "log_kappa")

    def log_probs(self, theta, ks):
        ks = np.asarray(ks, dtype=int)
        mu, kappa = np.exp(theta[0]), np.exp(theta[1])
        kf = ks.astype(float)
        rl, rd = _rising(kappa, ks)
        log_mix = np.log(mu) - np.log(kappa + mu)
        lp = rl - gammaln(kf + 1.0) - kappa * np.log1p(mu / kappa) + kf * log_mix
        d_mu = kappa * (kf - mu) / (kappa + mu)
        d_kappa = kappa * (rd - np.log1p(mu / kappa) + (mu - kf) / (kappa + mu))
        return lp, np.column_stack([d_mu, d_kappa])

    def natural(self, theta):
        return {"mu": float(np.exp(theta[0])), "kappa": float(np.exp(theta[1]))}

    def natural_jacobian(self, theta):
        return np.diag(np.exp(theta))


class FiniteMixtureCells(CellModel):
    """Mixture of ``C`` Poisson components.

    Working parameters are the log intensities followed by ``C - 1``
    softmax logits (the first component is the reference).
    """

    def __init__(self, components: int):
        if components < 1:
            raise ValueError("need at least one component")
        self.C = int(components)
        self.names = tuple(f"log_lambda{c + 1}" for c in range(self.C)) + tuple(
            f"mix_logit{c + 1}" for c in range(1, self.C))

    def weights(self, theta):
        eta = np.concatenate(([0.0], theta[self.C:]))
        return np.exp(eta - logsumexp(eta))

    def log_probs(self, theta, ks):
        ks = np.asarray(ks, dtype=float)
        C = self.C
        loglam = np.asarray(theta[:C])
        lam = np.exp(loglam)
        w = self.weights(theta)
        comp = np.log(w)[None, :] + ks[:, None] * loglam[None, :] - lam[None, :] - gammaln(ks + 1.0)[:, None]
        lp = logsumexp(comp, axis=1)
        resp = np.exp(comp - lp[:, None])
        d_lam = resp * (ks[:, None] - lam[None, :])
        d_eta = resp[:, 1:] - w[None, 1:]
        return lp, np.column_stack([d_lam, d_eta])

    def natural(self, theta):
        out = {}
        lam = np.exp(theta[: self.C])
        w = self.weights(theta)
        for c in range(self.C):
            out[f"lambda{c + 1}"] = float(lam[c])
        for c in range(self.C):
            out[f"weight{c + 1}"] = float(w[c])
        return out

    def natural_jacobian(self, theta):
        C = self.C
        J = np.zeros((2 * C, self.dim))
        J[:C, :C] = np.diag(np.exp(theta[:C]))
        w = self.weights(theta)
        # d w_c / d eta_j = w_c (delta_cj - w_j), j >= 1
        for c in range(C):
            for j in range(1, C):
                J[C + c, C + j - 1] = w[c] * ((c == j) - w[j])
        return J

    def sorted_theta(self, theta):
        """Reorder components by increasing intensity (softmax re-referenced)."""
        C = self.C
        order = np.argsort(theta[:C], kind="stable")
        eta = np.concatenate(([0.0], theta[C:]))[order]
        return np.concatenate((theta[:C][order], eta[1:] - eta[0]))


class BinomialCells(CellModel):
    names = ("logit_p",)

    def __init__(self, visits: int):
        self.T = int(visits)

    def log_probs(self, theta, ks):
        ks = np.asarray(ks, dtype=float)
        p = expit(theta[0])
        lp = _log_choose(self.T, ks) + ks * log_expit(theta[0]) + (self.T - ks) * log_expit(-theta[0])
        return lp, (ks - self.T * p)[:, None]

    def natural(self, theta):
        return {"p": float(expit(theta[0]))}

    def natural_jacobian(self, theta):
        p = expit(theta[0])
        return np.array([[p * (1 - p)]])

    def support_max(self):
        return self.T


class BetaBinomialCells(CellModel):
    """Beta-mixed binomial, parameterized by logit mean and log precision."""

    names = ("logit_mean_p", "log_precision")

    def __init__(self, visits: int):
        self.T = int(visits)

    def shapes(self, theta):
        m, s = expit(theta[0]), np.exp(theta[1])
        return m * s, (1.0 - m) * s

    def log_probs(self, theta, ks):
        ks = np.asarray(ks, dtype=int)
        T = self.T
        m, s = expit(theta[0]), np.exp(theta[1])
        a, b = m * s, (1.0 - m) * s
        ra, da = _rising(a, ks)
        rb, db = _rising(b, T - ks)
        rs, ds = _rising(s, np.array([T]))
        lp = _log_choose(T, ks.astype(float)) + ra + rb - rs[0]
        d_a = da - ds[0]
        d_b = db - ds[0]
        d_m = m * (1.0 - m) * s * (d_a - d_b)
        d_s = a * d_a + b * d_b
        return lp, np.column_stack([d_m, d_s])

    def natural(self, theta):
        a, b = self.shapes(theta)
        return {"alpha": float(a), "beta": float(b)}

    def natural_jacobian(self, theta):
        m, s = expit(theta[0]), np.exp(theta[1])
        dm = m * (1 - m)
        return np.array([[dm * s, m * s], [-dm * s, (1 - m) * s]])

    def support_max(self):
        return self.T


@dataclass(frozen=True)
class MixtureSpec:
    """Detection-intensity mixing distribution on the natural scale.

    ``kind="gamma"`` uses `mu` and `kappa`; ``kind="finite"`` uses
    `intensities` and `weights`.
    """

    kind: str
    mu: float = 1.0
    kappa: float = 1.0
    intensities: tuple = ()
    weights: tuple = ()

    def __post_init__(self):
        if self.kind == "gamma":
            if not (self.mu > 0 and self.kappa > 0):
                raise ValueError("gamma mixture needs mu > 0 and kappa > 0")
        elif self.kind == "finite":
            lam = np.asarray(self.intensities, dtype=float)
            w = np.asarray(self.weights, dtype=float)
            if lam.size == 0 or lam.size != w.size:
                raise ValueError("finite mixture needs matching intensities and weights")
            if np.any(lam <= 0) or np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-10:
                raise ValueError("finite mixture needs positive intensities and weights summing to 1")
            order = np.argsort(lam, kind="stable")
            object.__setattr__(self, "intensities", tuple(float(v) for v in lam[order]))
            object.__setattr__(self, "weights", tuple(float(v) for v in w[order]))
        else:
            raise ValueError(f"unknown mixture kind {self.kind!r}")

    def cells(self):
        if self.kind == "gamma":
            return NegBinCells(), np.log([self.mu, self.kappa])
        C = len(self.intensities)
        w = np.asarray(self.weights)
        theta = np.concatenate((np.log(self.intensities), np.log(w[1:]) - np.log(w[0])))
        return FiniteMixtureCells(C), theta

    @property
    def mean(self) -> float:
        if self.kind == "gamma":
            return self.mu
        return float(np.dot(self.weights, self.intensities))

    @property
    def variance(self) -> float:
        if self.kind == "gamma":
            return self.mu ** 2 / self.kappa
        lam = np.asarray(self.intensities)
        return float(np.dot(self.weights, (lam - self.mean) ** 2))


def cell_prob(spec: MixtureSpec, k) -> float:
    """Probability that an occupied site records total count `k`."""
    if np.any(np.asarray(k) < 0):
        raise ValueError("k must be nonnegative")
    cells, theta = spec.cells()
    out = cells.probs(theta, np.atleast_1d(k))
    return float(out[0]) if np.ndim(k) == 0 else out


# ---------------------------------------------------------------------------
# Regression families: occupied-site distribution as a function of the
# linear predictor eta.


class PoissonLog:
    """Poisson counts with log link, ``lambda = exp(eta)``."""

    name = "poisson"
    prefix = "log_lambda"

    def __init__(self, visits: int = 1):
        self.T = visits

    def rate(self, eta):
        return np.exp(eta)

    def logpmf(self, y, eta):
        lam = np.exp(eta)
        return y * eta - lam - gammaln(y + 1.0), y - lam

    def p0(self, eta):
        """``P(Y = 0 | occupied)`` and its derivative in eta."""
        lam = np.exp(eta)
        p0 = np.exp(-lam)
        return p0, -lam * p0

    def detect(self, eta):
        """``pi = 1 - p0`` with ``d pi / d eta`` and ``log pi``."""
        lam = np.exp(eta)
        pi = -np.expm1(-lam)
        return pi, lam * np.exp(-lam), np.log(pi)


class BinomialLogit:
    """``Bin(T, p)`` totals with ``p = expit(eta)``."""

    name = "binomial"
    prefix = "logit_p"

    def __init__(self, visits: int):
        self.T = int(visits)

    def rate(self, eta):
        return expit(eta)

    def logpmf(self, y, eta):
        T = self.T
        p = expit(eta)
        lp = _log_choose(T, y) + y * log_expit(eta) + (T - y) * log_expit(-eta)
        return lp, y - T * p

    def p0(self, eta):
        p0 = np.exp(self.T * log_expit(-eta))
        return p0, -self.T * expit(eta) * p0

    def detect(self, eta):
        p0, dp0 = self.p0(eta)
        pi = -np.expm1(self.T * log_expit(-eta))
        return pi, -dp0, np.log(pi)


def regression_family(family: str, visits: int = 1):
    if family == "poisson":
        return PoissonLog(visits)
    if family == "binomial":
        return BinomialLogit(visits)
    raise ValueError(f"unknown family {family!r}")
