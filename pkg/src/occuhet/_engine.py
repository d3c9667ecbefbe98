"""Likelihood engines shared by the Poisson and binomial model families.

Frequency-table models (homogeneous and mixture detection) and
site-level regression models are each fitted here by either full
maximum likelihood or the two-stage conditional likelihood.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from scipy.special import expit, log_expit, logit

from .cells import CellModel
from .data import Dataset, FrequencyTable, parse_formula
from .optim import OptimOptions, find_root, inverse_information, jacobian_hessian, maximize
from .results import FitResult

PSI_BRACKET = (1e-12, 1.0 - 1e-12)
PSI_TOL = 1e-10
# Linear predictors beyond this on the logit scale signal separation.
SEPARATION_ETA = 15.0


class ModelError(ValueError):
    """The requested model cannot be fitted to the data."""


def _logit_clip(p, n):
    lo = 0.5 / max(n, 1)
    return float(logit(min(max(p, lo), 1.0 - lo)))


# ---------------------------------------------------------------------------
# Frequency-table models


class FrequencyLikelihood:
    """Full and conditional log-likelihoods of a frequency table."""

    def __init__(self, freq: FrequencyTable, cells: CellModel):
        self.freq = freq
        self.cells = cells
        ks, ms = freq.positive()
        if cells.support_max() is not None and ks.size and ks.max() > cells.support_max():
            raise ModelError("count exceeds the number of visits")
        self.ks = ks
        self.ms = ms
        self.ks_all = np.concatenate(([0], ks)).astype(int)
        self.m0 = float(freq.m0)
        self.mplus = float(freq.m_plus)
        self.n = float(freq.n)

    def _cells(self, theta):
        lp, d = self.cells.log_probs(np.asarray(theta, dtype=float), self.ks_all)
        return lp[0], d[0], lp[1:], d[1:]

    def conditional(self, theta):
        lp0, _, lp, _ = self._cells(theta)
        return float(self.ms @ lp - self.mplus * np.log(-np.expm1(lp0)))

    def conditional_grad(self, theta):
        lp0, d0, _, d = self._cells(theta)
        p0 = np.exp(lp0)
        return self.ms @ d + self.mplus * p0 * d0 / (-np.expm1(lp0))

    def p_plus(self, theta) -> float:
        lp0 = self._cells(theta)[0]
        return float(-np.expm1(lp0))

    def full(self, params):
        theta, zeta = params[:-1], params[-1]
        lp0, _, lp, _ = self._cells(theta)
        psi = expit(zeta)
        miss = expit(-zeta) + psi * np.exp(lp0)
        val = self.ms @ lp + self.mplus * log_expit(zeta)
        if self.m0:
            val += self.m0 * np.log(miss)
        return float(val)

    def full_grad(self, params):
        theta, zeta = params[:-1], params[-1]
        lp0, d0, _, d = self._cells(theta)
        p0 = np.exp(lp0)
        psi = expit(zeta)
        miss = expit(-zeta) + psi * p0
        g_theta = self.ms @ d
        g_zeta = self.mplus * (1.0 - psi)
        if self.m0:
            g_theta = g_theta + self.m0 * psi * p0 * d0 / miss
            g_zeta -= self.m0 * (1.0 - p0) * psi * (1.0 - psi) / miss
        return np.append(g_theta, g_zeta)

    def full_natural(self, theta, psi) -> float:
        """Full log-likelihood at natural ``psi`` (nan outside (0, 1])."""
        if not 0.0 < psi <= 1.0:
            return float("nan")
        lp0, _, lp, _ = self._cells(theta)
        val = self.ms @ lp + self.mplus * np.log(psi)
        if self.m0:
            val += self.m0 * np.log1p(-psi * (-np.expm1(lp0)))
        return float(val)


def _natural_block(cells, theta, vtheta, psi, psi_se):
    nat = dict(cells.natural(theta))
    J = cells.natural_jacobian(theta)
    with np.errstate(invalid="ignore"):
        ses = np.sqrt(np.diag(J @ vtheta @ J.T))
    nat_se = {k: float(s) for k, s in zip(nat, ses)}
    nat["psi"] = float(psi)
    nat_se["psi"] = float(psi_se)
    return nat, nat_se


def conditional_stage(lik: FrequencyLikelihood, theta_init, options=None, theta_fixed=None):
    """Maximize the conditional likelihood; returns (theta, vcov, optim info)."""
    if theta_fixed is not None:
        theta = np.asarray(theta_fixed, dtype=float)
        info = {"converged": True, "iterations": 0,
                "gradient_norm": float(np.linalg.norm(lik.conditional_grad(theta)))}
    else:
        res = maximize(lik.conditional, theta_init, lik.conditional_grad, options)
        theta = res.argmax
        info = {"converged": res.converged, "iterations": res.iterations,
                "gradient_norm": res.gradient_norm, "messages": list(res.messages)}
    H = jacobian_hessian(lik.conditional_grad, theta)
    return theta, inverse_information(H), info


def fit_frequency(freq: FrequencyTable, cells: CellModel, method: str, *, family: str, model: str,
                  visits: int = 1, theta_init=None, theta_cl=None, ml_init=None,
                  options: Optional[OptimOptions] = None, flags=()) -> FitResult:
    """Fit a constant-presence model with detection given by `cells`."""
    if method not in ("ml", "cl"):
        raise ValueError(f"unknown method {method!r}")
    if freq.m_plus == 0:
        raise ModelError("presence unidentifiable: no site has a detection")
    lik = FrequencyLikelihood(freq, cells)
    theta, vtheta, info = conditional_stage(lik, theta_init, options, theta_fixed=theta_cl)
    flags = list(flags)
    k = cells.dim
    p_plus = lik.p_plus(theta)
    n, mplus, m0 = lik.n, lik.mplus, lik.m0

    if method == "cl":
        psi = mplus / (n * p_plus)
        # Stage-2 information in psi plus propagation of var(theta).
        q = 1.0 - psi * p_plus
        lp0, d0 = lik._cells(theta)[:2]
        dpplus = -np.exp(lp0) * d0
        A = mplus / psi ** 2
        B = np.zeros(k)
        if m0:
            A += m0 * p_plus ** 2 / q ** 2
            B = -m0 * dpplus / q ** 2
        J = B / A
        var_psi = 1.0 / A + J @ vtheta @ J
        vcov = np.zeros((k + 1, k + 1))
        vcov[:k, :k] = vtheta
        vcov[:k, k] = vcov[k, :k] = vtheta @ J
        vcov[k, k] = var_psi
        coef = np.append(theta, psi)
        loglik = lik.full_natural(theta, psi)
        converged = bool(info["converged"])
        diag = info
    else:
        start = np.append(theta, _logit_clip(mplus / n, n)) if ml_init is None else np.asarray(ml_init, float)
        res = maximize(lik.full, start, lik.full_grad, options)
        psi_cl = mplus / (n * p_plus)
        if not res.converged and psi_cl < 1.0 and ml_init is None:
            # the interior conditional solution is the full-likelihood optimum
            retry = maximize(lik.full, np.append(theta, logit(psi_cl)), lik.full_grad, options)
            if retry.converged or retry.value > res.value:
                retry.messages.insert(0, "restarted from the conditional solution")
                res = retry
        phi = res.argmax
        psi = float(expit(phi[-1]))
        vwork = inverse_information(res.hessian)
        jac = np.ones(k + 1)
        jac[-1] = psi * (1.0 - psi)
        vcov = vwork * np.outer(jac, jac)
        coef = np.append(phi[:-1], psi)
        theta = phi[:-1]
        vtheta = vcov[:k, :k]
        loglik = res.value
        converged = bool(res.converged)
        diag = {"converged": res.converged, "iterations": res.iterations,
                "gradient_norm": res.gradient_norm, "messages": list(res.messages)}
        p_plus = lik.p_plus(theta)

    boundary = psi >= 1.0 - 1e-8
    if boundary:
        flags.append("psi_boundary")
    psi_se = float(np.sqrt(vcov[k, k])) if vcov[k, k] >= 0 else float("nan")
    nat, nat_se = _natural_block(cells, theta, vtheta, psi, psi_se)
    kmax = cells.support_max() if cells.support_max() is not None else max(freq.max_count, 1)
    return FitResult(
        family=family, model=model, method=method,
        names=list(cells.names) + ["psi"], coef=coef, vcov=vcov, n_detection=k,
        psi=float(psi), psi_se=psi_se, loglik=float(loglik), n=int(n), m_plus=int(mplus),
        converged=converged, boundary=bool(boundary), visits=visits,
        natural=nat, natural_se=nat_se,
        conditional_loglik=lik.conditional(theta),
        cell_probs=cells.probs(theta, np.arange(kmax + 1)),
        flags=flags, diagnostics=diag,
    )


def boundary_fit(freq: FrequencyTable, cells: CellModel, theta, method, *, family, model,
                 visits=1, flags=()) -> FitResult:
    """Fit result for a detection parameter pinned at its boundary.

    `theta` is the limiting working value; ``psi = m+ / (n p+)`` and the
    variance matrix is left undefined.
    """
    lik = FrequencyLikelihood(freq, cells)
    k = cells.dim
    p_plus = lik.p_plus(theta)
    psi = freq.m_plus / (freq.n * p_plus) if p_plus > 0 else float("inf")
    vcov = np.full((k + 1, k + 1), np.nan)
    nat = dict(cells.natural(theta))
    nat["psi"] = float(psi)
    kmax = cells.support_max() if cells.support_max() is not None else max(freq.max_count, 1)
    return FitResult(
        family=family, model=model, method=method,
        names=list(cells.names) + ["psi"], coef=np.append(theta, psi), vcov=vcov, n_detection=k,
        psi=float(psi), psi_se=float("nan"), loglik=lik.full_natural(theta, psi),
        n=freq.n, m_plus=freq.m_plus, converged=False, boundary=True, visits=visits,
        natural=nat, natural_se={kk: float("nan") for kk in nat},
        conditional_loglik=None,
        cell_probs=cells.probs(theta, np.arange(kmax + 1)),
        flags=list(flags), diagnostics={"converged": False, "iterations": 0},
    )


# ---------------------------------------------------------------------------
# Regression models


def psi_equation(mplus: float, pi_absent) -> callable:
    """Score in ``psi`` of the profile likelihood with detection fixed.

    ``m+ / psi - sum_{i not detected} pi_i / (1 - psi pi_i)``; strictly
    decreasing on (0, 1) when ``m+ >= 1``.
    """
    pi_absent = np.asarray(pi_absent, dtype=float)

    def score(psi):
        return mplus / psi - np.sum(pi_absent / (1.0 - psi * pi_absent))

    return score


def solve_psi(mplus: float, pi_absent):
    """Root of :func:`psi_equation` by bisection; returns (psi, at_boundary)."""
    if mplus < 1:
        raise ModelError("presence unidentifiable: no site has a detection")
    score = psi_equation(mplus, pi_absent)
    if score(PSI_BRACKET[1]) > 0:
        return 1.0, True
    return find_root(score, PSI_BRACKET, PSI_TOL), False


class RegressionLikelihood:
    """Site-level likelihoods with detection design X and occurrence design Z."""

    def __init__(self, dataset: Dataset, family, X: np.ndarray, Z: np.ndarray):
        self.fam = family
        self.y = dataset.y.astype(float)
        self.det = dataset.y > 0
        self.X = X
        self.Z = Z
        self.XA = X[self.det]
        self.yA = self.y[self.det]
        self.XN = X[~self.det]
        self.ZA = Z[self.det]
        self.ZN = Z[~self.det]
        self.p = X.shape[1]
        self.q = Z.shape[1]
        self.n = dataset.n
        self.mplus = int(self.det.sum())

    # conditional (zero-truncated) likelihood over detected sites
    def conditional(self, theta):
        eta = self.XA @ theta
        lp, _ = self.fam.logpmf(self.yA, eta)
        _, _, logpi = self.fam.detect(eta)
        return float(np.sum(lp - logpi))

    def conditional_grad(self, theta):
        eta = self.XA @ theta
        _, dlp = self.fam.logpmf(self.yA, eta)
        pi, dpi, _ = self.fam.detect(eta)
        return self.XA.T @ (dlp - dpi / pi)

    def full(self, params):
        theta, gamma = params[: self.p], params[self.p:]
        etaA, etaN = self.XA @ theta, self.XN @ theta
        zA, zN = self.ZA @ gamma, self.ZN @ gamma
        lp, _ = self.fam.logpmf(self.yA, etaA)
        p0N, _ = self.fam.p0(etaN)
        miss = expit(-zN) + expit(zN) * p0N
        return float(np.sum(log_expit(zA) + lp) + np.sum(np.log(miss)))

    def full_grad(self, params):
        theta, gamma = params[: self.p], params[self.p:]
        etaA, etaN = self.XA @ theta, self.XN @ theta
        zA, zN = self.ZA @ gamma, self.ZN @ gamma
        _, dlp = self.fam.logpmf(self.yA, etaA)
        p0N, dp0N = self.fam.p0(etaN)
        psiN = expit(zN)
        miss = expit(-zN) + psiN * p0N
        g_theta = self.XA.T @ dlp + self.XN.T @ (psiN * dp0N / miss)
        g_gamma = self.ZA.T @ expit(-zA) - self.ZN.T @ ((1.0 - p0N) * psiN * (1.0 - psiN) / miss)
        return np.concatenate((g_theta, g_gamma))

    def profile(self, gamma, piN):
        zA, zN = self.ZA @ gamma, self.ZN @ gamma
        return float(np.sum(log_expit(zA)) + np.sum(np.log1p(-expit(zN) * piN)))

    def profile_grad(self, gamma, piN):
        zA, zN = self.ZA @ gamma, self.ZN @ gamma
        psiN = expit(zN)
        return self.ZA.T @ expit(-zA) - self.ZN.T @ (piN * psiN * (1.0 - psiN) / (1.0 - psiN * piN))


def _check_rank(M, what):
    if M.shape[0] < M.shape[1] or np.linalg.matrix_rank(M) < M.shape[1]:
        raise ModelError(f"rank-deficient design for {what}")


def _detection_init(lik: RegressionLikelihood):
    init = np.zeros(lik.p)
    mean = float(lik.yA.mean())
    if lik.fam.name == "poisson":
        init[0] = np.log(max(mean - 0.5, 0.5))
    else:
        init[0] = float(logit(np.clip(mean / lik.fam.T, 0.05, 0.95)))
    return init


def fit_regression(dataset: Dataset, family, detection: Optional[str], occurrence: Optional[str],
                   method: str, options: Optional[OptimOptions] = None, ml_init=None) -> FitResult:
    if method not in ("ml", "cl"):
        raise ValueError(f"unknown method {method!r}")
    det_terms, occ_terms = parse_formula(detection), parse_formula(occurrence)
    X, Z = dataset.design(detection), dataset.design(occurrence)
    lik = RegressionLikelihood(dataset, family, X, Z)
    if lik.mplus == 0:
        raise ModelError("presence unidentifiable: no site has a detection")
    _check_rank(lik.XA, "detection (detected sites)")
    _check_rank(Z, "occurrence")
    p, q, n, mplus = lik.p, lik.q, lik.n, lik.mplus
    const_occ = q == 1
    flags = []

    res1 = maximize(lik.conditional, _detection_init(lik), lik.conditional_grad, options)
    theta_c = res1.argmax
    H1 = jacobian_hessian(lik.conditional_grad, theta_c)
    v_theta_c = inverse_information(H1)
    diag = {"conditional_stage": {"converged": res1.converged, "iterations": res1.iterations,
                                  "gradient_norm": res1.gradient_norm}}
    converged = bool(res1.converged)

    det_prefix = family.prefix
    names = [f"{det_prefix}:(Intercept)"] + [f"{det_prefix}:{t}" for t in det_terms]
    if const_occ:
        names.append("psi")
    else:
        names += ["logit_psi:(Intercept)"] + [f"logit_psi:{t}" for t in occ_terms]

    if method == "cl":
        theta = theta_c
        etaN = lik.XN @ theta
        piN, dpiN, _ = family.detect(etaN)
        if const_occ:
            psi, at_bound = solve_psi(mplus, piN)
            if at_bound:
                flags.append("psi_boundary")
            q_ = 1.0 - psi * piN
            A = mplus / psi ** 2 + np.sum(piN ** 2 / q_ ** 2)
            B = -(lik.XN.T @ (dpiN / q_ ** 2))
            J = (B / A)[None, :]
            v_occ = np.array([[1.0 / A]]) + J @ v_theta_c @ J.T
            occ = np.array([psi])
        else:
            g0 = np.zeros(q)
            g0[0] = _logit_clip(mplus / n, n)
            res2 = maximize(lambda g: lik.profile(g, piN), g0, lambda g: lik.profile_grad(g, piN), options)
            occ = res2.argmax
            converged = converged and res2.converged
            diag["occurrence_stage"] = {"converged": res2.converged, "iterations": res2.iterations,
                                        "gradient_norm": res2.gradient_norm}
            A = -jacobian_hessian(lambda g: lik.profile_grad(g, piN), occ)
            psiN = expit(lik.ZN @ occ)
            w = psiN * (1.0 - psiN) / (1.0 - psiN * piN) ** 2
            B = -(lik.ZN.T * w) @ (lik.XN * dpiN[:, None])
            Ainv = inverse_information(-A)
            J = Ainv @ B
            v_occ = Ainv + J @ v_theta_c @ J.T
        vcov = np.zeros((p + q, p + q))
        vcov[:p, :p] = v_theta_c
        vcov[p:, p:] = v_occ
        vcov[:p, p:] = v_theta_c @ J.T
        vcov[p:, :p] = vcov[:p, p:].T
        coef = np.concatenate((theta, occ))
        if const_occ:
            full = lik.full(np.append(theta, logit(psi))) if psi < 1.0 else float("nan")
        else:
            full = lik.full(coef)
        loglik = full
    else:
        if ml_init is None:
            start = np.zeros(p + q)
            start[:p] = theta_c
            start[p] = _logit_clip(mplus / n, n)
        else:
            start = np.asarray(ml_init, dtype=float)
        res = maximize(lik.full, start, lik.full_grad, options)
        converged = bool(res.converged)
        diag["ml"] = {"converged": res.converged, "iterations": res.iterations,
                      "gradient_norm": res.gradient_norm, "messages": list(res.messages)}
        vwork = inverse_information(res.hessian)
        phi = res.argmax
        theta = phi[:p]
        if const_occ:
            psi = float(expit(phi[p]))
            jac = np.ones(p + 1)
            jac[-1] = psi * (1.0 - psi)
            vcov = vwork * np.outer(jac, jac)
            coef = np.append(theta, psi)
            if psi >= 1.0 - 1e-8:
                flags.append("psi_boundary")
        else:
            vcov = vwork
            coef = phi
        loglik = res.value

    if const_occ:
        psi_bar = float(coef[p])
        psi_se = float(np.sqrt(vcov[p, p])) if vcov[p, p] >= 0 else float("nan")
    else:
        gamma = coef[p:]
        zeta = Z @ gamma
        if np.max(np.abs(zeta)) > SEPARATION_ETA:
            flags.append("occurrence_separation")
            converged = False
        psi_i = expit(zeta)
        psi_bar = float(psi_i.mean())
        grad = (Z * (psi_i * (1.0 - psi_i))[:, None]).mean(axis=0)
        vg = vcov[p:, p:]
        psi_se = float(np.sqrt(grad @ vg @ grad)) if np.all(np.isfinite(vg)) else float("nan")

    boundary = "psi_boundary" in flags or "occurrence_separation" in flags
    etaA = lik.XA @ theta
    return FitResult(
        family=family.name, model="regression", method=method, names=names,
        coef=coef, vcov=0.5 * (vcov + vcov.T), n_detection=p, psi=psi_bar, psi_se=psi_se,
        loglik=float(loglik), n=n, m_plus=mplus, converged=converged, boundary=boundary,
        visits=dataset.visits, detection_terms=det_terms, occurrence_terms=occ_terms,
        natural={"psi": psi_bar}, natural_se={"psi": psi_se},
        conditional_loglik=lik.conditional(theta),
        flags=flags, diagnostics=diag,
        extras={"mean_detect_prob_detected": float(np.mean(family.detect(etaA)[0]))},
    )
