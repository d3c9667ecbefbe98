"""Deterministic numerical machinery shared by the model fitters.

Newton ascent with step halving, bisection root finding, finite-difference
derivatives and a guarded symmetric inverse for variance matrices.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

EPS = np.finfo(float).eps


class BracketError(ValueError):
    """Raised when a root-finding bracket has no sign change."""


@dataclass(frozen=True)
class OptimOptions:
    gradient_tolerance: float = 1e-8
    max_iterations: int = 200
    step_halving_max: int = 30
    # Largest Newton step (infinity norm) on the working scale.
    max_step: float = 5.0
    finite_difference_step: Optional[float] = None

    def __post_init__(self):
        if self.gradient_tolerance <= 0 or self.max_iterations <= 0 or self.step_halving_max <= 0:
            raise ValueError("optimizer options must be positive")
        if self.finite_difference_step is not None and self.finite_difference_step <= 0:
            raise ValueError("finite_difference_step must be positive")


@dataclass
class OptimResult:
    argmax: np.ndarray
    value: float
    gradient: np.ndarray
    gradient_norm: float
    hessian: np.ndarray
    converged: bool
    iterations: int
    negative_definite: bool = True
    singular: bool = False
    diverged: bool = False
    messages: list = field(default_factory=list)


def _steps(x, base):
    x = np.asarray(x, dtype=float)
    if base is None:
        return EPS ** (1.0 / 3.0) * (np.abs(x) + 1.0)
    return base * (np.abs(x) + 1.0)


def numeric_gradient(f: Callable, x, step: Optional[float] = None) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    h = _steps(x, step)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h[i]
        fp, fm = f(x + e), f(x - e)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError("non-finite function value in numeric gradient")
        g[i] = (fp - fm) / (2.0 * h[i])
    return g


def numeric_hessian(f: Callable, x, step: Optional[float] = None) -> np.ndarray:
    """Central-difference Hessian of a scalar function, symmetrized.

    Parameters
    ----------
    f : callable
        Scalar function of a 1-d array.
    x : array_like
        Evaluation point.
    step : float, optional
        Relative step; defaults to the fourth root of machine epsilon.

    Returns
    -------
    ndarray
        ``(H + H.T) / 2``.
    """
    x = np.asarray(x, dtype=float)
    d = x.size
    h = (EPS ** 0.25 if step is None else step) * (np.abs(x) + 1.0)
    f0 = f(x)
    if not np.isfinite(f0):
        raise FloatingPointError("non-finite function value in numeric Hessian")
    H = np.empty((d, d))

    def ev(v):
        val = f(v)
        if not np.isfinite(val):
            raise FloatingPointError("non-finite function value in numeric Hessian")
        return val

    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h[i]
        H[i, i] = (ev(x + ei) - 2.0 * f0 + ev(x - ei)) / h[i] ** 2
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = h[j]
            H[i, j] = (
                ev(x + ei + ej) - ev(x + ei - ej) - ev(x - ei + ej) + ev(x - ei - ej)
            ) / (4.0 * h[i] * h[j])
            H[j, i] = H[i, j]
    return 0.5 * (H + H.T)


def jacobian_hessian(gradient: Callable, x, step: Optional[float] = None) -> np.ndarray:
    """Hessian as the central-difference Jacobian of an analytic gradient."""
    x = np.asarray(x, dtype=float)
    d = x.size
    h = _steps(x, step)
    H = np.empty((d, d))
    for i in range(d):
        e = np.zeros(d)
        e[i] = h[i]
        gp, gm = gradient(x + e), gradient(x - e)
        if not (np.all(np.isfinite(gp)) and np.all(np.isfinite(gm))):
            raise FloatingPointError("non-finite gradient in numeric Hessian")
        H[:, i] = (gp - gm) / (2.0 * h[i])
    return 0.5 * (H + H.T)


def find_root(f: Callable[[float], float], bracket, tol: float = 1e-10) -> float:
    """Bisection on ``bracket = (lo, hi)`` until the width drops below `tol`."""
    lo, hi = float(bracket[0]), float(bracket[1])
    if not lo < hi:
        raise BracketError("bracket invalid: lo must be below hi")
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if np.sign(flo) == np.sign(fhi):
        raise BracketError("bracket invalid: no sign change")
    while hi - lo >= tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        fm = f(mid)
        if fm == 0.0:
            return mid
        if np.sign(fm) == np.sign(flo):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _safe(objective, x):
    try:
        with np.errstate(all="ignore"):
            v = float(objective(x))
    except (FloatingPointError, OverflowError, ValueError):
        return -np.inf
    return v if np.isfinite(v) else -np.inf


def maximize(
    objective: Callable,
    init,
    gradient: Optional[Callable] = None,
    options: Optional[OptimOptions] = None,
) -> OptimResult:
    """Newton ascent with a numeric Hessian and step halving.

    When the Newton direction is not an ascent direction the gradient
    direction is used instead. Non-finite objective values count as
    failed steps; a non-finite value at `init` raises ``ValueError``.
    """
    opts = options or OptimOptions()
    x = np.array(init, dtype=float)
    f = _safe(objective, x)
    if not np.isfinite(f):
        raise ValueError("objective is not finite at the initial point")

    if gradient is None:
        def grad(v):
            return numeric_gradient(objective, v, opts.finite_difference_step)

        def hess(v):
            return numeric_hessian(objective, v)
    else:
        def grad(v):
            return np.asarray(gradient(v), dtype=float)

        def hess(v):
            return jacobian_hessian(grad, v, opts.finite_difference_step)

    messages = []
    singular = diverged = False
    g = grad(x)
    it = stalls = 0
    while it < opts.max_iterations:
        if np.linalg.norm(g) <= opts.gradient_tolerance:
            break
        it += 1
        try:
            H = hess(x)
            eig = np.linalg.eigvalsh(H)
        except (FloatingPointError, np.linalg.LinAlgError):
            H = -np.eye(x.size)
            eig = np.array([np.nan])
        if not np.all(np.isfinite(eig)) or np.min(np.abs(eig)) <= 1e-12 * max(1.0, np.max(np.abs(eig))):
            singular = True
            d = -np.linalg.pinv(H) @ g if np.all(np.isfinite(H)) else g
        else:
            d = -np.linalg.solve(H, g)
        if not np.all(np.isfinite(d)) or g @ d <= 0:
            d = g / max(1.0, np.max(np.abs(np.diag(H))) if np.all(np.isfinite(H)) else 1.0)
        big = np.max(np.abs(d))
        if big > opts.max_step:
            d = d * (opts.max_step / big)

        # near the optimum the change in f falls below rounding noise; a step
        # inside the noise band is still taken if it shrinks the gradient
        noise = 1e-11 * (1.0 + abs(f))
        gnorm = np.linalg.norm(g)
        t = 1.0
        accepted = False
        gn = None
        for _ in range(opts.step_halving_max):
            xn = x + t * d
            fn = _safe(objective, xn)
            if np.isfinite(fn) and fn >= f:
                accepted = True
                break
            if np.isfinite(fn) and fn >= f - noise:
                gn = grad(xn)
                if np.all(np.isfinite(gn)) and np.linalg.norm(gn) < gnorm:
                    accepted = True
                    break
                gn = None
            t *= 0.5
        if not accepted:
            messages.append("line search failed")
            break
        if gn is None:
            gn = grad(xn)
        if not np.all(np.isfinite(gn)):
            diverged = True
            messages.append("non-finite gradient")
            break
        stalls = 0 if fn > f or np.linalg.norm(gn) < 0.5 * gnorm else stalls + 1
        x, f, g = xn, fn, gn
        if stalls >= 3:
            messages.append("no further increase in objective")
            break

    gnorm = float(np.linalg.norm(g))
    try:
        H = hess(x)
        negdef = bool(np.all(np.linalg.eigvalsh(H) < 0))
    except (FloatingPointError, np.linalg.LinAlgError):
        H = np.full((x.size, x.size), np.nan)
        negdef = False
        diverged = True
    converged = gnorm <= opts.gradient_tolerance and not diverged
    if not converged and it >= opts.max_iterations:
        messages.append("iteration limit reached")
    if converged and not negdef:
        messages.append("Hessian not negative definite at optimum")
    return OptimResult(
        argmax=x,
        value=f,
        gradient=g,
        gradient_norm=gnorm,
        hessian=H,
        converged=converged,
        iterations=it,
        negative_definite=negdef,
        singular=singular,
        diverged=diverged,
        messages=messages,
    )


def inverse_information(hessian) -> np.ndarray:
    """Inverse of the negative Hessian; pseudo-inverse when singular."""
    info = -np.asarray(hessian, dtype=float)
    if not np.all(np.isfinite(info)):
        return np.full(info.shape, np.nan)
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(info)
    return 0.5 * (cov + cov.T)
