"""Fit result container and its JSON document."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


def _clean(value):
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return _clean(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


@dataclass
class FitResult:
    """Estimates from one occupancy model fit.

    `coef` holds the detection parameters on their working scale followed
    by the occurrence block: ``psi`` itself for constant presence, or the
    logistic coefficients ``gamma`` for an occurrence regression. `vcov`
    is on the same scale. `psi` is the presence estimate (the average
    fitted presence probability under an occurrence regression).
    """

    family: str
    model: str
    method: str
    names: list
    coef: np.ndarray
    vcov: np.ndarray
    n_detection: int
    psi: float
    psi_se: float
    loglik: float
    n: int
    m_plus: int
    converged: bool = True
    boundary: bool = False
    visits: int = 1
    detection_terms: list = field(default_factory=list)
    occurrence_terms: list = field(default_factory=list)
    natural: dict = field(default_factory=dict)
    natural_se: dict = field(default_factory=dict)
    conditional_loglik: Optional[float] = None
    cell_probs: Optional[np.ndarray] = None
    flags: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    @property
    def se(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return np.sqrt(np.diag(self.vcov))

    @property
    def theta_hat(self) -> np.ndarray:
        return self.coef[: self.n_detection]

    @property
    def theta_vcov(self) -> np.ndarray:
        k = self.n_detection
        return self.vcov[:k, :k]

    @property
    def occurrence_coef(self) -> np.ndarray:
        return self.coef[self.n_detection:]

    psi_hat = property(lambda self: self.psi)

    @property
    def n_params(self) -> int:
        return len(self.coef)

    @property
    def aic(self) -> float:
        return 2.0 * self.n_params - 2.0 * self.loglik

    def to_dict(self) -> dict:
        doc = {
            "family": self.family,
            "model": self.model,
            "method": self.method,
            "n": self.n,
            "m_plus": self.m_plus,
            "visits": self.visits,
            "detection_terms": list(self.detection_terms),
            "occurrence_terms": list(self.occurrence_terms),
            "parameters": [
                {"name": nm, "estimate": est, "se": se}
                for nm, est, se in zip(self.names, self.coef, self.se)
            ],
            "natural": {k: {"estimate": v, "se": self.natural_se.get(k)} for k, v in self.natural.items()},
            "psi": {"estimate": self.psi, "se": self.psi_se},
            "vcov": np.asarray(self.vcov).ravel().tolist(),
            "vcov_shape": list(np.shape(self.vcov)),
            "loglik": self.loglik,
            "conditional_loglik": self.conditional_loglik,
            "aic": self.aic,
            "converged": self.converged,
            "boundary": self.boundary,
            "flags": list(self.flags),
            "diagnostics": dict(self.diagnostics),
        }
        if self.cell_probs is not None:
            doc["cell_probs"] = np.asarray(self.cell_probs).tolist()
        doc.update(self.extras)
        return _clean(doc)

    def to_json(self, **kwargs) -> str:
        kwargs.setdefault("indent", 2)
        return json.dumps(self.to_dict(), **kwargs)
