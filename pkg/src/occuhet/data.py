"""Site-level datasets, frequency tables and CSV ingestion."""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Mapping, Optional, Sequence

import numpy as np

FAMILIES = ("poisson", "binomial")


class DataError(ValueError):
    """Invalid or inconsistent input data."""


@dataclass(frozen=True)
class SiteRecord:
    site_id: object
    y: int
    visits: int
    covariates: Mapping[str, float] = field(default_factory=dict)

    def x(self, terms: Sequence[str] = ()) -> np.ndarray:
        """Covariate vector with a leading intercept."""
        return np.array([1.0] + [float(self.covariates[t]) for t in terms])

    z = x


@dataclass(frozen=True)
class FrequencyTable:
    """Counts ``m_k`` of sites whose total detection count equals ``k``."""

    counts: Mapping[int, int]

    def __post_init__(self):
        clean = {}
        for k, m in self.counts.items():
            k, m = int(k), int(m)
            if k < 0 or m < 0:
                raise DataError("frequency table entries must be nonnegative")
            if m:
                clean[k] = clean.get(k, 0) + m
        object.__setattr__(self, "counts", MappingProxyType(dict(sorted(clean.items()))))

    @classmethod
    def from_counts(cls, y) -> "FrequencyTable":
        return cls(Counter(int(v) for v in np.asarray(y).ravel()))

    @property
    def n(self) -> int:
        return sum(self.counts.values())

    @property
    def m0(self) -> int:
        return self.counts.get(0, 0)

    @property
    def m_plus(self) -> int:
        return self.n - self.m0

    @property
    def max_count(self) -> int:
        return max(self.counts) if self.counts else 0

    def positive(self):
        """Arrays ``(k, m_k)`` over the positive counts."""
        ks = np.array([k for k in self.counts if k > 0], dtype=int)
        ms = np.array([self.counts[k] for k in ks], dtype=float)
        return ks, ms

    def mean_positive(self) -> float:
        ks, ms = self.positive()
        if ms.sum() == 0:
            return float("nan")
        return float((ks * ms).sum() / ms.sum())

    def __eq__(self, other):
        return isinstance(other, FrequencyTable) and dict(self.counts) == dict(other.counts)

    def __hash__(self):
        return hash(tuple(self.counts.items()))


def parse_formula(formula: Optional[str]) -> list[str]:
    """Return the covariate terms of ``"1"`` or ``"1 + a + b"``.

    The intercept is implicit; a leading ``1`` is accepted but not required.
    """
    if formula is None:
        return []
    text = formula.strip()
    if text.startswith("~"):
        text = text[1:].strip()
    if not text:
        return []
    terms = []
    for raw in text.split("+"):
        term = raw.strip()
        if term == "1":
            continue
        if not term or not term.replace("_", "a").replace(".", "a").isalnum():
            raise DataError(f"unsupported formula term {raw!r} in {formula!r}")
        if term in terms:
            raise DataError(f"duplicate formula term {term!r}")
        terms.append(term)
    return terms


class Dataset:
    """Validated collection of site records sharing a common number of visits.

    Covariates are held column-wise; detection and occurrence design
    matrices are built on demand from formulas.
    """

    def __init__(self, y, visits: int, covariates: Optional[Mapping[str, Sequence[float]]] = None,
                 family: str = "poisson", site_ids: Optional[Sequence] = None):
        if family not in FAMILIES:
            raise DataError(f"unknown family {family!r}")
        y = np.asarray(y)
        if y.ndim != 1 or y.size == 0:
            raise DataError("dataset must contain at least one site")
        if not np.all(np.isfinite(y.astype(float))) or np.any(y != np.round(y)):
            raise DataError("counts must be integers")
        y = y.astype(np.int64)
        if np.any(y < 0):
            raise DataError("counts must be nonnegative")
        visits = int(visits)
        if visits < 1:
            raise DataError("number of visits must be positive")
        if family == "binomial" and np.any(y > visits):
            raise DataError(f"binomial count exceeds number of visits T={visits}")
        cov = {}
        for name, values in (covariates or {}).items():
            arr = np.asarray(values, dtype=float)
            if arr.shape != y.shape:
                raise DataError(f"covariate {name!r} has wrong length")
            if not np.all(np.isfinite(arr)):
                raise DataError(f"missing covariate value in column {name!r}")
            arr.setflags(write=False)
            cov[name] = arr
        y.setflags(write=False)
        self.y = y
        self.visits = visits
        self.family = family
        self.covariates = MappingProxyType(cov)
        self.site_ids = tuple(site_ids) if site_ids is not None else tuple(range(y.size))
        if len(self.site_ids) != y.size:
            raise DataError("site_ids length mismatch")

    @property
    def n(self) -> int:
        return int(self.y.size)

    @property
    def detected(self) -> np.ndarray:
        return self.y > 0

    @property
    def m_plus(self) -> int:
        return int(self.detected.sum())

    @property
    def records(self) -> list[SiteRecord]:
        names = list(self.covariates)
        return [
            SiteRecord(sid, int(self.y[i]), self.visits,
                       MappingProxyType({k: float(self.covariates[k][i]) for k in names}))
            for i, sid in enumerate(self.site_ids)
        ]

    def design(self, formula: Optional[str]) -> np.ndarray:
        terms = parse_formula(formula)
        missing = [t for t in terms if t not in self.covariates]
        if missing:
            raise DataError(f"unknown covariate(s) {missing}")
        cols = [np.ones(self.n)] + [self.covariates[t] for t in terms]
        return np.column_stack(cols)

    def frequency_table(self) -> FrequencyTable:
        return aggregate(self)

    def __len__(self):
        return self.n

    def __repr__(self):
        return (f"Dataset(n={self.n}, T={self.visits}, family={self.family!r}, "
                f"covariates={list(self.covariates)})")


def aggregate(dataset: Dataset) -> FrequencyTable:
    """Frequency table of total counts (sufficient for covariate-free models)."""
    return FrequencyTable.from_counts(dataset.y)


def _parse_number(text: str, column: str, row: int) -> float:
    text = text.strip()
    if text == "" or text.upper() in ("NA", "NAN"):
        raise DataError(f"missing covariate value in column {column!r} at row {row}")
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"non-numeric value {text!r} in column {column!r} at row {row}") from None
    if not math.isfinite(value):
        raise DataError(f"non-finite value in column {column!r} at row {row}")
    return value


def load_dataset(path, y: Optional[str] = None, visits: Optional[Sequence[str]] = None,
                 covariates: Optional[Sequence[str]] = None, family: str = "poisson",
                 n_visits: Optional[int] = None, site_id: Optional[str] = None,
                 intercept: Optional[str] = None) -> Dataset:
    """Read a comma-separated file with a header row.

    Parameters
    ----------
    path : path-like
        CSV file.
    y : str, optional
        Column holding per-site totals.
    visits : sequence of str, optional
        Per-visit columns ``y_1..y_T``; summed into the site total. Exactly
        one of `y` and `visits` must be given.
    covariates : sequence of str, optional
        Numeric covariate columns. Defaults to every column not otherwise
        used.
    family : {"poisson", "binomial"}
    n_visits : int, optional
        Number of visits T when a total column is given (default 1 for
        Poisson; required for binomial).
    site_id : str, optional
        Identifier column.
    intercept : str, optional
        Name of an existing all-ones column; it is dropped because the
        intercept is always prepended.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    if (y is None) == (not visits):
        raise DataError("give exactly one of a total-count column or per-visit columns")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh, delimiter=",")
        header = reader.fieldnames or []
        rows = list(reader)
    if not rows:
        raise DataError("CSV file has no data rows")
    count_cols = [y] if y is not None else list(visits)
    used = set(count_cols) | {c for c in (site_id, intercept) if c}
    for col in used:
        if col not in header:
            raise DataError(f"column {col!r} not in CSV header")
    if covariates is None:
        covariates = [c for c in header if c not in used]
    for col in covariates:
        if col not in header:
            raise DataError(f"column {col!r} not in CSV header")

    totals = []
    for i, row in enumerate(rows, start=2):
        vals = []
        for col in count_cols:
            text = (row[col] or "").strip()
            if text == "":
                raise DataError(f"missing count in column {col!r} at row {i}")
            try:
                v = float(text)
            except ValueError:
                raise DataError(f"non-numeric value {text!r} in column {col!r} at row {i}") from None
            if v != round(v):
                raise DataError(f"non-integer count in column {col!r} at row {i}")
            vals.append(int(v))
        if family == "binomial" and visits and any(v not in (0, 1) for v in vals):
            raise DataError(f"per-visit presence-absence values must be 0/1 at row {i}")
        totals.append(sum(vals))
    cov = {c: [_parse_number(row[c] or "", c, i) for i, row in enumerate(rows, start=2)]
           for c in covariates if c != intercept}
    if intercept is not None:
        col = [_parse_number(row[intercept] or "", intercept, i) for i, row in enumerate(rows, start=2)]
        if any(v != 1.0 for v in col):
            raise DataError(f"intercept column {intercept!r} is not all ones")
    if visits:
        T = len(count_cols)
    elif n_visits is not None:
        T = int(n_visits)
    elif family == "binomial":
        raise DataError("binomial data with a total column needs the number of visits")
    else:
        T = 1
    ids = [row[site_id] for row in rows] if site_id else None
    return Dataset(totals, T, cov, family=family, site_ids=ids)
