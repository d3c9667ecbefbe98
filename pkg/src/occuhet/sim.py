"""Monte Carlo studies: data generators, replication driver and summaries.

Scenarios
---------
``a``   zero-inflated negative binomial counts, no covariates.
``b``   zero-inflated Poisson regression, constant presence.
``c``   zero-inflated Poisson regression with logistic presence.
``zib-a``, ``zib-b``, ``zib-c``
        presence-absence analogues over ``visits`` occasions (beta-binomial
        detection for ``zib-a``, logistic detection otherwise).

Random numbers come from Philox generators keyed by
``SeedSequence(seed, spawn_key=(stream, replicate, ...))``. Stream 0 draws
replicate data and stream 1 draws a fixed covariate design, so replicate
``r`` is identical whatever fitters run or however replicates are spread
over workers.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit, logit

from ._engine import ModelError
from .data import Dataset
from .robust import gamma_bias_rho, ht_psi_bar
from .results import _clean
from .zib_models import fit_zib_homogeneous, fit_zib_mixture, fit_zib_regression
from .zip_models import fit_zip_homogeneous, fit_zip_mixture, fit_zip_regression

SCENARIOS = ("a", "b", "c", "zib-a", "zib-b", "zib-c")
DATA_STREAM, DESIGN_STREAM = 0, 1
Z95 = 1.959963984540054

CASE_THETA = {"c+": (1.0, 1.0, 1.0), "c0": (1.0, 0.0, 1.0), "c-": (1.0, -1.0, 1.0)}


class StudyError(RuntimeError):
    """A study could not produce a summary."""


@dataclass(frozen=True)
class FitterSpec:
    """One model fitted to every replicate.

    `model` is ``homogeneous``, ``gamma``, ``finite``, ``beta``,
    ``regression`` or ``ht`` (conditional-likelihood detection regression
    followed by the Horvitz-Thompson estimate).
    """

    name: str
    model: str = "regression"
    method: str = "ml"
    detection: str = "1"
    occurrence: str = "1"
    components: int = 2

    def __post_init__(self):
        if self.model not in ("homogeneous", "gamma", "finite", "beta", "regression", "ht"):
            raise ValueError(f"unknown fitter model {self.model!r}")
        if self.method not in ("ml", "cl"):
            raise ValueError(f"unknown fitter method {self.method!r}")
        if self.model == "ht" and self.method != "cl":
            raise ValueError("the Horvitz-Thompson fitter uses conditional likelihood")


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str
    n: int = 200
    replicates: int = 1000
    seed: int = 0
    psi: float = 0.5
    mu: float = 1.0
    kappa: float = 1.0
    kappa_grid: tuple = ()
    case: str = "i"
    theta: tuple = (1.0, -1.0, 1.0)
    gamma: tuple = (1.0, 1.0)
    visits: int = 5
    mean_p: float = 0.3
    precision: float = 2.0
    design: str = "redraw"
    design_seed: int = 0
    interval: str = "wald"
    fitters: tuple = ()

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.replicates < 2:
            raise ValueError("SD undefined: need at least two replicates")
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.kappa <= 0 or any(k <= 0 for k in self.kappa_grid):
            raise ValueError("kappa values must be positive")
        if self.design not in ("redraw", "fixed"):
            raise ValueError("design must be 'redraw' or 'fixed'")
        if self.interval not in ("wald", "logit"):
            raise ValueError("interval must be 'wald' or 'logit'")
        if not 0 < self.psi <= 1:
            raise ValueError("psi must lie in (0, 1]")
        if self.scenario.startswith("zib") and self.visits < 2:
            raise ValueError("presence-absence scenarios need at least two visits")
        fitters = tuple(f if isinstance(f, FitterSpec) else FitterSpec(**f) for f in self.fitters)
        object.__setattr__(self, "fitters", fitters or default_fitters(self.scenario))
        object.__setattr__(self, "theta", tuple(float(t) for t in self.theta))
        object.__setattr__(self, "gamma", tuple(float(g) for g in self.gamma))
        object.__setattr__(self, "kappa_grid", tuple(float(k) for k in self.kappa_grid))

    @property
    def family(self) -> str:
        return "binomial" if self.scenario.startswith("zib") else "poisson"

    @property
    def true_theta(self) -> tuple:
        if self.scenario in ("c", "zib-c") and self.case in CASE_THETA:
            return CASE_THETA[self.case]
        return self.theta

    def to_dict(self) -> dict:
        out = asdict(self)
        out["fitters"] = [asdict(f) for f in self.fitters]
        return _clean(out)


def default_fitters(scenario: str) -> tuple:
    if scenario == "a":
        return (FitterSpec("ML:homogeneous", "homogeneous", "ml"),
                FitterSpec("ML:gamma", "gamma", "ml"))
    if scenario == "zib-a":
        return (FitterSpec("ML:homogeneous", "homogeneous", "ml"),
                FitterSpec("ML:beta", "beta", "ml"))
    if scenario in ("b", "zib-b"):
        return tuple(FitterSpec(f"{m.upper()}:{label}", "regression", m, det, "1")
                     for m in ("ml", "cl")
                     for label, det in ((".", "1"), ("x1", "1 + x1"), ("x1+x2", "1 + x1 + x2")))
    return tuple(FitterSpec(f"{m.upper()}:psi~{label}", "regression", m, "1 + x1 + x2", occ)
                 for m in ("ml", "cl") for label, occ in ((".", "1"), ("x1", "1 + x1"))) + (
        FitterSpec("CL*", "ht", "cl", "1 + x1 + x2", "1"),)


def _rng(seed: int, *key) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class SimulatedData:
    dataset: Dataset
    psi_i: np.ndarray
    rate_i: np.ndarray

    @property
    def psi_bar(self) -> float:
        return float(np.mean(self.psi_i))


def _covariates(config: ScenarioConfig, rng: np.random.Generator):
    n = config.n
    if config.scenario in ("b", "zib-b"):
        if config.case == "i":
            x1 = rng.standard_normal(n)
        elif config.case == "ii":
            x1 = rng.binomial(1, 0.5, n).astype(float)
        else:
            raise ValueError(f"scenario b case must be 'i' or 'ii', not {config.case!r}")
        x2 = rng.standard_normal(n)
    elif config.scenario in ("c", "zib-c"):
        x1 = rng.standard_normal(n)
        x2 = rng.binomial(1, 0.5, n).astype(float)
    else:
        return {}
    return {"x1": x1, "x2": x2}


def design_covariates(config: ScenarioConfig):
    """The fixed covariate design (used when ``design="fixed"``)."""
    return _covariates(config, _rng(config.design_seed, DESIGN_STREAM))


def simulate_replicate(config: ScenarioConfig, replicate_index: int, design=None) -> SimulatedData:
    """Draw replicate `replicate_index` of `config`."""
    rng = _rng(config.seed, DATA_STREAM, replicate_index)
    n, sc = config.n, config.scenario
    if config.design == "fixed" and sc not in ("a", "zib-a"):
        cov = design if design is not None else design_covariates(config)
    else:
        cov = _covariates(config, rng)
    if sc in ("a", "zib-a", "b", "zib-b"):
        psi_i = np.full(n, config.psi)
    else:
        g = config.gamma
        psi_i = expit(g[0] + g[1] * cov["x1"])
    occupied = rng.random(n) < psi_i
    if sc == "a":
        lam = rng.gamma(config.kappa, config.mu / config.kappa, n)
        y = rng.poisson(lam)
        rate = lam
    elif sc == "zib-a":
        a = config.mean_p * config.precision
        b = (1.0 - config.mean_p) * config.precision
        rate = rng.beta(a, b, n)
        y = rng.binomial(config.visits, rate)
    else:
        th = config.true_theta
        eta = th[0] + th[1] * cov["x1"] + th[2] * cov["x2"]
        if config.family == "poisson":
            rate = np.exp(eta)
            y = rng.poisson(rate)
        else:
            rate = expit(eta)
            y = rng.binomial(config.visits, rate)
    y = np.where(occupied, y, 0)
    visits = config.visits if config.family == "binomial" else 1
    return SimulatedData(Dataset(y, visits, cov, family=config.family), psi_i, rate)


def generate(config: ScenarioConfig, replicate_index: int) -> Dataset:
    return simulate_replicate(config, replicate_index).dataset


# ---------------------------------------------------------------------------
# fitting one replicate


@dataclass(frozen=True)
class Record:
    replicate: int
    fitter: str
    estimand: str
    estimate: float
    se: float
    truth: float
    converged: bool
    boundary: bool


def _fit(spec: FitterSpec, data: Dataset):
    fam = data.family
    if spec.model == "homogeneous":
        freq = data.frequency_table()
        if fam == "poisson":
            return fit_zip_homogeneous(freq, spec.method)
        return fit_zib_homogeneous(freq, data.visits, spec.method)
    if spec.model in ("gamma", "finite"):
        return fit_zip_mixture(data.frequency_table(), spec.model, spec.method, components=spec.components)
    if spec.model == "beta":
        return fit_zib_mixture(data.frequency_table(), data.visits, spec.method)
    fitter = fit_zip_regression if fam == "poisson" else fit_zib_regression
    return fitter(data, spec.detection, spec.occurrence, spec.method)


def _true_terms(config):
    return ["x1", "x2"] if config.scenario in ("b", "c", "zib-b", "zib-c") else None


def fit_replicate(config: ScenarioConfig, sim: SimulatedData, replicate: int) -> list:
    """Apply every fitter to one simulated dataset."""
    rows = []
    psi_truth = sim.psi_bar if config.scenario in ("c", "zib-c") else config.psi
    true_terms = _true_terms(config)
    for spec in config.fitters:
        names = ["psi"]
        truths = [psi_truth]
        try:
            fit = _fit(spec, sim.dataset)
            if spec.model == "ht":
                ht = ht_psi_bar(sim.dataset, fit)
                est, se = [ht.psi_bar_hat], [ht.se]
                converged, boundary = fit.converged, ht.boundary
            else:
                est, se = [fit.psi], [fit.psi_se]
                converged, boundary = fit.converged, fit.boundary
                if spec.model == "regression" and true_terms is not None and list(fit.detection_terms) == true_terms:
                    k = fit.n_detection
                    names = [f"theta{j}" for j in range(k)] + names
                    truths = list(config.true_theta) + truths
                    est = list(fit.theta_hat) + est
                    se = list(fit.se[:k]) + se
        except (ModelError, ValueError, FloatingPointError, np.linalg.LinAlgError):
            est, se = [float("nan")], [float("nan")]
            converged, boundary = False, False
        for nm, e, s, t in zip(names, est, se, truths):
            rows.append(Record(replicate, spec.name, nm, float(e), float(s), float(t),
                               bool(converged), bool(boundary)))
    return rows


def _run_chunk(args):
    config, reps = args
    design = design_covariates(config) if config.design == "fixed" else None
    out = []
    for r in reps:
        out.extend(fit_replicate(config, simulate_replicate(config, r, design), r))
    return out


# ---------------------------------------------------------------------------
# summaries


@dataclass(frozen=True)
class SummaryRow:
    fitter: str
    estimand: str
    ave: float
    sd: float
    ase: float
    rmse: float
    cp: float
    used: int
    excluded: int
    boundary_count: int
    nonconverged_count: int
    truth_mean: float


def _interval_covers(est, se, truth, kind):
    if kind == "logit" and 0 < est < 1:
        lo_hi = expit(logit(est) + np.array([-Z95, Z95]) * se / (est * (1 - est)))
        return lo_hi[0] <= truth <= lo_hi[1]
    return est - Z95 * se <= truth <= est + Z95 * se


def summarize(records: Sequence[Record], interval: str = "wald",
              fitters: Optional[Sequence[str]] = None) -> "SummaryTable":
    """AVE, SD, A.SE, RMSE and CP per (fitter, estimand).

    Non-convergent and boundary-flagged replicates are excluded and
    counted. Sums use ``math.fsum`` and rows follow `fitters` (default:
    sorted names), so the result does not depend on record order.
    """
    groups: dict = {}
    for rec in records:
        groups.setdefault((rec.fitter, rec.estimand), []).append(rec)
    rank = {f: i for i, f in enumerate(fitters or sorted({k[0] for k in groups}))}

    def key(item):
        fitter, estimand = item
        return rank.get(fitter, len(rank)), fitter, estimand == "psi", estimand

    rows = []
    for fitter, estimand in sorted(groups, key=key):
        recs = groups[(fitter, estimand)]
        recs = sorted(recs, key=lambda r: r.replicate)
        ok = [r for r in recs if r.converged and not r.boundary and math.isfinite(r.estimate)]
        nb = sum(r.boundary for r in recs)
        nc = sum(not r.converged for r in recs)
        m = len(ok)
        if m == 0:
            rows.append(SummaryRow(fitter, estimand, *([float("nan")] * 5), 0, len(recs), nb, nc,
                                   float("nan")))
            continue
        est = [r.estimate for r in ok]
        ave = math.fsum(est) / m
        sd = math.sqrt(math.fsum((e - ave) ** 2 for e in est) / (m - 1)) if m > 1 else float("nan")
        ses = [r.se for r in ok if math.isfinite(r.se)]
        ase = math.fsum(ses) / len(ses) if ses else float("nan")
        rmse = math.sqrt(math.fsum((r.estimate - r.truth) ** 2 for r in ok) / m)
        cover = [r for r in ok if math.isfinite(r.se)]
        cp = 100.0 * sum(_interval_covers(r.estimate, r.se, r.truth, interval) for r in cover) / len(cover) \
            if cover else float("nan")
        truth_mean = math.fsum(r.truth for r in ok) / m
        rows.append(SummaryRow(fitter, estimand, ave, sd, ase, rmse, cp, m, len(recs) - m, nb, nc, truth_mean))
    if rows and all(r.used == 0 for r in rows):
        raise StudyError("all replicates non-convergent")
    return SummaryTable(rows)


@dataclass
class SummaryTable:
    rows: list

    def get(self, fitter: str, estimand: str = "psi") -> SummaryRow:
        for r in self.rows:
            if r.fitter == fitter and r.estimand == estimand:
                return r
        raise KeyError((fitter, estimand))

    def to_records(self) -> list:
        return [asdict(r) for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        fields = list(SummaryRow.__dataclass_fields__)
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(fields)
        for r in self.rows:
            w.writerow([_fmt(getattr(r, f)) for f in fields])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(_clean(self.to_records()), indent=2)

    def format(self) -> str:
        lines = [f"{'fitter':<18}{'estimand':<9}{'AVE':>8}{'SD':>8}{'A.SE':>8}{'RMSE':>8}{'CP':>7}{'used':>6}"]
        for r in self.rows:
            lines.append(f"{r.fitter:<18}{r.estimand:<9}{r.ave:8.3f}{r.sd:8.3f}{r.ase:8.3f}"
                         f"{r.rmse:8.3f}{r.cp:7.1f}{r.used:6d}")
        return "\n".join(lines)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def records_to_csv(records: Sequence[Record]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    fields = ["replicate", "fitter", "estimand", "estimate", "se", "truth", "converged", "boundary"]
    w.writerow(fields)
    for r in records:
        w.writerow([_fmt(getattr(r, f)) for f in fields])
    return buf.getvalue()


@dataclass
class StudyResult:
    config: ScenarioConfig
    summary: SummaryTable
    records: list = field(default_factory=list)


def run_records(config: ScenarioConfig, threads: int = 1) -> list:
    reps = list(range(config.replicates))
    if threads <= 1:
        return _run_chunk((config, reps))
    chunks = [(config, reps[i::threads]) for i in range(threads)]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(_run_chunk, chunks))
    records = [rec for part in parts for rec in part]
    order = {spec.name: i for i, spec in enumerate(config.fitters)}
    return sorted(records, key=lambda r: (r.replicate, order[r.fitter]))


def run_study(config: ScenarioConfig, threads: int = 1) -> StudyResult:
    """Fit every fitter to every replicate and summarize."""
    records = run_records(config, threads)
    summary = summarize(records, config.interval, [f.name for f in config.fitters])
    return StudyResult(config, summary, records)


# ---------------------------------------------------------------------------
# bias curve


@dataclass(frozen=True)
class CurvePoint:
    kappa: float
    log10_kappa: float
    empirical_bias_pct: float
    asymptotic_bias_pct: float
    mc_se_pct: float
    used: int
    excluded: int


def _curve_point(args):
    config, index, kappa = args
    cfg = replace(config, kappa=kappa, fitters=(FitterSpec("ML:homogeneous", "homogeneous", "ml"),))
    est = []
    excluded = 0
    for r in range(cfg.replicates):
        sim = simulate_replicate(replace(cfg, seed=_curve_seed(cfg.seed, index)), r)
        freq = sim.dataset.frequency_table()
        try:
            if cfg.family == "poisson":
                fit = fit_zip_homogeneous(freq, "cl")
            else:
                fit = fit_zib_homogeneous(freq, cfg.visits, "cl")
        except ModelError:
            excluded += 1
            continue
        if not fit.converged or not math.isfinite(fit.psi):
            excluded += 1
            continue
        est.append(fit.psi)
    m = len(est)
    mean = math.fsum(est) / m if m else float("nan")
    sd = math.sqrt(math.fsum((e - mean) ** 2 for e in est) / (m - 1)) if m > 1 else float("nan")
    emp = 100.0 * (mean - cfg.psi) / cfg.psi
    if cfg.family == "poisson":
        asym = gamma_bias_rho(cfg.mu, kappa).relative_bias_pct
    else:
        asym = float("nan")
    return CurvePoint(kappa, math.log10(kappa), emp, asym, 100.0 * sd / math.sqrt(m) / cfg.psi if m else float("nan"),
                      m, excluded)


def _curve_seed(seed, index):
    return int(np.random.SeedSequence(int(seed), spawn_key=(2, index)).generate_state(1, np.uint64)[0])


def bias_curve(config: ScenarioConfig, threads: int = 1) -> list:
    """Empirical and asymptotic relative % bias of the homogeneous presence estimate.

    For every dispersion in ``config.kappa_grid`` the homogeneous model is
    fitted to ``config.replicates`` scenario-``a`` datasets. Homogeneous
    conditional and full likelihood estimates coincide, so the closed-form
    conditional fit is used. The asymptotic column is ``100 (rho - 1)``
    with mixing variance ``mu**2 / kappa`` (``nan`` for presence-absence
    data, where no closed form is used).
    """
    if config.scenario not in ("a", "zib-a"):
        raise ValueError("bias curves need scenario 'a' or 'zib-a'")
    grid = config.kappa_grid or (config.kappa,)
    if config.scenario == "zib-a":
        raise ValueError("use binomial_bias_probe for presence-absence data")
    jobs = [(config, i, k) for i, k in enumerate(grid)]
    if threads <= 1:
        return [_curve_point(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_curve_point, jobs))


def curve_to_csv(points: Sequence[CurvePoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    fields = list(CurvePoint.__dataclass_fields__)
    w.writerow(fields)
    for p in points:
        w.writerow([_fmt(getattr(p, f)) for f in fields])
    return buf.getvalue()


def binomial_bias_probe(config: ScenarioConfig) -> dict:
    """Monte Carlo relative % bias of the homogeneous presence-absence estimate.

    Uses scenario ``zib-a`` (beta-distributed detection probabilities);
    no closed-form approximation is attempted.
    """
    if config.scenario != "zib-a":
        raise ValueError("the binomial bias probe needs scenario 'zib-a'")
    est = []
    for r in range(config.replicates):
        sim = simulate_replicate(config, r)
        try:
            fit = fit_zib_homogeneous(sim.dataset.frequency_table(), config.visits, "cl")
        except ModelError:
            continue
        if fit.converged and math.isfinite(fit.psi):
            est.append(fit.psi)
    m = len(est)
    mean = math.fsum(est) / m
    sd = math.sqrt(math.fsum((e - mean) ** 2 for e in est) / (m - 1))
    return {"mean_psi_hat": mean, "relative_bias_pct": 100.0 * (mean - config.psi) / config.psi,
            "mc_se_pct": 100.0 * sd / math.sqrt(m) / config.psi, "used": m,
            "excluded": config.replicates - m}


# ---------------------------------------------------------------------------
# configuration files


def load_config(path, **overrides) -> ScenarioConfig:
    """Read a TOML scenario file; keyword overrides win over file values."""
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    with Path(path).open("rb") as fh:
        raw = tomllib.load(fh)
    raw.update({k: v for k, v in overrides.items() if v is not None})
    grid = raw.get("kappa_grid")
    if isinstance(grid, dict):
        raw["kappa_grid"] = log_kappa_grid(grid["lo"], grid["hi"], grid["points"])
    for key in ("theta", "gamma", "kappa_grid"):
        if key in raw and not isinstance(raw[key], tuple):
            raw[key] = tuple(raw[key])
    raw["fitters"] = tuple(FitterSpec(**f) for f in raw.get("fitters", ()))
    unknown = set(raw) - set(ScenarioConfig.__dataclass_fields__)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return ScenarioConfig(**raw)


def bundled_config(name: str) -> Path:
    """Path of a configuration file shipped with the package."""
    from importlib import resources

    return Path(str(resources.files("occuhet") / "configs" / name))


def log_kappa_grid(lo: float, hi: float, points: int) -> tuple:
    if not (0 < lo <= hi) or points < 1 or (points > 1 and lo == hi):
        raise ValueError("invalid kappa grid")
    if points == 1:
        return (float(lo),)
    return tuple(float(k) for k in np.logspace(np.log10(lo), np.log10(hi), points))
