"""Command-line interface: ``occuhet fit | simulate | bias-curve | replay``.

Exit codes: 0 success, 2 usage or validation error, 3 non-convergence
(output with flags is still written).
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from ._engine import ModelError
from .data import DataError, load_dataset, parse_formula
from .results import _clean
from .robust import gamma_bias_rho, ht_psi_bar
from .sim import (SCENARIOS, ScenarioConfig, StudyError, bias_curve, bundled_config, curve_to_csv,
                  load_config, log_kappa_grid, records_to_csv, run_study)
from .zib_models import fit_zib_homogeneous, fit_zib_mixture, fit_zib_regression
from .zip_models import fit_zip_homogeneous, fit_zip_mixture, fit_zip_regression

EXIT_OK, EXIT_USAGE, EXIT_NONCONVERGENCE = 0, 2, 3


class UsageError(Exception):
    pass


def _digest(path) -> Optional[str]:
    if path is None:
        return None
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def build_manifest(subcommand: str, argv: Sequence[str], config: dict, seed=None, data=None) -> dict:
    """Record of one run; ``replay`` re-executes ``argv``."""
    return _clean({
        "subcommand": subcommand,
        "argv": list(argv),
        "config": config,
        "seed": seed,
        "version": __version__,
        "input_digest": _digest(data),
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    })


def _emit_manifest(manifest: dict, path: Optional[Path]):
    text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    if path is None:
        sys.stderr.write(text)
    else:
        path.write_text(text)


def _write(text: str, out: Optional[Path]):
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)


# ---------------------------------------------------------------------------
# fit


def _mixture(value: str):
    if value in ("none", "gamma", "beta"):
        return value, None
    if value.startswith("finite:"):
        try:
            c = int(value.split(":", 1)[1])
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad mixture {value!r}") from None
        if c < 1:
            raise argparse.ArgumentTypeError("finite mixture needs at least one component")
        return "finite", c
    raise argparse.ArgumentTypeError(f"mixture must be none, gamma, beta or finite:C, not {value!r}")


def _run_fit(args):
    det_terms = parse_formula(args.detection)
    occ_terms = parse_formula(args.occurrence)
    covs = list(dict.fromkeys(det_terms + occ_terms))
    visits = [c.strip() for c in args.visits.split(",")] if args.visits else None
    data = load_dataset(args.data, y=args.y, visits=visits, covariates=covs, family=args.family,
                        n_visits=args.n_visits, site_id=args.site_id)
    kind, components = args.mixture
    if kind != "none" and (det_terms or occ_terms):
        raise UsageError("mixture detection models take no covariates")
    if kind == "beta" and args.family != "binomial":
        raise UsageError("beta mixture needs --family binomial")
    if kind in ("gamma", "finite") and args.family != "poisson":
        raise UsageError(f"{kind} mixture needs --family poisson")
    if args.ht and args.method != "cl":
        raise UsageError("--ht needs the conditional-likelihood detection stage (--method cl)")
    if args.ht and kind != "none":
        raise UsageError("--ht needs a homogeneous or regression detection model")

    freq = data.frequency_table()
    if kind == "gamma":
        fit = fit_zip_mixture(freq, "gamma", args.method)
    elif kind == "finite":
        fit = fit_zip_mixture(freq, "finite", args.method, components=components)
    elif kind == "beta":
        fit = fit_zib_mixture(freq, data.visits, args.method)
    elif det_terms or occ_terms:
        fitter = fit_zip_regression if args.family == "poisson" else fit_zib_regression
        fit = fitter(data, args.detection, args.occurrence, args.method)
    elif args.family == "poisson":
        fit = fit_zip_homogeneous(freq, args.method)
    else:
        fit = fit_zib_homogeneous(freq, data.visits, args.method)

    doc = fit.to_dict()
    if kind == "gamma" and fit.natural.get("kappa") not in (None, float("inf")):
        doc["bias_analysis"] = gamma_bias_rho(fit.natural["mu"], fit.natural["kappa"], fit.psi).to_dict()
    converged = fit.converged
    if args.ht:
        ht = ht_psi_bar(data, fit)
        doc["ht_estimate"] = ht.to_dict()
    return data, doc, converged


def cmd_fit(args, argv) -> int:
    data, doc, converged = _run_fit(args)
    out = Path(args.out) if args.out else None
    _write(json.dumps(_clean(doc), indent=2) + "\n", out)
    cfg = {k: v for k, v in vars(args).items() if k not in ("func",)}
    cfg["mixture"] = ":".join(str(p) for p in args.mixture if p is not None)
    manifest = build_manifest("fit", argv, cfg, data=args.data)
    _emit_manifest(manifest, Path(args.manifest) if args.manifest else (out.with_suffix(".manifest.json") if out else None))
    return EXIT_OK if converged else EXIT_NONCONVERGENCE


# ---------------------------------------------------------------------------
# simulate


def _study_config(args) -> ScenarioConfig:
    overrides = {"scenario": args.scenario, "seed": args.seed, "replicates": args.replicates,
                 "n": args.n, "design": args.design, "interval": args.interval, "case": args.case}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            bundled = bundled_config(args.config)
            if not bundled.is_file():
                raise UsageError(f"no such config file: {args.config}")
            path = bundled
        return load_config(path, **overrides)
    if args.scenario is None:
        raise UsageError("give --scenario or --config")
    return ScenarioConfig(**{k: v for k, v in overrides.items() if v is not None})


def cmd_simulate(args, argv) -> int:
    config = _study_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = run_study(config, threads=args.threads)
    (out / "replicates.csv").write_text(records_to_csv(result.records))
    (out / "summary.csv").write_text(result.summary.to_csv())
    (out / "summary.json").write_text(result.summary.to_json() + "\n")
    _emit_manifest(build_manifest("simulate", argv, config.to_dict(), seed=config.seed),
                   out / "manifest.json")
    if not args.quiet:
        sys.stdout.write(result.summary.format() + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# bias curve


def _grid(text: str):
    parts = text.split(":")
    try:
        if len(parts) != 3:
            raise ValueError
        lo, hi, points = float(parts[0]), float(parts[1]), int(parts[2])
        return log_kappa_grid(lo, hi, points)
    except ValueError:
        raise argparse.ArgumentTypeError(f"kappa grid must be lo:hi:points with 0 < lo <= hi, not {text!r}") from None


def cmd_bias_curve(args, argv) -> int:
    base = {"scenario": "a", "mu": args.mu, "psi": args.psi, "n": args.n,
            "replicates": args.replicates, "seed": args.seed}
    if args.config:
        config = load_config(args.config, **{k: v for k, v in base.items() if v is not None},
                             kappa_grid=args.kappa_grid)
    else:
        if args.kappa_grid is None:
            raise UsageError("give --kappa-grid or --config")
        defaults = {"mu": 1.0, "psi": 0.5, "n": 200, "replicates": 1000, "seed": 0}
        merged = {k: (defaults[k] if v is None and k in defaults else v) for k, v in base.items()}
        config = ScenarioConfig(**merged, kappa_grid=args.kappa_grid)
    points = bias_curve(config, threads=args.threads)
    out = Path(args.out) if args.out else None
    _write(curve_to_csv(points), out)
    manifest = build_manifest("bias-curve", argv, config.to_dict(), seed=config.seed)
    _emit_manifest(manifest, Path(args.manifest) if args.manifest else (out.with_suffix(".manifest.json") if out else None))
    return EXIT_OK


# ---------------------------------------------------------------------------
# replay


def cmd_replay(args, argv) -> int:
    manifest = json.loads(Path(args.manifest_file).read_text())
    old = list(manifest["argv"])
    if args.out is not None:
        old = _replace_flag(old, "--out", args.out)
    if manifest.get("input_digest") and manifest["subcommand"] == "fit":
        data = manifest["config"]["data"]
        if _digest(data) != manifest["input_digest"]:
            raise UsageError(f"input file {data} changed since the manifest was written")
    return main(old)


def _replace_flag(argv, flag, value):
    out = []
    skip = False
    found = False
    for i, a in enumerate(argv):
        if skip:
            skip = False
            continue
        if a == flag:
            out += [flag, value]
            skip = found = True
        elif a.startswith(flag + "="):
            out.append(f"{flag}={value}")
            found = True
        else:
            out.append(a)
    if not found:
        out += [flag, value]
    return out


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="occuhet", description="Occupancy models with detection and presence heterogeneity.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a zero-inflated occupancy model to a CSV file")
    p.add_argument("--family", choices=("poisson", "binomial"), required=True, help="count (poisson) or presence-absence (binomial) data")
    p.add_argument("--data", required=True, help="CSV file with a header row")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--y", help="column of per-site totals")
    g.add_argument("--visits", help="comma-separated per-visit columns, summed per site")
    p.add_argument("--n-visits", type=int, help="number of visits T when --y holds binomial totals")
    p.add_argument("--site-id", help="site identifier column")
    p.add_argument("--detection", default="1", help="detection formula, e.g. '1 + x1 + x2' (default '1')")
    p.add_argument("--occurrence", default="1", help="presence formula (default '1')")
    p.add_argument("--method", choices=("ml", "cl"), default="ml", help="full (ml) or conditional (cl) likelihood")
    p.add_argument("--mixture", type=_mixture, default=("none", None), help="detection mixture: none, gamma, finite:C or beta")
    p.add_argument("--ht", action="store_true", help="append the Horvitz-Thompson average-presence estimate")
    p.add_argument("--out", help="write fit JSON here instead of stdout")
    p.add_argument("--manifest", help="run manifest path (default next to --out, else stderr)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="run a Monte Carlo study")
    p.add_argument("--scenario", choices=SCENARIOS, help="scenario (overrides the config file)")
    p.add_argument("--config", help="TOML scenario file, or the name of a bundled one (e.g. table2.toml)")
    p.add_argument("--seed", type=int, help="base seed")
    p.add_argument("--replicates", type=int, help="number of replicates")
    p.add_argument("--n", type=int, help="sites per replicate")
    p.add_argument("--case", help="covariate law (i, ii) for scenario b, or c+, c0, c- for scenario c")
    p.add_argument("--design", choices=("redraw", "fixed"), help="redraw covariates every replicate or keep one design")
    p.add_argument("--interval", choices=("wald", "logit"), help="coverage interval scale for presence estimands")
    p.add_argument("--threads", type=int, default=1, help="worker processes (default 1)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--quiet", action="store_true", help="do not print the summary table")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bias-curve", help="relative bias of the homogeneous presence estimate against dispersion")
    p.add_argument("--mu", type=float, help="mean detection intensity (default 1)")
    p.add_argument("--psi", type=float, help="presence probability (default 0.5)")
    p.add_argument("--n", type=int, help="sites per replicate (default 200)")
    p.add_argument("--kappa-grid", type=_grid, help="log-spaced grid lo:hi:points")
    p.add_argument("--replicates", type=int, help="replicates per grid point (default 1000)")
    p.add_argument("--seed", type=int, help="base seed (default 0)")
    p.add_argument("--config", help="TOML scenario file with a kappa_grid")
    p.add_argument("--threads", type=int, default=1, help="worker processes (default 1)")
    p.add_argument("--out", help="write CSV here instead of stdout")
    p.add_argument("--manifest", help="run manifest path (default next to --out, else stderr)")
    p.set_defaults(func=cmd_bias_curve)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest_file", help="manifest JSON written by an earlier run")
    p.add_argument("--out", help="redirect outputs to this path")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_USAGE
    if getattr(args, "threads", 1) < 1:
        sys.stderr.write("occuhet: error: --threads must be positive\n")
        return EXIT_USAGE
    try:
        return args.func(args, argv)
    except StudyError as exc:
        sys.stderr.write(f"occuhet: {exc}\n")
        return EXIT_NONCONVERGENCE
    except (UsageError, DataError, ModelError, ValueError, OSError) as exc:
        sys.stderr.write(f"occuhet: error: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
