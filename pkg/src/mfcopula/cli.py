"""Batch command line: ``mfcopula {simulate,fit,chi,classify,select}``.

Every command writes its artifacts plus a JSON sidecar holding the resolved
configuration and seed.  Failures print one JSON line on stderr and exit
with a nonzero status.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as C
from .dataset import Dataset
from .diagnostics import (
    SelectionDesign,
    empirical_chi,
    empirical_chi_threshold,
    grid_model_selection,
    model_chi,
)
from .exceptions import ConfigError
from .ingest import (
    as_dataset,
    harmonic_detrend,
    ingest_csv,
    rank_transform,
    write_panel_csv,
    write_sites_csv,
)
from .model import classify_tails
from .sampler import fit as run_fit
from .simulate import simulate
from .spatial import SiteSet


class UsageError(Exception):
    def __init__(self, message, flag=None):
        super().__init__(message)
        self.flag = flag


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --------------------------------------------------------------------------
# Output helpers
# --------------------------------------------------------------------------

def _clean(obj):
    """JSON-safe copy: NaN/inf become null, numpy scalars become Python."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _write_json(path, payload):
    body = dict(spec_version=C.SPEC_VERSION, **payload)
    Path(path).write_text(json.dumps(_clean(body), indent=2) + "\n", encoding="utf-8")


def _outdir(cfg):
    out = Path(cfg["output_dir"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out} ({exc.strerror})", "--out") from None
    return out


# --------------------------------------------------------------------------
# Shared argument groups
# --------------------------------------------------------------------------

def _floats(text):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_common(sp):
    sp.add_argument("--config", help="JSON run configuration")
    sp.add_argument("--out", help="output directory")
    sp.add_argument("--seed", type=int)


def _add_theta(sp):
    g = sp.add_argument_group("parameters (override the configuration theta)")
    g.add_argument("--alpha", type=_floats)
    g.add_argument("--gamma", type=_floats)
    g.add_argument("--delta-u", type=float)
    g.add_argument("--delta-l", type=float)
    g.add_argument("--lam", type=_floats, help="exponential correlation ranges")
    g.add_argument("--rho", type=float)


def _add_data(sp):
    g = sp.add_argument_group("data")
    g.add_argument("--obs", help="observations CSV (field,site,replicate,value)")
    g.add_argument("--sites", help="sites CSV (site,x,y or site,lon,lat)")
    g.add_argument("--project", choices=["local-km"])
    g.add_argument("--require-complete", action="store_true", default=None)
    g.add_argument("--per-site", action="store_true", default=None, help="rank within each site")
    g.add_argument("--detrend", type=int, metavar="K", help="remove K annual harmonics before ranking")
    g.add_argument("--standardized", action="store_true", default=None,
                   help="values are already scores in (0,1); skip ranking")


def _add_sampler(sp):
    g = sp.add_argument_group("sampler")
    g.add_argument("--n-iter", type=int)
    g.add_argument("--n-burn", type=int)
    g.add_argument("--thin", type=int)
    g.add_argument("--blocking", choices=["joint", "replicate"])
    g.add_argument("--fix", help="comma-separated parameter names held at their theta values")


def _resolve(args):
    cfg = C.load_config(args.config)
    if getattr(args, "out", None):
        cfg["output_dir"] = args.out
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    th = cfg["theta"]
    for flag, base in (("alpha", "alpha"), ("gamma", "gamma"), ("lam", "lambda")):
        vals = getattr(args, flag, None)
        if vals is not None:
            for k in [k for k in th if k.startswith(base + "_")]:
                del th[k]
            th.update({f"{base}_{i + 1}": v for i, v in enumerate(vals)})
    for flag, key in (("delta_u", "delta_u"), ("delta_l", "delta_l"), ("rho", "rho_12")):
        if getattr(args, flag, None) is not None:
            th[key] = getattr(args, flag)
    data = cfg["data"]
    for key in ("obs", "sites", "project", "require_complete", "per_site", "detrend", "standardized"):
        if getattr(args, key, None) is not None:
            data[key] = getattr(args, key)
    for flag, key in (("n_iter", "n_iter"), ("n_burn", "n_burn"), ("thin", "thin"),
                      ("blocking", "latent_blocking")):
        if getattr(args, flag, None) is not None:
            cfg["sampler"][key] = getattr(args, flag)
    for spec in getattr(args, "grid", None) or []:
        name, _, vals = spec.partition("=")
        try:
            cfg["grid"][name.strip()] = [float(v) for v in vals.split(",")]
        except ValueError:
            raise UsageError(f"grid entry must look like 'delta_u=0.3,0.6', got {spec!r}", "--grid") from None
    if getattr(args, "fix", None):
        cfg["fixed"] = [s.strip() for s in args.fix.split(",") if s.strip()]
    cfg["sampler"]["seed"] = cfg["seed"]
    return cfg


def _theta(cfg, p=None, fixed=()):
    values = cfg["theta"]
    if p is not None:
        values = C.restrict_theta(values, p)
    return C.theta_from_values(values, fixed)


def _load_data(cfg) -> Dataset:
    d = cfg["data"]
    if not d["obs"] or not d["sites"]:
        raise UsageError("both --obs and --sites are required", "--obs" if not d["obs"] else "--sites")
    panel = ingest_csv(d["obs"], d["sites"], project=d["project"], require_complete=bool(d["require_complete"]))
    if d["detrend"] is not None:
        panel = harmonic_detrend(panel, d["detrend"])
    if d["standardized"]:
        return as_dataset(panel)
    return rank_transform(panel, per_site=bool(d["per_site"]))


def _data_report(data: Dataset):
    return {"p": data.p, "d": data.d, "n": data.n, "fields": list(data.field_names),
            "provenance": data.provenance, **data.meta}


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def cmd_simulate(args):
    cfg = _resolve(args)
    seed = cfg["seed"]
    theta = _theta(cfg, args.p)
    if args.sites_file:
        from .ingest import read_sites

        site_names, sites = read_sites(args.sites_file, cfg["data"]["project"])
    else:
        if args.d is None or args.d < 1:
            raise UsageError("give --d >= 1 or --sites-file", "--d")
        coords = np.random.default_rng([seed, 1]).uniform(size=(args.d, 2))
        sites = SiteSet.from_coords(coords)
        site_names = tuple(f"s{j + 1}" for j in range(args.d))
    if args.n < 1:
        raise UsageError("--n must be at least 1", "--n")
    sim = simulate(theta, sites, args.n, seed)
    out = _outdir(cfg)
    fields = tuple(f"field{i + 1}" for i in range(theta.p))
    reps = tuple(str(k + 1) for k in range(args.n))
    write_panel_csv(out / "U.csv", sim.U, fields, site_names, reps)
    write_sites_csv(out / "sites.csv", site_names, sites.coords)
    files = ["U.csv", "sites.csv"]
    if args.write_x:
        write_panel_csv(out / "X.csv", sim.X, fields, site_names, reps)
        files.append("X.csv")
    _write_json(out / "simulate.json", {
        "command": "simulate", "seed": seed, "config": cfg,
        "arguments": {"p": theta.p, "d": sites.d, "n": args.n},
        "theta": theta.as_dict(), "sites": {"names": site_names, "coords": sites.coords},
        "files": files,
    })
    return 0


def _write_chain(out, chain, cfg, data, extra=None):
    nat = chain.natural()
    with open(out / "chain.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(chain.names)
        for row in nat:
            w.writerow([repr(float(v)) for v in row])
    _write_json(out / "chain.json", {
        "command": "fit", "seed": cfg["seed"], "config": cfg,
        "template": chain.template.as_dict(), "free": list(chain.names),
        "fixed_names": sorted(chain.template.fixed), "data": _data_report(data),
        "summary": chain.summary(), **(extra or {}),
    })


def _fit_one(cfg, data, fixed_values=None):
    fixed = set(cfg["fixed"]) | set(fixed_values or {})
    values = C.restrict_theta(dict(cfg["theta"], **(fixed_values or {})), data.p)
    template = C.theta_from_values(values, fixed & set(values))
    return run_fit(data, template, C.prior_spec(cfg), C.sampler_config(cfg))


def cmd_fit(args):
    cfg = _resolve(args)
    data = _load_data(cfg)
    chain = _fit_one(cfg, data)
    _write_chain(_outdir(cfg), chain, cfg, data)
    return 0


def load_chain(path):
    """Read a ``chain.json`` (or its directory) and the sibling ``chain.csv``.

    Returns ``(metadata, list of ParameterVector)``.
    """
    path = Path(path)
    if path.is_dir():
        path = path / "chain.json"
    try:
        meta = json.loads(path.read_text(encoding="utf-8"))
        with open(path.with_suffix(".csv"), encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read chain {path}: {exc}", "--chain") from None
    template = C.theta_from_values(meta["template"], meta["fixed_names"])
    names = rows[0]
    samples = [template.with_values(dict(zip(names, map(float, r)))) for r in rows[1:]]
    if not samples:
        raise UsageError(f"chain {path} holds no samples", "--chain")
    return meta, samples


def _pair(text):
    try:
        a, b = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"pair must look like '1,2', got {text!r}") from None
    if a < 1 or b < 1:
        raise argparse.ArgumentTypeError("fields are numbered from 1")
    return (a - 1, b - 1)


def _write_curve(path, curve):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tail", "pair", "abscissa_type", "abscissa", "estimate", "lo", "hi", "estimator"])
        for row in curve.rows():
            w.writerow([v if isinstance(v, str) else ("" if not math.isfinite(v) else repr(v)) for v in row])


def cmd_chi(args):
    cfg = _resolve(args)
    seed = cfg["seed"]
    diag = cfg["diagnostics"]
    mc = args.mc or diag["mc"]
    data = _load_data(cfg) if cfg["data"]["obs"] or cfg["data"]["sites"] else None
    samples = load_chain(args.chain)[1] if args.chain else None
    if data is None and samples is None:
        raise UsageError("give data (--obs/--sites) and/or --chain", "--chain")
    p = data.p if data is not None else samples[0].p
    pairs = args.pair or [(a, b) for a in range(p) for b in range(a, p)]
    for a, b in pairs:
        if max(a, b) >= p:
            raise UsageError(f"pair {a + 1},{b + 1} refers to a field beyond p={p}", "--pair")
    tails = ["upper", "lower"] if args.tail == "both" else [args.tail]
    out = _outdir(cfg)
    files = []
    for t, tail in enumerate(tails):
        for pair in pairs:
            label = f"{pair[0] + 1}{pair[1] + 1}"
            curves = []
            if args.vs == "distance":
                u = args.u if args.u is not None else (0.9 if tail == "upper" else 0.1)
                centres = None
                if data is not None:
                    curve = empirical_chi(data, tail, pair, u, bins=args.bins)
                    centres = curve.abscissa
                    curves.append(curve)
                if samples is not None:
                    h = np.asarray(args.h if args.h else centres if centres is not None else [0.1, 0.5, 1.0])
                    curves.append(model_chi(samples, tail, pair, h, u, mc=mc, seed=seed,
                                            max_samples=args.max_samples or diag["max_samples"]))
            else:
                if args.h_range is None or args.u_grid is None:
                    raise UsageError("threshold curves need --h-range and --u-grid", "--h-range")
                if data is not None:
                    curves.append(empirical_chi_threshold(data, tail, pair, args.h_range, args.u_grid))
                if samples is not None:
                    h = float(np.mean(args.h_range))
                    curves.append(model_chi(samples, tail, pair, h, np.asarray(args.u_grid), mc=mc, seed=seed,
                                            max_samples=args.max_samples or diag["max_samples"]))
            for curve in curves:
                name = f"chi_{curve.estimator}_{tail}_{label}_{args.vs}.csv"
                _write_curve(out / name, curve)
                files.append(name)
    _write_json(out / "chi.json", {
        "command": "chi", "seed": seed, "config": cfg, "chain": args.chain, "files": files,
        "arguments": {"vs": args.vs, "u": args.u, "bins": args.bins, "h": args.h, "h_range": args.h_range,
                      "u_grid": args.u_grid, "mc": mc, "tail": args.tail,
                      "pairs": [[a + 1, b + 1] for a, b in pairs]},
    })
    return 0


def cmd_classify(args):
    cfg = _resolve(args)
    if args.chain:
        meta, samples = load_chain(args.chain)
        template = samples[0]
        med = np.median([[s.as_dict()[n] for n in meta["free"]] for s in samples], axis=0)
        theta = template.with_values(dict(zip(meta["free"], med)))
        source = "posterior median"
    else:
        theta = _theta(cfg, args.p)
        source = "parameters"
    report = classify_tails(theta)
    _write_json(_outdir(cfg) / "classify.json", {
        "command": "classify", "seed": cfg["seed"], "config": cfg, "source": source,
        "theta": theta.as_dict(), "labels": report.summary(), "report": report.to_dict(),
    })
    return 0


def _select_job(job):
    cfg, data, fixed_values, cell_dir = job
    chain = _fit_one(cfg, data, fixed_values)
    cell_dir.mkdir(parents=True, exist_ok=True)
    _write_chain(cell_dir, chain, cfg, data, {"grid_point": fixed_values})
    return fixed_values, chain


def cmd_select(args):
    cfg = _resolve(args)
    points = C.grid_points(cfg)
    data = _load_data(cfg)
    out = _outdir(cfg)
    jobs = []
    for k, point in enumerate(points):
        cell_cfg = json.loads(json.dumps(cfg))
        cell_cfg["seed"] = cell_cfg["sampler"]["seed"] = cfg["seed"] + k
        jobs.append((cell_cfg, data, point, out / f"cell_{k:03d}"))
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            fits = list(pool.map(_select_job, jobs))
    else:
        fits = [_select_job(j) for j in jobs]
    diag = cfg["diagnostics"]
    design = SelectionDesign(tuple(diag["upper_thresholds"]), tuple(diag["lower_thresholds"]),
                             diag["n_distance_bins"])
    ranking = grid_model_selection(fits, data, design, mc=diag["mc"], seed=cfg["seed"],
                                   max_samples=diag["max_samples"])
    for r in ranking:
        r["cell"] = f"cell_{r['index']:03d}"
    _write_json(out / "select.json", {
        "command": "select", "seed": cfg["seed"], "config": cfg, "data": _data_report(data),
        "ranking": ranking,
    })
    return 0


# --------------------------------------------------------------------------
# Entry point
# --------------------------------------------------------------------------

def build_parser():
    parser = _Parser(prog="mfcopula", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    sp = sub.add_parser("simulate", help="simulate data on the uniform scale")
    _add_common(sp)
    _add_theta(sp)
    sp.add_argument("--p", type=int, choices=[1, 2], default=2)
    sp.add_argument("--d", type=int, help="number of sites drawn uniformly on the unit square")
    sp.add_argument("--sites-file", help="sites CSV instead of random sites")
    sp.add_argument("--project", choices=["local-km"])
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--write-x", action="store_true", help="also write model-scale values")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("fit", help="run the MCMC sampler on data")
    _add_common(sp)
    _add_theta(sp)
    _add_data(sp)
    _add_sampler(sp)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("chi", help="empirical and/or model tail-dependence curves")
    _add_common(sp)
    _add_data(sp)
    sp.add_argument("--chain", help="chain.json (or its directory) for model curves")
    sp.add_argument("--tail", choices=["upper", "lower", "both"], default="both")
    sp.add_argument("--pair", type=_pair, action="append", help="fields, e.g. 1,2 (repeatable)")
    sp.add_argument("--vs", choices=["distance", "threshold"], default="distance")
    sp.add_argument("--u", type=float, help="threshold for distance curves")
    sp.add_argument("--bins", type=int, default=12)
    sp.add_argument("--h", type=_floats, help="distances for model curves")
    sp.add_argument("--h-range", type=_floats, help="distance window lo,hi for threshold curves")
    sp.add_argument("--u-grid", type=_floats)
    sp.add_argument("--mc", type=int)
    sp.add_argument("--max-samples", type=int)
    sp.set_defaults(func=cmd_chi)

    sp = sub.add_parser("classify", help="tail dependence classes for parameters or a chain")
    _add_common(sp)
    _add_theta(sp)
    sp.add_argument("--p", type=int, choices=[1, 2], default=2)
    sp.add_argument("--chain")
    sp.set_defaults(func=cmd_classify)

    sp = sub.add_parser("select", help="fit every grid point and rank by chi discrepancy")
    _add_common(sp)
    _add_theta(sp)
    _add_data(sp)
    _add_sampler(sp)
    sp.add_argument("--grid", action="append", metavar="NAME=V1,V2,...",
                    help="fixed-parameter grid axis (repeatable; overrides the configuration grid)")
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_select)
    return parser


def _fail(kind, message, flag=None, status=1):
    payload = {"error": kind, "message": str(message)}
    if flag:
        payload["flag"] = flag
    print(json.dumps(payload), file=sys.stderr)
    return status


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        return _fail("UsageError", exc, exc.flag, 2)
    except (ValueError, RuntimeError, OSError) as exc:
        return _fail(type(exc).__name__, exc)


if __name__ == "__main__":
    sys.exit(main())
