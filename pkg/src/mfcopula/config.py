"""Run configuration: JSON file, ``ST_`` environment overrides, defaults."""
from __future__ import annotations

import copy
import itertools
import json
import os
from pathlib import Path

from .exceptions import ConfigError
from .likelihood import PriorSpec
from .model import ParameterVector
from .sampler import SamplerConfig

SPEC_VERSION = "1"
ENV_PREFIX = "ST_"

DEFAULTS = {
    "seed": 0,
    "output_dir": "out",
    "theta": {
        "alpha_1": 4.0, "alpha_2": 4.0,
        "gamma_1": 0.4, "gamma_2": 0.6,
        "delta_u": 0.8, "delta_l": 0.6,
        "lambda_1": 0.6, "lambda_2": 0.3,
        "rho_12": -0.7,
    },
    "fixed": [],
    "grid": {},
    "priors": {},
    "sampler": SamplerConfig().to_dict(),
    "diagnostics": {
        "upper_thresholds": [0.9, 0.95],
        "lower_thresholds": [0.05, 0.1],
        "n_distance_bins": 3,
        "mc": 20000,
        "max_samples": 100,
    },
    "data": {
        "obs": None,
        "sites": None,
        "project": None,
        "require_complete": False,
        "per_site": False,
        "detrend": None,
        "standardized": False,
    },
}


def _merge(base, override, path=""):
    for key, val in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown configuration key {where!r}")
        if isinstance(base[key], dict) and key not in ("theta", "grid", "priors"):
            if not isinstance(val, dict):
                raise ConfigError(f"configuration key {where!r} must be an object")
            _merge(base[key], val, where + ".")
        else:
            base[key] = val


def _env_overrides(cfg, environ):
    """Apply ``ST_SECTION__KEY=value`` to existing scalar entries."""
    for name in sorted(environ):
        if not name.startswith(ENV_PREFIX):
            continue
        parts = name[len(ENV_PREFIX):].lower().split("__")
        node = cfg
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                raise ConfigError(f"environment variable {name}: no configuration section {part!r}")
            node = node[part]
        key = parts[-1]
        if key not in node or isinstance(node[key], (dict, list)):
            raise ConfigError(f"environment variable {name}: {key!r} is not a scalar configuration field")
        raw = environ[name]
        try:
            node[key] = json.loads(raw)
        except json.JSONDecodeError:
            node[key] = raw


def load_config(path=None, environ=None):
    """Resolve defaults, then the JSON file, then ``ST_`` variables."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            user = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read ({exc.strerror})") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be an object")
        user.pop("spec_version", None)
        _merge(cfg, user)
    _env_overrides(cfg, os.environ if environ is None else environ)
    return cfg


def theta_from_values(values: dict, fixed=()):
    """Build a one- or two-field :class:`ParameterVector` from named values."""
    p = sum(1 for k in values if k.startswith("alpha_"))
    if p not in (1, 2):
        raise ConfigError(f"theta must describe 1 or 2 fields, got {p}")
    try:
        arr = {b: [float(values[f"{b}_{i + 1}"]) for i in range(p)] for b in ("alpha", "gamma", "lambda")}
        rho = float(values["rho_12"]) if p == 2 else None
        du, dl = float(values["delta_u"]), float(values["delta_l"])
    except KeyError as exc:
        raise ConfigError(f"theta is missing {exc.args[0]!r}") from None
    return ParameterVector(arr["alpha"], arr["gamma"], du, dl, arr["lambda"], rho, fixed=frozenset(fixed))


def restrict_theta(values: dict, p):
    """Keep the entries of ``values`` that belong to a ``p``-field model."""
    keep = {}
    for k, v in values.items():
        base, _, idx = k.rpartition("_")
        if k in ("delta_u", "delta_l") or (k == "rho_12" and p == 2):
            keep[k] = v
        elif base in ("alpha", "gamma", "lambda") and int(idx) <= p:
            keep[k] = v
    return keep


def sampler_config(cfg) -> SamplerConfig:
    try:
        sc = SamplerConfig(**cfg["sampler"])
    except TypeError as exc:
        raise ConfigError(f"sampler: {exc}") from None
    sc.validate()
    return sc


def prior_spec(cfg) -> PriorSpec:
    return PriorSpec(dict(cfg["priors"]))


def grid_points(cfg):
    """Cartesian product of the fixed-parameter grid, in key order."""
    grid = cfg["grid"]
    if not grid:
        raise ConfigError("the configuration grid is empty")
    names = list(grid)
    for n in names:
        if not isinstance(grid[n], list) or not grid[n]:
            raise ConfigError(f"grid entry {n!r} must be a nonempty list")
    return [dict(zip(names, combo)) for combo in itertools.product(*(grid[n] for n in names))]
