"""Experiment configuration: defaults, loading and validation.

Configs are YAML trees. Unknown keys are rejected and every error names the
offending field path.
"""

import copy
import hashlib
import json

import yaml

from ._validation import UsageError

SCENARIOS = ("thm-1-1", "thm-1-2", "schauder-6-2", "nonlinear-7-2", "exact-ball", "custom")
SCHEMES = ("auto", "direct", "policy_iteration", "newton", "pseudo_time", "fixed_point")
VARIANTS = ("linear", "extremal_plus", "extremal_minus", "isaacs", "rho")

DEFAULTS = {
    "scenario": "exact-ball",
    "dimension": 1,
    "sigma": 1.5,
    "sigma0": None,   # scenario default, see SCENARIO_SIGMA0
    "lam": 1.0,
    "Lam": 2.0,
    "grid": {"h": 0.0078125, "R_out": 4.0},
    "operator": {"variant": None, "kernel": None, "family": None, "rho": None, "freeze": None,
                 "eps": None},
    "problem": {"f": None, "g": None},
    "solver": {"scheme": "auto", "tol": 1e-10, "max_iter": 200, "eps": 0.1, "theta": 0.5,
               "cfl": 0.9},
    "diagnostics": {"scales": None, "region": {"center": 0.0, "radius": 0.5}, "beta": 1.0,
                    "s_grid": None},
    "convergence": {"steps": [0.03125, 0.015625, 0.0078125], "reference": 0.001953125},
    "verify": {"samples": 100, "inject": None, "suites": None},
    "output": None,
    "seed": 0,
}


# thm-1-2 needs a floor order above 1
SCENARIO_SIGMA0 = {"thm-1-2": 1.1}


class ConfigError(UsageError):
    def __init__(self, path, message):
        super().__init__(f"config error at {path}: {message}")
        self.path = path


def _merge(defaults, user, path):
    out = {}
    for k, v in user.items():
        if k not in defaults:
            raise ConfigError(f"{path}{k}", f"unknown key (allowed: {sorted(defaults)})")
    for k, d in defaults.items():
        v = user.get(k, copy.deepcopy(d))
        if isinstance(d, dict):
            if v is None:
                v = {}
            if not isinstance(v, dict):
                raise ConfigError(f"{path}{k}", "expected a mapping")
            v = _merge(d, v, f"{path}{k}.")
        out[k] = v
    return out


def _number(cfg, path, low=None, high=None, low_open=False, high_open=False, integer=False):
    keys = path.split(".")
    parent = cfg
    for k in keys[:-1]:
        parent = parent[k]
    v = parent[keys[-1]]
    if isinstance(v, str):
        try:
            v = float(v)  # YAML 1.1 reads "1e-14" as a string
        except ValueError:
            pass
        else:
            parent[keys[-1]] = v
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, f"expected a number, got {v!r}")
    if integer and int(v) != v:
        raise ConfigError(path, f"expected an integer, got {v!r}")
    if low is not None and (v < low or (low_open and v == low)):
        raise ConfigError(path, f"{v} is below the allowed range ({'>' if low_open else '>='} {low})")
    if high is not None and (v > high or (high_open and v == high)):
        raise ConfigError(path, f"{v} is above the allowed range ({'<' if high_open else '<='} {high})")
    return v


def validate(user):
    """Merge ``user`` into the defaults and check every constraint."""
    if user is None:
        user = {}
    if not isinstance(user, dict):
        raise ConfigError("<root>", "config must be a mapping")
    cfg = _merge(DEFAULTS, user, "")
    if cfg["scenario"] not in SCENARIOS:
        raise ConfigError("scenario", f"unknown scenario {cfg['scenario']!r}; known: {list(SCENARIOS)}")
    _number(cfg, "dimension", 1, 2, integer=True)
    cfg["dimension"] = int(cfg["dimension"])
    if cfg["sigma0"] is None:
        cfg["sigma0"] = SCENARIO_SIGMA0.get(cfg["scenario"], 1.0)
    _number(cfg, "sigma0", 0.0, 2.0, low_open=True, high_open=True)
    _number(cfg, "sigma", cfg["sigma0"], 2.0, low_open=True, high_open=True)
    _number(cfg, "lam", 0.0, low_open=True)
    _number(cfg, "Lam", 0.0, low_open=True)
    if cfg["lam"] > cfg["Lam"]:
        raise ConfigError("lam", f"lam ({cfg['lam']}) must not exceed Lam ({cfg['Lam']})")
    _number(cfg, "grid.h", 0.0, 0.5, low_open=True)
    _number(cfg, "grid.R_out", 2.0)
    inv = 1.0 / cfg["grid"]["h"]
    if abs(inv - round(inv)) > 1e-9:
        raise ConfigError("grid.h", "1/h must be an integer")
    if cfg["solver"]["scheme"] not in SCHEMES:
        raise ConfigError("solver.scheme", f"unknown scheme {cfg['solver']['scheme']!r}; known: {list(SCHEMES)}")
    _number(cfg, "solver.tol", 0.0, low_open=True)
    _number(cfg, "solver.max_iter", 1, integer=True)
    _number(cfg, "solver.eps", 0.0, 0.25, low_open=True, high_open=True)
    _number(cfg, "solver.theta", 0.0, 1.0, low_open=True)
    _number(cfg, "solver.cfl", 0.0, 1.0, low_open=True)
    _number(cfg, "diagnostics.beta", 0.0, 1.0, low_open=True)
    _number(cfg, "diagnostics.region.radius", 0.0, 0.75, low_open=True)
    _number(cfg, "seed", 0, integer=True)
    _number(cfg, "verify.samples", 1, integer=True)
    op = cfg["operator"]
    if cfg["scenario"] != "custom":
        for key in ("variant", "kernel", "family", "rho", "freeze"):
            if op[key] is not None:
                raise ConfigError(f"operator.{key}", f"only configurable for scenario 'custom' "
                                  f"(scenario {cfg['scenario']!r} fixes the operator)")
        for key in ("f", "g"):
            if cfg["problem"][key] is not None:
                raise ConfigError(f"problem.{key}", "only configurable for scenario 'custom'")
    elif op["variant"] not in VARIANTS:
        raise ConfigError("operator.variant", f"expected one of {list(VARIANTS)}")
    if op["eps"] is not None:
        _number(cfg, "operator.eps", 0.0, 0.25, low_open=True, high_open=True)
    if cfg["verify"]["inject"] not in (None, "corrupt-kernel"):
        raise ConfigError("verify.inject", "expected null or 'corrupt-kernel'")
    return cfg


def load(path):
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError("<file>", f"cannot parse YAML: {exc}") from exc
    return validate(data)


def canonical(cfg):
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)


def config_hash(cfg):
    return hashlib.sha256(canonical(cfg).encode()).hexdigest()
