"""Command line: ``run``, ``sweep``, ``verify`` and ``inspect``.

Exit codes: 0 success, 1 failed verification, 2 configuration error,
3 solver nonconvergence (artifacts are still written).
"""

import argparse
import copy
import csv
import json
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__
from ._validation import EllipticityError, UsageError
from .config import ConfigError, canonical, config_hash, load, validate
from .diagnostics import regularity_report
from .fields import Field, Grid
from .scenarios import build_problem, solve
from .solvers import BVPProblem, solve_linear_dirichlet, solve_policy_iteration
from .verification import BUMP_GENERATOR, run_all

OUTPUT_ENV = "NONLOCAL_ELLIPTIC_OUTPUT"
EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NONCONVERGED = 0, 1, 2, 3


def _set_path(d, dotted, value):
    keys = dotted.split(".")
    for k in keys[:-1]:
        d = d.setdefault(k, {})
        if not isinstance(d, dict):
            raise ConfigError(dotted, "cannot set a key below a scalar")
    d[keys[-1]] = value


def read_config(path=None, overrides=()):
    raw = {}
    if path:
        with open(path) as fh:
            try:
                raw = yaml.safe_load(fh) or {}
            except yaml.YAMLError as exc:
                raise ConfigError("<file>", f"cannot parse YAML: {exc}") from exc
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "override must look like key.path=value")
        k, v = item.split("=", 1)
        _set_path(raw, k.strip(), yaml.safe_load(v))
    return validate(raw)


def output_dir(cfg):
    if cfg["output"]:
        return Path(cfg["output"])
    root = Path(os.environ.get(OUTPUT_ENV, "runs"))
    return root / f"{cfg['scenario']}-{config_hash(cfg)[:10]}"


def _dump(path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _manifest(cfg, artifacts):
    return {"config_hash": config_hash(cfg), "config": json.loads(canonical(cfg)),
            "artifacts": {name: {"path": name, "config_hash": config_hash(cfg)} for name in artifacts},
            "probe_generator": BUMP_GENERATOR,
            "versions": {"package": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                         "python": platform.python_version()}}


def convergence_table(cfg):
    """L-infinity error of each step against a finer reference solve of the same config."""
    rows, prev = [], None
    ref_cfg = copy.deepcopy(cfg)
    ref_cfg["grid"]["h"] = cfg["convergence"]["reference"]
    p_ref, scheme = build_problem(ref_cfg)
    ref = solve(p_ref, ref_cfg, scheme).solution
    for h in cfg["convergence"]["steps"]:
        c = copy.deepcopy(cfg)
        c["grid"]["h"] = h
        p, scheme = build_problem(c)
        u = solve(p, c, scheme).solution
        err = float(np.max(np.abs(u.values - ref.lookup(u.grid.points))))
        rel = err / float(np.max(np.abs(ref.values)))
        rows.append({"h": h, "linf_error": err, "relative_error": rel,
                     "ratio": (prev / err) if prev else None})
        prev = err
    return rows


def _write_csv(path, rows, columns):
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        wr.writeheader()
        for r in rows:
            wr.writerow({k: ("" if r.get(k) is None else (repr(r[k]) if isinstance(r[k], float) else r[k]))
                         for k in columns})


def run_experiment(cfg, out=None):
    """Solve, diagnose and write artifacts; returns ``(exit code, summary dict)``."""
    out = Path(out) if out else output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    problem, scheme = build_problem(cfg)
    report = solve(problem, cfg, scheme)
    artifacts = ["config.json", "solution.bin", "solve_report.json"]
    _dump(out / "config.json", cfg)
    report.solution.save(out / "solution.bin")
    _dump(out / "solve_report.json", report.to_dict(field_ref="solution.bin", timing=False))
    diag = cfg["diagnostics"]
    dconf = {"beta": diag["beta"], "center": diag["region"]["center"],
             "radius": diag["region"]["radius"], "allow_unconverged": True}
    if diag["scales"]:
        dconf["scales"] = list(diag["scales"])
    if diag["s_grid"]:
        dconf["s_grid"] = list(diag["s_grid"])
    summary = {"scheme": report.scheme, "converged": report.converged,
               "iterations": report.iterations, "residual": report.final_residual,
               "sup_norm": float(np.max(np.abs(report.solution.values)))}
    try:
        reg = regularity_report(problem, report, dconf)
        (out / "regularity.json").write_text(reg.to_json() + "\n")
        (out / "regularity_tables.csv").write_text(reg.tables_csv())
        artifacts += ["regularity.json", "regularity_tables.csv"]
        summary.update(alpha0=reg.alpha0.exponent, alpha0_C=reg.alpha0.constant,
                       alpha1=reg.alpha1.exponent, alpha1_r2=reg.alpha1.r2, alpha1_C=reg.alpha1.constant,
                       boundary_s=reg.boundary.s, boundary_s_fit=reg.boundary.s_fit,
                       boundary_C=reg.boundary.C, boundary_r2=reg.boundary.r2)
    except UsageError as exc:
        summary["regularity_error"] = str(exc)
    if cfg["scenario"] == "exact-ball":
        rows = convergence_table(cfg)
        _write_csv(out / "convergence.csv", rows, ["h", "linf_error", "relative_error", "ratio"])
        artifacts.append("convergence.csv")
        summary["convergence"] = rows
    _dump(out / "manifest.json", _manifest(cfg, artifacts))
    _dump(out / "timings.json", {"wall_ms": 1e3 * (time.perf_counter() - t0),
                                 "solve_wall_ms": report.wall_ms})
    summary["output"] = str(out)
    return (EXIT_OK if report.converged else EXIT_NONCONVERGED), summary


SWEEP_AXES = {"sigma": "sigma", "h": "grid.h", "epsilon": "solver.eps"}
SWEEP_COLUMNS = ["value", "status", "converged", "iterations", "residual", "sup_norm", "alpha0",
                 "alpha0_C", "alpha1", "alpha1_r2", "alpha1_C", "boundary_s", "boundary_s_fit",
                 "boundary_C", "boundary_r2", "fp_pi_gap", "error"]


def sweep(cfg, axis, values, out=None):
    """One run per value; rows record failures instead of stopping."""
    if axis not in SWEEP_AXES:
        raise ConfigError("axis", f"expected one of {list(SWEEP_AXES)}")
    out = Path(out) if out else output_dir(cfg) / f"sweep-{axis}"
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for v in values:
        raw = json.loads(canonical(cfg))
        _set_path(raw, SWEEP_AXES[axis], v)
        if axis == "epsilon":
            raw["solver"]["scheme"] = "fixed_point"
        row = {"value": v}
        try:
            c = validate(raw)
            code, summ = run_experiment(c, out / f"{axis}={v}")
            row.update({k: summ.get(k) for k in SWEEP_COLUMNS if k in summ})
            row["status"] = {0: "ok", 3: "nonconverged"}[code]
            if axis == "epsilon":
                p, _ = build_problem(c)
                ref = solve_policy_iteration(p).solution
                u = Field.load(out / f"{axis}={v}" / "solution.bin")
                row["fp_pi_gap"] = float(np.max(np.abs(u.values - ref.values)))
            if "convergence" in summ:
                row["error"] = summ["convergence"][-1]["relative_error"]
        except (UsageError, EllipticityError, RuntimeError) as exc:
            row["status"] = f"error: {exc}"
        rows.append(row)
    _write_csv(out / f"sweep_{axis}.csv", rows, SWEEP_COLUMNS)
    return rows, out / f"sweep_{axis}.csv"


def inspect_path(path):
    path = Path(path)
    if path.is_dir():
        lines = [f"run directory {path}"]
        for name in ("manifest.json", "solve_report.json", "regularity.json"):
            if (path / name).exists():
                lines.append(inspect_path(path / name))
        return "\n".join(lines)
    if path.suffix == ".bin":
        u = Field.load(path)
        return (f"{path.name}: n={u.grid.n} h={u.grid.h} R_out={u.grid.R_out} "
                f"min={u.values.min():.6g} max={u.values.max():.6g}")
    data = json.loads(path.read_text())
    lines = [f"== {path.name}"]
    for k, v in sorted(data.items()):
        if isinstance(v, list) and len(v) > 6:
            v = f"[{len(v)} entries] first={v[0]!r} last={v[-1]!r}"
        elif isinstance(v, dict):
            v = json.dumps(v, sort_keys=True)[:200]
        lines.append(f"  {k}: {v}")
    return "\n".join(lines)


def build_parser():
    ap = argparse.ArgumentParser(prog="nonlocal-elliptic",
                                 description="Nonlocal elliptic Dirichlet experiments.")
    sub = ap.add_subparsers(dest="verb", required=True)
    for verb in ("run", "sweep", "verify"):
        sp = sub.add_parser(verb)
        sp.add_argument("--config", "-c", help="YAML config file")
        sp.add_argument("--set", "-s", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field, e.g. grid.h=0.015625")
        sp.add_argument("--output", "-o", help="output directory (overrides config)")
    sub.choices["run"].add_argument("--scenario", help="shorthand for --set scenario=NAME")
    sw = sub.choices["sweep"]
    sw.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES))
    sw.add_argument("--values", required=True, nargs="+", type=float)
    sw.add_argument("--scenario", help="shorthand for --set scenario=NAME")
    vf = sub.choices["verify"]
    vf.add_argument("--inject", choices=["corrupt-kernel"])
    vf.add_argument("--samples", type=int)
    vf.add_argument("--suite", action="append", dest="suites")
    ins = sub.add_parser("inspect")
    ins.add_argument("path")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "inspect":
            print(inspect_path(args.path))
            return EXIT_OK
        overrides = list(args.set)
        if getattr(args, "scenario", None):
            overrides.insert(0, f"scenario={args.scenario}")
        cfg = read_config(args.config, overrides)
        if args.verb == "run":
            code, summ = run_experiment(cfg, args.output)
            print(json.dumps(summ, indent=2, sort_keys=True, default=float))
            if code == EXIT_NONCONVERGED:
                print("solver did not converge; artifacts written", file=sys.stderr)
            return code
        if args.verb == "sweep":
            rows, path = sweep(cfg, args.axis, args.values, args.output)
            print(path)
            return EXIT_OK
        samples = args.samples or cfg["verify"]["samples"]
        results = run_all(samples, cfg["seed"], args.inject or cfg["verify"]["inject"],
                          args.suites or cfg["verify"]["suites"])
        for r in results:
            print(json.dumps(r.to_dict(), sort_keys=True))
        return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    except (UsageError, EllipticityError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
