"""Scenario presets and the scheme dispatcher used by the command line.

Each preset fixes the hypotheses of one regularity statement:

* ``thm-1-1``: translation-invariant 2x2 inf-sup operator, ``f = 0``, Lipschitz ``g``;
* ``thm-1-2``: the same operator with bounded, discontinuous ``f`` and ``g``;
* ``schauder-6-2``: linear kernel with x-dependent ripple, Hölder ``f``;
* ``nonlinear-7-2``: softplus integrand operator, smooth ``f``;
* ``exact-ball``: ``a == 1``, ``f = -1``, ``g = 0``.
"""

from ._validation import UsageError
from .config import ConfigError
from .fields import ExteriorData, Grid
from .functions import Expr, as_expr
from .kernels import KernelSpec
from .operators import (ExtremalOperator, IsaacsOperator, LinearOperator, RhoOperator, RhoSpec,
                        freeze, regularize)
from .solvers import (BVPProblem, pseudo_time_march, solve_fixed_point, solve_linear_dirichlet,
                      solve_newton_rho, solve_policy_iteration)


def _kernel(cfg, spec, path):
    spec = spec or {}
    if not isinstance(spec, dict):
        raise ConfigError(path, "expected a mapping with 'profile' and 'params'")
    unknown = set(spec) - {"profile", "params"}
    if unknown:
        raise ConfigError(f"{path}.{sorted(unknown)[0]}", "unknown key (allowed: ['params', 'profile'])")
    try:
        return KernelSpec(cfg["dimension"], cfg["sigma"], cfg["sigma0"], cfg["lam"], cfg["Lam"],
                          spec.get("profile", "constant"), dict(spec.get("params") or {}))
    except (UsageError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from exc


def isaacs_family(cfg):
    """Two-by-two translation-invariant family: rows are ``beta``, columns ``alpha``."""
    n, s, s0, lam, Lam = cfg["dimension"], cfg["sigma"], cfg["sigma0"], cfg["lam"], cfg["Lam"]
    mid = 0.5 * (lam + Lam)
    k = lambda profile, **p: KernelSpec(n, s, s0, lam, Lam, profile, p)
    return IsaacsOperator([[k("constant", c=lam), k("constant", c=Lam)],
                           [k("indicator", radius=0.5, inner=Lam, outer=lam),
                            k("indicator", radius=0.5, inner=mid, outer=Lam)]])


def _center(cfg, *c):
    return tuple(c[: cfg["dimension"]]) if cfg["dimension"] > 1 else (c[0],)


def build_problem(cfg):
    """``(BVPProblem, default scheme)`` for a validated config."""
    sc = cfg["scenario"]
    n, s, s0, lam, Lam = cfg["dimension"], cfg["sigma"], cfg["sigma0"], cfg["lam"], cfg["Lam"]
    try:
        grid = Grid(n, cfg["grid"]["h"], cfg["grid"]["R_out"])
    except UsageError as exc:
        raise ConfigError("grid", str(exc)) from exc
    if sc == "thm-1-1":
        op = isaacs_family(cfg)
        f = Expr.named("zero")
        g = Expr.named("cone", slope=1.0, center=_center(cfg, 0.3, 0.2), cap=2.0)
        scheme = "policy_iteration"
    elif sc == "thm-1-2":
        if s0 <= 1.0:
            raise ConfigError("sigma0", "scenario thm-1-2 requires sigma0 > 1")
        op = isaacs_family(cfg)
        f = Expr.named("step", lo=-1.0, hi=1.0, threshold=0.2, axis=0)
        g = Expr.named("step", lo=0.0, hi=1.0, threshold=0.0, axis=0)
        scheme = "policy_iteration"
    elif sc == "schauder-6-2":
        op = LinearOperator(KernelSpec(n, s, s0, lam, Lam, "ripple",
                                       {"amp": 0.5, "k": 2.0, "freq": 3.0}))
        f = Expr.named("holder_bump", beta=0.5, x0=_center(cfg, 0.1, 0.0),
                       center=_center(cfg, 0.0, 0.0), radius=2.0, amp=1.0)
        g = Expr.named("zero")
        scheme = "direct"
    elif sc == "nonlinear-7-2":
        op = RhoOperator(RhoSpec("softplus", lam, Lam), n, s, s0)
        f = Expr.named("constant", c=-1.0)
        g = Expr.named("zero")
        scheme = "newton"
    elif sc == "exact-ball":
        op = LinearOperator(KernelSpec(n, s, s0, 1.0, 1.0, "constant", {"c": 1.0}))
        f = Expr.named("constant", c=-1.0)
        g = Expr.named("zero")
        scheme = "direct"
    else:
        op, scheme = _custom_operator(cfg)
        f = _expr(cfg["problem"]["f"], "problem.f")
        g = _expr(cfg["problem"]["g"], "problem.g")
    if cfg["operator"]["freeze"] is not None:
        op = freeze(op, cfg["operator"]["freeze"])
    if cfg["operator"]["eps"] is not None:
        op = regularize(op, cfg["operator"]["eps"])
    try:
        p = BVPProblem(op, f, ExteriorData(g), grid)
    except UsageError as exc:
        raise ConfigError("problem", str(exc)) from exc
    return p, scheme


def _expr(spec, path):
    try:
        return as_expr(spec)
    except (UsageError, TypeError, KeyError) as exc:
        raise ConfigError(path, str(exc)) from exc


def _custom_operator(cfg):
    op = cfg["operator"]
    v = op["variant"]
    n, s, s0, lam, Lam = cfg["dimension"], cfg["sigma"], cfg["sigma0"], cfg["lam"], cfg["Lam"]
    if v == "linear":
        return LinearOperator(_kernel(cfg, op["kernel"], "operator.kernel")), "direct"
    if v in ("extremal_plus", "extremal_minus"):
        return ExtremalOperator(1 if v == "extremal_plus" else -1, n, s, lam, Lam, s0), "policy_iteration"
    if v == "isaacs":
        fam = op["family"]
        if not fam:
            raise ConfigError("operator.family", "Isaacs family must be a nonempty list")
        if isinstance(fam[0], dict):
            fam = [fam]
        rows = [[_kernel(cfg, k, f"operator.family[{b}][{a}]") for a, k in enumerate(row)]
                for b, row in enumerate(fam)]
        return IsaacsOperator(rows), "policy_iteration"
    rho = dict(op["rho"] or {})
    try:
        spec = RhoSpec(rho.pop("profile", "softplus"), lam, Lam, **rho)
    except (UsageError, TypeError, ValueError) as exc:
        raise ConfigError("operator.rho", str(exc)) from exc
    return RhoOperator(spec, n, s, s0), "newton"


def solve(problem, cfg, scheme=None):
    """Dispatch to the configured scheme (``auto`` picks the scenario default)."""
    sv = cfg["solver"]
    scheme = sv["scheme"] if sv["scheme"] != "auto" else scheme
    if scheme == "direct":
        return solve_linear_dirichlet(problem)
    if scheme == "policy_iteration":
        return solve_policy_iteration(problem, tol=sv["tol"], max_iter=sv["max_iter"])
    if scheme == "newton":
        return solve_newton_rho(problem, tol=sv["tol"], max_iter=sv["max_iter"])
    if scheme == "pseudo_time":
        return pseudo_time_march(problem, cfl=sv["cfl"], tol=max(sv["tol"], 1e-12),
                                 max_iter=max(sv["max_iter"], 1))
    if scheme == "fixed_point":
        return solve_fixed_point(problem, eps=sv["eps"], theta=sv["theta"], tol=sv["tol"],
                                 max_iter=sv["max_iter"])
    raise ConfigError("solver.scheme", f"unknown scheme {scheme!r}")
