"""Measurable regularity functionals: difference quotients, seminorms,
residuals, Hölder-exponent fits and weighted boundary profiles.
"""

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from ._validation import UsageError, as_points, check_scalar, norm
from .fields import ExteriorData, Field, oscillation, weighted_l1_norm
from .functions import as_expr
from .kernels import WeightSpec

DEFAULT_S_GRID = tuple(np.round(np.arange(0.05, 0.951, 0.05), 2))


# -- residual -----------------------------------------------------------------------

@dataclass
class Residual:
    value: float
    nodes: np.ndarray
    values: np.ndarray

    @property
    def argmax(self):
        return tuple(self.nodes[int(np.argmax(np.abs(self.values)))])

    def __float__(self):
        return self.value


def _rhs_values(f, grid):
    if isinstance(f, Field):
        return f.interior_values
    if isinstance(f, np.ndarray) and f.shape == (grid.n_interior,):
        return f
    return np.asarray(as_expr(f)(grid.node_points(grid.interior_index)), dtype=float)


def residual(I, u, f):
    """``max |I(u,x) - f(x)|`` over interior nodes, with the per-node table."""
    vals = I.evaluate(u) - _rhs_values(f, u.grid)
    return Residual(float(np.max(np.abs(vals))) if len(vals) else 0.0, u.grid.interior_index, vals)


# -- difference quotients and seminorms ----------------------------------------------------

def _lattice_shift(u, h):
    g = u.grid
    h = as_points(h, g.n).reshape(g.n)
    k = np.rint(h / g.h).astype(int)
    if np.any(np.abs(k * g.h - h) > 1e-9):
        raise UsageError(f"shift {h} is not a lattice vector of spacing {g.h}")
    if not np.any(k):
        raise UsageError("shift h must be nonzero")
    return k


def difference_quotient(u, h, beta=1.0):
    """``w_h(x) = (u(x+h) - u(x)) / |h|^beta`` on the lattice, exterior by closed form."""
    check_scalar(beta, "beta", low=0.0, high=1.0, low_inclusive=False)
    k = _lattice_shift(u, h)
    hv = k * u.grid.h
    if norm(hv) > 0.125 + 1e-12:
        raise UsageError("|h| must not exceed 1/8")
    scale = float(norm(hv)) ** -beta
    g = u.grid
    idx = np.stack(np.meshgrid(*([np.arange(-g.M, g.M + 1)] * g.n), indexing="ij"), axis=-1)
    vals = (u.at_index(idx + k) - u.values) * scale
    e = u.exterior.expr
    ext = ExteriorData((e.translated(hv) - e) * scale)
    return Field(g, vals, ext)


def _panels(lo, hi, panels, nodes):
    t, w = np.polynomial.legendre.leggauss(nodes)
    edges = np.linspace(lo, hi, panels + 1)
    tt = np.concatenate([0.5 * (q - p) * t + 0.5 * (p + q) for p, q in zip(edges[:-1], edges[1:])])
    ww = np.concatenate([0.5 * (q - p) * w for p, q in zip(edges[:-1], edges[1:])])
    return tt, ww


_TAIL_SPLIT = 8.0


def _tail_nodes(a, s, per_unit=64, nodes=8):
    """Nodes/weights for ``int_a^inf phi(r) r^(-1-s) dr``.

    Dense composite Gauss-Legendre on ``[a, 8]`` (where closed-form data have
    their kinks), then ``t = (8/r)^s`` on the rest.
    """
    r1, w1 = _panels(a, _TAIL_SPLIT, max(1, int(np.ceil((_TAIL_SPLIT - a) * per_unit))), nodes)
    t, w2 = _panels(0.0, 1.0, 16, 16)
    r2 = _TAIL_SPLIT * t ** (-1.0 / s)
    return (np.concatenate([r1, r2]),
            np.concatenate([w1 * r1 ** (-1.0 - s), _TAIL_SPLIT ** (-s) / s * w2]))


def a_beta_seminorm(u, beta, sigma0=1.0, max_norm=0.125, return_argmax=False):
    """``sup_h |h|^-beta int_{|y|>1+2|h|} |u(y+h)-u(y)| |y|^(-n-sigma0) dy``.

    ``h`` ranges over lattice vectors with ``0 < |h| < max_norm``; the integral
    uses the exterior closed form.
    """
    check_scalar(beta, "beta", low=0.0, high=1.0, low_inclusive=False)
    g = u.grid
    e = u.exterior.expr
    kmax = int(np.ceil(max_norm / g.h))
    rng = np.arange(-kmax, kmax + 1)
    ks = np.stack(np.meshgrid(*([rng] * g.n), indexing="ij"), -1).reshape(-1, g.n)
    hs = ks * g.h
    r = norm(hs)
    keep = (r > 0) & (r < max_norm - 1e-12)
    if g.n == 1:
        keep &= ks[:, 0] > 0  # |u(y+h)-u(y)| integrated over the symmetric domain is even in h
    best, arg = 0.0, None
    for hv, hn in zip(hs[keep], r[keep]):
        rr, ww = _tail_nodes(1.0 + 2.0 * hn, sigma0, per_unit=64 if g.n == 1 else 8)
        if g.n == 1:
            y = np.concatenate([rr, -rr])[:, None]
            w = np.concatenate([ww, ww])
        else:
            m = 64
            th = 2 * np.pi * (np.arange(m) + 0.5) / m
            R_, T_ = np.meshgrid(rr, th, indexing="ij")
            y = np.stack([R_ * np.cos(T_), R_ * np.sin(T_)], -1).reshape(-1, 2)
            w = np.repeat(ww, m) * (2 * np.pi / m)
        val = float(np.sum(np.abs(e(y + hv) - e(y)) * w)) * hn ** -beta
        if val > best:
            best, arg = val, tuple(hv)
    best = float(best)
    return (best, arg) if return_argmax else best


# -- Hölder fits ------------------------------------------------------------------------

@dataclass
class HolderFit:
    order: int
    exponent: float
    slope: float
    constant: float
    r2: float
    ci: tuple
    scales: list
    increments: list
    fit_residuals: list
    floor: float
    degenerate: bool = False

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}


def _region_nodes(grid, center, radius):
    c = as_points(center, grid.n).reshape(grid.n)
    pts = grid.node_points(grid.interior_index)
    return grid.interior_index[norm(pts - c) < radius - 1e-12]


def _fit(scales, incs, order, floor):
    scales, incs = np.asarray(scales, float), np.asarray(incs, float)
    if np.all(incs <= 0.0):
        return HolderFit(order, 0.0, 0.0, 0.0, 1.0, (0.0, 0.0), scales.tolist(), incs.tolist(),
                         [0.0] * len(scales), floor, True)
    pos = incs > 0
    x, y = np.log(scales[pos]), np.log(incs[pos])
    if len(x) < 2:
        raise UsageError("not enough nonzero increments for a fit")
    res = stats.linregress(x, y)
    fitted = res.intercept + res.slope * np.log(scales)
    resid = np.where(pos, np.log(np.where(pos, incs, 1.0)) - fitted, 0.0)
    dof = len(x) - 2
    half = stats.t.ppf(0.975, dof) * res.stderr if dof > 0 else np.inf
    sst = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 if sst <= 1e-24 * len(y) else float(res.rvalue ** 2)
    exponent = res.slope - order
    return HolderFit(order, float(exponent), float(res.slope), float(np.exp(res.intercept)), r2,
                     (float(exponent - half), float(exponent + half)), scales.tolist(), incs.tolist(),
                     resid.tolist(), floor)


def dyadic_steps(grid, min_steps=4, max_length=0.25):
    """Lattice step counts ``4, 8, 16, ...`` with ``k h <= max_length``."""
    ks, k = [], min_steps
    while k * grid.h <= max_length + 1e-12:
        ks.append(k)
        k *= 2
    return ks


def holder_fit(u, region=(0.0, 0.5), d=0, scales=None):
    """Fit ``max_x |Delta_h^(d+1) u(x)| ~ C |h|^slope`` over dyadic ``|h| >= 4h``.

    ``region`` is ``(center, radius)`` inside ``B_{3/4}``, or ``"ball"`` for
    every interior node of ``B_1`` (increments then reach the exterior data,
    which exposes the boundary behaviour). For ``d=0`` the exponent is the
    slope of first increments; for ``d=1`` second increments are used and the
    exponent is ``slope - 1``.
    """
    if d not in (0, 1):
        raise UsageError("derivative order d must be 0 or 1")
    g = u.grid
    if isinstance(region, str):
        if region != "ball":
            raise UsageError(f"unknown region {region!r}")
        center, radius = 0.0, 1.0
    else:
        center, radius = region
        if norm(as_points(center, g.n).reshape(g.n)) + radius > 0.75 + 1e-12:
            raise UsageError("region must lie inside B_{3/4}")
    ks = list(scales) if scales is not None else dyadic_steps(g)
    if len(ks) < 4:
        raise UsageError(f"need at least 4 resolvable scales, got {len(ks)}")
    nodes = _region_nodes(g, center, radius)
    if len(nodes) == 0:
        raise UsageError("region contains no lattice node")
    u0 = u.at_index(nodes)
    incs = []
    for k in ks:
        best = 0.0
        for axis in range(g.n):
            e = np.zeros(g.n, dtype=int)
            e[axis] = k
            if d == 0:
                inc = np.abs(u.at_index(nodes + e) - u0)
            else:
                inc = np.abs(u.at_index(nodes + e) - 2 * u0 + u.at_index(nodes - e))
            best = max(best, float(inc.max()))
        incs.append(best)
    return _fit(np.asarray(ks) * g.h, incs, d, 4 * g.h)


# -- boundary profile ------------------------------------------------------------------------

@dataclass
class BoundaryProfile:
    s: float
    C: float
    r2: float
    s_fit: float
    beta: float
    shells: list
    gradient: object = None

    def to_dict(self):
        d = asdict(self)
        d["gradient"] = None if self.gradient is None else self.gradient.to_dict()
        return d


def _centered_gradient(u, nodes):
    g = u.grid
    out = np.empty((len(nodes), g.n))
    for i in range(g.n):
        e = np.zeros(g.n, dtype=int)
        e[i] = 1
        out[:, i] = (u.at_index(nodes + e) - u.at_index(nodes - e)) / (2 * g.h)
    return out


def _profile(values_at, nodes, grid, beta, s_grid, shrink=0.0, offset=0.0):
    """Shell maxima of ``|V(x+h)-V(x)| / |h|^beta`` and the ``d^(s-beta-offset)`` fit."""
    h = grid.h
    pts = grid.node_points(nodes)
    dist = 1.0 - norm(pts)
    V0 = values_at(nodes)
    node_set = {tuple(n) for n in nodes}
    ratios, ds = [], []
    kmax = int(np.floor(np.max(dist) / 2 / h)) if len(dist) else 0
    for k in range(1, kmax + 1):
        for axis in range(grid.n):
            for sgn in (1, -1):
                e = np.zeros(grid.n, dtype=int)
                e[axis] = sgn * k
                ok = (k * h < dist / 2) & (dist - k * h >= shrink)
                if shrink > 0:
                    ok &= np.array([tuple(n) in node_set for n in nodes + e])
                if not np.any(ok):
                    continue
                Vs = values_at(nodes[ok] + e)
                diff = Vs - V0[ok]
                mag = norm(diff) if diff.ndim > 1 else np.abs(diff)
                ratios.append(mag / (k * h) ** beta)
                ds.append(dist[ok])
    if not ratios:
        raise UsageError("no valid (x, h) pairs for the boundary profile")
    ratios, ds = np.concatenate(ratios), np.concatenate(ds)
    j = np.floor(-np.log2(ds)).astype(int)
    shells = []
    for jj in np.unique(j):
        sel = np.flatnonzero(j == jj)
        top = sel[np.argmax(ratios[sel])]
        shells.append({"shell": int(jj), "d": float(ds[top]), "pairs": int(len(sel)),
                       "max_ratio": float(ratios[top])})
    expo = beta + offset
    if np.all(ratios == 0):
        return BoundaryProfile(float(s_grid[0]), 0.0, 1.0, float(s_grid[0]), beta, shells)
    dd = np.array([s["d"] for s in shells])
    qq = np.array([s["max_ratio"] for s in shells])
    pos = qq > 0
    # the profile describes the approach to the boundary; shells with d > 1/4 see the interior
    near = pos & (np.array([s["shell"] for s in shells]) >= 2)
    if near.sum() >= 3:
        pos = near
    if pos.sum() >= 2:
        res = stats.linregress(np.log(dd[pos]), np.log(qq[pos]))
        yv = np.log(qq[pos])
        sst = np.sum((yv - yv.mean()) ** 2)
        r2 = 1.0 if sst <= 1e-20 * len(yv) else float(res.rvalue ** 2)
        s_fit = expo + res.slope
    else:
        r2, s_fit = 1.0, expo
    grid_arr = np.asarray(s_grid, dtype=float)
    s = float(grid_arr[np.argmin(np.abs(grid_arr - s_fit))])
    C = float(np.max(ratios * ds ** (expo - s)))
    return BoundaryProfile(s, C, r2, float(s_fit), beta, shells)


def weighted_boundary_profile(u, beta=1.0, s_grid=DEFAULT_S_GRID, alpha_prime=None, gradient=True):
    """Best ``(s, C)`` with ``|u(x+h)-u(x)| <= C |h|^beta (1-|x|)^(s-beta)`` over
    lattice pairs ``|h| < (1-|x|)/2`` grouped in dyadic shells.

    ``s`` is the grid value nearest to ``beta`` plus the slope of the log-log
    regression of shell maxima against the distance to the boundary; ``C`` is
    the smallest constant valid for that ``s`` over every pair. The gradient
    variant ``|grad u(x+h) - grad u(x)| <= C |h|^a' (1-|x|)^(s-a'-1)`` uses
    centered gradients and excludes nodes whose stencil leaves the interior.
    """
    check_scalar(beta, "beta", low=0.0, high=1.0, low_inclusive=False)
    g = u.grid
    nodes = g.interior_index
    prof = _profile(u.at_index, nodes, g, beta, s_grid)
    if gradient:
        ap = beta / 2 if alpha_prime is None else alpha_prime
        inner = nodes[1.0 - norm(g.node_points(nodes)) > 1.5 * g.h]
        if len(inner):
            try:
                prof.gradient = _profile(lambda idx: _centered_gradient(u, idx), inner, g, ap, s_grid,
                                         shrink=1.5 * g.h, offset=1.0)
            except UsageError:
                prof.gradient = None
    return prof


# -- structural checks -------------------------------------------------------------------------

def curvature_bound(v):
    """``max |delta2 v(x, h e_i)| / (2 h^2)`` over lattice nodes."""
    g = v.grid
    arr, off = v.padded(1)
    best = 0.0
    for axis in range(g.n):
        d2 = np.diff(arr, n=2, axis=axis)
        best = max(best, float(np.max(np.abs(d2))))
    return best / (2 * g.h ** 2)


@dataclass
class SandwichResult:
    passed: bool
    lower_margin: float
    upper_margin: float
    tol: float


def sandwich_check(I, u, v, tol=None, extremal=None):
    """Check ``M- v <= I(u+v) - I(u) <= M+ v`` at every interior node."""
    from .operators import extremal_pair

    Mp, Mm = extremal or extremal_pair(I.n, I.sigma, I.lam, I.Lam, I.sigma0)
    tol = 1e-6 * (1.0 + curvature_bound(v)) if tol is None else tol
    diff = I.evaluate(u + v) - I.evaluate(u)
    lo = diff - Mm.evaluate(v)
    hi = Mp.evaluate(v) - diff
    lm, um = float(lo.min()), float(hi.min())
    return SandwichResult(bool(lm >= -tol and um >= -tol), lm, um, float(tol))


def holder_seminorm_samples(f, grid, beta, max_length=0.5):
    """``[f]_{C^{0,beta}(B_1)}`` estimated over interior lattice pairs along the axes."""
    vals_f = f if isinstance(f, Field) else None
    nodes = grid.interior_index
    if vals_f is None:
        e = as_expr(f)
        val = lambda idx: e(grid.node_points(idx))
    else:
        val = vals_f.at_index
    v0 = val(nodes)
    inside = {tuple(n) for n in nodes}
    best = 0.0
    for k in range(1, int(max_length / grid.h) + 1):
        for axis in range(grid.n):
            e_ = np.zeros(grid.n, dtype=int)
            e_[axis] = k
            ok = np.array([tuple(n) in inside for n in nodes + e_])
            if np.any(ok):
                best = max(best, float(np.max(np.abs(val(nodes[ok] + e_) - v0[ok]))) / (k * grid.h) ** beta)
    return best


@dataclass
class QuotientCheck:
    passed: bool
    plus_margin: float
    minus_margin: float
    f_seminorm: float
    tol: float


def quotient_equation_check(I, u, f, h, beta=1.0, tol=None):
    """Check ``M+ w_h >= -[f]_beta - tol`` and ``M- w_h <= [f]_beta + tol`` on B_{3/4}.

    ``w_h`` is the difference quotient of ``u``. The default tolerance is
    ``1e-4`` plus twice the residual of ``u`` divided by ``|h|^beta``.
    """
    from .operators import extremal_pair

    if not I.translation_invariant:
        raise UsageError("quotient_equation_check needs a translation-invariant operator")
    g = u.grid
    k = _lattice_shift(u, h)
    hn = float(norm(k * g.h))
    w = difference_quotient(u, k * g.h, beta)
    if tol is None:
        tol = 1e-4 + 2.0 * residual(I, u, f).value / hn ** beta
    fsemi = holder_seminorm_samples(f, g, beta)
    nodes = _region_nodes(g, 0.0, 0.75)
    Mp, Mm = extremal_pair(I.n, I.sigma, I.lam, I.Lam, I.sigma0)
    plus = Mp.evaluate(w, nodes) + fsemi
    minus = fsemi - Mm.evaluate(w, nodes)
    pm, mm = float(plus.min()), float(minus.min())
    return QuotientCheck(bool(pm >= -tol and mm >= -tol), pm, mm, fsemi, float(tol))


# -- aggregate report ----------------------------------------------------------------------------

@dataclass
class RegularityReport:
    alpha0: HolderFit
    alpha1: HolderFit
    boundary: BoundaryProfile
    seminorms: dict
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return {"alpha0": self.alpha0.to_dict(), "alpha1": self.alpha1.to_dict(),
                "boundary": self.boundary.to_dict(), "seminorms": dict(self.seminorms),
                "config": dict(self.config)}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def tables_csv(self):
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["fit", "scale", "max_increment", "fit_residual"])
        for name, fit in (("alpha0", self.alpha0), ("alpha1", self.alpha1)):
            for s, m, r in zip(fit.scales, fit.increments, fit.fit_residuals):
                wr.writerow([name, repr(float(s)), repr(float(m)), repr(float(r))])
        return buf.getvalue()


def regularity_report(problem, solution, config=None):
    """Hölder fits on B_{1/2}, boundary profile and seminorms of a solved problem."""
    config = dict(config or {})
    u = solution.solution if hasattr(solution, "solution") else solution
    if hasattr(solution, "converged") and not solution.converged and not config.get("allow_unconverged"):
        raise UsageError("regularity_report needs a converged solve")
    scales = config.get("scales")
    region = (config.get("center", 0.0), config.get("radius", 0.5))
    beta = config.get("beta", 1.0)
    sigma0 = problem.sigma0 if problem is not None else config.get("sigma0", 1.0)
    a0 = holder_fit(u, region, 0, scales)
    a1 = holder_fit(u, region, 1, scales)
    bp = weighted_boundary_profile(u, beta, config.get("s_grid", DEFAULT_S_GRID))
    semis = {"a_beta": a_beta_seminorm(u, beta, sigma0),
             "weighted_l1": float(weighted_l1_norm(u, WeightSpec(u.grid.n, sigma0))),
             "oscillation": oscillation(u, 0.0, 1.0)}
    return RegularityReport(a0, a1, bp, semis, config)
