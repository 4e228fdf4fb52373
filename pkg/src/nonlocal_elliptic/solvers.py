"""Discrete Dirichlet solvers for ``I(u, x) = f(x)`` in B_1, ``u = g`` outside.

All schemes are monotone, so discrete solutions stand in for viscosity
solutions (Barles-Souganidis). Linear algebra is dense: the kernels couple
every pair of nodes.
"""

import json
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from ._validation import ResourceError, SolverError, UsageError, check_scalar
from .diagnostics import residual
from .fields import ExteriorData, Field, sample
from .functions import as_expr
from .operators import (ExtremalOperator, FrozenOperator, IsaacsOperator, LinearOperator,
                        RegularizedOperator, RhoOperator, contract, fractional_laplacian,
                        regularize, split_F)
from .quadrature import differences, stencil

MAX_UNKNOWNS = 10_000
_CHUNK_ENTRIES = 2_000_000


@dataclass
class BVPProblem:
    """``operator(u) = f`` in B_1 and ``u = g`` outside, on ``grid``."""

    operator: object
    f: object
    g: object
    grid: object

    def __post_init__(self):
        if self.grid.n != self.operator.n:
            raise UsageError("operator and grid dimensions differ")
        if isinstance(self.f, Field):
            if self.f.grid != self.grid:
                raise UsageError("rhs field lives on a different grid")
        else:
            self.f = as_expr(self.f)
        self.g = self.g if isinstance(self.g, ExteriorData) else ExteriorData(as_expr(self.g))
        if not np.all(np.isfinite(self.rhs)):
            raise UsageError("rhs f must be bounded on B_1")

    @property
    def sigma(self):
        return self.operator.sigma

    @property
    def sigma0(self):
        return self.operator.sigma0

    @property
    def rhs(self):
        if isinstance(self.f, Field):
            return self.f.interior_values
        return np.asarray(self.f(self.grid.node_points(self.grid.interior_index)), dtype=float)

    def rhs_field(self):
        if isinstance(self.f, Field):
            return self.f
        return sample(self.grid, self.f, self.g)

    def field(self, interior=None):
        """Field with the given interior values and exterior data ``g``."""
        u = sample(self.grid, 0.0, self.g)
        return u if interior is None else u.with_interior(interior)

    def with_operator(self, op):
        return BVPProblem(op, self.f, self.g, self.grid)

    def to_dict(self):
        f = {"field": True} if isinstance(self.f, Field) else self.f.to_dict()
        return {"operator": self.operator.to_dict(), "f": f, "g": self.g.to_dict(),
                "grid": self.grid.to_dict()}


@dataclass
class SolveReport:
    solution: Field
    iterations: int
    residuals: list
    scheme: str
    wall_ms: float
    converged: bool
    extras: dict = field(default_factory=dict)

    @property
    def final_residual(self):
        return self.residuals[-1]

    def to_dict(self, field_ref=None, timing=True):
        d = {"scheme": self.scheme, "iterations": int(self.iterations),
             "residuals": [float(r) for r in self.residuals], "converged": bool(self.converged),
             "field_ref": field_ref, "extras": _plain(self.extras)}
        if timing:
            d["wall_ms"] = float(self.wall_ms)
        return d

    def to_json(self, field_ref=None, timing=True):
        return json.dumps(self.to_dict(field_ref, timing), indent=2, sort_keys=True)


def _plain(v):
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return v


# -- assembly ---------------------------------------------------------------------

@dataclass
class LinearSystem:
    """Discrete linear operator on interior unknowns: values = ``A @ u_int + b``."""

    A: np.ndarray
    b: np.ndarray
    grid: object

    def rhs(self, f):
        return np.asarray(f, dtype=float) - self.b

    def apply(self, u_int):
        return self.A @ u_int + self.b


def _check_budget(grid):
    if grid.n_interior > MAX_UNKNOWNS:
        raise ResourceError(f"{grid.n_interior} interior nodes exceed the dense budget of {MAX_UNKNOWNS}")


def assemble(op, u, coeff_fn=None):
    """Assemble the linear operator with coefficients ``coeff_fn(D, X, rows)``.

    By default the coefficients come from ``op._linearize`` at ``u``. Values of
    ``u`` outside the unit ball (lattice and closed form) go into ``b``.
    """
    g = u.grid
    _check_budget(g)
    st = stencil(g, op.sigma)
    coeff_fn = coeff_fn or (lambda D, X, rows: op._linearize(D, X))
    nodes = g.interior_index
    N = len(nodes)
    reach = int(np.max(np.abs(nodes))) + g.K + 1
    pad = max(0, reach - g.M)
    vals, off = u.padded(pad)
    num = np.full(vals.shape, -1, dtype=np.int64)
    num[tuple((nodes + off).T)] = np.arange(N)
    vals = np.where(num >= 0, 0.0, vals).ravel()
    num = num.ravel()
    if g.n == 1:
        lin = nodes[:, 0] + off
        ko_mid = st.mid_offsets[:, 0]
        ko_near = np.array([1])
    else:
        P = vals.size // (2 * (g.M + pad) + 1)
        lin = (nodes[:, 0] + off) * P + nodes[:, 1] + off
        ko_mid = st.mid_offsets[:, 0] * P + st.mid_offsets[:, 1]
        ko_near = np.array([P, 1])
    A = np.zeros(N * N)
    b = np.zeros(N)
    diag = np.zeros(N)
    fac = 2.0 - st.sigma
    step = max(1, _CHUNK_ENTRIES // (len(ko_mid) + len(st.far_weights) + g.n))
    for a in range(0, N, step):
        rows = np.arange(a, min(N, a + step))
        D = differences(st, u, nodes[rows])
        C = coeff_fn(D, nodes[rows] * g.h, rows).full(len(rows))
        for ko, coef in ((ko_mid, fac * C.mid * st.mid_weights),
                         (ko_near, fac * C.near * st.near_weight)):
            diag[rows] -= 2.0 * coef.sum(axis=1)
            for sgn in (1, -1):
                nb = lin[rows, None] + sgn * ko[None]
                j = num[nb]
                inside = j >= 0
                A += np.bincount((rows[:, None] * N + j)[inside], weights=coef[inside], minlength=N * N)
                b[rows] += np.sum(np.where(inside, 0.0, coef * vals[nb]), axis=1)
        cf = fac * C.far * st.far_weights
        diag[rows] -= 2.0 * cf.sum(axis=1)
        b[rows] += np.sum(cf * (D.far + 2.0 * D.center[:, None]), axis=1)
    A = A.reshape(N, N)
    A[np.arange(N), np.arange(N)] += diag
    return LinearSystem(A, b, g)


def assemble_fractional_laplacian(grid, sigma, C0=1.0, exterior=None, sigma0=None):
    """System for ``C0 L1 = -C0 (-Delta)^(sigma/2)`` with exterior data folded into ``b``."""
    _check_budget(grid)
    s0 = min(1.0, sigma / 2) if sigma0 is None else sigma0
    op = fractional_laplacian(grid.n, sigma, s0)
    u = sample(grid, 0.0, ExteriorData.zero() if exterior is None else exterior)
    S = assemble(op, u)
    return LinearSystem(C0 * S.A, C0 * S.b, grid)


def _dense_solve(A, r):
    try:
        lu = linalg.lu_factor(A, check_finite=True)
    except (ValueError, linalg.LinAlgError) as exc:
        raise SolverError(f"dense factorisation failed: {exc}") from exc
    if np.any(np.abs(np.diag(lu[0])) < 1e-300):
        raise SolverError("singular system; the assembly should be monotone")
    x = linalg.lu_solve(lu, r)
    x = x + linalg.lu_solve(lu, r - A @ x)
    if not np.all(np.isfinite(x)):
        raise SolverError("non-finite solution from the dense solve")
    return x


def _is_linear(op):
    if isinstance(op, LinearOperator):
        return True
    if isinstance(op, RhoOperator):
        return op.rho.profile == "linear"
    if isinstance(op, (FrozenOperator, RegularizedOperator)):
        return _is_linear(op.inner)
    return False


def _report(p, op, u, scheme, iters, history, t0, converged, **extras):
    final = residual(op, u, p.rhs_field())
    history = list(history)
    if not history or history[-1] != final.value:
        history.append(final.value)
    return SolveReport(u, iters, history, scheme, 1e3 * (time.perf_counter() - t0), converged, extras)


def solve_linear_dirichlet(p):
    """Direct dense solve for a linear operator."""
    t0 = time.perf_counter()
    if not _is_linear(p.operator):
        raise UsageError("solve_linear_dirichlet needs a linear operator")
    u0 = p.field()
    S = assemble(p.operator, u0)
    u = p.field(_dense_solve(S.A, S.rhs(p.rhs)))
    return _report(p, p.operator, u, "direct", 1, [], t0, True)


def _require_sigma_gt_one(p):
    if p.sigma <= 1.0:
        raise UsageError(f"this solver requires sigma > 1 (got {p.sigma})")


def solve_fixed_point(p, eps=0.1, theta=0.5, tol=1e-10, max_iter=200):
    """Damped Picard iteration ``u <- (1-theta) u + theta G[u]``.

    ``G[u]`` solves ``lam L1 G = f - F(u)`` in B_1 with ``G = g`` outside,
    where ``J^eps(u) = lam L1 u + F(u)``. The first iterate is ``G[0]``.
    """
    t0 = time.perf_counter()
    _require_sigma_gt_one(p)
    check_scalar(theta, "theta", low=0.0, high=1.0, low_inclusive=False)
    J = p.operator if isinstance(p.operator, RegularizedOperator) else regularize(p.operator, eps)
    C0 = J.lam
    S = assemble_fractional_laplacian(p.grid, p.sigma, C0, p.g, p.sigma0)
    lu = linalg.lu_factor(S.A)
    f = p.rhs

    def G(u):
        F, _ = split_F(J, u)
        r = S.rhs(f - F)
        x = linalg.lu_solve(lu, r)
        return x + linalg.lu_solve(lu, r - S.A @ x), F

    g0, F0 = G(p.field())
    u = p.field(g0)
    history, lip = [], 0.0
    Gu, Fu = G(u)
    converged = False
    it = 0
    best = (np.inf, u)
    while it < max_iter:
        it += 1
        new = (1.0 - theta) * u.interior_values + theta * Gu
        step = float(np.max(np.abs(new - u.interior_values)))
        u_next = p.field(new)
        Gn, Fn = G(u_next)
        if step > 0:
            lip = max(lip, float(np.max(np.abs(Fn - Fu))) / step)
        u, Gu, Fu = u_next, Gn, Fn
        r = residual(J, u, p.rhs_field()).value
        history.append(r)
        if r < best[0]:
            best = (r, u)
        if step <= tol:
            converged = True
            break
    if not converged:
        u = best[1]
    orig = residual(p.operator, u, p.rhs_field()).value if not isinstance(p.operator, RegularizedOperator) else None
    return _report(p, J, u, "fixed_point", it, history, t0, converged,
                   eps=J.eps, theta=theta, C0=C0, F_lipschitz=lip, original_residual=orig)


def solve_policy_iteration(p, tol=1e-10, max_iter=50):
    """Howard iteration; inf-sup operators use an outer loop over ``beta``.

    For a fixed ``beta`` policy the inner loop alternates ``argmax_alpha`` and
    linear solves until the ``alpha`` policy is stable. The outer loop then
    updates ``beta`` by ``argmin`` and stops when it no longer changes.
    Extremal and linear operators are one-player problems whose policy is
    read from ``_linearize``; they stop when a solve reproduces the iterate.
    """
    t0 = time.perf_counter()
    op = p.operator
    if not isinstance(op, (IsaacsOperator, ExtremalOperator)) and not _is_linear(op):
        raise UsageError("policy iteration needs an Isaacs, extremal or linear operator")
    u = p.field()
    history, iters, converged = [], 0, False
    if isinstance(op, IsaacsOperator):
        beta = None
        for _ in range(max_iter):
            beta_new = _beta_policy(op, u, beta)
            if beta is not None and np.array_equal(beta_new, beta):
                converged = True
                break
            beta = beta_new
            alpha = None
            for _ in range(max_iter):
                alpha_new = _alpha_policy(op, u, beta, alpha)
                if alpha is not None and np.array_equal(alpha_new, alpha):
                    break
                alpha = alpha_new
                S = assemble(op, u, lambda D, X, rows: op._coeffs_for(D, X, beta[rows], alpha[rows]))
                u = p.field(_dense_solve(S.A, S.rhs(p.rhs)))
                iters += 1
                history.append(residual(op, u, p.rhs_field()).value)
    else:
        for _ in range(max_iter):
            S = assemble(op, u)
            new = _dense_solve(S.A, S.rhs(p.rhs))
            iters += 1
            same = np.array_equal(new, u.interior_values)
            u = p.field(new)
            history.append(residual(op, u, p.rhs_field()).value)
            if same or _is_linear(op) or history[-1] <= tol:
                converged = True
                break
    converged = converged or (bool(history) and history[-1] <= tol)
    return _report(p, op, u, "policy_iteration", iters, history, t0, converged)


def _chunked_policy(op, u, pick, beta=None, prev_beta=None, prev_alpha=None):
    pos = [0]
    sl = lambda arr, a, m: None if arr is None else arr[a:a + m]

    def fn(D, X):
        a = pos[0]
        m = len(X)
        pos[0] = a + m
        out = op.policy(D, X, sl(beta, a, m), (sl(prev_beta, a, m), sl(prev_alpha, a, m)))
        return out[pick]

    return op._over_nodes(u, None, fn).astype(int)


def _beta_policy(op, u, prev=None):
    return _chunked_policy(op, u, 0, prev_beta=prev)


def _alpha_policy(op, u, beta, prev=None):
    return _chunked_policy(op, u, 1, beta=beta, prev_alpha=prev)


def solve_newton_rho(p, tol=1e-10, max_iter=50, damping=1.0):
    """Newton iteration with exact Jacobian ``d rho/dz(delta2 u)`` and halving line search."""
    t0 = time.perf_counter()
    _require_sigma_gt_one(p)
    op = p.operator
    inner = op.inner if isinstance(op, (RegularizedOperator, FrozenOperator)) else op
    if not isinstance(inner, RhoOperator):
        raise UsageError("solve_newton_rho needs a rho operator")
    check_scalar(damping, "damping", low=0.0, high=1.0, low_inclusive=False)
    fF = p.rhs_field()
    u = p.field()
    res = op.evaluate(u) - p.rhs
    r = float(np.max(np.abs(res)))
    history, it, converged = [r], 0, r <= tol
    while not converged and it < max_iter:
        it += 1
        S = assemble(op, u)
        delta = _dense_solve(S.A, -res)
        t = damping
        for _ in range(21):
            cand = p.field(u.interior_values + t * delta)
            res_c = op.evaluate(cand) - p.rhs
            r_c = float(np.max(np.abs(res_c)))
            if r_c < r:
                break
            t *= 0.5
        else:
            return _report(p, op, u, "newton", it, history, t0, False, reason="line search failed")
        u, res, r = cand, res_c, r_c
        history.append(r)
        converged = r <= tol
    return _report(p, op, u, "newton", it, history, t0, converged)


def pseudo_time_march(p, cfl=0.9, tol=1e-8, max_iter=200_000, u0=None, callback=None):
    """Explicit Euler on ``du/dt = I(u) - f`` with the monotone step
    ``dt = cfl / ((2-sigma) Lam * total stencil mass)``.
    """
    t0 = time.perf_counter()
    check_scalar(cfl, "cfl", low=0.0, high=1.0, low_inclusive=False)
    op = p.operator
    st = stencil(p.grid, op.sigma)
    dt = cfl / ((2.0 - op.sigma) * op.Lam * st.total_mass())
    u = p.field() if u0 is None else p.field(u0.interior_values)
    v = u.interior_values.copy()
    evaluate = _affine_evaluator(op, u) or (lambda w: op.evaluate(p.field(w)))
    f = p.rhs
    history, converged = [], False
    it = 0
    while it < max_iter:
        res = evaluate(v) - f
        r = float(np.max(np.abs(res)))
        history.append(r)
        if r <= tol:
            converged = True
            break
        it += 1
        v = v + dt * res
        if callback is not None:
            callback(it, p.field(v))
    return _report(p, op, p.field(v), "pseudo_time", it, history, t0, converged, dt=dt)


def _affine_evaluator(op, u):
    """Matrix form of linear and inf-sup operators, or None for other variants."""
    if isinstance(op, LinearOperator):
        S = assemble(op, u)
        return S.apply
    if isinstance(op, IsaacsOperator):
        systems = []
        for b, row in enumerate(op.family):
            systems.append([])
            for a, _ in enumerate(row):
                pick = lambda D, X, rows, b=b, a=a: op._coeffs_for(D, X, np.full(len(X), b),
                                                                    np.full(len(X), a))
                systems[-1].append(assemble(op, u, pick))

        def evaluate(w):
            return np.min([np.max([S.apply(w) for S in row], axis=0) for row in systems], axis=0)
        return evaluate
    return None
