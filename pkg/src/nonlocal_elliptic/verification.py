"""Property suites run by ``verify``: ellipticity, duality, annihilation,
extremality, subadditivity, quadrature mass, comparison and determinism.

Random probes come from :func:`random_bump`, a named generator
(``BUMP_GENERATOR``) driven only by the seed, so baselines survive refactors.
"""

from dataclasses import asdict, dataclass

import numpy as np

from .diagnostics import curvature_bound, sandwich_check
from .fields import Grid, sample, sample_global
from .functions import Expr
from .kernels import KernelSpec, check_ellipticity_bounds
from .operators import (IsaacsOperator, LinearOperator, RhoOperator, RhoSpec, extremal_pair,
                        fractional_laplacian, regularize)
from .quadrature import _p0, stencil
from .solvers import (BVPProblem, pseudo_time_march, solve_fixed_point, solve_linear_dirichlet,
                      solve_newton_rho, solve_policy_iteration)

BUMP_GENERATOR = "bumps-v1"


def random_bump(rng, n=1, terms=None):
    """Sum of 1-3 smooth bumps with centers in [-1.2, 1.2]^n, radii in [0.3, 1.2]."""
    k = int(rng.integers(1, 4)) if terms is None else terms
    e = Expr()
    for _ in range(k):
        c = tuple(float(v) for v in rng.uniform(-1.2, 1.2, size=n))
        e = e + Expr.named("bump", center=c, radius=float(rng.uniform(0.3, 1.2)),
                           amp=float(rng.uniform(-1.0, 1.0)))
    return e


def bump_pair(seed, grid):
    rng = np.random.default_rng([seed, 1])
    return (sample_global(grid, random_bump(rng, grid.n)), sample_global(grid, random_bump(rng, grid.n)))


def isaacs4(n=1, sigma=1.5, lam=1.0, Lam=2.0, sigma0=1.0):
    """A 2x2 family mixing constant and indicator kernels."""
    k = lambda profile, **p: KernelSpec(n, sigma, sigma0, lam, Lam, profile, p)
    return IsaacsOperator([[k("constant", c=lam), k("indicator", radius=0.4, inner=Lam, outer=lam)],
                           [k("constant", c=0.5 * (lam + Lam)),
                            k("checkerboard", cell=0.3, lo=lam, hi=Lam)]])


def operator_variants(n=1, sigma=1.5, lam=1.0, Lam=2.0, sigma0=1.0):
    lin = LinearOperator(KernelSpec(n, sigma, sigma0, lam, Lam, "indicator",
                                    {"radius": 0.5, "inner": Lam, "outer": lam}))
    return {"linear": lin,
            "isaacs4": isaacs4(n, sigma, lam, Lam, sigma0),
            "rho_softplus": RhoOperator(RhoSpec("softplus", lam, Lam), n, sigma, sigma0),
            "regularized": regularize(isaacs4(n, sigma, lam, Lam, sigma0), 0.1)}


@dataclass
class SuiteResult:
    suite: str
    passed: bool
    margin: float
    detail: str = ""

    def to_dict(self):
        return asdict(self)


def suite_ellipticity(samples=100, seed=0, inject=None, grid=None):
    grid = grid or Grid(1, 1 / 64, 4)
    ops = operator_variants(grid.n)
    if inject == "corrupt-kernel":
        bad = KernelSpec(grid.n, 1.5, 1.0, 1.0, 2.0, "constant", {"c": 0.5}, strict=False)
        ops = {"corrupt": LinearOperator(bad)}
        rep = check_ellipticity_bounds(bad, [(np.zeros(grid.n), np.ones(grid.n))])
        if not rep.passed:
            return SuiteResult("ellipticity", False, rep.worst_ratio - 1.0,
                               "kernel coefficient outside [lam, Lam]")
    worst, where = np.inf, ""
    for name, op in ops.items():
        Mp, Mm = extremal_pair(grid.n, op.sigma, op.lam, op.Lam, op.sigma0)
        for i in range(samples):
            u, v = bump_pair(seed + i, grid)
            r = sandwich_check(op, u, v, extremal=(Mp, Mm))
            m = min(r.lower_margin, r.upper_margin) + r.tol
            if m < worst:
                worst, where = m, f"{name} sample {i}"
    return SuiteResult("ellipticity", bool(worst >= 0), float(worst), f"worst at {where}")


def suite_duality(samples=100, seed=0, grid=None):
    grid = grid or Grid(1, 1 / 64, 4)
    Mp, Mm = extremal_pair(grid.n, 1.5, 1.0, 2.0)
    worst = 0.0
    for i in range(samples):
        u, _ = bump_pair(seed + i, grid)
        worst = max(worst, float(np.max(np.abs(Mp.evaluate(-u) + Mm.evaluate(u)))))
    return SuiteResult("duality", worst <= 1e-10, 1e-10 - worst)


def suite_annihilation(samples=100, seed=0, grid=None):
    grid = grid or Grid(1, 1 / 64, 4)
    rng = np.random.default_rng([seed, 2])
    ops = list(operator_variants(grid.n).values()) + list(extremal_pair(grid.n, 1.5, 1.0, 2.0))
    worst = 0.0
    for i in range(samples):
        aff = Expr.named("affine", c=float(rng.normal()), b=tuple(rng.normal(size=grid.n)))
        a = sample_global(grid, aff)
        op = ops[i % len(ops)]
        worst = max(worst, float(np.max(np.abs(op.evaluate(a)))))
    return SuiteResult("annihilation", worst <= 1e-8, 1e-8 - worst)


def suite_affine_invariance(samples=20, seed=0, grid=None):
    grid = grid or Grid(1, 1 / 64, 4)
    rng = np.random.default_rng([seed, 3])
    ops = operator_variants(grid.n)
    worst = 0.0
    for i in range(samples):
        u, _ = bump_pair(seed + i, grid)
        a = sample_global(grid, Expr.named("affine", c=float(rng.normal()), b=tuple(rng.normal(size=grid.n))))
        for op in ops.values():
            worst = max(worst, float(np.max(np.abs(op.evaluate(u + a) - op.evaluate(u)))))
    return SuiteResult("affine_invariance", worst <= 1e-8, 1e-8 - worst)


def suite_extremality(samples=20, seed=0, grid=None):
    grid = grid or Grid(1, 1 / 64, 4)
    fam = isaacs4(grid.n)
    Mp, Mm = extremal_pair(grid.n, 1.5, 1.0, 2.0)
    worst = np.inf
    for i in range(samples):
        u, _ = bump_pair(seed + i, grid)
        hi, lo = Mp.evaluate(u), Mm.evaluate(u)
        for row in fam.family:
            for k in row:
                L = LinearOperator(k).evaluate(u)
                worst = min(worst, float(np.min(hi - L)), float(np.min(L - lo)))
    return SuiteResult("extremality", worst >= -1e-8, worst + 1e-8)


def suite_subadditivity(samples=50, seed=0, grid=None):
    grid = grid or Grid(1, 1 / 64, 4)
    Mp, _ = extremal_pair(grid.n, 1.5, 1.0, 2.0)
    worst = np.inf
    for i in range(samples):
        u, v = bump_pair(seed + i, grid)
        worst = min(worst, float(np.min(Mp.evaluate(u) + Mp.evaluate(v) - Mp.evaluate(u + v))))
    return SuiteResult("subadditivity", worst >= -1e-8, worst + 1e-8)


def suite_quadrature_mass():
    worst = 0.0
    for h in (1 / 32, 1 / 64, 1 / 128):
        for s in (0.5, 1.0, 1.5, 1.95):
            g = Grid(1, h, 4)
            st = stencil(g, s)
            exact = 2 * _p0(h, g.mid_radius, s) + 2 * g.mid_radius ** -s / s
            got = st.shell_mass() + st.far_weights.sum()
            worst = max(worst, abs(got / exact - 1))
    return SuiteResult("quadrature_mass", bool(worst <= 1e-8), float(1e-8 - worst))


def _comparison_setups(n):
    """solver name -> (operator, solve function) used by the comparison suite."""
    rho = RhoOperator(RhoSpec("softplus", 1.0, 2.0), n, 1.5, 1.0)
    return {
        "direct": (fractional_laplacian(n, 1.5), solve_linear_dirichlet),
        "policy_iteration": (isaacs4(n), solve_policy_iteration),
        "newton": (rho, solve_newton_rho),
        "pseudo_time": (isaacs4(n), lambda p: pseudo_time_march(p, tol=1e-11)),
        "fixed_point": (isaacs4(n, lam=1.0, Lam=1.1 / 0.99),
                        lambda p: solve_fixed_point(p, eps=0.1, theta=0.5, tol=1e-11)),
    }


COMPARISON_SOLVERS = ("direct", "policy_iteration", "newton", "pseudo_time", "fixed_point")


def comparison_margin(solver, samples=10, seed=0, grid=None):
    """min over seeded ordered pairs (f1 <= f2, g1 >= g2) of ``min(u1 - u2)``."""
    grid = grid or Grid(1, 1 / 32, 4)
    op, solve = _comparison_setups(grid.n)[solver]
    rng = np.random.default_rng([seed, 4])
    worst = np.inf
    for _ in range(samples):
        f2 = float(rng.uniform(-2, 0))
        f1 = f2 - float(rng.uniform(0, 1))
        g2 = Expr.named("constant", c=float(rng.uniform(-0.5, 0.5)))
        g1 = g2 + Expr.named("bump", center=(float(rng.uniform(-2, 2)),) * grid.n, radius=1.5,
                             amp=float(rng.uniform(0, 1)))
        u1 = solve(BVPProblem(op, f1, g1, grid)).solution
        u2 = solve(BVPProblem(op, f2, g2, grid)).solution
        worst = min(worst, float(np.min(u1.interior_values - u2.interior_values)))
    return worst


def suite_comparison(samples=10, seed=0, grid=None, solvers=COMPARISON_SOLVERS):
    worst, where = np.inf, ""
    for name in solvers:
        m = comparison_margin(name, samples, seed, grid)
        if m < worst:
            worst, where = m, name
    return SuiteResult("comparison", worst >= -1e-8, worst + 1e-8, f"worst solver {where}")


def suite_determinism(seed=0, grid=None):
    grid = grid or Grid(1, 1 / 64, 4)
    u, _ = bump_pair(seed, grid)
    op = operator_variants(grid.n)["regularized"]
    same = np.array_equal(op.evaluate(u), op.evaluate(u))
    return SuiteResult("determinism", bool(same), 0.0 if same else -1.0)


def run_all(samples=100, seed=0, inject=None, suites=None):
    table = {
        "ellipticity": lambda: suite_ellipticity(samples, seed, inject),
        "duality": lambda: suite_duality(samples, seed),
        "annihilation": lambda: suite_annihilation(samples, seed),
        "affine_invariance": lambda: suite_affine_invariance(min(samples, 20), seed),
        "extremality": lambda: suite_extremality(min(samples, 20), seed),
        "subadditivity": lambda: suite_subadditivity(min(samples, 50), seed),
        "quadrature_mass": suite_quadrature_mass,
        "comparison": lambda: suite_comparison(min(samples, 10), seed),
        "determinism": lambda: suite_determinism(seed),
    }
    names = suites or list(table)
    unknown = [s for s in names if s not in table]
    if unknown:
        raise KeyError(f"unknown suites {unknown}; known: {list(table)}")
    return [table[name]() for name in names]
