import json

import numpy as np
import pytest

from nonlocal_elliptic import (BVPProblem, Expr, ExteriorData, Field, Grid, UsageError,
                               assemble_fractional_laplacian, a_beta_seminorm, difference_quotient,
                               fractional_laplacian, holder_fit, quotient_equation_check, residual, restrict_translate_scale,
                               sample, sample_global, sandwich_check, solve_linear_dirichlet,
                               weighted_boundary_profile)
from nonlocal_elliptic.config import validate
from nonlocal_elliptic.diagnostics import regularity_report
from nonlocal_elliptic.scenarios import build_problem, solve
from nonlocal_elliptic.verification import bump_pair, isaacs4

S = 1.5
G32 = Grid(1, 1 / 32, 4.0)
G128 = Grid(1, 1 / 128, 4.0)


# -- difference quotients ---------------------------------------------------------------

def test_quotient_of_constant_is_zero():
    u = sample_global(G32, Expr.named("constant", c=3.0))
    w = difference_quotient(u, 2 * G32.h)
    assert not np.any(w.values)
    assert np.all(w.lookup(np.array([[5.0], [-9.0]])) == 0.0)


@pytest.mark.parametrize("k", [1, -3, 4])
def test_quotient_of_affine(k):
    u = sample_global(G32, Expr.named("affine", c=1.0, b=-2.5))
    w = difference_quotient(u, k * G32.h, beta=1.0)
    assert np.allclose(w.values, -2.5 * np.sign(k), atol=1e-12, rtol=0)
    assert np.allclose(w.lookup(np.array([[3.3], [-7.0]])), -2.5 * np.sign(k), atol=1e-12, rtol=0)


def test_quotient_linear_in_u():
    a = sample(G32, Expr.named("bump", center=0.2, radius=0.7), ExteriorData.named("cone", cap=2.0))
    b = sample(G32, Expr.named("ball_profile", s=0.6))
    h = 3 * G32.h
    lhs = difference_quotient(2 * a - b, h, 0.5)
    rhs = 2 * difference_quotient(a, h, 0.5) - difference_quotient(b, h, 0.5)
    assert np.allclose(lhs.values, rhs.values, atol=1e-13, rtol=0)


def test_quotient_errors():
    u = sample(G32, Expr.named("bump"))
    with pytest.raises(UsageError):
        difference_quotient(u, 0.0)
    with pytest.raises(UsageError):
        difference_quotient(u, 0.01)
    with pytest.raises(UsageError):
        difference_quotient(u, 0.25)


def test_quotient_commutes_with_translation():
    # shifting the whole profile by one lattice step shifts w_h by the same step, bitwise
    e = Expr.named("bump", center=0.1, radius=0.6)
    u = sample_global(G32, e)
    v = restrict_translate_scale(u, shift=G32.h)
    h = 2 * G32.h
    wu, wv = difference_quotient(u, h), difference_quotient(v, h)
    assert np.array_equal(wv.values[1:-2], wu.values[:-3])
    assert np.array_equal(wv.lookup(np.array([[5.0]])), wu.lookup(np.array([[5.0 - G32.h]])))


# -- A^beta seminorm ---------------------------------------------------------------------

def test_a_beta_trivial():
    assert a_beta_seminorm(sample(G32, Expr.named("bump", radius=0.9)), 1.0) == 0.0
    assert a_beta_seminorm(sample_global(G32, Expr.named("constant", c=2.0)), 0.5) == 0.0


def test_a_beta_cone_oracle(oracle):
    o = oracle["a_beta_cone"]
    c = o["cone"]
    u = sample(Grid(1, o["grid_h"], 4.0), Expr.named("zero"),
               ExteriorData.named("cone", slope=c["slope"], center=c["center"], cap=c["cap"]))
    val, arg = a_beta_seminorm(u, o["beta"], o["sigma0"], return_argmax=True)
    assert val == pytest.approx(o["value"], abs=1e-4)
    assert o["per_h"][str(abs(arg[0]))] == pytest.approx(val, abs=1e-4)


def test_a_beta_controlled_by_holder_constant():
    from scipy import integrate
    sigma0, beta = 0.5, 0.5
    # |y|^beta is C^{0,beta} with constant 1 on the whole line
    u = sample(G32, Expr.named("zero"), ExteriorData.named("power", gamma=beta))
    mass = 2 * integrate.quad(lambda r: r ** (-1 - sigma0), 1, np.inf)[0]
    assert a_beta_seminorm(u, beta, sigma0) <= 1.0 * mass + 1e-8


# -- residual --------------------------------------------------------------------------

def _ball_problem(grid=G32):
    return BVPProblem(fractional_laplacian(1, S), -1.0, 0.0, grid)


def test_residual_of_direct_solve():
    p = _ball_problem()
    u = solve_linear_dirichlet(p).solution
    r = residual(p.operator, u, p.rhs_field())
    assert r.value <= 1e-10 * 2.0 and len(r.values) == G32.n_interior


def test_residual_diagonal_dominance():
    p = _ball_problem()
    u = solve_linear_dirichlet(p).solution
    A = assemble_fractional_laplacian(G32, S, 1.0).A
    j = G32.n_interior // 3
    c = abs(A[j, j]) * G32.h ** S
    for delta in (1e-3, 0.1):
        vals = u.interior_values.copy()
        vals[j] += delta
        r = residual(p.operator, u.with_interior(vals), p.rhs_field())
        assert r.value >= c * delta / G32.h ** S * (1 - 1e-9)
        assert r.argmax == tuple(G32.interior_index[j])


def test_residual_shift_of_rhs():
    p = BVPProblem(isaacs4(), -1.0, 0.0, G32)
    u = sample(G32, Expr.named("ball_profile", s=0.75))
    old = residual(p.operator, u, -1.0).value
    new = residual(p.operator, u, 0.0).value
    assert abs(new - old) <= 1 + 1e-12


# -- holder fits -------------------------------------------------------------------------

def test_holder_fit_cone():
    u = sample_global(G128, Expr.named("cone", center=0.1))
    fit = holder_fit(u, (0.0, 0.5), d=0)
    assert fit.exponent == pytest.approx(1.0, abs=0.05)


def test_holder_fit_bump_saturates():
    u = sample(G128, Expr.named("bump", radius=0.9))
    assert holder_fit(u, (0.0, 0.5), d=0).exponent >= 0.95


@pytest.mark.parametrize("gamma", [0.3, 0.5, 0.7])
def test_holder_fit_power(gamma):
    u = sample_global(G128, Expr.named("power", gamma=gamma))
    assert holder_fit(u, (0.0, 0.5), d=0).exponent == pytest.approx(gamma, abs=0.05)


def test_holder_fit_needs_four_scales():
    u = sample(G32, Expr.named("bump"))
    with pytest.raises(UsageError):
        holder_fit(u, (0.0, 0.5), scales=[4, 8, 16])
    with pytest.raises(UsageError):
        holder_fit(u, (0.5, 0.5))


@pytest.mark.parametrize("sigma", [1.2, 1.5, 1.8])
def test_holder_fit_whole_ball_profile(sigma):
    g = Grid(1, 1 / 256, 4.0)
    u = sample(g, Expr.named("ball_profile", s=sigma / 2))
    assert holder_fit(u, "ball", d=0).exponent == pytest.approx(sigma / 2, abs=0.05)
    assert holder_fit(u, (0.0, 0.5), d=0).exponent >= 0.95


# -- boundary profile --------------------------------------------------------------------

def test_boundary_profile_constant():
    u = sample(G32, Expr.named("constant", c=2.0), ExteriorData.named("constant", c=2.0))
    assert weighted_boundary_profile(u).C == 0.0


@pytest.mark.parametrize("sigma", [1.2, 1.6])
def test_boundary_profile_of_ball_profile(sigma):
    u = sample(G128, Expr.named("ball_profile", s=sigma / 2))
    prof = weighted_boundary_profile(u, beta=sigma / 2)
    assert 0.0 < prof.C < 10.0
    assert prof.s == pytest.approx(sigma / 2, abs=0.1)
    assert prof.gradient is not None


def test_boundary_profile_affine():
    u = sample_global(G32, Expr.named("affine", c=0.3, b=-1.75))
    prof = weighted_boundary_profile(u, beta=1.0, s_grid=[1.0])
    assert prof.s == 1.0
    assert prof.C == pytest.approx(1.75, rel=1e-12)


def test_boundary_profile_needs_pairs():
    with pytest.raises(UsageError):
        weighted_boundary_profile(sample(Grid(1, 1 / 2, 4.0), Expr.named("bump")))


# -- sandwich and quotient equation ------------------------------------------------------

def test_sandwich_zero_and_affine():
    I = isaacs4()
    u = sample(G32, Expr.named("bump", radius=0.8))
    z = sandwich_check(I, u, sample(G32, Expr.named("zero")))
    assert z.passed and z.lower_margin == 0.0 and z.upper_margin == 0.0
    v = sample_global(G32, Expr.named("affine", c=0.2, b=1.1))
    a = sandwich_check(I, u, v)
    assert a.passed and abs(a.lower_margin) <= 1e-8 and abs(a.upper_margin) <= 1e-8


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_sandwich_random_pair(seed):
    u, v = bump_pair(seed, G32)
    res = sandwich_check(isaacs4(), u, v)
    assert res.passed and res.lower_margin >= -res.tol and res.upper_margin >= -res.tol


def test_quotient_equation_check():
    p = BVPProblem(fractional_laplacian(1, S), -1.0, ExteriorData.named("bump", center=1.5), G128)
    u = solve_linear_dirichlet(p).solution
    h = 2 * G128.h
    res = quotient_equation_check(p.operator, u, p.rhs_field(), h)
    assert res.passed and res.f_seminorm == 0.0
    vals = u.interior_values.copy()
    vals[int(np.argmin(np.abs(G128.node_points(G128.interior_index)[:, 0] - 0.25)))] += 0.05
    bad = quotient_equation_check(p.operator, u.with_interior(vals), -1.0, h,
                                  tol=res.tol)
    assert not bad.passed


# -- report ------------------------------------------------------------------------------

def test_report_of_zero_problem():
    p = BVPProblem(fractional_laplacian(1, S), 0.0, 0.0, G128)
    rep = regularity_report(p, solve_linear_dirichlet(p))
    assert rep.alpha0.degenerate and rep.alpha1.degenerate
    assert rep.alpha0.constant == 0.0 and rep.boundary.C == 0.0
    assert all(v == 0.0 for v in rep.seminorms.values())


def test_report_thm_1_1_and_reproducible():
    cfg = validate({"scenario": "thm-1-1", "grid": {"h": 1 / 128}})
    p, scheme = build_problem(cfg)
    sol = solve(p, cfg, scheme)
    a = regularity_report(p, sol)
    b = regularity_report(p, sol)
    assert a.alpha1.exponent > 0 and a.alpha1.r2 >= 0.9
    assert a.to_json() == b.to_json() and a.tables_csv() == b.tables_csv()
    d = json.loads(a.to_json())
    assert set(d["seminorms"]) == {"a_beta", "weighted_l1", "oscillation"}
    assert a.tables_csv().splitlines()[0] == "fit,scale,max_increment,fit_residual"


def test_report_rejects_unconverged():
    from nonlocal_elliptic import pseudo_time_march
    p = BVPProblem(isaacs4(), -1.0, 0.0, G32)
    rep = pseudo_time_march(p, max_iter=3)
    with pytest.raises(UsageError):
        regularity_report(p, rep)
