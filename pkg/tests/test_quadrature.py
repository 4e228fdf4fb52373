import numpy as np
import pytest
from scipy import integrate

import oracles as O
from nonlocal_elliptic import Expr, Grid, eval_linear, fractional_laplacian, sample, sample_global
from nonlocal_elliptic.functions import smooth_step
from nonlocal_elliptic.quadrature import stencil
from nonlocal_elliptic.verification import suite_quadrature_mass


@pytest.mark.parametrize("h", [1 / 32, 1 / 64, 1 / 128])
@pytest.mark.parametrize("sigma", [0.5, 1.0, 1.5, 1.95])
def test_shell_mass_1d(h, sigma):
    g = Grid(1, h, 4.0)
    st = stencil(g, sigma)
    Y = g.mid_radius
    shell = 2 * (h ** -sigma - Y ** -sigma) / sigma
    assert st.shell_mass() == pytest.approx(shell, rel=1e-8)
    assert st.far_weights.sum() == pytest.approx(2 * Y ** -sigma / sigma, rel=1e-12)


def test_mass_suite():
    assert suite_quadrature_mass().passed


@pytest.mark.parametrize("sigma", [0.5, 1.5])
def test_cell_weights_2d(sigma):
    h = 1 / 4
    st = stencil(Grid(2, h, 2.0), sigma)
    f = lambda y2, y1: (y1 * y1 + y2 * y2) ** (-(2 + sigma) / 2)
    for off in ([1, 0], [1, 1], [0, 2], [3, -2]):
        i = int(np.flatnonzero(np.all(st.mid_offsets == off, axis=1))[0])
        a, b = (np.array(off) - 0.5) * h, (np.array(off) + 0.5) * h
        ref = integrate.dblquad(f, a[0], b[0], a[1], b[1], epsabs=0, epsrel=1e-12)[0]
        # each stored weight covers the pair {y, -y}
        assert st.mid_weights[i] == pytest.approx(2 * ref, rel=1e-5)


@pytest.mark.parametrize("n,h", [(1, 1 / 32), (1, 1 / 128), (2, 1 / 8), (2, 1 / 16)])
@pytest.mark.parametrize("sigma", [0.1, 0.8, 1.5, 1.95])
def test_weights_positive(n, h, sigma):
    st = stencil(Grid(n, h, 3.0), sigma)
    assert np.all(st.mid_weights > 0) and st.near_weight > 0 and np.all(st.far_weights > 0)


@pytest.mark.parametrize("sigma", [1.2, 1.5, 1.8])
def test_second_moment_exact_1d(sigma):
    g = Grid(1, 1 / 32, 4.0)
    st = stencil(g, sigma)
    Y = g.mid_radius
    got = st.near_weight * g.h ** 2 + np.sum(st.mid_weights * st.mid_rep[:, 0] ** 2)
    assert got == pytest.approx(2 * Y ** (2 - sigma) / (2 - sigma), rel=1e-12)


def test_near_weight_floor_binds_for_small_sigma():
    g = Grid(1, 1 / 32, 4.0)
    st = stencil(g, 0.1)
    assert st.near_weight == pytest.approx(0.1 * 2 * g.h ** -0.1 / 1.9, rel=1e-12)


def _truncated_quadratic(width):
    return lambda y: y * y * smooth_step(2 * abs(y) / width - 1)


@pytest.mark.parametrize("h", [1 / 4, 1 / 8])
def test_quadratic_exact_1d(h):
    # near + mid fields are exact on x^2, so only the far-field tail contributes error
    ref = O.nonlocal_1d(_truncated_quadratic(16.0), 0.0, 1.5, breakpoints=(8.0, 16.0))
    u = sample_global(Grid(1, h, 4.0), Expr.named("truncated_quadratic", width=16.0), "bounded")
    assert eval_linear(fractional_laplacian(1, 1.5), u, 0.0) == pytest.approx(ref, rel=2e-6)


@pytest.mark.parametrize("sigma", [1.2, 1.5, 1.8])
def test_ball_constant_2d(sigma):
    g = Grid(2, 1 / 16, 3.0)
    u = sample(g, Expr.named("ball_profile", s=sigma / 2))
    got = eval_linear(fractional_laplacian(2, sigma), u, [[0.0, 0.0], [0.25, 0.0], [0.0, -0.5]])
    assert np.allclose(got, O.ball_constant_nd(sigma, 2), rtol=1e-3)


def test_oracle_closed_forms_agree(oracle):
    b = oracle["ball_linear"]
    assert b["value"] == pytest.approx(b["closed_form"], rel=1e-9)
    assert O.ball_constant_nd(1.5, 1) == pytest.approx(O.ball_constant(1.5), rel=1e-14)
