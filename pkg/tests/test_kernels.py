import numpy as np
import pytest

from nonlocal_elliptic import (CutoffMollifier, EllipticityError, KernelSingularityError, KernelSpec,
                               UsageError, WeightSpec, check_ellipticity_bounds, kernel_eval, weight_eval)
from nonlocal_elliptic.kernels import cutoff_eval, mollifier_eval


def test_constant_density_formula():
    k = KernelSpec.constant(1.0, sigma=1.5, lam=1.0, Lam=2.0)
    assert kernel_eval(k, 0.0, 2.0) == pytest.approx(0.5 * 2.0 ** -2.5, rel=1e-15)


def test_midpoint_profile():
    lam, Lam = 1.0, 3.0
    k = KernelSpec.constant(lam + (Lam - lam) / 2, sigma=1.2, lam=lam, Lam=Lam)
    y = 0.7
    assert kernel_eval(k, 0.3, y) == pytest.approx(0.8 * 2.0 * y ** -2.2, rel=1e-14)


def test_density_2d():
    k = KernelSpec.constant(1.5, n=2, sigma=1.4, lam=1.0, Lam=2.0)
    y = np.array([0.3, -0.4])
    assert kernel_eval(k, [0.0, 0.0], y) == pytest.approx(0.6 * 1.5 * 0.5 ** -3.4, rel=1e-14)


def test_singularity_rejected():
    with pytest.raises(KernelSingularityError):
        kernel_eval(KernelSpec.constant(), 0.0, 0.0)


def test_lower_bound_profile_equality():
    k = KernelSpec.constant(1.0, lam=1.0, Lam=2.0)
    rep = check_ellipticity_bounds(k, [(0.1, 0.5), (0.0, 2.0), (-0.3, 0.01)])
    assert rep.passed and rep.a_min == 1.0 and rep.worst_ratio == 1.0


def test_indicator_profile_passes():
    k = KernelSpec(1, 1.5, 1.0, 1.0, 2.0, "indicator", {"radius": 1.0, "inner": 2.0, "outer": 1.0})
    rng = np.random.default_rng(0)
    rep = check_ellipticity_bounds(k, list(zip(rng.uniform(-1, 1, 200), rng.uniform(-3, 3, 200))))
    assert rep.passed and rep.a_min == 1.0 and rep.a_max == 2.0


def test_violation_reported():
    k = KernelSpec(1, 1.5, 1.0, 1.0, 2.0, "constant", {"c": 0.5}, strict=False)
    rep = check_ellipticity_bounds(k, [(0.0, 1.0)])
    assert not rep.passed and rep.worst_ratio == pytest.approx(0.5)
    with pytest.raises(EllipticityError):
        kernel_eval(k, 0.0, 1.0)
    with pytest.raises(EllipticityError):
        KernelSpec(1, 1.5, 1.0, 1.0, 2.0, "constant", {"c": 0.5})


def test_empty_samples_rejected():
    with pytest.raises(UsageError):
        check_ellipticity_bounds(KernelSpec.constant(), [])


@pytest.mark.parametrize("kw", [dict(sigma=2.0), dict(sigma=0.9, sigma0=1.0), dict(lam=2.0, Lam=1.0),
                                dict(n=3), dict(profile="nope")])
def test_invalid_specs(kw):
    with pytest.raises((UsageError, ValueError)):
        KernelSpec(**kw)


@pytest.mark.parametrize("profile,params,n", [
    ("constant", {"c": 1.5}, 1),
    ("indicator", {"radius": 0.5, "inner": 1.0, "outer": 2.0}, 2),
    ("checkerboard", {"cell": 0.25, "lo": 1.0, "hi": 2.0}, 2),
    ("ripple", {"lo": 1.0, "hi": 2.0, "amp": 1.0, "k": 3.0, "freq": 5.0}, 1),
    ("ripple", {"lo": 1.0, "hi": 2.0, "amp": 1.0, "k": 3.0, "freq": 5.0}, 2),
])
def test_band_on_random_samples(profile, params, n):
    k = KernelSpec(n, 1.5, 1.0, 1.0, 2.0, profile, params)
    rng = np.random.default_rng(1)
    x = rng.uniform(-2, 2, (10_000, n))
    y = rng.normal(size=(10_000, n))
    dens = kernel_eval(k, x, y)
    a = dens / (0.5 * np.linalg.norm(y, axis=1) ** (-n - 1.5))
    assert np.all(a >= 1.0 - 1e-12) and np.all(a <= 2.0 + 1e-12)
    assert np.array_equal(kernel_eval(k, x, y), kernel_eval(k, x, -y))


def test_radial_table():
    k = KernelSpec(1, 1.5, 1.0, 1.0, 2.0, "radial_table",
                   {"radii": [0.5, 1.0], "values": [2.0, 1.5, 1.0]})
    assert k.coefficient(0.0, [0.2, 0.7, 3.0]).tolist() == [2.0, 1.5, 1.0]


def test_weight():
    w = WeightSpec(1, 0.5)
    assert weight_eval(w, 0.0) == 1.0
    assert weight_eval(w, 1.0) == 2.0 ** -1.5
    assert weight_eval(w, -1.0) == weight_eval(w, 1.0)
    r = np.linspace(0, 10, 101)
    v = weight_eval(w, r)
    assert np.all(np.diff(v) < 0) and np.all(v > 0)
    assert weight_eval(WeightSpec(2, 1.0), [3.0, 4.0]) == 6.0 ** -3


def test_weight_tail_mass_matches_quadrature():
    from scipy import integrate
    for n in (1, 2):
        w = WeightSpec(n, 0.7)
        if n == 1:
            ref = 2 * integrate.quad(lambda r: (1 + r) ** -1.7, 4, np.inf)[0]
        else:
            ref = 2 * np.pi * integrate.quad(lambda r: r * (1 + r) ** -2.7, 4, np.inf)[0]
        assert w.tail_mass(4.0) == pytest.approx(ref, rel=1e-10)


@pytest.mark.parametrize("n", [1, 2])
def test_cutoff_and_mollifier(n):
    eps = 0.3
    c = CutoffMollifier(eps, n)
    zero = np.zeros(n)
    assert cutoff_eval(c, zero) == 1.0
    e = np.eye(n)[0]
    assert cutoff_eval(c, 0.49 * eps * e) == 1.0
    assert cutoff_eval(c, 2 * eps * e) == 0.0
    assert cutoff_eval(c, eps * e) == 0.0
    r = np.linspace(0, 1.2 * eps, 200)[:, None] * e
    v = c.cutoff(r)
    assert np.all((v >= 0) & (v <= 1)) and np.all(np.diff(v) <= 0)
    rng = np.random.default_rng(0)
    y = rng.normal(size=(100, n)) * eps
    assert np.array_equal(c.cutoff(y), c.cutoff(-y))
    assert np.array_equal(c.mollifier(y), c.mollifier(-y))
    assert mollifier_eval(c, 1.01 * eps * e) == 0.0
    assert np.all(c.mollifier(y) >= 0)
    z, w = c.quadrature
    assert w.sum() == pytest.approx(1.0, abs=1e-10)


def test_cutoff_requires_positive_eps():
    with pytest.raises(UsageError):
        CutoffMollifier(0.0)


def test_weight_bit_reproducible():
    w = WeightSpec(2, 1.3)
    x = np.random.default_rng(3).normal(size=(50, 2))
    assert np.array_equal(weight_eval(w, x), weight_eval(w, x))
