"""Kernel families pinched between multiples of the fractional-Laplacian kernel,
the integration weight, and the cutoff/mollifier pair used by the regularization.

A kernel density is ``(2 - sigma) * a(x, y) / |y|^(n + sigma)`` with the
coefficient ``a`` drawn from a small registry of closed-form profiles.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ._validation import (EllipticityError, KernelSingularityError, UsageError, as_points,
                          check_dimension, check_ellipticity_constants, check_order,
                          check_scalar, norm)
from .functions import _freeze, _thaw, bump_profile, smooth_step


def _a_constant(x, y, p, lam, Lam):
    return np.full(np.broadcast_shapes(x.shape[:-1], y.shape[:-1]), float(p.get("c", lam)))


def _a_indicator(x, y, p, lam, Lam):
    r = norm(y)
    v = np.where(r < float(p.get("radius", 1.0)), float(p.get("inner", Lam)),
                 float(p.get("outer", lam)))
    return np.broadcast_to(v, np.broadcast_shapes(x.shape[:-1], y.shape[:-1]))


def _a_radial_table(x, y, p, lam, Lam):
    radii = np.asarray(p["radii"], dtype=float)
    values = np.asarray(p["values"], dtype=float)
    if values.size != radii.size + 1:
        raise UsageError("radial_table needs len(values) == len(radii) + 1")
    v = values[np.searchsorted(radii, norm(y), side="right")]
    return np.broadcast_to(v, np.broadcast_shapes(x.shape[:-1], y.shape[:-1]))


def _a_checkerboard(x, y, p, lam, Lam):
    cell = float(p.get("cell", 0.25))
    parity = np.sum(np.floor(np.abs(y) / cell), axis=-1) % 2
    v = np.where(parity == 0, float(p.get("lo", lam)), float(p.get("hi", Lam)))
    return np.broadcast_to(v, np.broadcast_shapes(x.shape[:-1], y.shape[:-1]))


def _a_ripple(x, y, p, lam, Lam):
    lo, hi = float(p.get("lo", lam)), float(p.get("hi", Lam))
    k = np.atleast_1d(np.asarray(p.get("k", 2.0), dtype=float))
    if k.size == 1:
        k = np.full(x.shape[-1], k[0])
    phase = float(p.get("phase", 0.0))
    psi = np.cos(float(p.get("freq", 3.0)) * norm(y))
    return lo + 0.5 * (hi - lo) * (1.0 + float(p.get("amp", 1.0)) * np.sin(x @ k + phase) * psi)


# name -> (coefficient function, depends on x)
PROFILES = {
    "constant": (_a_constant, False),
    "indicator": (_a_indicator, False),
    "radial_table": (_a_radial_table, False),
    "checkerboard": (_a_checkerboard, False),
    "ripple": (_a_ripple, True),
}


@dataclass(frozen=True)
class EllipticityReport:
    passed: bool
    a_min: float
    a_max: float
    worst_ratio: float


@dataclass(frozen=True)
class KernelSpec:
    """A symmetric kernel ``(2-sigma) a(x,y) |y|^(-n-sigma)`` with lam <= a <= Lam.

    Parameters
    ----------
    n : int
        Dimension, 1 or 2.
    sigma, sigma0 : float
        Order and its floor, ``sigma0 < sigma < 2``.
    lam, Lam : float
        Ellipticity constants.
    profile : str
        Key into :data:`PROFILES`.
    params : dict
        Profile parameters.
    strict : bool
        When true (default) the band ``[lam, Lam]`` is verified on random
        samples at construction. Pass ``False`` to build deliberately broken
        kernels for negative controls.
    """

    n: int = 1
    sigma: float = 1.5
    sigma0: float = 1.0
    lam: float = 1.0
    Lam: float = 1.0
    profile: str = "constant"
    params: tuple = ()
    strict: bool = field(default=True, compare=False)

    def __post_init__(self):
        check_dimension(self.n)
        check_order(self.sigma, self.sigma0)
        check_ellipticity_constants(self.lam, self.Lam)
        if self.profile not in PROFILES:
            raise UsageError(f"unknown kernel profile {self.profile!r}; known: {sorted(PROFILES)}")
        if isinstance(self.params, dict):
            object.__setattr__(self, "params",
                               tuple(sorted((k, _freeze(v)) for k, v in self.params.items())))
        rng = np.random.default_rng(12345)
        x, y = _random_samples(rng, self.n, 512)
        a_pos, a_neg = self.coefficient(x, y), self.coefficient(x, -y)
        if not np.array_equal(a_pos, a_neg):
            raise UsageError(f"profile {self.profile!r} is not symmetric in y")
        if self.strict:
            rep = check_ellipticity_bounds(self, list(zip(*_random_samples(rng, self.n, 2000))))
            if not rep.passed:
                raise EllipticityError(
                    f"profile {self.profile!r} leaves [{self.lam}, {self.Lam}]: "
                    f"sampled range [{rep.a_min}, {rep.a_max}]")

    @classmethod
    def constant(cls, c=None, **kw):
        lam = kw.get("lam", 1.0)
        return cls(profile="constant", params={"c": lam if c is None else c}, **kw)

    @property
    def param_dict(self):
        return {k: _thaw(v) for k, v in self.params}

    @property
    def x_dependent(self):
        return PROFILES[self.profile][1]

    def coefficient(self, x, y):
        """Profile value ``a(x, y)``; ``x`` and ``y`` broadcast over leading axes."""
        x = as_points(x, self.n)
        y = as_points(y, self.n)
        return PROFILES[self.profile][0](x, y, self.param_dict, self.lam, self.Lam)

    def with_order(self, sigma):
        return KernelSpec(self.n, sigma, self.sigma0, self.lam, self.Lam, self.profile,
                          self.params, self.strict)

    def to_dict(self):
        return {"n": self.n, "sigma": self.sigma, "sigma0": self.sigma0, "lam": self.lam,
                "Lam": self.Lam, "profile": self.profile, "params": self.param_dict}


def _random_samples(rng, n, count):
    x = rng.uniform(-1.0, 1.0, size=(count, n))
    r = np.exp(rng.uniform(np.log(1e-3), np.log(10.0), size=count))
    d = rng.normal(size=(count, n))
    d /= norm(d)[:, None]
    return x, d * r[:, None]


def kernel_eval(spec, x, y):
    """Kernel density ``(2-sigma) a(x,y) |y|^(-n-sigma)``."""
    y = as_points(y, spec.n)
    r = norm(y)
    if np.any(r == 0):
        raise KernelSingularityError("kernel singularity: y = 0")
    a = spec.coefficient(x, y)
    if np.any(a < spec.lam) or np.any(a > spec.Lam):
        raise EllipticityError(f"kernel coefficient outside [{spec.lam}, {spec.Lam}]")
    out = (2.0 - spec.sigma) * a * r ** (-spec.n - spec.sigma)
    return out.item() if out.ndim == 0 else out


def check_ellipticity_bounds(spec, samples):
    """Check ``lam <= a(x, y) <= Lam`` at every ``(x, y)`` sample.

    ``worst_ratio`` is ``min(a_min / lam, Lam / a_max)``; it is at least 1
    exactly when the samples pass.
    """
    if len(samples) == 0:
        raise UsageError("check_ellipticity_bounds needs at least one sample")
    xs = np.array([as_points(s[0], spec.n) for s in samples]).reshape(-1, spec.n)
    ys = np.array([as_points(s[1], spec.n) for s in samples]).reshape(-1, spec.n)
    if np.any(norm(ys) == 0):
        raise KernelSingularityError("kernel singularity: y = 0 in samples")
    a = np.asarray(spec.coefficient(xs, ys), dtype=float)
    a_min, a_max = float(a.min()), float(a.max())
    passed = a_min >= spec.lam and a_max <= spec.Lam
    ratio = min(a_min / spec.lam, spec.Lam / a_max if a_max > 0 else np.inf)
    return EllipticityReport(bool(passed), a_min, a_max, float(min(ratio, 1.0) if passed else ratio))


@dataclass(frozen=True)
class WeightSpec:
    """The weight ``(1 + |x|)^(-n - sigma0)``."""

    n: int = 1
    sigma0: float = 1.0

    def __post_init__(self):
        check_dimension(self.n)
        check_scalar(self.sigma0, "sigma0", low=0.0, high=2.0, low_inclusive=False,
                     high_inclusive=False)

    def tail_mass(self, R):
        """Integral of the weight over ``|x| > R``."""
        n, s = self.n, self.sigma0
        if n == 1:
            return 2.0 * (1.0 + R) ** (-s) / s
        # 2 pi int_R^inf r (1+r)^(-2-s) dr
        return 2.0 * np.pi * ((1.0 + R) ** (-s) / s - (1.0 + R) ** (-1.0 - s) / (1.0 + s))


def weight_eval(w, x):
    x = as_points(x, w.n)
    out = (1.0 + norm(x)) ** (-w.n - w.sigma0)
    return out.item() if out.ndim == 0 else out


class CutoffMollifier:
    """Smooth radial cutoff ``phi_eps`` and mollifier ``eta_eps``.

    ``phi_eps`` is 1 on ``B_{eps/2}``, 0 outside ``B_eps`` and bridges with a
    C-infinity step. ``eta_eps`` is the classical bump normalised to unit mass.
    """

    def __init__(self, eps, n=1):
        self.eps = check_scalar(eps, "eps", low=0.0, low_inclusive=False)
        self.n = check_dimension(n)

    @cached_property
    def _mass_constant(self):
        t, wt = np.polynomial.legendre.leggauss(256)
        if self.n == 1:
            m = np.sum(wt * bump_profile(t))
        else:
            r = 0.5 * (t + 1.0)
            m = 2 * np.pi * np.sum(0.5 * wt * r * bump_profile(r))
        return 1.0 / m

    def cutoff(self, y):
        r = norm(as_points(y, self.n))
        out = smooth_step(2.0 * r / self.eps - 1.0)
        return out.item() if out.ndim == 0 else out

    def mollifier(self, x):
        r = norm(as_points(x, self.n)) / self.eps
        out = self._mass_constant * bump_profile(r) / self.eps ** self.n
        return out.item() if out.ndim == 0 else out

    @cached_property
    def quadrature(self):
        """Nodes and weights ``(z, w)`` with ``sum(w * g(z)) ~ int eta_eps(z) g(z) dz``."""
        if self.n == 1:
            t, wt = np.polynomial.legendre.leggauss(64)
            z = self.eps * t[:, None]
            w = wt * self.eps * self.mollifier(z)
        else:
            t, wt = np.polynomial.legendre.leggauss(64)
            r = 0.5 * (t + 1.0) * self.eps
            wr = 0.5 * wt * self.eps
            m = 16
            th = 2 * np.pi * (np.arange(m) + 0.5) / m
            rr, tt = np.meshgrid(r, th, indexing="ij")
            z = np.stack([rr * np.cos(tt), rr * np.sin(tt)], axis=-1).reshape(-1, 2)
            w = (np.outer(wr * r, np.full(m, 2 * np.pi / m)).ravel()
                 * self.mollifier(z))
        return z, w


def cutoff_eval(c, y):
    return c.cutoff(y)


def mollifier_eval(c, x):
    return c.mollifier(x)
