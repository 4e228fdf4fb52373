"""Nonlocal elliptic operators evaluated by singular-integral quadrature.

Every operator acts on ``delta2 u(x, .)`` only, through the stencil of
:mod:`.quadrature`. Each variant provides

* ``_apply(D, X)``: operator values from the second differences ``D`` with
  coefficients read at the points ``X``;
* ``_linearize(D, X)``: per-node coefficients ``c`` such that the linear
  operator ``(2-sigma) sum W c delta2`` is the active policy (piecewise linear
  operators, where it reproduces the value exactly) or the Jacobian (smooth
  nonlinear operators).

The ``(2 - sigma)`` factor is applied here, never folded into weights.
"""

import csv
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ._validation import (EllipticityError, UsageError, check_dimension, check_ellipticity_constants,
                          check_order, check_scalar, as_points, norm)
from .fields import Grid, restrict_translate_scale, sample_global, weighted_l1_norm
from .functions import Expr, COMPACT
from .kernels import CutoffMollifier, KernelSpec, WeightSpec
from .quadrature import differences, stencil

_CHUNK_ENTRIES = 4_000_000


@dataclass
class Coeffs:
    """Coefficient arrays per quadrature region, broadcastable against ``Differences``."""

    mid: np.ndarray
    near: np.ndarray
    far: np.ndarray

    def __add__(self, other):
        return Coeffs(self.mid + other.mid, self.near + other.near, self.far + other.far)

    def __mul__(self, c):
        return Coeffs(self.mid * c, self.near * c, self.far * c)

    __rmul__ = __mul__

    def scaled(self, mid, near, far):
        return Coeffs(self.mid * mid, self.near * near, self.far * far)

    def full(self, N):
        return Coeffs(*(np.broadcast_to(a, (N, a.shape[-1])).copy()
                        for a in (self.mid, self.near, self.far)))


def contract(st, C, D):
    """``(2-sigma) sum W c delta2`` at every node of the batch."""
    s = (np.sum(C.mid * D.mid * st.mid_weights, axis=1)
         + st.near_weight * np.sum(C.near * D.near, axis=1)
         + np.sum(C.far * D.far * st.far_weights, axis=1))
    return (2.0 - st.sigma) * s


def _kernel_coeffs(kernel, st, X):
    if kernel.x_dependent:
        Xe = X[:, None, :]
    else:
        Xe = np.zeros((1, 1, st.n))
    return Coeffs(kernel.coefficient(Xe, st.mid_rep[None]),
                  kernel.coefficient(Xe, st.near_rep[None]),
                  kernel.coefficient(Xe, st.far_y[None]))


class NonlocalOperator:
    """Base class. Subclasses are immutable descriptions; evaluation is stateless."""

    variant = "abstract"
    translation_invariant = True

    def evaluate(self, u, nodes=None):
        """Operator values at integer lattice ``nodes`` (default: interior nodes of ``u.grid``)."""
        return self._over_nodes(u, nodes, self._apply)

    def __call__(self, u, nodes=None):
        return self.evaluate(u, nodes)

    def linearize(self, u, nodes=None):
        """Full per-node coefficient arrays (see module docstring)."""
        parts = []
        self._over_nodes(u, nodes, lambda D, X: parts.append(self._linearize(D, X).full(len(X))) or
                         np.zeros(len(X)))
        if not parts:
            raise UsageError("no evaluation nodes")
        return Coeffs(*(np.concatenate([getattr(p, k) for p in parts]) for k in ("mid", "near", "far")))

    def _over_nodes(self, u, nodes, fn):
        g = u.grid
        self._check_grid(g)
        st = stencil(g, self.sigma)
        nodes = g.interior_index if nodes is None else np.asarray(nodes, dtype=int).reshape(-1, g.n)
        width = len(st.mid_weights) + len(st.far_weights) + g.n
        step = max(1, _CHUNK_ENTRIES // width)
        out = np.empty(len(nodes))
        for a in range(0, len(nodes), step):
            sl = slice(a, a + step)
            D = differences(st, u, nodes[sl])
            out[sl] = fn(D, nodes[sl] * g.h)
        return out

    def _check_grid(self, g):
        if g.n != self.n:
            raise UsageError(f"operator dimension {self.n} does not match grid dimension {g.n}")

    def stencil_for(self, grid):
        return stencil(grid, self.sigma)

    def _apply(self, D, X):
        raise NotImplementedError

    def _linearize(self, D, X):
        raise NotImplementedError

    @property
    def constants(self):
        return {"n": self.n, "sigma": self.sigma, "sigma0": self.sigma0,
                "lam": self.lam, "Lam": self.Lam}


@dataclass(frozen=True, eq=False)
class LinearOperator(NonlocalOperator):
    """``(2-sigma) int delta2 u(x,y) a(x,y) |y|^(-n-sigma) dy``."""

    kernel: KernelSpec
    variant = "linear"

    @property
    def n(self):
        return self.kernel.n

    @property
    def sigma(self):
        return self.kernel.sigma

    @property
    def sigma0(self):
        return self.kernel.sigma0

    @property
    def lam(self):
        return self.kernel.lam

    @property
    def Lam(self):
        return self.kernel.Lam

    @property
    def translation_invariant(self):
        return not self.kernel.x_dependent

    def _apply(self, D, X):
        return contract(D.st, self._linearize(D, X), D)

    def _linearize(self, D, X):
        return _kernel_coeffs(self.kernel, D.st, X)

    def to_dict(self):
        return {"variant": self.variant, "kernel": self.kernel.to_dict()}


@dataclass(frozen=True, eq=False)
class ExtremalOperator(NonlocalOperator):
    """Pucci-type extremal operators ``M+`` (sign=+1) and ``M-`` (sign=-1)."""

    sign: int = 1
    n: int = 1
    sigma: float = 1.5
    lam: float = 1.0
    Lam: float = 2.0
    sigma0: float = 1.0

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise UsageError("sign must be +1 or -1")
        check_dimension(self.n)
        check_order(self.sigma, self.sigma0)
        check_ellipticity_constants(self.lam, self.Lam)

    @property
    def variant(self):
        return "extremal_plus" if self.sign > 0 else "extremal_minus"

    def _select(self, d):
        hi, lo = (self.Lam, self.lam) if self.sign > 0 else (self.lam, self.Lam)
        return np.where(d > 0, hi, lo)

    def _apply(self, D, X):
        return contract(D.st, self._linearize(D, X), D)

    def _linearize(self, D, X):
        return Coeffs(self._select(D.mid), self._select(D.near), self._select(D.far))

    def to_dict(self):
        return {"variant": self.variant, **self.constants}


def extremal_pair(n, sigma, lam, Lam, sigma0=1.0):
    return (ExtremalOperator(1, n, sigma, lam, Lam, sigma0),
            ExtremalOperator(-1, n, sigma, lam, Lam, sigma0))


@dataclass(frozen=True, eq=False)
class IsaacsOperator(NonlocalOperator):
    """``inf_beta sup_alpha L_{alpha beta}``; ``family[beta][alpha]`` are kernels.

    A flat list of kernels is read as a single ``beta`` row (pure sup).
    Ties go to the lowest index.
    """

    family: tuple
    variant = "isaacs"

    def __post_init__(self):
        fam = self.family
        if isinstance(fam, KernelSpec):
            fam = [[fam]]
        fam = list(fam)
        if not fam:
            raise UsageError("Isaacs family must be nonempty")
        if isinstance(fam[0], KernelSpec):
            fam = [fam]
        rows = tuple(tuple(r) for r in fam)
        if any(len(r) == 0 for r in rows):
            raise UsageError("Isaacs family rows must be nonempty")
        k0 = rows[0][0]
        for r in rows:
            for k in r:
                if (k.n, k.sigma) != (k0.n, k0.sigma):
                    raise UsageError("all kernels in an Isaacs family share n and sigma")
        object.__setattr__(self, "family", rows)

    @property
    def _k0(self):
        return self.family[0][0]

    n = property(lambda self: self._k0.n)
    sigma = property(lambda self: self._k0.sigma)
    sigma0 = property(lambda self: max(k.sigma0 for r in self.family for k in r))
    lam = property(lambda self: min(k.lam for r in self.family for k in r))
    Lam = property(lambda self: max(k.Lam for r in self.family for k in r))

    @property
    def translation_invariant(self):
        return not any(k.x_dependent for r in self.family for k in r)

    @property
    def shape(self):
        return len(self.family), max(len(r) for r in self.family)

    def values_table(self, D, X):
        """Values of every linear member, shape ``(B, A, N)`` (missing entries -inf)."""
        B, A = self.shape
        out = np.full((B, A, len(X)), -np.inf)
        for b, row in enumerate(self.family):
            for a, k in enumerate(row):
                out[b, a] = contract(D.st, _kernel_coeffs(k, D.st, X), D)
        return out

    def policy(self, D, X, beta=None, prev=None, tie=1e-11):
        """Per-node ``(beta, alpha)`` choices; ``beta`` may be fixed by the caller.

        With ``prev = (beta_prev, alpha_prev)`` a previous choice is kept unless
        the new one improves it by more than ``tie * (1 + |value|)``; this stops
        policy iteration from cycling between choices that differ by round-off.
        """
        vals = self.values_table(D, X)
        idx = np.arange(len(X))
        alpha_all = np.argmax(vals, axis=1)
        sup = np.max(vals, axis=1)
        if beta is None:
            beta = np.argmin(sup, axis=0)
            if prev is not None and prev[0] is not None:
                bp = prev[0]
                keep = sup[bp, idx] <= sup[beta, idx] + tie * (1.0 + np.abs(sup[beta, idx]))
                beta = np.where(keep, bp, beta)
        alpha = alpha_all[beta, idx]
        if prev is not None and prev[1] is not None:
            ap = prev[1]
            v_new = vals[beta, alpha, idx]
            keep = vals[beta, ap, idx] >= v_new - tie * (1.0 + np.abs(v_new))
            alpha = np.where(keep, ap, alpha)
        return beta, alpha, sup

    def _apply(self, D, X):
        vals = self.values_table(D, X)
        return np.min(np.max(vals, axis=1), axis=0)

    def _linearize(self, D, X, beta=None):
        beta, alpha, _ = self.policy(D, X, beta)
        return self._coeffs_for(D, X, beta, alpha)

    def _coeffs_for(self, D, X, beta, alpha):
        st = D.st
        N = len(X)
        C = Coeffs(np.zeros((N, len(st.mid_weights))), np.zeros((N, st.n)),
                   np.zeros((N, len(st.far_weights))))
        for b, row in enumerate(self.family):
            for a, k in enumerate(row):
                sel = (beta == b) & (alpha == a)
                if np.any(sel):
                    kc = _kernel_coeffs(k, st, X[sel]).full(int(sel.sum()))
                    C.mid[sel], C.near[sel], C.far[sel] = kc.mid, kc.near, kc.far
        return C

    def to_dict(self):
        return {"variant": self.variant,
                "family": [[k.to_dict() for k in r] for r in self.family]}


def _softplus0(z):
    """``log(1+e^z) - log 2``, accurate near 0 and for large |z|."""
    z = np.asarray(z, dtype=float)
    small = z < 1.0
    out = np.empty_like(z)
    zs = z[small]
    out[small] = np.log1p(np.expm1(zs) / 2.0)
    zl = z[~small]
    out[~small] = zl + np.log1p(np.exp(-zl)) - np.log(2.0)
    return out


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


RHO_PROFILES = ("linear", "softplus", "power")


@dataclass(frozen=True)
class RhoSpec:
    """Integrand profile ``rho(z, |y|)`` with ``lam <= d rho/dz <= Lam``.

    Profiles: ``linear`` (``c z``), ``softplus``
    (``lam z + (Lam-lam)(log(1+e^z) - log 2)``) and ``power``
    (``|y|^p rhobar(z |y|^-p)`` with the softplus ``rhobar``, ``p`` in [0, 2]).
    """

    profile: str = "softplus"
    lam: float = 1.0
    Lam: float = 2.0
    c: float = None
    p: float = 0.0

    def __post_init__(self):
        if self.profile not in RHO_PROFILES:
            raise UsageError(f"unknown rho profile {self.profile!r}; known: {list(RHO_PROFILES)}")
        check_ellipticity_constants(self.lam, self.Lam)
        if self.profile == "linear":
            c = self.lam if self.c is None else self.c
            check_scalar(c, "rho.c", low=self.lam, high=self.Lam)
            object.__setattr__(self, "c", float(c))
        if self.profile == "power":
            check_scalar(self.p, "rho.p", low=0.0, high=2.0)

    @property
    def C0(self):
        """Bound on ``|d2 rho/dz2|`` in units of ``(1 + |y|^-2)``."""
        return 0.0 if self.profile == "linear" else (self.Lam - self.lam) / 4.0

    def _scaled(self, z, r):
        if self.profile == "power":
            s = np.asarray(r, dtype=float) ** self.p
            return z / s, s
        return z, 1.0

    def _check(self, z):
        z = np.asarray(z, dtype=float)
        if not np.all(np.isfinite(z)):
            raise UsageError("rho evaluated at a non-finite argument")
        return z

    def value(self, z, r):
        z = self._check(z)
        if self.profile == "linear":
            return self.c * z
        w, s = self._scaled(z, r)
        return s * (self.lam * w + (self.Lam - self.lam) * _softplus0(w))

    def dz(self, z, r):
        z = self._check(z)
        if self.profile == "linear":
            return np.full(np.broadcast(z, r).shape, self.c)
        w, _ = self._scaled(z, r)
        return self.lam + (self.Lam - self.lam) * _sigmoid(w)

    def dzz(self, z, r):
        z = self._check(z)
        if self.profile == "linear":
            return np.zeros(np.broadcast(z, r).shape)
        w, s = self._scaled(z, r)
        sg = _sigmoid(w)
        return (self.Lam - self.lam) * sg * (1.0 - sg) / s

    def check(self, rng=None, count=2000):
        """Sample the registry invariants; raises :class:`EllipticityError` on violation."""
        rng = np.random.default_rng(0) if rng is None else rng
        z = rng.normal(scale=5.0, size=count)
        r = np.exp(rng.uniform(np.log(1e-3), np.log(1e2), size=count))
        if np.any(self.value(np.zeros(1), r[:1]) != 0.0):
            raise EllipticityError("rho(0, .) must vanish")
        d = self.dz(z, r)
        if np.any(d < self.lam) or np.any(d > self.Lam):
            raise EllipticityError("d rho/dz leaves [lam, Lam]")
        if np.any(np.abs(self.dzz(z, r)) > self.C0 * (1.0 + r ** -2.0) + 1e-12):
            raise EllipticityError("|d2 rho/dz2| exceeds C0 (1 + |y|^-2)")
        return True

    def to_dict(self):
        return {"profile": self.profile, "lam": self.lam, "Lam": self.Lam, "c": self.c, "p": self.p}


@dataclass(frozen=True, eq=False)
class RhoOperator(NonlocalOperator):
    """``(2-sigma) int rho(delta2 u(x,y), |y|) |y|^(-n-sigma) dy``."""

    rho: RhoSpec
    n: int = 1
    sigma: float = 1.5
    sigma0: float = 1.0
    variant = "rho"

    def __post_init__(self):
        check_dimension(self.n)
        check_order(self.sigma, self.sigma0)
        self.rho.check()

    lam = property(lambda self: self.rho.lam)
    Lam = property(lambda self: self.rho.Lam)

    def _radii(self, st):
        return norm(st.mid_rep), norm(st.far_y)

    def _apply(self, D, X):
        st = D.st
        r_mid, r_far = self._radii(st)
        cs, rs = st.near_scale, st.near_radius
        near = np.sum(self.rho.value(D.near[..., None] * cs, rs) / cs * st.near_sw, axis=-1)
        s = (np.sum(self.rho.value(D.mid, r_mid) * st.mid_weights, axis=1)
             + st.near_weight * np.sum(near, axis=1)
             + np.sum(self.rho.value(D.far, r_far) * st.far_weights, axis=1))
        return (2.0 - st.sigma) * s

    def _linearize(self, D, X):
        st = D.st
        r_mid, r_far = self._radii(st)
        near = np.sum(self.rho.dz(D.near[..., None] * st.near_scale, st.near_radius) * st.near_sw,
                      axis=-1)
        return Coeffs(self.rho.dz(D.mid, r_mid), near, self.rho.dz(D.far, r_far))

    def to_dict(self):
        return {"variant": self.variant, "rho": self.rho.to_dict(), "n": self.n,
                "sigma": self.sigma, "sigma0": self.sigma0}


@dataclass(frozen=True, eq=False)
class FrozenOperator(NonlocalOperator):
    """Inner operator with every coefficient read at ``x0``."""

    inner: NonlocalOperator
    x0: tuple
    variant = "frozen"
    translation_invariant = True

    def __post_init__(self):
        x0 = tuple(float(v) for v in np.ravel(as_points(self.x0, self.inner.n)))
        object.__setattr__(self, "x0", x0)

    n = property(lambda self: self.inner.n)
    sigma = property(lambda self: self.inner.sigma)
    sigma0 = property(lambda self: self.inner.sigma0)
    lam = property(lambda self: self.inner.lam)
    Lam = property(lambda self: self.inner.Lam)

    def _at(self, X):
        return np.broadcast_to(np.asarray(self.x0), X.shape)

    def _apply(self, D, X):
        return self.inner._apply(D, self._at(X))

    def _linearize(self, D, X):
        return self.inner._linearize(D, self._at(X))

    def to_dict(self):
        return {"variant": self.variant, "x0": list(self.x0), "inner": self.inner.to_dict()}


@dataclass(frozen=True, eq=False)
class RescaledOperator(NonlocalOperator):
    """``I_{mu,gamma}(u, x) = gamma^sigma mu I(u(./gamma)/mu, gamma x)``.

    Evaluated on an auxiliary lattice of spacing ``gamma h``, where the
    stencil is the exact dilation of the original one.
    """

    inner: NonlocalOperator
    mu: float = 1.0
    gamma: float = 1.0
    variant = "rescaled"

    def __post_init__(self):
        check_scalar(self.mu, "mu", low=0.0, low_inclusive=False)
        check_scalar(self.gamma, "gamma", low=0.0, high=1.0, low_inclusive=False)

    n = property(lambda self: self.inner.n)
    sigma = property(lambda self: self.inner.sigma)
    sigma0 = property(lambda self: self.inner.sigma0)
    lam = property(lambda self: self.inner.lam)
    Lam = property(lambda self: self.inner.Lam)

    @property
    def translation_invariant(self):
        return self.inner.translation_invariant

    def companion_grid(self, g):
        h2 = g.h * self.gamma
        Y2 = g.mid_radius * self.gamma
        # the far field of the companion starts at gamma * mid_radius and must clear B_1
        if Y2 < 1.0 + self.gamma - 1e-12:
            raise UsageError(f"rescaling by gamma={self.gamma} needs mid_radius >= 1 + 1/gamma "
                             f"(grid has {g.mid_radius})")
        R2 = np.ceil(max(Y2 + 1.0, 2.0) / h2 - 1e-9) * h2
        return Grid(g.n, h2, R2, Y2)

    def companion_field(self, u):
        """The field ``z -> u(z/gamma)/mu`` on the companion grid."""
        return restrict_translate_scale(u, 0.0, self.gamma, 1.0 / self.mu,
                                        grid=self.companion_grid(u.grid))

    def evaluate(self, u, nodes=None):
        self._check_grid(u.grid)
        nodes = u.grid.interior_index if nodes is None else np.asarray(nodes, dtype=int).reshape(-1, self.n)
        if self.mu == 1.0 and self.gamma == 1.0:
            return self.inner.evaluate(u, nodes)
        v = self.companion_field(u)
        return self.gamma ** self.sigma * self.mu * self.inner.evaluate(v, nodes)

    def linearize(self, u, nodes=None):
        raise UsageError("linearize a rescaled operator through its inner operator on the companion grid")

    def _apply(self, D, X):
        raise UsageError("a rescaled operator cannot be nested inside another transform")

    def to_dict(self):
        return {"variant": self.variant, "mu": self.mu, "gamma": self.gamma, "inner": self.inner.to_dict()}


@dataclass(frozen=True, eq=False)
class RegularizedOperator(NonlocalOperator):
    """Regularization ``J^eps`` of an operator.

    ``J^eps(u, x) = sum_z eta_eps(z) J~_{x+z}((1-phi_eps) delta2 u)
    + lam (2-sigma) int phi_eps delta2 u |y|^(-n-sigma) dy``, where
    ``J~_z`` reads coefficients at ``z`` clamped to the ball of radius
    ``1-eps``. The mollification is skipped for translation-invariant inner
    operators, for which it is the identity.
    """

    inner: NonlocalOperator
    eps: float = 0.1
    variant = "regularized"

    def __post_init__(self):
        check_scalar(self.eps, "eps", low=0.0, high=0.25, low_inclusive=False, high_inclusive=False)
        if isinstance(self.inner, RescaledOperator):
            raise UsageError("regularize the inner operator before rescaling")

    n = property(lambda self: self.inner.n)
    sigma = property(lambda self: self.inner.sigma)
    sigma0 = property(lambda self: self.inner.sigma0)
    lam = property(lambda self: self.inner.lam)
    Lam = property(lambda self: self.inner.Lam)

    @property
    def translation_invariant(self):
        return self.inner.translation_invariant

    @cached_property
    def mollifier(self):
        return CutoffMollifier(self.eps, self.n)

    def clamp(self, z):
        z = np.asarray(z, dtype=float)
        r = norm(z)[..., None]
        lim = 1.0 - self.eps
        return np.where(r > lim, lim * z / np.where(r > 0, r, 1.0), z)

    def _phi(self, st):
        c = self.mollifier
        return c.cutoff(st.mid_rep), c.cutoff(st.near_rep), c.cutoff(st.far_y)

    def _conv(self, fn, X):
        if self.inner.translation_invariant:
            return fn(X)
        zq, wq = self.mollifier.quadrature
        acc = None
        for z, w in zip(zq, wq):
            part = fn(self.clamp(X + z)) * w
            acc = part if acc is None else acc + part
        return acc

    def parts(self, D, X):
        """``(convolution term, lam-cutoff term, (1-phi)-weighted term)`` per node."""
        st = D.st
        pm, pn, pf = self._phi(st)
        Dr = D.scaled(1.0 - pm, 1.0 - pn, 1.0 - pf)
        conv = self._conv(lambda Y: self.inner._apply(Dr, Y), X)
        ones = Coeffs(np.ones(1), np.ones(1), np.ones(1))
        near_term = contract(st, ones.scaled(pm, pn, pf), D)
        far_term = contract(st, ones.scaled(1.0 - pm, 1.0 - pn, 1.0 - pf), D)
        return conv, near_term, far_term

    def _apply(self, D, X):
        conv, near_term, _ = self.parts(D, X)
        return conv + self.lam * near_term

    def _linearize(self, D, X):
        st = D.st
        pm, pn, pf = self._phi(st)
        Dr = D.scaled(1.0 - pm, 1.0 - pn, 1.0 - pf)
        N = len(X)
        C = self._conv(lambda Y: self.inner._linearize(Dr, Y).full(N), X)
        C = C.scaled(1.0 - pm, 1.0 - pn, 1.0 - pf)
        return C + Coeffs(self.lam * pm, self.lam * pn, self.lam * pf)

    def to_dict(self):
        return {"variant": self.variant, "eps": self.eps, "inner": self.inner.to_dict()}


# -- functional interface -----------------------------------------------------

def fractional_laplacian(n, sigma, sigma0=1.0):
    """The ``a == 1`` operator ``L1 = -(-Delta)^(sigma/2)`` (no normalising constant)."""
    return LinearOperator(KernelSpec.constant(1.0, n=n, sigma=sigma, sigma0=sigma0, lam=1.0, Lam=1.0))


def _nodes_arg(u, x):
    if x is None:
        return None
    g = u.grid
    pts = as_points(x, g.n).reshape(-1, g.n)
    idx = np.rint(pts / g.h).astype(int)
    if np.any(np.abs(idx * g.h - pts) > 1e-9):
        raise UsageError("evaluation points must be lattice nodes")
    if np.any(norm(pts) >= 1.0 - 1e-12):
        raise UsageError("evaluation points must lie in the open unit ball")
    return idx


def _scalar_or_array(vals, x):
    if x is not None and np.ndim(x) <= 1 and len(vals) == 1:
        return float(vals[0])
    return vals


def eval_linear(L, u, x=None):
    if not isinstance(L, LinearOperator):
        raise UsageError("eval_linear expects a LinearOperator")
    return _scalar_or_array(L.evaluate(u, _nodes_arg(u, x)), x)


def eval_extremal(sign, u, x=None, *, sigma=1.5, lam=1.0, Lam=2.0, sigma0=1.0):
    """``M+`` (sign '+'/+1) or ``M-`` (sign '-'/-1) with the given constants."""
    if isinstance(sign, ExtremalOperator):
        op = sign
    else:
        s = {"+": 1, "-": -1, 1: 1, -1: -1}.get(sign)
        if s is None:
            raise UsageError("sign must be '+' or '-'")
        op = ExtremalOperator(s, u.grid.n, sigma, lam, Lam, sigma0)
    return _scalar_or_array(op.evaluate(u, _nodes_arg(u, x)), x)


def eval_isaacs(I, u, x=None):
    if not isinstance(I, IsaacsOperator):
        raise UsageError("eval_isaacs expects an IsaacsOperator")
    return _scalar_or_array(I.evaluate(u, _nodes_arg(u, x)), x)


def eval_rho(R, u, x=None):
    if not isinstance(R, RhoOperator):
        raise UsageError("eval_rho expects a RhoOperator")
    return _scalar_or_array(R.evaluate(u, _nodes_arg(u, x)), x)


def freeze(I, x0):
    if I.translation_invariant and not isinstance(I, (RescaledOperator,)):
        return I
    return FrozenOperator(I, x0)


def rescale(I, mu=1.0, gamma=1.0):
    return RescaledOperator(I, float(mu), float(gamma))


def regularize(I, eps):
    return RegularizedOperator(I, float(eps))


def split_F(J, u, x=None):
    """``(F, C0)`` with ``J(u) = C0 L1 u + F(u)``, ``L1 = -(-Delta)^(sigma/2)``, ``C0 = lam``."""
    if not isinstance(J, RegularizedOperator):
        raise UsageError("split_F expects a RegularizedOperator")
    C0 = J.lam

    def fn(D, X):
        conv, _, far_term = J.parts(D, X)
        return conv - C0 * far_term

    F = J._over_nodes(u, _nodes_arg(u, x), fn)
    return _scalar_or_array(F, x), C0


@dataclass
class CoefficientTable:
    """Coefficients ``a(x, y)`` on quadrature nodes for each evaluation node."""

    nodes: np.ndarray
    mid_y: np.ndarray
    near_y: np.ndarray
    far_y: np.ndarray
    mid: np.ndarray
    near: np.ndarray
    far: np.ndarray

    def as_coeffs(self):
        return Coeffs(self.mid, self.near, self.far)

    @property
    def min(self):
        return float(min(self.mid.min(), self.near.min(), self.far.min()))

    @property
    def max(self):
        return float(max(self.mid.max(), self.near.max(), self.far.max()))


def linearize_rho(R, u, shift=0, nodes=None, t_nodes=16):
    """``a(x,y) = int_0^1 d rho/dz(t delta2 u(x+h,y) + (1-t) delta2 u(x,y), y) dt``.

    ``shift`` is the lattice vector ``h`` in integer units. With ``shift == 0``
    this is the exact Jacobian.
    """
    if not isinstance(R, RhoOperator):
        raise UsageError("linearize_rho expects a RhoOperator")
    g = u.grid
    shift = np.broadcast_to(np.asarray(shift, dtype=int), (g.n,))
    if norm(shift * g.h) >= 0.5:
        raise UsageError("|h| must be below 1/2")
    st = stencil(g, R.sigma)
    nodes = g.interior_index if nodes is None else np.asarray(nodes, dtype=int).reshape(-1, g.n)
    D0 = differences(st, u, nodes)
    D1 = differences(st, u, nodes + shift) if np.any(shift) else D0
    t, w = np.polynomial.legendre.leggauss(t_nodes)
    t, w = 0.5 * (t + 1.0), 0.5 * w
    r_mid, r_far = norm(st.mid_rep), norm(st.far_y)
    mid = sum(wi * R.rho.dz(ti * D1.mid + (1 - ti) * D0.mid, r_mid) for ti, wi in zip(t, w))
    far = sum(wi * R.rho.dz(ti * D1.far + (1 - ti) * D0.far, r_far) for ti, wi in zip(t, w))
    near = sum(wi * np.sum(R.rho.dz((ti * D1.near + (1 - ti) * D0.near)[..., None] * st.near_scale,
                                     st.near_radius) * st.near_sw, axis=-1)
               for ti, wi in zip(t, w))
    table = CoefficientTable(nodes, st.mid_rep, st.near_rep, st.far_y, mid, near, far)
    if table.min < R.lam or table.max > R.Lam:
        raise EllipticityError(f"linearized coefficients leave [{R.lam}, {R.Lam}]: "
                               f"[{table.min}, {table.max}]")
    return table


# -- operator distance ----------------------------------------------------------

@dataclass(frozen=True)
class Probe:
    name: str
    expr: Expr
    M: float


PROBE_WIDTHS = (0.25, 0.5, 1.0, 2.0)
PROBE_GAMMAS = (1.0, 0.5, 0.25)


def _curvature_bound(expr, n, R=8.0):
    """``sup |D^2 u| / 2`` estimated by second differences on a fine mesh (axes and diagonals)."""
    h = 1e-3
    t = np.arange(-R, R + h / 2, h)
    if n == 1:
        v = expr(t[:, None])
        return float(np.max(np.abs(v[2:] - 2 * v[1:-1] + v[:-2])) / h ** 2 / 2)
    s = np.arange(-2.5, 2.5 + 0.01, 0.01)
    P = np.stack(np.meshgrid(s, s, indexing="ij"), -1).reshape(-1, 2)
    best = 0.0
    for e in (np.array([1.0, 0]), np.array([0, 1.0]), np.array([1.0, 1.0]) / np.sqrt(2),
              np.array([1.0, -1.0]) / np.sqrt(2)):
        d2 = expr(P + h * e) - 2 * expr(P) + expr(P - h * e)
        best = max(best, float(np.max(np.abs(d2))) / h ** 2 / 2)
    return best


class ProbeFamily:
    """Fixed smooth probes: bumps and truncated quadratics at 9 centers x 4 widths.

    Each probe carries ``M = max(weighted L1 norm, curvature bound)``.
    """

    def __init__(self, n=1, sigma0=1.0, grid=None):
        self.n = check_dimension(n)
        self.grid = grid or (Grid(1, 1 / 32, 8.0) if n == 1 else Grid(2, 1 / 8, 8.0))
        self.sigma0 = sigma0
        if n == 1:
            centers = [(round(float(c), 12),) for c in np.linspace(-0.8, 0.8, 9)]
        else:
            cs = (-0.5, 0.0, 0.5)
            centers = [(a, b) for a in cs for b in cs]
        w = WeightSpec(n, sigma0)
        probes = []
        for c in centers:
            for width in PROBE_WIDTHS:
                for fam, params in (("bump", {"center": c, "radius": width, "amp": 1.0}),
                                    ("truncated_quadratic", {"center": c, "width": width, "amp": 1.0})):
                    e = Expr.named(fam, **params)
                    f = sample_global(self.grid, e)
                    M = max(float(weighted_l1_norm(f, w)), _curvature_bound(e, n))
                    probes.append(Probe(f"{fam}@{c}/{width}", e, M))
        self.probes = tuple(probes)

    def __len__(self):
        return len(self.probes)


def operator_distance(I, J, probes=None, gammas=PROBE_GAMMAS, return_detail=False):
    """Lower bound for ``||I - J||``: max over probes, dilations and nodes of
    ``|I(u,x) - J(u,x)| / (1 + M(u))``.
    """
    probes = probes or ProbeFamily(I.n, I.sigma0)
    best, where = 0.0, None
    for p in probes.probes:
        u = sample_global(probes.grid, p.expr)
        for gm in gammas:
            a = rescale(I, 1.0, gm).evaluate(u)
            b = rescale(J, 1.0, gm).evaluate(u)
            d = float(np.max(np.abs(a - b))) / (1.0 + p.M)
            if d > best:
                best, where = d, (p.name, gm)
    return (best, where) if return_detail else best


def write_trace(op, u, node, path):
    """Per-quadrature-node integrand trace at one lattice node, as CSV."""
    node = np.asarray(node, dtype=int).reshape(1, u.grid.n)
    st = stencil(u.grid, op.sigma)
    D = differences(st, u, node)
    C = op._linearize(D, node * u.grid.h).full(1)
    rows = []
    for region, ys, w, c, d in (
            ("mid", st.mid_rep, st.mid_weights, C.mid[0], D.mid[0]),
            ("near", st.near_rep, np.full(st.n, st.near_weight), C.near[0], D.near[0]),
            ("far", st.far_y, st.far_weights, C.far[0], D.far[0])):
        for y, wi, ci, di in zip(ys, w, c, d):
            rows.append([region, *np.atleast_1d(y), wi, ci, di, (2 - st.sigma) * wi * ci * di])
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["region", *[f"y{i}" for i in range(st.n)], "weight", "coefficient", "delta2",
                     "contribution"])
        wr.writerows(rows)
    return path
