"""Singular-integral quadrature for ``int delta2 u(x,y) K(x,y) dy``.

The offset space is split into three regions:

* near field ``|y| < h``: ``delta2 u`` is replaced by the second difference of
  the local quadratic, which is integrated against ``|y|^(-n-sigma)`` in closed
  form and lumped onto the nearest-neighbour second differences. The lumped
  weight also absorbs the mid-field interpolation error on ``|y|^2``, so the
  near and mid fields together integrate quadratics exactly (unless that
  would push the weight below a positive floor, which happens for small
  sigma);
* mid field ``h <= |y| <= mid_radius``: lattice values of ``delta2 u``
  (piecewise-linear product integration in 1D, cell integrals in 2D);
* far field ``|y| > mid_radius``: the exterior closed form, integrated after
  the substitution ``t = (mid_radius / |y|)^sigma`` with Gauss-Legendre nodes.

All weights are positive, so every discrete operator built on them is a
monotone scheme. The ``(2 - sigma)`` factor is not folded into the weights.
Weights are stored for one representative of each pair ``{y, -y}`` and
already account for both.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate

from ._validation import EvaluationError, norm

_FAR_PANELS, _FAR_NODES = 16, 16
_NEAR_S_NODES = 8
_NEAR_FLOOR = 0.1


def _p0(a, b, s):
    """int_a^b y^(-1-s) dy"""
    return (a ** -s - b ** -s) / s


def _p1(a, b, s):
    """int_a^b y^(-s) dy"""
    if abs(s - 1.0) < 1e-14:
        return np.log(b / a)
    return (b ** (1.0 - s) - a ** (1.0 - s)) / (1.0 - s)


def _gauss_panels(panels, nodes):
    t, w = np.polynomial.legendre.leggauss(nodes)
    edges = np.linspace(0.0, 1.0, panels + 1)
    tt = np.concatenate([0.5 * (b - a) * t + 0.5 * (a + b) for a, b in zip(edges[:-1], edges[1:])])
    ww = np.concatenate([0.5 * (b - a) * w for a, b in zip(edges[:-1], edges[1:])])
    return tt, ww


@dataclass(frozen=True, eq=False)
class Stencil:
    grid: object
    sigma: float
    mid_offsets: np.ndarray   # (m, n) int
    mid_weights: np.ndarray   # (m,)
    near_weight: float        # per axis
    near_s: np.ndarray        # s-nodes on [0, 1] for nonlinear near-field averaging
    near_sw: np.ndarray
    far_y: np.ndarray         # (q, n)
    far_weights: np.ndarray   # (q,)

    @property
    def n(self):
        return self.grid.n

    @property
    def h(self):
        return self.grid.h

    @property
    def mid_rep(self):
        return self.mid_offsets * self.grid.h

    @property
    def near_offsets(self):
        return np.eye(self.grid.n, dtype=int)

    @property
    def near_rep(self):
        return 0.5 * self.grid.h * np.eye(self.grid.n)

    @property
    def near_scale(self):
        """Factors ``(|y|/h)^2`` at the s-nodes; delta2 u(x,y) ~ factor * delta2 u(x,h)."""
        return self.near_s ** (2.0 / (2.0 - self.sigma))

    @property
    def near_radius(self):
        return self.grid.h * self.near_s ** (1.0 / (2.0 - self.sigma))

    def total_mass(self):
        """Sum of all weights multiplying ``u(x)`` (without the (2-sigma) factor)."""
        return 2.0 * (self.mid_weights.sum() + self.n * self.near_weight + self.far_weights.sum())

    def shell_mass(self):
        """Mid-field mass: approximates ``int_{h<|y|<mid_radius} |y|^(-n-sigma) dy``."""
        return float(self.mid_weights.sum())


@lru_cache(maxsize=64)
def stencil(grid, sigma):
    sigma = float(sigma)
    h, Y = grid.h, grid.mid_radius
    if grid.n == 1:
        K = grid.K
        w = np.zeros(K)
        for k in range(1, K + 1):
            y = k * h
            if k > 1:
                a = y - h
                w[k - 1] += (_p1(a, y, sigma) - a * _p0(a, y, sigma)) / h
            if k < K:
                c = y + h
                w[k - 1] += (c * _p0(y, c, sigma) - _p1(y, c, sigma)) / h
        mid_offsets = np.arange(1, K + 1)[:, None]
        mid_weights = 2.0 * w
        base = 2.0 * h ** (-sigma) / (2.0 - sigma)
        exact = 2.0 * (Y ** (2.0 - sigma) - h ** (2.0 - sigma)) / (2.0 - sigma)
        corr = (exact - np.sum(mid_weights * (mid_offsets[:, 0] * h) ** 2)) / h ** 2
        t, wt = _gauss_panels(_FAR_PANELS, _FAR_NODES)
        far_y = (Y * t ** (-1.0 / sigma))[:, None]
        far_weights = 2.0 * Y ** (-sigma) / sigma * wt
    else:
        mid_offsets, mid_weights, exact = _cells_2d(h, grid.K, sigma)
        J = 8.0 / (2.0 - sigma) * integrate.quad(
            lambda th: (2.0 * np.cos(th)) ** (sigma - 2.0), 0.0, np.pi / 4, epsabs=1e-14)[0]
        base = 0.5 * J * h ** (-sigma)
        corr = (exact - np.sum(mid_weights * (mid_offsets[:, 0] * h) ** 2)) / h ** 2
        t, wt = _gauss_panels(2, _FAR_NODES)
        m = 32
        th = np.pi * (np.arange(m) + 0.5) / m
        r = Y * t ** (-1.0 / sigma)
        rr, tt = np.meshgrid(r, th, indexing="ij")
        far_y = np.stack([rr * np.cos(tt), rr * np.sin(tt)], axis=-1).reshape(-1, 2)
        far_weights = (2.0 * (np.pi / m) * Y ** (-sigma) / sigma * np.repeat(wt, m))
    # the floor keeps the scheme monotone; it only binds for small sigma
    near_weight = max(base + corr, _NEAR_FLOOR * base)
    s, sw = np.polynomial.legendre.leggauss(_NEAR_S_NODES)
    return Stencil(grid, sigma, mid_offsets, mid_weights, float(near_weight),
                   0.5 * (s + 1.0), 0.5 * sw, far_y, far_weights)


def _cells_2d(h, K, sigma):
    rng = np.arange(-K, K + 1)
    k1, k2 = np.meshgrid(rng, rng, indexing="ij")
    k1, k2 = k1.ravel(), k2.ravel()
    half = (k1 > 0) | ((k1 == 0) & (k2 > 0))
    inside = (k1 ** 2 + k2 ** 2) <= K * K
    sel = half & inside
    offs = np.stack([k1[sel], k2[sel]], axis=-1)
    weights = np.empty(len(offs))
    moment = 0.0
    for order in (4, 8):
        t, w = np.polynomial.legendre.leggauss(order)
        t = 0.5 * t
        w = 0.5 * w
        close = np.max(np.abs(offs), axis=1) <= 3
        pick = close if order == 8 else ~close
        o = offs[pick].astype(float)
        tx, ty = np.meshgrid(t, t, indexing="ij")
        wxy = np.outer(w, w).ravel()
        px = (o[:, 0:1] + tx.ravel()[None]) * h
        py = (o[:, 1:2] + ty.ravel()[None]) * h
        vals = (px * px + py * py) ** (-(2.0 + sigma) / 2.0)
        weights[pick] = (vals * wxy[None]).sum(axis=1) * h * h
        moment += float((px * px * vals * wxy[None]).sum()) * h * h
    return offs, 2.0 * weights, 2.0 * moment


@dataclass
class Differences:
    """Second differences at a batch of nodes, organised by quadrature region."""

    mid: np.ndarray     # (N, m)
    near: np.ndarray    # (N, n)
    far: np.ndarray     # (N, q)
    center: np.ndarray  # (N,)
    st: Stencil = None

    def scaled(self, mid, near, far):
        return Differences(self.mid * mid, self.near * near, self.far * far, self.center, self.st)


def differences(st, u, nodes):
    """Compute ``delta2 u(x, y)`` for all stencil offsets at integer lattice ``nodes`` (N, n)."""
    g = st.grid
    nodes = np.asarray(nodes, dtype=int).reshape(-1, g.n)
    x = nodes * g.h
    r = norm(x)
    bad = r + 1.0 > g.mid_radius + 1e-12
    if np.any(bad):
        i = int(np.argmax(bad))
        raise EvaluationError(
            f"far-field region would reach inside the unit ball; need mid_radius >= 1 + |x| "
            f"(mid_radius={g.mid_radius}, |x|={r[i]:.6g})", node=tuple(nodes[i]))
    reach = int(np.max(np.abs(nodes))) + g.K + 1 if len(nodes) else 0
    arr, off = u.padded(max(0, reach - g.M))
    c = nodes + off
    if g.n == 1:
        k = st.mid_offsets[:, 0]
        v = arr
        cc = c[:, 0]
        center = v[cc]
        mid = v[cc[:, None] + k[None]] + v[cc[:, None] - k[None]] - 2.0 * center[:, None]
        near = (v[cc + 1] + v[cc - 1] - 2.0 * center)[:, None]
    else:
        P = arr.shape[1]
        flat = arr.ravel()
        lin = c[:, 0] * P + c[:, 1]
        center = flat[lin]
        ko = st.mid_offsets[:, 0] * P + st.mid_offsets[:, 1]
        mid = flat[lin[:, None] + ko[None]] + flat[lin[:, None] - ko[None]] - 2.0 * center[:, None]
        near = np.stack([flat[lin + P] + flat[lin - P] - 2.0 * center,
                         flat[lin + 1] + flat[lin - 1] - 2.0 * center], axis=-1)
    ext = u.exterior
    far = (ext(x[:, None, :] + st.far_y[None]) + ext(x[:, None, :] - st.far_y[None])
           - 2.0 * center[:, None])
    return Differences(mid, near, far, center, st)
