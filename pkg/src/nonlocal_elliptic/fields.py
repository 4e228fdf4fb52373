"""Lattice geometry, sampled fields with closed-form exterior data, and the
elementary functionals applied to them."""

import json
import struct
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import integrate

from ._validation import UsageError, as_points, check_dimension, check_scalar, norm
from .functions import BOUNDED, COMPACT, UNBOUNDED, Expr, as_expr

_TOL = 1e-9


def _integer_ratio(a, h, what):
    k = a / h
    r = round(k)
    if abs(k - r) > _TOL * max(1.0, abs(k)):
        raise UsageError(f"spacing h={h} does not divide {what}={a}")
    return int(r)


@dataclass(frozen=True)
class Grid:
    """Uniform lattice ``h Z^n`` restricted to the box ``[-R_out, R_out]^n``.

    ``mid_radius`` is the largest offset handled by lattice quadrature; beyond
    it operator tails use the exterior closed form. It defaults to
    ``R_out - 1`` so that ``x +- y`` stays on the lattice for every ``x`` in
    the unit ball.
    """

    n: int = 1
    h: float = 1.0 / 64
    R_out: float = 4.0
    mid_radius: float = None

    def __post_init__(self):
        check_dimension(self.n)
        h = check_scalar(self.h, "h", low=0.0, low_inclusive=False)
        R = check_scalar(self.R_out, "R_out", low=2.0)
        _integer_ratio(R, h, "R_out")
        if _integer_ratio(1.0, h, "1") < 2:
            raise UsageError("need at least 3 interior nodes per axis (h <= 1/2)")
        if self.mid_radius is None:
            object.__setattr__(self, "mid_radius", R - 1.0)
        mid = check_scalar(self.mid_radius, "mid_radius", low=h)
        _integer_ratio(mid, h, "mid_radius")
        if mid > R - 1.0 + _TOL:
            raise UsageError(f"mid_radius={mid} must be <= R_out - 1 = {R - 1.0}")

    @property
    def M(self):
        """Nodes per half-axis."""
        return int(round(self.R_out / self.h))

    @property
    def K(self):
        """Lattice offsets per half-axis covered by the mid-field rule."""
        return int(round(self.mid_radius / self.h))

    @property
    def shape(self):
        return (2 * self.M + 1,) * self.n

    @property
    def axis(self):
        return np.arange(-self.M, self.M + 1) * self.h

    @cached_property
    def points(self):
        """Coordinates of all nodes, shape ``shape + (n,)``."""
        axes = np.meshgrid(*([self.axis] * self.n), indexing="ij")
        return np.stack(axes, axis=-1)

    @cached_property
    def interior_index(self):
        """Integer lattice indices (relative to the origin) of nodes with |x| < 1."""
        m = int(round(1.0 / self.h))
        rng = np.arange(-m, m + 1)
        idx = np.stack(np.meshgrid(*([rng] * self.n), indexing="ij"), axis=-1).reshape(-1, self.n)
        keep = np.sum(idx.astype(float) ** 2, axis=1) * self.h ** 2 < 1.0 - _TOL
        return idx[keep]

    @cached_property
    def interior_mask(self):
        mask = np.zeros(self.shape, dtype=bool)
        mask[tuple((self.interior_index + self.M).T)] = True
        return mask

    @property
    def n_interior(self):
        return len(self.interior_index)

    def index_of(self, x):
        """Lattice index of point(s) ``x``; raises if not on the lattice."""
        x = as_points(x, self.n)
        k = x / self.h
        r = np.round(k)
        if np.any(np.abs(k - r) > 1e-7):
            raise UsageError(f"point {x} is not a lattice node for h={self.h}")
        return r.astype(int)

    def node_points(self, idx):
        return np.asarray(idx, dtype=float) * self.h

    def to_dict(self):
        return {"n": self.n, "h": self.h, "R_out": self.R_out, "mid_radius": self.mid_radius}


@dataclass(frozen=True)
class ExteriorData:
    """Closed-form data ``g`` used outside the unit ball and beyond the box."""

    expr: Expr
    decay: str = None

    def __post_init__(self):
        expr = as_expr(self.expr)
        object.__setattr__(self, "expr", expr)
        natural = expr.decay
        if self.decay is None:
            object.__setattr__(self, "decay", natural)
        elif self.decay not in (COMPACT, BOUNDED, UNBOUNDED):
            raise UsageError(f"unknown decay tag {self.decay!r}")
        else:
            rank = {COMPACT: 0, BOUNDED: 1, UNBOUNDED: 2}
            if rank[self.decay] < rank[natural]:
                raise UsageError(f"exterior declared {self.decay!r} but its closed form is {natural!r}")

    @classmethod
    def named(cls, family, decay=None, **params):
        return cls(Expr.named(family, **params), decay)

    @classmethod
    def zero(cls):
        return cls(Expr.named("zero"))

    def __call__(self, x):
        return self.expr(x)

    def __add__(self, other):
        return ExteriorData(self.expr + other.expr)

    def scaled(self, c):
        return ExteriorData(float(c) * self.expr)

    def to_dict(self):
        return {"decay": self.decay, **self.expr.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(Expr.from_dict(d), d.get("decay"))


def _as_exterior(g):
    return g if isinstance(g, ExteriorData) else ExteriorData(as_expr(g))


class Field:
    """Values on every lattice node plus the exterior closed form.

    Lookups inside the box interpolate lattice values (piecewise quadratic,
    tensorised in 2D); lookups beyond the box use the exterior closed form.
    """

    def __init__(self, grid, values, exterior=None):
        values = np.array(values, dtype=float)
        if values.shape != grid.shape:
            raise UsageError(f"values shape {values.shape} does not match grid {grid.shape}")
        if not np.all(np.isfinite(values)):
            raise UsageError("field values must be finite")
        values.setflags(write=False)
        self.grid = grid
        self.values = values
        self.exterior = ExteriorData.zero() if exterior is None else _as_exterior(exterior)
        if self.exterior.decay == COMPACT and self.exterior.expr.support_radius() > grid.R_out + _TOL:
            raise UsageError("compactly supported exterior must vanish beyond R_out")
        self._padded = {}

    def __repr__(self):
        return f"Field(n={self.grid.n}, h={self.grid.h}, R_out={self.grid.R_out})"

    def _combine(self, other, op):
        if isinstance(other, Field):
            if other.grid != self.grid:
                raise UsageError("fields live on different grids")
            ext = ExteriorData(op(self.exterior.expr, other.exterior.expr))
            return Field(self.grid, op(self.values, other.values), ext)
        raise TypeError(f"cannot combine Field with {type(other).__name__}")

    def __add__(self, other):
        return self._combine(other, lambda a, b: a + b)

    def __sub__(self, other):
        return self._combine(other, lambda a, b: a - b)

    def __mul__(self, c):
        c = float(c)
        return Field(self.grid, c * self.values, self.exterior.scaled(c))

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    @property
    def interior_values(self):
        return self.values[tuple((self.grid.interior_index + self.grid.M).T)]

    def with_interior(self, interior):
        """Copy with the values at interior nodes replaced."""
        v = np.array(self.values)
        v[tuple((self.grid.interior_index + self.grid.M).T)] = interior
        return Field(self.grid, v, self.exterior)

    def at_index(self, idx):
        """Values at integer lattice indices (any distance; beyond the box -> exterior)."""
        idx = np.asarray(idx, dtype=int)
        if self.grid.n == 1 and (idx.ndim == 0 or idx.shape[-1] != 1):
            idx = idx[..., None]
        pad = int(max(0, np.max(np.abs(idx)) - self.grid.M)) if idx.size else 0
        arr, off = self.padded(pad)
        return arr[tuple(np.moveaxis(idx + off, -1, 0))]

    def padded(self, pad):
        """Value array extended by ``pad`` nodes per side using the exterior closed form."""
        pad = int(pad)
        if pad <= 0:
            return self.values, self.grid.M
        hit = next((p for p in sorted(self._padded) if p >= pad), None)
        if hit is not None:
            return self._padded[hit], self.grid.M + hit
        g, M = self.grid, self.grid.M
        axis = np.arange(-M - pad, M + pad + 1) * g.h
        pts = np.stack(np.meshgrid(*([axis] * g.n), indexing="ij"), axis=-1)
        arr = self.exterior(pts)
        arr[tuple(slice(pad, pad + 2 * M + 1) for _ in range(g.n))] = self.values
        arr.setflags(write=False)
        self._padded[pad] = arr
        return arr, M + pad

    def lookup(self, x):
        """Total evaluation at arbitrary points."""
        g = self.grid
        x = as_points(x, g.n)
        flat = x.reshape(-1, g.n)
        out = np.empty(len(flat))
        inside = np.all(np.abs(flat) <= g.R_out + 1e-12, axis=1)
        out[~inside] = self.exterior(flat[~inside])
        if np.any(inside):
            out[inside] = self._interpolate(flat[inside])
        out = out.reshape(x.shape[:-1])
        return out.item() if out.ndim == 0 else out

    def _interpolate(self, pts):
        g = self.grid
        k = pts / g.h
        near = np.round(k)
        on = np.all(np.abs(k - near) < 1e-9, axis=1)
        res = np.empty(len(pts))
        if np.any(on):
            res[on] = self.values[tuple((near[on].astype(int) + g.M).T)]
        off = ~on
        if np.any(off):
            kk = k[off]
            c = np.clip(np.round(kk), -g.M + 1, g.M - 1).astype(int)
            t = kk - c
            # three-point Lagrange weights at offsets -1, 0, 1
            w = np.stack([0.5 * t * (t - 1), 1 - t * t, 0.5 * t * (t + 1)], axis=-1)
            acc = np.zeros(len(kk))
            for combo in np.ndindex(*([3] * g.n)):
                ww = np.ones(len(kk))
                idx = []
                for d, o in enumerate(combo):
                    ww = ww * w[:, d, o]
                    idx.append(c[:, d] + (o - 1) + g.M)
                acc += ww * self.values[tuple(idx)]
            res[off] = acc
        return res

    # ------------------------------------------------------------------ io
    def header(self):
        return {"n": self.grid.n, "h": self.grid.h, "R_out": self.grid.R_out,
                "mid_radius": self.grid.mid_radius, "exterior": self.exterior.to_dict()}

    def to_json(self):
        return json.dumps({"header": self.header(), "values": self.values.ravel().tolist()})

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls._from_header(d["header"], np.asarray(d["values"], dtype=float))

    def to_bytes(self):
        head = json.dumps(self.header()).encode()
        return struct.pack("<I", len(head)) + head + self.values.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob):
        (k,) = struct.unpack("<I", blob[:4])
        head = json.loads(blob[4:4 + k].decode())
        return cls._from_header(head, np.frombuffer(blob[4 + k:], dtype="<f8"))

    @classmethod
    def _from_header(cls, head, flat):
        grid = Grid(head["n"], head["h"], head["R_out"], head.get("mid_radius"))
        return cls(grid, flat.reshape(grid.shape), ExteriorData.from_dict(head["exterior"]))

    def save(self, path):
        path = str(path)
        if path.endswith(".json"):
            with open(path, "w") as fh:
                fh.write(self.to_json())
        else:
            with open(path, "wb") as fh:
                fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        path = str(path)
        if path.endswith(".json"):
            with open(path) as fh:
                return cls.from_json(fh.read())
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def sample(grid, f, exterior=None):
    """Sample closed form ``f`` inside the unit ball and ``exterior`` elsewhere."""
    f = as_expr(f)
    ext = ExteriorData.zero() if exterior is None else _as_exterior(exterior)
    pts = grid.points
    inside = np.sum(pts * pts, axis=-1) < 1.0 - _TOL
    values = np.where(inside, f(pts), ext(pts))
    return Field(grid, values, ext)


def sample_global(grid, f, decay=None):
    """Field equal to closed form ``f`` everywhere (f doubles as exterior data)."""
    return sample(grid, f, ExteriorData(as_expr(f), decay))


def delta2(u, x, y):
    """Symmetric second difference ``u(x+y) - 2u(x) + u(x-y)``."""
    x = as_points(x, u.grid.n)
    y = as_points(y, u.grid.n)
    # sum the two outer values first so the result is bitwise symmetric in y
    return (u.lookup(x + y) + u.lookup(x - y)) - 2.0 * u.lookup(x)


@dataclass(frozen=True)
class WeightedNorm:
    """``value`` includes ``tail``; ``tail_is_bound`` marks an analytic upper bound."""

    value: float
    tail: float
    tail_is_bound: bool

    def __float__(self):
        return float(self.value)


def _composite(vals, h):
    """Simpson's rule when the interval count is even, trapezoid otherwise."""
    m = len(vals) - 1
    if m <= 0:
        return 0.0
    if m % 2 == 0:
        w = np.ones(m + 1)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        return float(h / 3.0 * np.dot(w, vals))
    return float(h * (np.sum(vals) - 0.5 * (vals[0] + vals[-1])))


def _inner_limit(vals):
    """Quadratic extrapolation of the value one step beyond the last entry."""
    if len(vals) >= 3:
        return 3 * vals[-1] - 3 * vals[-2] + vals[-3]
    return vals[-1]


def weighted_l1_norm(u, w):
    """Approximate ``int |u| (1+|x|)^(-n-sigma0) dx`` over R^n."""
    g = u.grid
    if w.n != g.n:
        raise UsageError("weight and field dimensions differ")
    R = g.R_out
    if g.n == 1:
        x = g.axis
        om = (1.0 + np.abs(x)) ** (-1.0 - w.sigma0)
        v = u.values
        m, M = int(round(1.0 / g.h)), g.M
        total = 0.0
        # [-R, -1] and [1, R] from lattice values, the exterior side of the boundary
        total += _composite(np.abs(v[: M - m + 1]) * om[: M - m + 1], g.h)
        total += _composite(np.abs(v[M + m:]) * om[M + m:], g.h)
        # [-1, 0] and [0, 1] from interior values with the boundary limit extrapolated
        right = list(v[M:M + m])
        left = list(v[M - m + 1:M + 1][::-1])
        for side, sgn in ((right, 1), (left, -1)):
            vals = np.array(side + [_inner_limit(side)])
            xs = sgn * np.arange(len(vals)) * g.h
            total += _composite(np.abs(vals) * (1.0 + np.abs(xs)) ** (-1.0 - w.sigma0), g.h)
    else:
        pts = g.points
        om = (1.0 + norm(pts)) ** (-2.0 - w.sigma0)
        total = float(np.sum(np.abs(u.values) * om) * g.h ** 2)
    tail, is_bound = _tail_integral(u.exterior, w, R)
    return WeightedNorm(total + tail, tail, is_bound)


def _tail_integral(ext, w, R):
    if ext.decay == COMPACT and ext.expr.support_radius() <= R + _TOL:
        return 0.0, False
    if ext.decay in (COMPACT, BOUNDED):
        return float(ext.expr.sup_bound() * w.tail_mass(R)), True
    n, s = w.n, w.sigma0
    if n == 1:
        f = lambda r: (abs(ext(np.array([r]))) + abs(ext(np.array([-r])))) * (1 + r) ** (-1 - s)
    else:
        th = 2 * np.pi * (np.arange(64) + 0.5) / 64
        dirs = np.stack([np.cos(th), np.sin(th)], axis=-1)
        f = lambda r: np.mean(np.abs(ext(r * dirs))) * 2 * np.pi * r * (1 + r) ** (-2 - s)
    # growth faster than the weight decays (e.g. a cone with sigma0 <= 1) is not integrable
    if f(1e8 * (1 + R)) * 1e8 * (1 + R) > f(1e4 * (1 + R)) * 1e4 * (1 + R) * (1 - 1e-9):
        return float("inf"), False
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, _ = integrate.quad(f, R, np.inf, limit=200)
        except integrate.IntegrationWarning:
            return float("inf"), False
    return float(val), False


def oscillation(u, center=0.0, radius=1.0):
    """max - min of ``u`` over lattice nodes in the open ball ``B_radius(center)``."""
    g = u.grid
    c = as_points(center, g.n).reshape(g.n)
    mask = norm(g.points - c) < radius - _TOL
    if not np.any(mask):
        raise UsageError(f"region B_{radius}({c}) contains no lattice node")
    vals = u.values[mask]
    return float(vals.max() - vals.min())


def restrict_translate_scale(u, shift=0.0, dilation=1.0, amplitude=1.0, grid=None):
    """Field ``x -> amplitude * u((x - shift) / dilation)`` on ``grid`` (default: same grid)."""
    dilation = check_scalar(dilation, "dilation", low=0.0, low_inclusive=False)
    amplitude = check_scalar(amplitude, "amplitude")
    if amplitude == 0:
        raise UsageError("amplitude must be nonzero")
    target = u.grid if grid is None else grid
    shift = as_points(shift, target.n).reshape(target.n)
    pts = (target.points - shift) / dilation
    values = amplitude * u.lookup(pts)
    ext = ExteriorData(u.exterior.expr.transformed(shift, dilation, amplitude))
    return Field(target, values, ext)
