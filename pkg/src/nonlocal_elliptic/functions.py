"""Registry of named closed-form functions on R^n and their linear combinations.

Interior data, exterior data and probe fields are all built from this
registry so that values anywhere in R^n (in particular beyond the
computational box) are exact rather than extrapolated.
"""

from dataclasses import dataclass, field

import numpy as np

from ._validation import UsageError, as_points, norm

COMPACT, BOUNDED, UNBOUNDED = "compact-support", "bounded", "unbounded"
_DECAY_RANK = {COMPACT: 0, BOUNDED: 1, UNBOUNDED: 2}


def smooth_step(t):
    """C-infinity step: 1 for t <= 0, 0 for t >= 1, strictly decreasing between."""
    t = np.asarray(t, dtype=float)
    a = np.clip(1.0 - t, 0.0, None)
    b = np.clip(t, 0.0, None)
    with np.errstate(divide="ignore"):
        ea = np.where(a > 0, np.exp(-1.0 / np.where(a > 0, a, 1.0)), 0.0)
        eb = np.where(b > 0, np.exp(-1.0 / np.where(b > 0, b, 1.0)), 0.0)
    return ea / (ea + eb)


def bump_profile(r):
    """exp(1 - 1/(1 - r^2)) on |r| < 1, zero outside; equals 1 at r = 0."""
    r = np.asarray(r, dtype=float)
    inside = np.abs(r) < 1.0
    rr = np.where(inside, r, 0.0)
    return np.where(inside, np.exp(1.0 - 1.0 / (1.0 - rr * rr)), 0.0)


def _center(params, n):
    c = params.get("center", 0.0)
    c = np.atleast_1d(np.asarray(c, dtype=float))
    if c.size == 1 and n > 1:
        c = np.full(n, c[0])
    if c.size != n:
        raise UsageError(f"center {params.get('center')!r} does not match dimension {n}")
    return c


def _f_zero(x, p):
    return np.zeros(x.shape[:-1])


def _f_constant(x, p):
    return np.full(x.shape[:-1], float(p.get("c", 1.0)))


def _f_affine(x, p):
    b = np.atleast_1d(np.asarray(p.get("b", 0.0), dtype=float))
    if b.size == 1:
        b = np.full(x.shape[-1], b[0])
    return float(p.get("c", 0.0)) + x @ b


def _f_quadratic(x, p):
    return float(p.get("coef", 1.0)) * np.sum((x - _center(p, x.shape[-1])) ** 2, axis=-1)


def _f_ball_profile(x, p):
    s = float(p.get("s", 0.5))
    base = np.clip(1.0 - np.sum(x * x, axis=-1), 0.0, None)
    return float(p.get("amp", 1.0)) * base ** s


def _f_bump(x, p):
    r = norm(x - _center(p, x.shape[-1])) / float(p.get("radius", 1.0))
    return float(p.get("amp", 1.0)) * bump_profile(r)


def _f_cone(x, p):
    v = float(p.get("slope", 1.0)) * norm(x - _center(p, x.shape[-1]))
    cap = p.get("cap")
    return v if cap is None else np.minimum(v, float(cap))


def _f_power(x, p):
    return float(p.get("amp", 1.0)) * norm(x - _center(p, x.shape[-1])) ** float(p.get("gamma", 0.5))


def _f_holder_bump(x, p):
    n = x.shape[-1]
    x0 = np.atleast_1d(np.asarray(p.get("x0", 0.0), dtype=float))
    if x0.size == 1 and n > 1:
        x0 = np.full(n, x0[0])
    beta = float(p.get("beta", 0.5))
    return (float(p.get("amp", 1.0)) * norm(x - x0) ** beta
            * bump_profile(norm(x - _center(p, n)) / float(p.get("radius", 2.0))))


def _f_truncated_quadratic(x, p):
    d = norm(x - _center(p, x.shape[-1]))
    w = float(p.get("width", 1.0))
    return float(p.get("amp", 1.0)) * d * d * smooth_step(2.0 * d / w - 1.0)


def _f_step(x, p):
    axis = int(p.get("axis", 0))
    return np.where(x[..., axis] < float(p.get("threshold", 0.0)),
                    float(p.get("lo", -1.0)), float(p.get("hi", 1.0)))


def _radius_of(p, key="radius", default=1.0):
    return float(np.max(np.abs(np.atleast_1d(p.get("center", 0.0))))) + float(p.get(key, default))


# name -> (callable, decay(params), sup bound(params) or None, support radius(params) or None)
REGISTRY = {
    "zero": (_f_zero, lambda p: COMPACT, lambda p: 0.0, lambda p: 0.0),
    "constant": (_f_constant, lambda p: COMPACT if float(p.get("c", 1.0)) == 0 else BOUNDED,
                 lambda p: abs(float(p.get("c", 1.0))), lambda p: 0.0),
    "affine": (_f_affine, lambda p: UNBOUNDED, None, None),
    "quadratic": (_f_quadratic, lambda p: UNBOUNDED, None, None),
    "ball_profile": (_f_ball_profile, lambda p: COMPACT, lambda p: abs(float(p.get("amp", 1.0))),
                     lambda p: 1.0),
    "bump": (_f_bump, lambda p: COMPACT, lambda p: abs(float(p.get("amp", 1.0))), _radius_of),
    "cone": (_f_cone, lambda p: UNBOUNDED if p.get("cap") is None else BOUNDED,
             lambda p: None if p.get("cap") is None else abs(float(p["cap"])), None),
    "power": (_f_power, lambda p: UNBOUNDED, None, None),
    "holder_bump": (_f_holder_bump, lambda p: COMPACT,
                    lambda p: abs(float(p.get("amp", 1.0))) * (
                        float(np.max(np.abs(np.atleast_1d(p.get("x0", 0.0)))))
                        + _radius_of(p, default=2.0)) ** float(p.get("beta", 0.5)),
                    lambda p: _radius_of(p, default=2.0)),
    "truncated_quadratic": (_f_truncated_quadratic, lambda p: COMPACT,
                            lambda p: abs(float(p.get("amp", 1.0))) * float(p.get("width", 1.0)) ** 2,
                            lambda p: _radius_of(p, key="width")),
    "step": (_f_step, lambda p: BOUNDED,
             lambda p: max(abs(float(p.get("lo", -1.0))), abs(float(p.get("hi", 1.0)))), None),
}


def _freeze(value):
    if isinstance(value, (list, tuple, np.ndarray)):
        return tuple(_freeze(v) for v in value)
    if isinstance(value, np.generic):
        return value.item()
    return value


def _thaw(value):
    if isinstance(value, tuple):
        return [_thaw(v) for v in value]
    return value


@dataclass(frozen=True)
class Term:
    """``coef * family((x - shift) / dilation)``."""

    family: str
    params: tuple = ()
    coef: float = 1.0
    shift: tuple = ()
    dilation: float = 1.0

    def __post_init__(self):
        if self.family not in REGISTRY:
            raise UsageError(f"unknown closed-form family {self.family!r}; "
                             f"known: {sorted(REGISTRY)}")
        if self.dilation <= 0:
            raise UsageError("dilation must be positive")

    @property
    def param_dict(self):
        return {k: _thaw(v) for k, v in self.params}

    def __call__(self, x):
        fn = REGISTRY[self.family][0]
        if self.shift:
            x = x - np.asarray(self.shift, dtype=float)
        if self.dilation != 1.0:
            x = x / self.dilation
        return self.coef * fn(x, self.param_dict)

    def to_dict(self):
        return {"family": self.family, "params": {k: _thaw(v) for k, v in self.params},
                "coef": self.coef, "shift": list(self.shift), "dilation": self.dilation}


class Expr:
    """Linear combination of registry terms; a total function on R^n."""

    __slots__ = ("terms",)

    def __init__(self, terms=()):
        self.terms = tuple(terms)

    @classmethod
    def named(cls, family, **params):
        items = tuple(sorted((k, _freeze(v)) for k, v in params.items()))
        return cls([Term(family, items)])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        for t in self.terms:
            out = out + t(x)
        return out

    def __add__(self, other):
        return Expr(self.terms + other.terms)

    def __sub__(self, other):
        return self + (-1.0) * other

    def __rmul__(self, scalar):
        return Expr(Term(t.family, t.params, t.coef * float(scalar), t.shift, t.dilation)
                    for t in self.terms)

    def __mul__(self, scalar):
        return self.__rmul__(scalar)

    def __neg__(self):
        return (-1.0) * self

    def __eq__(self, other):
        return isinstance(other, Expr) and self.terms == other.terms

    def __hash__(self):
        return hash(self.terms)

    def __repr__(self):
        return f"Expr({list(self.terms)!r})"

    def transformed(self, shift, dilation=1.0, amplitude=1.0, n=None):
        """Return x -> amplitude * self((x - shift) / dilation)."""
        shift = np.atleast_1d(np.asarray(shift, dtype=float))
        out = []
        for t in self.terms:
            old = np.asarray(t.shift, dtype=float) if t.shift else np.zeros_like(shift)
            new_shift = shift + dilation * old
            out.append(Term(t.family, t.params, t.coef * amplitude,
                            tuple(float(s) for s in new_shift), t.dilation * dilation))
        return Expr(out)

    def translated(self, t):
        """Return x -> self(x + t)."""
        return self.transformed(-np.atleast_1d(np.asarray(t, dtype=float)))

    @property
    def decay(self):
        worst = COMPACT
        for t in self.terms:
            d = REGISTRY[t.family][1](t.param_dict) if t.coef != 0 else COMPACT
            if _DECAY_RANK[d] > _DECAY_RANK[worst]:
                worst = d
        return worst

    def sup_bound(self):
        total = 0.0
        for t in self.terms:
            b = REGISTRY[t.family][2]
            v = None if b is None else b(t.param_dict)
            if v is None:
                return np.inf
            total += abs(t.coef) * v
        return total

    def support_radius(self):
        r = 0.0
        for t in self.terms:
            if t.coef == 0:
                continue
            fn = REGISTRY[t.family][3]
            v = None if fn is None else fn(t.param_dict)
            if v is None:
                return np.inf
            s = float(np.max(np.abs(t.shift))) * np.sqrt(len(t.shift)) if t.shift else 0.0
            r = max(r, s + t.dilation * v)
        return r

    def to_dict(self):
        return {"terms": [t.to_dict() for t in self.terms]}

    @classmethod
    def from_dict(cls, d):
        terms = []
        for td in d["terms"]:
            items = tuple(sorted((k, _freeze(v)) for k, v in td.get("params", {}).items()))
            terms.append(Term(td["family"], items, float(td.get("coef", 1.0)),
                              tuple(float(s) for s in td.get("shift", ())),
                              float(td.get("dilation", 1.0))))
        return cls(terms)


def as_expr(f):
    """Coerce a scalar, ``(name, params)`` pair, dict or Expr into an Expr."""
    if isinstance(f, Expr):
        return f
    if f is None:
        return Expr.named("zero")
    if isinstance(f, (int, float)) and not isinstance(f, bool):
        return Expr.named("constant", c=float(f))
    if isinstance(f, str):
        return Expr.named(f)
    if isinstance(f, dict):
        if "terms" in f:
            return Expr.from_dict(f)
        d = dict(f)
        name = d.pop("family", None) or d.pop("name", None)
        if name is None:
            raise UsageError(f"closed form needs a 'family' key: {f!r}")
        return Expr.named(name, **d.get("params", d))
    if isinstance(f, (tuple, list)) and len(f) == 2 and isinstance(f[0], str):
        return Expr.named(f[0], **f[1])
    raise UsageError(f"cannot interpret {f!r} as a closed-form function")


def evaluate(f, x, n):
    return as_expr(f)(as_points(x, n))
