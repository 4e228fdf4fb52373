"""Exceptions and argument checks shared across the package."""

import numbers

import numpy as np


class UsageError(ValueError):
    """Raised when a caller passes arguments outside an operation's domain."""


class EllipticityError(ValueError):
    """Raised when a kernel coefficient leaves the band [lambda, Lambda]."""


class KernelSingularityError(UsageError):
    pass


class EvaluationError(RuntimeError):
    """Quadrature could not be carried out at a node (e.g. lattice too small)."""

    def __init__(self, message, node=None):
        super().__init__(message if node is None else f"{message} (node {node})")
        self.node = node


class ResourceError(RuntimeError):
    pass


class SolverError(RuntimeError):
    pass


def check_scalar(value, name, *, low=None, high=None, low_inclusive=True,
                 high_inclusive=True):
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise UsageError(f"{name} must be a real number, got {value!r}")
    value = float(value)
    if not np.isfinite(value):
        raise UsageError(f"{name} must be finite, got {value}")
    if low is not None:
        bad = value < low if low_inclusive else value <= low
        if bad:
            op = ">=" if low_inclusive else ">"
            raise UsageError(f"{name} must be {op} {low}, got {value}")
    if high is not None:
        bad = value > high if high_inclusive else value >= high
        if bad:
            op = "<=" if high_inclusive else "<"
            raise UsageError(f"{name} must be {op} {high}, got {value}")
    return value


def check_dimension(n):
    if n not in (1, 2):
        raise UsageError(f"dimension must be 1 or 2, got {n!r}")
    return int(n)


def check_order(sigma, sigma0=0.0):
    """Validate sigma0 < sigma < 2 with sigma0 in [0, 2)."""
    sigma0 = check_scalar(sigma0, "sigma0", low=0.0, high=2.0, high_inclusive=False)
    sigma = check_scalar(sigma, "sigma", low=sigma0, high=2.0,
                         low_inclusive=False, high_inclusive=False)
    return sigma, sigma0


def check_ellipticity_constants(lam, Lam):
    lam = check_scalar(lam, "lam", low=0.0, low_inclusive=False)
    Lam = check_scalar(Lam, "Lam", low=0.0, low_inclusive=False)
    if lam > Lam:
        raise UsageError(f"ellipticity constants need lam <= Lam, got lam={lam}, Lam={Lam}")
    return lam, Lam


def as_points(x, n):
    """Return ``x`` as a float array of shape (..., n)."""
    x = np.asarray(x, dtype=float)
    if n == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    if x.shape[-1] != n:
        raise UsageError(f"expected points with trailing dimension {n}, got shape {x.shape}")
    return x


def norm(x):
    """Euclidean norm over the trailing axis."""
    return np.sqrt(np.sum(np.square(x), axis=-1))
