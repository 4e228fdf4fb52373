"""Estimator-style wrappers: configure with constructor parameters, ``fit`` on
a problem, then ``predict`` at arbitrary points or read fitted attributes.
"""

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import UsageError, as_points
from .diagnostics import regularity_report
from .solvers import (BVPProblem, pseudo_time_march, solve_fixed_point, solve_linear_dirichlet,
                      solve_newton_rho, solve_policy_iteration)

_SCHEMES = {
    "direct": lambda p, e: solve_linear_dirichlet(p),
    "policy_iteration": lambda p, e: solve_policy_iteration(p, e.tol, e.max_iter),
    "newton": lambda p, e: solve_newton_rho(p, e.tol, e.max_iter),
    "pseudo_time": lambda p, e: pseudo_time_march(p, e.cfl, max(e.tol, 1e-12), 10 ** 6),
    "fixed_point": lambda p, e: solve_fixed_point(p, e.eps, e.theta, e.tol, e.max_iter),
}


def check_is_fitted(est, attr):
    if not hasattr(est, attr):
        raise UsageError(f"{type(est).__name__} is not fitted; call fit first")


class DirichletSolver(BaseEstimator):
    """Solve ``I(u) = f`` in B_1, ``u = g`` outside.

    Parameters
    ----------
    scheme : str
        One of ``direct``, ``policy_iteration``, ``newton``, ``pseudo_time``,
        ``fixed_point``.
    tol, max_iter, eps, theta, cfl : float
        Solver controls (``eps``, ``theta`` for ``fixed_point``; ``cfl`` for
        ``pseudo_time``).

    Attributes
    ----------
    report_ : SolveReport
    solution_ : Field
    """

    def __init__(self, scheme="direct", tol=1e-10, max_iter=200, eps=0.1, theta=0.5, cfl=0.9):
        self.scheme = scheme
        self.tol = tol
        self.max_iter = max_iter
        self.eps = eps
        self.theta = theta
        self.cfl = cfl

    def fit(self, problem, y=None):
        if not isinstance(problem, BVPProblem):
            raise UsageError("fit expects a BVPProblem")
        if self.scheme not in _SCHEMES:
            raise UsageError(f"unknown scheme {self.scheme!r}; known: {sorted(_SCHEMES)}")
        self.report_ = _SCHEMES[self.scheme](problem, self)
        self.solution_ = self.report_.solution
        self.problem_ = problem
        return self

    def predict(self, points):
        """Solution values at arbitrary points (interpolated inside the box)."""
        check_is_fitted(self, "solution_")
        return self.solution_.lookup(as_points(points, self.solution_.grid.n))

    def score(self, problem=None, y=None):
        """Negative sup-norm residual of the fitted solution."""
        check_is_fitted(self, "report_")
        return -float(self.report_.final_residual)


class RegularityEstimator(BaseEstimator):
    """Hölder exponents and boundary profile of a solved field.

    ``transform`` returns ``[alpha0, alpha1, boundary s, boundary C]``.
    """

    def __init__(self, beta=1.0, center=0.0, radius=0.5, scales=None):
        self.beta = beta
        self.center = center
        self.radius = radius
        self.scales = scales

    def fit(self, solution, problem=None):
        cfg = {"beta": self.beta, "center": self.center, "radius": self.radius,
               "allow_unconverged": True}
        if self.scales is not None:
            cfg["scales"] = list(self.scales)
        self.report_ = regularity_report(problem, solution, cfg)
        self.alpha0_ = self.report_.alpha0.exponent
        self.alpha1_ = self.report_.alpha1.exponent
        return self

    def transform(self, solution=None):
        check_is_fitted(self, "report_")
        r = self.report_
        return np.array([r.alpha0.exponent, r.alpha1.exponent, r.boundary.s, r.boundary.C])

    def fit_transform(self, solution, problem=None):
        return self.fit(solution, problem).transform()
