"""Integro-differential elliptic operators: quadrature, Dirichlet solvers and
regularity diagnostics."""

__version__ = "0.1.0"

from ._validation import (EllipticityError, EvaluationError, KernelSingularityError, ResourceError,
                          SolverError, UsageError)
from .diagnostics import (a_beta_seminorm, difference_quotient, holder_fit, quotient_equation_check,
                          regularity_report, residual, sandwich_check, weighted_boundary_profile)
from .fields import (ExteriorData, Field, Grid, delta2, oscillation, restrict_translate_scale, sample,
                     sample_global, weighted_l1_norm)
from .functions import Expr
from .kernels import (CutoffMollifier, KernelSpec, WeightSpec, check_ellipticity_bounds, cutoff_eval,
                      kernel_eval, mollifier_eval, weight_eval)
from .operators import (ExtremalOperator, FrozenOperator, IsaacsOperator, LinearOperator,
                        RegularizedOperator, RescaledOperator, RhoOperator, RhoSpec, eval_extremal,
                        eval_isaacs, eval_linear, eval_rho, extremal_pair, fractional_laplacian, freeze,
                        linearize_rho, operator_distance, regularize, rescale, split_F)
from .solvers import (BVPProblem, SolveReport, assemble_fractional_laplacian, pseudo_time_march,
                      solve_fixed_point, solve_linear_dirichlet, solve_newton_rho, solve_policy_iteration)
