"""Two-step (gradient-matching) parameter inference for ODE models.

Fit noisy observations of a dynamical system with a B-spline regression,
then project the fitted curve onto the ODE parameter by minimizing a
weighted defect integral.  The package provides the conjugate Gaussian
machinery for the Bayesian route, a frequentist two-step estimator with a
residual bootstrap, normal (Bernstein-von Mises style) approximations to
the parameter posterior, and a seeded Monte-Carlo study harness.
"""

from .errors import (DegenerateModelError, DomainError, GradmatchError,
                     IllPosedDesignError, InvalidArgumentError, NumericError,
                     OptimizationFailure, ParseError)
from .models import (OdeModel, TrueFunction, WeightFn, builtin_model,
                     default_weight, misspecified_truth, transform_model)
from .posterior import (CoeffPosterior, MatrixNormalPosterior, Sigma2Posterior,
                        coeff_posterior, matrix_normal_posterior,
                        ols_coefficients, rng_stream, sample_coeffs,
                        sample_hierarchical, sigma2_posterior)
from .projection import (PsiConfig, PsiResult, QuadratureRule, SplineFunction,
                         defect, defect_gradient, knot_quadrature,
                         panel_quadrature, project_draws, psi)
from .splines import (DesignMatrix, KnotVector, basis_matrix, design_matrix,
                      eval_basis, make_knots)

__version__ = "0.1.0"
