"""B-spline basis with uniform interior knots on [0, 1].

The basis is the clamped (open) B-spline family of order ``m`` (degree
``m - 1``) with ``k_n - 1`` uniform interior knots at l/k_n, so the basis
dimension is ``k_n + m - 1``.  Evaluation follows the usual de Boor
conventions: right-continuous at interior knots, left limit at t = 1.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

from .errors import DomainError, InvalidArgumentError

__all__ = ["KnotVector", "DesignMatrix", "make_knots", "eval_basis", "basis_matrix",
           "design_matrix"]


@dataclass(frozen=True)
class KnotVector:
    """Clamped knot sequence on [0, 1].

    Attributes
    ----------
    order : int
        Spline order m (polynomial degree m - 1).
    segments : int
        Number of knot intervals k_n; there are k_n - 1 interior knots.
    knots : ndarray
        Full non-decreasing sequence of length ``k_n - 1 + 2 m`` with the
        boundary knots 0 and 1 each repeated m times.
    """

    order: int
    segments: int
    knots: np.ndarray

    @property
    def dimension(self) -> int:
        """Number of basis functions, k_n + m - 1."""
        return self.segments + self.order - 1

    @property
    def meshwidth(self) -> float:
        return 1.0 / self.segments

    @property
    def interior_knots(self) -> np.ndarray:
        return self.knots[self.order:-self.order] if self.segments > 1 else np.empty(0)

    @property
    def breakpoints(self) -> np.ndarray:
        """Distinct panel endpoints 0, 1/k_n, ..., 1."""
        return np.linspace(0.0, 1.0, self.segments + 1)

    def _bspline(self, deriv_order: int = 0) -> BSpline:
        base = BSpline(self.knots, np.eye(self.dimension), self.order - 1,
                       extrapolate=False)
        return base if deriv_order == 0 else base.derivative(deriv_order)


def make_knots(k_n: int, m: int) -> KnotVector:
    """Build the clamped knot sequence with k_n - 1 uniform interior knots.

    Parameters
    ----------
    k_n : int
        Number of knot intervals (>= 1); the meshwidth is 1/k_n.
    m : int
        Spline order (>= 1).
    """
    if not (isinstance(k_n, (int, np.integer)) and k_n >= 1):
        raise InvalidArgumentError(f"k_n must be a positive integer, got {k_n!r}")
    if not (isinstance(m, (int, np.integer)) and m >= 1):
        raise InvalidArgumentError(f"order m must be a positive integer, got {m!r}")
    interior = np.arange(1, k_n) / k_n
    knots = np.concatenate([np.zeros(m), interior, np.ones(m)])
    return KnotVector(order=int(m), segments=int(k_n), knots=knots)


def _check_domain(t: np.ndarray) -> None:
    if t.size and (t.min() < 0.0 or t.max() > 1.0):
        bad = t[(t < 0.0) | (t > 1.0)][0]
        raise DomainError(f"evaluation point {bad} outside [0, 1]")


def basis_matrix(kv: KnotVector, t, deriv_order: int = 0) -> np.ndarray:
    """Evaluate all basis functions (or a derivative) at points ``t``.

    Returns an array of shape ``(len(t), kv.dimension)`` whose row i holds
    N_j^(r)(t_i).  Derivative order must satisfy r < m.
    """
    if deriv_order < 0 or deriv_order >= kv.order:
        raise InvalidArgumentError(
            f"derivative order {deriv_order} must satisfy 0 <= r < m = {kv.order}")
    t = np.atleast_1d(np.asarray(t, dtype=float))
    _check_domain(t)
    out = kv._bspline(deriv_order)(t)
    # extrapolate=False yields NaN only outside [0, 1], which we have excluded
    return np.asarray(out)


def eval_basis(kv: KnotVector, t: float, deriv_order: int = 0) -> np.ndarray:
    """Basis (or derivative) values at a single point, shape ``(dimension,)``."""
    return basis_matrix(kv, [t], deriv_order)[0]


@dataclass(frozen=True)
class DesignMatrix:
    """Spline design matrix N_j(x_i) for observed design points x."""

    basis: KnotVector
    x: np.ndarray
    values: np.ndarray

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def dimension(self) -> int:
        return self.values.shape[1]

    def gram(self) -> np.ndarray:
        """The normal-equations matrix XtX."""
        return self.values.T @ self.values


def _cdf_imbalance(x: np.ndarray) -> float:
    """sup_t |Q_n(t) - t| for the empirical CDF Q_n of x."""
    n = len(x)
    ranks = np.arange(1, n + 1) / n
    return max(np.abs(ranks - x).max(), np.abs(ranks - 1.0 / n - x).max())


def design_matrix(kv: KnotVector, x) -> DesignMatrix:
    """Design matrix at ascending design points x in [0, 1].

    Raises for unsorted or out-of-range x.  If the empirical distribution
    of x deviates from uniform by more than half a meshwidth, a warning is
    issued (the asymptotic theory assumes near-uniform designs) but the
    matrix is still returned.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise InvalidArgumentError("design points must be a nonempty 1-d array")
    if x.min() < 0.0 or x.max() > 1.0:
        raise InvalidArgumentError("design points must lie in [0, 1]")
    if np.any(np.diff(x) < 0):
        raise InvalidArgumentError("design points must be ascending")
    imbalance = _cdf_imbalance(x)
    if imbalance > 0.5 * kv.meshwidth:
        warnings.warn(
            f"design imbalance sup|Q_n(t)-t| = {imbalance:.4f} exceeds half a "
            f"meshwidth ({0.5 * kv.meshwidth:.4f}); interior intervals may be "
            "data-starved", stacklevel=2)
    return DesignMatrix(basis=kv, x=x, values=basis_matrix(kv, x, 0))
