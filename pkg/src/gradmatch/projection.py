"""Defect functional and projection of fitted curves onto the parameter box.

The defect of a curve f at a candidate parameter eta is the weighted L2
norm of f'(t) - F(t, f(t), eta) over [0, 1]; the projection selects the
minimizing eta over the compact parameter box.  Integrals are discretized
by composite Gauss-Legendre panels aligned with the spline knots, so the
piecewise-polynomial integrands of spline inputs are captured exactly.

For vector fields affine in theta the squared defect is a convex quadratic
and the projection reduces to a linear solve; that route is used
automatically (and batched over many curves) whenever a model declares
``linear_in_theta``.  The general route is a multistart box-constrained
quasi-Newton descent on the squared defect with its analytic gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.optimize import minimize
from scipy.stats import qmc

from .errors import InvalidArgumentError, NumericError, OptimizationFailure
from .models import OdeModel, WeightFn, default_weight
from .splines import KnotVector, basis_matrix

__all__ = ["SplineFunction", "QuadratureRule", "PsiConfig", "PsiResult",
           "panel_quadrature", "knot_quadrature", "defect", "defect_gradient",
           "psi", "project_draws", "ProjectionBatch"]


@dataclass(frozen=True)
class SplineFunction:
    """A spline curve B^T N(t) with coefficient matrix of shape (dimension, d)."""

    basis: KnotVector
    coeffs: np.ndarray

    @property
    def d(self) -> int:
        return self.coeffs.shape[1]

    def value(self, t) -> np.ndarray:
        return basis_matrix(self.basis, t, 0) @ self.coeffs

    def deriv(self, t) -> np.ndarray:
        return basis_matrix(self.basis, t, 1) @ self.coeffs


@dataclass(frozen=True)
class QuadratureRule:
    """Composite Gauss-Legendre rule over the given panel breakpoints."""

    breakpoints: np.ndarray
    order: int
    nodes: np.ndarray
    weights: np.ndarray

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Integrate sampled values; the leading axis must index the nodes."""
        return np.tensordot(self.weights, values, axes=(0, 0))


def panel_quadrature(breakpoints, order: int = 10) -> QuadratureRule:
    """Gauss-Legendre rule of the given order on each panel."""
    breakpoints = np.asarray(breakpoints, dtype=float)
    if order < 1:
        raise InvalidArgumentError(f"quadrature order must be >= 1, got {order}")
    if breakpoints.ndim != 1 or len(breakpoints) < 2 or np.any(np.diff(breakpoints) <= 0):
        raise InvalidArgumentError("breakpoints must be strictly ascending")
    xg, wg = leggauss(order)
    a = breakpoints[:-1][:, None]
    b = breakpoints[1:][:, None]
    nodes = (0.5 * (a + b) + 0.5 * (b - a) * xg[None, :]).ravel()
    weights = (0.5 * (b - a) * wg[None, :]).ravel()
    return QuadratureRule(breakpoints=breakpoints, order=order,
                          nodes=nodes, weights=weights)


def knot_quadrature(kv: KnotVector, order: int = 10) -> QuadratureRule:
    """Quadrature with panels aligned to the knot intervals of ``kv``."""
    return panel_quadrature(kv.breakpoints, order)


def _default_quadrature(f, order: int = 10) -> QuadratureRule:
    if isinstance(f, SplineFunction):
        return knot_quadrature(f.basis, order)
    return panel_quadrature(np.linspace(0.0, 1.0, 65), order)


def _rhs_checked(model: OdeModel, t, fv, eta):
    out = model.rhs(t, fv, eta)
    if not np.all(np.isfinite(out)):
        i = int(np.argmax(~np.isfinite(out).all(axis=tuple(range(1, out.ndim)))))
        raise NumericError(
            f"vector field returned non-finite values at t={t[i]:.6g}, "
            f"f={fv[i]}, eta={np.asarray(eta)}")
    return out


class _CurveAtNodes:
    """Curve and weight samples at the quadrature nodes, computed once."""

    def __init__(self, f, weight: WeightFn, quad: QuadratureRule):
        self.t = quad.nodes
        self.value = np.asarray(f.value(quad.nodes), dtype=float)
        self.deriv = np.asarray(f.deriv(quad.nodes), dtype=float)
        if self.value.ndim == 1:
            self.value = self.value[:, None]
            self.deriv = self.deriv[:, None]
        # combined quadrature-times-weight factor for every node
        self.u = quad.weights * np.asarray(weight.fn(quad.nodes), dtype=float)

    def squared_defect(self, model: OdeModel, eta: np.ndarray) -> float:
        resid = self.deriv - _rhs_checked(model, self.t, self.value, eta)
        return float(self.u @ np.sum(resid * resid, axis=1))

    def squared_defect_gradient(self, model: OdeModel, eta: np.ndarray) -> np.ndarray:
        resid = self.deriv - _rhs_checked(model, self.t, self.value, eta)
        jac = model.theta_jac(self.t, self.value, eta)
        return -2.0 * np.einsum("q,qdk,qd->k", self.u, jac, resid)


def _check_eta(model: OdeModel, eta) -> np.ndarray:
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    if eta.shape != (model.p,):
        raise InvalidArgumentError(f"eta must have shape ({model.p},), got {eta.shape}")
    if not model.contains(eta, atol=1e-9):
        raise InvalidArgumentError(f"eta {eta} outside the parameter box")
    return eta


def defect(f, model: OdeModel, eta, weight: Optional[WeightFn] = None,
           quad: Optional[QuadratureRule] = None) -> float:
    """The defect R_f(eta): weighted L2 norm of f' - F(., f, eta)."""
    eta = _check_eta(model, eta)
    weight = weight or default_weight()
    quad = quad or _default_quadrature(f)
    return float(np.sqrt(max(_CurveAtNodes(f, weight, quad)
                             .squared_defect(model, eta), 0.0)))


def defect_gradient(f, model: OdeModel, eta, weight: Optional[WeightFn] = None,
                    quad: Optional[QuadratureRule] = None) -> np.ndarray:
    """Gradient of the squared defect R_f^2 with respect to eta."""
    eta = _check_eta(model, eta)
    weight = weight or default_weight()
    quad = quad or _default_quadrature(f)
    return _CurveAtNodes(f, weight, quad).squared_defect_gradient(model, eta)


@dataclass(frozen=True)
class PsiConfig:
    """Settings for the projection search."""

    starts: int = 8
    placement: str = "sobol"        # "sobol" or "grid"
    start_seed: int = 0
    grad_tol: float = 1e-9
    step_tol: float = 1e-14
    max_iter: int = 500
    quad_order: int = 10
    use_linear_solver: str = "auto"  # "auto" or "never"

    def __post_init__(self):
        if self.starts < 1:
            raise InvalidArgumentError("starts must be >= 1")
        if self.grad_tol <= 0.0 or self.step_tol <= 0.0:
            raise InvalidArgumentError("tolerances must be positive")
        if self.placement not in ("sobol", "grid"):
            raise InvalidArgumentError(f"unknown placement {self.placement!r}")
        if self.use_linear_solver not in ("auto", "never"):
            raise InvalidArgumentError(
                f"use_linear_solver must be 'auto' or 'never', got "
                f"{self.use_linear_solver!r}")


@dataclass(frozen=True)
class PsiResult:
    """Projection outcome with per-start diagnostics."""

    theta: np.ndarray
    value: float                 # defect R_f at theta (not squared)
    converged: bool
    on_boundary: bool
    gradient_norm: float
    method: str                  # "linear-solve" or "multistart"
    starts: tuple = ()           # per-start records for the multistart route


def _start_points(model: OdeModel, cfg: PsiConfig) -> np.ndarray:
    lo, hi = model.theta_bounds[:, 0], model.theta_bounds[:, 1]
    if cfg.placement == "grid":
        per_axis = int(np.ceil(cfg.starts ** (1.0 / model.p)))
        axes = [np.linspace(l, h, per_axis + 2)[1:-1] for l, h in zip(lo, hi)]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, model.p)
        return mesh[:cfg.starts]
    sampler = qmc.Sobol(d=model.p, scramble=True, seed=cfg.start_seed)
    m = max(1, int(np.ceil(np.log2(cfg.starts))))
    pts = sampler.random_base2(m)[:cfg.starts]
    return qmc.scale(pts, lo, hi)


def _boundary_flag(model: OdeModel, theta: np.ndarray, atol: float = 1e-8) -> bool:
    lo, hi = model.theta_bounds[:, 0], model.theta_bounds[:, 1]
    return bool(np.any(theta - lo < atol) or np.any(hi - theta < atol))


def _linear_normal_equations(samples: _CurveAtNodes, model: OdeModel):
    """Quadratic coefficients (A, b) of the squared defect for affine fields."""
    zero = np.zeros(model.p)
    base = _rhs_checked(model, samples.t, samples.value, zero)
    jac = model.theta_jac(samples.t, samples.value, zero)
    resid0 = samples.deriv - base
    a = np.einsum("q,qdk,qdl->kl", samples.u, jac, jac)
    b = np.einsum("q,qdk,qd->k", samples.u, jac, resid0)
    return a, b


BOX_QP_MAX_P = 6


def _box_qp(a: np.ndarray, b: np.ndarray, lo: np.ndarray, hi: np.ndarray,
            tol: float = 1e-9) -> Optional[np.ndarray]:
    """Exact global minimizer of theta' a theta - 2 b' theta over a box.

    ``a`` must be positive definite, making the problem convex; the active
    set (each coordinate free, at its lower, or at its upper bound) is
    enumerated and KKT-checked, which is exact and cheap for small p.
    Returns None when p exceeds the enumeration limit.
    """
    p = len(b)
    if p > BOX_QP_MAX_P:
        return None
    scale = max(np.abs(b).max(), np.abs(a).max(), 1.0)
    best, best_val = None, np.inf
    for code in range(3 ** p):
        state = np.empty(p, dtype=int)
        c = code
        for i in range(p):
            state[i] = c % 3
            c //= 3
        theta = np.where(state == 1, lo, np.where(state == 2, hi, 0.0))
        free = np.flatnonzero(state == 0)
        if free.size:
            clamped = np.flatnonzero(state != 0)
            rhs = b[free] - a[np.ix_(free, clamped)] @ theta[clamped]
            try:
                theta[free] = np.linalg.solve(a[np.ix_(free, free)], rhs)
            except np.linalg.LinAlgError:
                continue
            if np.any(theta[free] < lo[free] - tol) or np.any(theta[free] > hi[free] + tol):
                continue
        grad = 2.0 * (a @ theta - b)
        if np.any((state == 1) & (grad < -tol * scale)):
            continue
        if np.any((state == 2) & (grad > tol * scale)):
            continue
        val = theta @ a @ theta - 2.0 * b @ theta
        if val < best_val - 1e-15 * scale or best is None:
            best, best_val = np.clip(theta, lo, hi), val
    return best


def psi(f, model: OdeModel, weight: Optional[WeightFn] = None,
        quad: Optional[QuadratureRule] = None,
        cfg: Optional[PsiConfig] = None) -> PsiResult:
    """Project a curve onto the parameter box by minimizing the defect.

    Fields affine in theta are solved exactly (box-constrained convex
    quadratic); otherwise the best local minimum over all multistart
    descents is returned, breaking ties by objective then lexicographic
    order.  Raises :class:`OptimizationFailure` carrying the best incumbent
    if no start converges.
    """
    cfg = cfg or PsiConfig()
    weight = weight or default_weight()
    quad = quad or _default_quadrature(f, cfg.quad_order)
    samples = _CurveAtNodes(f, weight, quad)
    lo, hi = model.theta_bounds[:, 0], model.theta_bounds[:, 1]

    if model.linear_in_theta and cfg.use_linear_solver == "auto":
        a, b = _linear_normal_equations(samples, model)
        eigs = np.linalg.eigvalsh(a)
        if eigs[0] > 1e-12 * max(eigs[-1], 1e-30):
            theta = _box_qp(a, b, lo, hi)
            if theta is not None and np.all(np.isfinite(theta)):
                grad = samples.squared_defect_gradient(model, theta)
                return PsiResult(
                    theta=theta,
                    value=float(np.sqrt(max(samples.squared_defect(model, theta), 0.0))),
                    converged=True,
                    on_boundary=_boundary_flag(model, theta),
                    gradient_norm=float(np.linalg.norm(grad)),
                    method="linear-solve")
        # fall through to the multistart route on degenerate systems or large p

    def objective(eta):
        return (samples.squared_defect(model, eta),
                samples.squared_defect_gradient(model, eta))

    records = []
    for x0 in _start_points(model, cfg):
        res = minimize(objective, x0, jac=True, method="L-BFGS-B",
                       bounds=list(zip(lo, hi)),
                       options={"maxiter": cfg.max_iter, "ftol": cfg.step_tol,
                                "gtol": cfg.grad_tol})
        records.append({"x0": x0, "theta": np.asarray(res.x), "value2": float(res.fun),
                        "converged": bool(res.success), "message": str(res.message),
                        "iterations": int(res.nit)})

    converged = [r for r in records if r["converged"]]
    pool = converged if converged else records
    best = min(pool, key=lambda r: (r["value2"], tuple(r["theta"])))
    theta = best["theta"]
    grad = samples.squared_defect_gradient(model, theta)
    result = PsiResult(
        theta=theta,
        value=float(np.sqrt(max(best["value2"], 0.0))),
        converged=bool(converged),
        on_boundary=_boundary_flag(model, theta),
        gradient_norm=float(np.linalg.norm(grad)),
        method="multistart",
        starts=tuple(records))
    if not converged:
        raise OptimizationFailure(
            f"no start converged for model {model.name}", incumbent=result)
    return result


@dataclass(frozen=True)
class ProjectionBatch:
    """Projections of a batch of coefficient draws."""

    thetas: np.ndarray       # (count, p); failed rows hold NaN
    ok: np.ndarray           # (count,) bool
    n_fallback: int          # draws routed through the generic search


def project_draws(coeff_draws: np.ndarray, basis: KnotVector, model: OdeModel,
                  weight: Optional[WeightFn] = None,
                  quad: Optional[QuadratureRule] = None,
                  cfg: Optional[PsiConfig] = None) -> ProjectionBatch:
    """Project many coefficient draws at once.

    For fields affine in theta this solves all normal-equation systems in a
    single vectorized pass, falling back to the generic search only for
    draws whose unconstrained solution leaves the parameter box (or whose
    system is degenerate).  Results agree with :func:`psi` draw by draw.
    """
    cfg = cfg or PsiConfig()
    weight = weight or default_weight()
    quad = quad or knot_quadrature(basis, cfg.quad_order)
    draws = np.asarray(coeff_draws, dtype=float)
    if draws.ndim != 3:
        raise InvalidArgumentError("coeff_draws must have shape (count, dimension, d)")
    count = draws.shape[0]
    lo, hi = model.theta_bounds[:, 0], model.theta_bounds[:, 1]

    thetas = np.full((count, model.p), np.nan)
    ok = np.zeros(count, dtype=bool)
    pending = np.arange(count)
    n_fallback = 0

    if model.linear_in_theta and cfg.use_linear_solver == "auto":
        nq = basis_matrix(basis, quad.nodes, 0)
        nd = basis_matrix(basis, quad.nodes, 1)
        values = np.einsum("qk,skd->sqd", nq, draws)
        derivs = np.einsum("qk,skd->sqd", nd, draws)
        u = quad.weights * np.asarray(weight.fn(quad.nodes), dtype=float)
        t_flat = np.tile(quad.nodes, count)
        f_flat = values.reshape(-1, model.d)
        zero = np.zeros(model.p)
        q = len(quad.nodes)
        base = model.rhs(t_flat, f_flat, zero).reshape(count, q, model.d)
        jac = model.theta_jac(t_flat, f_flat, zero).reshape(count, q, model.d, model.p)
        resid0 = derivs - base
        a = np.einsum("q,sqdk,sqdl->skl", u, jac, jac)
        b = np.einsum("q,sqdk,sqd->sk", u, jac, resid0)
        eigs = np.linalg.eigvalsh(a)
        solvable = eigs[:, 0] > 1e-12 * np.maximum(eigs[:, -1], 1e-30)
        cand = np.full((count, model.p), np.nan)
        if np.any(solvable):
            cand[solvable] = np.linalg.solve(a[solvable], b[solvable][..., None])[..., 0]
        inside = (solvable & np.all(cand >= lo, axis=1) & np.all(cand <= hi, axis=1)
                  & np.all(np.isfinite(cand), axis=1))
        thetas[inside] = cand[inside]
        ok[inside] = True
        # exterior solutions: exact box-constrained solve of the same quadratic
        if model.p <= BOX_QP_MAX_P:
            for s in np.flatnonzero(solvable & ~inside):
                theta = _box_qp(a[s], b[s], lo, hi)
                if theta is not None and np.all(np.isfinite(theta)):
                    thetas[s] = theta
                    ok[s] = True
        pending = np.flatnonzero(~ok)

    for s in pending:
        n_fallback += 1
        try:
            res = psi(SplineFunction(basis, draws[s]), model, weight, quad, cfg)
        except (OptimizationFailure, NumericError):
            continue
        thetas[s] = res.theta
        ok[s] = True
    return ProjectionBatch(thetas=thetas, ok=ok, n_fallback=n_fallback)
