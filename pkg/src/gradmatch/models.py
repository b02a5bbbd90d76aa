"""ODE vector fields, their partial derivatives, and built-in example systems.

An :class:`OdeModel` bundles the right-hand side F(t, f, theta) of a system
f'(t) = F(t, f(t), theta) on [0, 1] with its first partials in theta and in
the state, optional second partials (finite-difference fallbacks otherwise),
a compact parameter box, and, where known, the analytic solution.

All callables are vectorized over a leading time axis:

    rhs(t, f, theta)            (nt,), (nt, d), (p,) -> (nt, d)
    theta_jac -> (nt, d, p)     state_jac -> (nt, d, d)
    theta_hess -> (nt, d, p, p) state_theta_jac -> (nt, d, d, p)
    state_hess -> (nt, d, d, d) time_theta_jac -> (nt, d, p)
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .errors import InvalidArgumentError, NumericError

__all__ = ["OdeModel", "WeightFn", "TrueFunction", "default_weight",
           "builtin_model", "misspecified_truth", "transform_model",
           "BUILTIN_MODELS", "MISSPECIFIED_TRUTHS"]

FD_STEP = 1e-5


@dataclass(frozen=True)
class WeightFn:
    """Weight function on [0, 1] with w(0) = w(1) = 0 and its derivative."""

    fn: Callable[[np.ndarray], np.ndarray]
    deriv: Callable[[np.ndarray], np.ndarray]

    def __post_init__(self):
        ends = np.asarray(self.fn(np.array([0.0, 1.0])), dtype=float)
        if ends[0] != 0.0 or ends[1] != 0.0:
            raise InvalidArgumentError(
                f"weight function must vanish at both endpoints, got w(0)={ends[0]}, "
                f"w(1)={ends[1]}")


def default_weight() -> WeightFn:
    """w(t) = t (1 - t), the default downweighting of the boundary."""
    return WeightFn(fn=lambda t: t * (1.0 - t), deriv=lambda t: 1.0 - 2.0 * t)


@dataclass(frozen=True)
class TrueFunction:
    """A data-generating mean curve with its exact derivative."""

    d: int
    value: Callable[[np.ndarray], np.ndarray]   # (nt,) -> (nt, d)
    deriv: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class OdeModel:
    """Vector field of an ODE system together with its derivative bundle."""

    name: str
    d: int
    p: int
    theta_bounds: np.ndarray                    # (p, 2) compact box
    rhs: Callable                               # F(t, f, theta) -> (nt, d)
    theta_jac: Callable                         # dF/dtheta -> (nt, d, p)
    state_jac: Callable                         # dF/df -> (nt, d, d)
    theta_hess_fn: Optional[Callable] = None    # d2F/dtheta2
    state_theta_jac_fn: Optional[Callable] = None  # d2F/df dtheta
    state_hess_fn: Optional[Callable] = None    # d2F/df2
    time_theta_jac_fn: Optional[Callable] = None   # d2F/dt dtheta
    linear_in_theta: bool = False
    solution: Optional[Callable[[np.ndarray], TrueFunction]] = None
    reference_theta: Optional[np.ndarray] = None

    def clip_to_bounds(self, theta: np.ndarray) -> np.ndarray:
        return np.clip(theta, self.theta_bounds[:, 0], self.theta_bounds[:, 1])

    def contains(self, theta: np.ndarray, atol: float = 0.0) -> bool:
        lo, hi = self.theta_bounds[:, 0], self.theta_bounds[:, 1]
        return bool(np.all(theta >= lo - atol) and np.all(theta <= hi + atol))

    # Second partials: analytic when supplied, else central finite differences
    # of the first partials (step FD_STEP).

    def theta_hess(self, t, f, theta):
        if self.theta_hess_fn is not None:
            return self.theta_hess_fn(t, f, theta)
        return _fd_wrt_theta(self.theta_jac, t, f, theta)

    def state_theta_jac(self, t, f, theta):
        if self.state_theta_jac_fn is not None:
            return self.state_theta_jac_fn(t, f, theta)
        # differentiate dF/df in theta, then move the theta axis last
        out = _fd_wrt_theta(self.state_jac, t, f, theta)      # (nt, d, d, p)
        return out

    def state_hess(self, t, f, theta):
        if self.state_hess_fn is not None:
            return self.state_hess_fn(t, f, theta)
        return _fd_wrt_state(self.state_jac, t, f, theta)

    def time_theta_jac(self, t, f, theta):
        if self.time_theta_jac_fn is not None:
            return self.time_theta_jac_fn(t, f, theta)
        t = np.asarray(t, dtype=float)
        up = self.theta_jac(t + FD_STEP, f, theta)
        dn = self.theta_jac(t - FD_STEP, f, theta)
        return (up - dn) / (2.0 * FD_STEP)


def _fd_wrt_theta(fn, t, f, theta, step=FD_STEP):
    """Central differences of fn(t, f, .) in theta; result gains a last axis p."""
    theta = np.asarray(theta, dtype=float)
    cols = []
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = step
        cols.append((fn(t, f, theta + e) - fn(t, f, theta - e)) / (2.0 * step))
    return np.stack(cols, axis=-1)


def _fd_wrt_state(fn, t, f, theta, step=FD_STEP):
    """Central differences of fn(t, ., theta) in the state; new axis is last."""
    f = np.asarray(f, dtype=float)
    cols = []
    for i in range(f.shape[1]):
        df = np.zeros_like(f)
        df[:, i] = step
        cols.append((fn(t, f + df, theta) - fn(t, f - df, theta)) / (2.0 * step))
    return np.stack(cols, axis=-1)


def _box(p: int, lo: float = -10.0, hi: float = 10.0) -> np.ndarray:
    return np.tile(np.array([[lo, hi]], dtype=float), (p, 1))


# ---------------------------------------------------------------------------
# Built-in systems


def _example1() -> OdeModel:
    """Logistic-type scalar system F = theta t (1 - f), f(0) = 2."""

    def rhs(t, f, th):
        return (th[0] * t * (1.0 - f[:, 0]))[:, None]

    def theta_jac(t, f, th):
        return (t * (1.0 - f[:, 0]))[:, None, None]

    def state_jac(t, f, th):
        return (-th[0] * t)[:, None, None]

    def theta_hess(t, f, th):
        return np.zeros((len(t), 1, 1, 1))

    def state_theta_jac(t, f, th):
        return (-t)[:, None, None, None]

    def state_hess(t, f, th):
        return np.zeros((len(t), 1, 1, 1))

    def time_theta_jac(t, f, th):
        return (1.0 - f[:, 0])[:, None, None]

    def solution(theta):
        th = float(np.atleast_1d(theta)[0])
        return TrueFunction(
            d=1,
            value=lambda t: (1.0 + np.exp(-th * t ** 2 / 2.0))[:, None],
            deriv=lambda t: (-th * t * np.exp(-th * t ** 2 / 2.0))[:, None],
        )

    return OdeModel(
        name="example1", d=1, p=1, theta_bounds=_box(1),
        rhs=rhs, theta_jac=theta_jac, state_jac=state_jac,
        theta_hess_fn=theta_hess, state_theta_jac_fn=state_theta_jac,
        state_hess_fn=state_hess, time_theta_jac_fn=time_theta_jac,
        linear_in_theta=True, solution=solution,
        reference_theta=np.array([1.0]),
    )


def _example2() -> OdeModel:
    """Coupled linear growth system F1 = th1 f1, F2 = 2 th2 f1 + th1 f2."""

    def rhs(t, f, th):
        f1, f2 = f[:, 0], f[:, 1]
        return np.stack([th[0] * f1, 2.0 * th[1] * f1 + th[0] * f2], axis=1)

    def theta_jac(t, f, th):
        nt = len(t)
        out = np.zeros((nt, 2, 2))
        out[:, 0, 0] = f[:, 0]
        out[:, 1, 0] = f[:, 1]
        out[:, 1, 1] = 2.0 * f[:, 0]
        return out

    def state_jac(t, f, th):
        nt = len(t)
        out = np.zeros((nt, 2, 2))
        out[:, 0, 0] = th[0]
        out[:, 1, 0] = 2.0 * th[1]
        out[:, 1, 1] = th[0]
        return out

    def theta_hess(t, f, th):
        return np.zeros((len(t), 2, 2, 2))

    def state_theta_jac(t, f, th):
        out = np.zeros((len(t), 2, 2, 2))
        out[:, 0, 0, 0] = 1.0   # d2F1 / df1 dth1
        out[:, 1, 0, 1] = 2.0   # d2F2 / df1 dth2
        out[:, 1, 1, 0] = 1.0   # d2F2 / df2 dth1
        return out

    def state_hess(t, f, th):
        return np.zeros((len(t), 2, 2, 2))

    def time_theta_jac(t, f, th):
        return np.zeros((len(t), 2, 2))

    def solution(theta):
        th1, th2 = (float(v) for v in np.atleast_1d(theta))

        def value(t):
            e = np.exp(th1 * t)
            return np.stack([e, (2.0 * th2 * t + 1.0) * e], axis=1)

        def deriv(t):
            e = np.exp(th1 * t)
            return np.stack([th1 * e,
                             2.0 * th2 * e + (2.0 * th2 * t + 1.0) * th1 * e], axis=1)

        return TrueFunction(d=2, value=value, deriv=deriv)

    return OdeModel(
        name="example2", d=2, p=2, theta_bounds=_box(2),
        rhs=rhs, theta_jac=theta_jac, state_jac=state_jac,
        theta_hess_fn=theta_hess, state_theta_jac_fn=state_theta_jac,
        state_hess_fn=state_hess, time_theta_jac_fn=time_theta_jac,
        linear_in_theta=True, solution=solution,
        reference_theta=np.array([1.0, 1.0]),
    )


def _lotka_volterra() -> OdeModel:
    """Predator-prey system, theta = (prey growth, prey-predator coupling,
    predator growth, predator-prey coupling).  No closed-form solution."""

    def rhs(t, f, th):
        f1, f2 = f[:, 0], f[:, 1]
        return np.stack([th[0] * f1 + th[1] * f1 * f2,
                         th[2] * f2 + th[3] * f1 * f2], axis=1)

    def theta_jac(t, f, th):
        nt = len(t)
        f1, f2 = f[:, 0], f[:, 1]
        out = np.zeros((nt, 2, 4))
        out[:, 0, 0] = f1
        out[:, 0, 1] = f1 * f2
        out[:, 1, 2] = f2
        out[:, 1, 3] = f1 * f2
        return out

    def state_jac(t, f, th):
        nt = len(t)
        f1, f2 = f[:, 0], f[:, 1]
        out = np.zeros((nt, 2, 2))
        out[:, 0, 0] = th[0] + th[1] * f2
        out[:, 0, 1] = th[1] * f1
        out[:, 1, 0] = th[3] * f2
        out[:, 1, 1] = th[2] + th[3] * f1
        return out

    def theta_hess(t, f, th):
        return np.zeros((len(t), 2, 4, 4))

    def state_theta_jac(t, f, th):
        out = np.zeros((len(t), 2, 2, 4))
        out[:, 0, 0, 0] = 1.0
        out[:, 0, 0, 1] = f[:, 1]
        out[:, 0, 1, 1] = f[:, 0]
        out[:, 1, 1, 2] = 1.0
        out[:, 1, 0, 3] = f[:, 1]
        out[:, 1, 1, 3] = f[:, 0]
        return out

    def state_hess(t, f, th):
        out = np.zeros((len(t), 2, 2, 2))
        out[:, 0, 0, 1] = th[1]
        out[:, 0, 1, 0] = th[1]
        out[:, 1, 0, 1] = th[3]
        out[:, 1, 1, 0] = th[3]
        return out

    def time_theta_jac(t, f, th):
        return np.zeros((len(t), 2, 4))

    return OdeModel(
        name="lotka_volterra", d=2, p=4, theta_bounds=_box(4),
        rhs=rhs, theta_jac=theta_jac, state_jac=state_jac,
        theta_hess_fn=theta_hess, state_theta_jac_fn=state_theta_jac,
        state_hess_fn=state_hess, time_theta_jac_fn=time_theta_jac,
        linear_in_theta=True,
    )


def _pkpd_feedback() -> OdeModel:
    """Response/modulator feedback system, theta = (k_in, k_out, k_tol).
    No closed-form solution."""

    def rhs(t, f, th):
        r, mmod = f[:, 0], f[:, 1]
        return np.stack([th[0] - th[1] * r * (1.0 + mmod),
                         th[2] * (r - mmod)], axis=1)

    def theta_jac(t, f, th):
        nt = len(t)
        r, mmod = f[:, 0], f[:, 1]
        out = np.zeros((nt, 2, 3))
        out[:, 0, 0] = 1.0
        out[:, 0, 1] = -r * (1.0 + mmod)
        out[:, 1, 2] = r - mmod
        return out

    def state_jac(t, f, th):
        nt = len(t)
        r = f[:, 0]
        out = np.zeros((nt, 2, 2))
        out[:, 0, 0] = -th[1] * (1.0 + f[:, 1])
        out[:, 0, 1] = -th[1] * r
        out[:, 1, 0] = th[2]
        out[:, 1, 1] = -th[2]
        return out

    def theta_hess(t, f, th):
        return np.zeros((len(t), 2, 3, 3))

    def state_theta_jac(t, f, th):
        out = np.zeros((len(t), 2, 2, 3))
        out[:, 0, 0, 1] = -(1.0 + f[:, 1])
        out[:, 0, 1, 1] = -f[:, 0]
        out[:, 1, 0, 2] = 1.0
        out[:, 1, 1, 2] = -1.0
        return out

    def state_hess(t, f, th):
        out = np.zeros((len(t), 2, 2, 2))
        out[:, 0, 0, 1] = -th[1]
        out[:, 0, 1, 0] = -th[1]
        return out

    def time_theta_jac(t, f, th):
        return np.zeros((len(t), 2, 3))

    return OdeModel(
        name="pkpd_feedback", d=2, p=3, theta_bounds=_box(3),
        rhs=rhs, theta_jac=theta_jac, state_jac=state_jac,
        theta_hess_fn=theta_hess, state_theta_jac_fn=state_theta_jac,
        state_hess_fn=state_hess, time_theta_jac_fn=time_theta_jac,
        linear_in_theta=True,
    )


BUILTIN_MODELS = {
    "example1": _example1,
    "example2": _example2,
    "lotka_volterra": _lotka_volterra,
    "pkpd_feedback": _pkpd_feedback,
}


def builtin_model(name: str) -> OdeModel:
    """Return a fully wired built-in model by name."""
    try:
        factory = BUILTIN_MODELS[name]
    except KeyError:
        raise InvalidArgumentError(
            f"unknown model {name!r}; available: {sorted(BUILTIN_MODELS)}") from None
    return factory()


# ---------------------------------------------------------------------------
# Misspecified data-generating means (outside the ODE solution set)


def _example1_case2() -> TrueFunction:
    def value(t):
        return (1.0 + np.exp(-t ** 2 / 2.0) + 0.02 * np.sin(4.0 * np.pi * t))[:, None]

    def deriv(t):
        return (-t * np.exp(-t ** 2 / 2.0)
                + 0.08 * np.pi * np.cos(4.0 * np.pi * t))[:, None]

    return TrueFunction(d=1, value=value, deriv=deriv)


def _example2_case2() -> TrueFunction:
    def value(t):
        e = np.exp(t)
        return np.stack([e + 0.1 * np.sin(4.0 * np.pi * t),
                         (2.0 * t + 1.0) * e + 0.45 * np.cos(4.0 * np.pi * t)], axis=1)

    def deriv(t):
        e = np.exp(t)
        return np.stack([e + 0.4 * np.pi * np.cos(4.0 * np.pi * t),
                         (2.0 * t + 3.0) * e - 1.8 * np.pi * np.sin(4.0 * np.pi * t)],
                        axis=1)

    return TrueFunction(d=2, value=value, deriv=deriv)


MISSPECIFIED_TRUTHS = {
    "example1_case2": _example1_case2,
    "example2_case2": _example2_case2,
}


def misspecified_truth(name: str) -> TrueFunction:
    """Return a built-in data-generating mean lying outside the solution set."""
    try:
        factory = MISSPECIFIED_TRUTHS[name]
    except KeyError:
        raise InvalidArgumentError(
            f"unknown truth {name!r}; available: {sorted(MISSPECIFIED_TRUTHS)}") from None
    return factory()


# ---------------------------------------------------------------------------
# Observation-scale change of variables


def transform_model(model: OdeModel, g, g_inv, g_jacobian) -> OdeModel:
    """Re-express the system for observations h = g(f).

    With g invertible and J_g its Jacobian, the transformed state obeys
    h' = H(t, h, theta) = J_g(g_inv(h)) F(t, g_inv(h), theta).  The theta
    gradient is assembled exactly by the chain rule; state derivatives fall
    back to finite differences of H.

    ``g``, ``g_inv`` map (nt, d) -> (nt, d); ``g_jacobian`` maps
    (nt, d) -> (nt, d, d) and must be nonsingular where evaluated.
    """

    def _pullback(t, h):
        f = np.asarray(g_inv(h), dtype=float)
        jac = np.asarray(g_jacobian(f), dtype=float)
        det = np.linalg.det(jac)
        bad = ~np.isfinite(det) | (np.abs(det) < 1e-300)
        if np.any(bad):
            i = int(np.argmax(bad))
            raise NumericError(
                f"singular observation Jacobian at t={np.asarray(t).ravel()[i]:.6g}, "
                f"h={h[i]}")
        return f, jac

    def rhs(t, h, th):
        f, jac = _pullback(t, h)
        return np.einsum("nij,nj->ni", jac, model.rhs(t, f, th))

    def theta_jac(t, h, th):
        f, jac = _pullback(t, h)
        return np.einsum("nij,njk->nik", jac, model.theta_jac(t, f, th))

    def state_jac(t, h, th):
        h = np.asarray(h, dtype=float)
        return _fd_wrt_state(lambda tt, hh, tth: rhs(tt, hh, tth), t, h, th,
                             step=1e-6)

    solution = None
    if model.solution is not None:
        def solution(theta):
            base = model.solution(theta)

            def value(t):
                return np.asarray(g(base.value(t)), dtype=float)

            def deriv(t):
                f = base.value(t)
                jac = np.asarray(g_jacobian(f), dtype=float)
                return np.einsum("nij,nj->ni", jac, base.deriv(t))

            return TrueFunction(d=model.d, value=value, deriv=deriv)

    return replace(
        model,
        name=model.name + ":transformed",
        rhs=rhs, theta_jac=theta_jac, state_jac=state_jac,
        theta_hess_fn=None, state_theta_jac_fn=None, state_hess_fn=None,
        time_theta_jac_fn=None,
        solution=solution,
    )
