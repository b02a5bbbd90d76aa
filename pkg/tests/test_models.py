import numpy as np
import pytest

from gradmatch import (InvalidArgumentError, NumericError, WeightFn,
                       builtin_model, default_weight, misspecified_truth,
                       transform_model)
from gradmatch.models import _fd_wrt_state, _fd_wrt_theta

ALL_MODELS = ["example1", "example2", "lotka_volterra", "pkpd_feedback"]


def random_points(model, rng, nt=30):
    t = rng.uniform(0.0, 1.0, nt)
    f = rng.uniform(0.5, 2.5, (nt, model.d))
    lo, hi = model.theta_bounds[:, 0], model.theta_bounds[:, 1]
    theta = rng.uniform(np.maximum(lo, -3.0), np.minimum(hi, 3.0))
    return t, f, theta


class TestBuiltins:
    def test_example1_initial_condition(self):
        sol = builtin_model("example1").solution(np.array([1.0]))
        np.testing.assert_allclose(sol.value(np.array([0.0])), [[2.0]])

    def test_example2_initial_condition(self):
        sol = builtin_model("example2").solution(np.array([1.0, 1.0]))
        np.testing.assert_allclose(sol.value(np.array([0.0])), [[1.0, 1.0]])
        # second component is (2t+1) e^t
        t = np.array([0.3])
        np.testing.assert_allclose(sol.value(t)[0, 1], (2 * 0.3 + 1) * np.exp(0.3))

    def test_example1_theta_gradient_value(self):
        model = builtin_model("example1")
        jac = model.theta_jac(np.array([0.5]), np.array([[2.0]]), np.array([3.0]))
        np.testing.assert_allclose(jac, [[[-0.5]]])

    def test_unknown_name(self):
        with pytest.raises(InvalidArgumentError):
            builtin_model("example3")

    @pytest.mark.parametrize("name", ["example1", "example2"])
    def test_solution_satisfies_ode(self, name):
        model = builtin_model(name)
        rng = np.random.default_rng(11)
        t = np.linspace(0.0, 1.0, 1000)
        for _ in range(3):
            theta = rng.uniform(0.2, 1.5, model.p)
            sol = model.solution(theta)
            resid = sol.deriv(t) - model.rhs(t, sol.value(t), theta)
            assert np.abs(resid).max() < 1e-8

    @pytest.mark.parametrize("name", ALL_MODELS)
    def test_first_partials_match_finite_differences(self, name):
        model = builtin_model(name)
        rng = np.random.default_rng(5)
        t, f, theta = random_points(model, rng)
        fd_th = _fd_wrt_theta(model.rhs, t, f, theta)
        fd_f = _fd_wrt_state(model.rhs, t, f, theta)
        np.testing.assert_allclose(model.theta_jac(t, f, theta), fd_th,
                                   rtol=1e-5, atol=1e-7)
        np.testing.assert_allclose(model.state_jac(t, f, theta), fd_f,
                                   rtol=1e-5, atol=1e-7)

    @pytest.mark.parametrize("name", ALL_MODELS)
    def test_second_partials_match_finite_differences(self, name):
        model = builtin_model(name)
        rng = np.random.default_rng(17)
        t, f, theta = random_points(model, rng, nt=15)
        fd_hess = _fd_wrt_theta(model.theta_jac, t, f, theta)
        fd_mixed = _fd_wrt_state(model.theta_jac, t, f, theta)
        fd_state2 = _fd_wrt_state(model.state_jac, t, f, theta)
        np.testing.assert_allclose(model.theta_hess(t, f, theta), fd_hess,
                                   rtol=1e-5, atol=1e-6)
        # analytic layout is (nt, d, d, p); FD of theta_jac gives (nt, d, p, d)
        np.testing.assert_allclose(model.state_theta_jac(t, f, theta),
                                   np.swapaxes(fd_mixed, 2, 3),
                                   rtol=1e-5, atol=1e-6)
        np.testing.assert_allclose(model.state_hess(t, f, theta), fd_state2,
                                   rtol=1e-5, atol=1e-6)
        h = 1e-5
        fd_time = (model.theta_jac(t + h, f, theta)
                   - model.theta_jac(t - h, f, theta)) / (2 * h)
        np.testing.assert_allclose(model.time_theta_jac(t, f, theta), fd_time,
                                   rtol=1e-5, atol=1e-6)

    @pytest.mark.parametrize("name", ALL_MODELS)
    def test_affine_in_theta(self, name):
        # rhs(theta) equals rhs(0) + theta_jac . theta for the declared models
        model = builtin_model(name)
        assert model.linear_in_theta
        rng = np.random.default_rng(23)
        t, f, theta = random_points(model, rng)
        lhs = model.rhs(t, f, theta)
        rhs0 = model.rhs(t, f, np.zeros(model.p))
        jac = model.theta_jac(t, f, theta)
        np.testing.assert_allclose(lhs, rhs0 + jac @ theta, atol=1e-12)


class TestMisspecifiedTruths:
    def test_example1_case2_values(self):
        f0 = misspecified_truth("example1_case2")
        np.testing.assert_allclose(f0.value(np.array([0.0])), [[2.0]])
        np.testing.assert_allclose(f0.deriv(np.array([0.0])), [[0.08 * np.pi]])

    def test_example2_case2_value(self):
        f0 = misspecified_truth("example2_case2")
        np.testing.assert_allclose(f0.value(np.array([0.25]))[0, 0], np.exp(0.25),
                                   atol=1e-14)

    @pytest.mark.parametrize("name", ["example1_case2", "example2_case2"])
    def test_derivative_matches_finite_differences(self, name):
        f0 = misspecified_truth(name)
        t = np.linspace(0.01, 0.99, 200)
        h = 1e-7
        fd = (f0.value(t + h) - f0.value(t - h)) / (2 * h)
        np.testing.assert_allclose(f0.deriv(t), fd, rtol=1e-6, atol=1e-6)

    def test_unknown_name(self):
        with pytest.raises(InvalidArgumentError):
            misspecified_truth("example1_case3")


class TestWeight:
    def test_default_weight(self):
        w = default_weight()
        ends = w.fn(np.array([0.0, 1.0]))
        assert ends[0] == 0.0 and ends[1] == 0.0
        t = np.linspace(0, 1, 101)
        assert np.all(w.fn(t) >= 0.0)
        np.testing.assert_array_equal(w.deriv(t), 1.0 - 2.0 * t)

    def test_rejects_nonvanishing_endpoints(self):
        with pytest.raises(InvalidArgumentError):
            WeightFn(fn=lambda t: 1.0 + 0.0 * t, deriv=lambda t: 0.0 * t)


class TestTransformModel:
    def test_identity_transform(self):
        model = builtin_model("example2")
        ident = transform_model(
            model,
            g=lambda f: f, g_inv=lambda h: h,
            g_jacobian=lambda f: np.tile(np.eye(2), (len(f), 1, 1)))
        rng = np.random.default_rng(2)
        t, f, theta = random_points(model, rng)
        np.testing.assert_allclose(ident.rhs(t, f, theta),
                                   model.rhs(t, f, theta), atol=1e-12)

    def log_example1(self):
        model = builtin_model("example1")
        return transform_model(
            model,
            g=lambda f: np.log(f),
            g_inv=lambda h: np.exp(h),
            g_jacobian=lambda f: (1.0 / f)[:, :, None] * np.eye(1))

    def test_log_transform_hand_value(self):
        # H(t, h, theta) = theta t (e^{-h} - 1) on the log scale
        logm = self.log_example1()
        val = logm.rhs(np.array([0.5]), np.array([[np.log(2.0)]]), np.array([1.0]))
        np.testing.assert_allclose(val, [[-0.25]], atol=1e-12)

    def test_transformed_theta_jac_matches_fd(self):
        logm = self.log_example1()
        rng = np.random.default_rng(29)
        t = rng.uniform(0, 1, 100)
        h = rng.uniform(0.1, 1.0, (100, 1))
        theta = np.array([0.8])
        fd = _fd_wrt_theta(logm.rhs, t, h, theta)
        np.testing.assert_allclose(logm.theta_jac(t, h, theta), fd,
                                   rtol=1e-5, atol=1e-8)

    def test_transformed_state_jac_matches_fd(self):
        logm = self.log_example1()
        rng = np.random.default_rng(31)
        t = rng.uniform(0, 1, 50)
        h = rng.uniform(0.1, 1.0, (50, 1))
        theta = np.array([1.2])
        fd = _fd_wrt_state(logm.rhs, t, h, theta, step=1e-4)
        np.testing.assert_allclose(logm.state_jac(t, h, theta), fd,
                                   rtol=1e-4, atol=1e-6)

    def test_transformed_solution_tracks_base(self):
        logm = self.log_example1()
        sol = logm.solution(np.array([1.0]))
        t = np.linspace(0, 1, 200)
        np.testing.assert_allclose(
            sol.value(t)[:, 0], np.log(1.0 + np.exp(-t ** 2 / 2)), atol=1e-12)
        resid = sol.deriv(t) - logm.rhs(t, sol.value(t), np.array([1.0]))
        assert np.abs(resid).max() < 1e-8

    def test_singular_jacobian_reports_location(self):
        model = builtin_model("example1")
        bad = transform_model(
            model,
            g=lambda f: f, g_inv=lambda h: h,
            g_jacobian=lambda f: np.zeros((len(f), 1, 1)))
        with pytest.raises(NumericError, match="singular"):
            bad.rhs(np.array([0.4]), np.array([[1.5]]), np.array([1.0]))
