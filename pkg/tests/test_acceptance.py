"""Acceptance gate: every criterion at its stated tolerance.

Each test aggregates its sub-checks and prints a single PASS/FAIL line
(visible with ``pytest -s``) before asserting.  Reference coverage/length
values come from the published simulation tables of the method; Monte-Carlo
tolerances follow the criterion statements.
"""

import numpy as np
import pytest

import gradmatch as gm
from gradmatch.asymptotics import (bvm_normal, compute_ingredients,
                                   tv_diagnostic)
from gradmatch.cli import main as cli_main
from gradmatch.models import TrueFunction
from gradmatch.posterior import (coeff_posterior, matrix_normal_posterior,
                                 rng_stream, sample_coeffs, sigma2_posterior)
from gradmatch.projection import knot_quadrature, panel_quadrature, project_draws, psi
from gradmatch.splines import basis_matrix, design_matrix, make_knots
from gradmatch.study import (StudyConfig, default_k_n, run_study,
                             simulate_data)

pytestmark = pytest.mark.filterwarnings("ignore::UserWarning")

DESK = dict(replications=200, posterior_draws=500, bootstrap_resamples=200,
            seed=42)


def criterion(cid, name, checks):
    ok = all(flag for _, flag in checks)
    print(f"\nACCEPTANCE {cid} {name}: {'PASS' if ok else 'FAIL'}")
    for desc, flag in checks:
        print(f"    [{'ok' if flag else 'FAIL'}] {desc}")
    assert ok, f"{cid} {name}: " + "; ".join(d for d, f in checks if not f)


def cell(result, n, method, coord=0):
    row = result.row(n, method, coord)
    return row.coverage, row.length


def within_pp(value, target, pp):
    return abs(value - target / 100.0) <= pp / 100.0


def within_rel(value, target, rel):
    return abs(value - target) <= rel * target


# The reference study never states its knot counts; these parity configs pin
# them explicitly (see README): Bayes stage k_n=14, bootstrap stage k_n=16.
TABLE12_BASIS = dict(k_n=14, bootstrap_k_n=16, bootstrap_m=5)


@pytest.fixture(scope="module")
def table1_study():
    cfg = StudyConfig(model="example1", case="well_specified",
                      error_law="normal", n_list=(50, 200, 1000),
                      **TABLE12_BASIS, **DESK)
    return run_study(cfg)


def test_c01_table1_parity(table1_study):
    res = table1_study
    checks = []
    cov, length = cell(res, 200, "bayes")
    checks.append((f"Bayes coverage n=200: {cov:.3f} vs 0.957 +-4pp",
                   within_pp(cov, 95.7, 4)))
    checks.append((f"Bayes length n=200: {length:.2f} vs 3.04 +-20%",
                   within_rel(length, 3.04, 0.20)))
    cov, length = cell(res, 1000, "bayes")
    checks.append((f"Bayes coverage n=1000: {cov:.3f} vs 0.959 +-4pp",
                   within_pp(cov, 95.9, 4)))
    checks.append((f"Bayes length n=1000: {length:.2f} vs 1.20 +-20%",
                   within_rel(length, 1.20, 0.20)))
    cov, length = cell(res, 50, "bootstrap")
    checks.append((f"Bootstrap coverage n=50: {cov:.3f} vs 0.714 +-6pp",
                   within_pp(cov, 71.4, 6)))
    checks.append((f"Bootstrap length n=50: {length:.2f} vs 5.09 +-20%",
                   within_rel(length, 5.09, 0.20)))
    cov, length = cell(res, 1000, "bootstrap")
    checks.append((f"Bootstrap coverage n=1000: {cov:.3f} vs 0.964 +-4pp",
                   within_pp(cov, 96.4, 4)))
    checks.append((f"Bootstrap length n=1000: {length:.2f} vs 1.13 +-20%",
                   within_rel(length, 1.13, 0.20)))
    criterion("C1", "table1-parity-normal-errors", checks)


def test_c02_table2_parity_t_errors():
    cfg = StudyConfig(model="example1", case="well_specified",
                      error_law="student_t", n_list=(50, 1000),
                      **TABLE12_BASIS, **DESK)
    res = run_study(cfg)
    cov1000, _ = cell(res, 1000, "bayes")
    cov50, _ = cell(res, 50, "bootstrap")
    criterion("C2", "table2-parity-t6-errors", [
        (f"Bayes coverage n=1000: {cov1000:.3f} vs 0.949 +-4pp",
         within_pp(cov1000, 94.9, 4)),
        (f"Bootstrap undercoverage n=50: {cov50:.3f} < 0.80", cov50 < 0.80),
    ])


def test_c03_tables34_parity_example2():
    cfg = StudyConfig(model="example2", case="well_specified",
                      error_law="normal", n_list=(200,), k_n=18,
                      bootstrap_k_n=3, bootstrap_m=4, **DESK)
    res = run_study(cfg)
    checks = []
    for coord, ref_len in ((0, 2.28), (1, 3.20)):
        cov, length = cell(res, 200, "bayes", coord)
        checks.append((f"Bayes coverage theta{coord + 1}: {cov:.3f} >= 0.99",
                       cov >= 0.99))
        checks.append((f"Bayes length theta{coord + 1}: {length:.2f} vs "
                       f"{ref_len} +-20%", within_rel(length, ref_len, 0.20)))
    cov2, _ = cell(res, 200, "bootstrap", 1)
    checks.append((f"Bootstrap coverage theta2: {cov2:.3f} in [0.80, 0.95]",
                   0.80 <= cov2 <= 0.95))
    criterion("C3", "tables34-parity-example2", checks)


def test_c04_projection_identity():
    rng = np.random.default_rng(4242)
    checks = []
    for name in ("example1", "example2"):
        model = gm.builtin_model(name)
        quad = panel_quadrature(np.linspace(0.0, 1.0, 65), 10)
        worst = 0.0
        for _ in range(20):
            eta = rng.uniform(model.theta_bounds[:, 0],
                              model.theta_bounds[:, 1])
            res = psi(model.solution(eta), model, quad=quad)
            worst = max(worst, np.abs(res.theta - eta).max())
        checks.append((f"{name}: max |psi(f_eta) - eta| = {worst:.2e} <= 1e-6",
                       worst <= 1e-6))
    criterion("C4", "projection-identity", checks)


def test_c05_posterior_formula_oracles():
    rng = np.random.default_rng(505)
    worst = {"coeff": 0.0, "sigma2": 0.0, "matrix-normal": 0.0}
    for _ in range(50):
        n = int(rng.integers(10, 40))
        k_n = int(rng.integers(1, 4))
        m = int(rng.integers(1, 4))
        d = int(rng.integers(1, 3))
        kv = make_knots(k_n, m)
        x = np.sort(rng.uniform(0.0, 1.0, n))
        dm = design_matrix(kv, x)
        y = rng.normal(size=(n, d))
        sigma2 = float(rng.uniform(0.3, 3.0))

        # dense conjugate-update oracle for the coefficient posterior
        post = coeff_posterior(dm, y, sigma2)
        xtx = dm.values.T @ dm.values
        precision = xtx / sigma2 + (k_n / n) * xtx
        cov = np.linalg.inv(precision)
        mean = cov @ dm.values.T @ y / sigma2
        worst["coeff"] = max(
            worst["coeff"],
            np.abs(post.mean - mean).max() / np.abs(mean).max(),
            np.abs(post.cov - cov).max() / np.abs(cov).max())

        # dense projection-matrix oracle for the variance posterior
        a, b = float(rng.uniform(0.5, 2.0)), float(rng.uniform(0.5, 2.0))
        sp = sigma2_posterior(dm, y, a, b)
        p_x = dm.values @ np.linalg.inv(xtx) @ dm.values.T
        rate = b + 0.5 * sum(
            y[:, j] @ (np.eye(n) - p_x / (1.0 + k_n / n)) @ y[:, j]
            for j in range(d))
        shape = (d * (n - kv.dimension) + 2.0 * a) / 2.0
        worst["sigma2"] = max(worst["sigma2"],
                              abs(sp.shape - shape) / shape,
                              abs(sp.rate - rate) / rate)

        # stacked Kronecker GLS oracle for the matrix-normal posterior
        root = rng.normal(size=(d, d))
        sigma = root @ root.T + 0.5 * np.eye(d)
        mn = matrix_normal_posterior(dm, y, sigma)
        big_x = np.kron(np.eye(d), dm.values)
        err_prec = np.kron(np.linalg.inv(sigma), np.eye(n))
        prior_prec = np.kron(np.eye(d), (k_n / n) * xtx)
        precision = big_x.T @ err_prec @ big_x + prior_prec
        cov_full = np.linalg.inv(precision)
        mean_full = cov_full @ big_x.T @ err_prec @ y.T.reshape(-1)
        worst["matrix-normal"] = max(
            worst["matrix-normal"],
            np.abs(mn.mean.T.reshape(-1) - mean_full).max()
            / np.abs(mean_full).max(),
            np.abs(np.kron(mn.col_cov, mn.row_cov) - cov_full).max()
            / np.abs(cov_full).max())

    criterion("C5", "posterior-formula-oracles", [
        (f"{k} posterior matches dense oracle: worst rel {v:.2e} <= 1e-10",
         v <= 1e-10) for k, v in worst.items()])


def test_c06_curvature_equals_half_hessian():
    checks = []
    for name in ("example1", "example2"):
        model = gm.builtin_model(name)
        theta0 = np.ones(model.p)
        f0 = model.solution(theta0)
        kv = make_knots(6, 5)
        quad = knot_quadrature(kv, 10)
        ing = compute_ingredients(model, f0, theta0, basis=kv, quad=quad)
        h = 1e-4
        hess = np.empty((model.p, model.p))
        for k in range(model.p):
            for l in range(model.p):
                ek, el = np.eye(model.p)[k] * h, np.eye(model.p)[l] * h
                vals = [gm.defect(f0, model, theta0 + s1 * ek + s2 * el,
                                  quad=quad) ** 2
                        for s1, s2 in ((1, 1), (1, -1), (-1, 1), (-1, -1))]
                hess[k, l] = (vals[0] - vals[1] - vals[2] + vals[3]) / (4 * h * h)
        rel = np.abs(ing.curvature - 0.5 * hess).max() / np.abs(ing.curvature).max()
        checks.append((f"{name}: |J - hessian/2| rel {rel:.2e} <= 1e-4",
                       rel <= 1e-4))
    criterion("C6", "curvature-half-hessian", checks)


def test_c07_linearization_second_order():
    checks = []
    rng = np.random.default_rng(707)
    for name in ("example1", "example2"):
        model = gm.builtin_model(name)
        theta0 = np.ones(model.p)
        f0 = model.solution(theta0)
        kv = make_knots(6, 5)
        quad = knot_quadrature(kv, 10)
        ing = compute_ingredients(model, f0, theta0, basis=kv, quad=quad)
        zc = 0.5 * rng.normal(size=(kv.dimension, model.d))

        def perturbed(eps):
            return TrueFunction(
                d=model.d,
                value=lambda t: f0.value(t) + eps * (basis_matrix(kv, t, 0) @ zc),
                deriv=lambda t: f0.deriv(t) + eps * (basis_matrix(kv, t, 1) @ zc))

        def remainder(eps):
            theta = psi(perturbed(eps), model, quad=quad).theta
            lin = np.linalg.solve(
                ing.curvature,
                ing.gamma(lambda t: eps * (basis_matrix(kv, t, 0) @ zc)))
            return np.linalg.norm(theta - theta0 - lin)

        ratio = remainder(0.02) / remainder(0.01)
        checks.append((f"{name}: remainder(eps)/remainder(eps/2) = "
                       f"{ratio:.2f} in [3.5, 4.5]", 3.5 <= ratio <= 4.5))
    criterion("C7", "linearization-second-order", checks)


def test_c08_normal_approximation_trend():
    model = gm.builtin_model("example1")
    theta0 = np.array([1.0])
    f0 = model.solution(theta0)
    cfg = StudyConfig(model="example1", sigma2_mode="fixed", seed=42,
                      n_list=(100, 1000))
    medians = {}
    for n in (100, 1000):
        k_n = default_k_n(cfg, n)
        kv = make_knots(k_n, 5)
        quad = knot_quadrature(kv, 10)
        ing = compute_ingredients(model, f0, theta0, basis=kv, quad=quad)
        x = (2.0 * np.arange(1, n + 1) - 1.0) / (2.0 * n)
        dm = design_matrix(kv, x)
        tvs = []
        for rep in range(20):
            _, y = simulate_data(cfg, n, rep)
            law = bvm_normal(ing, dm, y, sigma2=1.0)
            post = coeff_posterior(dm, y, 1.0)
            draws = sample_coeffs(post, 1000, rng_stream(cfg.seed, "bvm", n, rep))
            batch = project_draws(draws, kv, model, quad=quad)
            scaled = np.sqrt(n) * (batch.thetas[batch.ok] - theta0)
            tvs.append(tv_diagnostic(scaled, law).value)
        medians[n] = float(np.median(tvs))
    criterion("C8", "normal-approximation-trend", [
        (f"median TV at n=1000 ({medians[1000]:.3f}) < median TV at "
         f"n=100 ({medians[100]:.3f})", medians[1000] < medians[100])])


def test_c09_simulate_determinism(tmp_path):
    import json
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({
        "schema_version": 1, "model": "example1", "case": "well_specified",
        "error_law": "normal", "n_list": [50, 100], "replications": 6,
        "posterior_draws": 100, "bootstrap_resamples": 40, "seed": 99}))
    rc1 = cli_main(["simulate", "--config", str(cfg_path),
                    "--out", str(tmp_path / "run1"), "--no-figures"])
    rc2 = cli_main(["simulate", "--config", str(cfg_path),
                    "--out", str(tmp_path / "run2"), "--no-figures"])
    same = ((tmp_path / "run1" / "study.csv").read_bytes()
            == (tmp_path / "run2" / "study.csv").read_bytes())
    criterion("C9", "simulate-determinism", [
        ("both runs exited 0", rc1 == 0 and rc2 == 0),
        ("identical config produced byte-identical CSV", same)])


def test_c10_spline_property_suite():
    checks = []
    pou_worst = 0.0
    for k_n, m in ((1, 1), (4, 4), (6, 5), (10, 3)):
        kv = make_knots(k_n, m)
        t = np.concatenate([np.linspace(0, 1, 101), kv.interior_knots])
        pou_worst = max(pou_worst,
                        np.abs(basis_matrix(kv, t, 0).sum(axis=1) - 1.0).max())
    checks.append((f"partition of unity: worst |sum - 1| = {pou_worst:.2e} "
                   "<= 1e-12", pou_worst <= 1e-12))

    kv = make_knots(5, 5)
    rng = np.random.default_rng(10)
    ts = rng.uniform(0.05, 0.95, 60)
    ts = ts[np.min(np.abs(ts[:, None] - kv.interior_knots[None, :]), axis=1) > 0.01]
    h = 1e-6
    worst_rel = 0.0
    for r in (1, 2):
        fd = (basis_matrix(kv, ts + h, r - 1)
              - basis_matrix(kv, ts - h, r - 1)) / (2.0 * h)
        vals = basis_matrix(kv, ts, r)
        worst_rel = max(worst_rel,
                        np.abs(vals - fd).max() / np.abs(vals).max())
    checks.append((f"derivatives vs finite differences: worst rel "
                   f"{worst_rel:.2e} <= 1e-5", worst_rel <= 1e-5))

    kv = make_knots(8, 5)
    x = (2.0 * np.arange(1, 501) - 1.0) / 1000.0
    dm = design_matrix(kv, x)
    eigs = np.linalg.eigvalsh(dm.gram() / dm.n) * 8
    checks.append((f"Gram eigenvalues x k_n in [0.005, 2]: "
                   f"[{eigs.min():.4f}, {eigs.max():.4f}]",
                   eigs.min() > 0.005 and eigs.max() < 2.0))
    criterion("C10", "spline-property-suite", checks)
