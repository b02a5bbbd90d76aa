"""Command-line front end: fit one dataset, run studies, compute asymptotics.

Subcommands
-----------
fit          credible + bootstrap intervals for a delimited dataset
simulate     Monte-Carlo coverage study from a config file
asymptotics  normal-approximation report (curvature, mean, covariance, TV)

All commands read a JSON config (schema of the study harness), write their
reports under ``--out``, render figures alongside the delimited output
(disable with ``--no-figures``), and exit nonzero with a machine-readable
JSON error on stderr when something fails.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .asymptotics import (bvm_normal, compute_ingredients,
                          rate_condition_warnings, tv_diagnostic)
from .config import (canonical_config_json, load_config, read_data_file,
                     run_manifest, write_data_file)
from .errors import GradmatchError, InvalidArgumentError
from .models import builtin_model, misspecified_truth
from .study import (StudyConfig, bayes_interval, bootstrap_interval,
                    default_k_n, frequentist_two_step, pseudo_true_parameter,
                    run_study, simulate_data, study_rows_csv)

EXIT_CODES = {
    "invalid-argument": 2,
    "parse-error": 3,
    "ill-posed-design": 4,
    "numeric-error": 5,
    "optimization-failure": 6,
    "model-degeneracy": 7,
    "domain-error": 8,
    "error": 1,
}


def _apply_overrides(cfg: StudyConfig, args) -> StudyConfig:
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "replications", None) is not None:
        updates["replications"] = args.replications
    if getattr(args, "draws", None) is not None:
        updates["posterior_draws"] = args.draws
    if getattr(args, "bootstrap", None) is not None:
        updates["bootstrap_resamples"] = args.bootstrap
    return dataclasses.replace(cfg, **updates).validate() if updates else cfg


def _load_dataset(cfg: StudyConfig, data_path):
    t, y = read_data_file(data_path)
    model = builtin_model(cfg.model)
    if y.shape[1] != model.d:
        raise InvalidArgumentError(
            f"data has {y.shape[1]} response columns but model "
            f"{cfg.model!r} has dimension {model.d}")
    return model, t, y


def _write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def cmd_fit(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    model, t, y = _load_dataset(cfg, args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    bayes = bayes_interval(t, y, cfg)
    boot = bootstrap_interval(t, y, cfg)
    n = len(t)

    draws_path = out / "theta_draws.csv"
    header = ",".join(f"theta{j + 1}" for j in range(model.p))
    lines = [header] + [",".join(repr(float(v)) for v in row)
                        for row in bayes.thetas]
    draws_path.write_text("\n".join(lines) + "\n")

    report = {
        "n": n,
        "k_n": default_k_n(cfg, n),
        "m": cfg.m,
        "credible_level": cfg.credible_level,
        "bayes_intervals": bayes.intervals,
        "bootstrap_intervals": boot.intervals,
        "two_step_estimate": boot.theta_hat,
        "sigma2": bayes.sigma2_summary,
        "projection_diagnostics": {
            "posterior_draws": cfg.posterior_draws,
            "posterior_failed": bayes.n_failed,
            "posterior_valid": bayes.valid,
            "bootstrap_resamples": cfg.bootstrap_resamples,
            "bootstrap_failed": boot.n_failed,
            "bootstrap_valid": boot.valid,
        },
        "warnings": rate_condition_warnings(n, default_k_n(cfg, n), cfg.m),
    }
    _write_json(out / "report.json", _jsonable(report))
    outputs = {"report": out / "report.json", "theta_draws": draws_path}
    if not args.no_figures:
        from .figures import save_fit_figures
        figs = save_fit_figures(bayes.thetas, bayes.intervals, out,
                                boot_estimates=boot.estimates)
        outputs.update({f"figure_{i}": p for i, p in enumerate(figs)})
    _write_json(out / "manifest.json",
                run_manifest(cfg, {"config": args.config, "data": args.data},
                             outputs))
    iv = bayes.intervals
    for j in range(model.p):
        print(f"theta{j + 1}: {cfg.credible_level:.0%} credible interval "
              f"[{iv[j, 0]:.6g}, {iv[j, 1]:.6g}], two-step estimate "
              f"{boot.theta_hat[j]:.6g}")
    return 0


def cmd_simulate(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = run_study(cfg, jobs=args.jobs,
                       checkpoint_dir=out / "checkpoints")
    csv_text = study_rows_csv(result)
    (out / "study.csv").write_text(csv_text)
    metadata = dict(result.metadata)
    metadata["config_echo"] = canonical_config_json(cfg)
    metadata["failed_cells"] = result.failed_cells
    _write_json(out / "metadata.json", _jsonable(metadata))
    outputs = {"study": out / "study.csv", "metadata": out / "metadata.json"}
    if args.dump_data:
        data_dir = out / "data"
        data_dir.mkdir(exist_ok=True)
        for n in cfg.n_list:
            for rep in range(cfg.replications):
                x, y = simulate_data(cfg, int(n), rep)
                write_data_file(data_dir / f"n{n}_rep{rep}.csv", x, y)
        outputs["data_dir"] = data_dir
    if not args.no_figures:
        from .figures import save_study_figures
        figs = save_study_figures(result, out)
        outputs.update({f"figure_{i}": p for i, p in enumerate(figs)})
    _write_json(out / "manifest.json",
                run_manifest(cfg, {"config": args.config}, outputs))
    sys.stdout.write(csv_text)
    if result.failed_cells:
        print(f"warning: {len(result.failed_cells)} cell(s) exceeded the 10% "
              "invalid-replication budget", file=sys.stderr)
    return 0


def cmd_asymptotics(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    model, t, y = _load_dataset(cfg, args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n = len(t)
    k_n = default_k_n(cfg, n)

    from .posterior import (coeff_posterior, ols_coefficients, rng_stream,
                            sample_coeffs, sample_hierarchical,
                            sigma2_posterior)
    from .projection import SplineFunction, knot_quadrature, project_draws
    from .splines import design_matrix, make_knots

    kv = make_knots(k_n, cfg.m)
    quad = knot_quadrature(kv, cfg.quad_order)
    dm = design_matrix(kv, t)

    estimated_theta0 = False
    if cfg.case == "well_specified" and model.solution is not None:
        theta0 = np.asarray(model.reference_theta, dtype=float)
        f0 = model.solution(theta0)
    elif cfg.case == "misspecified":
        f0 = misspecified_truth(f"{cfg.model}_case2")
        theta0 = pseudo_true_parameter(cfg.model)
    else:
        estimated_theta0 = True
        theta0 = frequentist_two_step(t, y, cfg)
        f0 = SplineFunction(kv, ols_coefficients(dm, y))

    ing = compute_ingredients(model, f0, theta0, basis=kv, quad=quad)

    mode = cfg.resolved_sigma2_mode()
    rng = rng_stream(cfg.seed, "asymptotics-draws", n)
    if mode == "fixed":
        sigma2 = cfg.sigma2_fixed
        draws = sample_coeffs(coeff_posterior(dm, y, sigma2),
                              cfg.posterior_draws, rng)
    elif mode == "plugin":
        sigma2 = sigma2_posterior(dm, y, cfg.ig_a, cfg.ig_b).mean
        draws = sample_coeffs(coeff_posterior(dm, y, sigma2, scaled_prior=True),
                              cfg.posterior_draws, rng)
    else:
        sigma2 = sigma2_posterior(dm, y, cfg.ig_a, cfg.ig_b).mean
        _, draws = sample_hierarchical(dm, y, cfg.ig_a, cfg.ig_b,
                                       cfg.posterior_draws, rng)
    law = bvm_normal(ing, dm, y, sigma2)

    batch = project_draws(draws, kv, model, quad=quad)
    scaled = np.sqrt(n) * (batch.thetas[batch.ok] - theta0)
    tv = (tv_diagnostic(scaled, law) if scaled.shape[0] >= 500 else None)

    report = {
        "n": n, "k_n": k_n, "m": cfg.m,
        "theta0": theta0,
        "estimated_theta0": estimated_theta0,
        "sigma2": sigma2,
        "sigma2_mode": mode,
        "curvature": ing.curvature,
        "gamma_f0": ing.gamma_f0,
        "normal_mean": law.mean,
        "normal_cov": law.cov,
        "normal_cov_eigenvalues": np.linalg.eigvalsh(law.cov),
        "gram_min_eigenvalues": ing.gram_min_eigenvalues(),
        "tv_diagnostic": (None if tv is None else
                          {"value": tv.value, "estimator": tv.estimator,
                           "draws_used": tv.draws_used}),
        "projection_failed": int((~batch.ok).sum()),
        "warnings": rate_condition_warnings(n, k_n, cfg.m),
    }
    _write_json(out / "report.json", _jsonable(report))
    outputs = {"report": out / "report.json"}
    if not args.no_figures:
        from .figures import save_normal_figure
        figs = save_normal_figure(scaled, law, out)
        outputs.update({f"figure_{i}": p for i, p in enumerate(figs)})
    _write_json(out / "manifest.json",
                run_manifest(cfg, {"config": args.config, "data": args.data},
                             outputs))
    for msg in report["warnings"]:
        print(f"warning: {msg}", file=sys.stderr)
    print(json.dumps(_jsonable({"normal_mean": law.mean,
                                "tv_diagnostic": report["tv_diagnostic"]})))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gradmatch",
        description="Two-step (gradient-matching) inference for ODE models")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=False):
        p.add_argument("--config", required=True, help="JSON config file")
        if data:
            p.add_argument("--data", required=True,
                           help="delimited data file (t, y1..yd; header)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--no-figures", action="store_true",
                       help="skip figure rendering")

    p_fit = sub.add_parser("fit", help="interval report for one dataset")
    common(p_fit, data=True)
    p_fit.add_argument("--draws", type=int, default=None)
    p_fit.add_argument("--bootstrap", type=int, default=None)
    p_fit.set_defaults(func=cmd_fit)

    p_sim = sub.add_parser("simulate", help="Monte-Carlo coverage study")
    common(p_sim)
    p_sim.add_argument("--replications", type=int, default=None)
    p_sim.add_argument("--draws", type=int, default=None)
    p_sim.add_argument("--bootstrap", type=int, default=None)
    p_sim.add_argument("--jobs", type=int, default=1)
    p_sim.add_argument("--dump-data", action="store_true",
                       help="also write the simulated datasets")
    p_sim.set_defaults(func=cmd_simulate)

    p_asy = sub.add_parser("asymptotics",
                           help="normal-approximation report for a dataset")
    common(p_asy, data=True)
    p_asy.add_argument("--draws", type=int, default=None)
    p_asy.set_defaults(func=cmd_asymptotics)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except GradmatchError as exc:
        payload = {"error": exc.category, "message": str(exc)}
        if getattr(exc, "line", None) is not None:
            payload["line"] = exc.line
        print(json.dumps(payload), file=sys.stderr)
        return EXIT_CODES.get(exc.category, 1)


if __name__ == "__main__":
    sys.exit(main())
