"""Seeded Monte-Carlo study harness for interval coverage and length.

Reproduces the simulation design of the built-in examples: design points
x_i = (2i-1)/(2n), normal or t errors, equal-tailed credible intervals
from posterior draws of the projected parameter, and a frequentist
two-step estimator with residual-bootstrap percentile intervals.  Every
replication draws from its own RNG stream keyed by (master seed, purpose,
n, replication index), so results are independent of scheduling, worker
count, and resume state.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__ as _version
from .errors import InvalidArgumentError
from .models import builtin_model, misspecified_truth
from .posterior import (coeff_posterior, ols_coefficients, rng_stream,
                        sample_coeffs, sample_hierarchical, sigma2_posterior)
from .projection import (SplineFunction, knot_quadrature, panel_quadrature,
                         project_draws, psi)
from .splines import design_matrix, make_knots

__all__ = ["StudyConfig", "IntervalSummary", "BayesFit", "BootstrapFit",
           "StudyResult", "default_k_n", "simulate_data", "bayes_interval",
           "frequentist_two_step", "bootstrap_interval", "run_study",
           "percentile_interval", "study_rows_csv", "pseudo_true_parameter"]

CASES = ("well_specified", "misspecified")
ERROR_LAWS = ("normal", "student_t")
SIGMA2_MODES = ("fixed", "plugin", "hierarchical")
BOOTSTRAP_SCHEMES = ("residual", "pairs")
PAPER_SCALE = 1000   # replications/draws/resamples used by the reference study

CSV_HEADER = ("model,case,n,method,coord,coverage,coverage_se,"
              "length,length_se,R_valid")


@dataclass(frozen=True)
class StudyConfig:
    """Full description of a coverage study; hashable and JSON-serializable."""

    model: str = "example1"
    case: str = "well_specified"
    error_law: str = "normal"
    error_scale: float = 1.0
    t_dof: int = 6
    standardize_t: bool = False
    n_list: tuple = (50, 100, 200, 500, 1000)
    replications: int = PAPER_SCALE
    posterior_draws: int = PAPER_SCALE
    bootstrap_resamples: int = PAPER_SCALE
    k_n: Optional[int] = None          # explicit override of the rule below
    k_n_coef: float = 3.0              # k_n = max(2, ceil(coef * n^(1/9)))
    m: int = 5
    # the frequentist/bootstrap route may use its own (classical, stiffer)
    # spline stage; None shares the Bayes basis
    bootstrap_k_n: Optional[int] = None
    bootstrap_m: Optional[int] = None
    sigma2_mode: Optional[str] = None  # None resolves per model (see below)
    sigma2_fixed: float = 1.0
    ig_a: float = 1.0
    ig_b: float = 1.0
    credible_level: float = 0.95
    seed: int = 0
    quad_order: int = 10
    bootstrap_scheme: str = "residual"

    def validate(self) -> "StudyConfig":
        if self.case not in CASES:
            raise InvalidArgumentError(f"case must be one of {CASES}")
        if self.error_law not in ERROR_LAWS:
            raise InvalidArgumentError(f"error_law must be one of {ERROR_LAWS}")
        if self.bootstrap_scheme not in BOOTSTRAP_SCHEMES:
            raise InvalidArgumentError(
                f"bootstrap_scheme must be one of {BOOTSTRAP_SCHEMES}")
        if self.sigma2_mode is not None and self.sigma2_mode not in SIGMA2_MODES:
            raise InvalidArgumentError(f"sigma2_mode must be one of {SIGMA2_MODES}")
        if not self.n_list or any(int(n) <= 0 for n in self.n_list):
            raise InvalidArgumentError("n_list must hold positive sample sizes")
        for count, what in ((self.replications, "replications"),
                            (self.posterior_draws, "posterior_draws"),
                            (self.bootstrap_resamples, "bootstrap_resamples"),
                            (self.t_dof, "t_dof"), (self.m, "m"),
                            (self.quad_order, "quad_order")):
            if int(count) <= 0:
                raise InvalidArgumentError(f"{what} must be positive")
        if not 0.0 < self.credible_level < 1.0:
            raise InvalidArgumentError("credible_level must lie in (0, 1)")
        if self.error_scale < 0.0:
            raise InvalidArgumentError("error_scale must be nonnegative")
        if self.seed < 0:
            raise InvalidArgumentError("seed must be nonnegative")
        if self.ig_a <= 0.0 or self.ig_b <= 0.0:
            raise InvalidArgumentError("inverse-gamma parameters must be positive")
        if (self.bootstrap_k_n is not None and self.bootstrap_k_n <= 0) or (
                self.bootstrap_m is not None and self.bootstrap_m <= 0):
            raise InvalidArgumentError("bootstrap basis sizes must be positive")
        for n in self.n_list:
            k_n = default_k_n(self, int(n))
            if k_n + self.m - 1 > int(n):
                raise InvalidArgumentError(
                    f"basis dimension {k_n + self.m - 1} exceeds n={n}")
            bk, bm = self.bootstrap_basis_sizes(int(n))
            if bk + bm - 1 > int(n):
                raise InvalidArgumentError(
                    f"bootstrap basis dimension {bk + bm - 1} exceeds n={n}")
        if self.case == "misspecified" and f"{self.model}_case2" not in (
                "example1_case2", "example2_case2"):
            raise InvalidArgumentError(
                f"no misspecified truth registered for model {self.model!r}")
        builtin_model(self.model)   # raises on unknown model names
        return self

    def resolved_sigma2_mode(self) -> str:
        """Fixed variance for example2 (its reference study fixes sigma = 1);
        hierarchical everywhere else."""
        if self.sigma2_mode is not None:
            return self.sigma2_mode
        return "fixed" if self.model == "example2" else "hierarchical"

    def bootstrap_basis_sizes(self, n: int):
        """(k_n, m) of the spline stage used by the two-step/bootstrap route."""
        k_n = self.bootstrap_k_n if self.bootstrap_k_n is not None else default_k_n(self, n)
        m = self.bootstrap_m if self.bootstrap_m is not None else self.m
        return int(k_n), int(m)


def default_k_n(cfg: StudyConfig, n: int) -> int:
    """Knot-interval count: explicit override or max(2, ceil(coef * n^{1/9}))."""
    if cfg.k_n is not None:
        return int(cfg.k_n)
    return max(2, int(np.ceil(cfg.k_n_coef * float(n) ** (1.0 / 9.0))))


def _truth(cfg: StudyConfig):
    """Data-generating mean and the parameter against which coverage is scored."""
    model = builtin_model(cfg.model)
    if cfg.case == "well_specified":
        if model.solution is None or model.reference_theta is None:
            raise InvalidArgumentError(
                f"model {cfg.model!r} has no analytic solution to simulate from")
        theta0 = np.asarray(model.reference_theta, dtype=float)
        return model.solution(theta0), theta0
    f0 = misspecified_truth(f"{cfg.model}_case2")
    return f0, pseudo_true_parameter(cfg.model)


_PSEUDO_TRUE_CACHE: dict = {}


def pseudo_true_parameter(model_name: str) -> np.ndarray:
    """Projection of the misspecified truth: the parameter the intervals chase."""
    if model_name not in _PSEUDO_TRUE_CACHE:
        model = builtin_model(model_name)
        f0 = misspecified_truth(f"{model_name}_case2")
        quad = panel_quadrature(np.linspace(0.0, 1.0, 65), 12)
        _PSEUDO_TRUE_CACHE[model_name] = psi(f0, model, quad=quad).theta
    return _PSEUDO_TRUE_CACHE[model_name]


def simulate_data(cfg: StudyConfig, n: int, replication_index: int):
    """Design x_i = (2i-1)/(2n) and responses Y = f0(x) + eps.

    Student-t errors are used as generated (variance dof/(dof-2) times
    error_scale^2) unless ``standardize_t`` rescales them to unit variance.
    Deterministic in (seed, n, replication_index).
    """
    f0, _ = _truth(cfg)
    x = (2.0 * np.arange(1, n + 1) - 1.0) / (2.0 * n)
    rng = rng_stream(cfg.seed, "data", n, replication_index)
    d = f0.d
    if cfg.error_law == "normal":
        eps = rng.standard_normal((n, d))
    else:
        eps = rng.standard_t(cfg.t_dof, size=(n, d))
        if cfg.standardize_t:
            eps /= np.sqrt(cfg.t_dof / (cfg.t_dof - 2.0))
    return x, f0.value(x) + cfg.error_scale * eps


def percentile_interval(draws: np.ndarray, level: float) -> np.ndarray:
    """Equal-tailed type-1 (inverted CDF) interval per coordinate, shape (p, 2)."""
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 1:
        draws = draws[:, None]
    alpha = (1.0 - level) / 2.0
    qs = np.quantile(draws, [alpha, 1.0 - alpha], axis=0, method="inverted_cdf")
    return qs.T


def _study_basis(cfg: StudyConfig, n: int):
    kv = make_knots(default_k_n(cfg, n), cfg.m)
    return kv, knot_quadrature(kv, cfg.quad_order)


def _bootstrap_basis(cfg: StudyConfig, n: int):
    k_n, m = cfg.bootstrap_basis_sizes(n)
    kv = make_knots(k_n, m)
    return kv, knot_quadrature(kv, cfg.quad_order)


@dataclass(frozen=True)
class BayesFit:
    """Posterior-draw intervals for one dataset."""

    intervals: np.ndarray        # (p, 2)
    thetas: np.ndarray           # (draws, p) with NaN for failed projections
    n_failed: int
    valid: bool
    sigma2_summary: dict


def bayes_interval(x, y, cfg: StudyConfig, replication_index: int = 0) -> BayesFit:
    """Equal-tailed credible intervals for the projected parameter.

    Draws coefficient matrices from the posterior (variance handling per
    ``cfg.resolved_sigma2_mode()``), projects each draw, and takes empirical
    quantiles.  A replication is invalid when more than 5% of the draws fail
    to project.
    """
    cfg.validate()
    model = builtin_model(cfg.model)
    n = len(x)
    kv, quad = _study_basis(cfg, n)
    dm = design_matrix(kv, x)
    rng = rng_stream(cfg.seed, "draws", n, replication_index)
    mode = cfg.resolved_sigma2_mode()
    if mode == "fixed":
        post = coeff_posterior(dm, y, cfg.sigma2_fixed)
        draws = sample_coeffs(post, cfg.posterior_draws, rng)
        sigma2_summary = {"mode": "fixed", "sigma2": cfg.sigma2_fixed}
    elif mode == "plugin":
        marginal = sigma2_posterior(dm, y, cfg.ig_a, cfg.ig_b)
        post = coeff_posterior(dm, y, marginal.mean, scaled_prior=True)
        draws = sample_coeffs(post, cfg.posterior_draws, rng)
        sigma2_summary = {"mode": "plugin", "sigma2": marginal.mean,
                          "shape": marginal.shape, "rate": marginal.rate}
    else:
        marginal = sigma2_posterior(dm, y, cfg.ig_a, cfg.ig_b)
        sig2, draws = sample_hierarchical(dm, y, cfg.ig_a, cfg.ig_b,
                                          cfg.posterior_draws, rng)
        sigma2_summary = {"mode": "hierarchical", "shape": marginal.shape,
                          "rate": marginal.rate,
                          "posterior_mean": marginal.mean,
                          "draw_mean": float(sig2.mean())}
    batch = project_draws(draws, kv, model, quad=quad)
    n_failed = int((~batch.ok).sum())
    valid = n_failed <= 0.05 * cfg.posterior_draws
    thetas = batch.thetas
    intervals = (percentile_interval(thetas[batch.ok], cfg.credible_level)
                 if batch.ok.any() else np.full((model.p, 2), np.nan))
    return BayesFit(intervals=intervals, thetas=thetas, n_failed=n_failed,
                    valid=valid, sigma2_summary=sigma2_summary)


def frequentist_two_step(x, y, cfg: StudyConfig) -> np.ndarray:
    """Least-squares spline fit followed by projection onto the parameter box.

    Uses the bootstrap-route basis (``bootstrap_k_n``/``bootstrap_m`` when
    set, else the shared study basis).
    """
    cfg.validate()
    model = builtin_model(cfg.model)
    kv, quad = _bootstrap_basis(cfg, len(x))
    dm = design_matrix(kv, x)
    y2 = np.asarray(y, dtype=float)
    if y2.ndim == 1:
        y2 = y2[:, None]
    beta = ols_coefficients(dm, y2)
    batch = project_draws(beta[None], kv, model, quad=quad)
    if not batch.ok[0]:
        return psi(SplineFunction(kv, beta), model, quad=quad).theta
    return batch.thetas[0]


@dataclass(frozen=True)
class BootstrapFit:
    """Percentile bootstrap intervals for one dataset."""

    intervals: np.ndarray        # (p, 2)
    estimates: np.ndarray        # (resamples, p) with NaN for failed refits
    theta_hat: np.ndarray        # two-step estimate on the original data
    n_failed: int
    valid: bool


def bootstrap_interval(x, y, cfg: StudyConfig,
                       replication_index: int = 0) -> BootstrapFit:
    """Percentile intervals from bootstrap refits of the two-step estimator.

    The default scheme recenters the spline-fit residual rows and resamples
    them with replacement; ``bootstrap_scheme="pairs"`` resamples (x, y)
    pairs instead.  A replication is invalid when more than 5% of the
    refits fail.
    """
    cfg.validate()
    model = builtin_model(cfg.model)
    n = len(x)
    kv, quad = _bootstrap_basis(cfg, n)
    dm = design_matrix(kv, x)
    y2 = np.asarray(y, dtype=float)
    if y2.ndim == 1:
        y2 = y2[:, None]
    beta = ols_coefficients(dm, y2)
    theta_hat = frequentist_two_step(x, y2, cfg)
    rng = rng_stream(cfg.seed, "bootstrap", n, replication_index)
    b_count = cfg.bootstrap_resamples

    if cfg.bootstrap_scheme == "residual":
        fitted = dm.values @ beta
        resid = y2 - fitted
        centered = resid - resid.mean(axis=0, keepdims=True)
        idx = rng.integers(0, n, size=(b_count, n))
        y_star = fitted[None] + centered[idx]
        proj = np.linalg.solve(dm.gram(), dm.values.T)
        beta_star = np.einsum("kn,bnd->bkd", proj, y_star)
        batch = project_draws(beta_star, kv, model, quad=quad)
        estimates, ok = batch.thetas, batch.ok
    else:
        estimates = np.full((b_count, model.p), np.nan)
        ok = np.zeros(b_count, dtype=bool)
        for b in range(b_count):
            rows = np.sort(rng.integers(0, n, size=n))
            try:
                estimates[b] = frequentist_two_step(x[rows], y2[rows], cfg)
                ok[b] = True
            except Exception:
                continue

    n_failed = int((~ok).sum())
    valid = n_failed <= 0.05 * b_count
    intervals = (percentile_interval(estimates[ok], cfg.credible_level)
                 if ok.any() else np.full((model.p, 2), np.nan))
    return BootstrapFit(intervals=intervals, estimates=estimates,
                        theta_hat=theta_hat, n_failed=n_failed, valid=valid)


@dataclass(frozen=True)
class IntervalSummary:
    """One aggregated study cell: coverage and length for a method/coordinate."""

    model: str
    case: str
    n: int
    method: str
    coord: int
    coverage: float
    coverage_se: float
    length: float
    length_se: float
    r_valid: int


@dataclass
class StudyResult:
    config: StudyConfig
    rows: list = field(default_factory=list)
    failed_cells: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def row(self, n: int, method: str, coord: int) -> IntervalSummary:
        for r in self.rows:
            if (r.n, r.method, r.coord) == (n, method, coord):
                return r
        raise KeyError((n, method, coord))


def _replicate(cfg: StudyConfig, n: int, rep: int, theta0: np.ndarray) -> dict:
    """One replication: simulate, fit both methods, score coverage/length."""
    x, y = simulate_data(cfg, n, rep)
    out = {"n": n, "rep": rep}
    bayes = bayes_interval(x, y, cfg, replication_index=rep)
    boot = bootstrap_interval(x, y, cfg, replication_index=rep)
    for method, fit in (("bayes", bayes), ("bootstrap", boot)):
        iv = fit.intervals
        covered = (iv[:, 0] <= theta0) & (theta0 <= iv[:, 1])
        out[method] = {"covered": [bool(c) for c in covered],
                       "length": [float(v) for v in iv[:, 1] - iv[:, 0]],
                       "valid": bool(fit.valid),
                       "n_failed": int(fit.n_failed)}
    return out


def _worker(args):
    return _replicate(*args)


def run_study(cfg: StudyConfig, jobs: int = 1,
              checkpoint_dir: Optional[str] = None) -> StudyResult:
    """Run the full study: replications x sample sizes x both methods.

    Returns aggregated coverage/length rows with binomial standard errors
    for coverage and standard errors of the mean for length.  When
    ``checkpoint_dir`` is given, completed replications are appended to a
    JSONL file keyed by the config hash and reused on the next run; resumed
    and fresh runs produce identical aggregates.
    """
    from .config import config_hash
    cfg.validate()
    _, theta0 = _truth(cfg)
    start = time.time()

    done: dict = {}
    checkpoint_path = None
    if checkpoint_dir is not None:
        checkpoint_path = (Path(checkpoint_dir)
                           / f"study-{config_hash(cfg)}.jsonl")
        checkpoint_path.parent.mkdir(parents=True, exist_ok=True)
        if checkpoint_path.exists():
            with checkpoint_path.open() as fh:
                for line in fh:
                    rec = json.loads(line)
                    done[(rec["n"], rec["rep"])] = rec

    tasks = [(cfg, int(n), rep, theta0)
             for n in cfg.n_list for rep in range(cfg.replications)
             if (int(n), rep) not in done]
    if tasks:
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                fresh = list(pool.map(_worker, tasks, chunksize=8))
        else:
            fresh = [_replicate(*t) for t in tasks]
        if checkpoint_path is not None:
            with checkpoint_path.open("a") as fh:
                for rec in fresh:
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")
        for rec in fresh:
            done[(rec["n"], rec["rep"])] = rec

    model = builtin_model(cfg.model)
    result = StudyResult(config=cfg)
    for n in cfg.n_list:
        n = int(n)
        recs = [done[(n, rep)] for rep in range(cfg.replications)]
        for method in ("bayes", "bootstrap"):
            cell = [r[method] for r in recs]
            valid = [c for c in cell if c["valid"]]
            r_valid = len(valid)
            invalid_frac = 1.0 - r_valid / cfg.replications
            if invalid_frac > 0.10:
                result.failed_cells.append(
                    {"n": n, "method": method,
                     "invalid_fraction": invalid_frac})
            for coord in range(model.p):
                if r_valid == 0:
                    cov = cov_se = length = length_se = float("nan")
                else:
                    covered = np.array([c["covered"][coord] for c in valid], float)
                    lengths = np.array([c["length"][coord] for c in valid])
                    cov = covered.mean()
                    cov_se = float(np.sqrt(cov * (1.0 - cov) / r_valid))
                    length = float(lengths.mean())
                    length_se = float(lengths.std(ddof=1) / np.sqrt(r_valid)
                                      if r_valid > 1 else np.nan)
                result.rows.append(IntervalSummary(
                    model=cfg.model, case=cfg.case, n=n, method=method,
                    coord=coord, coverage=float(cov), coverage_se=cov_se,
                    length=length, length_se=length_se, r_valid=r_valid))

    result.metadata = {
        "config": asdict(cfg),
        "config_hash": config_hash(cfg),
        "version": _version,
        "elapsed_seconds": time.time() - start,
        "reduced_scale": (cfg.replications < PAPER_SCALE
                          or cfg.posterior_draws < PAPER_SCALE
                          or cfg.bootstrap_resamples < PAPER_SCALE),
        "theta0": [float(v) for v in theta0],
    }
    return result


def study_rows_csv(result: StudyResult) -> str:
    """Render aggregated rows as deterministic CSV text."""
    lines = [CSV_HEADER]
    rows = sorted(result.rows, key=lambda r: (r.n, r.method, r.coord))
    for r in rows:
        lines.append(
            f"{r.model},{r.case},{r.n},{r.method},{r.coord},"
            f"{r.coverage:.6f},{r.coverage_se:.6f},"
            f"{r.length:.6f},{r.length_se:.6f},{r.r_valid}")
    return "\n".join(lines) + "\n"
