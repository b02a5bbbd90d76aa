"""Matplotlib rendering of study, fit, and normal-approximation reports.

All figures are written to files (Agg backend, no display) next to the
delimited outputs they illustrate.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from scipy import stats  # noqa: E402

__all__ = ["save_study_figures", "save_fit_figures", "save_normal_figure"]

_METHOD_STYLE = {"bayes": dict(color="#1f77b4", marker="o"),
                 "bootstrap": dict(color="#d62728", marker="s")}


def save_study_figures(result, out_dir) -> list:
    """Coverage-vs-n and length-vs-n panels per coordinate; returns paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = result.config
    coords = sorted({r.coord for r in result.rows})
    paths = []
    for kind in ("coverage", "length"):
        fig, axes = plt.subplots(1, len(coords), squeeze=False,
                                 figsize=(4.5 * len(coords), 3.4))
        for ax, coord in zip(axes[0], coords):
            for method, style in _METHOD_STYLE.items():
                rows = sorted((r for r in result.rows
                               if r.method == method and r.coord == coord),
                              key=lambda r: r.n)
                ns = [r.n for r in rows]
                if kind == "coverage":
                    vals = [100.0 * r.coverage for r in rows]
                    errs = [100.0 * r.coverage_se for r in rows]
                else:
                    vals = [r.length for r in rows]
                    errs = [r.length_se for r in rows]
                ax.errorbar(ns, vals, yerr=errs, label=method, capsize=3,
                            **style)
            ax.set_xscale("log")
            ax.set_xlabel("n")
            if kind == "coverage":
                ax.axhline(100.0 * cfg.credible_level, color="gray", lw=0.8,
                           ls="--")
                ax.set_ylabel("coverage (%)")
            else:
                ax.set_yscale("log")
                ax.set_ylabel("mean interval length")
            ax.set_title(f"{cfg.model} {cfg.case} ({cfg.error_law}), "
                         f"theta{coord + 1}")
            ax.legend(fontsize=8)
        fig.tight_layout()
        path = out_dir / f"study_{kind}.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        paths.append(path)
    return paths


def save_fit_figures(thetas, intervals, out_dir, boot_estimates=None) -> list:
    """Histogram of projected posterior draws with interval markers."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    thetas = np.asarray(thetas)
    paths = []
    for j in range(thetas.shape[1]):
        vals = thetas[:, j]
        vals = vals[np.isfinite(vals)]
        fig, ax = plt.subplots(figsize=(4.8, 3.4))
        ax.hist(vals, bins=40, density=True, color="#1f77b4", alpha=0.65,
                label="posterior draws")
        if boot_estimates is not None:
            b = np.asarray(boot_estimates)[:, j]
            b = b[np.isfinite(b)]
            ax.hist(b, bins=40, density=True, color="#d62728", alpha=0.35,
                    label="bootstrap refits")
        for v in np.asarray(intervals)[j]:
            ax.axvline(v, color="k", lw=1.0, ls="--")
        ax.set_xlabel(f"theta{j + 1}")
        ax.set_ylabel("density")
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = out_dir / f"fit_theta{j + 1}.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        paths.append(path)
    return paths


def save_normal_figure(scaled_draws, law, out_dir) -> list:
    """Scaled posterior draws against the approximating normal law."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    draws = np.asarray(scaled_draws)
    if draws.ndim == 1:
        draws = draws[:, None]
    p = draws.shape[1]
    fig, ax = plt.subplots(figsize=(4.8, 3.4))
    if p == 1:
        sd = float(np.sqrt(law.cov[0, 0]))
        grid = np.linspace(law.mean[0] - 4 * sd, law.mean[0] + 4 * sd, 301)
        ax.hist(draws[:, 0], bins=50, density=True, color="#1f77b4",
                alpha=0.65, label="scaled draws")
        ax.plot(grid, stats.norm.pdf(grid, law.mean[0], sd), "k-",
                label="normal approximation")
        ax.set_xlabel("sqrt(n) (theta - theta0)")
    else:
        ax.scatter(draws[:, 0], draws[:, 1], s=4, alpha=0.3,
                   color="#1f77b4", label="scaled draws")
        vals, vecs = np.linalg.eigh(law.cov[:2, :2])
        angle = np.linspace(0, 2 * np.pi, 200)
        circ = np.stack([np.cos(angle), np.sin(angle)])
        for radius in (1.0, 2.0):
            ell = law.mean[:2, None] + vecs @ (radius * np.sqrt(vals)[:, None] * circ)
            ax.plot(ell[0], ell[1], "k-", lw=0.9)
        ax.set_xlabel("coordinate 1")
        ax.set_ylabel("coordinate 2")
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(out_dir) / "normal_approximation.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return [path]
