"""Closed-form posteriors over spline coefficients and the error variance.

The working model is Y = X B + eps with Gaussian errors and a mean-zero
Gaussian prior on each coefficient column whose covariance is
(n / k_n) (XtX)^{-1}, optionally scaled by sigma^2 when sigma^2 itself gets
an inverse-gamma prior.  Everything here is exact linear algebra; sampling
is the only stochastic step and is fully determined by the seed.
"""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass
from typing import Union

import numpy as np
import scipy.linalg

from .errors import IllPosedDesignError, InvalidArgumentError, NumericError
from .splines import DesignMatrix

__all__ = ["CoeffPosterior", "MatrixNormalPosterior", "Sigma2Posterior",
           "coeff_posterior", "sigma2_posterior", "matrix_normal_posterior",
           "sample_coeffs", "sample_hierarchical", "ols_coefficients",
           "rng_stream", "cholesky_with_jitter"]

logger = logging.getLogger(__name__)

JITTER_LADDER = (0.0, 1e-12, 1e-10, 1e-8)


def rng_stream(seed: int, *keys) -> np.random.Generator:
    """Independent generator for (seed, keys); stable across platforms.

    String keys are hashed with crc32 so purpose labels ("data", "draws", ...)
    can tag streams.  Identical arguments always produce identical streams,
    regardless of scheduling or worker count.
    """
    spawn = tuple(zlib.crc32(k.encode()) if isinstance(k, str) else int(k)
                  for k in keys)
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed),
                                                        spawn_key=spawn))


def cholesky_with_jitter(a: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, escalating diagonal jitter up to 1e-8 if needed."""
    scale = max(np.trace(a) / len(a), 1.0)
    for jitter in JITTER_LADDER:
        try:
            factor = np.linalg.cholesky(a + jitter * scale * np.eye(len(a)))
            if jitter > 0.0:
                logger.warning("covariance required jitter %.0e for Cholesky", jitter)
            return factor
        except np.linalg.LinAlgError:
            continue
    raise NumericError("covariance not positive definite even with 1e-8 jitter")


def _solve_gram(design: DesignMatrix, rhs: np.ndarray) -> np.ndarray:
    """Solve (XtX) z = rhs, raising IllPosedDesignError when rank deficient."""
    xtx = design.gram()
    try:
        cf = scipy.linalg.cho_factor(xtx)
    except scipy.linalg.LinAlgError:
        empty = np.flatnonzero(~design.values.any(axis=0))
        detail = (f"; basis columns {list(empty)} receive no data"
                  if empty.size else "")
        raise IllPosedDesignError(
            f"XtX is singular (n={design.n}, dimension={design.dimension})"
            f"{detail}", deficient_columns=empty) from None
    return scipy.linalg.cho_solve(cf, rhs)


def ols_coefficients(design: DesignMatrix, y: np.ndarray) -> np.ndarray:
    """Least-squares coefficients (XtX)^{-1} Xt y; y may be (n,) or (n, d)."""
    y = np.asarray(y, dtype=float)
    y2 = y[:, None] if y.ndim == 1 else y
    if y2.shape[0] != design.n:
        raise InvalidArgumentError(
            f"response rows {y2.shape[0]} != design rows {design.n}")
    beta = _solve_gram(design, design.values.T @ y2)
    return beta[:, 0] if y.ndim == 1 else beta


@dataclass(frozen=True)
class CoeffPosterior:
    """Independent Gaussian posteriors over the d coefficient columns.

    ``mean`` is (dimension, d); ``cov`` is the shared (dimension, dimension)
    covariance; ``shrink`` is the scalar factor applied to the least-squares
    fit.  ``scaled_prior`` records whether the prior covariance carried the
    sigma^2 factor (the hierarchical parameterization).
    """

    mean: np.ndarray
    cov: np.ndarray
    shrink: float
    sigma2: float
    segments: int
    n: int
    scaled_prior: bool = False

    @property
    def d(self) -> int:
        return self.mean.shape[1]

    @property
    def dimension(self) -> int:
        return self.mean.shape[0]


def coeff_posterior(design: DesignMatrix, y: np.ndarray, sigma2: float,
                    scaled_prior: bool = False) -> CoeffPosterior:
    """Exact coefficient posterior for a given error variance.

    With the unscaled prior the column posteriors are
    N(s (XtX)^{-1} Xt y_j, (1/sigma^2 + k_n/n)^{-1} (XtX)^{-1}) with
    s = (1 + sigma^2 k_n / n)^{-1}.  With ``scaled_prior`` (prior covariance
    multiplied by sigma^2, as used under the inverse-gamma variance prior)
    the shrink factor becomes (1 + k_n/n)^{-1} and the covariance
    sigma^2 (1 + k_n/n)^{-1} (XtX)^{-1}.
    """
    if sigma2 <= 0.0:
        raise InvalidArgumentError(f"sigma2 must be positive, got {sigma2}")
    y = np.asarray(y, dtype=float)
    y2 = y[:, None] if y.ndim == 1 else y
    k_n, n = design.basis.segments, design.n
    ols = ols_coefficients(design, y2)
    inv_xtx = _solve_gram(design, np.eye(design.dimension))
    if scaled_prior:
        shrink = 1.0 / (1.0 + k_n / n)
        cov = sigma2 * shrink * inv_xtx
    else:
        shrink = 1.0 / (1.0 + sigma2 * k_n / n)
        cov = inv_xtx / (1.0 / sigma2 + k_n / n)
    return CoeffPosterior(mean=shrink * ols, cov=0.5 * (cov + cov.T),
                          shrink=shrink, sigma2=float(sigma2),
                          segments=k_n, n=n, scaled_prior=scaled_prior)


@dataclass(frozen=True)
class Sigma2Posterior:
    """Inverse-gamma marginal posterior of the working error variance."""

    shape: float
    rate: float

    @property
    def mean(self) -> float:
        if self.shape <= 1.0:
            raise NumericError(f"inverse-gamma mean undefined for shape {self.shape}")
        return self.rate / (self.shape - 1.0)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return 1.0 / rng.gamma(self.shape, scale=1.0 / self.rate, size=size)


def sigma2_posterior(design: DesignMatrix, y: np.ndarray, a: float,
                     b: float) -> Sigma2Posterior:
    """Inverse-gamma posterior parameters under an IG(a, b) prior on sigma^2."""
    if a <= 0.0 or b <= 0.0:
        raise InvalidArgumentError("inverse-gamma prior parameters must be positive")
    y = np.asarray(y, dtype=float)
    y2 = y[:, None] if y.ndim == 1 else y
    k_n, n = design.basis.segments, design.n
    d = y2.shape[1]
    ols = ols_coefficients(design, y2)
    # Yt P_X Y column sums, with P_X the projection onto the spline span
    proj = float(np.sum((design.values @ ols) * y2))
    total = float(np.sum(y2 * y2))
    shape = (d * (n - design.dimension) + 2.0 * a) / 2.0
    rate = b + 0.5 * (total - proj / (1.0 + k_n / n))
    return Sigma2Posterior(shape=shape, rate=rate)


@dataclass(frozen=True)
class MatrixNormalPosterior:
    """Matrix-normal posterior over the coefficient matrix (correlated errors).

    vec(B) ~ N(vec(mean), col_cov kron row_cov) with row covariance
    (XtX)^{-1} and column covariance (Sigma^{-1} + k_n I_d / n)^{-1}.
    """

    mean: np.ndarray       # (dimension, d)
    row_cov: np.ndarray    # (dimension, dimension)
    col_cov: np.ndarray    # (d, d)

    @property
    def d(self) -> int:
        return self.mean.shape[1]

    @property
    def dimension(self) -> int:
        return self.mean.shape[0]


def _check_spd(a: np.ndarray, what: str) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidArgumentError(f"{what} must be a square matrix")
    if not np.allclose(a, a.T, atol=1e-12):
        raise InvalidArgumentError(f"{what} must be symmetric")
    if np.linalg.eigvalsh(a).min() <= 0.0:
        raise InvalidArgumentError(f"{what} must be positive definite")
    return 0.5 * (a + a.T)


def matrix_normal_posterior(design: DesignMatrix, y: np.ndarray,
                            sigma: np.ndarray) -> MatrixNormalPosterior:
    """Coefficient posterior when error rows share a known covariance Sigma."""
    sigma = _check_spd(sigma, "error covariance")
    y = np.asarray(y, dtype=float)
    if y.ndim != 2 or y.shape[1] != sigma.shape[0]:
        raise InvalidArgumentError(
            f"Y must be (n, {sigma.shape[0]}) to match Sigma, got {y.shape}")
    k_n, n = design.basis.segments, design.n
    d = sigma.shape[0]
    ols = ols_coefficients(design, y)
    # Sigma^{-1} (Sigma^{-1} + k_n I/n)^{-1} simplifies to (I + k_n Sigma/n)^{-1}
    shrink = np.linalg.inv(np.eye(d) + (k_n / n) * sigma)
    col_cov = sigma @ shrink
    row_cov = _solve_gram(design, np.eye(design.dimension))
    return MatrixNormalPosterior(mean=ols @ shrink,
                                 row_cov=0.5 * (row_cov + row_cov.T),
                                 col_cov=0.5 * (col_cov + col_cov.T))


Posterior = Union[CoeffPosterior, MatrixNormalPosterior]


def sample_coeffs(post: Posterior, count: int,
                  seed: Union[int, np.random.Generator]) -> np.ndarray:
    """Draw ``count`` coefficient matrices, shape (count, dimension, d).

    Draws are i.i.d. from the posterior via Cholesky factors; the same seed
    always reproduces the same draws bit for bit.
    """
    if count < 1:
        raise InvalidArgumentError(f"count must be >= 1, got {count}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    z = rng.standard_normal((count, post.dimension, post.d))
    if isinstance(post, CoeffPosterior):
        root = cholesky_with_jitter(post.cov)
        return post.mean[None] + np.einsum("kl,cld->ckd", root, z)
    row_root = cholesky_with_jitter(post.row_cov)
    col_root = cholesky_with_jitter(post.col_cov)
    return post.mean[None] + np.einsum("kl,cld,md->ckm", row_root, z, col_root)


def sample_hierarchical(design: DesignMatrix, y: np.ndarray, a: float, b: float,
                        count: int, seed: Union[int, np.random.Generator]):
    """Joint draws (sigma2, B) under the hierarchical variance prior.

    sigma^2 is drawn from its inverse-gamma marginal posterior, then the
    coefficients from the conditional Gaussian posterior given sigma^2.
    Returns ``(sigma2_draws, coeff_draws)`` with shapes (count,) and
    (count, dimension, d).
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    sig2 = sigma2_posterior(design, y, a, b).sample(rng, count)
    base = coeff_posterior(design, y, sigma2=1.0, scaled_prior=True)
    root = cholesky_with_jitter(base.cov)   # conditional cov is sigma^2 * base.cov
    z = rng.standard_normal((count, base.dimension, base.d))
    draws = base.mean[None] + np.sqrt(sig2)[:, None, None] * np.einsum(
        "kl,cld->ckd", root, z)
    return sig2, draws
