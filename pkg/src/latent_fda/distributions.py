"""Random variate generators used by the Gibbs sampler."""

from __future__ import annotations

from typing import Literal

import numpy as np
from scipy import stats
from scipy.special import ndtr, ndtri

from .utils import NumericalError, check_square

__all__ = [
    "TAIL_THRESHOLD",
    "sample_inverse_gamma",
    "sample_inverse_wishart",
    "sample_mvn_precision",
    "sample_truncated_normal",
    "sample_wishart",
]

#: Standardized bounds beyond this use rejection sampling instead of the inverse CDF
TAIL_THRESHOLD = 5.0

Side = Literal["positive", "negative"]


def _standard_lower_tail(a: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Sample a standard normal truncated to :math:`(a, \\infty)`, element-wise."""
    rv = np.empty_like(a)

    body = np.abs(a) <= TAIL_THRESHOLD
    if body.any():
        # inverse CDF in survival form, P(Z > z) = Phi(-z)
        u = 1.0 - rng.uniform(size=int(body.sum()))
        rv[body] = -ndtri(u * ndtr(-a[body]))

    # far below the bound nearly every normal draw is admissible
    low = np.flatnonzero(a < -TAIL_THRESHOLD)
    while len(low):
        z = rng.standard_normal(len(low))
        accepted = z > a[low]
        rv[low[accepted]] = z[accepted]
        low = low[~accepted]

    # exponential proposal with the optimal rate for the far tail
    high = np.flatnonzero(a > TAIL_THRESHOLD)
    while len(high):
        bound = a[high]
        rate = (bound + np.sqrt(bound**2 + 4)) / 2
        z = bound + rng.standard_exponential(len(high)) / rate
        accepted = rng.uniform(size=len(high)) <= np.exp(-((z - rate) ** 2) / 2)
        rv[high[accepted]] = z[accepted]
        high = high[~accepted]
    return rv


def sample_truncated_normal(
    mean: float | np.ndarray,
    sd: float | np.ndarray,
    side: Side | np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Sample normals conditioned to be positive or negative.

    :param mean: The mean(s) of the untruncated normal
    :param sd: The standard deviation(s), which must be positive
    :param side: ``"positive"`` for :math:`(0, \\infty)`, ``"negative"`` for
        :math:`(-\\infty, 0)`, or a boolean array that is true where draws must be positive
    :param rng: A random generator
    :returns: An array of draws, broadcast over the inputs, that strictly satisfy the
        sign constraints

    >>> rng = np.random.default_rng(0)
    >>> bool((sample_truncated_normal(np.zeros(100), 1.0, "negative", rng) < 0).all())
    True
    """
    if isinstance(side, str):
        if side not in ("positive", "negative"):
            raise ValueError(f"unknown side: {side}")
        positive = np.asarray(side == "positive")
    else:
        positive = np.asarray(side, dtype=bool)
    mean, sd, positive = np.broadcast_arrays(
        np.asarray(mean, dtype=float), np.asarray(sd, dtype=float), positive
    )
    if np.any(sd <= 0):
        raise ValueError("standard deviations must be positive")
    direction = np.where(positive, 1.0, -1.0).ravel()
    mean, sd = mean.ravel(), sd.ravel()
    # reflect negative-side draws so that both sides are lower-bounded
    bound = -direction * mean / sd
    rv = mean + direction * sd * _standard_lower_tail(bound, rng)
    # rounding at the bound can land exactly on zero
    bad = np.flatnonzero(direction * rv <= 0)
    while len(bad):
        redraw = mean[bad] + direction[bad] * sd[bad] * _standard_lower_tail(bound[bad], rng)
        rv[bad] = redraw
        bad = bad[direction[bad] * redraw <= 0]
    return rv.reshape(positive.shape)


def sample_wishart(
    scale: np.ndarray, df: float, rng: np.random.Generator, size: int | None = None
) -> np.ndarray:
    """Sample from a Wishart distribution with the Bartlett decomposition.

    :param scale: The m x m positive definite scale matrix V
    :param df: The degrees of freedom, which must exceed m - 1
    :param rng: A random generator
    :param size: The number of draws. If none, a single m x m matrix is returned.
    :returns: Draws with mean ``df * scale``
    :raises NumericalError: if the degrees of freedom are too small or the scale
        isn't positive definite
    """
    scale = np.asarray(scale, dtype=float)
    check_square("the Wishart scale", scale)
    m = scale.shape[0]
    if df <= m - 1:
        raise NumericalError(f"Wishart degrees of freedom {df} must exceed {m - 1}")
    try:
        chol = np.linalg.cholesky(scale)
    except np.linalg.LinAlgError as e:
        raise NumericalError("the Wishart scale is not positive definite") from e
    n = 1 if size is None else size
    a = np.zeros((n, m, m))
    diagonal = np.diag_indices(m)
    a[:, diagonal[0], diagonal[1]] = np.sqrt(
        stats.chi2.rvs(df=df - np.arange(m), size=(n, m), random_state=rng)
    )
    lower = np.tril_indices(m, k=-1)
    a[:, lower[0], lower[1]] = rng.standard_normal((n, m * (m - 1) // 2))
    factor = chol @ a
    rv = factor @ np.swapaxes(factor, -1, -2)
    return rv[0] if size is None else rv


def sample_inverse_wishart(
    precision_scale: np.ndarray, df: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Sample a covariance whose inverse is Wishart distributed.

    :param precision_scale: The scale V of the Wishart distribution of the precision
    :param df: The degrees of freedom
    :param rng: A random generator
    :returns: A pair of the covariance and its precision
    """
    precision = sample_wishart(precision_scale, df, rng)
    try:
        chol = np.linalg.cholesky(precision)
    except np.linalg.LinAlgError as e:
        raise NumericalError("the sampled precision is not positive definite") from e
    chol_inv = np.linalg.inv(chol)
    covariance = chol_inv.T @ chol_inv
    covariance = (covariance + covariance.T) / 2
    return covariance, precision


def sample_inverse_gamma(
    shape: float | np.ndarray, rate: float | np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Sample an inverse gamma with the given shape and rate (scale of the inverse)."""
    return np.asarray(rate, dtype=float) / rng.standard_gamma(shape)


def sample_mvn_precision(
    precision: np.ndarray, linear: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Sample :math:`N(Q^{-1} b, Q^{-1})`, batched over leading axes.

    :param precision: An array of positive definite precision matrices Q with shape
        (..., m, m)
    :param linear: The linear terms b with shape (..., m)
    :param rng: A random generator
    :returns: Draws with shape (..., m)
    :raises NumericalError: if a precision matrix is not positive definite
    """
    try:
        chol = np.linalg.cholesky(precision)
    except np.linalg.LinAlgError as e:
        raise NumericalError("a precision matrix is not positive definite") from e
    mean = np.linalg.solve(precision, linear[..., None])[..., 0]
    z = rng.standard_normal(linear.shape)
    noise = np.linalg.solve(np.swapaxes(chol, -1, -2), z[..., None])[..., 0]
    return mean + noise
