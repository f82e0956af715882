"""Moment estimators of the latent multivariate mean and covariance."""

from __future__ import annotations

import itertools as itt
import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
import scipy.optimize
from scipy.special import log_ndtr, ndtr
from scipy.stats import norm
from tqdm.contrib.concurrent import thread_map

from .data import FunctionalDataset, ResponseKind, SubjectCovariates
from .smoothing import (
    GridSpec,
    SmoothedCurve,
    SmoothedSurface,
    SmootherConfig,
    smooth_curve,
    smooth_surface,
)
from .utils import DataError, DimensionError

__all__ = [
    "CLAMP",
    "LatentCovarianceEstimate",
    "MomentEstimates",
    "assemble",
    "cross_block",
    "estimate_latent_covariance",
    "estimate_moments",
    "export_blocks",
    "k11_hat",
    "k12_hat",
    "k22_hat",
    "residualize",
]

logger = logging.getLogger(__name__)

#: Binary mean estimates are clamped to [CLAMP, 1 - CLAMP] before inverting the link
CLAMP = 0.025

Pair = tuple[int, int]


@dataclass(frozen=True)
class MomentEstimates:
    """Smoothed first and second moments of the observed responses."""

    grid: GridSpec
    kinds: Mapping[int, ResponseKind]
    #: :math:`\hat{\eta}_p`, the smoothed mean of each response on the observed scale
    eta: Mapping[int, SmoothedCurve]
    #: :math:`\hat{\mu}_p = g_p^{-1}(\hat{\eta}_p)` on the grid, using clamped values
    mu: Mapping[int, np.ndarray]
    #: :math:`\hat{S}_{pp'}` for each pair of responses with :math:`p \le p'`
    second: Mapping[Pair, SmoothedSurface]

    @property
    def responses(self) -> list[int]:
        """Get the response identifiers."""
        return list(self.kinds)

    def link_derivative(self, response: int) -> np.ndarray:
        """Get :math:`g_p^{(1)}\\{\\hat{\\mu}_p(t)\\}` on the grid."""
        return self.kinds[response].g_derivative(self.mu[response])


def _pairs(
    dataset: FunctionalDataset,
    response: int,
    other: int,
    values: np.ndarray | None = None,
    other_values: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Get all same-subject pairs of locations and the products of their values."""
    y = dataset.y if values is None else values
    z = dataset.y if other_values is None else other_values
    ts, ss, vs = [], [], []
    for i in range(dataset.n_subjects):
        rows = dataset.subject_slice(i)
        left = np.flatnonzero(dataset.response[rows] == response) + rows.start
        right = np.flatnonzero(dataset.response[rows] == other) + rows.start
        if not len(left) or not len(right):
            continue
        ts.append(np.repeat(dataset.t[left], len(right)))
        ss.append(np.tile(dataset.t[right], len(left)))
        vs.append(np.outer(y[left], z[right]).ravel())
    if not ts:
        return np.empty(0), np.empty(0), np.empty(0)
    return np.concatenate(ts), np.concatenate(ss), np.concatenate(vs)


def _clamped_mu(kind: ResponseKind, response: int, eta: np.ndarray) -> np.ndarray:
    if kind is ResponseKind.gaussian:
        return kind.g_inverse(eta)
    clamped = np.clip(eta, CLAMP, 1 - CLAMP)
    n_clamped = int(np.sum(clamped != eta))
    if n_clamped:
        logger.warning(
            "clamped the mean of binary response %d into [%s, %s] at %d grid points",
            response,
            CLAMP,
            1 - CLAMP,
            n_clamped,
        )
    return kind.g_inverse(clamped)


def estimate_moments(
    dataset: FunctionalDataset,
    cfg: SmootherConfig | None = None,
    grid: GridSpec | None = None,
    *,
    threads: int = 1,
) -> MomentEstimates:
    """Estimate the smoothed means and second moments of each response.

    :param dataset: A scaled dataset, or its residuals from :func:`residualize`
    :param cfg: The smoother configuration
    :param grid: The evaluation grid. Defaults to 101 points over the dataset's domain.
    :param threads: The number of smooths to run concurrently
    :returns: The smoothed moments. Second moments pool the products
        :math:`Y_{pi}(t) Y_{p'i}(t')` over subjects with the diagonal :math:`t = t'`
        removed. Only same-response surfaces are symmetrized.
    """
    cfg = cfg or SmootherConfig()
    grid = grid or GridSpec.over(dataset.domain)
    responses = dataset.responses

    eta: dict[int, SmoothedCurve] = {}
    mu: dict[int, np.ndarray] = {}
    for response in responses:
        mask = dataset.response == response
        curve = smooth_curve(dataset.t[mask], dataset.y[mask], cfg, grid)
        eta[response] = curve
        mu[response] = _clamped_mu(dataset.kind(response), response, curve.values)

    pairs = list(itt.combinations_with_replacement(responses, 2))

    def _smooth(pair: Pair) -> SmoothedSurface:
        t, s, v = _pairs(dataset, *pair)
        return smooth_surface(
            t, s, v, cfg, grid, remove_diagonal=True, symmetrize=pair[0] == pair[1]
        )

    surfaces = thread_map(
        _smooth,
        pairs,
        max_workers=max(threads, 1),
        desc="Smoothing second moments",
        unit="surface",
        leave=False,
        disable=None,
    )
    return MomentEstimates(
        grid=grid,
        kinds=dict(dataset.response_kinds),
        eta=eta,
        mu=mu,
        second=dict(zip(pairs, surfaces)),
    )


def cross_block(m: MomentEstimates, response: int, other: int) -> np.ndarray:
    """Get :math:`\\tilde{K}_{pp'}` from the second moment and the link derivatives.

    This is :math:`\\{\\hat{S}_{pp'} - \\hat{\\eta}_p(t) \\hat{\\eta}_{p'}(t')\\} /
    [g_p^{(1)}\\{\\hat{\\mu}_p(t)\\} g_{p'}^{(1)}\\{\\hat{\\mu}_{p'}(t')\\}]`, where the
    derivative is 1 for Gaussian responses.
    """
    if (response, other) in m.second:
        second = m.second[response, other].values
    elif (other, response) in m.second:
        second = m.second[other, response].values.T
    else:
        raise DimensionError(f"no second moment for responses ({response}, {other})")
    numerator = second - np.outer(m.eta[response].values, m.eta[other].values)
    return numerator / np.outer(m.link_derivative(response), m.link_derivative(other))


def k22_hat(m: MomentEstimates, response: int = 2) -> np.ndarray:
    """Estimate the latent auto-covariance of a binary response.

    :raises DataError: if the response isn't binary
    """
    if m.kinds[response] is not ResponseKind.binary:
        raise DataError(f"response {response} is not binary")
    return cross_block(m, response, response)


def k12_hat(m: MomentEstimates, continuous: int = 1, binary: int = 2) -> np.ndarray:
    """Estimate the latent cross-covariance between a continuous and a binary response.

    Rows are indexed by the continuous response's location and columns by the binary
    response's location. The result is not symmetrized.
    """
    if m.kinds[continuous] is not ResponseKind.gaussian:
        raise DataError(f"response {continuous} is not Gaussian")
    if m.kinds[binary] is not ResponseKind.binary:
        raise DataError(f"response {binary} is not binary")
    return cross_block(m, continuous, binary)


def k11_hat(
    dataset: FunctionalDataset,
    m: MomentEstimates,
    cfg: SmootherConfig | None = None,
    grid: GridSpec | None = None,
    response: int = 1,
) -> np.ndarray:
    """Estimate the auto-covariance of a continuous response.

    Observations are centered by :math:`\\hat{\\eta}_p`, then the cross-products are
    smoothed with the diagonal removed, which excludes the measurement error variance.
    """
    if dataset.kind(response) is not ResponseKind.gaussian:
        raise DataError(f"response {response} is not Gaussian")
    grid = grid or m.grid
    centered = dataset.y - m.eta[response](dataset.t)
    t, s, v = _pairs(dataset, response, response, centered, centered)
    return smooth_surface(t, s, v, cfg, grid, remove_diagonal=True, symmetrize=True).values


@dataclass(frozen=True)
class LatentCovarianceEstimate:
    """The P x P block covariance of the latent process on a common grid."""

    grid: GridSpec
    responses: tuple[int, ...]
    blocks: Mapping[Pair, np.ndarray]

    def block(self, response: int, other: int) -> np.ndarray:
        """Get :math:`\\tilde{K}_{pp'}` as a G x G matrix."""
        return self.blocks[response, other]

    @property
    def matrix(self) -> np.ndarray:
        """Get the assembled (P G) x (P G) covariance matrix."""
        return np.block([[self.blocks[p, q] for q in self.responses] for p in self.responses])

    def subset(self, responses: Iterable[int]) -> LatentCovarianceEstimate:
        """Get the estimate restricted to some responses."""
        keep = tuple(p for p in self.responses if p in set(responses))
        return LatentCovarianceEstimate(
            grid=self.grid,
            responses=keep,
            blocks={(p, q): self.blocks[p, q] for p in keep for q in keep},
        )


def assemble(
    blocks: Mapping[Pair, np.ndarray], grid: GridSpec, responses: Sequence[int] | None = None
) -> LatentCovarianceEstimate:
    """Combine the block estimates into a symmetric latent covariance.

    :param blocks: Blocks for each pair of responses with :math:`p \\le p'`. The block
        for :math:`(p', p)` is filled in as the transpose of :math:`(p, p')`.
    :param grid: The grid shared by all blocks
    :param responses: The response order. Defaults to the sorted responses in ``blocks``.
    :returns: The assembled estimate
    :raises DimensionError: if a block isn't G x G or a block is missing
    """
    if responses is None:
        responses = sorted({p for pair in blocks for p in pair})
    shape = (grid.size, grid.size)
    rv: dict[Pair, np.ndarray] = {}
    for p, q in itt.combinations_with_replacement(responses, 2):
        if (p, q) in blocks:
            value = np.asarray(blocks[p, q], dtype=float)
        elif (q, p) in blocks:
            value = np.asarray(blocks[q, p], dtype=float).T
        else:
            raise DimensionError(f"missing covariance block ({p}, {q})")
        if value.shape != shape:
            raise DimensionError(f"block ({p}, {q}) has shape {value.shape}, expected {shape}")
        if p == q:
            value = (value + value.T) / 2
        rv[p, q] = value
        rv[q, p] = value.T
    return LatentCovarianceEstimate(grid=grid, responses=tuple(responses), blocks=rv)


def estimate_latent_covariance(
    dataset: FunctionalDataset,
    cfg: SmootherConfig | None = None,
    grid: GridSpec | None = None,
    *,
    threads: int = 1,
) -> tuple[MomentEstimates, LatentCovarianceEstimate]:
    """Estimate the latent covariance of all responses.

    Continuous auto-covariances come from :func:`k11_hat` and all other blocks from
    :func:`cross_block`, which reduces to :func:`k22_hat` and :func:`k12_hat` for a
    continuous and a binary response.
    """
    grid = grid or GridSpec.over(dataset.domain)
    moments = estimate_moments(dataset, cfg, grid, threads=threads)
    blocks: dict[Pair, np.ndarray] = {}
    for p, q in itt.combinations_with_replacement(dataset.responses, 2):
        if p == q and dataset.kind(p) is ResponseKind.gaussian:
            blocks[p, q] = k11_hat(dataset, moments, cfg, grid, response=p)
        else:
            blocks[p, q] = cross_block(moments, p, q)
    logger.info(
        "estimated latent covariance of %d responses on %d grid points",
        len(dataset.responses),
        grid.size,
    )
    return moments, assemble(blocks, grid, dataset.responses)


def _probit_fit(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Fit a probit regression by maximum likelihood."""
    sign = 2 * y - 1

    def _objective(gamma: np.ndarray) -> tuple[float, np.ndarray]:
        z = sign * (x @ gamma)
        log_cdf = log_ndtr(z)
        # d/dz log Phi(z) = phi(z) / Phi(z)
        ratio = np.exp(norm.logpdf(z) - log_cdf)
        return -float(log_cdf.sum()), -(x.T @ (sign * ratio))

    result = scipy.optimize.minimize(_objective, np.zeros(x.shape[1]), jac=True, method="BFGS")
    if not result.success:
        logger.warning("probit regression did not converge: %s", result.message)
    return result.x


def residualize(
    dataset: FunctionalDataset,
    covariates: SubjectCovariates | None = None,
    *,
    names: Sequence[str] | None = None,
    subject_intercept: bool = False,
) -> FunctionalDataset:
    """Remove the effect of subject-level covariates before estimating the covariance.

    Gaussian responses are regressed on the covariates by least squares and binary
    responses by probit regression. Binary residuals are re-centred on the probability
    scale, :math:`Y - \\Phi(x^T \\hat{\\gamma}) + \\overline{\\Phi(x^T \\hat{\\gamma})}`.
    With a subject intercept, each subject's mean is also removed from its Gaussian
    responses while binary responses are left as they are.

    :param dataset: A scaled dataset
    :param covariates: Subject-level covariates
    :param names: The covariates to adjust for. Defaults to all of them.
    :param subject_intercept: Should subject means of Gaussian responses be removed?
    :returns: A dataset of residuals in the same storage order
    """
    y = dataset.y.copy()
    if covariates is not None and len(covariates):
        names = list(names) if names is not None else list(covariates.names)
        columns = [covariates.names.index(name) for name in names]
        table = np.array([covariates.get(s)[columns] for s in dataset.subject_ids]).reshape(
            dataset.n_subjects, len(columns)
        )
        for response in dataset.responses:
            mask = dataset.response == response
            x = np.column_stack([np.ones(mask.sum()), table[dataset.subject_index[mask]]])
            if dataset.kind(response) is ResponseKind.gaussian:
                gamma, *_ = np.linalg.lstsq(x, y[mask], rcond=None)
                # keep the overall level, only the covariate effect is removed
                y[mask] = y[mask] - x[:, 1:] @ gamma[1:]
            else:
                fitted = ndtr(x @ _probit_fit(x, y[mask]))
                y[mask] = y[mask] - fitted + fitted.mean()
    if subject_intercept:
        for response in dataset.gaussian_responses:
            mask = dataset.response == response
            index = dataset.subject_index[mask]
            totals = np.bincount(index, weights=y[mask], minlength=dataset.n_subjects)
            counts = np.bincount(index, minlength=dataset.n_subjects)
            means = totals / np.maximum(counts, 1)
            y[mask] = y[mask] - means[index]
    return dataset.with_values(y)


def export_blocks(estimate: LatentCovarianceEstimate, directory: str | Path) -> list[Path]:
    """Write each block as a CSV with the grid as row and column headers.

    :returns: The paths of the written files, named ``K_<p>_<p'>.csv``
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    points = estimate.grid.points
    rv = []
    for p, q in itt.product(estimate.responses, repeat=2):
        path = directory.joinpath(f"K_{p}_{q}.csv")
        pd.DataFrame(estimate.block(p, q), index=points, columns=points).to_csv(
            path, index_label="t"
        )
        rv.append(path)
    return rv

