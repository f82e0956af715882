"""Multivariate functional principal components of the latent covariance."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
import scipy.linalg
from pydantic import BaseModel, Field

from .latent_cov import LatentCovarianceEstimate
from .smoothing import GridSpec
from .utils import (
    DegenerateCovarianceError,
    DimensionError,
    DomainError,
    as_float_array,
    check_symmetric,
)

__all__ = [
    "EigenSystem",
    "FpcaBasis",
    "GridCurves",
    "TruncationRule",
    "build_basis",
    "eigendecompose",
    "export_eigensystem",
    "truncate",
    "univariate_fpca",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EigenSystem:
    """The positive eigenvalues and L2-orthonormal eigenfunctions of a latent covariance."""

    grid: GridSpec
    responses: tuple[int, ...]
    #: positive eigenvalues, in descending order
    eigenvalues: np.ndarray
    #: eigenfunctions with shape (n, P, G), indexed by component, response, grid point
    eigenfunctions: np.ndarray

    @property
    def n(self) -> int:
        """Get the number of positive eigenvalues."""
        return len(self.eigenvalues)

    def inner_products(self) -> np.ndarray:
        """Get the Riemann-sum L2 inner products between all pairs of eigenfunctions."""
        flat = self.eigenfunctions.reshape(self.n, -1)
        return flat @ flat.T * self.grid.spacing


def eigendecompose(estimate: LatentCovarianceEstimate) -> EigenSystem:
    """Solve the quadrature-weighted eigenproblem of a latent covariance.

    The eigenvectors of :math:`\\Delta K` are rescaled by :math:`1 / \\sqrt{\\Delta}` so
    that they are orthonormal under the Riemann-sum inner product. Only positive
    eigenvalues are kept. Each eigenfunction's largest-magnitude entry is made positive.

    :raises DimensionError: if the assembled covariance isn't symmetric
    """
    matrix = estimate.matrix
    check_symmetric("the latent covariance", matrix)
    delta = estimate.grid.spacing
    values, vectors = scipy.linalg.eigh(delta * matrix)
    order = np.argsort(values)[::-1]
    values, vectors = values[order], vectors[:, order]
    tolerance = np.max(np.abs(values), initial=0.0) * len(values) * np.finfo(float).eps
    keep = values > tolerance
    values, vectors = values[keep], vectors[:, keep] / np.sqrt(delta)
    if len(values):
        pivots = np.argmax(np.abs(vectors), axis=0)
        vectors = vectors * np.sign(vectors[pivots, np.arange(vectors.shape[1])])
    eigenfunctions = vectors.T.reshape(len(values), len(estimate.responses), estimate.grid.size)
    logger.debug("found %d positive eigenvalues", len(values))
    return EigenSystem(
        grid=estimate.grid,
        responses=estimate.responses,
        eigenvalues=values,
        eigenfunctions=eigenfunctions,
    )


class TruncationRule(BaseModel):
    """Thresholds on the proportion of variation explained by the components."""

    p1: float = Field(0.99, gt=0, le=1, description="The cumulative threshold")
    p2: float | None = Field(
        None,
        gt=0,
        lt=1,
        description="The individual threshold. Defaults to one over the number of "
        "positive eigenvalues.",
    )


def truncate(es: EigenSystem, rule: TruncationRule | None = None) -> int:
    """Choose the number of components, :math:`M = \\min\\{k: p_{1k} \\ge P_1, p_{2k} < P_2\\}`.

    Here :math:`p_{1k}` is the cumulative and :math:`p_{2k}` the individual proportion
    of the sum of positive eigenvalues. If no k satisfies both conditions, all
    positive components are kept.

    :raises DegenerateCovarianceError: if there are no positive eigenvalues
    """
    rule = rule or TruncationRule()
    if not es.n:
        raise DegenerateCovarianceError("the latent covariance has no positive eigenvalues")
    p2 = rule.p2 if rule.p2 is not None else 1 / es.n
    total = es.eigenvalues.sum()
    cumulative = np.cumsum(es.eigenvalues) / total
    individual = es.eigenvalues / total
    candidates = np.flatnonzero((cumulative >= rule.p1 - 1e-12) & (individual < p2))
    if not len(candidates):
        logger.warning(
            "no number of components satisfies P1=%s and P2=%s, keeping all %d", rule.p1, p2, es.n
        )
        return es.n
    return int(candidates[0]) + 1


@dataclass(frozen=True)
class GridCurves:
    """Curves stored on a grid with linear interpolation, usable as a response basis."""

    grid: GridSpec
    #: shape (dimension, G)
    values: np.ndarray

    @property
    def dimension(self) -> int:
        """Get the number of curves."""
        return self.values.shape[0]

    def evaluate(self, t: np.ndarray) -> np.ndarray:
        """Interpolate each curve, returning one row per location.

        :raises DomainError: if a location is outside of the grid
        """
        t = as_float_array(t)
        if t.size and (t.min() < self.grid.lower or t.max() > self.grid.upper):
            raise DomainError(f"locations fall outside of [{self.grid.lower}, {self.grid.upper}]")
        points = self.grid.points
        rv = np.empty((len(t), self.dimension))
        for k in range(self.dimension):
            rv[:, k] = np.interp(t, points, self.values[k])
        return rv


@dataclass(frozen=True)
class FpcaBasis:
    """Eigenfunctions scaled by the square roots of their eigenvalues.

    This is :math:`\\psi_{pk}(t) = \\sqrt{\\lambda_k} \\theta_{pk}(t)`.

    All responses share the same M coefficients, so this is a random-effect basis with
    M columns. A component that is zero for all but one response gives the
    block-diagonal design of separate per-response FPCAs.
    """

    grid: GridSpec
    responses: tuple[int, ...]
    eigenvalues: np.ndarray
    #: shape (M, P, G)
    values: np.ndarray

    @property
    def n_columns(self) -> int:
        """Get the number of components, M."""
        return len(self.eigenvalues)

    def for_response(self, response: int) -> GridCurves:
        """Get the curves :math:`\\psi_{pk}` of a single response."""
        if response not in self.responses:
            raise DimensionError(f"the basis has no response {response}")
        return GridCurves(self.grid, self.values[:, self.responses.index(response), :])

    def evaluate(self, response: int, t: np.ndarray) -> np.ndarray:
        """Evaluate the rows of :math:`\\Psi_i` for a response's locations."""
        return self.for_response(response).evaluate(t)

    def covariance(self, response: int, other: int) -> np.ndarray:
        """Get :math:`\\sum_k \\psi_{pk}(t) \\psi_{p'k}(t')` on the grid."""
        left = self.values[:, self.responses.index(response), :]
        right = self.values[:, self.responses.index(other), :]
        return left.T @ right

    def save(self, path: str | Path) -> None:
        """Save the basis to a ``.npz`` archive."""
        np.savez(
            path,
            grid=np.array([self.grid.lower, self.grid.upper, self.grid.size], dtype=float),
            responses=np.array(self.responses, dtype=int),
            eigenvalues=self.eigenvalues,
            values=self.values,
        )

    @classmethod
    def load(cls, path: str | Path) -> FpcaBasis:
        """Load a basis saved with :meth:`save`."""
        with np.load(path) as archive:
            lower, upper, size = archive["grid"]
            return cls(
                grid=GridSpec(lower=float(lower), upper=float(upper), size=int(size)),
                responses=tuple(int(p) for p in archive["responses"]),
                eigenvalues=archive["eigenvalues"],
                values=archive["values"],
            )


def build_basis(es: EigenSystem, m: int) -> FpcaBasis:
    """Scale the first M eigenfunctions by the square roots of their eigenvalues.

    :raises DimensionError: if M exceeds the number of positive eigenvalues
    """
    if not 1 <= m <= es.n:
        raise DimensionError(f"can not keep {m} of {es.n} positive components")
    eigenvalues = es.eigenvalues[:m]
    values = np.sqrt(eigenvalues)[:, None, None] * es.eigenfunctions[:m]
    return FpcaBasis(grid=es.grid, responses=es.responses, eigenvalues=eigenvalues, values=values)


def univariate_fpca(
    estimate: LatentCovarianceEstimate,
    rule: TruncationRule | None = None,
    responses: Sequence[int] | None = None,
) -> FpcaBasis:
    """Run a separate FPCA on each response's auto-covariance, ignoring cross-covariances.

    :returns: A basis where each component belongs to a single response, so the
        random-effect design is block diagonal across responses
    """
    responses = tuple(responses or estimate.responses)
    eigenvalues, values = [], []
    for index, response in enumerate(responses):
        es = eigendecompose(estimate.subset([response]))
        m = truncate(es, rule)
        logger.info("response %d keeps %d of %d components", response, m, es.n)
        block = np.zeros((m, len(responses), estimate.grid.size))
        block[:, index, :] = build_basis(es, m).values[:, 0, :]
        eigenvalues.append(es.eigenvalues[:m])
        values.append(block)
    return FpcaBasis(
        grid=estimate.grid,
        responses=responses,
        eigenvalues=np.concatenate(eigenvalues),
        values=np.concatenate(values),
    )


def export_eigensystem(es: EigenSystem, m: int, directory: str | Path) -> list[Path]:
    """Write the eigenvalues and the retained eigenfunctions of each response as CSV.

    :returns: The paths of ``eigenvalues.csv`` and one ``eigenfunctions_<p>.csv`` per
        response
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    total = es.eigenvalues.sum()
    path = directory.joinpath("eigenvalues.csv")
    pd.DataFrame(
        {
            "k": np.arange(1, es.n + 1),
            "eigenvalue": es.eigenvalues,
            "proportion": es.eigenvalues / total,
            "cumulative": np.cumsum(es.eigenvalues) / total,
            "retained": np.arange(1, es.n + 1) <= m,
        }
    ).to_csv(path, index=False)
    rv = [path]
    for index, response in enumerate(es.responses):
        path = directory.joinpath(f"eigenfunctions_{response}.csv")
        frame = pd.DataFrame(
            es.eigenfunctions[:m, index, :].T, columns=[f"theta_{k}" for k in range(1, m + 1)]
        )
        frame.insert(0, "t", es.grid.points)
        frame.to_csv(path, index=False)
        rv.append(path)
    return rv
