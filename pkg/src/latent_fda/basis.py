"""Basis families, fixed- and random-effect design matrices, and induced covariances."""

from __future__ import annotations

import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from functools import cached_property
from typing import Annotated, Literal, Protocol, TypeAlias, runtime_checkable

import numpy as np
from pydantic import BaseModel, Field, PositiveInt
from scipy.interpolate import BSpline

from .data import FunctionalDataset, SubjectCovariates
from .utils import (
    DataError,
    DimensionError,
    DomainError,
    SingularityError,
    as_float_array,
    check_square,
)

__all__ = [
    "BSplineBasis",
    "BasisSpec",
    "BlockDiagonalBasis",
    "BoundBasis",
    "ConstantBasis",
    "DistanceQuadraticBasis",
    "FixedEffectsDesign",
    "FourierBasis",
    "IndicatorCovariate",
    "InducedCovariance",
    "MeanModel",
    "MeanSpec",
    "PolynomialBasis",
    "RandomEffectsBasis",
    "RandomEffectsDesign",
    "ResponseBasis",
    "ResponseMeanSpec",
    "SimSinusoidBasis",
    "SubjectInterceptBasis",
    "build_designs",
    "eval_basis",
    "induced_covariance",
    "recover_sigma",
    "sim_basis",
    "subject_covariate_table",
]

logger = logging.getLogger(__name__)

Domain: TypeAlias = tuple[float, float]


def _check_domain(t: np.ndarray, domain: Domain) -> None:
    lower, upper = domain
    if t.size and (np.min(t) < lower or np.max(t) > upper):
        bad = t[(t < lower) | (t > upper)][0]
        raise DomainError(f"t={bad} is outside of the domain [{lower}, {upper}]")


class BSplineBasis(BaseModel):
    """A clamped B-spline basis with equally spaced interior breaks."""

    family: Literal["bspline"] = "bspline"
    order: PositiveInt = Field(4, description="The spline order, i.e., degree + 1")
    breaks: int = Field(6, ge=0, description="The number of interior breaks")

    @property
    def dimension(self) -> int:
        """Get the number of basis functions."""
        return self.order + self.breaks

    def knots(self, domain: Domain) -> np.ndarray:
        """Get the full knot vector, with boundary knots of multiplicity equal to the order."""
        lower, upper = domain
        interior = np.linspace(lower, upper, self.breaks + 2)[1:-1]
        return np.concatenate(
            [np.full(self.order, lower), interior, np.full(self.order, upper)]
        )

    def evaluate(self, t: np.ndarray, domain: Domain) -> np.ndarray:
        """Evaluate the basis functions at each location."""
        knots = self.knots(domain)
        # the design matrix is evaluated on the closed interval, so clipping only
        # removes floating point overshoot at the boundaries
        x = np.clip(t, domain[0], domain[1])
        return BSpline.design_matrix(x, knots, self.order - 1).toarray()


class FourierBasis(BaseModel):
    """A Fourier basis with a constant and K harmonic sine/cosine pairs."""

    family: Literal["fourier"] = "fourier"
    harmonics: PositiveInt = Field(..., description="The number of harmonics, K")

    @property
    def dimension(self) -> int:
        """Get the number of basis functions."""
        return 2 * self.harmonics + 1

    def evaluate(self, t: np.ndarray, domain: Domain) -> np.ndarray:
        """Evaluate the basis functions at each location."""
        u = (t - domain[0]) / (domain[1] - domain[0])
        angles = 2 * np.pi * np.outer(u, np.arange(1, self.harmonics + 1))
        rv = np.empty((len(t), self.dimension))
        rv[:, 0] = 1.0
        rv[:, 1::2] = np.sin(angles)
        rv[:, 2::2] = np.cos(angles)
        return rv


class PolynomialBasis(BaseModel):
    """The raw polynomial basis :math:`B_j(t) = t^{j-1}`, without centering."""

    family: Literal["polynomial"] = "polynomial"
    degree: int = Field(2, ge=0)

    @property
    def dimension(self) -> int:
        """Get the number of basis functions."""
        return self.degree + 1

    def evaluate(self, t: np.ndarray, domain: Domain) -> np.ndarray:
        """Evaluate the basis functions at each location."""
        return np.vander(t, self.dimension, increasing=True)


class ConstantBasis(BaseModel):
    """A single constant basis function."""

    family: Literal["constant"] = "constant"

    @property
    def dimension(self) -> int:
        """Get the number of basis functions."""
        return 1

    def evaluate(self, t: np.ndarray, domain: Domain) -> np.ndarray:
        """Evaluate the basis function at each location."""
        return np.ones((len(t), 1))


class DistanceQuadraticBasis(BaseModel):
    """A quadratic in the distance from a center that changes at a breakpoint.

    This is :math:`[1, d(t), d(t)^2]` where :math:`d(t) = t - c_l` for locations up to
    the breakpoint and :math:`d(t) = t - c_u` above it, e.g., the distance of a tooth
    from the middle of its jaw.
    """

    family: Literal["distance_quadratic"] = "distance_quadratic"
    breakpoint: float
    lower_center: float
    upper_center: float

    @property
    def dimension(self) -> int:
        """Get the number of basis functions."""
        return 3

    def distance(self, t: np.ndarray) -> np.ndarray:
        """Get the signed distance from the center of the location's segment."""
        return np.where(t <= self.breakpoint, t - self.lower_center, t - self.upper_center)

    def evaluate(self, t: np.ndarray, domain: Domain) -> np.ndarray:
        """Evaluate the basis functions at each location."""
        d = self.distance(t)
        return np.column_stack([np.ones_like(d), d, d**2])


def sim_basis(k: int, m: int, t: float | np.ndarray, response: int) -> float | np.ndarray:
    """Evaluate the simulation study's sinusoidal random-effect basis.

    :param k: The 1-based index of the basis function
    :param m: The number of basis functions, M
    :param t: The location(s)
    :param response: 1 for the sine family, 2 for the cosine family
    :returns: :math:`\\sin` or :math:`\\cos` of :math:`(2 \\pi k / M)(t + 2 \\pi k / M)`
    :raises DomainError: if k is out of range or the response isn't 1 or 2

    >>> sim_basis(1, 7, -2 * 3.141592653589793 / 7, 2)
    1.0
    """
    if not 1 <= k <= m:
        raise DomainError(f"basis index {k} is not in 1..{m}")
    frequency = 2 * np.pi * k / m
    argument = frequency * (np.asarray(t, dtype=float) + frequency)
    if response == 1:
        rv = np.sin(argument)
    elif response == 2:
        rv = np.cos(argument)
    else:
        raise DomainError(
            f"the simulation basis is only defined for responses 1 and 2, got {response}"
        )
    return float(rv) if rv.ndim == 0 else rv


class SimSinusoidBasis(BaseModel):
    """The simulation study's M sinusoids (sines for response 1, cosines for response 2)."""

    family: Literal["sim_sinusoid"] = "sim_sinusoid"
    functions: PositiveInt = Field(7, description="The number of basis functions, M")
    response: Literal[1, 2] = 1

    @property
    def dimension(self) -> int:
        """Get the number of basis functions."""
        return self.functions

    def evaluate(self, t: np.ndarray, domain: Domain) -> np.ndarray:
        """Evaluate the basis functions at each location."""
        return np.column_stack(
            [sim_basis(k, self.functions, t, self.response) for k in range(1, self.functions + 1)]
        ).reshape(len(t), self.functions)


#: A basis specification, discriminated on its ``family``
BasisSpec: TypeAlias = Annotated[
    BSplineBasis
    | FourierBasis
    | PolynomialBasis
    | ConstantBasis
    | DistanceQuadraticBasis
    | SimSinusoidBasis,
    Field(discriminator="family"),
]


def eval_basis(
    spec: BasisSpec, t: float | Sequence[float] | np.ndarray, domain: Domain
) -> np.ndarray:
    """Evaluate a basis.

    :param spec: A basis specification
    :param t: A location or locations in the domain
    :param domain: The domain of the basis
    :returns: A vector of weights if a single location was given, otherwise a matrix
        with one row per location
    :raises DomainError: if a location is outside of the domain

    >>> eval_basis(PolynomialBasis(degree=2), 0.0, (0.0, 1.0))
    array([1., 0., 0.])
    """
    scalar = np.ndim(t) == 0
    x = as_float_array(t)
    _check_domain(x, domain)
    rv = spec.evaluate(x, domain)
    return rv[0] if scalar else rv


@runtime_checkable
class ResponseBasis(Protocol):
    """A set of basis functions for a single response."""

    @property
    def dimension(self) -> int:
        """Get the number of basis functions."""

    def evaluate(self, t: np.ndarray) -> np.ndarray:
        """Evaluate the basis functions, returning one row per location."""


@runtime_checkable
class RandomEffectsBasis(Protocol):
    """The random-effect basis :math:`\\psi_{pk}(t)` shared by all subjects."""

    @property
    def n_columns(self) -> int:
        """Get the number of random-effect coefficients per subject."""

    def evaluate(self, response: int, t: np.ndarray) -> np.ndarray:
        """Evaluate the rows of :math:`\\Psi_i` for a response's locations."""


@dataclass(frozen=True)
class BoundBasis:
    """A basis specification bound to its domain."""

    spec: BasisSpec
    domain: Domain

    @property
    def dimension(self) -> int:
        """Get the number of basis functions."""
        return self.spec.dimension

    def evaluate(self, t: np.ndarray) -> np.ndarray:
        """Evaluate the basis functions, returning one row per location."""
        return eval_basis(self.spec, as_float_array(t), self.domain)


@dataclass(frozen=True)
class BlockDiagonalBasis:
    """A random-effect basis with a separate block of columns for each response.

    This is the predetermined-basis mode, where :math:`M = \\sum_p M_p`, and also
    the univariate FPCA mode where each block comes from a per-response FPCA.
    """

    blocks: Mapping[int, ResponseBasis]

    @cached_property
    def offsets(self) -> dict[int, slice]:
        """Get the column slice of each response."""
        rv, start = {}, 0
        for response, block in self.blocks.items():
            rv[response] = slice(start, start + block.dimension)
            start += block.dimension
        return rv

    @property
    def n_columns(self) -> int:
        """Get the number of random-effect coefficients per subject."""
        return sum(block.dimension for block in self.blocks.values())

    def evaluate(self, response: int, t: np.ndarray) -> np.ndarray:
        """Evaluate the rows of :math:`\\Psi_i` for a response's locations."""
        t = as_float_array(t)
        if response not in self.blocks:
            raise DimensionError(f"no random-effect block for response {response}")
        rv = np.zeros((len(t), self.n_columns))
        rv[:, self.offsets[response]] = self.blocks[response].evaluate(t)
        return rv

    @classmethod
    def from_specs(
        cls, specs: Mapping[int, BasisSpec], domain: Domain
    ) -> BlockDiagonalBasis:
        """Bind a basis specification for each response to a common domain."""
        return cls({response: BoundBasis(spec, domain) for response, spec in sorted(specs.items())})


@dataclass(frozen=True)
class SubjectInterceptBasis:
    """Prepend one random subject intercept per response to another random-effect basis."""

    inner: RandomEffectsBasis
    responses: tuple[int, ...]

    @property
    def n_columns(self) -> int:
        """Get the number of random-effect coefficients per subject."""
        return len(self.responses) + self.inner.n_columns

    def evaluate(self, response: int, t: np.ndarray) -> np.ndarray:
        """Evaluate the rows of :math:`\\Psi_i` for a response's locations."""
        t = as_float_array(t)
        intercepts = np.zeros((len(t), len(self.responses)))
        intercepts[:, self.responses.index(response)] = 1.0
        return np.hstack([intercepts, self.inner.evaluate(response, t)])


class IndicatorCovariate(BaseModel):
    """A location-dependent covariate :math:`I(t > \\text{threshold})`, e.g., upper jaw."""

    name: str
    threshold: float

    def evaluate(self, t: np.ndarray) -> np.ndarray:
        """Evaluate the indicator at each location."""
        return (t > self.threshold).astype(float)


class ResponseMeanSpec(BaseModel):
    """The fixed effects of one response: covariates followed by a smooth mean basis."""

    basis: BasisSpec = Field(default_factory=lambda: PolynomialBasis(degree=2))
    covariates: list[str] = Field(
        default_factory=list, description="Names of subject-level covariates"
    )
    indicators: list[IndicatorCovariate] = Field(
        default_factory=list, description="Location-dependent indicator covariates"
    )


class MeanSpec(ResponseMeanSpec):
    """The fixed effects of all responses, with optional per-response overrides."""

    per_response: dict[int, ResponseMeanSpec] = Field(default_factory=dict)

    def for_response(self, response: int) -> ResponseMeanSpec:
        """Get the specification that applies to the given response."""
        if response in self.per_response:
            return self.per_response[response]
        return ResponseMeanSpec(
            basis=self.basis, covariates=self.covariates, indicators=self.indicators
        )


@dataclass(frozen=True)
class MeanModel:
    """Evaluates the rows :math:`u_{pi}(t)` of the fixed-effects design."""

    spec: MeanSpec
    responses: tuple[int, ...]
    domain: Domain

    @cached_property
    def column_blocks(self) -> dict[int, slice]:
        """Get the column slice of each response, of length :math:`J_p`."""
        rv, start = {}, 0
        for response in self.responses:
            spec = self.spec.for_response(response)
            width = len(spec.covariates) + len(spec.indicators) + spec.basis.dimension
            rv[response] = slice(start, start + width)
            start += width
        return rv

    @property
    def n_columns(self) -> int:
        """Get the total number of fixed effects, J."""
        return sum(s.stop - s.start for s in self.column_blocks.values())

    @cached_property
    def column_names(self) -> list[str]:
        """Get a readable name for each fixed effect."""
        rv = []
        for response in self.responses:
            spec = self.spec.for_response(response)
            rv.extend(f"{response}:{name}" for name in spec.covariates)
            rv.extend(f"{response}:{indicator.name}" for indicator in spec.indicators)
            rv.extend(f"{response}:{spec.basis.family}{j}" for j in range(spec.basis.dimension))
        return rv

    def rows(
        self,
        response: int,
        t: float | Sequence[float] | np.ndarray,
        covariates: Mapping[str, float] | None = None,
    ) -> np.ndarray:
        """Evaluate the fixed-effect rows of a response at the given locations.

        :param response: The response identifier
        :param t: The locations
        :param covariates: The subject's covariate values, by name. Required if the
            response has subject-level covariates.
        :returns: An array with one row per location and J columns, which is zero
            outside of the response's column block
        :raises DataError: if the response needs covariates and none are given
        """
        t = as_float_array(t)
        spec = self.spec.for_response(response)
        parts = []
        if spec.covariates:
            if covariates is None:
                raise DataError(f"response {response} requires covariates {spec.covariates}")
            parts.append(np.tile([covariates[name] for name in spec.covariates], (len(t), 1)))
        parts.extend(indicator.evaluate(t)[:, None] for indicator in spec.indicators)
        parts.append(eval_basis(spec.basis, t, self.domain).reshape(len(t), -1))
        rv = np.zeros((len(t), self.n_columns))
        rv[:, self.column_blocks[response]] = np.hstack(parts)
        return rv

    def required_covariates(self) -> list[str]:
        """Get the names of all subject-level covariates used by any response."""
        return sorted(
            {name for p in self.responses for name in self.spec.for_response(p).covariates}
        )


@dataclass(frozen=True)
class FixedEffectsDesign:
    """The stacked fixed-effects design, with one row per observation.

    Rows follow the storage order of the dataset, so :math:`U_i` is a contiguous
    block of rows for each subject.
    """

    matrix: np.ndarray
    model: MeanModel
    offsets: np.ndarray

    def subject(self, i: int) -> np.ndarray:
        """Get :math:`U_i`, the design rows of the i-th subject."""
        return self.matrix[self.offsets[i] : self.offsets[i + 1]]

    @property
    def n_columns(self) -> int:
        """Get the total number of fixed effects, J."""
        return self.matrix.shape[1]


@dataclass(frozen=True)
class RandomEffectsDesign:
    """The stacked random-effects design, with one row per observation."""

    matrix: np.ndarray
    basis: RandomEffectsBasis
    offsets: np.ndarray

    def subject(self, i: int) -> np.ndarray:
        """Get :math:`\\Psi_i`, the random-effect design rows of the i-th subject."""
        return self.matrix[self.offsets[i] : self.offsets[i + 1]]

    @property
    def n_columns(self) -> int:
        """Get the number of random-effect coefficients per subject."""
        return self.matrix.shape[1]


def subject_covariate_table(
    dataset: FunctionalDataset, model: MeanModel, covariates: SubjectCovariates | None
) -> list[dict[str, float]]:
    """Get the covariate values of each subject, by name.

    :raises DataError: if a subject is missing covariates
    """
    names = model.required_covariates()
    if not names:
        return [{} for _ in dataset.subject_ids]
    if covariates is None:
        raise DataError(f"the mean model requires covariates {names}")
    missing = set(names) - set(covariates.names)
    if missing:
        raise DataError(f"covariates missing from the covariate table: {sorted(missing)}")
    columns = [covariates.names.index(name) for name in names]
    rv = []
    for subject_id in dataset.subject_ids:
        values = covariates.get(subject_id)
        rv.append({name: float(values[c]) for name, c in zip(names, columns)})
    return rv


def build_designs(
    dataset: FunctionalDataset,
    mean_spec: MeanSpec,
    covariates: SubjectCovariates | None,
    random_effects: RandomEffectsBasis,
) -> tuple[FixedEffectsDesign, RandomEffectsDesign]:
    """Build the stacked fixed- and random-effects designs of a dataset.

    :param dataset: A dataset
    :param mean_spec: The fixed-effects specification
    :param covariates: Subject-level covariates, if the mean uses any
    :param random_effects: The random-effect basis. Wrap it with
        :class:`SubjectInterceptBasis` to add a subject random intercept.
    :returns: The fixed- and random-effects designs, whose rows follow the dataset's
        storage order (subject, then response, then location)
    :raises DataError: if a subject is missing covariates
    """
    model = MeanModel(spec=mean_spec, responses=tuple(dataset.responses), domain=dataset.domain)
    table = subject_covariate_table(dataset, model, covariates)
    u = np.zeros((dataset.n, model.n_columns))
    psi = np.zeros((dataset.n, random_effects.n_columns))
    offsets = np.searchsorted(dataset.subject_index, np.arange(dataset.n_subjects + 1))
    for i in range(dataset.n_subjects):
        rows = slice(offsets[i], offsets[i + 1])
        for response in dataset.responses:
            mask = np.flatnonzero(dataset.response[rows] == response) + offsets[i]
            if not len(mask):
                continue
            t = dataset.t[mask]
            u[mask] = model.rows(response, t, table[i])
            psi[mask] = random_effects.evaluate(response, t)
    logger.debug("built designs with J=%d, m=%d", model.n_columns, random_effects.n_columns)
    return (
        FixedEffectsDesign(matrix=u, model=model, offsets=offsets),
        RandomEffectsDesign(matrix=psi, basis=random_effects, offsets=offsets),
    )


@dataclass(frozen=True)
class InducedCovariance:
    """The covariance :math:`K_{pp'}(t,t') = \\psi_p(t)^T \\Sigma \\psi_{p'}(t')`."""

    basis: RandomEffectsBasis
    sigma: np.ndarray

    def __call__(
        self, response: int, other: int, t: float | np.ndarray, s: float | np.ndarray
    ) -> np.ndarray:
        """Evaluate the covariance between two responses on a pair of location sets.

        :returns: A matrix with one row per location in ``t`` and one column per
            location in ``s``
        """
        left = self.basis.evaluate(response, as_float_array(t))
        right = self.basis.evaluate(other, as_float_array(s))
        return left @ self.sigma @ right.T

    def on_grid(self, responses: Sequence[int], grid: np.ndarray) -> np.ndarray:
        """Assemble the block covariance of the given responses on a grid."""
        psi = np.vstack([self.basis.evaluate(p, grid) for p in responses])
        return psi @ self.sigma @ psi.T


def induced_covariance(basis: RandomEffectsBasis, sigma: np.ndarray) -> InducedCovariance:
    """Get the covariance of the latent process implied by a basis and :math:`\\Sigma`.

    :raises DimensionError: if :math:`\\Sigma` doesn't match the basis dimension
    """
    sigma = np.asarray(sigma, dtype=float)
    check_square("Sigma", sigma)
    if sigma.shape[0] != basis.n_columns:
        raise DimensionError(
            f"Sigma is {sigma.shape[0]}x{sigma.shape[0]} "
            f"but the basis has {basis.n_columns} columns"
        )
    return InducedCovariance(basis=basis, sigma=sigma)


def recover_sigma(omega: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """Recover the coefficient covariance that reproduces a covariance on a grid.

    For a square, full-rank basis matrix :math:`\\Psi`, this returns
    :math:`\\Sigma = \\Theta \\Psi^T \\Omega \\Psi \\Theta` with
    :math:`\\Theta = (\\Psi^T \\Psi)^{-1}`, so that :math:`\\Psi \\Sigma \\Psi^T = \\Omega`.

    :param omega: An n x n covariance evaluated on a grid
    :param psi: An n x n basis matrix
    :returns: The recovered covariance of the coefficients
    :raises DimensionError: if the matrices aren't square or don't conform
    :raises SingularityError: if the basis matrix is rank-deficient
    """
    omega = np.asarray(omega, dtype=float)
    psi = np.asarray(psi, dtype=float)
    check_square("Omega", omega)
    check_square("Psi", psi)
    if omega.shape != psi.shape:
        raise DimensionError(f"Omega is {omega.shape} but Psi is {psi.shape}")
    rank = np.linalg.matrix_rank(psi)
    if rank < psi.shape[0]:
        raise SingularityError(f"Psi has rank {rank} < {psi.shape[0]}")
    # Theta Psi^T, computed as a solve rather than through an explicit inverse
    theta_psi_t = np.linalg.solve(psi.T @ psi, psi.T)
    rv = theta_psi_t @ omega @ theta_psi_t.T
    return (rv + rv.T) / 2
