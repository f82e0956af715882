"""Penalized spline (P-spline) smoothers for curves and surfaces.

Both smoothers aggregate their input to sufficient statistics over the unique
locations before fitting, so pooling millions of cross-products from many subjects
stays exact and cheap.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from functools import cached_property
from typing import Literal

import numpy as np
import scipy.linalg
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, field_validator
from scipy.interpolate import BSpline

from .utils import DataError, SmootherRankError, as_float_array

__all__ = [
    "GridSpec",
    "SmoothedCurve",
    "SmoothedSurface",
    "SmootherConfig",
    "difference_penalty",
    "pspline_design",
    "pspline_knots",
    "smooth_curve",
    "smooth_surface",
]

logger = logging.getLogger(__name__)

#: The default grid of smoothing parameters searched by GCV
DEFAULT_GCV_GRID = np.logspace(-4, 4, 21).tolist()


class GridSpec(BaseModel):
    """An equally spaced evaluation grid over the domain."""

    lower: float
    upper: float
    size: int = Field(101, ge=2, description="The number of grid points, G")

    @classmethod
    def over(cls, domain: tuple[float, float], size: int = 101) -> GridSpec:
        """Get a grid spanning a domain."""
        return cls(lower=domain[0], upper=domain[1], size=size)

    @property
    def points(self) -> np.ndarray:
        """Get the grid points."""
        return np.linspace(self.lower, self.upper, self.size)

    @property
    def spacing(self) -> float:
        """Get the spacing between grid points, :math:`\\Delta`."""
        return (self.upper - self.lower) / (self.size - 1)

    @property
    def domain(self) -> tuple[float, float]:
        """Get the domain spanned by the grid."""
        return self.lower, self.upper


class SmootherConfig(BaseModel):
    """Configuration for the penalized spline smoothers."""

    model_config = ConfigDict(populate_by_name=True)

    basis_size: int = Field(10, ge=4, description="The marginal number of cubic B-splines")
    penalty_order: int = Field(2, ge=1, description="The order of the difference penalty")
    lam: PositiveFloat | Literal["gcv"] = Field(
        "gcv", alias="lambda", description="A fixed smoothing parameter, or 'gcv'"
    )
    gcv_grid: list[PositiveFloat] = Field(default_factory=lambda: list(DEFAULT_GCV_GRID))

    @field_validator("gcv_grid")
    @classmethod
    def _check_grid(cls, value: list[float]) -> list[float]:
        if not value:
            raise ValueError("the GCV grid can not be empty")
        return sorted(value)

    @property
    def candidates(self) -> list[float]:
        """Get the smoothing parameters to consider."""
        if self.lam == "gcv":
            return self.gcv_grid
        return [self.lam]


def pspline_knots(size: int, domain: tuple[float, float], degree: int = 3) -> np.ndarray:
    """Get uniformly spaced knots padded beyond the domain, as used for P-splines.

    Uniform padding keeps polynomials of degree less than the penalty order in the
    null space of the difference penalty.
    """
    lower, upper = domain
    segments = size - degree
    if segments < 1:
        raise ValueError(f"basis size {size} is too small for degree {degree}")
    dx = (upper - lower) / segments
    inner = np.linspace(lower, upper, segments + 1)
    return np.concatenate(
        [
            np.linspace(lower - degree * dx, lower - dx, degree),
            inner,
            np.linspace(upper + dx, upper + degree * dx, degree),
        ]
    )


def pspline_design(x: np.ndarray, knots: np.ndarray, degree: int = 3) -> np.ndarray:
    """Evaluate the B-spline basis at each location inside the knots' domain."""
    x = np.clip(x, knots[degree], knots[-degree - 1])
    return BSpline.design_matrix(x, knots, degree).toarray()


def difference_penalty(size: int, order: int = 2) -> np.ndarray:
    """Get the penalty :math:`D^T D` for the difference matrix of the given order."""
    d = np.diff(np.eye(size), n=order, axis=0)
    return d.T @ d


@dataclass(frozen=True)
class _Aggregate:
    """Sufficient statistics of points pooled over their unique locations."""

    design: np.ndarray
    counts: np.ndarray
    sums: np.ndarray
    sum_of_squares: float

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @cached_property
    def gram(self) -> np.ndarray:
        return self.design.T @ (self.counts[:, None] * self.design)

    @cached_property
    def moment(self) -> np.ndarray:
        return self.design.T @ self.sums

    def rss(self, coefficients: np.ndarray) -> float:
        """Get the exact residual sum of squares of all pooled points."""
        return float(
            self.sum_of_squares
            - 2 * coefficients @ self.moment
            + coefficients @ self.gram @ coefficients
        )


def _fit(
    aggregate: _Aggregate, penalty: np.ndarray, cfg: SmootherConfig
) -> tuple[np.ndarray, float]:
    """Fit the penalized least squares problem, choosing lambda by GCV if requested."""
    candidates = cfg.candidates
    n = aggregate.n
    fits, scores = [], []
    for lam in candidates:
        lhs = aggregate.gram + lam * penalty
        try:
            factor = scipy.linalg.cho_factor(lhs)
        except scipy.linalg.LinAlgError:
            fits.append(None)
            scores.append(np.inf)
            continue
        coefficients = scipy.linalg.cho_solve(factor, aggregate.moment)
        fits.append(coefficients)
        if len(candidates) == 1:
            scores.append(0.0)
            continue
        edf = float(np.trace(scipy.linalg.cho_solve(factor, aggregate.gram)))
        residual_df = n - edf
        if residual_df <= 0:
            scores.append(np.inf)
        else:
            scores.append(n * max(aggregate.rss(coefficients), 0.0) / residual_df**2)
    scores_arr = np.asarray(scores)
    if not np.isfinite(scores_arr).any() and all(fit is None for fit in fits):
        raise SmootherRankError("the penalized system is singular for every smoothing parameter")
    # ties go to the larger smoothing parameter
    best = len(candidates) - 1 - int(np.argmin(scores_arr[::-1]))
    if fits[best] is None:
        best = next(i for i in reversed(range(len(fits))) if fits[i] is not None)
    logger.debug("selected lambda=%g from %d candidates", candidates[best], len(candidates))
    return fits[best], candidates[best]


@dataclass(frozen=True)
class SmoothedCurve:
    """A smoothed curve evaluated on a grid."""

    grid: GridSpec
    values: np.ndarray
    lam: float

    def __call__(self, t: float | Sequence[float] | np.ndarray) -> np.ndarray:
        """Linearly interpolate the curve at the given locations."""
        return np.interp(as_float_array(t), self.grid.points, self.values)


@dataclass(frozen=True)
class SmoothedSurface:
    """A smoothed surface evaluated on a grid, with rows indexed by t and columns by t'."""

    grid: GridSpec
    values: np.ndarray
    lam: float


def smooth_curve(
    t: Sequence[float] | np.ndarray,
    y: Sequence[float] | np.ndarray,
    cfg: SmootherConfig | None = None,
    grid: GridSpec | None = None,
) -> SmoothedCurve:
    """Smooth pooled points :math:`(t, y)` with a P-spline.

    :param t: The locations of the points
    :param y: The values of the points
    :param cfg: The smoother configuration
    :param grid: The evaluation grid. Defaults to 101 points over the range of ``t``.
    :returns: The fitted curve on the grid
    :raises DataError: if there are no points
    :raises SmootherRankError: if there are fewer distinct locations than basis functions
    """
    cfg = cfg or SmootherConfig()
    t = as_float_array(t)
    y = as_float_array(y)
    if len(t) != len(y):
        raise DataError(f"got {len(t)} locations and {len(y)} values")
    if not len(t):
        raise DataError("can not smooth an empty set of points")
    if grid is None:
        grid = GridSpec.over((float(t.min()), float(t.max())))
    unique, inverse = np.unique(t, return_inverse=True)
    if len(unique) < cfg.basis_size:
        raise SmootherRankError(
            f"{len(unique)} distinct locations is fewer than the basis size {cfg.basis_size}"
        )
    knots = pspline_knots(cfg.basis_size, grid.domain)
    aggregate = _Aggregate(
        design=pspline_design(unique, knots),
        counts=np.bincount(inverse, minlength=len(unique)).astype(float),
        sums=np.bincount(inverse, weights=y, minlength=len(unique)),
        sum_of_squares=float(y @ y),
    )
    coefficients, lam = _fit(aggregate, difference_penalty(cfg.basis_size, cfg.penalty_order), cfg)
    values = pspline_design(grid.points, knots) @ coefficients
    return SmoothedCurve(grid=grid, values=values, lam=lam)


def smooth_surface(
    t: Sequence[float] | np.ndarray,
    s: Sequence[float] | np.ndarray,
    v: Sequence[float] | np.ndarray,
    cfg: SmootherConfig | None = None,
    grid: GridSpec | None = None,
    *,
    remove_diagonal: bool = True,
    symmetrize: bool = True,
) -> SmoothedSurface:
    """Smooth pooled points :math:`((t, t'), v)` with a tensor-product P-spline.

    :param t: The first location of each pair
    :param s: The second location of each pair
    :param v: The value of each pair, e.g., a cross-product of observations
    :param cfg: The smoother configuration
    :param grid: The evaluation grid, shared by both margins
    :param remove_diagonal: Should pairs with :math:`t = t'` be dropped before fitting?
    :param symmetrize: Should the fit be averaged with its transpose?
    :returns: The fitted surface on grid x grid
    :raises DataError: if no pairs remain after removing the diagonal
    """
    cfg = cfg or SmootherConfig()
    t, s, v = as_float_array(t), as_float_array(s), as_float_array(v)
    if not (len(t) == len(s) == len(v)):
        raise DataError("pair arrays have different lengths")
    if remove_diagonal:
        keep = t != s
        t, s, v = t[keep], s[keep], v[keep]
    if not len(t):
        raise DataError("no pairs remain to smooth")
    if grid is None:
        grid = GridSpec.over((float(min(t.min(), s.min())), float(max(t.max(), s.max()))))

    locations, codes = np.unique(np.concatenate([t, s]), return_inverse=True)
    pair_keys = codes[: len(t)].astype(np.int64) * len(locations) + codes[len(t) :]
    unique_keys, inverse = np.unique(pair_keys, return_inverse=True)

    size = cfg.basis_size
    knots = pspline_knots(size, grid.domain)
    marginal = pspline_design(locations, knots)
    left = marginal[unique_keys // len(locations)]
    right = marginal[unique_keys % len(locations)]
    # row-wise Kronecker product, coefficient index k * size + l
    design = (left[:, :, None] * right[:, None, :]).reshape(len(unique_keys), size * size)

    aggregate = _Aggregate(
        design=design,
        counts=np.bincount(inverse, minlength=len(unique_keys)).astype(float),
        sums=np.bincount(inverse, weights=v, minlength=len(unique_keys)),
        sum_of_squares=float(v @ v),
    )
    penalty_1d = difference_penalty(size, cfg.penalty_order)
    identity = np.eye(size)
    penalty = np.kron(penalty_1d, identity) + np.kron(identity, penalty_1d)
    coefficients, lam = _fit(aggregate, penalty, cfg)

    grid_design = pspline_design(grid.points, knots)
    values = grid_design @ coefficients.reshape(size, size) @ grid_design.T
    if symmetrize:
        values = (values + values.T) / 2
    return SmoothedSurface(grid=grid, values=values, lam=lam)
