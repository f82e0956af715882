"""Shared utilities for :mod:`latent_fda`."""

from __future__ import annotations

import hashlib
import json
import logging
from collections.abc import Sequence
from typing import Any

import numpy as np
import pystow
from pydantic import BaseModel

__all__ = [
    "MODULE",
    "ConfigError",
    "DataError",
    "DegenerateCovarianceError",
    "DegenerateScaleError",
    "DimensionError",
    "DomainError",
    "LatentFDAError",
    "NumericalError",
    "ParseError",
    "SchemaError",
    "SingularityError",
    "SmootherRankError",
    "as_float_array",
    "check_square",
    "check_symmetric",
    "config_hash",
    "substream",
]

logger = logging.getLogger(__name__)

#: Default location for run outputs, ``~/.data/latent_fda``
MODULE = pystow.module("latent_fda")


class LatentFDAError(Exception):
    """Base class for all errors raised by :mod:`latent_fda`."""


class ConfigError(LatentFDAError, ValueError):
    """Raised when a configuration is invalid."""


class DataError(LatentFDAError, ValueError):
    """Raised when input data violate the data model."""


class ParseError(DataError):
    """Raised when a row of an input file can not be parsed."""

    def __init__(self, message: str, *, line: int | None = None) -> None:
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class SchemaError(DataError):
    """Raised when a record refers to an undeclared response."""


class DomainError(DataError):
    """Raised when a value lies outside of its admissible domain."""


class DegenerateScaleError(DataError):
    """Raised when a Gaussian response has zero variance."""


class SmootherRankError(DataError):
    """Raised when there are too few distinct locations for a smoother."""


class DimensionError(LatentFDAError, ValueError):
    """Raised when array shapes are inconsistent."""


class NumericalError(LatentFDAError, ArithmeticError):
    """Raised when a numerical routine fails."""

    def __init__(self, message: str, *, iteration: int | None = None) -> None:
        self.iteration = iteration
        super().__init__(
            f"{message} (iteration {iteration})" if iteration is not None else message
        )


class SingularityError(NumericalError):
    """Raised when a matrix that must be invertible is singular."""


class DegenerateCovarianceError(NumericalError):
    """Raised when a covariance estimate has no positive eigenvalues."""


def substream(seed: int, *key: int) -> np.random.Generator:
    """Get a generator for the substream of ``seed`` identified by ``key``.

    The same seed and key always give the same stream, independent of the order in
    which streams are requested.

    >>> a = substream(42, 3, 1).standard_normal()
    >>> b = substream(42, 3, 1).standard_normal()
    >>> a == b
    True
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def config_hash(config: BaseModel | dict[str, Any]) -> str:
    """Hash a configuration with a canonical JSON serialization."""
    data = config.model_dump(mode="json") if isinstance(config, BaseModel) else config
    text = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def check_square(name: str, matrix: np.ndarray) -> None:
    """Raise a dimension error if the matrix is not square."""
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {matrix.shape}")


def as_float_array(values: Sequence[float] | np.ndarray) -> np.ndarray:
    """Convert values into a one dimensional float array."""
    return np.atleast_1d(np.asarray(values, dtype=float))


def check_symmetric(name: str, matrix: np.ndarray) -> None:
    """Raise a dimension error if the matrix is not exactly symmetric."""
    check_square(name, matrix)
    if not np.array_equal(matrix, matrix.T):
        raise DimensionError(f"{name} must be symmetric")
