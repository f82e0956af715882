"""Observation containers, response kinds, ingestion and scaling of functional data."""

from __future__ import annotations

import csv
import dataclasses
import enum
import logging
import math
from collections.abc import Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from scipy.special import ndtr, ndtri
from scipy.stats import norm

from .utils import DataError, DegenerateScaleError, DomainError, ParseError, SchemaError

__all__ = [
    "FunctionalDataset",
    "ObservationRecord",
    "ResponseDeclaration",
    "ResponseKind",
    "ScalingInfo",
    "SubjectCovariates",
    "load_covariates",
    "load_dataset",
    "scale_continuous",
    "unscale",
    "write_dataset",
]

logger = logging.getLogger(__name__)

#: The header required in dataset CSV files
HEADER = ("subject_id", "response_id", "t", "y")


class ResponseKind(str, enum.Enum):
    """The kind of a functional response, which determines its link functions."""

    gaussian = "gaussian"
    binary = "binary"

    def h(self, eta: np.ndarray) -> np.ndarray:
        """Apply the observation link, mapping a latent value to an observation."""
        if self is ResponseKind.gaussian:
            return np.asarray(eta, dtype=float)
        return (np.asarray(eta) > 0).astype(float)

    def g(self, eta: np.ndarray) -> np.ndarray:
        """Apply the mean-scale link, :math:`E[Y | Z] = g(Z)`."""
        if self is ResponseKind.gaussian:
            return np.asarray(eta, dtype=float)
        return ndtr(eta)

    def g_inverse(self, value: np.ndarray) -> np.ndarray:
        """Invert the mean-scale link."""
        if self is ResponseKind.gaussian:
            return np.asarray(value, dtype=float)
        return ndtri(value)

    def g_derivative(self, eta: np.ndarray) -> np.ndarray:
        """Get the first derivative of the mean-scale link."""
        if self is ResponseKind.gaussian:
            return np.ones_like(np.asarray(eta, dtype=float))
        return norm.pdf(eta)

    def validate(self, value: float) -> bool:
        """Check if a value is admissible for this kind of response."""
        if not math.isfinite(value):
            return False
        if self is ResponseKind.binary:
            return value in (0.0, 1.0)
        return True


class ResponseDeclaration(BaseModel):
    """Declares the kind of a response, as it appears in the run configuration."""

    id: int = Field(..., ge=1, description="The 1-based response identifier")
    kind: ResponseKind


class ObservationRecord(BaseModel):
    """A single observation :math:`Y_{pi}(t)`."""

    subject_id: str
    response_id: int = Field(..., ge=1)
    t: float
    y: float


def _coerce_kinds(
    schema: Mapping[int, ResponseKind | str] | Iterable[ResponseDeclaration],
) -> dict[int, ResponseKind]:
    if isinstance(schema, Mapping):
        return {int(k): ResponseKind(v) for k, v in schema.items()}
    return {declaration.id: declaration.kind for declaration in schema}


@dataclass(frozen=True, eq=False)
class FunctionalDataset:
    """Sparse per-subject, per-response functional observations.

    Records are stored in long format, sorted by subject (in order of first
    appearance), then response, then location. This is the stacking order of
    :math:`W_i` used throughout the sampler.
    """

    subject_ids: tuple[str, ...]
    subject_index: np.ndarray
    response: np.ndarray
    t: np.ndarray
    y: np.ndarray
    response_kinds: Mapping[int, ResponseKind]
    domain: tuple[float, float]
    _offsets: np.ndarray = field(repr=False, compare=False, default_factory=lambda: np.zeros(1))

    @classmethod
    def from_arrays(
        cls,
        subject_ids: Sequence[str],
        response: Sequence[int] | np.ndarray,
        t: Sequence[float] | np.ndarray,
        y: Sequence[float] | np.ndarray,
        response_kinds: Mapping[int, ResponseKind | str] | Iterable[ResponseDeclaration],
        *,
        domain: tuple[float, float] | None = None,
        subject_order: Sequence[str] | None = None,
    ) -> FunctionalDataset:
        """Validate and construct a dataset from parallel arrays.

        :param subject_ids: The subject of each record
        :param response: The 1-based response identifier of each record
        :param t: The location of each record
        :param y: The value of each record
        :param response_kinds: The declared kind of each response
        :param domain: The domain of the locations. Defaults to the observed range.
        :param subject_order: An explicit subject ordering, e.g., to keep subjects
            without any records. Defaults to the order of first appearance.
        :returns: A validated dataset
        :raises SchemaError: if a record refers to an undeclared response
        :raises DomainError: if a value is inadmissible for its response kind, or a
            location lies outside of the domain
        :raises DataError: if a (subject, response, location) triple is duplicated
        """
        kinds = _coerce_kinds(response_kinds)
        subjects = [str(s) for s in subject_ids]
        response_arr = np.asarray(response, dtype=int)
        t_arr = np.asarray(t, dtype=float)
        y_arr = np.asarray(y, dtype=float)
        if not (len(subjects) == len(response_arr) == len(t_arr) == len(y_arr)):
            raise DataError("record arrays have different lengths")

        unknown = sorted(set(response_arr.tolist()) - set(kinds))
        if unknown:
            raise SchemaError(f"undeclared response identifiers: {unknown}")
        for rid, kind in kinds.items():
            values = y_arr[response_arr == rid]
            if kind is ResponseKind.binary:
                bad = ~np.isin(values, (0.0, 1.0))
            else:
                bad = ~np.isfinite(values)
            if bad.any():
                raise DomainError(
                    f"response {rid} is {kind.value} but has inadmissible value {values[bad][0]}"
                )
        if not np.isfinite(t_arr).all():
            raise DomainError("locations must be finite")

        if subject_order is None:
            order: list[str] = list(dict.fromkeys(subjects))
        else:
            order = [str(s) for s in subject_order]
            missing = set(subjects) - set(order)
            if missing:
                raise DataError(f"subjects missing from the explicit order: {sorted(missing)}")
        lookup = {subject: i for i, subject in enumerate(order)}
        subject_index = np.array([lookup[s] for s in subjects], dtype=int)

        if domain is None:
            domain = (float(t_arr.min()), float(t_arr.max())) if len(t_arr) else (0.0, 1.0)
        lower, upper = float(domain[0]), float(domain[1])
        if not lower < upper:
            raise DomainError(f"invalid domain [{lower}, {upper}]")
        if len(t_arr) and (t_arr.min() < lower or t_arr.max() > upper):
            raise DomainError(f"locations fall outside of the domain [{lower}, {upper}]")

        sort = np.lexsort((t_arr, response_arr, subject_index))
        subject_index, response_arr = subject_index[sort], response_arr[sort]
        t_arr, y_arr = t_arr[sort], y_arr[sort]
        if len(t_arr) > 1:
            same = (
                (np.diff(subject_index) == 0) & (np.diff(response_arr) == 0) & (np.diff(t_arr) == 0)
            )
            if same.any():
                j = int(np.flatnonzero(same)[0])
                raise DataError(
                    f"duplicate observation for subject {order[subject_index[j]]}, "
                    f"response {response_arr[j]}, t={t_arr[j]}"
                )

        offsets = np.searchsorted(subject_index, np.arange(len(order) + 1))
        return cls(
            subject_ids=tuple(order),
            subject_index=subject_index,
            response=response_arr,
            t=t_arr,
            y=y_arr,
            response_kinds=dict(sorted(kinds.items())),
            domain=(lower, upper),
            _offsets=offsets,
        )

    @classmethod
    def from_records(
        cls,
        records: Iterable[ObservationRecord],
        response_kinds: Mapping[int, ResponseKind | str] | Iterable[ResponseDeclaration],
        *,
        domain: tuple[float, float] | None = None,
    ) -> FunctionalDataset:
        """Construct a dataset from observation records."""
        records = list(records)
        return cls.from_arrays(
            [r.subject_id for r in records],
            [r.response_id for r in records],
            [r.t for r in records],
            [r.y for r in records],
            response_kinds,
            domain=domain,
        )

    @property
    def n(self) -> int:
        """The total number of observations."""
        return len(self.y)

    @property
    def n_subjects(self) -> int:
        """The number of subjects, N."""
        return len(self.subject_ids)

    @property
    def responses(self) -> list[int]:
        """The sorted response identifiers."""
        return list(self.response_kinds)

    @property
    def n_responses(self) -> int:
        """The number of responses, P."""
        return len(self.response_kinds)

    def kind(self, response: int) -> ResponseKind:
        """Get the kind of a response."""
        return self.response_kinds[response]

    @property
    def gaussian_responses(self) -> list[int]:
        """Identifiers of Gaussian responses."""
        return [p for p, k in self.response_kinds.items() if k is ResponseKind.gaussian]

    @property
    def binary_responses(self) -> list[int]:
        """Identifiers of binary responses."""
        return [p for p, k in self.response_kinds.items() if k is ResponseKind.binary]

    @cached_property
    def counts(self) -> np.ndarray:
        """Get an (N, P) array of :math:`L_{pi}`, the per-subject, per-response counts."""
        rv = np.zeros((self.n_subjects, self.n_responses), dtype=int)
        column = np.searchsorted(np.asarray(self.responses), self.response)
        np.add.at(rv, (self.subject_index, column), 1)
        return rv

    @property
    def subject_counts(self) -> np.ndarray:
        """Get the length N array of :math:`L_i`."""
        return self.counts.sum(axis=1)

    def subject_slice(self, i: int) -> slice:
        """Get the slice of records belonging to the i-th subject."""
        return slice(int(self._offsets[i]), int(self._offsets[i + 1]))

    def records(self) -> Iterator[ObservationRecord]:
        """Iterate over the records, in storage order."""
        for i, p, t, y in zip(
            self.subject_index.tolist(), self.response.tolist(), self.t.tolist(), self.y.tolist()
        ):
            yield ObservationRecord(subject_id=self.subject_ids[i], response_id=p, t=t, y=y)

    def with_values(self, y: np.ndarray) -> FunctionalDataset:
        """Get a copy of the dataset with the values replaced, keeping storage order."""
        y = np.asarray(y, dtype=float)
        if y.shape != self.y.shape:
            raise DataError(f"expected {self.y.shape} values, got {y.shape}")
        return FunctionalDataset(
            subject_ids=self.subject_ids,
            subject_index=self.subject_index,
            response=self.response,
            t=self.t,
            y=y,
            response_kinds=self.response_kinds,
            domain=self.domain,
            _offsets=self._offsets,
        )

    def with_domain(self, domain: tuple[float, float]) -> FunctionalDataset:
        """Get a copy of the dataset over another domain, e.g., that of a fitted model.

        :raises DomainError: if a location falls outside of the new domain
        """
        lower, upper = float(domain[0]), float(domain[1])
        if self.n and (self.t.min() < lower or self.t.max() > upper):
            raise DomainError(f"locations fall outside of the domain [{lower}, {upper}]")
        return dataclasses.replace(self, domain=(lower, upper))

    def _mask(self, mask: np.ndarray, kinds: Mapping[int, ResponseKind]) -> FunctionalDataset:
        kept = sorted(set(self.subject_index[mask].tolist()))
        return FunctionalDataset.from_arrays(
            [self.subject_ids[i] for i in self.subject_index[mask]],
            self.response[mask],
            self.t[mask],
            self.y[mask],
            kinds,
            domain=self.domain,
            subject_order=[self.subject_ids[i] for i in kept],
        )

    def subset(self, responses: Iterable[int]) -> FunctionalDataset:
        """Get the dataset restricted to the given responses."""
        responses = sorted(set(responses))
        kinds = {p: self.response_kinds[p] for p in responses}
        return self._mask(np.isin(self.response, responses), kinds)

    def only_subjects(self, subject_ids: Iterable[str]) -> FunctionalDataset:
        """Get the dataset restricted to the given subjects."""
        keep = {self.subject_ids.index(s) for s in subject_ids}
        return self._mask(np.isin(self.subject_index, sorted(keep)), self.response_kinds)

    def without_subjects(self, subject_ids: Iterable[str]) -> FunctionalDataset:
        """Get the dataset without the given subjects."""
        drop = set(subject_ids)
        return self.only_subjects(s for s in self.subject_ids if s not in drop)

    def to_frame(self) -> pd.DataFrame:
        """Get the records as a data frame with the CSV schema's columns."""
        return pd.DataFrame(
            {
                "subject_id": [self.subject_ids[i] for i in self.subject_index],
                "response_id": self.response,
                "t": self.t,
                "y": self.y,
            }
        )


def load_dataset(
    path: str | Path,
    schema: Mapping[int, ResponseKind | str] | Iterable[ResponseDeclaration],
    *,
    domain: tuple[float, float] | None = None,
) -> FunctionalDataset:
    """Load and validate a dataset from a CSV file.

    :param path: The path to a UTF-8 CSV file with a header ``subject_id,response_id,t,y``
    :param schema: The kind of each response
    :param domain: An optional domain overriding the observed range of locations
    :returns: A validated dataset
    :raises ParseError: if the header is wrong or a row is malformed
    :raises DomainError: if a binary response has a value that isn't 0 or 1
    :raises SchemaError: if a record refers to an undeclared response
    :raises DataError: if a (subject, response, location) triple is duplicated
    """
    kinds = _coerce_kinds(schema)
    subjects: list[str] = []
    responses: list[int] = []
    locations: list[float] = []
    values: list[float] = []
    seen: dict[tuple[str, int, float], int] = {}
    with Path(path).open(encoding="utf-8", newline="") as file:
        reader = csv.reader(file)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != HEADER:
            raise ParseError(f"expected header {','.join(HEADER)}, got {header}", line=1)
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(HEADER):
                raise ParseError(f"expected {len(HEADER)} fields, got {len(row)}", line=line)
            subject_id, response_text, t_text, y_text = (x.strip() for x in row)
            try:
                response_id = int(response_text)
                t = float(t_text)
                y = float(y_text)
            except ValueError as e:
                raise ParseError(str(e), line=line) from e
            if response_id not in kinds:
                raise SchemaError(f"line {line}: undeclared response {response_id}")
            if not kinds[response_id].validate(y):
                raise DomainError(
                    f"line {line}: value {y} is inadmissible for "
                    f"{kinds[response_id].value} response {response_id}"
                )
            key = (subject_id, response_id, t)
            if key in seen:
                raise DataError(f"line {line}: duplicates the observation on line {seen[key]}")
            seen[key] = line
            subjects.append(subject_id)
            responses.append(response_id)
            locations.append(t)
            values.append(y)
    logger.debug("loaded %d records from %s", len(values), path)
    return FunctionalDataset.from_arrays(
        subjects, responses, locations, values, kinds, domain=domain
    )


def write_dataset(dataset: FunctionalDataset, path: str | Path) -> None:
    """Write a dataset in the CSV schema read by :func:`load_dataset`."""
    dataset.to_frame().to_csv(path, index=False)


class ScalingInfo(BaseModel):
    """The scale factor of each Gaussian response, :math:`Y_{pi}(t) / s_p`."""

    scales: dict[int, float] = Field(default_factory=dict)

    def scale(self, response: int) -> float:
        """Get the scale of a response, which is 1 for unscaled responses."""
        return self.scales.get(response, 1.0)


def scale_continuous(dataset: FunctionalDataset) -> tuple[FunctionalDataset, ScalingInfo]:
    """Divide each Gaussian response by its overall sample standard deviation.

    The standard deviation pools all subjects and locations and uses the ``n - 1``
    denominator. Binary responses are left untouched.

    :param dataset: A dataset
    :returns: The scaled dataset and the scale factors needed to undo the scaling
    :raises DataError: if a Gaussian response has fewer than two observations
    :raises DegenerateScaleError: if a Gaussian response has zero variance
    """
    y = dataset.y.copy()
    scales: dict[int, float] = {}
    for p in dataset.gaussian_responses:
        mask = dataset.response == p
        if mask.sum() < 2:
            raise DataError(f"response {p} needs at least two observations to be scaled")
        s = float(np.std(dataset.y[mask], ddof=1))
        if not s > 0:
            raise DegenerateScaleError(f"response {p} has zero variance")
        scales[p] = s
        y[mask] = dataset.y[mask] / s
    return dataset.with_values(y), ScalingInfo(scales=scales)


def unscale(dataset: FunctionalDataset, info: ScalingInfo) -> FunctionalDataset:
    """Undo :func:`scale_continuous`."""
    y = dataset.y.copy()
    for p, s in info.scales.items():
        mask = dataset.response == p
        y[mask] = dataset.y[mask] * s
    return dataset.with_values(y)


@dataclass(frozen=True)
class SubjectCovariates:
    """Subject-level covariates, e.g., age or smoking status."""

    names: tuple[str, ...]
    values: Mapping[str, np.ndarray]

    def get(self, subject_id: str) -> np.ndarray:
        """Get the covariate vector of a subject.

        :raises DataError: if the subject has no covariates
        """
        try:
            return self.values[subject_id]
        except KeyError:
            raise DataError(f"missing covariates for subject {subject_id}") from None

    def __len__(self) -> int:
        return len(self.names)


def load_covariates(path: str | Path, *, standardize: bool = False) -> SubjectCovariates:
    """Load subject-level covariates from a CSV with a ``subject_id`` column.

    :param path: The path to the CSV file
    :param standardize: Should each covariate be standardized to mean zero and unit
        standard deviation?
    :returns: The covariates of each subject
    :raises DataError: if the file is missing a ``subject_id`` column or has missing values
    """
    df = pd.read_csv(path, dtype={"subject_id": str})
    if "subject_id" not in df.columns:
        raise DataError(f"{path} is missing a subject_id column")
    df = df.set_index("subject_id")
    if df.isna().any().any():
        raise DataError(f"{path} has missing covariate values")
    if standardize:
        std = df.std(ddof=1).replace(0.0, 1.0)
        df = (df - df.mean()) / std
    return SubjectCovariates(
        names=tuple(df.columns),
        values={
            str(subject_id): row.to_numpy(dtype=float) for subject_id, row in df.iterrows()
        },
    )
