"""Tests for ingesting, validating, and scaling functional data."""

import tempfile
import unittest
from pathlib import Path

import numpy as np

from latent_fda.data import (
    FunctionalDataset,
    ResponseKind,
    load_covariates,
    load_dataset,
    scale_continuous,
    unscale,
    write_dataset,
)
from latent_fda.utils import (
    DataError,
    DegenerateScaleError,
    DomainError,
    ParseError,
    SchemaError,
)

KINDS = {1: ResponseKind.gaussian, 2: ResponseKind.binary}


def _write(directory: Path, text: str, name: str = "data.csv") -> Path:
    path = directory.joinpath(name)
    path.write_text(text, encoding="utf-8")
    return path


class TestLoad(unittest.TestCase):
    """Test loading datasets from CSV."""

    def setUp(self) -> None:
        """Set up a temporary directory."""
        self._directory = tempfile.TemporaryDirectory()
        self.directory = Path(self._directory.name)

    def tearDown(self) -> None:
        """Remove the temporary directory."""
        self._directory.cleanup()

    def test_load(self) -> None:
        """Test records are sorted by subject, response, then location."""
        path = _write(
            self.directory,
            "subject_id,response_id,t,y\n"
            "b,1,0.5,2.0\n"
            "a,2,0.25,1\n"
            "a,1,0.75,-1.5\n"
            "a,1,0.25,3.0\n",
        )
        dataset = load_dataset(path, {1: "gaussian", 2: "binary"})
        self.assertEqual(("b", "a"), dataset.subject_ids)
        self.assertEqual(4, dataset.n)
        self.assertEqual([0, 1, 1, 1], dataset.subject_index.tolist())
        self.assertEqual([1, 1, 1, 2], dataset.response.tolist())
        self.assertEqual([0.5, 0.25, 0.75, 0.25], dataset.t.tolist())
        self.assertEqual((0.25, 0.75), dataset.domain)
        self.assertEqual([[1, 0], [2, 1]], dataset.counts.tolist())
        self.assertEqual(slice(1, 4), dataset.subject_slice(1))

    def test_bad_header(self) -> None:
        """Test a wrong header is a parse error on the first line."""
        path = _write(self.directory, "subject,response,t,y\na,1,0.5,1.0\n")
        with self.assertRaises(ParseError) as context:
            load_dataset(path, KINDS)
        self.assertEqual(1, context.exception.line)

    def test_malformed_row(self) -> None:
        """Test a non-numeric location is reported with its line."""
        path = _write(self.directory, "subject_id,response_id,t,y\na,1,zero,1.0\n")
        with self.assertRaises(ParseError) as context:
            load_dataset(path, KINDS)
        self.assertEqual(2, context.exception.line)

    def test_binary_domain(self) -> None:
        """Test binary responses only admit 0 and 1."""
        path = _write(self.directory, "subject_id,response_id,t,y\na,2,0.5,0.5\n")
        with self.assertRaises(DomainError):
            load_dataset(path, KINDS)

    def test_undeclared_response(self) -> None:
        """Test records of undeclared responses are rejected."""
        path = _write(self.directory, "subject_id,response_id,t,y\na,3,0.5,0.0\n")
        with self.assertRaises(SchemaError):
            load_dataset(path, KINDS)

    def test_duplicate(self) -> None:
        """Test duplicated triples are rejected."""
        path = _write(
            self.directory, "subject_id,response_id,t,y\na,1,0.5,0.0\na,1,0.5,1.0\n"
        )
        with self.assertRaises(DataError):
            load_dataset(path, KINDS)

    def test_write_then_load(self) -> None:
        """Test a written dataset loads back identically."""
        dataset = FunctionalDataset.from_arrays(
            ["x", "x", "y"], [1, 2, 1], [0.0, 0.5, 1.0], [1.5, 1.0, -2.0], KINDS
        )
        path = self.directory.joinpath("out.csv")
        write_dataset(dataset, path)
        loaded = load_dataset(path, KINDS)
        self.assertEqual(dataset.subject_ids, loaded.subject_ids)
        np.testing.assert_array_equal(dataset.y, loaded.y)
        np.testing.assert_array_equal(dataset.t, loaded.t)

    def test_covariates(self) -> None:
        """Test loading and standardizing subject-level covariates."""
        path = _write(self.directory, "subject_id,age\n1,20\n2,40\n", name="covariates.csv")
        covariates = load_covariates(path)
        self.assertEqual(("age",), covariates.names)
        np.testing.assert_array_equal([40.0], covariates.get("2"))
        standardized = load_covariates(path, standardize=True)
        self.assertAlmostEqual(-np.sqrt(0.5), standardized.get("1")[0])
        with self.assertRaises(DataError):
            covariates.get("3")


class TestDataset(unittest.TestCase):
    """Test dataset construction and transformation."""

    def test_domain(self) -> None:
        """Test locations outside an explicit domain are rejected."""
        with self.assertRaises(DomainError):
            FunctionalDataset.from_arrays(["a"], [1], [1.5], [0.0], KINDS, domain=(0.0, 1.0))

    def test_subject_order(self) -> None:
        """Test an explicit order keeps subjects without records."""
        dataset = FunctionalDataset.from_arrays(
            ["b"], [1], [0.5], [1.0], KINDS, domain=(0.0, 1.0), subject_order=["a", "b"]
        )
        self.assertEqual(2, dataset.n_subjects)
        self.assertEqual([0, 1], dataset.subject_counts.tolist())

    def test_subset(self) -> None:
        """Test restricting to responses and subjects."""
        dataset = FunctionalDataset.from_arrays(
            ["a", "a", "b"], [1, 2, 2], [0.0, 0.5, 1.0], [1.5, 1.0, 0.0], KINDS
        )
        binary = dataset.subset([2])
        self.assertEqual([2], binary.responses)
        self.assertEqual(2, binary.n)
        self.assertEqual((0.0, 1.0), binary.domain)
        self.assertEqual(("b",), dataset.without_subjects(["a"]).subject_ids)

    def test_links(self) -> None:
        """Test the links of each response kind."""
        eta = np.array([-1.0, 0.0, 2.0])
        np.testing.assert_array_equal([0.0, 0.0, 1.0], ResponseKind.binary.h(eta))
        np.testing.assert_allclose([0.1587, 0.5, 0.9772], ResponseKind.binary.g(eta), atol=1e-4)
        np.testing.assert_array_equal(eta, ResponseKind.gaussian.g(eta))
        np.testing.assert_allclose(eta, ResponseKind.binary.g_inverse(ResponseKind.binary.g(eta)))


class TestScaling(unittest.TestCase):
    """Test scaling continuous responses."""

    def test_scale(self) -> None:
        """Test the sample standard deviation of {0, 2} is the square root of two."""
        dataset = FunctionalDataset.from_arrays(
            ["a", "b", "a"], [1, 1, 2], [0.0, 1.0, 0.5], [0.0, 2.0, 1.0], KINDS
        )
        scaled, info = scale_continuous(dataset)
        self.assertAlmostEqual(np.sqrt(2.0), info.scale(1))
        self.assertEqual(1.0, info.scale(2))
        np.testing.assert_allclose([0.0, 1.0, np.sqrt(2.0)], np.sort(scaled.y))
        np.testing.assert_allclose(dataset.y, unscale(scaled, info).y)

    def test_degenerate(self) -> None:
        """Test a constant Gaussian response can't be scaled."""
        dataset = FunctionalDataset.from_arrays(["a", "b"], [1, 1], [0.0, 1.0], [3.0, 3.0], KINDS)
        with self.assertRaises(DegenerateScaleError):
            scale_continuous(dataset)
