"""Tests for the multivariate functional principal components."""

import tempfile
import unittest
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from latent_fda.data import FunctionalDataset, ResponseKind
from latent_fda.latent_cov import LatentCovarianceEstimate, assemble, estimate_latent_covariance
from latent_fda.mfpca import (
    EigenSystem,
    FpcaBasis,
    TruncationRule,
    build_basis,
    eigendecompose,
    export_eigensystem,
    truncate,
    univariate_fpca,
)
from latent_fda.smoothing import GridSpec
from latent_fda.utils import DegenerateCovarianceError, DimensionError, DomainError

GRID = GridSpec(lower=0.0, upper=1.0, size=21)


def _eigensystem(eigenvalues: list[float]) -> EigenSystem:
    return EigenSystem(
        grid=GRID,
        responses=(1,),
        eigenvalues=np.array(eigenvalues),
        eigenfunctions=np.zeros((len(eigenvalues), 1, GRID.size)),
    )


def _orthonormal(n: int, seed: int = 0) -> np.ndarray:
    """Get columns that are orthonormal under the Riemann-sum inner product."""
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((2 * GRID.size, n)))
    return q / np.sqrt(GRID.spacing)


def _bivariate(weights: list[float]) -> tuple[np.ndarray, np.ndarray]:
    v = _orthonormal(len(weights))
    matrix = (v * weights) @ v.T
    return v, matrix


def _estimate(matrix: np.ndarray) -> LatentCovarianceEstimate:
    g = GRID.size
    return assemble(
        {(1, 1): matrix[:g, :g], (1, 2): matrix[:g, g:], (2, 2): matrix[g:, g:]}, GRID
    )


class TestEigendecompose(unittest.TestCase):
    """Test the eigendecomposition of the latent covariance."""

    def test_two_components(self) -> None:
        """Test two orthogonal functions with weights four and one."""
        v, matrix = _bivariate([4.0, 1.0])
        es = eigendecompose(_estimate(matrix))
        self.assertEqual(2, es.n)
        np.testing.assert_allclose([4.0, 1.0], es.eigenvalues, atol=1e-8)
        np.testing.assert_allclose(np.eye(2), es.inner_products(), atol=1e-8)
        self.assertEqual((2, 2, GRID.size), es.eigenfunctions.shape)
        flat = es.eigenfunctions[0].ravel()
        self.assertTrue(np.allclose(flat, v[:, 0]) or np.allclose(flat, -v[:, 0]))

    def test_rank_one_sign(self) -> None:
        """Test a single component is recovered with its largest entry positive."""
        v, matrix = _bivariate([2.0])
        es = eigendecompose(_estimate(matrix))
        self.assertEqual(1, es.n)
        flat = es.eigenfunctions[0].ravel()
        self.assertGreater(flat[np.argmax(np.abs(flat))], 0)
        np.testing.assert_allclose(np.abs(v[:, 0]), np.abs(flat), atol=1e-8)

    def test_zero(self) -> None:
        """Test a zero covariance has no positive eigenvalues."""
        es = eigendecompose(_estimate(np.zeros((2 * GRID.size, 2 * GRID.size))))
        self.assertEqual(0, es.n)
        with self.assertRaises(DegenerateCovarianceError):
            truncate(es)

    def test_negative_dropped(self) -> None:
        """Test negative eigenvalues are dropped."""
        _, matrix = _bivariate([3.0, -0.5])
        es = eigendecompose(_estimate(matrix))
        np.testing.assert_allclose([3.0], es.eigenvalues, atol=1e-8)


class TestTruncate(unittest.TestCase):
    """Test choosing the number of components."""

    def test_both_thresholds(self) -> None:
        """Test the second component fails the individual threshold."""
        es = _eigensystem([6.0, 3.0, 0.9, 0.1])
        self.assertEqual(3, truncate(es, TruncationRule(p1=0.9, p2=0.1)))

    def test_single(self) -> None:
        """Test a single eigenvalue."""
        self.assertEqual(1, truncate(_eigensystem([2.0]), TruncationRule(p1=0.5, p2=0.99)))

    def test_fallback(self) -> None:
        """Test all components are kept when no number satisfies both thresholds."""
        with self.assertLogs("latent_fda.mfpca", level="WARNING"):
            m = truncate(_eigensystem([1.0, 1.0]), TruncationRule(p1=1.0, p2=0.4))
        self.assertEqual(2, m)

    def test_default_individual(self) -> None:
        """Test the individual threshold defaults to one over the number of components."""
        es = _eigensystem([10.0, 5.0, 0.5, 0.1])
        self.assertEqual(3, truncate(es, TruncationRule(p1=0.95)))


class TestBasis(unittest.TestCase):
    """Test the scaled eigenfunction basis."""

    def setUp(self) -> None:
        """Set up an eigensystem with three components."""
        _, self.matrix = _bivariate([4.0, 2.0, 1.0])
        self.es = eigendecompose(_estimate(self.matrix))

    def test_norm(self) -> None:
        """Test the first function is scaled by the root of its eigenvalue."""
        basis = build_basis(self.es, 1)
        norm = np.sqrt(np.sum(basis.values[0] ** 2) * GRID.spacing)
        self.assertAlmostEqual(2.0, norm, places=8)

    def test_reconstruct(self) -> None:
        """Test an identity coefficient covariance reproduces the covariance."""
        basis = build_basis(self.es, 3)
        g = GRID.size
        np.testing.assert_allclose(self.matrix[:g, g:], basis.covariance(1, 2), atol=1e-8)
        np.testing.assert_allclose(self.matrix[g:, g:], basis.covariance(2, 2), atol=1e-8)

    def test_interpolate(self) -> None:
        """Test interpolation at grid points returns the stored values."""
        basis = build_basis(self.es, 2)
        values = basis.evaluate(2, [GRID.points[4]])[0]
        np.testing.assert_array_equal(basis.values[:, 1, 4], values)
        self.assertEqual((3, 2), basis.evaluate(1, [0.0, 0.5, 1.0]).shape)
        with self.assertRaises(DomainError):
            basis.evaluate(1, [1.5])
        with self.assertRaises(DimensionError):
            basis.evaluate(3, [0.5])

    def test_too_many(self) -> None:
        """Test keeping more components than exist."""
        with self.assertRaises(DimensionError):
            build_basis(self.es, 4)

    def test_save_load(self) -> None:
        """Test saving and loading a basis."""
        basis = build_basis(self.es, 2)
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory).joinpath("basis.npz")
            basis.save(path)
            loaded = FpcaBasis.load(path)
        self.assertEqual(basis.grid, loaded.grid)
        self.assertEqual(basis.responses, loaded.responses)
        np.testing.assert_array_equal(basis.values, loaded.values)

    def test_univariate(self) -> None:
        """Test separate FPCAs give components that belong to a single response."""
        basis = univariate_fpca(_estimate(self.matrix), TruncationRule(p1=0.999))
        self.assertGreater(basis.n_columns, 1)
        owners = [np.abs(basis.values[k]).sum(axis=1) > 0 for k in range(basis.n_columns)]
        self.assertTrue(all(sum(owner) == 1 for owner in owners))
        np.testing.assert_array_equal(0.0, basis.covariance(1, 2))

    def test_export(self) -> None:
        """Test writing the eigensystem."""
        with tempfile.TemporaryDirectory() as directory:
            paths = export_eigensystem(self.es, 2, directory)
            self.assertEqual(
                ["eigenvalues.csv", "eigenfunctions_1.csv", "eigenfunctions_2.csv"],
                [path.name for path in paths],
            )
            frame = pd.read_csv(paths[0])
            self.assertEqual([True, True, False], frame["retained"].tolist())
            self.assertEqual(["t", "theta_1", "theta_2"], pd.read_csv(paths[1]).columns.tolist())


@pytest.mark.slow
class TestRecovery(unittest.TestCase):
    """Test recovering a known eigensystem from simulated data."""

    def test_two_components(self) -> None:
        """Test two bivariate components with variances four and one."""
        rng = np.random.default_rng(21)
        n = 2000
        t = np.linspace(0, 1, 20)

        def _components(x: np.ndarray) -> np.ndarray:
            first, second = np.sin(2 * np.pi * x), np.sin(4 * np.pi * x)
            return np.array([[first, first], [second, -second]])

        eigenvalues = np.array([4.0, 1.0])
        scores = rng.standard_normal((n, 2)) * np.sqrt(eigenvalues)
        curves = np.einsum("ik,kpl->ipl", scores, _components(t))
        curves += rng.normal(0.0, 0.5, size=curves.shape)
        dataset = FunctionalDataset.from_arrays(
            np.repeat([f"s{i}" for i in range(n)], 2 * len(t)),
            np.tile(np.repeat([1, 2], len(t)), n),
            np.tile(t, 2 * n),
            curves.ravel(),
            {1: ResponseKind.gaussian, 2: ResponseKind.gaussian},
        )
        grid = GridSpec(lower=0.0, upper=1.0, size=41)
        _, estimate = estimate_latent_covariance(dataset, grid=grid, threads=3)
        es = eigendecompose(estimate)
        np.testing.assert_allclose(eigenvalues, es.eigenvalues[:2], rtol=0.1)
        truth = _components(grid.points)
        for k in range(2):
            alignment = abs(np.sum(es.eigenfunctions[k] * truth[k]) * grid.spacing)
            with self.subTest(component=k):
                self.assertGreater(alignment, 0.95)
