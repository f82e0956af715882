"""Tests for the moment estimators of the latent covariance."""

import tempfile
import unittest
from pathlib import Path

import numpy as np
import pytest
from scipy.special import ndtri

from latent_fda.data import FunctionalDataset, ResponseKind, SubjectCovariates
from latent_fda.latent_cov import (
    CLAMP,
    MomentEstimates,
    assemble,
    estimate_latent_covariance,
    estimate_moments,
    export_blocks,
    k12_hat,
    k22_hat,
    residualize,
)
from latent_fda.simulator import SimulationConfig, _random_basis, build_sigma, generate_dataset
from latent_fda.smoothing import GridSpec, SmoothedCurve, SmoothedSurface
from latent_fda.utils import DataError, DimensionError

GRID = GridSpec(lower=0.0, upper=1.0, size=5)
KINDS = {1: ResponseKind.gaussian, 2: ResponseKind.binary}
PHI_0 = 1 / np.sqrt(2 * np.pi)


def _moments(eta1: float, eta2: float, s12: float, s22: float) -> MomentEstimates:
    shape = (GRID.size, GRID.size)
    return MomentEstimates(
        grid=GRID,
        kinds=KINDS,
        eta={
            1: SmoothedCurve(grid=GRID, values=np.full(GRID.size, eta1), lam=1.0),
            2: SmoothedCurve(grid=GRID, values=np.full(GRID.size, eta2), lam=1.0),
        },
        mu={1: np.full(GRID.size, eta1), 2: ndtri(np.full(GRID.size, eta2))},
        second={
            (1, 2): SmoothedSurface(grid=GRID, values=np.full(shape, s12), lam=1.0),
            (2, 2): SmoothedSurface(grid=GRID, values=np.full(shape, s22), lam=1.0),
        },
    )


class TestCrossBlocks(unittest.TestCase):
    """Test the blocks derived from the second moments."""

    def test_k22_denominator(self) -> None:
        """Test a binary mean of one half divides by the squared normal density at zero."""
        self.assertAlmostEqual(0.1592, PHI_0**2, places=4)
        c = 0.3
        m = _moments(0.0, 0.5, 0.0, 0.25 + c * PHI_0**2)
        np.testing.assert_allclose(c, k22_hat(m))

    def test_k12(self) -> None:
        """Test a zero continuous mean and a binary mean of one half."""
        c = 0.2
        k = k12_hat(_moments(0.0, 0.5, c, 0.25), continuous=1, binary=2)
        np.testing.assert_allclose(2.5066 * c, k, rtol=1e-4)

    def test_kinds(self) -> None:
        """Test the estimators check the response kinds."""
        m = _moments(0.0, 0.5, 0.0, 0.25)
        with self.assertRaises(DataError):
            k22_hat(m, response=1)
        with self.assertRaises(DataError):
            k12_hat(m, continuous=2, binary=1)


class TestAssemble(unittest.TestCase):
    """Test assembling blocks."""

    def test_assemble(self) -> None:
        """Test the lower blocks are transposes of the upper ones."""
        rng = np.random.default_rng(0)
        a = rng.standard_normal((5, 5))
        estimate = assemble({(1, 1): a @ a.T, (1, 2): a, (2, 2): np.eye(5)}, GRID)
        np.testing.assert_array_equal(a.T, estimate.block(2, 1))
        self.assertEqual((10, 10), estimate.matrix.shape)
        np.testing.assert_allclose(estimate.matrix, estimate.matrix.T)
        self.assertEqual((1,), estimate.subset([1]).responses)

    def test_errors(self) -> None:
        """Test missing and misshapen blocks."""
        with self.assertRaises(DimensionError):
            assemble({(1, 1): np.eye(5), (2, 2): np.eye(5)}, GRID, responses=[1, 2])
        with self.assertRaises(DimensionError):
            assemble({(1, 1): np.eye(4)}, GRID)


class TestEstimate(unittest.TestCase):
    """Test estimating from data."""

    def test_clamp(self) -> None:
        """Test a binary mean of one is clamped before inverting the link."""
        n_locations = 12
        grid = np.linspace(0, 1, n_locations)
        dataset = FunctionalDataset.from_arrays(
            np.repeat([f"s{i}" for i in range(5)], n_locations),
            np.full(5 * n_locations, 2),
            np.tile(grid, 5),
            np.ones(5 * n_locations),
            {2: ResponseKind.binary},
        )
        with self.assertLogs("latent_fda.latent_cov", level="WARNING"):
            moments = estimate_moments(dataset, grid=GRID)
        np.testing.assert_allclose(ndtri(1 - CLAMP), moments.mu[2])

    def test_export(self) -> None:
        """Test writing one CSV per ordered pair of responses."""
        estimate = assemble({(1, 1): np.eye(5), (1, 2): np.zeros((5, 5)), (2, 2): np.eye(5)}, GRID)
        with tempfile.TemporaryDirectory() as directory:
            paths = export_blocks(estimate, directory)
            self.assertEqual(
                ["K_1_1.csv", "K_1_2.csv", "K_2_1.csv", "K_2_2.csv"], [p.name for p in paths]
            )
            self.assertTrue(all(Path(p).is_file() for p in paths))

    @pytest.mark.slow
    def test_continuous_block(self) -> None:
        """Test the continuous auto-covariance of simulated data is recovered."""
        cfg = SimulationConfig(n_subjects=400, n_locations=30)
        dataset, _ = generate_dataset(cfg, np.random.default_rng(11))
        grid = GridSpec(lower=0.0, upper=1.0, size=30)
        _, estimate = estimate_latent_covariance(dataset, grid=grid, threads=2)
        psi = _random_basis(cfg).evaluate(1, grid.points)
        truth = psi @ build_sigma(cfg) @ psi.T
        error = np.linalg.norm(estimate.block(1, 1) - truth) / np.linalg.norm(truth)
        self.assertLess(error, 0.25)
        np.testing.assert_allclose(estimate.matrix, estimate.matrix.T, atol=1e-10)


class TestCrossCovariance(unittest.TestCase):
    """Test the cross-covariance of simulated continuous and binary responses."""

    def _estimate(self, cfg: SimulationConfig) -> tuple[np.ndarray, np.ndarray]:
        dataset, _ = generate_dataset(cfg, np.random.default_rng(12))
        grid = GridSpec(lower=0.0, upper=1.0, size=51)
        moments = estimate_moments(dataset, grid=grid, threads=3)
        basis = _random_basis(cfg)
        psi1 = basis.evaluate(1, grid.points)
        psi2 = basis.evaluate(2, grid.points)
        truth = cfg.random_effect_scale * psi1 @ build_sigma(cfg) @ psi2.T
        return k12_hat(moments), truth

    def test_accuracy(self) -> None:
        """Test the integrated relative squared error with a small latent scale."""
        estimate, truth = self._estimate(
            SimulationConfig(n_subjects=2000, random_effect_scale=0.1)
        )
        error = np.sum((estimate - truth) ** 2) / np.sum(truth**2)
        self.assertLess(error, 0.15)

    def test_sign(self) -> None:
        """Test the sign agrees with the truth where the truth is far from zero."""
        estimate, truth = self._estimate(SimulationConfig(n_subjects=2000))
        strong = np.abs(truth) > np.median(np.abs(truth))
        agreement = np.mean(np.sign(estimate[strong]) == np.sign(truth[strong]))
        self.assertGreater(agreement, 0.9)


class TestResidualize(unittest.TestCase):
    """Test removing covariate effects before estimating the covariance."""

    def setUp(self) -> None:
        """Set up a dataset whose continuous response depends on age."""
        rng = np.random.default_rng(5)
        n, n_locations = 40, 6
        self.ages = rng.normal(size=n)
        locations = np.linspace(0, 1, n_locations)
        subjects, responses, t, y = [], [], [], []
        for i in range(n):
            subjects.extend([str(i)] * 2 * n_locations)
            responses.extend([1] * n_locations + [2] * n_locations)
            t.extend(np.tile(locations, 2))
            y.extend(3 * self.ages[i] + rng.normal(size=n_locations))
            y.extend((rng.normal(size=n_locations) + self.ages[i] > 0).astype(float))
        self.dataset = FunctionalDataset.from_arrays(subjects, responses, t, y, KINDS)
        self.covariates = SubjectCovariates(
            names=("age",), values={str(i): np.array([a]) for i, a in enumerate(self.ages)}
        )

    def test_covariates(self) -> None:
        """Test the residuals no longer depend on the covariate."""
        residuals = residualize(self.dataset, self.covariates)
        mask = residuals.response == 1
        ages = self.ages[residuals.subject_index[mask]]
        self.assertLess(abs(np.corrcoef(ages, residuals.y[mask])[0, 1]), 0.05)
        binary = residuals.response == 2
        self.assertAlmostEqual(self.dataset.y[binary].mean(), residuals.y[binary].mean())

    def test_subject_intercept(self) -> None:
        """Test subject means of the continuous response are removed."""
        residuals = residualize(self.dataset, subject_intercept=True)
        mask = residuals.response == 1
        means = np.bincount(residuals.subject_index[mask], weights=residuals.y[mask]) / 6
        np.testing.assert_allclose(0.0, means, atol=1e-12)
        np.testing.assert_array_equal(self.dataset.y[~mask], residuals.y[~mask])
