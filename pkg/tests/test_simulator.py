"""Tests for the data generator and the simulation studies."""

import tempfile
import unittest
from pathlib import Path

import numpy as np
import pytest

from latent_fda.model import FpcaEffects, PredeterminedEffects
from latent_fda.sampler import ChainConfig, PriorConfig
from latent_fda.simulator import (
    BINARY,
    CONTINUOUS,
    METRICS,
    ModelVariant,
    SimulationConfig,
    build_sigma,
    compare_dic,
    generate_dataset,
    run_replication,
    run_study,
    split_heldout,
    true_mean_functions,
    write_study,
)
from latent_fda.smoothing import GridSpec
from latent_fda.utils import ConfigError

TINY_CHAIN = ChainConfig(n_iter=30, burn_in=10)


class TestSigma(unittest.TestCase):
    """Test the separable random-effect covariance."""

    def test_entries(self) -> None:
        """Test the Kronecker ordering and the AR(1) entries."""
        sigma = build_sigma(SimulationConfig())
        self.assertEqual((14, 14), sigma.shape)
        self.assertAlmostEqual(0.25, sigma[0, 2])
        self.assertAlmostEqual(0.8, sigma[0, 7])
        self.assertAlmostEqual(0.8 * 0.5, sigma[1, 7])
        np.testing.assert_array_equal(sigma, sigma.T)
        np.linalg.cholesky(sigma)

    def test_independent(self) -> None:
        """Test uncorrelated responses give a block diagonal covariance."""
        sigma = build_sigma(SimulationConfig(rho_a=0.0))
        np.testing.assert_array_equal(0.0, sigma[:7, 7:])
        np.testing.assert_array_equal(sigma[:7, :7], sigma[7:, 7:])

    def test_invalid(self) -> None:
        """Test correlations that aren't positive definite."""
        with self.assertRaises(ConfigError):
            build_sigma(SimulationConfig(rho_a=1.0))
        with self.assertRaises(ConfigError):
            build_sigma(SimulationConfig(rho=-1.5))


class TestTruth(unittest.TestCase):
    """Test the true marginal mean functions."""

    def test_continuous(self) -> None:
        """Test the quadratic mean of the continuous response."""
        truth = true_mean_functions(SimulationConfig(), GridSpec(lower=0, upper=1, size=3))
        np.testing.assert_allclose([-0.64, 0.36, -0.64], truth.of(CONTINUOUS))

    def test_half_positive(self) -> None:
        """Test the continuous mean is positive on roughly half of the domain."""
        truth = true_mean_functions(SimulationConfig(), GridSpec(lower=0, upper=1, size=1001))
        fraction = float((truth.of(CONTINUOUS) > 0).mean())
        self.assertGreater(fraction, 0.35)
        self.assertLess(fraction, 0.65)

    def test_binary(self) -> None:
        """Test the binary mean is a probability attenuated toward one half."""
        cfg = SimulationConfig()
        grid = GridSpec(lower=0, upper=1, size=11)
        truth = true_mean_functions(cfg, grid)
        probability = truth.of(BINARY)
        self.assertTrue(((probability > 0) & (probability < 1)).all())
        variance = np.asarray(truth.marginal_variance[BINARY])
        self.assertTrue((variance >= 1).all())
        plain = true_mean_functions(cfg.model_copy(update={"random_effect_scale": 0.0}), grid)
        np.testing.assert_allclose(1.0, plain.marginal_variance[BINARY])
        self.assertTrue((np.abs(probability - 0.5) <= np.abs(plain.of(BINARY) - 0.5)).all())


class TestGenerate(unittest.TestCase):
    """Test generating datasets."""

    def test_shape(self) -> None:
        """Test both responses are observed at every location."""
        cfg = SimulationConfig(n_subjects=5)
        dataset, truth = generate_dataset(cfg, np.random.default_rng(0))
        self.assertEqual(5 * 2 * 30, dataset.n)
        self.assertEqual(5, dataset.n_subjects)
        self.assertEqual([CONTINUOUS, BINARY], dataset.responses)
        binary = dataset.y[dataset.response == BINARY]
        self.assertTrue(np.isin(binary, [0.0, 1.0]).all())
        self.assertEqual(30, truth.grid.size)

    def test_deterministic(self) -> None:
        """Test the same generator state gives the same dataset."""
        cfg = SimulationConfig(n_subjects=3)
        first, _ = generate_dataset(cfg, np.random.default_rng(4))
        second, _ = generate_dataset(cfg, np.random.default_rng(4))
        np.testing.assert_array_equal(first.y, second.y)

    def test_noiseless(self) -> None:
        """Test the continuous response is exactly its mean without any variation."""
        cfg = SimulationConfig(n_subjects=3, tau2=0.0, random_effect_scale=0.0)
        dataset, truth = generate_dataset(cfg, np.random.default_rng(5))
        rows = dataset.response == CONTINUOUS
        expected = np.tile(truth.of(CONTINUOUS), 3)
        np.testing.assert_allclose(expected, dataset.y[rows], atol=1e-12)

    def test_intercepts(self) -> None:
        """Test generating data with random subject intercepts."""
        cfg = SimulationConfig(n_subjects=4, intercept_covariance=[[1.0, 0.5], [0.5, 1.0]])
        dataset, _ = generate_dataset(cfg, np.random.default_rng(6), prefix="x")
        self.assertEqual(("x1", "x2", "x3", "x4"), tuple(dataset.subject_ids))

    @pytest.mark.slow
    def test_binary_marginal(self) -> None:
        """Test the empirical success rate matches the marginal probit probability."""
        cfg = SimulationConfig(n_subjects=20_000, n_locations=5)
        dataset, truth = generate_dataset(cfg, np.random.default_rng(7))
        rows = dataset.response == BINARY
        t = dataset.t[rows]
        y = dataset.y[rows]
        for g, point in enumerate(truth.grid.points):
            self.assertAlmostEqual(truth.of(BINARY)[g], y[t == point].mean(), delta=0.02)

    def test_split(self) -> None:
        """Test the first half of held-out subjects lose the continuous response."""
        cfg = SimulationConfig(n_subjects=4, n_locations=3)
        dataset, _ = generate_dataset(cfg, np.random.default_rng(8))
        observed, targets = split_heldout(dataset)
        self.assertEqual(12, observed.n)
        self.assertEqual(12, targets.n)
        for i, subject in enumerate(dataset.subject_ids):
            hidden = CONTINUOUS if i < 2 else BINARY
            k = targets.subject_ids.index(subject)
            np.testing.assert_array_equal(hidden, targets.response[targets.subject_slice(k)])
            k = observed.subject_ids.index(subject)
            self.assertNotIn(hidden, observed.response[observed.subject_slice(k)].tolist())


class TestVariant(unittest.TestCase):
    """Test the compared model variants."""

    def test_config(self) -> None:
        """Test each variant's random effects and joint flag."""
        prior, chain = PriorConfig(), TINY_CHAIN
        self.assertTrue(ModelVariant.bfpca.joint)
        self.assertFalse(ModelVariant.ubsp.joint)
        config = ModelVariant.ufpca.model_config(prior, chain, 30)
        self.assertIsInstance(config.random_effects, FpcaEffects)
        self.assertEqual(30, config.summary_grid_size)
        config = ModelVariant.bbsp.model_config(prior, chain)
        self.assertIsInstance(config.random_effects, PredeterminedEffects)
        self.assertEqual("BBSP", ModelVariant("BBSP").value)


class TestStudy(unittest.TestCase):
    """Test running small studies."""

    def setUp(self) -> None:
        """Set up a small design."""
        self.cfg = SimulationConfig(n_subjects=24, n_locations=12, n_reps=1, n_heldout=4, seed=3)

    def test_replication(self) -> None:
        """Test a replication fills in every metric and is reproducible."""
        variants = [ModelVariant.bbsp, ModelVariant.ubsp]
        result = run_replication(0, self.cfg, variants, TINY_CHAIN, inner_sweeps=2)
        self.assertIsNone(result.error)
        self.assertEqual(4, len(result.metrics))
        for metrics in result.metrics:
            self.assertIsNotNone(metrics.mspe)
            self.assertGreaterEqual(metrics.mise, 0.0)
            self.assertGreaterEqual(metrics.coverage, 0.0)
            self.assertLessEqual(metrics.coverage, 100.0)
        again = run_replication(0, self.cfg, variants, TINY_CHAIN, inner_sweeps=2)
        self.assertEqual(result, again)

    def test_study(self) -> None:
        """Test the study report has a cell per variant, response, and metric."""
        report = run_study(self.cfg, [ModelVariant.bbsp], TINY_CHAIN, inner_sweeps=2)
        self.assertEqual([], report.failures)
        self.assertEqual(2 * len(METRICS), len(report.cells))
        mspe = report.get(ModelVariant.bbsp, BINARY, "mspe")
        self.assertAlmostEqual(100 * mspe, report.to_frame()["hundredths"].iloc[-1])
        with self.assertRaises(KeyError):
            report.get(ModelVariant.ufpca, BINARY, "mspe")
        with tempfile.TemporaryDirectory() as directory:
            csv_path, json_path = write_study(report, Path(directory).joinpath("study"))
            self.assertTrue(csv_path.is_file())
            self.assertTrue(json_path.is_file())

    def test_failure(self) -> None:
        """Test a failing replication is recorded instead of raised."""
        cfg = self.cfg.model_copy(update={"n_subjects": 3})
        result = run_replication(0, cfg, [ModelVariant.bbsp], TINY_CHAIN)
        self.assertEqual([], result.metrics)
        self.assertIsNotNone(result.error)

    def test_dic_requires_intercepts(self) -> None:
        """Test comparing intercept models needs generated intercepts."""
        with self.assertRaises(ConfigError):
            compare_dic(self.cfg, TINY_CHAIN)

    @pytest.mark.slow
    def test_fpca_variants(self) -> None:
        """Test the FPCA variants run end to end."""
        cfg = SimulationConfig(n_subjects=60, n_reps=1, n_heldout=4, seed=4)
        result = run_replication(
            0, cfg, [ModelVariant.bfpca, ModelVariant.ufpca], ChainConfig(n_iter=200, burn_in=50)
        )
        self.assertIsNone(result.error)
        self.assertEqual(4, len(result.metrics))

    @pytest.mark.slow
    def test_dic_prefers_intercepts(self) -> None:
        """Test DIC prefers the model with intercepts when the data have them."""
        cfg = SimulationConfig(
            n_subjects=50,
            n_reps=20,
            intercept_covariance=[[1.0, 0.5], [0.5, 1.0]],
            seed=9,
        )
        comparisons = compare_dic(cfg, ChainConfig(n_iter=1_500, burn_in=500))
        self.assertEqual(20, len(comparisons))
        self.assertGreaterEqual(sum(c.intercept_wins for c in comparisons), 16)

    @pytest.mark.slow
    def test_bivariate_borrows_strength(self) -> None:
        """Test the joint FPCA model predicts both responses better with correlated effects."""
        cfg = SimulationConfig(n_subjects=50, n_reps=20, seed=12)
        variants = [ModelVariant.bfpca, ModelVariant.ufpca]
        report = run_study(cfg, variants, ChainConfig(n_iter=4_000, burn_in=1_000), threads=8)
        self.assertEqual([], report.failures)
        for response in (CONTINUOUS, BINARY):
            with self.subTest(response=response):
                self.assertLess(
                    report.get(ModelVariant.bfpca, response, "mspe"),
                    report.get(ModelVariant.ufpca, response, "mspe"),
                )

    @pytest.mark.slow
    def test_independent_gap(self) -> None:
        """Test the joint and separate FPCA models predict alike without correlated effects."""
        cfg = SimulationConfig(n_subjects=100, n_reps=10, rho_a=0.0, seed=13)
        variants = [ModelVariant.bfpca, ModelVariant.ufpca]
        report = run_study(cfg, variants, ChainConfig(n_iter=4_000, burn_in=1_000), threads=8)
        joint = report.get(ModelVariant.bfpca, CONTINUOUS, "mspe")
        separate = report.get(ModelVariant.ufpca, CONTINUOUS, "mspe")
        self.assertLess(abs(joint - separate) / separate, 0.1)
