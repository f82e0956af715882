"""Tests for run configurations and the command pipelines."""

import json
import tempfile
import unittest
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
import pytest

from latent_fda.data import write_dataset
from latent_fda.pipeline import (
    RunConfig,
    load_run,
    load_run_config,
    resolve_output,
    run_cov,
    run_fit,
    run_fpca,
    run_metrics,
    run_predict,
    run_simulate,
)
from latent_fda.simulator import SimulationConfig, generate_dataset
from latent_fda.utils import ConfigError, DataError


def small_config(**updates: Any) -> dict[str, Any]:
    """Get a configuration of a quick fit to simulated data."""
    rv: dict[str, Any] = {
        "simulation": {"n_subjects": 24, "n_locations": 12, "n_heldout": 4, "seed": 2},
        "model": {
            "random_effects": {"mode": "predetermined"},
            "chain": {"n_iter": 30, "burn_in": 10},
            "summary_grid_size": 12,
        },
        "inner_sweeps": 2,
        "threads": 1,
    }
    rv.update(updates)
    return rv


class TestRunConfig(unittest.TestCase):
    """Test loading and overriding run configurations."""

    def setUp(self) -> None:
        """Set up a temporary directory."""
        self._directory = tempfile.TemporaryDirectory()
        self.directory = Path(self._directory.name)

    def tearDown(self) -> None:
        """Remove the temporary directory."""
        self._directory.cleanup()

    def _write(self, data: object) -> Path:
        path = self.directory.joinpath("config.json")
        path.write_text(json.dumps(data))
        return path

    def test_relative_paths(self) -> None:
        """Test relative data paths are resolved against the configuration."""
        config = load_run_config(self._write({"dataset": "data.csv", "covariates": "x.csv"}))
        self.assertEqual(self.directory.resolve().joinpath("data.csv"), config.dataset)
        self.assertEqual(self.directory.resolve().joinpath("x.csv"), config.covariates)

    def test_invalid(self) -> None:
        """Test configurations that don't validate."""
        for data in (
            {},
            {"dataset": "data.csv", "simulation": {}},
            {"dataset": "data.csv", "spec_version": 2},
            {"dataset": "data.csv", "model": {"chain": {"n_iter": 5, "burn_in": 5}}},
            [1, 2],
        ):
            with self.subTest(data=data), self.assertRaises(ConfigError):
                load_run_config(self._write(data))

    def test_unreadable(self) -> None:
        """Test missing and malformed files."""
        with self.assertRaises(ConfigError):
            load_run_config(self.directory.joinpath("missing.json"))
        path = self.directory.joinpath("config.json")
        path.write_text("{")
        with self.assertRaises(ConfigError):
            load_run_config(path)

    def test_overrides(self) -> None:
        """Test the seed override reaches the chain and the simulation."""
        config = RunConfig.model_validate(small_config())
        updated = config.with_overrides(seed=7, threads=3)
        self.assertEqual(7, updated.seed)
        assert updated.simulation is not None
        self.assertEqual(7, updated.simulation.seed)
        self.assertEqual(3, updated.threads)
        self.assertEqual(config, config.with_overrides(seed=None))

    def test_digest(self) -> None:
        """Test the hash ignores the output directory and threads but not the seed."""
        config = RunConfig.model_validate(small_config())
        moved = config.model_copy(update={"output": self.directory, "threads": 8})
        self.assertEqual(config.digest(), moved.digest())
        self.assertNotEqual(config.digest(), config.with_overrides(seed=1).digest())

    def test_resolve_output(self) -> None:
        """Test an explicit output directory is created."""
        config = RunConfig.model_validate(small_config())
        out = resolve_output(config, self.directory.joinpath("nested", "out"))
        self.assertTrue(out.is_dir())


class TestPipeline(unittest.TestCase):
    """Test fitting, predicting, and evaluating a run."""

    def setUp(self) -> None:
        """Set up a temporary directory."""
        self._directory = tempfile.TemporaryDirectory()
        self.directory = Path(self._directory.name)

    def tearDown(self) -> None:
        """Remove the temporary directory."""
        self._directory.cleanup()

    def test_simulate_requires_block(self) -> None:
        """Test simulating needs a simulation block."""
        config = RunConfig(dataset=self.directory.joinpath("data.csv"))
        with self.assertRaises(ConfigError):
            run_simulate(config, self.directory)

    def test_missing_dataset(self) -> None:
        """Test fitting a dataset that doesn't exist."""
        config = RunConfig(dataset=self.directory.joinpath("data.csv"))
        with self.assertRaises(DataError):
            run_fit(config, self.directory)

    def test_missing_run(self) -> None:
        """Test loading a directory without a fitted run."""
        with self.assertRaises(DataError):
            load_run(self.directory)

    def test_simulated(self) -> None:
        """Test the full cycle on simulated data."""
        config = RunConfig.model_validate(small_config())
        paths = run_fit(config, self.directory)
        names = {path.name for path in paths}
        for name in (
            "run_config.json",
            "manifest.json",
            "draws.csv",
            "summary_1.csv",
            "summary_2.csv",
            "dic.json",
            "truth.csv",
            "heldout_observed.csv",
            "heldout_targets.csv",
        ):
            self.assertIn(name, names)
        self.assertNotIn("alpha.npy", names)

        run = load_run(self.directory)
        self.assertEqual(20, run.draws.n_draws)
        self.assertEqual(20, run.basis.n_columns)
        self.assertEqual(config.digest(), run.manifest.config_hash)

        predictions = pd.read_csv(run_predict(self.directory, self.directory))
        self.assertEqual(4 * 12, len(predictions))
        self.assertFalse(predictions["prediction"].isna().any())

        report = json.loads(run_metrics(self.directory, self.directory).read_text())
        self.assertEqual({"1", "2"}, set(report["functions"]))
        self.assertEqual({"1", "2"}, set(report["mspe"]))
        self.assertIn("dic", report)
        self.assertEqual(6, len(report["mcse"]))

    def test_dataset(self) -> None:
        """Test fitting a dataset read from CSV with stored random effects."""
        cfg = SimulationConfig(n_subjects=24, n_locations=10)
        dataset, _ = generate_dataset(cfg, np.random.default_rng(3))
        write_dataset(dataset, self.directory.joinpath("data.csv"))
        data = small_config(dataset="data.csv")
        del data["simulation"]
        data["model"]["chain"]["store_alpha"] = True
        path = self.directory.joinpath("config.json")
        path.write_text(json.dumps(data))
        config = load_run_config(path)

        out = self.directory.joinpath("out")
        out.mkdir()
        names = {path.name for path in run_fit(config, out)}
        self.assertIn("alpha.npy", names)
        self.assertNotIn("truth.csv", names)
        run = load_run(out)
        self.assertEqual((20, 24, 20), run.draws.require_alpha().shape)
        with self.assertRaises(DataError):
            run_predict(out, out)
        report = json.loads(run_metrics(out, out).read_text())
        self.assertNotIn("functions", report)
        self.assertNotIn("mspe", report)

    @pytest.mark.slow
    def test_cov_fpca(self) -> None:
        """Test writing the latent covariance blocks and the eigensystem."""
        data = small_config()
        data["simulation"].update(n_subjects=80, n_locations=30)
        data["model"]["random_effects"] = {"mode": "fpca", "grid_size": 41}
        config = RunConfig.model_validate(data)
        names = {path.name for path in run_cov(config, self.directory)}
        self.assertEqual({f"K_{p}_{q}.csv" for p in (1, 2) for q in (1, 2)}, names)
        names = {path.name for path in run_fpca(config, self.directory)}
        self.assertIn("eigenvalues.csv", names)
        self.assertIn("eigenfunctions_2.csv", names)
        self.assertIn("fpca_basis.npz", names)
        eigenvalues = pd.read_csv(self.directory.joinpath("eigenvalues.csv"))
        self.assertTrue(eigenvalues["retained"].iloc[0])
        self.assertTrue((eigenvalues["eigenvalue"].diff().dropna() <= 0).all())
