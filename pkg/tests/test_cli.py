"""Tests for the command line interface."""

import json
import tempfile
import unittest
from pathlib import Path
from unittest import mock

import pytest
from click.testing import CliRunner

from latent_fda import pipeline
from latent_fda.cli import EXIT_CONFIG, main
from latent_fda.utils import DimensionError
from tests.test_pipeline import small_config


class TestCommands(unittest.TestCase):
    """Test running the commands."""

    def setUp(self) -> None:
        """Set up a runner and a configuration of a quick fit."""
        self.runner = CliRunner()
        self._directory = tempfile.TemporaryDirectory()
        self.directory = Path(self._directory.name)
        self.config = self.directory.joinpath("config.json")
        self.config.write_text(json.dumps(small_config()))

    def tearDown(self) -> None:
        """Remove the temporary directory."""
        self._directory.cleanup()

    def _invoke(self, *args: str) -> None:
        result = self.runner.invoke(main, list(args))
        self.assertEqual(0, result.exit_code, msg=result.output)

    def test_simulate(self) -> None:
        """Test simulating a dataset."""
        out = self.directory.joinpath("sim")
        self._invoke("simulate", "--config", str(self.config), "--out", str(out))
        self.assertTrue(out.joinpath("data.csv").is_file())
        self.assertTrue(out.joinpath("heldout_targets.csv").is_file())

    def test_fit_predict_metrics(self) -> None:
        """Test fitting, then predicting and evaluating the run."""
        out = self.directory.joinpath("run")
        self._invoke("fit", "--config", str(self.config), "--out", str(out), "--no-progress")
        self.assertTrue(out.joinpath("manifest.json").is_file())
        self._invoke("predict", "--run", str(out))
        self.assertTrue(out.joinpath("predictions.csv").is_file())
        evaluation = self.directory.joinpath("evaluation")
        self._invoke("metrics", "--run", str(out), "--out", str(evaluation))
        report = json.loads(evaluation.joinpath("metrics.json").read_text())
        self.assertIn("mspe", report)

    def test_deterministic(self) -> None:
        """Test the same seed writes byte-identical draws for any number of threads."""
        contents = []
        for name, threads in (("a", "1"), ("b", "1"), ("c", "2")):
            out = self.directory.joinpath(name)
            self._invoke(
                "fit",
                "--config",
                str(self.config),
                "--out",
                str(out),
                "--seed",
                "11",
                "--threads",
                threads,
                "--no-progress",
            )
            contents.append(out.joinpath("draws.csv").read_bytes())
        self.assertEqual(contents[0], contents[1])
        self.assertEqual(contents[0], contents[2])

    @pytest.mark.slow
    def test_deterministic_fpca(self) -> None:
        """Test smoothing in several threads gives byte-identical draws of an FPCA fit."""
        data = small_config()
        data["simulation"].update(n_subjects=60, n_locations=20)
        data["model"]["random_effects"] = {"mode": "fpca", "grid_size": 31}
        self.config.write_text(json.dumps(data))
        contents = []
        for threads in ("1", "3"):
            out = self.directory.joinpath(f"fpca_{threads}")
            self._invoke(
                "fit",
                "--config",
                str(self.config),
                "--out",
                str(out),
                "--threads",
                threads,
                "--no-progress",
            )
            contents.append(out.joinpath("draws.csv").read_bytes())
        self.assertEqual(contents[0], contents[1])

    def test_missing_dataset(self) -> None:
        """Test a missing dataset exits with the configuration error code."""
        self.config.write_text(json.dumps({"dataset": "missing.csv"}))
        result = self.runner.invoke(
            main, ["fit", "--config", str(self.config), "--out", str(self.directory)]
        )
        self.assertEqual(EXIT_CONFIG, result.exit_code)

    def test_invalid_config(self) -> None:
        """Test an invalid configuration exits with the configuration error code."""
        self.config.write_text(json.dumps({"simulation": {"rho_a": 2}, "dataset": "x.csv"}))
        result = self.runner.invoke(main, ["cov", "--config", str(self.config)])
        self.assertEqual(EXIT_CONFIG, result.exit_code)
        result = self.runner.invoke(
            main, ["fpca", "--config", str(self.directory.joinpath("missing.json"))]
        )
        self.assertEqual(EXIT_CONFIG, result.exit_code)

    def test_study_requires_simulation(self) -> None:
        """Test the study command needs a simulation block."""
        self.config.write_text(json.dumps({"dataset": "missing.csv"}))
        result = self.runner.invoke(
            main, ["study", "--config", str(self.config), "--out", str(self.directory)]
        )
        self.assertEqual(EXIT_CONFIG, result.exit_code)

    def test_too_few_subjects(self) -> None:
        """Test fitting a full covariance to too few subjects is a configuration error."""
        data = small_config()
        data["simulation"]["n_subjects"] = 8
        self.config.write_text(json.dumps(data))
        result = self.runner.invoke(
            main,
            ["fit", "--config", str(self.config), "--out", str(self.directory), "--no-progress"],
        )
        self.assertEqual(EXIT_CONFIG, result.exit_code)

    def test_shape_error(self) -> None:
        """Test inconsistent shapes exit with the configuration error code."""
        with mock.patch.object(pipeline, "run_cov", side_effect=DimensionError("mismatch")):
            result = self.runner.invoke(
                main, ["cov", "--config", str(self.config), "--out", str(self.directory)]
            )
        self.assertEqual(EXIT_CONFIG, result.exit_code)
