"""Run configuration and the pipelines behind each command, with their artifacts.

A run directory produced by :func:`run_fit` contains:

- ``run_config.json``, the validated configuration
- ``manifest.json``, with the configuration hash, seed, version, and scaling
- ``draws.csv``, one row per stored draw
- ``summary_<p>.csv``, the marginal mean function of each response
- ``dic.json``
- ``fpca_basis.npz``, when the random effects come from FPCA
- ``data.csv``, ``truth.csv``, and the held-out ``heldout_observed.csv`` and
  ``heldout_targets.csv``, when the data were simulated
"""

from __future__ import annotations

import json
import logging
import os
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, TypedDict

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, PositiveInt, ValidationError, model_validator
from typing_extensions import NotRequired, Unpack

from .basis import MeanModel, RandomEffectsBasis
from .data import (
    FunctionalDataset,
    ResponseDeclaration,
    ResponseKind,
    ScalingInfo,
    SubjectCovariates,
    load_covariates,
    load_dataset,
    scale_continuous,
    write_dataset,
)
from .latent_cov import (
    LatentCovarianceEstimate,
    estimate_latent_covariance,
    export_blocks,
    residualize,
)
from .mfpca import FpcaBasis, build_basis, eigendecompose, export_eigensystem, truncate
from .model import FittedModel, FpcaEffects, ModelConfig, build_random_basis, fit_model
from .posterior import (
    PredictionResult,
    compute_coverage_and_length,
    compute_dic,
    compute_mise,
    compute_mspe,
    monte_carlo_se,
    predict_heldout,
)
from .sampler import PosteriorDraws, read_draws, write_draws
from .simulator import (
    KEY_HELDOUT,
    KEY_TRAIN,
    RESPONSE_KINDS,
    ModelVariant,
    SimulationConfig,
    StudyReport,
    compare_dic,
    generate_dataset,
    run_study,
    split_heldout,
    true_mean_functions,
    write_study,
)
from .smoothing import GridSpec
from .utils import MODULE, ConfigError, DataError, config_hash, substream
from .version import get_version

__all__ = [
    "LoadedRun",
    "Manifest",
    "Overrides",
    "RunConfig",
    "StudySettings",
    "load_run",
    "load_run_config",
    "resolve_output",
    "run_cov",
    "run_fit",
    "run_fpca",
    "run_metrics",
    "run_predict",
    "run_simulate",
    "run_study_command",
]

logger = logging.getLogger(__name__)

SPEC_VERSION = 1


def _default_threads() -> int:
    return os.cpu_count() or 1


class StudySettings(BaseModel):
    """Settings of the Monte Carlo study."""

    variants: list[ModelVariant] = Field(default_factory=lambda: list(ModelVariant))
    inner_sweeps: PositiveInt = Field(
        20, description="Sweeps per draw when predicting from binary observations"
    )
    compare_dic: bool = Field(
        False, description="Also compare intercept models by DIC. Needs an intercept covariance."
    )


class Overrides(TypedDict):
    """Command line overrides of a run configuration."""

    seed: NotRequired[int | None]
    threads: NotRequired[int | None]


class RunConfig(BaseModel):
    """The configuration of a run, read from JSON."""

    spec_version: Literal[1] = SPEC_VERSION
    dataset: Path | None = Field(None, description="A CSV with columns subject_id,response_id,t,y")
    simulation: SimulationConfig | None = None
    responses: list[ResponseDeclaration] = Field(
        default_factory=lambda: [
            ResponseDeclaration(id=p, kind=kind) for p, kind in RESPONSE_KINDS.items()
        ]
    )
    domain: tuple[float, float] | None = Field(
        None, description="The domain of the locations. Defaults to their observed range."
    )
    covariates: Path | None = Field(None, description="A CSV of subject-level covariates")
    standardize_covariates: bool = False
    model: ModelConfig = Field(default_factory=ModelConfig)
    inner_sweeps: PositiveInt = Field(
        20, description="Sweeps per draw when predicting from binary observations"
    )
    study: StudySettings = Field(default_factory=StudySettings)
    output: Path | None = Field(None, description="The output directory")
    threads: PositiveInt = Field(default_factory=_default_threads)

    @model_validator(mode="after")
    def _check_source(self) -> RunConfig:
        if (self.dataset is None) == (self.simulation is None):
            raise ValueError("exactly one of dataset and simulation must be given")
        return self

    @property
    def response_kinds(self) -> dict[int, ResponseKind]:
        """Get the kind of each declared response."""
        if self.simulation is not None:
            return dict(RESPONSE_KINDS)
        return {declaration.id: declaration.kind for declaration in self.responses}

    def digest(self) -> str:
        """Hash the configuration, ignoring where and how fast it runs."""
        return config_hash(self.model_dump(mode="json", exclude={"output", "threads"}))

    @property
    def seed(self) -> int:
        """Get the seed of the chain."""
        return self.model.chain.seed

    def with_overrides(self, **overrides: Unpack[Overrides]) -> RunConfig:
        """Apply command line overrides of the seed and the number of threads."""
        rv = self
        seed = overrides.get("seed")
        threads = overrides.get("threads")
        if seed is not None:
            chain = rv.model.chain.model_copy(update={"seed": seed})
            rv = rv.model_copy(update={"model": rv.model.model_copy(update={"chain": chain})})
            if rv.simulation is not None:
                rv = rv.model_copy(
                    update={"simulation": rv.simulation.model_copy(update={"seed": seed})}
                )
        if threads is not None:
            rv = rv.model_copy(update={"threads": threads})
        return rv


def load_run_config(path: str | Path) -> RunConfig:
    """Load and validate a run configuration.

    Relative dataset and covariate paths are resolved against the configuration's
    directory.

    :raises ConfigError: if the file is missing or doesn't validate
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"could not read the configuration {path}: {e}") from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}") from e
    if isinstance(data, dict) and data.get("spec_version", SPEC_VERSION) != SPEC_VERSION:
        raise ConfigError(
            f"unsupported spec_version {data['spec_version']}, expected {SPEC_VERSION}"
        )
    try:
        config = RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration {path}:\n{e}") from e
    updates = {
        key: path.parent.resolve().joinpath(value)
        for key, value in (("dataset", config.dataset), ("covariates", config.covariates))
        if value is not None and not value.is_absolute()
    }
    return config.model_copy(update=updates)


def resolve_output(config: RunConfig, out: str | Path | None = None) -> Path:
    """Get the output directory, defaulting to one named by the configuration's hash."""
    if out is not None:
        directory = Path(out)
    elif config.output is not None:
        directory = config.output
    else:
        return MODULE.join("runs", config.digest()[:12])
    directory.mkdir(parents=True, exist_ok=True)
    return directory


def _load_covariates(config: RunConfig) -> SubjectCovariates | None:
    if config.covariates is None:
        return None
    if not config.covariates.is_file():
        raise DataError(f"covariate file not found: {config.covariates}")
    return load_covariates(config.covariates, standardize=config.standardize_covariates)


def _load_data(config: RunConfig) -> FunctionalDataset:
    if config.simulation is not None:
        dataset, _ = generate_dataset(
            config.simulation, substream(config.simulation.seed, 0, KEY_TRAIN)
        )
        return dataset
    assert config.dataset is not None
    if not config.dataset.is_file():
        raise DataError(f"dataset not found: {config.dataset}")
    return load_dataset(config.dataset, config.response_kinds, domain=config.domain)


def _write_json(path: Path, payload: BaseModel | Mapping) -> Path:
    data = payload.model_dump(mode="json") if isinstance(payload, BaseModel) else payload
    path.write_text(json.dumps(data, indent=2, sort_keys=True))
    return path


def run_simulate(config: RunConfig, directory: Path) -> list[Path]:
    """Generate a simulated dataset, its truth, and held-out subjects.

    :returns: The paths of ``data.csv``, ``truth.csv``, ``heldout_observed.csv``, and
        ``heldout_targets.csv``
    :raises ConfigError: if the configuration has no simulation block
    """
    if config.simulation is None:
        raise ConfigError("the simulate command needs a simulation block")
    cfg = config.simulation
    dataset, truth = generate_dataset(cfg, substream(cfg.seed, 0, KEY_TRAIN))
    paths = [directory.joinpath("data.csv"), directory.joinpath("truth.csv")]
    write_dataset(dataset, paths[0])
    truth.to_frame().to_csv(paths[1], index=False)
    if cfg.n_heldout:
        heldout, _ = generate_dataset(
            cfg, substream(cfg.seed, 0, KEY_HELDOUT), n_subjects=cfg.n_heldout, prefix="h"
        )
        observed, targets = split_heldout(heldout)
        paths.append(directory.joinpath("heldout_observed.csv"))
        write_dataset(observed, paths[-1])
        paths.append(directory.joinpath("heldout_targets.csv"))
        write_dataset(targets, paths[-1])
    logger.info("simulated %d subjects into %s", dataset.n_subjects, directory)
    return paths


def _covariance(config: RunConfig) -> tuple[LatentCovarianceEstimate, FpcaEffects]:
    spec = config.model.random_effects
    if not isinstance(spec, FpcaEffects):
        spec = FpcaEffects()
    scaled, _ = scale_continuous(_load_data(config))
    covariates = _load_covariates(config)
    model = MeanModel(config.model.mean, tuple(scaled.responses), scaled.domain)
    names = model.required_covariates()
    if names or config.model.subject_intercept:
        scaled = residualize(
            scaled,
            covariates if names else None,
            names=names,
            subject_intercept=config.model.subject_intercept,
        )
    grid = GridSpec.over(scaled.domain, spec.grid_size)
    _, estimate = estimate_latent_covariance(scaled, spec.smoother, grid, threads=config.threads)
    return estimate, spec


def run_cov(config: RunConfig, directory: Path) -> list[Path]:
    """Estimate the latent covariance and write one CSV per block."""
    estimate, _ = _covariance(config)
    return export_blocks(estimate, directory)


def run_fpca(config: RunConfig, directory: Path) -> list[Path]:
    """Run the multivariate FPCA and write the eigensystem and the truncated basis."""
    estimate, spec = _covariance(config)
    es = eigendecompose(estimate)
    m = truncate(es, spec.truncation)
    logger.info("keeping %d of %d positive components", m, es.n)
    paths = export_eigensystem(es, m, directory)
    path = directory.joinpath("fpca_basis.npz")
    build_basis(es, m).save(path)
    return [*paths, path]


class Manifest(BaseModel):
    """Provenance of a fitted run, needed to reload it."""

    version: str
    config_hash: str
    seed: int
    n_subjects: int
    n_observations: int
    responses: dict[int, ResponseKind]
    domain: tuple[float, float]
    scaling: ScalingInfo
    n_draws: int
    beta_names: list[str]
    n_random_effects: int


def _summaries(
    fitted: FittedModel, covariates: SubjectCovariates | None, directory: Path
) -> list[Path]:
    rv = []
    for response, summary in fitted.summarize(covariates).items():
        path = directory.joinpath(f"summary_{response}.csv")
        summary.to_frame().to_csv(path, index=False)
        rv.append(path)
    return rv


def run_fit(config: RunConfig, directory: Path, *, progress: bool = False) -> list[Path]:
    """Fit the model and write the run's artifacts.

    Random effects are always kept in memory to compute the DIC. They are only written,
    as ``alpha.npy``, when the chain configuration asks to store them.

    :returns: The paths of the written artifacts
    """
    dataset = _load_data(config)
    covariates = _load_covariates(config)
    model = config.model.model_copy(
        update={"chain": config.model.chain.model_copy(update={"store_alpha": True})}
    )
    fitted = fit_model(
        dataset, model, covariates=covariates, threads=config.threads, progress=progress
    )
    paths = [_write_json(directory.joinpath("run_config.json"), config)]

    draws_path = directory.joinpath("draws.csv")
    write_draws(fitted.draws, draws_path)
    paths.append(draws_path)
    if config.model.chain.store_alpha:
        alpha_path = directory.joinpath("alpha.npy")
        np.save(alpha_path, fitted.draws.require_alpha())
        paths.append(alpha_path)
    paths.extend(_summaries(fitted, covariates, directory))
    paths.append(
        _write_json(directory.joinpath("dic.json"), compute_dic(fitted.draws, fitted.problem))
    )
    if fitted.fpca_basis is not None:
        path = directory.joinpath("fpca_basis.npz")
        fitted.fpca_basis.save(path)
        paths.append(path)
    if config.simulation is not None:
        paths.extend(run_simulate(config, directory))
        # the metrics compare the truth on the summary grid
        truth = true_mean_functions(config.simulation, fitted.summary_grid)
        truth.to_frame().to_csv(directory.joinpath("truth.csv"), index=False)

    manifest = Manifest(
        version=get_version(),
        config_hash=config.digest(),
        seed=config.seed,
        n_subjects=dataset.n_subjects,
        n_observations=dataset.n,
        responses=dict(dataset.response_kinds),
        domain=dataset.domain,
        scaling=fitted.scaling,
        n_draws=fitted.draws.n_draws,
        beta_names=list(fitted.draws.beta_names),
        n_random_effects=fitted.problem.n_random,
    )
    paths.append(_write_json(directory.joinpath("manifest.json"), manifest))
    logger.info("wrote %d artifacts to %s", len(paths), directory)
    return paths


@dataclass(frozen=True)
class LoadedRun:
    """A fitted run reloaded from its directory."""

    config: RunConfig
    manifest: Manifest
    draws: PosteriorDraws
    basis: RandomEffectsBasis


def load_run(directory: str | Path) -> LoadedRun:
    """Reload a run written by :func:`run_fit`.

    :raises DataError: if an artifact is missing
    """
    directory = Path(directory)
    for name in ("run_config.json", "manifest.json", "draws.csv"):
        if not directory.joinpath(name).is_file():
            raise DataError(f"{directory} is missing {name}")
    config = load_run_config(directory.joinpath("run_config.json"))
    manifest = Manifest.model_validate_json(directory.joinpath("manifest.json").read_text())
    alpha_path = directory.joinpath("alpha.npy")
    draws = read_draws(
        directory.joinpath("draws.csv"),
        manifest.responses,
        seed=manifest.seed,
        alpha=np.load(alpha_path) if alpha_path.is_file() else None,
        beta_names=manifest.beta_names,
    )
    fpca_path = directory.joinpath("fpca_basis.npz")
    fpca = FpcaBasis.load(fpca_path) if fpca_path.is_file() else None
    basis = build_random_basis(config.model, list(manifest.responses), manifest.domain, fpca)
    return LoadedRun(config=config, manifest=manifest, draws=draws, basis=basis)


def run_predict(
    run_directory: str | Path,
    directory: Path,
    *,
    observed: str | Path | None = None,
    heldout: str | Path | None = None,
    seed: int | None = None,
) -> Path:
    """Predict held-out responses of new subjects with a fitted run.

    :param run_directory: The directory of a fitted run
    :param directory: The output directory
    :param observed: A CSV of the responses the new subjects observe. Defaults to the
        run's ``heldout_observed.csv``.
    :param heldout: A CSV of the locations to predict, with their true values if known.
        Defaults to the run's ``heldout_targets.csv``.
    :param seed: The seed of the prediction draws. Defaults to the run's seed.
    :returns: The path of ``predictions.csv``
    """
    run = load_run(run_directory)
    run_directory = Path(run_directory)
    observed = Path(observed) if observed else run_directory.joinpath("heldout_observed.csv")
    heldout = Path(heldout) if heldout else run_directory.joinpath("heldout_targets.csv")
    for path in (observed, heldout):
        if not path.is_file():
            raise DataError(f"held-out data not found: {path}")
    kinds = run.manifest.responses
    prediction = predict_heldout(
        run.draws,
        load_dataset(observed, kinds),
        load_dataset(heldout, kinds),
        run.config.model.mean,
        run.basis,
        domain=run.manifest.domain,
        covariates=_load_covariates(run.config),
        scaling=run.manifest.scaling,
        inner_sweeps=run.config.inner_sweeps,
        seed=run.manifest.seed if seed is None else seed,
    )
    path = directory.joinpath("predictions.csv")
    prediction.to_frame().to_csv(path, index=False)
    return path


def _read_prediction(path: Path) -> PredictionResult:
    df = pd.read_csv(path, dtype={"subject_id": str})
    return PredictionResult(
        subject_ids=tuple(df["subject_id"]),
        response=df["response_id"].to_numpy(dtype=int),
        t=df["t"].to_numpy(dtype=float),
        y=df["y"].to_numpy(dtype=float),
        prediction=df["prediction"].to_numpy(dtype=float),
        lower=df["lower"].to_numpy(dtype=float),
        upper=df["upper"].to_numpy(dtype=float),
    )


def run_metrics(run_directory: str | Path, directory: Path) -> Path:
    """Compute every metric the run's artifacts allow and write ``metrics.json``.

    MISE, coverage, and interval length need ``truth.csv``, MSPE needs
    ``predictions.csv``, and the DIC is copied from ``dic.json``. Batch-means Monte
    Carlo standard errors of the fixed effects are always reported.
    """
    run = load_run(run_directory)
    run_directory = Path(run_directory)
    report: dict[str, object] = {"version": get_version(), "config_hash": run.manifest.config_hash}

    truth_path = run_directory.joinpath("truth.csv")
    if truth_path.is_file():
        truth = pd.read_csv(truth_path)
        functions = {}
        for response in run.manifest.responses:
            summary = pd.read_csv(run_directory.joinpath(f"summary_{response}.csv"))
            points = summary["t"].to_numpy()
            grid = GridSpec(lower=points[0], upper=points[-1], size=len(points))
            target = np.interp(points, truth["t"], truth[f"omega[{response}]"])
            coverage, length = compute_coverage_and_length(
                summary["mean"].to_numpy(), summary["variance"].to_numpy(), target
            )
            functions[str(response)] = {
                "mise": compute_mise(summary["mean"].to_numpy(), target, grid),
                "coverage": coverage,
                "length": length,
            }
        report["functions"] = functions

    for candidate in (directory, run_directory):
        prediction_path = candidate.joinpath("predictions.csv")
        if prediction_path.is_file():
            mspe = compute_mspe(_read_prediction(prediction_path))
            report["mspe"] = {str(response): value for response, value in mspe.items()}
            break

    dic_path = run_directory.joinpath("dic.json")
    if dic_path.is_file():
        report["dic"] = json.loads(dic_path.read_text())

    if run.draws.n_draws >= 4:
        names = run.draws.beta_names or tuple(
            f"beta[{j + 1}]" for j in range(run.draws.beta.shape[1])
        )
        report["mcse"] = {
            name: monte_carlo_se(run.draws.beta[:, j]) for j, name in enumerate(names)
        }
    return _write_json(directory.joinpath("metrics.json"), report)


def run_study_command(config: RunConfig, directory: Path) -> list[Path]:
    """Run the Monte Carlo study and write ``study.csv`` and ``study.json``.

    With ``compare_dic`` set, also write ``dic_comparison.json``.

    :raises ConfigError: if the configuration has no simulation block
    """
    if config.simulation is None:
        raise ConfigError("the study command needs a simulation block")
    report: StudyReport = run_study(
        config.simulation,
        config.study.variants,
        config.model.chain,
        prior=config.model.prior,
        inner_sweeps=config.study.inner_sweeps,
        threads=config.threads,
    )
    paths = list(write_study(report, directory))
    if config.study.compare_dic:
        comparisons = compare_dic(config.simulation, config.model.chain, prior=config.model.prior)
        wins = sum(c.intercept_wins for c in comparisons)
        logger.info(
            "the intercept model has the lower DIC in %d of %d replications",
            wins,
            len(comparisons),
        )
        paths.append(
            _write_json(
                directory.joinpath("dic_comparison.json"),
                {
                    "intercept_wins": wins,
                    "replications": [c.model_dump(mode="json") for c in comparisons],
                },
            )
        )
    return paths
