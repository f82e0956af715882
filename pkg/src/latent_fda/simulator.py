"""Simulate bivariate mixed functional data and run Monte Carlo studies on it.

Each subject has a continuous and a binary response observed at the same equally
spaced locations. The latent processes have quadratic means and random effects on
sinusoidal bases whose coefficients have the separable covariance
:math:`\\Sigma = A \\otimes C`, where :math:`A` correlates the two responses and
:math:`C` has an AR(1) structure across basis functions.
"""

from __future__ import annotations

import enum
import functools
import json
import logging
from collections.abc import Sequence
from pathlib import Path

import numpy as np
import pandas as pd
import scipy.linalg
from pydantic import BaseModel, Field, NonNegativeFloat, PositiveInt, field_validator
from scipy.special import ndtr
from tqdm.auto import tqdm
from tqdm.contrib.concurrent import process_map
from tqdm.contrib.logging import logging_redirect_tqdm

from .basis import (
    BlockDiagonalBasis,
    PolynomialBasis,
    RandomEffectsBasis,
    SimSinusoidBasis,
    SubjectInterceptBasis,
)
from .data import FunctionalDataset, ResponseKind
from .model import FittedModel, FpcaEffects, ModelConfig, PredeterminedEffects, fit_model
from .posterior import (
    DicReport,
    PredictionResult,
    TruthSpec,
    compute_coverage_and_length,
    compute_dic,
    compute_mise,
    compute_mspe,
    predict_heldout,
    predict_marginal,
)
from .sampler import ChainConfig, PriorConfig
from .smoothing import GridSpec
from .utils import ConfigError, LatentFDAError, NumericalError, substream

__all__ = [
    "DicComparison",
    "ModelVariant",
    "ReplicationResult",
    "SimulationConfig",
    "StudyReport",
    "build_sigma",
    "compare_dic",
    "generate_dataset",
    "run_replication",
    "run_study",
    "split_heldout",
    "true_mean_functions",
    "write_study",
]

logger = logging.getLogger(__name__)

#: The response identifiers of the continuous and binary responses
CONTINUOUS, BINARY = 1, 2
RESPONSE_KINDS = {CONTINUOUS: ResponseKind.gaussian, BINARY: ResponseKind.binary}
DOMAIN = (0.0, 1.0)

#: Substream keys within a replication
KEY_TRAIN, KEY_HELDOUT, KEY_CHAIN, KEY_PREDICT = 0, 1, 2, 3


class SimulationConfig(BaseModel):
    """The design of a simulation scenario."""

    n_subjects: PositiveInt = Field(50, description="The number of subjects used for fitting, N")
    n_locations: int = Field(30, ge=2, description="Equally spaced locations on [0, 1], L")
    n_functions: PositiveInt = Field(7, description="Basis functions per response, M")
    rho_a: float = Field(0.8, description="The correlation between the two responses' effects")
    rho: float = Field(0.5, description="The AR(1) correlation across basis functions")
    tau2: NonNegativeFloat = Field(1.0, description="The error variance of the continuous response")
    beta1: list[float] = Field(
        default_factory=lambda: [-0.64, 4.0, -4.0],
        description="Quadratic mean coefficients of the continuous response",
    )
    beta2: list[float] = Field(
        default_factory=lambda: [0.97, -6.0, 6.0],
        description="Quadratic mean coefficients of the binary response",
    )
    random_effect_scale: NonNegativeFloat = Field(
        1.0, description="Multiplies the random-effect covariance, e.g., 0 removes it"
    )
    intercept_covariance: list[list[float]] | None = Field(
        None, description="The 2x2 covariance of random subject intercepts, if any"
    )
    n_reps: PositiveInt = Field(100, description="The number of Monte Carlo replications")
    n_heldout: int = Field(
        20,
        ge=0,
        description="Held-out subjects per replication. The first half miss the continuous "
        "response and the rest miss the binary response.",
    )
    seed: int = Field(0, ge=0, lt=2**64)

    @field_validator("beta1", "beta2")
    @classmethod
    def _check_quadratic(cls, value: list[float]) -> list[float]:
        if len(value) != 3:
            raise ValueError(f"expected three quadratic coefficients, got {len(value)}")
        return value

    @field_validator("intercept_covariance")
    @classmethod
    def _check_intercept(cls, value: list[list[float]] | None) -> list[list[float]] | None:
        if value is not None and np.shape(value) != (2, 2):
            raise ValueError("the intercept covariance must be 2x2")
        return value

    @property
    def grid(self) -> GridSpec:
        """Get the observation locations as a grid."""
        return GridSpec(lower=DOMAIN[0], upper=DOMAIN[1], size=self.n_locations)

    def beta(self, response: int) -> np.ndarray:
        """Get the mean coefficients of a response."""
        return np.asarray(self.beta1 if response == CONTINUOUS else self.beta2)


def build_sigma(cfg: SimulationConfig) -> np.ndarray:
    """Build the separable random-effect covariance :math:`A \\otimes C`.

    Coefficients are ordered by response, then basis function, so the coefficient of
    basis function k of response p is at :math:`(p - 1) M + k`.

    :raises ConfigError: if :math:`|\\rho_a| \\ge 1` or :math:`|\\rho| \\ge 1`
    """
    if abs(cfg.rho_a) >= 1:
        raise ConfigError(f"|rho_a| must be less than 1, got {cfg.rho_a}")
    if abs(cfg.rho) >= 1:
        raise ConfigError(f"|rho| must be less than 1, got {cfg.rho}")
    a = np.array([[1.0, cfg.rho_a], [cfg.rho_a, 1.0]])
    c = scipy.linalg.toeplitz(cfg.rho ** np.arange(cfg.n_functions))
    return np.kron(a, c)


def _random_basis(cfg: SimulationConfig) -> BlockDiagonalBasis:
    return BlockDiagonalBasis.from_specs(
        {
            p: SimSinusoidBasis(functions=cfg.n_functions, response=p)
            for p in (CONTINUOUS, BINARY)
        },
        DOMAIN,
    )


def _full_sigma(cfg: SimulationConfig) -> np.ndarray:
    sigma = cfg.random_effect_scale * build_sigma(cfg)
    if cfg.intercept_covariance is not None:
        sigma = scipy.linalg.block_diag(np.asarray(cfg.intercept_covariance), sigma)
    return sigma


def true_mean_functions(cfg: SimulationConfig, grid: GridSpec | None = None) -> TruthSpec:
    """Get the true marginal mean functions of both responses.

    The binary response's marginal mean is :math:`\\Phi(\\mu_2(t) / \\sqrt{v_2(t)})`, where
    :math:`v_2(t) \\ge 1` is the variance of its latent process.

    :param cfg: The simulation design
    :param grid: The grid. Defaults to the observation locations.
    """
    grid = grid or cfg.grid
    points = grid.points
    basis = _random_basis(cfg)
    sigma = cfg.random_effect_scale * build_sigma(cfg)
    design = PolynomialBasis(degree=2).evaluate(points, DOMAIN)
    psi = basis.evaluate(BINARY, points)
    variance = np.einsum("gm,mk,gk->g", psi, sigma, psi) + 1.0
    if cfg.intercept_covariance is not None:
        variance += cfg.intercept_covariance[1][1]
    return TruthSpec(
        grid=grid,
        omega={
            CONTINUOUS: (design @ cfg.beta(CONTINUOUS)).tolist(),
            BINARY: ndtr(design @ cfg.beta(BINARY) / np.sqrt(variance)).tolist(),
        },
        marginal_variance={BINARY: variance.tolist()},
    )


def generate_dataset(
    cfg: SimulationConfig,
    rng: np.random.Generator,
    *,
    n_subjects: int | None = None,
    prefix: str = "s",
) -> tuple[FunctionalDataset, TruthSpec]:
    """Generate a dataset with both responses observed at every location.

    :param cfg: The simulation design
    :param rng: A random generator
    :param n_subjects: The number of subjects. Defaults to the configured number.
    :param prefix: The prefix of the generated subject identifiers
    :returns: The dataset and the true marginal mean functions
    """
    n = cfg.n_subjects if n_subjects is None else n_subjects
    points = cfg.grid.points
    basis: RandomEffectsBasis = _random_basis(cfg)
    if cfg.intercept_covariance is not None:
        basis = SubjectInterceptBasis(basis, (CONTINUOUS, BINARY))
    sigma = _full_sigma(cfg)
    alpha = rng.multivariate_normal(np.zeros(len(sigma)), sigma, size=n, method="eigh")

    design = PolynomialBasis(degree=2).evaluate(points, DOMAIN)
    subject_ids, responses, locations, values = [], [], [], []
    for response in (CONTINUOUS, BINARY):
        mean = design @ cfg.beta(response)
        z = mean[None, :] + alpha @ basis.evaluate(response, points).T
        if response == CONTINUOUS:
            y = z + rng.normal(0.0, np.sqrt(cfg.tau2), size=z.shape)
        else:
            y = (z + rng.standard_normal(z.shape) > 0).astype(float)
        for i in range(n):
            subject_ids.extend([f"{prefix}{i + 1}"] * len(points))
            responses.extend([response] * len(points))
            locations.extend(points.tolist())
            values.extend(y[i].tolist())
    dataset = FunctionalDataset.from_arrays(
        subject_ids, responses, locations, values, RESPONSE_KINDS, domain=DOMAIN
    )
    return dataset, true_mean_functions(cfg)


def split_heldout(dataset: FunctionalDataset) -> tuple[FunctionalDataset, FunctionalDataset]:
    """Hide one response of each held-out subject.

    The first half of the subjects lose their continuous response and the rest lose
    their binary response.

    :returns: The observed part and the held-out part
    """
    half = dataset.n_subjects // 2
    hidden = np.where(dataset.subject_index < half, CONTINUOUS, BINARY)
    mask = dataset.response == hidden
    subject_ids = [dataset.subject_ids[i] for i in dataset.subject_index]

    def _select(keep: np.ndarray) -> FunctionalDataset:
        return FunctionalDataset.from_arrays(
            [s for s, k in zip(subject_ids, keep) if k],
            dataset.response[keep],
            dataset.t[keep],
            dataset.y[keep],
            dataset.response_kinds,
            domain=dataset.domain,
        )

    return _select(~mask), _select(mask)


class ModelVariant(str, enum.Enum):
    """A model compared in the simulation study."""

    #: joint model with random effects on multivariate FPCA components
    bfpca = "BFPCA"
    #: joint model with random effects on cubic B-splines
    bbsp = "BBSP"
    #: separate models per response with univariate FPCA components
    ufpca = "UFPCA"
    #: separate models per response with cubic B-splines
    ubsp = "UBSP"

    @property
    def joint(self) -> bool:
        """Are both responses modeled jointly?"""
        return self in (ModelVariant.bfpca, ModelVariant.bbsp)

    def model_config(
        self, prior: PriorConfig, chain: ChainConfig, summary_grid_size: int = 101
    ) -> ModelConfig:
        """Get the configuration of this variant."""
        effects = (
            FpcaEffects()
            if self in (ModelVariant.bfpca, ModelVariant.ufpca)
            else PredeterminedEffects()
        )
        return ModelConfig(
            random_effects=effects,
            prior=prior,
            chain=chain,
            summary_grid_size=summary_grid_size,
        )


class VariantMetrics(BaseModel):
    """The metrics of one variant on one response in one replication."""

    variant: ModelVariant
    response: int
    mise: float
    coverage: float
    length: float
    mspe: float | None = None


class ReplicationResult(BaseModel):
    """The outcome of a replication, which either has metrics or an error."""

    rep: int
    seed: int
    metrics: list[VariantMetrics] = Field(default_factory=list)
    error: str | None = None


def _evaluate(
    fits: dict[int, FittedModel], truth: TruthSpec
) -> dict[int, tuple[float, float, float]]:
    rv = {}
    summaries = {id(fitted): fitted.summarize() for fitted in fits.values()}
    for response, fitted in fits.items():
        summary = summaries[id(fitted)][response]
        target = truth.of(response)
        mise = compute_mise(summary.mean, target, summary.grid)
        coverage, length = compute_coverage_and_length(summary.mean, summary.variance, target)
        rv[response] = (mise, coverage, length)
    return rv


def _predict(
    variant: ModelVariant,
    fits: dict[int, FittedModel],
    heldout: FunctionalDataset,
    seed: int,
    inner_sweeps: int,
) -> PredictionResult | None:
    if not heldout.n_subjects:
        return None
    observed, targets = split_heldout(heldout)
    if variant.joint:
        fitted = fits[CONTINUOUS]
        return predict_heldout(
            fitted.draws,
            observed,
            targets,
            fitted.config.mean,
            fitted.basis,
            domain=fitted.domain,
            scaling=fitted.scaling,
            inner_sweeps=inner_sweeps,
            seed=seed,
        )
    predictions = []
    for response, fitted in fits.items():
        part = targets.subset([response])
        predictions.append(
            predict_marginal(
                fitted.draws, fitted.mean_model, fitted.basis, part, scaling=fitted.scaling
            )
        )
    return PredictionResult(
        subject_ids=tuple(s for p in predictions for s in p.subject_ids),
        response=np.concatenate([p.response for p in predictions]),
        t=np.concatenate([p.t for p in predictions]),
        y=np.concatenate([p.y for p in predictions]),
        prediction=np.concatenate([p.prediction for p in predictions]),
        lower=np.concatenate([p.lower for p in predictions]),
        upper=np.concatenate([p.upper for p in predictions]),
    )


def _chain_for(chain: ChainConfig, seed: int, *key: int) -> ChainConfig:
    chain_seed = int(substream(seed, *key).integers(2**63))
    return chain.model_copy(update={"seed": chain_seed})


def run_replication(
    rep: int,
    cfg: SimulationConfig,
    variants: Sequence[ModelVariant],
    chain: ChainConfig,
    prior: PriorConfig | None = None,
    inner_sweeps: int = 20,
) -> ReplicationResult:
    """Generate one replication's data, fit each variant, and evaluate it.

    Failures are recorded on the result rather than raised, so a study survives rare
    numerical faults.
    """
    prior = prior or PriorConfig()
    try:
        dataset, truth = generate_dataset(cfg, substream(cfg.seed, rep, KEY_TRAIN))
        heldout, _ = generate_dataset(
            cfg, substream(cfg.seed, rep, KEY_HELDOUT), n_subjects=cfg.n_heldout, prefix="h"
        )
        metrics = []
        for v, variant in enumerate(variants):
            config = variant.model_config(
                prior, _chain_for(chain, cfg.seed, rep, KEY_CHAIN, v), cfg.n_locations
            )
            if variant.joint:
                fitted = fit_model(dataset, config)
                fits = {CONTINUOUS: fitted, BINARY: fitted}
            else:
                fits = {p: fit_model(dataset.subset([p]), config) for p in (CONTINUOUS, BINARY)}
            evaluation = _evaluate(fits, truth)
            prediction_seed = int(substream(cfg.seed, rep, KEY_PREDICT, v).integers(2**63))
            prediction = _predict(variant, fits, heldout, prediction_seed, inner_sweeps)
            mspe = compute_mspe(prediction) if prediction is not None else {}
            for response, (mise, coverage, length) in evaluation.items():
                metrics.append(
                    VariantMetrics(
                        variant=variant,
                        response=response,
                        mise=mise,
                        coverage=coverage,
                        length=length,
                        mspe=mspe.get(response),
                    )
                )
    except (LatentFDAError, np.linalg.LinAlgError) as e:
        logger.warning("replication %d with seed %d failed: %s", rep, cfg.seed, e)
        return ReplicationResult(rep=rep, seed=cfg.seed, error=f"{type(e).__name__}: {e}")
    return ReplicationResult(rep=rep, seed=cfg.seed, metrics=metrics)


class StudyCell(BaseModel):
    """The average of a metric over the successful replications."""

    variant: ModelVariant
    response: int
    metric: str
    value: float
    hundredths: float = Field(..., description="The value times 100")
    n_reps: int


class StudyReport(BaseModel):
    """The outcome of a Monte Carlo study."""

    simulation: SimulationConfig
    chain: ChainConfig
    variants: list[ModelVariant]
    cells: list[StudyCell]
    replications: list[ReplicationResult]

    @property
    def failures(self) -> list[ReplicationResult]:
        """Get the replications that failed."""
        return [r for r in self.replications if r.error is not None]

    def get(self, variant: ModelVariant, response: int, metric: str) -> float:
        """Get the average of a metric."""
        for cell in self.cells:
            if (cell.variant, cell.response, cell.metric) == (variant, response, metric):
                return cell.value
        raise KeyError((variant, response, metric))

    def to_frame(self) -> pd.DataFrame:
        """Get the averages in long format, one row per variant, response, and metric."""
        return pd.DataFrame(
            [
                {
                    "variant": cell.variant.value,
                    "response_id": cell.response,
                    "metric": cell.metric,
                    "value": cell.value,
                    "hundredths": cell.hundredths,
                    "n_reps": cell.n_reps,
                }
                for cell in self.cells
            ],
            columns=["variant", "response_id", "metric", "value", "hundredths", "n_reps"],
        )


METRICS = ("mise", "coverage", "length", "mspe")


def _aggregate(
    replications: Sequence[ReplicationResult], variants: Sequence[ModelVariant]
) -> list[StudyCell]:
    cells = []
    for variant in variants:
        for response in (CONTINUOUS, BINARY):
            rows = [
                m
                for r in replications
                for m in r.metrics
                if m.variant is variant and m.response == response
            ]
            for metric in METRICS:
                values = [getattr(m, metric) for m in rows if getattr(m, metric) is not None]
                if not values:
                    continue
                # coverage is already a percentage
                value = float(np.mean(values))
                cells.append(
                    StudyCell(
                        variant=variant,
                        response=response,
                        metric=metric,
                        value=value,
                        hundredths=value if metric == "coverage" else 100 * value,
                        n_reps=len(values),
                    )
                )
    return cells


def run_study(
    cfg: SimulationConfig,
    variants: Sequence[ModelVariant] | None = None,
    chain: ChainConfig | None = None,
    *,
    prior: PriorConfig | None = None,
    inner_sweeps: int = 20,
    threads: int = 1,
) -> StudyReport:
    """Run a Monte Carlo study comparing model variants.

    Each replication draws its data and chains from its own substreams, so the
    report doesn't depend on the number of threads.

    :param cfg: The simulation design, including the number of replications
    :param variants: The variants to compare. Defaults to all of them.
    :param chain: The chain configuration of every fit. Its seed is replaced per
        replication and variant.
    :param prior: The priors of every fit
    :param inner_sweeps: Sweeps per draw when predicting from binary observations
    :param threads: The number of replications to run in parallel processes
    :returns: The study report, whose averages skip failed replications
    """
    variants = list(variants or ModelVariant)
    chain = chain or ChainConfig()
    func = functools.partial(
        run_replication,
        cfg=cfg,
        variants=variants,
        chain=chain,
        prior=prior,
        inner_sweeps=inner_sweeps,
    )
    tqdm_kwargs = {"unit": "replication", "desc": "Simulating"}
    with logging_redirect_tqdm():
        if threads > 1:
            replications = process_map(
                func, range(cfg.n_reps), max_workers=threads, chunksize=1, **tqdm_kwargs
            )
        else:
            replications = [func(rep) for rep in tqdm(range(cfg.n_reps), **tqdm_kwargs)]
    replications = sorted(replications, key=lambda r: r.rep)
    failed = sum(r.error is not None for r in replications)
    if failed:
        logger.warning("%d of %d replications failed and were skipped", failed, cfg.n_reps)
    return StudyReport(
        simulation=cfg,
        chain=chain,
        variants=variants,
        cells=_aggregate(replications, variants),
        replications=replications,
    )


def write_study(report: StudyReport, directory: str | Path) -> tuple[Path, Path]:
    """Write a study report as ``study.csv`` and ``study.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    csv_path = directory.joinpath("study.csv")
    report.to_frame().to_csv(csv_path, index=False)
    json_path = directory.joinpath("study.json")
    json_path.write_text(json.dumps(report.model_dump(mode="json"), indent=2))
    return csv_path, json_path


class DicComparison(BaseModel):
    """DIC of the models with and without random subject intercepts in one replication."""

    rep: int
    with_intercept: DicReport | None = None
    without_intercept: DicReport | None = None
    error: str | None = None

    @property
    def intercept_wins(self) -> bool:
        """Does the model with intercepts have the lower DIC?"""
        if self.with_intercept is None or self.without_intercept is None:
            return False
        return self.with_intercept.dic < self.without_intercept.dic


def compare_dic(
    cfg: SimulationConfig,
    chain: ChainConfig | None = None,
    *,
    prior: PriorConfig | None = None,
) -> list[DicComparison]:
    """Compare models with and without random subject intercepts by DIC.

    Both models use the true sinusoidal bases, so they differ only in the intercepts.

    :param cfg: A simulation design with an intercept covariance
    :param chain: The chain configuration. Random effects are always stored.
    :param prior: The priors
    :returns: One comparison per replication
    :raises ConfigError: if the design has no random intercepts
    """
    if cfg.intercept_covariance is None:
        raise ConfigError("comparing intercept models requires an intercept covariance")
    chain = (chain or ChainConfig()).model_copy(update={"store_alpha": True})
    effects = PredeterminedEffects(
        bases={p: SimSinusoidBasis(functions=cfg.n_functions, response=p) for p in (1, 2)}
    )
    rv = []
    for rep in tqdm(range(cfg.n_reps), unit="replication", desc="Comparing DIC"):
        dataset, _ = generate_dataset(cfg, substream(cfg.seed, rep, KEY_TRAIN))
        reports = {}
        try:
            for intercept in (True, False):
                config = ModelConfig(
                    random_effects=effects,
                    subject_intercept=intercept,
                    prior=prior or PriorConfig(),
                    chain=_chain_for(chain, cfg.seed, rep, KEY_CHAIN, int(intercept)),
                )
                fitted = fit_model(dataset, config)
                reports[intercept] = compute_dic(fitted.draws, fitted.problem)
        except NumericalError as e:
            logger.warning("DIC replication %d failed: %s", rep, e)
            rv.append(DicComparison(rep=rep, error=str(e)))
            continue
        rv.append(
            DicComparison(rep=rep, with_intercept=reports[True], without_intercept=reports[False])
        )
    return rv
