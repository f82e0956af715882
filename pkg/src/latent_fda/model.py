"""Configure and fit the full model: scaling, random-effect basis, and Gibbs sampling."""

from __future__ import annotations

import dataclasses
import logging
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Annotated, Literal, TypeAlias

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveInt

from .basis import (
    BasisSpec,
    BlockDiagonalBasis,
    BSplineBasis,
    MeanModel,
    MeanSpec,
    RandomEffectsBasis,
    SubjectInterceptBasis,
    build_designs,
)
from .data import FunctionalDataset, ScalingInfo, SubjectCovariates, scale_continuous
from .latent_cov import LatentCovarianceEstimate, estimate_latent_covariance, residualize
from .mfpca import (
    EigenSystem,
    FpcaBasis,
    TruncationRule,
    build_basis,
    eigendecompose,
    truncate,
    univariate_fpca,
)
from .posterior import PosteriorSummary, summarize
from .sampler import ChainConfig, GibbsProblem, PosteriorDraws, PriorConfig, run_chain
from .smoothing import GridSpec, SmootherConfig
from .utils import ConfigError

__all__ = [
    "FittedModel",
    "FpcaEffects",
    "ModelConfig",
    "PredeterminedEffects",
    "RandomEffectsSpec",
    "build_random_basis",
    "fit_model",
]

logger = logging.getLogger(__name__)


class PredeterminedEffects(BaseModel):
    """Random effects on fixed bases, one block of coefficients per response."""

    mode: Literal["predetermined"] = "predetermined"
    bases: dict[int, BasisSpec] = Field(
        default_factory=dict,
        description="The basis of each response. Responses without one get a cubic B-spline.",
    )

    def spec_for(self, response: int) -> BasisSpec:
        """Get the basis of a response."""
        return self.bases.get(response, BSplineBasis())


class FpcaEffects(BaseModel):
    """Random effects on the leading components of the estimated latent covariance.

    The number of components comes from the truncation rule, so it can't be set per
    response.
    """

    model_config = ConfigDict(extra="forbid")

    mode: Literal["fpca"] = "fpca"
    truncation: TruncationRule = Field(default_factory=TruncationRule)
    smoother: SmootherConfig = Field(default_factory=SmootherConfig)
    grid_size: int = Field(101, ge=2, description="The size of the covariance grid, G")
    univariate: bool = Field(
        False, description="Run a separate FPCA per response, ignoring cross-covariances"
    )


#: The random-effect specification, discriminated on its ``mode``
RandomEffectsSpec: TypeAlias = Annotated[
    PredeterminedEffects | FpcaEffects, Field(discriminator="mode")
]


class ModelConfig(BaseModel):
    """Everything needed to fit the model to a dataset."""

    mean: MeanSpec = Field(default_factory=MeanSpec)
    random_effects: RandomEffectsSpec = Field(default_factory=FpcaEffects)
    subject_intercept: bool = Field(
        False, description="Add a random subject intercept for each response"
    )
    prior: PriorConfig = Field(default_factory=PriorConfig)
    chain: ChainConfig = Field(default_factory=ChainConfig)
    summary_grid_size: PositiveInt = Field(101, description="The size of the summary grid")


@dataclass(frozen=True)
class FittedModel:
    """A fitted model and the intermediate results needed to summarize and predict."""

    config: ModelConfig
    #: the scaled dataset the sampler saw
    dataset: FunctionalDataset
    scaling: ScalingInfo
    mean_model: MeanModel
    basis: RandomEffectsBasis
    problem: GibbsProblem
    draws: PosteriorDraws
    covariance: LatentCovarianceEstimate | None = None
    eigensystem: EigenSystem | None = None
    fpca_basis: FpcaBasis | None = None

    @property
    def domain(self) -> tuple[float, float]:
        """Get the domain the model was fit on."""
        return self.dataset.domain

    @property
    def summary_grid(self) -> GridSpec:
        """Get the grid for summaries of the marginal mean functions."""
        return GridSpec.over(self.domain, self.config.summary_grid_size)

    def summarize(
        self, covariates: SubjectCovariates | None = None
    ) -> dict[int, PosteriorSummary]:
        """Summarize the marginal mean functions on the original scale.

        Subject-level covariates in the mean are set to their averages.
        """
        values = None
        names = self.mean_model.required_covariates()
        if names and covariates is not None:
            columns = [covariates.names.index(name) for name in names]
            table = np.array([covariates.values[s][columns] for s in self.dataset.subject_ids])
            values = dict(zip(names, table.mean(axis=0).tolist()))
        return summarize(
            self.draws,
            self.mean_model,
            self.basis,
            self.summary_grid,
            scaling=self.scaling,
            covariates=values,
        )


def _fpca_basis(
    dataset: FunctionalDataset,
    spec: FpcaEffects,
    config: ModelConfig,
    covariates: SubjectCovariates | None,
    threads: int,
) -> tuple[LatentCovarianceEstimate, EigenSystem | None, FpcaBasis]:
    grid = GridSpec.over(dataset.domain, spec.grid_size)
    names = MeanModel(config.mean, tuple(dataset.responses), dataset.domain).required_covariates()
    if names or config.subject_intercept:
        dataset = residualize(
            dataset,
            covariates if names else None,
            names=names,
            subject_intercept=config.subject_intercept,
        )
    _, estimate = estimate_latent_covariance(dataset, spec.smoother, grid, threads=threads)
    if spec.univariate:
        return estimate, None, univariate_fpca(estimate, spec.truncation)
    es = eigendecompose(estimate)
    m = truncate(es, spec.truncation)
    logger.info("keeping %d of %d positive components", m, es.n)
    return estimate, es, build_basis(es, m)


def build_random_basis(
    config: ModelConfig,
    responses: Sequence[int],
    domain: tuple[float, float],
    fpca: FpcaBasis | None = None,
) -> RandomEffectsBasis:
    """Build the random-effect basis of a configuration.

    :param config: The model configuration
    :param responses: The responses of the dataset
    :param domain: The domain of the dataset
    :param fpca: The estimated basis, required in the FPCA mode
    :returns: The basis, with subject intercepts first if configured
    :raises ConfigError: if the FPCA mode is configured but no estimated basis is given
    """
    spec = config.random_effects
    basis: RandomEffectsBasis
    if isinstance(spec, FpcaEffects):
        if fpca is None:
            raise ConfigError("the FPCA mode needs an estimated basis")
        basis = fpca
    else:
        basis = BlockDiagonalBasis.from_specs({p: spec.spec_for(p) for p in responses}, domain)
    if config.subject_intercept:
        basis = SubjectInterceptBasis(basis, tuple(responses))
    return basis


def fit_model(
    dataset: FunctionalDataset,
    config: ModelConfig | None = None,
    *,
    covariates: SubjectCovariates | None = None,
    threads: int = 1,
    progress: bool = False,
) -> FittedModel:
    """Fit the model to a dataset on its original scale.

    Continuous responses are scaled by their standard deviations, the random-effect
    basis is either bound from its specification or estimated by multivariate FPCA,
    and the posterior is sampled by Gibbs sampling.

    :param dataset: A dataset on its original scale
    :param config: The model configuration
    :param covariates: Subject-level covariates, if the mean uses any
    :param threads: The number of smooths to run concurrently during FPCA
    :param progress: Should a progress bar be shown while sampling?
    :returns: The fitted model
    """
    config = config or ModelConfig()
    scaled, scaling = scale_continuous(dataset)
    covariance: LatentCovarianceEstimate | None = None
    eigensystem: EigenSystem | None = None
    fpca: FpcaBasis | None = None
    if isinstance(config.random_effects, FpcaEffects):
        covariance, eigensystem, fpca = _fpca_basis(
            scaled, config.random_effects, config, covariates, threads
        )
    basis = build_random_basis(config, scaled.responses, scaled.domain, fpca)

    fixed, random = build_designs(scaled, config.mean, covariates, basis)
    problem = GibbsProblem.build(scaled, fixed, random)
    logger.info(
        "sampling %d iterations with J=%d fixed and m=%d random effects for %d subjects",
        config.chain.n_iter,
        problem.n_fixed,
        problem.n_random,
        problem.n_subjects,
    )
    draws = run_chain(problem, config.prior, config.chain, progress=progress)
    draws = dataclasses.replace(draws, beta_names=tuple(fixed.model.column_names))
    return FittedModel(
        config=config,
        dataset=scaled,
        scaling=scaling,
        mean_model=fixed.model,
        basis=basis,
        problem=problem,
        draws=draws,
        covariance=covariance,
        eigensystem=eigensystem,
        fpca_basis=fpca,
    )
