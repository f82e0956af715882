"""A Gibbs sampler for mixed continuous and binary functional responses.

Binary responses are handled with probit data augmentation: each binary observation
has a latent normal :math:`W` whose sign is the observed value. Given the latent
values, every remaining full conditional is conjugate.

Each iteration updates, in order, the latent values, the fixed effects
:math:`\\beta`, the random effects :math:`\\alpha_i`, their covariance
:math:`\\Sigma`, and the error variances :math:`\\tau_p^2` of continuous responses.
Every step draws from its own substream, identified by the iteration and step, so
that chains are reproducible from their seed alone.
"""

from __future__ import annotations

import copy
import dataclasses
import enum
import logging
import math
import re
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
import scipy.sparse
from pydantic import BaseModel, Field, NonNegativeInt, PositiveFloat, PositiveInt, model_validator
from tqdm.auto import trange

from .basis import FixedEffectsDesign, RandomEffectsDesign, SubjectInterceptBasis
from .data import FunctionalDataset, ResponseKind
from .distributions import (
    sample_inverse_gamma,
    sample_inverse_wishart,
    sample_mvn_precision,
    sample_truncated_normal,
)
from .utils import ConfigError, DataError, NumericalError, substream

__all__ = [
    "ChainConfig",
    "GibbsProblem",
    "PosteriorDraws",
    "PriorConfig",
    "SamplerState",
    "SigmaMode",
    "alpha_conditional",
    "beta_conditional",
    "check_sigma_degrees",
    "gibbs_sweep",
    "initial_state",
    "read_draws",
    "run_chain",
    "run_gibbs",
    "sample_prior",
    "sigma_conditional",
    "simulate_data",
    "simulate_prior_predictive",
    "simulate_successive_conditional",
    "tau_conditional",
    "update_alpha",
    "update_beta",
    "update_latent_w",
    "update_sigma",
    "update_tau",
    "write_draws",
]

logger = logging.getLogger(__name__)

#: Substream identifiers of the steps within an iteration
STEP_W, STEP_BETA, STEP_ALPHA, STEP_SIGMA, STEP_TAU = 2, 3, 4, 5, 6


class SigmaMode(str, enum.Enum):
    """The structure of the random-effect covariance :math:`\\Sigma`."""

    #: unstructured, with an inverse Wishart prior
    full = "full"
    #: independent inverse gamma priors on the variances
    diagonal = "diagonal"
    #: an inverse Wishart block on the subject intercepts, diagonal elsewhere
    block = "block"


class PriorConfig(BaseModel):
    """Hyperparameters of the weak priors."""

    sigma_beta2: PositiveFloat = Field(100.0, description="The prior variance of each fixed effect")
    q1: PositiveFloat = Field(0.1, description="The prior degrees of freedom of Sigma")
    q2: PositiveFloat = Field(0.1, description="The prior scale of Sigma's precision")
    l: PositiveFloat = Field(0.1, description="The inverse gamma shape of tau^2")  # noqa:E741
    h: PositiveFloat = Field(0.1, description="The inverse gamma rate of tau^2")
    sigma_mode: SigmaMode = SigmaMode.full


class ChainConfig(BaseModel):
    """The length, thinning, and seed of a chain."""

    n_iter: PositiveInt = 20_000
    burn_in: NonNegativeInt = 5_000
    thin: PositiveInt = 1
    seed: int = Field(0, ge=0, lt=2**64)
    store_alpha: bool = Field(
        False, description="Store the random effects of each draw, needed for DIC"
    )

    @model_validator(mode="after")
    def _check_draws(self) -> ChainConfig:
        if self.burn_in >= self.n_iter:
            raise ValueError(f"burn_in={self.burn_in} leaves no draws from n_iter={self.n_iter}")
        if self.n_draws < 1:
            raise ValueError(f"thin={self.thin} leaves no draws after burn-in")
        return self

    @property
    def n_draws(self) -> int:
        """Get the number of stored draws."""
        return (self.n_iter - self.burn_in) // self.thin


@dataclass(frozen=True)
class GibbsProblem:
    """The data and designs in the long format used by the sampler.

    Rows are observations, grouped by subject, then response, as in the dataset.
    """

    y: np.ndarray
    binary: np.ndarray
    response_index: np.ndarray
    subject_index: np.ndarray
    u: np.ndarray
    psi: np.ndarray
    responses: tuple[int, ...]
    kinds: tuple[ResponseKind, ...]
    n_subjects: int
    #: sparse (N, n) matrix summing rows into subjects
    subject_matrix: scipy.sparse.csr_matrix
    #: per response :math:`U_p^T U_p`, shape (P, J, J)
    fixed_grams: np.ndarray
    #: per subject and response :math:`\Psi_{ip}^T \Psi_{ip}`, shape (N, P, m, m)
    random_grams: np.ndarray
    n_intercepts: int = 0

    @classmethod
    def build(
        cls,
        dataset: FunctionalDataset,
        fixed: FixedEffectsDesign,
        random: RandomEffectsDesign,
    ) -> GibbsProblem:
        """Stack a dataset and its designs."""
        if fixed.matrix.shape[0] != dataset.n or random.matrix.shape[0] != dataset.n:
            raise DataError("the designs do not match the dataset")
        responses = tuple(dataset.responses)
        response_index = np.searchsorted(np.asarray(responses), dataset.response)
        n_subjects = dataset.n_subjects
        subject_matrix = scipy.sparse.csr_matrix(
            (np.ones(dataset.n), (dataset.subject_index, np.arange(dataset.n))),
            shape=(n_subjects, dataset.n),
        )
        u, psi = fixed.matrix, random.matrix
        fixed_grams = np.stack(
            [u[response_index == c].T @ u[response_index == c] for c in range(len(responses))]
        )
        random_grams = np.zeros((n_subjects, len(responses), psi.shape[1], psi.shape[1]))
        for i in range(n_subjects):
            rows = dataset.subject_slice(i)
            for c in range(len(responses)):
                block = psi[rows][response_index[rows] == c]
                if len(block):
                    random_grams[i, c] = block.T @ block
        n_intercepts = (
            len(random.basis.responses) if isinstance(random.basis, SubjectInterceptBasis) else 0
        )
        return cls(
            y=dataset.y.copy(),
            binary=np.isin(dataset.response, dataset.binary_responses),
            response_index=response_index,
            subject_index=dataset.subject_index,
            u=u,
            psi=psi,
            responses=responses,
            kinds=tuple(dataset.kind(p) for p in responses),
            n_subjects=n_subjects,
            subject_matrix=subject_matrix,
            fixed_grams=fixed_grams,
            random_grams=random_grams,
            n_intercepts=n_intercepts,
        )

    def with_values(self, y: np.ndarray) -> GibbsProblem:
        """Get the same problem with new observed values."""
        return dataclasses.replace(self, y=np.asarray(y, dtype=float))

    @property
    def n(self) -> int:
        """Get the number of observations."""
        return len(self.y)

    @property
    def n_fixed(self) -> int:
        """Get the number of fixed effects, J."""
        return self.u.shape[1]

    @property
    def n_random(self) -> int:
        """Get the number of random effects per subject, m."""
        return self.psi.shape[1]

    @property
    def gaussian_columns(self) -> list[int]:
        """Get the positions of the Gaussian responses."""
        return [c for c, kind in enumerate(self.kinds) if kind is ResponseKind.gaussian]

    def linear_predictor(self, beta: np.ndarray, alpha: np.ndarray) -> np.ndarray:
        """Get :math:`u^T \\beta + \\psi^T \\alpha_i` for each observation."""
        return self.u @ beta + np.einsum("nm,nm->n", self.psi, alpha[self.subject_index])


@dataclass
class SamplerState:
    """The current values of all parameters and latent variables."""

    beta: np.ndarray
    alpha: np.ndarray
    sigma: np.ndarray
    sigma_inv: np.ndarray
    #: error variance per response, fixed at 1 for binary responses
    tau2: np.ndarray
    #: latent values, equal to the observations for Gaussian rows
    w: np.ndarray

    def row_precision(self, problem: GibbsProblem) -> np.ndarray:
        """Get the precision :math:`\\tau_p^{-2}` of each observation."""
        return 1.0 / self.tau2[problem.response_index]

    def copy(self) -> SamplerState:
        """Get a deep copy of the state."""
        return copy.deepcopy(self)


def initial_state(problem: GibbsProblem) -> SamplerState:
    """Get the default initial state.

    This has :math:`\\beta = 0`, :math:`\\alpha_i = 0`, :math:`\\Sigma = I`,
    :math:`\\tau^2 = 1`, and latent values of 0.5 where a binary observation is 1 and
    -0.5 where it is 0.
    """
    m = problem.n_random
    w = problem.y.copy()
    w[problem.binary] = np.where(problem.y[problem.binary] > 0, 0.5, -0.5)
    return SamplerState(
        beta=np.zeros(problem.n_fixed),
        alpha=np.zeros((problem.n_subjects, m)),
        sigma=np.eye(m),
        sigma_inv=np.eye(m),
        tau2=np.ones(len(problem.responses)),
        w=w,
    )


def update_latent_w(state: SamplerState, problem: GibbsProblem, rng: np.random.Generator) -> None:
    """Resample the latent value of every binary observation.

    Each is drawn from :math:`N(u^T \\beta + \\psi^T \\alpha_i, 1)` truncated to be
    positive where the observation is 1 and negative where it is 0.
    """
    rows = problem.binary
    if not rows.any():
        return
    mean = (
        problem.u[rows] @ state.beta
        + np.einsum("nm,nm->n", problem.psi[rows], state.alpha[problem.subject_index[rows]])
    )
    state.w[rows] = sample_truncated_normal(mean, 1.0, problem.y[rows] > 0, rng)


def _beta_system(
    state: SamplerState, problem: GibbsProblem, prior: PriorConfig
) -> tuple[np.ndarray, np.ndarray]:
    omega = 1.0 / state.tau2
    precision = np.einsum("p,pjk->jk", omega, problem.fixed_grams) + np.eye(
        problem.n_fixed
    ) / prior.sigma_beta2
    residual = state.w - np.einsum("nm,nm->n", problem.psi, state.alpha[problem.subject_index])
    linear = problem.u.T @ (state.row_precision(problem) * residual)
    return precision, linear


def beta_conditional(
    state: SamplerState, problem: GibbsProblem, prior: PriorConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Get the mean and covariance of the full conditional of :math:`\\beta`.

    The covariance is :math:`V_\\beta = [\\sum_i U_i^T P_i U_i + \\sigma_\\beta^{-2} I]^{-1}`
    and the mean is :math:`V_\\beta \\sum_i U_i^T P_i (W_i - \\Psi_i \\alpha_i)`.
    """
    precision, linear = _beta_system(state, problem, prior)
    covariance = np.linalg.inv(precision)
    return np.linalg.solve(precision, linear), (covariance + covariance.T) / 2


def update_beta(
    state: SamplerState, problem: GibbsProblem, prior: PriorConfig, rng: np.random.Generator
) -> None:
    """Draw the fixed effects from their full conditional."""
    precision, linear = _beta_system(state, problem, prior)
    state.beta = sample_mvn_precision(precision, linear, rng)


def _alpha_system(state: SamplerState, problem: GibbsProblem) -> tuple[np.ndarray, np.ndarray]:
    omega = 1.0 / state.tau2
    precision = np.einsum("p,ipjk->ijk", omega, problem.random_grams) + state.sigma_inv
    residual = state.row_precision(problem) * (state.w - problem.u @ state.beta)
    linear = problem.subject_matrix @ (problem.psi * residual[:, None])
    return precision, np.asarray(linear)


def alpha_conditional(
    state: SamplerState, problem: GibbsProblem
) -> tuple[np.ndarray, np.ndarray]:
    """Get the means and covariances of the full conditionals of each :math:`\\alpha_i`.

    The covariance is :math:`V_\\alpha = (\\Psi_i^T P_i \\Psi_i + \\Sigma^{-1})^{-1}` and
    the mean is :math:`V_\\alpha \\Psi_i^T P_i (W_i - U_i \\beta)`.

    :returns: Means with shape (N, m) and covariances with shape (N, m, m)
    """
    precision, linear = _alpha_system(state, problem)
    covariance = np.linalg.inv(precision)
    return np.linalg.solve(precision, linear[..., None])[..., 0], covariance


def update_alpha(state: SamplerState, problem: GibbsProblem, rng: np.random.Generator) -> None:
    """Draw every subject's random effects, batched over subjects."""
    if not problem.n_subjects:
        return
    precision, linear = _alpha_system(state, problem)
    state.alpha = sample_mvn_precision(precision, linear, rng)


def sigma_conditional(state: SamplerState, prior: PriorConfig) -> tuple[float, np.ndarray]:
    """Get the degrees of freedom and scale of the Wishart conditional of :math:`\\Sigma^{-1}`.

    This is :math:`\\text{Wishart}(\\{\\sum_i \\alpha_i \\alpha_i^T + q_2^{-1} I\\}^{-1}, N + q_1)`.
    """
    n, m = state.alpha.shape
    scatter = state.alpha.T @ state.alpha
    return n + prior.q1, np.linalg.inv(scatter + np.eye(m) / prior.q2)


def _inverse_gamma_variances(
    scatter_diagonal: np.ndarray, n: int, prior: PriorConfig, rng: np.random.Generator
) -> np.ndarray:
    shape = (prior.q1 + n) / 2
    rate = (1 / prior.q2 + scatter_diagonal) / 2
    return sample_inverse_gamma(np.full(len(rate), shape), rate, rng)


def update_sigma(
    state: SamplerState,
    prior: PriorConfig,
    rng: np.random.Generator,
    n_intercepts: int = 0,
) -> None:
    """Draw the random-effect covariance from its full conditional.

    :param state: The current state
    :param prior: The priors, including the structure of :math:`\\Sigma`
    :param rng: A random generator
    :param n_intercepts: The number of leading subject-intercept columns, which form
        the inverse Wishart block in the block mode
    :raises ConfigError: if the block mode is used without subject intercepts
    :raises NumericalError: if the Wishart degrees of freedom are too small
    """
    n, m = state.alpha.shape
    scatter = state.alpha.T @ state.alpha
    if prior.sigma_mode is SigmaMode.full:
        df, scale = sigma_conditional(state, prior)
        state.sigma, state.sigma_inv = sample_inverse_wishart(scale, df, rng)
        return

    if prior.sigma_mode is SigmaMode.diagonal:
        variances = _inverse_gamma_variances(np.diag(scatter), n, prior, rng)
        state.sigma = np.diag(variances)
        state.sigma_inv = np.diag(1 / variances)
        return

    if not n_intercepts:
        raise ConfigError("the block covariance mode requires subject intercepts")
    b = n_intercepts
    sigma = np.zeros((m, m))
    sigma_inv = np.zeros((m, m))
    block_scale = np.linalg.inv(scatter[:b, :b] + np.eye(b) / prior.q2)
    sigma[:b, :b], sigma_inv[:b, :b] = sample_inverse_wishart(block_scale, n + prior.q1, rng)
    if m > b:
        variances = _inverse_gamma_variances(np.diag(scatter)[b:], n, prior, rng)
        sigma[b:, b:] = np.diag(variances)
        sigma_inv[b:, b:] = np.diag(1 / variances)
    state.sigma, state.sigma_inv = sigma, sigma_inv


def _wishart_columns(prior: PriorConfig, n_random: int, n_intercepts: int) -> int:
    if prior.sigma_mode is SigmaMode.full:
        return n_random
    if prior.sigma_mode is SigmaMode.block:
        return n_intercepts
    return 0


def check_sigma_degrees(
    prior: PriorConfig, n_subjects: int, n_random: int, n_intercepts: int = 0
) -> None:
    """Check the inverse Wishart conditional of :math:`\\Sigma` is defined.

    The conditional of the :math:`d` columns drawn jointly has :math:`N + q_1` degrees
    of freedom, which must exceed :math:`d - 1`.

    :param prior: The priors, including the structure of :math:`\\Sigma`
    :param n_subjects: The number of subjects N
    :param n_random: The number of random effects m
    :param n_intercepts: The number of leading subject-intercept columns
    :raises ConfigError: if there are too few subjects for the configured structure
    """
    d = _wishart_columns(prior, n_random, n_intercepts)
    if n_subjects + prior.q1 > d - 1:
        return
    minimum = math.floor(d - 1 - prior.q1) + 1
    raise ConfigError(
        f"a {prior.sigma_mode.value} covariance of {d} random effects needs at least "
        f"{minimum} subjects with q1={prior.q1}, got {n_subjects}. Use fewer basis "
        f"functions or the diagonal sigma_mode"
    )


def tau_conditional(
    state: SamplerState, problem: GibbsProblem, prior: PriorConfig
) -> dict[int, tuple[float, float]]:
    """Get the inverse gamma shape and rate of each continuous response's error variance.

    The residual is :math:`W - (u^T \\beta + \\psi^T \\alpha_i)`, giving
    :math:`\\text{InvGamma}(n_p / 2 + l, h + \\frac{1}{2} \\sum \\text{residual}^2)`.
    """
    residual = state.w - problem.linear_predictor(state.beta, state.alpha)
    rv = {}
    for c in problem.gaussian_columns:
        rows = problem.response_index == c
        shape = rows.sum() / 2 + prior.l
        rate = prior.h + float(residual[rows] @ residual[rows]) / 2
        rv[problem.responses[c]] = (float(shape), rate)
    return rv


def update_tau(
    state: SamplerState, problem: GibbsProblem, prior: PriorConfig, rng: np.random.Generator
) -> None:
    """Draw the error variance of each continuous response. Binary responses stay at 1."""
    for response, (shape, rate) in tau_conditional(state, problem, prior).items():
        c = problem.responses.index(response)
        state.tau2[c] = float(sample_inverse_gamma(shape, rate, rng))


def gibbs_sweep(
    state: SamplerState,
    problem: GibbsProblem,
    prior: PriorConfig,
    seed: int,
    iteration: int,
) -> None:
    """Run one full iteration of the sampler in place.

    :raises NumericalError: with the iteration attached, if any step fails
    """
    try:
        update_latent_w(state, problem, substream(seed, iteration, STEP_W))
        update_beta(state, problem, prior, substream(seed, iteration, STEP_BETA))
        update_alpha(state, problem, substream(seed, iteration, STEP_ALPHA))
        update_sigma(state, prior, substream(seed, iteration, STEP_SIGMA), problem.n_intercepts)
        update_tau(state, problem, prior, substream(seed, iteration, STEP_TAU))
    except NumericalError as e:
        raise NumericalError(str(e), iteration=iteration) from e
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"linear algebra failure: {e}", iteration=iteration) from e


@dataclass(frozen=True)
class PosteriorDraws:
    """Stored post-burn-in, thinned draws of a chain."""

    iterations: np.ndarray
    beta: np.ndarray
    sigma: np.ndarray
    #: shape (D, P), which is 1 in the columns of binary responses
    tau2: np.ndarray
    responses: tuple[int, ...]
    kinds: tuple[ResponseKind, ...]
    seed: int
    #: shape (D, N, m), if random effects were stored
    alpha: np.ndarray | None = None
    beta_names: tuple[str, ...] = ()

    @property
    def n_draws(self) -> int:
        """Get the number of stored draws."""
        return len(self.iterations)

    def tau2_of(self, response: int) -> np.ndarray:
        """Get the draws of a response's error variance."""
        return self.tau2[:, self.responses.index(response)]

    def require_alpha(self) -> np.ndarray:
        """Get the random-effect draws.

        :raises ConfigError: if they weren't stored
        """
        if self.alpha is None:
            raise ConfigError("random effects were not stored; re-run with store_alpha enabled")
        return self.alpha


def run_chain(
    problem: GibbsProblem,
    prior: PriorConfig,
    chain: ChainConfig,
    *,
    initial: SamplerState | None = None,
    progress: bool = False,
) -> PosteriorDraws:
    """Run a chain on a stacked problem.

    :param problem: The data and designs
    :param prior: The priors
    :param chain: The length, thinning, and seed of the chain
    :param initial: The initial state. Defaults to :func:`initial_state`.
    :param progress: Should a progress bar be shown?
    :returns: The stored draws
    :raises ConfigError: if the covariance structure needs more subjects than there are
    :raises NumericalError: with the iteration attached, if a step fails
    """
    if prior.sigma_mode is SigmaMode.block and not problem.n_intercepts:
        raise ConfigError("the block covariance mode requires subject intercepts")
    check_sigma_degrees(prior, problem.n_subjects, problem.n_random, problem.n_intercepts)
    state = initial.copy() if initial is not None else initial_state(problem)
    n_draws = chain.n_draws
    iterations = np.empty(n_draws, dtype=int)
    beta = np.empty((n_draws, problem.n_fixed))
    sigma = np.empty((n_draws, problem.n_random, problem.n_random))
    tau2 = np.empty((n_draws, len(problem.responses)))
    alpha = (
        np.empty((n_draws, problem.n_subjects, problem.n_random)) if chain.store_alpha else None
    )
    d = 0
    for iteration in trange(
        1,
        chain.n_iter + 1,
        desc="Gibbs sampling",
        unit="iteration",
        disable=not progress,
        leave=False,
    ):
        gibbs_sweep(state, problem, prior, chain.seed, iteration)
        if iteration <= chain.burn_in or (iteration - chain.burn_in) % chain.thin:
            continue
        if d >= n_draws:
            break
        iterations[d] = iteration
        beta[d] = state.beta
        sigma[d] = state.sigma
        tau2[d] = state.tau2
        if alpha is not None:
            alpha[d] = state.alpha
        d += 1
    logger.debug("stored %d draws from %d iterations", d, chain.n_iter)
    return PosteriorDraws(
        iterations=iterations,
        beta=beta,
        sigma=sigma,
        tau2=tau2,
        responses=problem.responses,
        kinds=problem.kinds,
        seed=chain.seed,
        alpha=alpha,
    )


def run_gibbs(
    dataset: FunctionalDataset,
    fixed: FixedEffectsDesign,
    random: RandomEffectsDesign,
    prior: PriorConfig | None = None,
    chain: ChainConfig | None = None,
    *,
    initial: SamplerState | None = None,
    progress: bool = False,
) -> PosteriorDraws:
    """Fit the model to a dataset by Gibbs sampling.

    :param dataset: A scaled dataset
    :param fixed: Its fixed-effects design
    :param random: Its random-effects design
    :param prior: The priors
    :param chain: The chain configuration
    :param initial: An optional initial state
    :param progress: Should a progress bar be shown?
    :returns: The stored draws. Identical inputs and seeds give identical draws.
    """
    problem = GibbsProblem.build(dataset, fixed, random)
    draws = run_chain(
        problem, prior or PriorConfig(), chain or ChainConfig(), initial=initial, progress=progress
    )
    return dataclasses.replace(draws, beta_names=tuple(fixed.model.column_names))


def sample_prior(
    problem: GibbsProblem, prior: PriorConfig, rng: np.random.Generator
) -> SamplerState:
    """Draw every parameter from its prior. Latent values are left at their defaults.

    :raises ConfigError: if the inverse Wishart prior on :math:`\\Sigma` is improper,
        which is when :math:`q_1 \\le d - 1` for the :math:`d` columns drawn jointly
    """
    m = problem.n_random
    d = _wishart_columns(prior, m, problem.n_intercepts)
    if prior.q1 <= d - 1:
        raise ConfigError(
            f"the inverse Wishart prior on {d} random effects needs q1 > {d - 1}, got {prior.q1}"
        )
    state = initial_state(problem)
    state.beta = rng.normal(0.0, np.sqrt(prior.sigma_beta2), problem.n_fixed)
    empty = dataclasses.replace(state, alpha=np.zeros((0, m)))
    update_sigma(empty, prior, rng, problem.n_intercepts)
    state.sigma, state.sigma_inv = empty.sigma, empty.sigma_inv
    chol = np.linalg.cholesky(state.sigma)
    state.alpha = rng.standard_normal((problem.n_subjects, m)) @ chol.T
    for c in problem.gaussian_columns:
        state.tau2[c] = float(sample_inverse_gamma(prior.l, prior.h, rng))
    return state


def simulate_data(
    problem: GibbsProblem, state: SamplerState, rng: np.random.Generator
) -> np.ndarray:
    """Generate observations from the model at the current state.

    The state's latent values are replaced by the generated ones.

    :returns: The generated observations, in the problem's row order
    """
    eta = problem.linear_predictor(state.beta, state.alpha)
    noise = rng.standard_normal(problem.n) * np.sqrt(state.tau2[problem.response_index])
    w = eta + noise
    y = np.where(problem.binary, (w > 0).astype(float), w)
    state.w = w
    return y


def simulate_prior_predictive(
    problem: GibbsProblem, prior: PriorConfig, n: int, seed: int
) -> dict[str, np.ndarray]:
    """Draw parameters independently from the prior.

    :returns: Arrays of draws of ``beta`` with shape (n, J) and ``tau2`` with shape
        (n, number of continuous responses)
    """
    columns = problem.gaussian_columns
    beta = np.empty((n, problem.n_fixed))
    tau2 = np.empty((n, len(columns)))
    for k in range(n):
        state = sample_prior(problem, prior, substream(seed, k))
        beta[k] = state.beta
        tau2[k] = state.tau2[columns]
    return {"beta": beta, "tau2": tau2}


def simulate_successive_conditional(
    problem: GibbsProblem, prior: PriorConfig, n: int, seed: int
) -> dict[str, np.ndarray]:
    """Alternate between generating data and one Gibbs iteration, starting from the prior.

    If the sampler is correct, the parameters visited have the prior as their
    stationary distribution, so their moments match :func:`simulate_prior_predictive`.

    :returns: Arrays of draws of ``beta`` and ``tau2``, as in
        :func:`simulate_prior_predictive`
    """
    columns = problem.gaussian_columns
    state = sample_prior(problem, prior, substream(seed, 0, 0))
    beta = np.empty((n, problem.n_fixed))
    tau2 = np.empty((n, len(columns)))
    for k in range(n):
        y = simulate_data(problem, state, substream(seed, k + 1, 1))
        gibbs_sweep(state, problem.with_values(y), prior, seed, k + 1)
        beta[k] = state.beta
        tau2[k] = state.tau2[columns]
    return {"beta": beta, "tau2": tau2}


def write_draws(draws: PosteriorDraws, path: str | Path) -> None:
    """Write draws as CSV, one row per stored iteration.

    Columns are ``iteration``, then ``beta[j]``, ``Sigma[k,l]``, and ``tau2[p]`` for
    each continuous response p, with 1-based indices.
    """
    columns: dict[str, np.ndarray] = {"iteration": draws.iterations}
    for j in range(draws.beta.shape[1]):
        columns[f"beta[{j + 1}]"] = draws.beta[:, j]
    m = draws.sigma.shape[1]
    for k in range(m):
        for l in range(m):  # noqa:E741
            columns[f"Sigma[{k + 1},{l + 1}]"] = draws.sigma[:, k, l]
    for c, (response, kind) in enumerate(zip(draws.responses, draws.kinds)):
        if kind is ResponseKind.gaussian:
            columns[f"tau2[{response}]"] = draws.tau2[:, c]
    pd.DataFrame(columns).to_csv(path, index=False)


_SIGMA_RE = re.compile(r"^Sigma\[(\d+),(\d+)\]$")


def read_draws(
    path: str | Path,
    response_kinds: Mapping[int, ResponseKind],
    *,
    seed: int = 0,
    alpha: np.ndarray | None = None,
    beta_names: Sequence[str] = (),
) -> PosteriorDraws:
    """Read draws written by :func:`write_draws`.

    :param path: The path to the CSV file
    :param response_kinds: The kind of each response
    :param seed: The seed of the chain, for provenance
    :param alpha: Random-effect draws stored separately, if any
    :param beta_names: Names of the fixed effects
    :returns: The draws
    :raises DataError: if the columns don't follow the draws layout
    """
    df = pd.read_csv(path)
    if "iteration" not in df.columns:
        raise DataError(f"{path} has no iteration column")
    beta_columns = [c for c in df.columns if c.startswith("beta[")]
    sigma_columns = [c for c in df.columns if _SIGMA_RE.match(c)]
    m = int(round(np.sqrt(len(sigma_columns))))
    if m * m != len(sigma_columns):
        raise DataError(f"{path} has {len(sigma_columns)} Sigma columns, which isn't a square")
    sigma = np.empty((len(df), m, m))
    for column in sigma_columns:
        match = _SIGMA_RE.match(column)
        assert match is not None
        sigma[:, int(match.group(1)) - 1, int(match.group(2)) - 1] = df[column].to_numpy()
    responses = tuple(sorted(response_kinds))
    tau2 = np.ones((len(df), len(responses)))
    for c, response in enumerate(responses):
        column = f"tau2[{response}]"
        if response_kinds[response] is ResponseKind.gaussian:
            if column not in df.columns:
                raise DataError(f"{path} is missing {column}")
            tau2[:, c] = df[column].to_numpy()
    return PosteriorDraws(
        iterations=df["iteration"].to_numpy(dtype=int),
        beta=df[beta_columns].to_numpy(dtype=float),
        sigma=sigma,
        tau2=tau2,
        responses=responses,
        kinds=tuple(response_kinds[p] for p in responses),
        seed=seed,
        alpha=alpha,
        beta_names=tuple(beta_names),
    )
