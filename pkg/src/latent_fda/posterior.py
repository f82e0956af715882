"""Posterior summaries, held-out prediction, and evaluation metrics."""

from __future__ import annotations

import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from scipy.special import log_ndtr, ndtr

from .basis import (
    MeanModel,
    MeanSpec,
    RandomEffectsBasis,
    build_designs,
    subject_covariate_table,
)
from .data import FunctionalDataset, ResponseKind, ScalingInfo, SubjectCovariates
from .sampler import (
    GibbsProblem,
    PosteriorDraws,
    SamplerState,
    initial_state,
    update_alpha,
    update_latent_w,
)
from .smoothing import GridSpec
from .utils import ConfigError, DataError, DimensionError, substream

__all__ = [
    "DicReport",
    "PosteriorSummary",
    "PredictionResult",
    "TruthSpec",
    "compute_coverage_and_length",
    "compute_dic",
    "compute_mise",
    "compute_mspe",
    "deviance",
    "monte_carlo_se",
    "predict_heldout",
    "predict_marginal",
    "summarize",
]

logger = logging.getLogger(__name__)

#: The normal quantile giving 95% pointwise intervals
Z_95 = 1.96


@dataclass(frozen=True)
class PosteriorSummary:
    """Pointwise posterior summaries of a response's marginal mean function on a grid."""

    response: int
    grid: GridSpec
    mean: np.ndarray
    variance: np.ndarray
    median: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        """Get the summary as a data frame with one row per grid point."""
        return pd.DataFrame(
            {
                "t": self.grid.points,
                "mean": self.mean,
                "variance": self.variance,
                "median": self.median,
                "lower": self.lower,
                "upper": self.upper,
            }
        )


def _marginal_mean_draws(
    draws: PosteriorDraws,
    model: MeanModel,
    basis: RandomEffectsBasis,
    response: int,
    t: np.ndarray,
    covariates: Mapping[str, float] | None,
    scaling: ScalingInfo | None,
) -> np.ndarray:
    """Get the marginal mean of a response at each location for each draw, shape (D, G)."""
    values = draws.beta @ model.rows(response, t, covariates).T
    kind = draws.kinds[draws.responses.index(response)]
    if kind is ResponseKind.gaussian:
        return values * (scaling.scale(response) if scaling is not None else 1.0)
    psi = basis.evaluate(response, t)
    variance = np.einsum("gm,dmk,gk->dg", psi, draws.sigma, psi) + 1.0
    return ndtr(values / np.sqrt(variance))


def summarize(
    draws: PosteriorDraws,
    model: MeanModel,
    basis: RandomEffectsBasis,
    grid: GridSpec,
    *,
    scaling: ScalingInfo | None = None,
    covariates: Mapping[str, float] | None = None,
) -> dict[int, PosteriorSummary]:
    """Summarize the posterior of each response's marginal mean function.

    For a continuous response this is :math:`u^T \\beta`, rescaled to the original
    scale. For a binary response it is the probability
    :math:`\\Phi(u^T \\beta / \\sqrt{\\psi^T \\Sigma \\psi + 1})`, which integrates over
    the random effects.

    :param draws: Posterior draws
    :param model: The fixed-effects model
    :param basis: The random-effect basis
    :param grid: The grid to summarize on
    :param scaling: The scaling applied to the continuous responses before fitting
    :param covariates: Covariate values to evaluate the mean at, if the model has any
    :returns: A summary for each response
    :raises DataError: if there are fewer than two draws
    """
    if draws.n_draws < 2:
        raise DataError(f"need at least two draws to summarize, got {draws.n_draws}")
    rv = {}
    points = grid.points
    for response in draws.responses:
        values = _marginal_mean_draws(draws, model, basis, response, points, covariates, scaling)
        lower, median, upper = np.quantile(values, [0.025, 0.5, 0.975], axis=0)
        rv[response] = PosteriorSummary(
            response=response,
            grid=grid,
            mean=values.mean(axis=0),
            variance=values.var(axis=0),
            median=median,
            lower=lower,
            upper=upper,
        )
    return rv


@dataclass(frozen=True)
class PredictionResult:
    """Predictions of held-out observations, on the original scale."""

    subject_ids: tuple[str, ...]
    response: np.ndarray
    t: np.ndarray
    #: the held-out values, if known
    y: np.ndarray
    #: the posterior mean, or the posterior probability that Y = 1 for binary responses
    prediction: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        """Get the predictions as a data frame with one row per held-out observation."""
        return pd.DataFrame(
            {
                "subject_id": self.subject_ids,
                "response_id": self.response,
                "t": self.t,
                "y": self.y,
                "prediction": self.prediction,
                "lower": self.lower,
                "upper": self.upper,
            }
        )


def predict_heldout(
    draws: PosteriorDraws,
    observed: FunctionalDataset,
    targets: FunctionalDataset,
    mean_spec: MeanSpec,
    basis: RandomEffectsBasis,
    *,
    domain: tuple[float, float] | None = None,
    covariates: SubjectCovariates | None = None,
    scaling: ScalingInfo | None = None,
    inner_sweeps: int = 20,
    seed: int = 0,
) -> PredictionResult:
    """Predict the held-out responses of new subjects from the responses they observe.

    For each stored draw, the new subjects' random effects are drawn from their full
    conditional given only the observed responses. When binary responses are observed,
    this alternates between the latent values and the random effects for
    ``inner_sweeps`` sweeps. The missing response's mean is then evaluated at the
    target locations and averaged over draws.

    :param draws: Posterior draws from the fitted model
    :param observed: The observed responses of the new subjects, on the original scale
    :param targets: The held-out locations, whose values are only used as truth
    :param mean_spec: The fitted fixed-effects specification
    :param basis: The fitted random-effect basis
    :param domain: The domain of the fitted model. Defaults to the observed data's domain.
    :param covariates: Subject-level covariates of the new subjects
    :param scaling: The scaling applied to the continuous responses before fitting
    :param inner_sweeps: The number of sweeps for binary-observed subjects
    :param seed: The seed for the prediction draws
    :returns: A prediction for every target observation
    :raises DataError: if a target subject has no observed responses
    """
    domain = domain or observed.domain
    kinds = dict(zip(draws.responses, draws.kinds))
    missing = sorted(set(targets.subject_ids) - set(observed.subject_ids))
    if missing:
        raise DataError(f"subjects observing no responses can not be predicted: {missing}")
    observed = observed.with_domain(domain)
    if scaling is not None:
        observed = observed.with_values(
            observed.y / np.array([scaling.scale(p) for p in observed.response])
        )
    targets = FunctionalDataset.from_arrays(
        [targets.subject_ids[i] for i in targets.subject_index],
        targets.response,
        targets.t,
        targets.y,
        kinds,
        domain=domain,
        subject_order=observed.subject_ids,
    )
    observed = FunctionalDataset.from_arrays(
        [observed.subject_ids[i] for i in observed.subject_index],
        observed.response,
        observed.t,
        observed.y,
        kinds,
        domain=domain,
        subject_order=observed.subject_ids,
    )

    fixed, random = build_designs(observed, mean_spec, covariates, basis)
    problem = GibbsProblem.build(observed, fixed, random)
    target_fixed, target_random = build_designs(targets, mean_spec, covariates, basis)
    if problem.n_fixed != draws.beta.shape[1] or problem.n_random != draws.sigma.shape[1]:
        raise DimensionError("the designs do not match the fitted draws")

    target_kinds = [kinds[p] for p in targets.response]
    binary_targets = np.array([kind is ResponseKind.binary for kind in target_kinds], dtype=bool)
    target_scale = np.array(
        [scaling.scale(p) if scaling is not None else 1.0 for p in targets.response]
    )
    sweeps = inner_sweeps if problem.binary.any() else 1
    logger.debug(
        "predicting %d held-out observations from %d draws with %d sweeps each",
        targets.n,
        draws.n_draws,
        sweeps,
    )

    values = np.empty((draws.n_draws, targets.n))
    for d in range(draws.n_draws):
        state: SamplerState = initial_state(problem)
        state.beta = draws.beta[d]
        state.sigma = draws.sigma[d]
        state.sigma_inv = np.linalg.inv(draws.sigma[d])
        state.tau2 = draws.tau2[d].copy()
        for sweep in range(sweeps):
            update_latent_w(state, problem, substream(seed, d, sweep, 0))
            update_alpha(state, problem, substream(seed, d, sweep, 1))
        eta = target_fixed.matrix @ state.beta + np.einsum(
            "nm,nm->n", target_random.matrix, state.alpha[targets.subject_index]
        )
        values[d] = np.where(binary_targets, ndtr(eta), eta * target_scale)

    lower, upper = np.quantile(values, [0.025, 0.975], axis=0)
    return PredictionResult(
        subject_ids=tuple(targets.subject_ids[i] for i in targets.subject_index),
        response=targets.response,
        t=targets.t,
        y=targets.y,
        prediction=values.mean(axis=0),
        lower=lower,
        upper=upper,
    )


def predict_marginal(
    draws: PosteriorDraws,
    model: MeanModel,
    basis: RandomEffectsBasis,
    targets: FunctionalDataset,
    *,
    covariates: SubjectCovariates | None = None,
    scaling: ScalingInfo | None = None,
) -> PredictionResult:
    """Predict observations of subjects that observe nothing informative about them.

    With no observations, the random effects keep their prior, so the prediction is
    the marginal mean of :func:`summarize` at each target location. This is what a
    model fit to a single response predicts when that response is held out.

    :param draws: Posterior draws
    :param model: The fitted fixed-effects model
    :param basis: The fitted random-effect basis
    :param targets: The held-out locations, whose values are only used as truth
    :param covariates: Subject-level covariates of the target subjects
    :param scaling: The scaling applied to the continuous responses before fitting
    :returns: A prediction for every target observation
    """
    table = subject_covariate_table(targets, model, covariates)
    values = np.empty((draws.n_draws, targets.n))
    for i in range(targets.n_subjects):
        rows = targets.subject_slice(i)
        for response in np.unique(targets.response[rows]).tolist():
            mask = np.flatnonzero(targets.response[rows] == response) + rows.start
            values[:, mask] = _marginal_mean_draws(
                draws, model, basis, response, targets.t[mask], table[i], scaling
            )
    lower, upper = np.quantile(values, [0.025, 0.975], axis=0)
    return PredictionResult(
        subject_ids=tuple(targets.subject_ids[i] for i in targets.subject_index),
        response=targets.response,
        t=targets.t,
        y=targets.y,
        prediction=values.mean(axis=0),
        lower=lower,
        upper=upper,
    )


class TruthSpec(BaseModel):
    """The true marginal mean functions of a simulation, on a grid."""

    grid: GridSpec
    omega: dict[int, list[float]] = Field(
        ..., description="The true marginal mean of each response on the grid"
    )
    marginal_variance: dict[int, list[float]] = Field(
        default_factory=dict,
        description="The latent variance v(t) of each binary response, which is at least 1",
    )

    def of(self, response: int) -> np.ndarray:
        """Get the true marginal mean of a response."""
        return np.asarray(self.omega[response])

    def to_frame(self) -> pd.DataFrame:
        """Get the truth as a data frame with a column per response."""
        frame = pd.DataFrame({"t": self.grid.points})
        for response in sorted(self.omega):
            frame[f"omega[{response}]"] = self.omega[response]
        return frame


def _riemann(values: np.ndarray, spacing: float) -> np.ndarray:
    """Integrate over the last axis with a left Riemann sum."""
    return values[..., :-1].sum(axis=-1) * spacing


def compute_mise(
    estimates: Sequence[np.ndarray] | np.ndarray,
    truth: np.ndarray,
    grid: GridSpec,
) -> float:
    """Get the mean integrated squared error of estimated mean functions.

    :param estimates: Estimated functions on the grid, one row per replication
    :param truth: The true function on the grid, or one per replication
    :param grid: The grid
    :returns: The integrated squared error averaged over replications
    :raises DimensionError: if the estimates aren't on the grid
    """
    estimates = np.atleast_2d(np.asarray(estimates, dtype=float))
    truth = np.asarray(truth, dtype=float)
    if estimates.shape[-1] != grid.size or truth.shape[-1] != grid.size:
        raise DimensionError(f"expected functions on {grid.size} grid points")
    return float(_riemann((estimates - truth) ** 2, grid.spacing).mean())


def compute_coverage_and_length(
    means: Sequence[np.ndarray] | np.ndarray,
    variances: Sequence[np.ndarray] | np.ndarray,
    truth: np.ndarray,
) -> tuple[float, float]:
    """Get the coverage of 95% pointwise intervals and their average length.

    The interval at each point is the posterior mean plus or minus
    :math:`1.96 \\sqrt{\\hat{\\nu}}`.

    :returns: The percentage of (location, replication) pairs whose interval contains
        the truth, and the mean interval length
    """
    means = np.atleast_2d(np.asarray(means, dtype=float))
    margin = Z_95 * np.sqrt(np.atleast_2d(np.asarray(variances, dtype=float)))
    covered = np.abs(means - np.asarray(truth, dtype=float)) <= margin
    return 100 * float(covered.mean()), float((2 * margin).mean())


def compute_mspe(
    prediction: PredictionResult | np.ndarray,
    y: np.ndarray | None = None,
    response: np.ndarray | None = None,
) -> dict[int, float]:
    """Get the mean squared prediction error of each response.

    For binary responses with probabilities as predictions this is the Brier score.

    :param prediction: Predictions, either as a result or an array
    :param y: The held-out values. Defaults to those stored in the result.
    :param response: The response of each value. Defaults to those stored in the result.
    :returns: The error of each response
    :raises DataError: if a prediction is missing
    """
    if isinstance(prediction, PredictionResult):
        y = prediction.y if y is None else y
        response = prediction.response if response is None else response
        predicted = prediction.prediction
    else:
        predicted = np.asarray(prediction, dtype=float)
    if y is None:
        raise DataError("no held-out values to compare to")
    y = np.asarray(y, dtype=float)
    response = np.ones(len(y), dtype=int) if response is None else np.asarray(response)
    if predicted.shape != y.shape or np.isnan(predicted).any():
        raise DataError("a prediction is missing for some held-out observations")
    return {
        int(p): float(np.mean((y[response == p] - predicted[response == p]) ** 2))
        for p in np.unique(response)
    }


class DicReport(BaseModel):
    """The deviance information criterion."""

    dbar: float = Field(..., description="The mean deviance over draws")
    d_at_mean: float = Field(..., description="The deviance at the posterior means")
    p_d: float = Field(..., description="The effective number of parameters, Dbar - D(mean)")
    dic: float = Field(..., description="Dbar + pD")


def deviance(
    problem: GibbsProblem, beta: np.ndarray, alpha: np.ndarray, tau2: np.ndarray
) -> float:
    """Get the conditional deviance given the random effects.

    This is :math:`-2` times the sum of Gaussian log-densities of the continuous
    observations and Bernoulli log-probabilities :math:`\\Phi(\\eta)` of the binary ones.
    """
    eta = problem.linear_predictor(beta, alpha)
    gaussian = ~problem.binary
    variance = tau2[problem.response_index[gaussian]]
    residual = problem.y[gaussian] - eta[gaussian]
    log_likelihood = -0.5 * np.sum(np.log(2 * np.pi * variance) + residual**2 / variance)
    sign = 2 * problem.y[problem.binary] - 1
    log_likelihood += np.sum(log_ndtr(sign * eta[problem.binary]))
    return float(-2 * log_likelihood)


def compute_dic(draws: PosteriorDraws, problem: GibbsProblem) -> DicReport:
    """Get the deviance information criterion of a fit.

    :param draws: Posterior draws with stored random effects
    :param problem: The (scaled) data and designs the draws were fit to
    :returns: The DIC report
    :raises ConfigError: if the random effects weren't stored
    """
    alpha = draws.require_alpha()
    deviances = np.array(
        [deviance(problem, draws.beta[d], alpha[d], draws.tau2[d]) for d in range(draws.n_draws)]
    )
    dbar = float(deviances.mean())
    d_at_mean = deviance(
        problem, draws.beta.mean(axis=0), alpha.mean(axis=0), draws.tau2.mean(axis=0)
    )
    p_d = dbar - d_at_mean
    return DicReport(dbar=dbar, d_at_mean=d_at_mean, p_d=p_d, dic=dbar + p_d)


def monte_carlo_se(x: Sequence[float] | np.ndarray, batch_size: int | None = None) -> float:
    """Estimate the Monte Carlo standard error of a chain's mean with batch means.

    :param x: The draws of a scalar quantity
    :param batch_size: The batch size. Defaults to the square root of the chain length.
    :returns: The standard error of the chain mean
    :raises ConfigError: if there are fewer than two batches
    """
    x = np.asarray(x, dtype=float)
    batch_size = batch_size or int(np.sqrt(len(x)))
    n_batches = len(x) // max(batch_size, 1)
    if n_batches < 2:
        raise ConfigError(f"need at least two batches, got {n_batches}")
    means = x[: n_batches * batch_size].reshape(n_batches, batch_size).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(n_batches))
