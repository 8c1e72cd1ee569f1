"""Forward filtering recursion, paired correct/misspecified runs, decay estimation.

The filter alternates a prediction through the transition kernel with a
Bayes reweighting by the observation likelihood, renormalizing in the linear
domain at every step. For two filters driven by the same observation record,
the total variation distance between their posteriors is the quantity whose
decay (or non-decay) this package measures.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from itertools import product
from typing import Sequence

import numpy as np

from .errors import InvalidModelError, NumericalError
from .model import Density, FiniteModel, StateSpace, TransitionKernel, as_density
from .simulate import likelihood_vector

UNDERFLOW_FLOOR = 1e-300
TV_FLOOR = 1e-280


@dataclass(frozen=True)
class FilterRun:
    """Posterior densities ``pi_0..pi_N`` from one prior on one observation record.

    ``log_normalizers[k]`` is the log of the Bayes normalizing constant of step
    ``k+1``; their sum is the log marginal likelihood of the record under this
    prior, which tests use as an independent route to likelihood ratios.
    """

    densities: tuple
    prior_label: str
    observations: np.ndarray
    log_normalizers: np.ndarray


@dataclass(frozen=True)
class PairRun:
    """Correct and misspecified filters on a shared record, with their TV gap."""

    run_correct: FilterRun
    run_wrong: FilterRun
    tv: np.ndarray


@dataclass(frozen=True)
class DecayEstimate:
    slope: float
    converged: bool


def predict(pi: Density, kernel: TransitionKernel, space: StateSpace) -> Density:
    """One prediction step: ``out[x] = sum_z matrix[z, x] * pi[z] * w[z]``."""
    out = kernel.matrix.T @ (pi.values * space.weights)
    return as_density(out, space)


def filter_step_with_likelihood(
    pi_prev: Density,
    likelihood: np.ndarray,
    kernel: TransitionKernel,
    space: StateSpace,
) -> tuple[Density, float]:
    """Prediction plus Bayes reweighting by an explicit likelihood vector.

    Returns the posterior and the normalizing constant
    ``sum_x likelihood[x] * predicted[x] * w[x]``. A normalizer at or below
    the underflow floor means the observation has probability zero under the
    predicted law.
    """
    predicted = kernel.matrix.T @ (pi_prev.values * space.weights)
    unnormalized = np.asarray(likelihood, dtype=float) * predicted
    normalizer = float(unnormalized @ space.weights)
    if not np.isfinite(normalizer) or normalizer <= UNDERFLOW_FLOOR:
        raise NumericalError(
            "zero-likelihood observation: observation has probability 0 under the predicted law"
        )
    return Density(unnormalized / normalizer), normalizer


def filter_step(pi_prev: Density, y, model: FiniteModel) -> Density:
    """One full filter update for observation ``y``."""
    lik = likelihood_vector(model.observation, y)
    posterior, _ = filter_step_with_likelihood(pi_prev, lik, model.kernel, model.space)
    return posterior


def run_filter(prior: Density, observations: Sequence, model: FiniteModel,
               prior_label: str = "custom") -> FilterRun:
    """Fold the filter over an observation record, keeping every posterior."""
    densities = [prior]
    log_norms = np.empty(len(observations))
    pi = prior
    for n, y in enumerate(observations):
        lik = likelihood_vector(model.observation, y)
        try:
            pi, normalizer = filter_step_with_likelihood(pi, lik, model.kernel, model.space)
        except NumericalError as exc:
            raise NumericalError(f"{exc} (at step {n + 1})") from exc
        densities.append(pi)
        log_norms[n] = math.log(normalizer)
    return FilterRun(
        densities=tuple(densities),
        prior_label=prior_label,
        observations=np.asarray(observations),
        log_normalizers=log_norms,
    )


def tv_norm(p: Density, q: Density, space: StateSpace) -> float:
    """Total variation distance as the L1 gap of densities against the weights."""
    if p.dim != q.dim or p.dim != space.num_states:
        raise InvalidModelError(
            f"dimension mismatch: densities of size {p.dim} and {q.dim} on {space.num_states} states"
        )
    return float(np.abs(p.values - q.values) @ space.weights)


def run_filter_pair(true_prior: Density, wrong_prior: Density, observations: Sequence,
                    model: FiniteModel) -> PairRun:
    """Run the filter from both priors on the same record and track the TV gap.

    The wrong prior must be strictly positive so its filter is well defined on
    any record the true model can produce. The true prior may have zero atoms.
    """
    space = model.space
    positive = space.weights > 0.0
    if np.any(wrong_prior.values[positive] <= 0.0):
        raise InvalidModelError("beta not bounded below: wrong prior has a zero atom")
    if np.any(true_prior.values[positive] == 0.0):
        warnings.warn(
            "true prior has zero atoms; absolute continuity with respect to the "
            "wrong prior still holds",
            RuntimeWarning,
            stacklevel=2,
        )
    run_correct = run_filter(true_prior, observations, model, prior_label="correct")
    run_wrong = run_filter(wrong_prior, observations, model, prior_label="wrong")
    tv = np.array([
        tv_norm(p, q, space)
        for p, q in zip(run_correct.densities, run_wrong.densities)
    ])
    return PairRun(run_correct=run_correct, run_wrong=run_wrong, tv=tv)


def decay_rate(tv: Sequence[float], window_fraction: float = 0.5) -> DecayEstimate:
    """Least-squares slope of ``log tv[n]`` over the trailing window.

    Entries below the tracking floor (1e-280) are skipped; when the whole
    window sits below the floor the gap has collapsed to numerical zero and
    the estimate reports ``converged`` with slope ``-inf``.
    """
    tv = np.asarray(tv, dtype=float)
    if tv.size == 0:
        raise InvalidModelError("decay_rate needs a nonempty gap sequence")
    if not 0.0 < window_fraction <= 1.0:
        raise InvalidModelError(f"window_fraction must lie in (0, 1], got {window_fraction}")
    last = tv.size - 1
    start = last - int(math.floor(window_fraction * last))
    if last >= 1:
        start = min(start, last - 1)  # a slope needs two points
    window = np.arange(start, last + 1)
    usable = window[tv[window] >= TV_FLOOR]
    if usable.size == 0:
        return DecayEstimate(slope=-math.inf, converged=True)
    if usable.size < 2:
        raise NumericalError("insufficient data: fewer than two usable points in the window")
    slope = float(np.polyfit(usable, np.log(tv[usable]), 1)[0])
    return DecayEstimate(slope=slope, converged=False)


def brute_force_posterior(model: FiniteModel, prior: Density, observations: Sequence) -> Density:
    """Exact posterior of the final state by full path enumeration (test oracle).

    Sums ``prior(x0) w(x0) * prod_k matrix[x_{k-1}, x_k] w(x_k) * lik_k(x_k)``
    over all state paths and marginalizes the final state. Deliberately naive;
    guarded against instances beyond ``d**(N+1) > 1e7``.
    """
    space = model.space
    d = space.num_states
    n = len(observations)
    if d ** (n + 1) > 10**7:
        raise InvalidModelError(f"instance too large: {d}^{n + 1} paths")
    liks = [likelihood_vector(model.observation, y) for y in observations]
    weights = space.weights
    matrix = model.kernel.matrix
    mass = np.zeros(d)
    for path in product(range(d), repeat=n + 1):
        w = prior.values[path[0]] * weights[path[0]]
        for k in range(1, n + 1):
            w *= matrix[path[k - 1], path[k]] * weights[path[k]] * liks[k - 1][path[k]]
        mass[path[-1]] += w
    total = mass.sum()
    if total <= 0.0:
        raise NumericalError("zero-likelihood observation: record impossible under this prior")
    return as_density(mass / total / weights, space)
