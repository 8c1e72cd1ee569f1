"""Backward conditional density of the initial state, its oscillation, and
the change-of-measure quantities connecting misspecified filters.

For a filter started from a strictly positive prior, the conditional density
of ``X_0`` given the current state and all observations so far satisfies a
forward-in-time recursion driven by the same filter densities:

    rho_1[u, x]  = matrix[u, x] * prior[u] / sum_v matrix[v, x] * prior[v] * w[v]
    rho_n[u, x]  = sum_z matrix[z, x] * rho_{n-1}[u, z] * pi_{n-1}[z] * w[z]
                   / sum_z matrix[z, x] * pi_{n-1}[z] * w[z]

Each column (fixed conditioning state ``x``) is a density in ``u``. The
per-``u`` oscillation across columns measures how much the current state
still reveals about the initial state; its decay to zero is what makes the
filter forget a misspecified prior. The oscillation admits an explicit
per-run envelope (`oscillation_bound`) whose exponent accumulates the
filter-averaged row minima of the transition density.

The expected prior ratio under the backward density is the likelihood ratio
between the observation laws of the two priors; `change_of_measure_residual`
verifies the algebraic identities tying that ratio to the filter pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidModelError, NumericalError
from .filtering import FilterRun, filter_step_with_likelihood
from .model import (
    Coefficients,
    Density,
    FiniteModel,
    StateSpace,
    TransitionKernel,
    row_minima,
)
from .simulate import likelihood_vector


@dataclass(frozen=True)
class BackwardDensity:
    """Column-stochastic table ``matrix[u, x]``: density of the initial state
    at ``u`` conditioned on current state ``x``."""

    matrix: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.matrix, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise InvalidModelError(f"backward density must be square, got shape {a.shape}")
        if not np.all(np.isfinite(a)) or np.any(a < 0.0):
            raise InvalidModelError("backward density entries must be finite and nonnegative")
        a = a.copy()
        a.flags.writeable = False
        object.__setattr__(self, "matrix", a)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class OscillationRecord:
    """Per-``u`` column extrema and spread of a backward density, with the
    accumulated contraction exponent and (when coefficients permit) the
    envelope value."""

    oscillation: np.ndarray
    upper: np.ndarray
    lower: np.ndarray
    exponent_sum: float
    bound: Optional[np.ndarray]
    bound_vacuous: bool


def backward_init(theta0: Density, kernel: TransitionKernel, space: StateSpace) -> BackwardDensity:
    """Backward density after one step from a strictly positive initial prior."""
    _require_positive(theta0, space, "initial backward prior")
    numerator = kernel.matrix * theta0.values[:, None]
    denominator = (theta0.values * space.weights) @ kernel.matrix
    if np.any(denominator <= 0.0):
        raise NumericalError("state unreachable in one step: conditioning event has probability 0")
    return BackwardDensity(_renormalize_columns(numerator / denominator[None, :], space))


def backward_step(
    rho_prev: BackwardDensity,
    pi_prev: Density,
    kernel: TransitionKernel,
    space: StateSpace,
) -> BackwardDensity:
    """Advance the backward density one step using the filter density of the
    previous time (which must come from the same prior as `rho_prev`)."""
    weighted = pi_prev.values * space.weights
    numerator = (rho_prev.matrix * weighted[None, :]) @ kernel.matrix
    denominator = weighted @ kernel.matrix
    if np.any(denominator <= 0.0):
        raise NumericalError("state has zero predicted mass")
    return BackwardDensity(_renormalize_columns(numerator / denominator[None, :], space))


def oscillation(rho: BackwardDensity) -> OscillationRecord:
    """Per-``u`` spread of the backward density across conditioning states."""
    upper = rho.matrix.max(axis=1)
    lower = rho.matrix.min(axis=1)
    return OscillationRecord(
        oscillation=upper - lower,
        upper=upper,
        lower=lower,
        exponent_sum=0.0,
        bound=None,
        bound_vacuous=False,
    )


def oscillation_bound(
    pi_history: Sequence[Density],
    model: FiniteModel,
    coeffs: Coefficients,
    theta0: Density,
) -> tuple[np.ndarray, bool]:
    """Envelope for the backward oscillation along a run.

    ``pi_history`` is the filter trajectory ``pi_0..pi_N`` started from
    ``theta0``. Returns an ``(N, d)`` array whose row ``n-1`` bounds the
    oscillation after ``n`` steps:

        bound_n(u) = max**2 / (theta_min * avg) * theta0[u]
                     * exp(-(1/max) * sum_{k=2..n} sum_z pi_{k-1}[z] row_min[z] w[z])

    A zero averaged row minimum makes the prefactor infinite; the bound is
    then flagged vacuous and filled with ``inf`` so callers can still report
    oscillation trajectories.
    """
    space = model.space
    _require_positive(theta0, space, "initial backward prior")
    steps = len(pi_history) - 1
    if steps < 1:
        return np.zeros((0, space.num_states)), coeffs.mixing_coefficient <= 0.0
    if coeffs.mixing_coefficient <= 0.0:
        return np.full((steps, space.num_states), np.inf), True
    theta_min = float(theta0.values[space.weights > 0.0].min())
    prefactor = coeffs.max_density**2 / (theta_min * coeffs.mixing_coefficient)
    mins = row_minima(model.kernel, space)
    increments = np.array([
        float(pi.values @ (mins * space.weights)) for pi in pi_history[1:steps]
    ])
    exponents = np.concatenate(([0.0], np.cumsum(increments)))
    bounds = prefactor * theta0.values[None, :] * np.exp(
        -exponents / coeffs.max_density
    )[:, None]
    return bounds, False


def likelihood_ratio(
    rho: BackwardDensity,
    pi: Density,
    prior_ratio: np.ndarray,
    space: StateSpace,
) -> float:
    """Expected prior ratio of the initial state given the observations.

    ``prior_ratio`` is the entrywise ratio of the data-generating prior to
    the filter prior that produced `rho` and `pi`. The value equals the
    likelihood ratio of the observation record between the two priors.
    """
    ratio = np.asarray(prior_ratio, dtype=float)
    per_state = (ratio * space.weights) @ rho.matrix
    value = float(per_state @ (pi.values * space.weights))
    if not np.isfinite(value) or value < 0.0:
        raise NumericalError(f"likelihood ratio must be finite and nonnegative, got {value!r}")
    return value


def change_of_measure_residual(
    run_wrong: FilterRun,
    run_reference: FilterRun,
    rho: BackwardDensity,
    prior_ratio: np.ndarray,
    space: StateSpace,
) -> float:
    """Residual of the exact identities linking the two filters through `rho`.

    ``run_wrong`` is the filter from the prior that generated the record and
    initialized `rho`; ``run_reference`` is the filter from the other prior on
    the *same* record. With ``L`` the likelihood ratio and
    ``h(x) = sum_u ratio[u] rho[u, x] w[u]``, both of

        L * reference(x)              = h(x) * wrong(x)
        L * (reference(x) - wrong(x)) = wrong(x) * (h(x) - L)

    hold exactly; the returned value is the largest absolute violation (the
    first identity is checked on probability scale, times ``w[x]``).
    """
    if run_wrong.observations.shape != run_reference.observations.shape or np.any(
        run_wrong.observations != run_reference.observations
    ):
        raise InvalidModelError("observation-sequence mismatch between the paired runs")
    pi_wrong = run_wrong.densities[-1]
    pi_reference = run_reference.densities[-1]
    d = space.num_states
    if pi_wrong.dim != d or pi_reference.dim != d or rho.dim != d:
        raise InvalidModelError("dimension mismatch between runs, backward density and space")
    ratio = np.asarray(prior_ratio, dtype=float)
    if ratio.shape != (d,):
        raise InvalidModelError(
            f"dimension mismatch: prior ratio shape {ratio.shape} vs {d} states"
        )
    w = space.weights
    per_state = (ratio * w) @ rho.matrix
    value = float(per_state @ (pi_wrong.values * w))
    res_centered = np.abs(
        value * (pi_reference.values - pi_wrong.values)
        - pi_wrong.values * (per_state - value)
    )
    res_direct = np.abs(value * pi_reference.values - per_state * pi_wrong.values) * w
    return float(max(res_centered.max(), res_direct.max()))


def brute_force_backward(
    model: FiniteModel,
    theta0: Density,
    observations: Sequence,
    conditioning_state: int,
) -> Density:
    """Exact backward density column by path enumeration (test oracle).

    Returns the density in ``u`` of ``P(X_0 = u | X_n = conditioning_state,
    Y_1..Y_n)`` under the prior `theta0`. Guarded against instances beyond
    ``d**(N+1) > 1e7`` paths.
    """
    space = model.space
    d = space.num_states
    n = len(observations)
    if d ** (n + 1) > 10**7:
        raise InvalidModelError(f"instance too large: {d}^{n + 1} paths")
    if not 0 <= conditioning_state < d:
        raise InvalidModelError(f"conditioning state {conditioning_state} out of range")
    liks = [likelihood_vector(model.observation, y) for y in observations]
    weights = space.weights
    matrix = model.kernel.matrix
    mass = np.zeros(d)
    for path in product(range(d), repeat=n + 1):
        if path[-1] != conditioning_state:
            continue
        w = theta0.values[path[0]] * weights[path[0]]
        for k in range(1, n + 1):
            w *= matrix[path[k - 1], path[k]] * weights[path[k]] * liks[k - 1][path[k]]
        mass[path[0]] += w
    total = mass.sum()
    if total <= 0.0:
        raise NumericalError("conditioning event has probability 0")
    return Density(mass / total / weights)


class BackwardContext:
    """Co-evolves the filter density and the backward density from one prior.

    The backward recursion consumes the filter densities produced by the very
    prior that initialized it; this context keeps the two in lockstep so an
    inconsistent pairing cannot be constructed. Feed observations one at a
    time with `step`; after ``n`` steps, `pi` is the filter posterior, `rho`
    the backward density, and `record` carries the oscillation together with
    the envelope (when coefficients with a positive averaged row minimum were
    supplied).
    """

    def __init__(self, model: FiniteModel, theta0: Density,
                 coeffs: Optional[Coefficients] = None):
        _require_positive(theta0, model.space, "initial backward prior")
        self.model = model
        self.theta0 = theta0
        self.coeffs = coeffs
        self.pi = theta0
        self.rho: Optional[BackwardDensity] = None
        self.steps = 0
        self.exponent_sum = 0.0
        self._row_min_weighted = row_minima(model.kernel, model.space) * model.space.weights
        if coeffs is not None and coeffs.mixing_coefficient > 0.0:
            theta_min = float(theta0.values[model.space.weights > 0.0].min())
            self._prefactor = coeffs.max_density**2 / (theta_min * coeffs.mixing_coefficient)
        else:
            self._prefactor = None

    def step(self, y) -> None:
        model, space = self.model, self.model.space
        if self.steps == 0:
            self.rho = backward_init(self.theta0, model.kernel, space)
        else:
            self.exponent_sum += float(self.pi.values @ self._row_min_weighted)
            self.rho = backward_step(self.rho, self.pi, model.kernel, space)
        lik = likelihood_vector(model.observation, y)
        self.pi, _ = filter_step_with_likelihood(self.pi, lik, model.kernel, space)
        self.steps += 1

    @property
    def record(self) -> OscillationRecord:
        if self.rho is None:
            raise NumericalError("no observations consumed yet")
        base = oscillation(self.rho)
        if self.coeffs is None:
            return base
        if self._prefactor is None:
            bound = None
            vacuous = True
        else:
            decay = math.exp(-self.exponent_sum / self.coeffs.max_density)
            bound = self._prefactor * self.theta0.values * decay
            vacuous = False
        return OscillationRecord(
            oscillation=base.oscillation,
            upper=base.upper,
            lower=base.lower,
            exponent_sum=self.exponent_sum,
            bound=bound,
            bound_vacuous=vacuous,
        )

    def likelihood_ratio(self, prior_ratio: np.ndarray) -> float:
        """Likelihood ratio after the observations consumed so far (1 before any)."""
        space = self.model.space
        if self.rho is None:
            ratio = np.asarray(prior_ratio, dtype=float)
            return float((ratio * self.theta0.values) @ space.weights)
        return likelihood_ratio(self.rho, self.pi, prior_ratio, space)


def _renormalize_columns(matrix: np.ndarray, space: StateSpace) -> np.ndarray:
    column_mass = space.weights @ matrix
    return matrix / column_mass[None, :]


def _require_positive(density: Density, space: StateSpace, what: str) -> None:
    if np.any(density.values[space.weights > 0.0] <= 0.0):
        raise InvalidModelError(f"{what} must be strictly positive on every atom")
