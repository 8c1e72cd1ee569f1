"""Finite-state hidden Markov model data types and stability coefficients.

Conventions used throughout the package:

* The state space is a finite set of atoms ``0..d-1`` carrying strictly
  positive reference weights ``w[i]``. Distributions are stored as densities
  against these weights, so the probability of atom ``i`` is
  ``density[i] * w[i]``. With the default unit weights a density is just a
  probability vector.
* The transition law is a matrix of one-step densities: ``matrix[i, j]`` is
  the density of moving from ``i`` to ``j``, and each row integrates to one
  against the weights.
* Observations are either a finite alphabet with per-state emission densities
  (against positive symbol weights) or a Gaussian channel with state-dependent
  means and a common scale.

Essential infima/suprema over the state space reduce to minima/maxima over
atoms with positive weight; zero-weight atoms cannot occur by construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from .errors import InvalidModelError, NumericalError

ROW_SUM_TOL = 1e-9
DENSITY_TOL = 1e-10


def _frozen(values, dtype=float) -> np.ndarray:
    out = np.array(values, dtype=dtype)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class StateSpace:
    """Finite atomic state space with reference-measure weights."""

    num_states: int
    weights: np.ndarray

    def __post_init__(self):
        if self.num_states < 1:
            raise InvalidModelError(f"need at least one state, got {self.num_states}")
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (self.num_states,):
            raise InvalidModelError(
                f"dimension mismatch: {self.num_states} states but weights shape {w.shape}"
            )
        if not np.all(np.isfinite(w)) or np.any(w <= 0.0):
            raise InvalidModelError("state weights must be finite and strictly positive")
        object.__setattr__(self, "weights", _frozen(w))


def unit_space(num_states: int) -> StateSpace:
    """State space with all-ones weights (counting reference measure)."""
    return StateSpace(num_states, np.ones(num_states))


@dataclass(frozen=True)
class Density:
    """Nonnegative density values against the state weights, total mass one."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1:
            raise InvalidModelError(f"density must be a vector, got shape {v.shape}")
        if not np.all(np.isfinite(v)) or np.any(v < 0.0):
            raise InvalidModelError("density values must be finite and nonnegative")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def dim(self) -> int:
        return self.values.shape[0]


def as_density(values, space: StateSpace, tol: float = DENSITY_TOL) -> Density:
    """Validate mass against the weights (within `tol`) and renormalize exactly."""
    v = np.asarray(values, dtype=float)
    if v.shape != (space.num_states,):
        raise InvalidModelError(
            f"dimension mismatch: density shape {v.shape} vs {space.num_states} states"
        )
    if not np.all(np.isfinite(v)) or np.any(v < 0.0):
        raise InvalidModelError("density values must be finite and nonnegative")
    mass = float(v @ space.weights)
    if abs(mass - 1.0) > tol:
        raise InvalidModelError(f"density mass {mass!r} deviates from 1 beyond {tol}")
    return Density(v / mass)


def uniform_density(space: StateSpace) -> Density:
    total = float(space.weights.sum())
    return Density(np.full(space.num_states, 1.0 / total))


def point_mass(state: int, space: StateSpace) -> Density:
    v = np.zeros(space.num_states)
    v[state] = 1.0 / space.weights[state]
    return Density(v)


@dataclass(frozen=True)
class TransitionKernel:
    """One-step transition densities; ``matrix[i, j]`` is the density i -> j."""

    matrix: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.matrix, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise InvalidModelError(f"transition matrix must be square, got shape {a.shape}")
        if not np.all(np.isfinite(a)) or np.any(a < 0.0):
            raise InvalidModelError("invalid kernel: entries must be finite and nonnegative")
        object.__setattr__(self, "matrix", _frozen(a))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def as_kernel(matrix, space: StateSpace, tol: float = ROW_SUM_TOL) -> TransitionKernel:
    """Validate row sums against the weights (within `tol`) and renormalize rows."""
    a = np.asarray(matrix, dtype=float)
    if a.shape != (space.num_states, space.num_states):
        raise InvalidModelError(
            f"dimension mismatch: transition shape {a.shape} vs {space.num_states} states"
        )
    kernel = TransitionKernel(a)
    row_sums = kernel.matrix @ space.weights
    if np.any(np.abs(row_sums - 1.0) > tol):
        worst = int(np.argmax(np.abs(row_sums - 1.0)))
        raise InvalidModelError(
            f"invalid kernel: row {worst} integrates to {row_sums[worst]!r}, not 1"
        )
    return TransitionKernel(kernel.matrix / row_sums[:, None])


@dataclass(frozen=True)
class ObservationModel:
    """Observation channel: finite alphabet emissions or a Gaussian read-out.

    For ``kind == "finite"``, ``emission[i, k]`` is the density of symbol ``k``
    from state ``i`` against the positive ``symbol_weights``; each row
    integrates to one. For ``kind == "gaussian"``, symbol values are reals with
    density ``N(means[i], sigma**2)``.
    """

    kind: str
    emission: Optional[np.ndarray] = None
    symbol_weights: Optional[np.ndarray] = None
    means: Optional[np.ndarray] = None
    sigma: Optional[float] = None

    @property
    def num_symbols(self) -> int:
        if self.kind != "finite":
            raise InvalidModelError("num_symbols is defined for finite alphabets only")
        return self.emission.shape[1]


def finite_observation(emission, symbol_weights=None, tol: float = ROW_SUM_TOL) -> ObservationModel:
    a = np.asarray(emission, dtype=float)
    if a.ndim != 2:
        raise InvalidModelError(f"emission matrix must be 2-d, got shape {a.shape}")
    if not np.all(np.isfinite(a)) or np.any(a < 0.0):
        raise InvalidModelError("emission entries must be finite and nonnegative")
    p = a.shape[1]
    w = np.ones(p) if symbol_weights is None else np.asarray(symbol_weights, dtype=float)
    if w.shape != (p,):
        raise InvalidModelError(f"dimension mismatch: {p} symbols but symbol weights shape {w.shape}")
    if not np.all(np.isfinite(w)) or np.any(w <= 0.0):
        raise InvalidModelError("symbol weights must be finite and strictly positive")
    row_sums = a @ w
    if np.any(np.abs(row_sums - 1.0) > tol):
        worst = int(np.argmax(np.abs(row_sums - 1.0)))
        raise InvalidModelError(
            f"emission row {worst} integrates to {row_sums[worst]!r}, not 1"
        )
    return ObservationModel(kind="finite", emission=_frozen(a / row_sums[:, None]),
                            symbol_weights=_frozen(w))


def gaussian_observation(means, sigma: float) -> ObservationModel:
    mu = np.asarray(means, dtype=float)
    if mu.ndim != 1 or not np.all(np.isfinite(mu)):
        raise InvalidModelError("gaussian means must be a finite vector")
    if not np.isfinite(sigma) or sigma <= 0.0:
        raise InvalidModelError(f"gaussian sigma must be positive, got {sigma!r}")
    return ObservationModel(kind="gaussian", means=_frozen(mu), sigma=float(sigma))


@dataclass(frozen=True)
class FiniteModel:
    """Validated model bundle: space, dynamics, observation channel, priors.

    ``true_prior`` is the density the data generator uses for the initial
    state; ``wrong_prior`` is the (strictly positive) density a misspecified
    filter starts from.
    """

    space: StateSpace
    kernel: TransitionKernel
    observation: ObservationModel
    true_prior: Density
    wrong_prior: Density


@dataclass(frozen=True)
class Coefficients:
    """Stability coefficients of a transition kernel under an invariant density.

    ``min_density``/``max_density`` are the global extrema of the one-step
    density. ``mixing_coefficient`` averages the per-state row minima under
    the invariant density; its positivity is the relaxed condition under
    which the misspecified filter forgets its prior at exponential rate
    ``tv_decay_rate = mixing_coefficient / max_density``. When
    ``0 < mixing_coefficient < max_density`` the kernel is geometrically
    ergodic with explicit constants ``geo_prefactor * geo_ratio**n``.
    """

    min_density: float
    max_density: float
    mixing_coefficient: float
    tv_decay_rate: float
    geo_prefactor: Optional[float]
    geo_ratio: Optional[float]
    degenerate: bool

    def __post_init__(self):
        tol = 1e-12
        ok = (
            -tol <= self.min_density
            and self.min_density <= self.mixing_coefficient + tol
            and self.mixing_coefficient <= self.max_density + tol
        )
        if not ok:
            raise NumericalError(
                "coefficient ordering violated: "
                f"{self.min_density!r}, {self.mixing_coefficient!r}, {self.max_density!r}"
            )

    @property
    def applicable(self) -> bool:
        """True when the geometric bounds carry information (positive, nondegenerate)."""
        return self.mixing_coefficient > 0.0 and not self.degenerate


def row_minima(kernel: TransitionKernel, space: StateSpace) -> np.ndarray:
    """Per-state essential infimum of the outgoing transition density."""
    mask = space.weights > 0.0
    return kernel.matrix[:, mask].min(axis=1)


def mixing_coefficients(model: FiniteModel, invariant: Density) -> Coefficients:
    """Compute the density extrema and the invariant-averaged row minimum.

    The averaged coefficient is ``sum_i row_min[i] * m[i] * w[i]`` where ``m``
    is the invariant density. Geometric ergodicity constants are
    ``prefactor = max**2 / (avg * (max - avg))`` and ``ratio = 1 - avg / max``,
    defined when ``0 < avg < max``. ``avg == max`` forces a constant-in-target
    kernel (one-step convergence); that case is flagged degenerate with the
    ``ratio = 0`` convention.
    """
    space, kernel = model.space, model.kernel
    mask = space.weights > 0.0
    sub = kernel.matrix[np.ix_(mask, mask)]
    lo = float(sub.min())
    hi = float(sub.max())
    mins = row_minima(kernel, space)
    avg = float(np.sum(mins * invariant.values * space.weights))
    rate = avg / hi if hi > 0.0 else 0.0
    degenerate = avg > 0.0 and abs(hi - avg) <= 1e-14 * hi
    if avg > 0.0 and not degenerate:
        prefactor = hi * hi / (avg * (hi - avg))
        ratio = 1.0 - avg / hi
    elif degenerate:
        prefactor = None
        ratio = 0.0
    else:
        prefactor = None
        ratio = None
    return Coefficients(
        min_density=lo,
        max_density=hi,
        mixing_coefficient=avg,
        tv_decay_rate=rate,
        geo_prefactor=prefactor,
        geo_ratio=ratio,
        degenerate=degenerate,
    )


def invariant_density(
    kernel: TransitionKernel,
    space: StateSpace,
    *,
    tol: float = 1e-13,
    max_iter: int = 10**6,
) -> Density:
    """Invariant density of the kernel by power iteration on the adjoint action.

    Iterates ``m[y] <- sum_x matrix[x, y] * m[x] * w[x]`` from the uniform
    density until successive iterates differ by less than `tol` in max norm,
    then polishes a few more steps toward machine precision. Non-convergence
    within `max_iter` indicates a periodic or reducible chain; a period-two
    oscillation is resolved by averaging two successive iterates before
    giving up. The result always satisfies the fixed-point residual to 1e-10.
    """
    d = space.num_states
    adjoint = (kernel.matrix * space.weights[:, None]).T

    def normalize(v: np.ndarray) -> np.ndarray:
        return v / float(v @ space.weights)

    def residual(v: np.ndarray) -> float:
        return float(np.max(np.abs(adjoint @ v - v)))

    m = np.full(d, 1.0 / float(space.weights.sum()))
    prev = m
    converged = False
    delta = np.inf
    stagnant_blocks = 0
    block_start_delta = np.inf
    for it in range(max_iter):
        m_next = normalize(adjoint @ m)
        delta = float(np.max(np.abs(m_next - m)))
        prev = m
        m = m_next
        if delta < tol:
            converged = True
            break
        # stagnation probe: a delta that barely shrinks across whole blocks
        # means oscillation, not slow mixing
        if (it + 1) % 1000 == 0:
            if delta > 0.99 * block_start_delta:
                stagnant_blocks += 1
            else:
                stagnant_blocks = 0
            if stagnant_blocks >= 3:
                break
            block_start_delta = delta

    if not converged:
        averaged = normalize(0.5 * (m + prev))
        if residual(averaged) <= 1e-10:
            m = averaged
        else:
            raise NumericalError("no unique invariant density found")
    else:
        # polish: keep iterating while the step keeps improving
        for _ in range(500):
            if delta <= 2.3e-16:
                break
            m_next = normalize(adjoint @ m)
            new_delta = float(np.max(np.abs(m_next - m)))
            if new_delta >= delta:
                break
            m = m_next
            delta = new_delta

    if residual(m) > 1e-10:
        raise NumericalError("no unique invariant density found")
    return Density(normalize(m))


def primitivity_check(kernel: TransitionKernel, r_max: Optional[int] = None) -> Optional[int]:
    """Smallest power whose multi-step density is strictly positive everywhere.

    Positivity of the r-step density depends only on the zero pattern of the
    matrix, so the search runs on the boolean adjacency. Returns None when no
    power up to `r_max` (default ``2 d**2``) mixes every pair of states.
    """
    d = kernel.dim
    if r_max is None:
        r_max = 2 * d * d
    if r_max < 1:
        raise InvalidModelError(f"r_max must be at least 1, got {r_max}")
    base = (kernel.matrix > 0.0).astype(np.int64)
    reach = base.copy()
    for r in range(1, r_max + 1):
        if np.all(reach > 0):
            return r
        reach = np.minimum(reach @ base, 1)
    return None


def build_model(config: Mapping) -> FiniteModel:
    """Build and validate a model from a parsed description.

    Expected keys: ``states`` (int), optional ``psi`` (weights), ``transition``
    (matrix), ``observation`` (with ``type`` "finite" or "gaussian"), ``nu``
    (data-generating prior) and ``beta`` (filter prior, strictly positive).
    """
    try:
        d = int(config["states"])
    except KeyError:
        raise InvalidModelError("missing key: states") from None
    weights = config.get("psi")
    space = unit_space(d) if weights is None else StateSpace(d, weights)

    if "transition" not in config:
        raise InvalidModelError("missing key: transition")
    kernel = as_kernel(config["transition"], space)

    if "observation" not in config:
        raise InvalidModelError("missing key: observation")
    obs_cfg = config["observation"]
    obs_kind = obs_cfg.get("type")
    if obs_kind == "finite":
        if "gamma" not in obs_cfg:
            raise InvalidModelError("missing key: observation.gamma")
        obs = finite_observation(obs_cfg["gamma"], obs_cfg.get("theta"))
        if obs.emission.shape[0] != d:
            raise InvalidModelError(
                f"dimension mismatch: emission has {obs.emission.shape[0]} rows for {d} states"
            )
    elif obs_kind == "gaussian":
        if "means" not in obs_cfg:
            raise InvalidModelError("missing key: observation.means")
        if "sigma" not in obs_cfg:
            raise InvalidModelError("missing key: observation.sigma")
        obs = gaussian_observation(obs_cfg["means"], obs_cfg["sigma"])
        if obs.means.shape != (d,):
            raise InvalidModelError(
                f"dimension mismatch: {obs.means.shape[0]} means for {d} states"
            )
    else:
        raise InvalidModelError(f"observation.type must be 'finite' or 'gaussian', got {obs_kind!r}")

    for key in ("nu", "beta"):
        if key not in config:
            raise InvalidModelError(f"missing key: {key}")
    true_prior = as_density(config["nu"], space, tol=ROW_SUM_TOL)
    wrong_prior = as_density(config["beta"], space, tol=ROW_SUM_TOL)
    if np.any(wrong_prior.values[space.weights > 0.0] <= 0.0):
        raise InvalidModelError("beta not bounded below: filter prior has a zero atom")

    return FiniteModel(
        space=space,
        kernel=kernel,
        observation=obs,
        true_prior=true_prior,
        wrong_prior=wrong_prior,
    )
