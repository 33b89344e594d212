"""Generative model primitives: surrogate emissions, target rate dynamics,
Poisson target emissions and changepoint hazards.

Arrays follow one layout everywhere:

* regimes live on an axis of length 2 (0 = pre-change, 1 = post-change);
* interaction weights have ``I + J`` columns, targets first, then surrogates;
* changepoints are integer ticks in ``[1, T]`` or :data:`NEVER`.

A source is in the post-change regime at tick ``t`` iff ``t > changepoint``.
All functions broadcast over leading axes so the particle filter can call
them on whole clouds.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

NEVER = np.iinfo(np.int64).max // 4
"""Changepoint value meaning "no change within the horizon"."""

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class ModelConstants:
    """Numerical guards that the model equations leave unspecified."""

    rate_floor: float = 1e-6
    hazard_eps: float = 1e-6


DEFAULT_CONSTANTS = ModelConstants()


# --------------------------------------------------------------------------
# domain types

@dataclass
class HierarchicalSeries:
    """Observed targets ``S`` (I x T counts) and surrogates ``K`` (J x T)."""

    targets: np.ndarray
    surrogates: np.ndarray
    target_names: list[str] | None = None
    surrogate_names: list[str] | None = None

    def __post_init__(self):
        self.targets = np.asarray(self.targets)
        if self.targets.ndim != 2:
            raise ValueError("targets must be a 2-d array (I x T)")
        if not np.issubdtype(self.targets.dtype, np.integer):
            as_int = np.rint(self.targets)
            if not np.array_equal(as_int, self.targets):
                raise ValueError("target counts must be integers")
            self.targets = as_int.astype(np.int64)
        else:
            self.targets = self.targets.astype(np.int64)
        if (self.targets < 0).any():
            raise ValueError("target counts must be nonnegative")
        n_targets, horizon = self.targets.shape
        if n_targets < 1:
            raise ValueError("need at least one target (I >= 1)")
        surr = np.asarray(self.surrogates, dtype=float)
        if surr.size == 0:
            surr = surr.reshape(0, horizon)
        if surr.ndim != 2 or surr.shape[1] != horizon:
            raise ValueError(
                f"surrogates must be J x {horizon}, got shape {surr.shape}")
        self.surrogates = surr
        if self.target_names is None:
            self.target_names = [f"S{i + 1}" for i in range(n_targets)]
        if self.surrogate_names is None:
            self.surrogate_names = [f"K{j + 1}" for j in range(surr.shape[0])]
        if len(self.target_names) != n_targets or len(self.surrogate_names) != surr.shape[0]:
            raise ValueError("source names do not match data dimensions")

    @property
    def n_targets(self) -> int:
        return self.targets.shape[0]

    @property
    def n_surrogates(self) -> int:
        return self.surrogates.shape[0]

    @property
    def horizon(self) -> int:
        return self.targets.shape[1]

    @property
    def total(self) -> np.ndarray:
        """Sum of targets ``E(t)``, recomputed on every access."""
        return self.targets.sum(axis=0)

    def observation(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        """``(S(t), K(t))`` for a 1-based tick."""
        return self.targets[:, t - 1], self.surrogates[:, t - 1]

    def source_names(self) -> list[str]:
        return [*self.target_names, *self.surrogate_names, "E"]


@dataclass
class SurrogateParams:
    """Log-normal (location, scale) for J surrogates, per regime.

    ``location`` and ``scale`` have shape ``(J, 2)``.
    """

    location: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        self.location = np.atleast_2d(np.asarray(self.location, dtype=float))
        self.scale = np.atleast_2d(np.asarray(self.scale, dtype=float))
        if self.location.shape != self.scale.shape or self.location.shape[-1] != 2:
            raise ValueError("location and scale must both be (J, 2)")
        if (self.scale <= 0).any():
            raise ValueError("surrogate scale must be strictly positive")


@dataclass
class TargetRateState:
    """Per-target Poisson rates ``(I, 2)`` and raw weights ``(I, 2, I+J)``."""

    rate: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.rate = np.asarray(self.rate, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.rate.ndim != 2 or self.rate.shape[1] != 2:
            raise ValueError("rate must be (I, 2)")
        if self.weights.shape[:2] != self.rate.shape:
            raise ValueError("weights must be (I, 2, I+J)")
        if (self.rate <= 0).any():
            raise ValueError("rates must be strictly positive")

    @property
    def n_inputs(self) -> int:
        return self.weights.shape[-1]

    def copy(self) -> "TargetRateState":
        return TargetRateState(self.rate.copy(), self.weights.copy())


@dataclass
class ChangepointConfig:
    """Hazard parameters of the changepoint priors."""

    rho_k: np.ndarray
    rho_s: np.ndarray
    mu1: np.ndarray
    mu2: np.ndarray
    rho_e: float = 0.05

    def __post_init__(self):
        self.rho_k = np.atleast_1d(np.asarray(self.rho_k, dtype=float))
        self.rho_s = np.atleast_1d(np.asarray(self.rho_s, dtype=float))
        self.mu1 = np.atleast_1d(np.asarray(self.mu1, dtype=float))
        self.mu2 = np.atleast_1d(np.asarray(self.mu2, dtype=float))
        for name in ("rho_k", "rho_s"):
            v = getattr(self, name)
            if ((v < 0) | (v > 1)).any():
                raise ValueError(f"{name} must lie in [0, 1]")
        if not 0 <= self.rho_e <= 1:
            raise ValueError("rho_e must lie in [0, 1]")
        if (self.mu1 < 0).any():
            raise ValueError("impulse amplitudes must be >= 0")
        if (self.mu2 <= 0).any():
            raise ValueError("impulse decays must be > 0")
        if not (self.rho_k.shape == self.mu1.shape == self.mu2.shape):
            raise ValueError("rho_k, mu1 and mu2 need one entry per surrogate")


@dataclass
class ChangepointVector:
    """Changepoints for surrogates, targets and the top layer.

    Entries are ticks in ``[1, T]`` or :data:`NEVER`.
    """

    surrogates: np.ndarray
    targets: np.ndarray
    top: int = NEVER
    names: list[str] | None = field(default=None, compare=False)

    def __post_init__(self):
        self.surrogates = np.atleast_1d(np.asarray(self.surrogates, dtype=np.int64))
        self.targets = np.atleast_1d(np.asarray(self.targets, dtype=np.int64))
        self.top = int(self.top)
        for v in (*self.surrogates, *self.targets, self.top):
            if v != NEVER and v < 1:
                raise ValueError(f"changepoint {v} is not a tick >= 1")

    def as_array(self) -> np.ndarray:
        """Flatten in source order: targets, surrogates, top."""
        return np.concatenate([self.targets, self.surrogates, [self.top]])

    @classmethod
    def from_array(cls, values, n_targets: int) -> "ChangepointVector":
        values = np.asarray(values, dtype=np.int64)
        return cls(surrogates=values[n_targets:-1], targets=values[:n_targets], top=values[-1])

    def to_json(self) -> dict:
        conv = lambda v: None if v == NEVER else int(v)  # noqa: E731
        return {
            "targets": [conv(v) for v in self.targets],
            "surrogates": [conv(v) for v in self.surrogates],
            "top": conv(self.top),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ChangepointVector":
        conv = lambda v: NEVER if v is None else int(v)  # noqa: E731
        return cls(
            surrogates=[conv(v) for v in doc.get("surrogates", [])],
            targets=[conv(v) for v in doc["targets"]],
            top=conv(doc.get("top")),
        )


# --------------------------------------------------------------------------
# emission densities

def regime(t, changepoint):
    """1 where tick ``t`` is strictly after the changepoint, else 0."""
    return (np.asarray(t) > np.asarray(changepoint)).astype(np.int64)


def surrogate_loglik(value, location, scale):
    """Log-normal log density; ``-inf`` for nonpositive values.

    Broadcasts over all arguments.
    """
    value = np.asarray(value, dtype=float)
    positive = value > 0
    safe = np.where(positive, value, 1.0)
    log_v = np.log(safe)
    z = (log_v - location) / scale
    out = -log_v - np.log(scale) - LOG_SQRT_2PI - 0.5 * z * z
    return np.where(positive, out, -np.inf)


def surrogate_loglik_regime(value, params: SurrogateParams, which: int):
    """Scalar-friendly wrapper picking one regime of :class:`SurrogateParams`."""
    return surrogate_loglik(value, params.location[..., which], params.scale[..., which])


def target_loglik(count, rate):
    """Poisson log pmf, broadcast over arguments."""
    count = np.asarray(count, dtype=float)
    rate = np.asarray(rate, dtype=float)
    return count * np.log(rate) - rate - gammaln(count + 1.0)


def target_loglik_regime(count, state: TargetRateState, which: int):
    return target_loglik(count, state.rate[..., which])


# --------------------------------------------------------------------------
# dynamics

def normalized_weights(weights, mask=None):
    """``A / ||A||_1`` along the last axis, with ``0/0 := 0``.

    ``mask`` (0/1 over the last axis) removes columns before normalizing.
    """
    weights = np.asarray(weights, dtype=float)
    if mask is not None:
        weights = weights * mask
    norm = np.abs(weights).sum(axis=-1, keepdims=True)
    return np.divide(weights, norm, out=np.zeros_like(weights), where=norm > 0)


def advance_rates(rate, weights, prev_obs, sigma_s, chol_a=None, rng=None,
                  rate_floor=DEFAULT_CONSTANTS.rate_floor, mask=None):
    """One step of the nested autoregressive rate process.

    Parameters
    ----------
    rate : array (..., 2)
        Rates at ``t - 1`` for both regimes.
    weights : array (..., 2, D)
        Raw weight vectors at ``t - 1``.
    prev_obs : array broadcastable to (..., 2, D)
        ``[S(t-1); K(t-1)]``.
    sigma_s : array broadcastable to ``rate``
        Standard deviation of the additive rate noise.
    chol_a : array broadcastable to (..., D, D), optional
        Lower Cholesky factor of the weight random-walk covariance. ``None``
        means a frozen weight vector.
    mask : array (D,), optional
        Columns excluded from the interaction term.

    Returns
    -------
    (rate, weights) at ``t``.
    """
    prev_obs = np.asarray(prev_obs, dtype=float)
    if prev_obs.shape[-1] != weights.shape[-1]:
        raise ValueError(
            f"expected {weights.shape[-1]} lagged observations, got {prev_obs.shape[-1]}")
    if chol_a is not None:
        z = rng.standard_normal(weights.shape)
        weights = weights + np.einsum("...ij,...j->...i", chol_a, z)
    drift = (normalized_weights(weights, mask) * prev_obs).sum(axis=-1)
    new_rate = rate + drift
    sigma_s = np.asarray(sigma_s, dtype=float)
    if np.any(sigma_s > 0):
        new_rate = new_rate + sigma_s * rng.standard_normal(new_rate.shape)
    return np.maximum(new_rate, rate_floor), weights


def target_rate_step(prev: TargetRateState, prev_obs, sigma_s: float, sigma_a=None,
                     rng: np.random.Generator | None = None,
                     constants: ModelConstants = DEFAULT_CONSTANTS,
                     mask=None) -> TargetRateState:
    """Advance a :class:`TargetRateState` by one tick.

    ``sigma_a`` is the weight-noise covariance (D x D) or ``None``/zeros.
    """
    prev_obs = np.asarray(prev_obs, dtype=float)
    if prev_obs.ndim != 1 or prev_obs.shape[0] != prev.n_inputs:
        raise ValueError(
            f"prev_obs must have length {prev.n_inputs} (targets then surrogates)")
    chol = None
    if sigma_a is not None and np.any(np.asarray(sigma_a) != 0):
        chol = np.linalg.cholesky(np.asarray(sigma_a, dtype=float))
    if rng is None and (chol is not None or sigma_s > 0):
        raise ValueError("an RNG stream is required when noise is enabled")
    rate, weights = advance_rates(prev.rate, prev.weights, prev_obs, sigma_s, chol, rng,
                                  constants.rate_floor, mask)
    return TargetRateState(rate, weights)


def impulse_hazard(t, base, surrogate_cps, mu1, mu2,
                   hazard_eps=DEFAULT_CONSTANTS.hazard_eps):
    """Dynamic changepoint hazard boosted by decaying surrogate impulses.

    ``surrogate_cps``, ``mu1`` and ``mu2`` share a trailing axis of length
    J; ``base`` broadcasts against the leading axes. Returns the hazard
    clamped to ``[0, 1 - hazard_eps]``.
    """
    boost = impulse_boost(t, surrogate_cps, mu1, mu2)
    return np.clip(np.asarray(base, dtype=float) + boost, 0.0, 1.0 - hazard_eps)


def impulse_boost(t, surrogate_cps, mu1, mu2):
    """Unclamped sum of surrogate impulses at tick ``t`` (last axis summed)."""
    surrogate_cps = np.asarray(surrogate_cps)
    fired = surrogate_cps < t
    lag = np.where(fired, t - np.where(fired, surrogate_cps, 0), 0).astype(float)
    return np.where(fired, mu1 * np.exp(-mu2 * lag), 0.0).sum(axis=-1)


def target_hazard(t: int, base: float, surrogate_cps: ChangepointVector | np.ndarray,
                  mu1, mu2, constants: ModelConstants = DEFAULT_CONSTANTS) -> float:
    if t < 1:
        raise ValueError("hazard is defined for ticks t >= 1")
    if isinstance(surrogate_cps, ChangepointVector):
        surrogate_cps = surrogate_cps.surrogates
    return float(impulse_hazard(t, base, np.asarray(surrogate_cps), np.asarray(mu1),
                                np.asarray(mu2), constants.hazard_eps))


# --------------------------------------------------------------------------
# joint likelihood

def joint_loglik(series: HierarchicalSeries, cps: ChangepointVector,
                 surrogate_params: SurrogateParams | None, rate_trajectory,
                 top_weight: float = 0.0) -> float:
    """Log-likelihood of the observed data given changepoints and rates.

    ``rate_trajectory`` has shape ``(T, I, 2)`` with the rates in effect at
    each tick. ``top_weight`` scales the sum-of-targets term, a Poisson on
    ``E(t)`` with rate ``sum_i rate_i`` in the top layer's regime; 0 drops it.
    """
    rates = np.asarray(rate_trajectory, dtype=float)
    n_targets, horizon = series.targets.shape
    if rates.shape != (horizon, n_targets, 2):
        raise ValueError(f"rate trajectory must be (T, I, 2) = {(horizon, n_targets, 2)}")
    if cps.targets.shape != (n_targets,) or cps.surrogates.shape != (series.n_surrogates,):
        raise ValueError("changepoint vector does not match series dimensions")
    ticks = np.arange(1, horizon + 1)
    total = 0.0
    if series.n_surrogates:
        if surrogate_params is None or surrogate_params.location.shape[0] != series.n_surrogates:
            raise ValueError("need surrogate parameters for every surrogate")
        r = regime(ticks[None, :], cps.surrogates[:, None])             # (J, T)
        loc = np.take_along_axis(surrogate_params.location, r, axis=1)
        scale = np.take_along_axis(surrogate_params.scale, r, axis=1)
        total += surrogate_loglik(series.surrogates, loc, scale).sum()
    r = regime(ticks[:, None], cps.targets[None, :])                     # (T, I)
    active = np.take_along_axis(rates, r[..., None], axis=2)[..., 0]    # (T, I)
    total += target_loglik(series.targets.T, active).sum()
    if top_weight:
        r_e = regime(ticks, cps.top)
        top_rate = rates.sum(axis=1)[np.arange(horizon), r_e]
        total += top_weight * target_loglik(series.total, top_rate).sum()
    return float(total)
