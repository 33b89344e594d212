"""Synthetic corpora with known changepoints."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import (
    DEFAULT_CONSTANTS,
    NEVER,
    ChangepointConfig,
    ChangepointVector,
    HierarchicalSeries,
    ModelConstants,
    SurrogateParams,
    TargetRateState,
    advance_rates,
    impulse_hazard,
    regime,
)


@dataclass
class SimulationSpec:
    n_targets: int
    n_surrogates: int
    horizon: int
    surrogate: SurrogateParams
    initial_rates: TargetRateState
    changepoints: ChangepointConfig
    sigma_s: float = 0.0
    sigma_a: float | np.ndarray = 0.0
    seed: int = 0
    surrogate_prior: str = "geometric"
    gamma_shape: float = 2.0
    gamma_scale: float = 10.0
    constants: ModelConstants = field(default_factory=ModelConstants)

    def __post_init__(self):
        if self.n_targets < 1:
            raise ValueError("I must be >= 1")
        if self.n_surrogates < 0:
            raise ValueError("J must be >= 0")
        if self.horizon < 2:
            raise ValueError("T must be >= 2")
        if self.surrogate_prior not in ("geometric", "gamma"):
            raise ValueError("surrogate_prior must be 'geometric' or 'gamma'")
        i, j = self.n_targets, self.n_surrogates
        if self.surrogate.location.shape != (j, 2) and j:
            raise ValueError(f"surrogate params must be ({j}, 2)")
        if self.initial_rates.rate.shape != (i, 2) or self.initial_rates.n_inputs != i + j:
            raise ValueError(f"initial rate state must be ({i}, 2) with {i + j} weight columns")
        cp = self.changepoints
        if cp.rho_s.shape != (i,) or cp.rho_k.shape != (j,):
            raise ValueError("changepoint config does not match I and J")
        if self.sigma_s < 0:
            raise ValueError("sigma_s must be >= 0")

    @property
    def weight_cov(self) -> np.ndarray:
        d = self.n_targets + self.n_surrogates
        sa = np.asarray(self.sigma_a, dtype=float)
        return sa * np.eye(d) if sa.ndim == 0 else sa


def _first_arrival(hazards: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    fired = uniforms < hazards
    first = np.argmax(fired, axis=-1)
    return np.where(fired.any(axis=-1), first + 1, NEVER)


def sample_changepoints(spec: SimulationSpec, rng: np.random.Generator) -> ChangepointVector:
    """Draw (surrogate, target, top) changepoints from their priors.

    Surrogates use a constant per-tick hazard (or a discretized Gamma when
    ``spec.surrogate_prior == "gamma"``); targets and the top layer then use
    the impulse-boosted hazard given the surrogate changepoints.
    """
    cfg, horizon = spec.changepoints, spec.horizon
    j = spec.n_surrogates
    if spec.surrogate_prior == "geometric":
        u = rng.random((j, horizon))
        gamma_k = _first_arrival(cfg.rho_k[:, None], u)
    else:
        draws = np.ceil(rng.gamma(spec.gamma_shape, spec.gamma_scale, size=j)).astype(np.int64)
        draws = np.maximum(draws, 1)
        gamma_k = np.where(draws <= horizon, draws, NEVER)

    ticks = np.arange(1, horizon + 1)
    # last row is the top layer
    base = np.concatenate([cfg.rho_s, [cfg.rho_e]])
    hazards = np.stack([
        impulse_hazard(t, base, gamma_k, cfg.mu1, cfg.mu2, spec.constants.hazard_eps)
        for t in ticks
    ], axis=-1)                                                          # (I+1, T)
    u = rng.random(hazards.shape)
    gamma_s = _first_arrival(hazards, u)
    return ChangepointVector(surrogates=gamma_k, targets=gamma_s[:-1], top=gamma_s[-1])


@dataclass
class Corpus:
    series: HierarchicalSeries
    truth: ChangepointVector
    rates: np.ndarray          # (T, I, 2)
    weights: np.ndarray        # (T, I, 2, I+J)


def simulate(spec: SimulationSpec) -> Corpus:
    """Generate a corpus and its ground truth; fully determined by ``spec``."""
    ss = np.random.SeedSequence(spec.seed)
    cp_rng, k_rng, s_rng, dyn_rng = (np.random.default_rng(s) for s in ss.spawn(4))
    truth = sample_changepoints(spec, cp_rng)

    i, j, horizon = spec.n_targets, spec.n_surrogates, spec.horizon
    ticks = np.arange(1, horizon + 1)

    surrogates = np.empty((j, horizon))
    if j:
        r = regime(ticks[None, :], truth.surrogates[:, None])
        loc = np.take_along_axis(spec.surrogate.location, r, axis=1)
        scale = np.take_along_axis(spec.surrogate.scale, r, axis=1)
        surrogates = np.exp(loc + scale * k_rng.standard_normal((j, horizon)))

    cov = spec.weight_cov
    chol = np.linalg.cholesky(cov) if np.any(cov != 0) else None
    rate = spec.initial_rates.rate.copy()
    weights = spec.initial_rates.weights.copy()
    rates = np.empty((horizon, i, 2))
    weight_trace = np.empty((horizon, i, 2, i + j))
    targets = np.empty((i, horizon), dtype=np.int64)
    for t in ticks:
        if t > 1:
            prev = np.concatenate([targets[:, t - 2], surrogates[:, t - 2]])
            rate, weights = advance_rates(rate, weights, prev, spec.sigma_s, chol, dyn_rng,
                                          spec.constants.rate_floor)
        rates[t - 1] = rate
        weight_trace[t - 1] = weights
        active = rate[np.arange(i), regime(t, truth.targets)]
        targets[:, t - 1] = s_rng.poisson(active)
    series = HierarchicalSeries(targets, surrogates)
    return Corpus(series, truth, rates, weight_trace)


def make_spec(n_targets: int = 5, n_surrogates: int = 10, horizon: int = 60, *,
              seed: int = 0,
              pre_rate: float = 5.0, post_rate: float = 9.0,
              pre_loc: float = 0.0, post_loc: float = 1.5, surrogate_scale: float = 0.5,
              rho_k: float = 0.04, rho_s: float = 0.01, rho_e: float = 0.01,
              mu1: float = 0.5, mu2: float = 0.5,
              sigma_s: float = 0.0, sigma_a: float = 0.0,
              weights: np.ndarray | None = None,
              constants: ModelConstants = DEFAULT_CONSTANTS,
              **kwargs) -> SimulationSpec:
    """Build a homogeneous :class:`SimulationSpec` from scalar knobs.

    Every target shares the same pre/post rates and every surrogate the same
    pre/post log-normal parameters; pass arrays afterwards for heterogeneity.
    """
    i, j = n_targets, n_surrogates
    rate = np.tile([pre_rate, post_rate], (i, 1)).astype(float)
    if weights is None:
        weights = np.zeros((i, 2, i + j))
    surrogate = SurrogateParams(
        location=np.tile([pre_loc, post_loc], (j, 1)).astype(float).reshape(j, 2),
        scale=np.full((j, 2), surrogate_scale),
    )
    cps = ChangepointConfig(
        rho_k=np.full(j, rho_k), rho_s=np.full(i, rho_s),
        mu1=np.full(j, mu1), mu2=np.full(j, mu2), rho_e=rho_e,
    )
    return SimulationSpec(i, j, horizon, surrogate, TargetRateState(rate, weights), cps,
                          sigma_s=sigma_s, sigma_a=sigma_a, seed=seed,
                          constants=constants, **kwargs)


def null_spec(n_targets: int = 2, n_surrogates: int = 2, horizon: int = 40, *,
              seed: int = 0, **kwargs) -> SimulationSpec:
    """Corpus whose pre- and post-change distributions coincide."""
    kwargs.setdefault("pre_rate", 5.0)
    kwargs["post_rate"] = kwargs["pre_rate"]
    kwargs.setdefault("pre_loc", 0.0)
    kwargs["post_loc"] = kwargs["pre_loc"]
    return make_spec(n_targets, n_surrogates, horizon, seed=seed, **kwargs)


def summarize(corpus: Corpus) -> str:
    s = corpus.series
    t = corpus.truth.to_json()
    fmt = lambda v: "-" if v is None else str(v)  # noqa: E731
    lines = [
        f"I={s.n_targets} J={s.n_surrogates} T={s.horizon}",
        "target changepoints:    " + " ".join(fmt(v) for v in t["targets"]),
        "surrogate changepoints: " + " ".join(fmt(v) for v in t["surrogates"]),
        f"top changepoint:        {fmt(t['top'])}",
        f"target count range:     {int(s.targets.min())}..{int(s.targets.max())}",
    ]
    if s.n_surrogates:
        lines.append(f"surrogate range:        {s.surrogates.min():.3g}..{s.surrogates.max():.3g}")
    return "\n".join(lines)

