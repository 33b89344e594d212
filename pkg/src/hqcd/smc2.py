"""SMC^2 estimation of the joint changepoint posterior.

The outer cloud holds ``n_theta`` static-parameter particles; each carries an
inner bootstrap particle filter of ``n_x`` hidden states. Every array in the
inner cloud is laid out ``(n_theta, n_x, ...)`` so one tick is a handful of
vectorized numpy operations over the whole cloud.

Random streams are derived from ``(seed, tick, phase)``, which makes a run a
pure function of its configuration and input stream, and lets a checkpoint
resume without pickling generator state.
"""
from __future__ import annotations

import json
import hashlib
import logging
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
from scipy.special import logsumexp
from scipy.stats import invwishart, qmc

from .model import (
    NEVER,
    ModelConstants,
    advance_rates,
    impulse_boost,
    normalized_weights,
    surrogate_loglik,
    target_loglik,
)

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class DegenerateCloudError(RuntimeError):
    """Every particle in the cloud has zero likelihood."""


# --------------------------------------------------------------------------
# configuration

@dataclass
class Hyperpriors:
    """Prior ranges for static parameters and the initial hidden state.

    Static parameters ``sigma_s, rho_s, rho_e, mu1, mu2`` are drawn by Latin
    hypercube sampling over ``(lo, hi)`` boxes; a box with ``lo == hi`` pins
    the parameter. The weight-noise covariance is Inverse-Wishart with mean
    ``sigma_a_scale * I`` (0 disables weight noise).

    Initial-state priors are (mean, std) pairs: Gamma for rates, scales and
    surrogate hazards, Normal for weights and surrogate locations. Means
    broadcast against ``(I, 2)`` for rates, ``(J, 2)`` for surrogate
    parameters and ``(I, 2, I+J)`` for weights. A std of 0 pins the value.
    """

    sigma_s: tuple[float, float] = (0.0, 0.5)
    rho_s: tuple[float, float] = (0.005, 0.05)
    rho_e: tuple[float, float] = (0.005, 0.05)
    mu1: tuple[float, float] = (0.0, 0.6)
    mu2: tuple[float, float] = (0.2, 1.5)
    sigma_a_scale: float = 0.0
    sigma_a_df: float | None = None

    rate_mean: object = (5.0, 10.0)
    rate_std: object = (2.0, 4.0)
    weight_mean: object = 0.0
    weight_std: object = 0.0
    loc_mean: object = (0.0, 1.0)
    loc_std: object = (0.5, 0.5)
    scale_mean: object = 0.5
    scale_std: object = 0.1
    rho_k_mean: object = 0.05
    rho_k_std: object = 0.02

    def __post_init__(self):
        for name in ("sigma_s", "rho_s", "rho_e", "mu1", "mu2"):
            lo, hi = (float(v) for v in getattr(self, name))
            if not np.isfinite([lo, hi]).all() or lo > hi:
                raise ValueError(f"hyperprior range {name}=({lo}, {hi}) is not a valid box")
            setattr(self, name, (lo, hi))
        if self.sigma_s[0] < 0 or self.mu1[0] < 0:
            raise ValueError("sigma_s and mu1 ranges must be nonnegative")
        for name in ("rho_s", "rho_e"):
            if getattr(self, name)[0] < 0 or getattr(self, name)[1] > 1:
                raise ValueError(f"{name} range must lie inside [0, 1]")
        if self.mu2[0] <= 0:
            raise ValueError("mu2 range must be strictly positive")
        if self.sigma_a_scale < 0:
            raise ValueError("sigma_a_scale must be >= 0")
        for name in ("rate_std", "weight_std", "loc_std", "scale_std", "rho_k_std"):
            if np.any(np.asarray(getattr(self, name), dtype=float) < 0):
                raise ValueError(f"{name} must be >= 0")
        for name in ("rate_mean", "scale_mean"):
            if np.any(np.asarray(getattr(self, name), dtype=float) <= 0):
                raise ValueError(f"{name} must be > 0")
        km, ks = np.broadcast_arrays(np.asarray(self.rho_k_mean, dtype=float),
                                     np.asarray(self.rho_k_std, dtype=float))
        if np.any(km < 0) or np.any((km == 0) & (ks > 0)):
            raise ValueError("rho_k_mean must be >= 0, and > 0 wherever rho_k_std > 0")

    def to_json(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = np.asarray(v).tolist() if isinstance(v, (np.ndarray, tuple, list)) else v
        return out

    @classmethod
    def from_json(cls, doc: dict) -> "Hyperpriors":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown hyperprior keys: {sorted(unknown)}")
        return cls(**{k: (tuple(v) if k in ("sigma_s", "rho_s", "rho_e", "mu1", "mu2") else v)
                      for k, v in doc.items()})


@dataclass
class EngineConfig:
    n_theta: int = 100
    n_x: int = 100
    ess_threshold: float = 0.5
    resampling: str = "multinomial"
    seed: int = 0
    n_moves: int = 1
    proposal_scale: float = 2.38
    top_weight: float = 1.0
    surrogate_coupling: bool = True
    curve_cap: int | None = None
    constants: ModelConstants = field(default_factory=ModelConstants)

    def __post_init__(self):
        if self.n_theta < 1 or self.n_x < 1:
            raise ValueError("n_theta and n_x must be >= 1")
        if not 0 <= self.ess_threshold <= 1:
            raise ValueError("ess_threshold must lie in [0, 1]")
        if self.resampling not in ("multinomial", "systematic"):
            raise ValueError("resampling must be 'multinomial' or 'systematic'")
        if self.n_moves < 0 or self.proposal_scale < 0 or self.top_weight < 0:
            raise ValueError("n_moves, proposal_scale and top_weight must be >= 0")
        if self.curve_cap is not None and self.curve_cap < 1:
            raise ValueError("curve_cap must be >= 1")
        if isinstance(self.constants, dict):
            self.constants = ModelConstants(**self.constants)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "EngineConfig":
        doc = dict(doc)
        if "constants" in doc:
            doc["constants"] = ModelConstants(**doc["constants"])
        return cls(**doc)


# --------------------------------------------------------------------------
# resampling / weights

def ess(weights) -> float:
    """Effective sample size ``(sum w)^2 / sum w^2``."""
    w = np.asarray(weights, dtype=float)
    s2 = np.square(w).sum()
    return float(w.sum() ** 2 / s2) if s2 > 0 else 0.0


def normalize_log(log_w, axis=-1):
    """Log weights normalized along ``axis``; all ``-inf`` rows become uniform."""
    log_w = np.asarray(log_w, dtype=float)
    total = logsumexp(log_w, axis=axis, keepdims=True)
    dead = ~np.isfinite(total)
    out = log_w - np.where(dead, 0.0, total)
    if dead.any():
        n = log_w.shape[axis]
        out = np.where(dead, -np.log(n), out)
    return out


def resample_indices(weights, rng: np.random.Generator, scheme: str = "multinomial"):
    """Ancestor indices for each row of normalized ``weights`` (rows x n).

    Rows are stacked on a single cumulative axis (row ``q`` spans ``[q, q+1]``)
    so all rows resolve with one ``searchsorted``.
    """
    w = np.atleast_2d(np.asarray(weights, dtype=float))
    rows, n = w.shape
    cum = np.cumsum(w, axis=1)
    cum /= cum[:, -1:]
    cum[:, -1] = 1.0
    offset = np.arange(rows)[:, None]
    if scheme == "multinomial":
        u = rng.random((rows, n))
    elif scheme == "systematic":
        u = (rng.random((rows, 1)) + np.arange(n)) / n
    else:
        raise ValueError(f"unknown resampling scheme {scheme!r}")
    flat = np.searchsorted((cum + offset).ravel(), (u + offset).ravel(), side="right")
    idx = flat.reshape(rows, n) - offset * n
    return np.clip(idx, 0, n - 1)


def latin_hypercube(n: int, lows, highs, rng: np.random.Generator) -> np.ndarray:
    """``n`` LHS points over the box ``[lows, highs]`` (one stratum per sample)."""
    lows, highs = np.asarray(lows, dtype=float), np.asarray(highs, dtype=float)
    u = qmc.LatinHypercube(d=lows.size, seed=rng).random(n)
    return lows + u * (highs - lows)


def _gamma(rng, mean, std, shape):
    mean = np.broadcast_to(np.asarray(mean, dtype=float), shape)
    std = np.broadcast_to(np.asarray(std, dtype=float), shape)
    pinned = std == 0
    safe_std = np.where(pinned, 1.0, std)
    safe_mean = np.where(pinned, 1.0, mean)
    k = np.where(pinned, 1.0, (safe_mean / safe_std) ** 2)
    scale = np.where(pinned, 1.0, safe_std ** 2 / safe_mean)
    draw = rng.gamma(k, scale)
    return np.where(pinned, mean, draw)


def _normal(rng, mean, std, shape):
    mean = np.broadcast_to(np.asarray(mean, dtype=float), shape)
    std = np.broadcast_to(np.asarray(std, dtype=float), shape)
    return mean + std * rng.standard_normal(shape)


# --------------------------------------------------------------------------
# particle clouds

@dataclass
class ThetaParticles:
    """Static parameters for the outer cloud, leading axis ``n_theta``."""

    sigma_s: np.ndarray      # (Q,)
    rho_s: np.ndarray        # (Q, I)
    rho_e: np.ndarray        # (Q,)
    mu1: np.ndarray          # (Q, J)
    mu2: np.ndarray          # (Q, J)
    sigma_a: np.ndarray      # (Q, D, D)

    @property
    def size(self) -> int:
        return self.sigma_s.shape[0]

    def vector(self) -> np.ndarray:
        """The LHS block ``[sigma_s, rho_s, rho_e, mu1, mu2]`` as (Q, P)."""
        return np.concatenate([self.sigma_s[:, None], self.rho_s, self.rho_e[:, None],
                               self.mu1, self.mu2], axis=1)

    def with_vector(self, vec: np.ndarray) -> "ThetaParticles":
        i, j = self.rho_s.shape[1], self.mu1.shape[1]
        return ThetaParticles(vec[:, 0].copy(), vec[:, 1:1 + i].copy(), vec[:, 1 + i].copy(),
                              vec[:, 2 + i:2 + i + j].copy(), vec[:, 2 + i + j:].copy(),
                              self.sigma_a)

    def take(self, idx) -> "ThetaParticles":
        return ThetaParticles(*(getattr(self, f.name)[idx] for f in fields(self)))

    def where(self, mask, other: "ThetaParticles") -> "ThetaParticles":
        def pick(a, b):
            m = mask.reshape(mask.shape + (1,) * (a.ndim - 1))
            return np.where(m, b, a)
        return ThetaParticles(*(pick(getattr(self, f.name), getattr(other, f.name))
                                for f in fields(self)))

    def cholesky(self) -> np.ndarray | None:
        if not np.any(self.sigma_a):
            return None
        return np.linalg.cholesky(self.sigma_a)


@dataclass
class StateParticles:
    """Hidden states of every inner filter, leading axes ``(n_theta, n_x)``.

    ``log_w`` holds normalized log weights within each inner filter.
    """

    gamma_k: np.ndarray      # (Q, N, J) int
    gamma_s: np.ndarray      # (Q, N, I) int
    gamma_e: np.ndarray      # (Q, N) int
    rate: np.ndarray         # (Q, N, I, 2)
    weights: np.ndarray      # (Q, N, I, 2, D)
    loc: np.ndarray          # (Q, N, J, 2)
    scale: np.ndarray        # (Q, N, J, 2)
    rho_k: np.ndarray        # (Q, N, J)
    hazard_s: np.ndarray     # (Q, N, I+1); last column is the top layer
    log_w: np.ndarray        # (Q, N)

    def take_inner(self, idx) -> "StateParticles":
        rows = np.arange(idx.shape[0])[:, None]
        return StateParticles(*(getattr(self, f.name)[rows, idx] for f in fields(self)))

    def take(self, idx) -> "StateParticles":
        return StateParticles(*(getattr(self, f.name)[idx] for f in fields(self)))

    def where(self, mask, other: "StateParticles") -> "StateParticles":
        def pick(a, b):
            m = mask.reshape(mask.shape + (1,) * (a.ndim - 1))
            return np.where(m, b, a)
        return StateParticles(*(pick(getattr(self, f.name), getattr(other, f.name))
                                for f in fields(self)))

    def changepoints(self) -> np.ndarray:
        """(Q, N, I+J+1) in source order targets, surrogates, top."""
        return np.concatenate([self.gamma_s, self.gamma_k, self.gamma_e[..., None]], axis=-1)


# --------------------------------------------------------------------------
# posterior snapshot

@dataclass
class PosteriorSnapshot:
    """Weighted changepoint atoms and the per-source CDF curves they imply.

    ``curves[x, k]`` is ``P(Gamma_x <= start + k | data)``; with no cap,
    ``start == 1`` and the curve covers ``n = 1..tick``.
    """

    tick: int
    names: list[str]
    n_targets: int
    n_surrogates: int
    atoms: np.ndarray            # (M, I+J+1)
    atom_weights: np.ndarray     # (M,)
    curves: np.ndarray           # (I+J+1, tick - start + 1)
    start: int = 1

    @classmethod
    def from_atoms(cls, tick, names, n_targets, n_surrogates, atoms, weights, cap=None):
        start = 1 if cap is None else max(1, tick - cap + 1)
        width = tick - start + 1
        n_src = atoms.shape[1]
        # bin 0 holds everything before the window, bin width+1 everything after tick
        binned = np.clip(atoms - start + 1, 0, width + 1)
        flat = (np.arange(n_src) * (width + 2) + binned).ravel()
        mass = np.bincount(flat, weights=np.repeat(weights, n_src), minlength=n_src * (width + 2))
        mass = mass.reshape(n_src, width + 2)
        curves = np.cumsum(mass, axis=1)[:, 1:width + 1]
        return cls(tick, list(names), n_targets, n_surrogates, atoms, weights,
                   np.clip(curves, 0.0, 1.0), start)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def curve(self, source: int | str) -> np.ndarray:
        if isinstance(source, str):
            source = self.index(source)
        return self.curves[source]

    def cdf(self, source: int | str, n: int) -> float:
        """``P(Gamma <= n)``; below a capped window this is an upper bound."""
        c = self.curve(source)
        if n < self.start:
            return 0.0 if self.start == 1 else float(c[0])
        return float(c[min(n, self.tick) - self.start])

    def joint(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct changepoint vectors and their posterior mass."""
        uniq, inv = np.unique(self.atoms, axis=0, return_inverse=True)
        return uniq, np.bincount(inv.ravel(), weights=self.atom_weights, minlength=len(uniq))

    @property
    def layers(self) -> dict[str, slice]:
        i, j = self.n_targets, self.n_surrogates
        return {"target": slice(0, i), "surrogate": slice(i, i + j), "top": slice(i + j, i + j + 1)}


# --------------------------------------------------------------------------
# engine

class SMC2Engine:
    """Online SMC^2 over the hierarchical changepoint model.

    Parameters
    ----------
    n_targets, n_surrogates : int
        Dimensions of the incoming observation vectors.
    hyperpriors : Hyperpriors
    config : EngineConfig
    names : list of str, optional
        Source names in order targets, surrogates, top.
    """

    def __init__(self, n_targets: int, n_surrogates: int, hyperpriors: Hyperpriors | None = None,
                 config: EngineConfig | None = None, names: list[str] | None = None,
                 _init: bool = True):
        if n_targets < 1 or n_surrogates < 0:
            raise ValueError("need I >= 1 targets and J >= 0 surrogates")
        self.n_targets = n_targets
        self.n_surrogates = n_surrogates
        self.hyperpriors = hyperpriors or Hyperpriors()
        self.config = config or EngineConfig()
        self.names = names or ([f"S{i + 1}" for i in range(n_targets)]
                               + [f"K{j + 1}" for j in range(n_surrogates)] + ["E"])
        if len(self.names) != n_targets + n_surrogates + 1:
            raise ValueError("names must cover targets, surrogates and the top layer")
        self._bounds = self._theta_bounds()
        mask = np.ones(n_targets + n_surrogates)
        if not self.config.surrogate_coupling:
            mask[n_targets:] = 0.0
        self._mask = mask
        self.tick = 0
        self.history_s: list[np.ndarray] = []
        self.history_k: list[np.ndarray] = []
        self.weight_trace: list[np.ndarray] = []
        self.ess_trace: list[float] = []
        self.rejuvenations: list[int] = []
        self.acceptance: list[float] = []
        if _init:
            rng = self._rng(0, 0)
            self.theta = self.sample_theta(self.config.n_theta, rng)
            self.states = self.sample_states(self.theta, self.config.n_x, rng)
            self.log_w = np.full(self.config.n_theta, -np.log(self.config.n_theta))
            self.log_z = np.zeros(self.config.n_theta)

    # ---- setup ---------------------------------------------------------

    @property
    def n_inputs(self) -> int:
        return self.n_targets + self.n_surrogates

    def _rng(self, tick: int, phase: int, *extra: int) -> np.random.Generator:
        return np.random.default_rng([self.config.seed, tick, phase, *extra])

    def _theta_bounds(self):
        hp, i, j = self.hyperpriors, self.n_targets, self.n_surrogates
        lows = [hp.sigma_s[0]] + [hp.rho_s[0]] * i + [hp.rho_e[0]] + [hp.mu1[0]] * j + [hp.mu2[0]] * j
        highs = [hp.sigma_s[1]] + [hp.rho_s[1]] * i + [hp.rho_e[1]] + [hp.mu1[1]] * j + [hp.mu2[1]] * j
        return np.array(lows), np.array(highs)

    def sample_theta(self, n: int, rng: np.random.Generator) -> ThetaParticles:
        """Draw ``n`` static-parameter particles from the hyperprior."""
        lows, highs = self._bounds
        vec = latin_hypercube(n, lows, highs, rng)
        d = self.n_inputs
        hp = self.hyperpriors
        if hp.sigma_a_scale > 0:
            df = hp.sigma_a_df if hp.sigma_a_df is not None else d + 2.0
            if df <= d - 1:
                raise ValueError(f"sigma_a_df must exceed {d - 1}")
            # mean of IW(df, psi) is psi / (df - d - 1) when df > d + 1
            denom = df - d - 1 if df > d + 1 else 1.0
            psi = hp.sigma_a_scale * denom * np.eye(d)
            sig = np.asarray(invwishart(df=df, scale=psi).rvs(size=n, random_state=rng))
            sig = sig.reshape(n, d, d)
        else:
            sig = np.zeros((n, d, d))
        dummy = ThetaParticles(np.zeros(n), np.zeros((n, self.n_targets)), np.zeros(n),
                               np.zeros((n, self.n_surrogates)), np.zeros((n, self.n_surrogates)), sig)
        return dummy.with_vector(vec)

    def sample_states(self, theta: ThetaParticles, n_x: int, rng: np.random.Generator) -> StateParticles:
        """Draw initial hidden states for every theta particle."""
        hp = self.hyperpriors
        q, i, j, d = theta.size, self.n_targets, self.n_surrogates, self.n_inputs
        never = lambda *s: np.full(s, NEVER, dtype=np.int64)  # noqa: E731
        rate = _gamma(rng, hp.rate_mean, hp.rate_std, (q, n_x, i, 2))
        rate = np.maximum(rate, self.config.constants.rate_floor)
        return StateParticles(
            gamma_k=never(q, n_x, j),
            gamma_s=never(q, n_x, i),
            gamma_e=never(q, n_x),
            rate=rate,
            weights=_normal(rng, hp.weight_mean, hp.weight_std, (q, n_x, i, 2, d)),
            loc=_normal(rng, hp.loc_mean, hp.loc_std, (q, n_x, j, 2)),
            scale=np.maximum(_gamma(rng, hp.scale_mean, hp.scale_std, (q, n_x, j, 2)), 1e-6),
            rho_k=np.clip(_gamma(rng, hp.rho_k_mean, hp.rho_k_std, (q, n_x, j)), 0.0, 1.0),
            hazard_s=np.zeros((q, n_x, i + 1)),
            log_w=np.full((q, n_x), -np.log(n_x)),
        )

    # ---- one filtering step -------------------------------------------

    def _advance(self, theta: ThetaParticles, st: StateParticles, chol, t: int,
                 s_t, k_t, prev, rng) -> tuple[StateParticles, np.ndarray]:
        """Resample, propagate and reweight every inner filter for tick ``t``.

        Returns the new states and the per-theta log predictive likelihood
        ``log p(y_t | y_{1:t-1}, theta)``.
        """
        cfg = self.config
        q, n = st.log_w.shape
        if t > 1:
            idx = resample_indices(np.exp(st.log_w), rng, cfg.resampling)
            st = st.take_inner(idx)
            st.log_w = np.full((q, n), -np.log(n))
            ch = None if chol is None else chol[:, None, None, None]
            rate, weights = advance_rates(
                st.rate, st.weights, prev, theta.sigma_s[:, None, None, None], ch, rng,
                cfg.constants.rate_floor, self._mask)
            st = replace(st, rate=rate, weights=weights)

        # changepoint arrivals at tick t
        gk = st.gamma_k
        if self.n_surrogates:
            arrive = (gk == NEVER) & (rng.random(gk.shape) < st.rho_k)
            gk = np.where(arrive, t, gk)
        if cfg.surrogate_coupling and self.n_surrogates:
            boost = impulse_boost(t, st.gamma_k, theta.mu1[:, None], theta.mu2[:, None])
        else:
            boost = np.zeros((q, n))
        base = np.concatenate([theta.rho_s, theta.rho_e[:, None]], axis=1)[:, None, :]
        hazard = np.clip(base + boost[..., None], 0.0, 1.0 - cfg.constants.hazard_eps)
        g_se = np.concatenate([st.gamma_s, st.gamma_e[..., None]], axis=-1)
        arrive = (g_se == NEVER) & (rng.random(g_se.shape) < hazard)
        g_se = np.where(arrive, t, g_se)
        st = replace(st, gamma_k=gk, gamma_s=g_se[..., :-1], gamma_e=g_se[..., -1], hazard_s=hazard)

        # emission of y_t
        post_s = t > st.gamma_s
        lam = np.where(post_s, st.rate[..., 1], st.rate[..., 0])
        ll = target_loglik(s_t, lam).sum(axis=-1)
        if self.n_surrogates:
            post_k = t > st.gamma_k
            loc = np.where(post_k, st.loc[..., 1], st.loc[..., 0])
            scale = np.where(post_k, st.scale[..., 1], st.scale[..., 0])
            ll = ll + surrogate_loglik(k_t, loc, scale).sum(axis=-1)
        if cfg.top_weight:
            lam_e = np.where(t > st.gamma_e, st.rate[..., 1].sum(-1), st.rate[..., 0].sum(-1))
            ll = ll + cfg.top_weight * target_loglik(s_t.sum(), lam_e)
        ll = np.where(np.isnan(ll), -np.inf, ll)
        joint = st.log_w + ll
        log_evidence = logsumexp(joint, axis=1)
        st.log_w = normalize_log(joint, axis=1)
        return st, log_evidence

    def _observation(self, t):
        s_t = self.history_s[t - 1]
        k_t = self.history_k[t - 1]
        if t > 1:
            prev = np.concatenate([self.history_s[t - 2], self.history_k[t - 2]]).astype(float)
        else:
            prev = None
        return s_t, k_t, prev

    def step(self, s_t, k_t) -> PosteriorSnapshot:
        """Assimilate ``y_T = (S(T), K(T))`` and return the updated posterior."""
        s_t = np.asarray(s_t, dtype=np.int64).reshape(-1)
        k_t = np.asarray(k_t, dtype=float).reshape(-1)
        if s_t.shape != (self.n_targets,) or k_t.shape != (self.n_surrogates,):
            raise ValueError(
                f"observation must have {self.n_targets} targets and {self.n_surrogates} surrogates")
        if (s_t < 0).any():
            raise ValueError("target counts must be nonnegative")
        self.tick += 1
        t = self.tick
        self.history_s.append(s_t)
        self.history_k.append(k_t)
        rng = self._rng(t, 0)
        _, _, prev = self._observation(t)
        self.states, incr = self._advance(self.theta, self.states, self.theta.cholesky(),
                                          t, s_t, k_t, prev, rng)
        if not np.isfinite(incr).any():
            raise DegenerateCloudError(
                f"all particle weights underflowed at tick {t}; increase n_x/n_theta or "
                "widen the hyperpriors so some particles explain the data")
        self.log_z = self.log_z + incr
        self.log_w = normalize_log(self.log_w + incr)
        current = ess(np.exp(self.log_w))
        self.ess_trace.append(current)
        if current < self.config.ess_threshold * self.config.n_theta:
            self.rejuvenate()
        self.weight_trace.append(self.posterior_mean_weights())
        return self.snapshot()

    # ---- rejuvenation -------------------------------------------------

    def ess(self) -> float:
        return ess(np.exp(self.log_w))

    def _run_fresh(self, theta: ThetaParticles, rng: np.random.Generator):
        """Run new inner filters for ``theta`` over the whole history."""
        st = self.sample_states(theta, self.config.n_x, rng)
        chol = theta.cholesky()
        log_z = np.zeros(theta.size)
        for t in range(1, self.tick + 1):
            s_t, k_t, prev = self._observation(t)
            st, incr = self._advance(theta, st, chol, t, s_t, k_t, prev, rng)
            log_z += incr
        return st, log_z

    def proposal_covariance(self) -> np.ndarray:
        vec = self.theta.vector()
        w = np.exp(self.log_w)
        mean = w @ vec
        centered = vec - mean
        cov = (centered * w[:, None]).T @ centered
        return 0.5 * (cov + cov.T)

    def rejuvenate(self, cov: np.ndarray | None = None):
        """Resample theta particles and apply particle-marginal MH moves.

        ``cov`` overrides the empirical proposal covariance. Moves use a
        Gaussian random walk scaled by ``proposal_scale**2 / dim``; the
        weight-noise covariance rides along unchanged.
        """
        t = self.tick
        cfg = self.config
        if cov is None:
            cov = self.proposal_covariance()
        rng = self._rng(t, 1)
        idx = resample_indices(np.exp(self.log_w), rng, "multinomial")[0]
        self.theta = self.theta.take(idx)
        self.states = self.states.take(idx)
        self.log_z = self.log_z[idx]
        self.log_w = np.full(cfg.n_theta, -np.log(cfg.n_theta))
        self.rejuvenations.append(t)

        diag = np.diag(cov)
        free = diag > 1e-14 * np.maximum(1.0, np.abs(self.theta.vector()).max(axis=0)) ** 2
        dim = int(free.sum())
        if dim == 0 or cfg.n_moves == 0 or cfg.proposal_scale == 0:
            self.acceptance.append(float("nan"))
            return
        sub = cov[np.ix_(free, free)] * (cfg.proposal_scale ** 2 / dim)
        vals, vecs = np.linalg.eigh(sub)
        root = vecs * np.sqrt(np.clip(vals, 0.0, None))
        lows, highs = self._bounds
        accepted = 0
        for m in range(cfg.n_moves):
            mrng = self._rng(t, 2, m)
            cur = self.theta.vector()
            prop = cur.copy()
            prop[:, free] += mrng.standard_normal((cfg.n_theta, dim)) @ root.T
            inside = np.all((prop >= lows) & (prop <= highs), axis=1)
            prop = np.where(inside[:, None], prop, cur)
            cand = self.theta.with_vector(prop)
            new_states, new_log_z = self._run_fresh(cand, mrng)
            # flat prior on the LHS box: acceptance is the likelihood-estimate ratio
            log_u = np.log(mrng.random(cfg.n_theta))
            ok = inside & np.isfinite(new_log_z) & (log_u < new_log_z - self.log_z)
            self.theta = self.theta.where(ok, cand)
            self.states = self.states.where(ok, new_states)
            self.log_z = np.where(ok, new_log_z, self.log_z)
            accepted += int(ok.sum())
        self.acceptance.append(accepted / (cfg.n_moves * cfg.n_theta))
        log.debug("tick %d: rejuvenated, acceptance %.2f", t, self.acceptance[-1])

    # ---- posterior summaries -----------------------------------------

    def particle_weights(self) -> np.ndarray:
        """Combined normalized weights ``w_q * W_qr`` as (Q, N)."""
        return np.exp(self.log_w[:, None] + self.states.log_w)

    def snapshot(self) -> PosteriorSnapshot:
        w = self.particle_weights()
        atoms = self.states.changepoints().reshape(-1, self.n_inputs + 1)
        return PosteriorSnapshot.from_atoms(self.tick, self.names, self.n_targets, self.n_surrogates,
                                            atoms, w.ravel() / w.sum(), self.config.curve_cap)

    def posterior_mean_weights(self) -> np.ndarray:
        """Posterior mean of the L1-normalized weight vectors, (I, 2, D)."""
        w = self.particle_weights()
        nw = normalized_weights(self.states.weights, self._mask)
        # average deviations from one particle so identical particles reproduce it exactly
        ref = nw[0, 0]
        return ref + np.einsum("qn,qnird->ird", w, nw - ref) / w.sum()

    def posterior_mean_theta(self) -> np.ndarray:
        return np.exp(self.log_w) @ self.theta.vector()

    # ---- checkpointing ------------------------------------------------

    def fingerprint(self) -> str:
        doc = {"I": self.n_targets, "J": self.n_surrogates,
               "hyperpriors": self.hyperpriors.to_json(), "config": self.config.to_json()}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {f"theta.{f.name}": getattr(self.theta, f.name) for f in fields(self.theta)}
        out.update({f"states.{f.name}": getattr(self.states, f.name) for f in fields(self.states)})
        d = self.n_inputs
        out.update(
            log_w=self.log_w, log_z=self.log_z,
            history_s=np.array(self.history_s, dtype=np.int64).reshape(-1, self.n_targets),
            history_k=np.array(self.history_k, dtype=float).reshape(-1, self.n_surrogates),
            weight_trace=np.array(self.weight_trace).reshape(-1, self.n_targets, 2, d),
            ess_trace=np.array(self.ess_trace, dtype=float),
            rejuvenations=np.array(self.rejuvenations, dtype=np.int64),
            acceptance=np.array(self.acceptance, dtype=float),
        )
        meta = {"version": CHECKPOINT_VERSION, "tick": self.tick, "I": self.n_targets,
                "J": self.n_surrogates, "names": self.names, "fingerprint": self.fingerprint(),
                "hyperpriors": self.hyperpriors.to_json(), "config": self.config.to_json()}
        out["__meta__"] = np.array(json.dumps(meta))
        return out

    @classmethod
    def from_state_dict(cls, data) -> "SMC2Engine":
        meta = json.loads(str(data["__meta__"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        eng = cls(meta["I"], meta["J"], Hyperpriors.from_json(meta["hyperpriors"]),
                  EngineConfig.from_json(meta["config"]), meta["names"], _init=False)
        eng.theta = ThetaParticles(*(np.array(data[f"theta.{f.name}"]) for f in fields(ThetaParticles)))
        eng.states = StateParticles(*(np.array(data[f"states.{f.name}"]) for f in fields(StateParticles)))
        eng.log_w = np.array(data["log_w"])
        eng.log_z = np.array(data["log_z"])
        eng.tick = meta["tick"]
        eng.history_s = list(np.array(data["history_s"]))
        eng.history_k = list(np.array(data["history_k"]))
        eng.weight_trace = list(np.array(data["weight_trace"]))
        eng.ess_trace = list(np.array(data["ess_trace"]))
        eng.rejuvenations = [int(v) for v in data["rejuvenations"]]
        eng.acceptance = list(np.array(data["acceptance"]))
        return eng

    def save(self, path):
        with open(path, "wb") as fh:
            np.savez_compressed(fh, **self.state_dict())

    @classmethod
    def load(cls, path) -> "SMC2Engine":
        with np.load(path, allow_pickle=False) as data:
            return cls.from_state_dict({k: data[k] for k in data.files})
