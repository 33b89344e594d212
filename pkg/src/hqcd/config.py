"""Run configuration: one JSON document with engine knobs at the top level
and ``hyperpriors``, ``budget`` and ``simulation`` sections."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .detector import PfaBudget
from .model import ModelConstants
from .smc2 import EngineConfig, Hyperpriors
from .synth import SimulationSpec, make_spec


class ConfigError(ValueError):
    """Invalid or incomplete configuration."""


_ENGINE_KEYS = {f.name for f in fields(EngineConfig)} - {"constants"}
_PATH_KEYS = ("targets", "surrogates", "truth", "decisions", "checkpoint")
_RUN_KEYS = {"out", "checkpoint_every", "rate_floor", "hazard_eps", "influence_from",
             "hyperpriors", "budget", "simulation", *_PATH_KEYS}


@dataclass
class RunConfig:
    """Everything a subcommand needs, with documented defaults.

    Relative paths resolve against the config file's directory.
    """

    targets: Path | None = None
    surrogates: Path | None = None
    truth: Path | None = None
    decisions: Path | None = None
    checkpoint: Path | None = None
    out: Path = Path("out")
    checkpoint_every: int = 10
    influence_from: str = "declared"
    engine: EngineConfig = field(default_factory=EngineConfig)
    hyperpriors: Hyperpriors = field(default_factory=Hyperpriors)
    budget: dict = field(default_factory=lambda: {"alpha": 9.0, "beta": 9.0, "lambda": 9.0})
    simulation: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc: dict, base: Path | None = None) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(doc) - _RUN_KEYS - _ENGINE_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        base = base or Path(".")
        resolve = lambda v: None if v is None else (base / v)  # noqa: E731
        try:
            constants = ModelConstants(rate_floor=float(doc.get("rate_floor", 1e-6)),
                                       hazard_eps=float(doc.get("hazard_eps", 1e-6)))
            engine = EngineConfig(constants=constants, **{k: doc[k] for k in _ENGINE_KEYS if k in doc})
            hyper = Hyperpriors.from_json(doc.get("hyperpriors", {}))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        cfg = cls(
            **{k: resolve(doc.get(k)) for k in _PATH_KEYS},
            out=base / doc.get("out", "out"),
            checkpoint_every=int(doc.get("checkpoint_every", 10)),
            influence_from=doc.get("influence_from", "declared"),
            engine=engine,
            hyperpriors=hyper,
            budget=dict(doc.get("budget", {"alpha": 9.0, "beta": 9.0, "lambda": 9.0})),
            simulation=dict(doc.get("simulation", {})),
        )
        if cfg.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")
        if cfg.influence_from not in ("declared", "truth"):
            raise ConfigError("influence_from must be 'declared' or 'truth'")
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
        return cls.from_dict(doc, path.parent)

    def require(self, *keys: str):
        """Check that the named input paths are set and exist."""
        for key in keys:
            p = getattr(self, key)
            if p is None:
                raise ConfigError(f"config must set '{key}'")
            if not Path(p).exists():
                raise ConfigError(f"'{key}' file {p} does not exist")

    def pfa_budget(self, n_targets: int, n_surrogates: int) -> PfaBudget:
        try:
            return PfaBudget.from_json(self.budget, n_targets, n_surrogates)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid budget: {exc}") from exc

    def simulation_spec(self, seed: int | None = None) -> SimulationSpec:
        doc = dict(self.simulation)
        if seed is not None:
            doc["seed"] = seed
        shape = {k: doc.pop(k) for k in ("n_targets", "n_surrogates", "horizon") if k in doc}
        try:
            return make_spec(**shape, **doc)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid simulation section: {exc}") from exc
