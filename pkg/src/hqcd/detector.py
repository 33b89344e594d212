"""Multi-level threshold tests on posterior changepoint curves."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np


def threshold(x: float) -> float:
    """Map a PFA parameter ``x > 0`` to the posterior level ``x / (1 + x)``."""
    if not x > 0:
        raise ValueError(f"threshold parameter must be positive, got {x}")
    if np.isinf(x):
        return 1.0
    return x / (1.0 + x)


@dataclass
class PfaBudget:
    """Per-source PFA parameters: ``alpha`` for targets, ``beta`` for
    surrogates, ``lam`` for the sum-of-targets layer."""

    alpha: np.ndarray
    beta: np.ndarray
    lam: float

    def __post_init__(self):
        self.alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        self.lam = float(self.lam)
        if (self.alpha <= 0).any() or (self.beta <= 0).any() or self.lam <= 0:
            raise ValueError("all PFA parameters must be strictly positive")
        if self.alpha.size == 0:
            raise ValueError("need at least one target threshold")

    @classmethod
    def uniform(cls, value: float, n_targets: int, n_surrogates: int) -> "PfaBudget":
        return cls(np.full(n_targets, value), np.full(n_surrogates, value), value)

    @classmethod
    def from_total(cls, total: float, n_targets: int, n_surrogates: int) -> "PfaBudget":
        """Split a total Modified-PFA target evenly over the bound's terms.

        With every parameter equal to ``x`` the bound is ``(I + 2) / (1 + x)``
        (``I + 1`` terms without surrogates), solved here for ``x``.
        """
        terms = n_targets + (2 if n_surrogates else 1)
        if not 0 < total < terms:
            raise ValueError(f"total PFA must lie in (0, {terms})")
        return cls.uniform(terms / total - 1.0, n_targets, n_surrogates)

    def levels(self) -> np.ndarray:
        """Posterior levels in source order targets, surrogates, top."""
        return np.array([threshold(x) for x in (*self.alpha, *self.beta, self.lam)])

    def to_json(self) -> dict:
        return {"alpha": self.alpha.tolist(), "beta": self.beta.tolist(), "lambda": self.lam}

    @classmethod
    def from_json(cls, doc: dict, n_targets: int, n_surrogates: int) -> "PfaBudget":
        if "total" in doc:
            return cls.from_total(float(doc["total"]), n_targets, n_surrogates)
        alpha = np.broadcast_to(np.asarray(doc["alpha"], dtype=float), (n_targets,))
        beta = np.broadcast_to(np.asarray(doc.get("beta", 1.0), dtype=float), (n_surrogates,))
        return cls(alpha, beta, doc.get("lambda", doc.get("lam")))


def pfa_bound(budget: PfaBudget, n_targets: int | None = None) -> float:
    """Upper bound ``I/(1+min alpha) + 1/(1+max beta) + 1/(1+lambda)``.

    Without surrogates the middle term is dropped.
    """
    n = budget.alpha.size if n_targets is None else n_targets
    bound = n / (1.0 + budget.alpha.min()) + 1.0 / (1.0 + budget.lam)
    if budget.beta.size:
        bound += 1.0 / (1.0 + budget.beta.max())
    return float(bound)


@dataclass
class DetectionDecision:
    """Decision state for one source. ``tick`` is ``None`` until declared."""

    tick: int | None = None
    statistic: float | None = None
    declared_at: int | None = None

    @property
    def frozen(self) -> bool:
        return self.tick is not None


def test_source(curve, level: float, prior: DetectionDecision | None = None,
                now: int | None = None, start: int = 1) -> DetectionDecision:
    """Smallest ``n`` with ``curve[n] >= level``.

    ``curve[k]`` is ``P(Gamma <= start + k)``. A frozen ``prior`` decision
    is returned unchanged.
    """
    if prior is not None and prior.frozen:
        return prior
    curve = np.asarray(curve, dtype=float)
    hits = np.flatnonzero(curve >= level)
    if hits.size == 0:
        return prior if prior is not None else DetectionDecision()
    k = int(hits[0])
    return DetectionDecision(tick=start + k, statistic=float(curve[k]),
                             declared_at=now if now is not None else start + curve.size - 1)


@dataclass
class DecisionRecord:
    tick: int
    statistics: np.ndarray
    decisions: list[DetectionDecision]

    def declared(self) -> list[int | None]:
        return [d.tick for d in self.decisions]

    def to_json(self, names: list[str]) -> dict:
        return {
            "tick": self.tick,
            "ts": {n: float(v) for n, v in zip(names, self.statistics)},
            "declared": {n: d.tick for n, d in zip(names, self.decisions)},
        }


@dataclass
class OnlineDetector:
    """Sequential state machine applying the per-source tests each tick.

    Targets, surrogates and the top layer are tested independently; a
    declaration freezes that source.
    """

    budget: PfaBudget
    names: list[str]
    tick: int = 0
    decisions: list[DetectionDecision] = field(default_factory=list)

    def __post_init__(self):
        n_src = self.budget.alpha.size + self.budget.beta.size + 1
        if len(self.names) != n_src:
            raise ValueError(f"budget covers {n_src} sources but {len(self.names)} names given")
        if not self.decisions:
            self.decisions = [DetectionDecision() for _ in self.names]
        self._levels = self.budget.levels()

    def update(self, snapshot) -> DecisionRecord:
        if snapshot.tick != self.tick + 1:
            raise ValueError(f"expected snapshot for tick {self.tick + 1}, got {snapshot.tick}")
        self.tick = snapshot.tick
        curves = snapshot.curves
        for x, level in enumerate(self._levels):
            self.decisions[x] = test_source(curves[x], level, self.decisions[x],
                                            now=self.tick, start=snapshot.start)
        stats = curves[:, -1].copy() if curves.shape[1] else np.zeros(len(self.names))
        return DecisionRecord(self.tick, stats, [DetectionDecision(d.tick, d.statistic, d.declared_at)
                                                 for d in self.decisions])

    def run(self, snapshots: Iterable) -> Iterator[DecisionRecord]:
        for snap in snapshots:
            yield self.update(snap)

    def declared(self) -> list[int | None]:
        return [d.tick for d in self.decisions]

    def state_dict(self) -> dict:
        return {"tick": self.tick, "budget": self.budget.to_json(), "names": self.names,
                "decisions": [[d.tick, d.statistic, d.declared_at] for d in self.decisions]}

    @classmethod
    def from_state_dict(cls, doc: dict) -> "OnlineDetector":
        b = doc["budget"]
        det = cls(PfaBudget(b["alpha"], b["beta"], b["lambda"]), list(doc["names"]), doc["tick"],
                  [DetectionDecision(*row) for row in doc["decisions"]])
        return det


def run_online(snapshots: Iterable, budget: PfaBudget, names: list[str]) -> Iterator[DecisionRecord]:
    """Stream decision records for a stream of posterior snapshots."""
    return OnlineDetector(budget, names).run(snapshots)


test_source.__test__ = False  # keep pytest from collecting it on import
