"""Glue: stream a corpus through the engine and the detector."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .detector import DecisionRecord, OnlineDetector, PfaBudget
from .model import HierarchicalSeries
from .smc2 import EngineConfig, Hyperpriors, PosteriorSnapshot, SMC2Engine


@dataclass
class RunResult:
    records: list[DecisionRecord]
    final: PosteriorSnapshot
    engine: SMC2Engine
    curve_history: list[tuple[int, np.ndarray]] = field(default_factory=list)

    @property
    def declared(self) -> list[int | None]:
        return self.records[-1].declared()


def run_detection(series: HierarchicalSeries, budget: PfaBudget,
                  hyperpriors: Hyperpriors | None = None, config: EngineConfig | None = None,
                  keep_curves: bool = False) -> RunResult:
    """Replay every tick of ``series`` through a fresh engine and detector.

    With ``keep_curves`` the per-tick curves are retained so other budgets
    can be evaluated later with :func:`replay` without rerunning the engine.
    """
    engine = SMC2Engine(series.n_targets, series.n_surrogates, hyperpriors, config,
                        series.source_names())
    detector = OnlineDetector(budget, engine.names)
    records, history = [], []
    snap = None
    for t in range(1, series.horizon + 1):
        snap = engine.step(*series.observation(t))
        records.append(detector.update(snap))
        if keep_curves:
            history.append((snap.start, snap.curves))
    return RunResult(records, snap, engine, history)


def replay(curve_history, budget: PfaBudget, names: list[str]) -> list[int | None]:
    """Final declarations for ``budget`` on stored per-tick curves."""
    detector = OnlineDetector(budget, names)

    class _Snap:
        __slots__ = ("tick", "start", "curves")

    for tick, (start, curves) in enumerate(curve_history, start=1):
        s = _Snap()
        s.tick, s.start, s.curves = tick, start, curves
        detector.update(s)
    return detector.declared()
