"""Hierarchical quickest change detection with an SMC^2 posterior engine."""
from .detector import OnlineDetector, PfaBudget, pfa_bound, threshold
from .evaluation import aggregate, estimate_eadd, influence, score
from .model import NEVER, ChangepointVector, HierarchicalSeries
from .smc2 import EngineConfig, Hyperpriors, PosteriorSnapshot, SMC2Engine
from .synth import make_spec, null_spec, simulate

__all__ = [
    "NEVER", "ChangepointVector", "EngineConfig", "HierarchicalSeries", "Hyperpriors",
    "OnlineDetector", "PfaBudget", "PosteriorSnapshot", "SMC2Engine", "aggregate",
    "estimate_eadd", "influence", "make_spec", "null_spec", "pfa_bound", "score",
    "simulate", "threshold",
]
__version__ = "0.1.0"
