"""Ground-truth scoring, posterior delay estimates, frontiers and influence."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .model import NEVER, ChangepointVector

INFLUENCE_SENTINEL = 1e12
LAYERS = ("target", "surrogate", "top")


def _as_ticks(declared) -> np.ndarray:
    """Declarations as an int array with ``NEVER`` for undeclared sources."""
    return np.array([NEVER if g is None else int(g) for g in declared], dtype=np.int64)


def _layer_slices(n_targets: int, n_surrogates: int) -> dict[str, slice]:
    i, j = n_targets, n_surrogates
    return {"target": slice(0, i), "surrogate": slice(i, i + j), "top": slice(i + j, i + j + 1)}


# --------------------------------------------------------------------------
# per-run scoring

@dataclass
class ScoreCard:
    """Scores for one completed run.

    Per-source arrays follow the order targets, surrogates, top. ``delay``
    is ``nan`` wherever the source was not detected after its change.
    An undeclared source never counts as a false alarm; it is ``missed``
    if its true change happened inside the horizon.
    """

    names: list[str]
    n_targets: int
    n_surrogates: int
    declared: np.ndarray
    truth: np.ndarray
    false_alarm: np.ndarray
    delay: np.ndarray
    missed: np.ndarray
    horizon: int | None = None

    @property
    def ml_false_alarm(self) -> bool:
        """Whether every coordinate fired at or before its change."""
        return bool(self.false_alarm.all())

    def layer(self, name: str) -> slice:
        return _layer_slices(self.n_targets, self.n_surrogates)[name]

    def mean_add(self, layer: str | None = None) -> float:
        """Mean delay over valid detections (``nan`` if there are none)."""
        d = self.delay if layer is None else self.delay[self.layer(layer)]
        d = d[np.isfinite(d)]
        return float(d.mean()) if d.size else float("nan")

    def censored_add(self, layer: str = "target") -> float:
        """Mean delay where a miss costs ``T + 1 - Gamma``; false alarms are skipped.

        ``nan`` when the layer has no finite changepoint that was not a false alarm.
        """
        if self.horizon is None:
            raise ValueError("censored delay needs the horizon")
        sl = self.layer(layer)
        d = self.delay[sl].copy()
        miss = self.missed[sl]
        d[miss] = self.horizon + 1 - self.truth[sl][miss]
        d = d[np.isfinite(d)]
        return float(d.mean()) if d.size else float("nan")

    def eadd(self) -> dict[str, float]:
        """Absolute-deviation delay per layer plus the total.

        Undeclared sources and changes beyond the horizon are placed at
        ``T + 1``, so this needs the horizon whenever either occurs.
        """
        g, c = self.declared, self.truth
        if self.horizon is None:
            if (g == NEVER).any() or (c == NEVER).any():
                raise ValueError("horizon required when a source is undeclared or unchanged")
            cap = NEVER
        else:
            cap = self.horizon + 1
        dev = np.abs(np.minimum(g, cap) - np.minimum(c, cap)).astype(float)
        out = {k: float(dev[self.layer(k)].sum()) for k in LAYERS}
        out["total"] = float(dev.sum())
        return out

    def rows(self) -> list[dict]:
        def tick(v):
            return "" if v == NEVER else int(v)
        return [{"source": n, "declared": tick(g), "truth": tick(c), "false_alarm": int(fa),
                 "delay": "" if not np.isfinite(d) else int(d), "missed": int(m)}
                for n, g, c, fa, d, m in zip(self.names, self.declared, self.truth,
                                             self.false_alarm, self.delay, self.missed)]

    def summary(self) -> dict:
        out = {"ml_false_alarm": self.ml_false_alarm, "n_false_alarms": int(self.false_alarm.sum()),
               "mean_add": self.mean_add(), "target_add": self.mean_add("target")}
        try:
            out.update({f"eadd_{k}": v for k, v in self.eadd().items()})
        except ValueError:
            pass
        return out


def score(declared: Sequence[int | None], truth: ChangepointVector, names: list[str] | None = None,
          horizon: int | None = None) -> ScoreCard:
    """Score final declarations against the true changepoints.

    ``declared`` runs over targets, surrogates, top; ``None`` means the
    source was never declared. A declaration at ``gamma <= Gamma``
    (equality included) is a false alarm.
    """
    c = truth.as_array()
    g = _as_ticks(declared)
    if g.shape != c.shape:
        raise ValueError(f"{g.size} declarations for {c.size} sources")
    i, j = truth.targets.size, truth.surrogates.size
    if names is None:
        names = ([f"S{k + 1}" for k in range(i)] + [f"K{k + 1}" for k in range(j)] + ["E"])
    elif len(names) != c.size:
        raise ValueError("names do not match the number of sources")
    fired = g != NEVER
    fa = fired & (g <= c)
    valid = fired & (g > c)
    delay = np.where(valid, (g - np.where(valid, c, 0)).astype(float), np.nan)
    missed = ~fired & (c != NEVER)
    return ScoreCard(list(names), i, j, g, c, fa, delay, missed, horizon)


@dataclass
class Aggregate:
    """Empirical rates over many scored runs."""

    n_runs: int
    fa_rate: np.ndarray            # per source
    ml_pfa: float
    modified_pfa: float
    mean_add: float
    target_add: float
    eadd: dict[str, float] = field(default_factory=dict)

    def se(self, p: float) -> float:
        return float(np.sqrt(max(p * (1 - p), 0.0) / self.n_runs))


def aggregate(cards: Sequence[ScoreCard]) -> Aggregate:
    """Empirical ML-PFA, per-source FA rates and the Modified-PFA sum.

    The Modified-PFA is ``I * max_i P_i + min_j P_j + P_E``, the quantity
    the union bound controls; the surrogate term drops out when ``J = 0``.
    """
    if not cards:
        raise ValueError("need at least one scorecard")
    i, j = cards[0].n_targets, cards[0].n_surrogates
    fa = np.mean([c.false_alarm for c in cards], axis=0)
    modified = i * fa[:i].max() + fa[-1] + (fa[i:i + j].min() if j else 0.0)
    ml = float(np.mean([c.ml_false_alarm for c in cards]))

    def nanmean(vals):
        vals = np.asarray(vals, dtype=float)
        vals = vals[np.isfinite(vals)]
        return float(vals.mean()) if vals.size else float("nan")

    eadds = {}
    try:
        per = [c.eadd() for c in cards]
        eadds = {k: float(np.mean([p[k] for p in per])) for k in per[0]}
    except ValueError:
        pass
    delays = np.concatenate([c.delay for c in cards])
    return Aggregate(len(cards), fa, ml, float(modified), nanmean(delays),
                     nanmean([c.mean_add("target") for c in cards]), eadds)


# --------------------------------------------------------------------------
# posterior delay estimate

def estimate_eadd(snapshot, declared: Sequence[int | None]) -> dict[str, float]:
    """Posterior expected absolute delay ``E|gamma - Gamma|`` per layer.

    Expectation over the snapshot's weighted changepoint atoms; undeclared
    sources and atoms past the current tick sit at ``tick + 1``.
    """
    g = _as_ticks(declared)
    atoms = np.asarray(snapshot.atoms)
    if g.size != atoms.shape[1]:
        raise ValueError(f"{g.size} declarations for {atoms.shape[1]} sources")
    cap = snapshot.tick + 1
    w = np.asarray(snapshot.atom_weights, dtype=float)
    w = w / w.sum()
    dev = np.abs(np.minimum(atoms, cap) - np.minimum(g, cap)[None, :])
    per_source = w @ dev
    out = {k: float(per_source[sl].sum())
           for k, sl in _layer_slices(snapshot.n_targets, snapshot.n_surrogates).items()}
    out["total"] = float(per_source.sum())
    return out


# --------------------------------------------------------------------------
# frontier

@dataclass
class FrontierPoint:
    budget: float
    fa_rate: float          # mean per-source FA rate over targets
    ml_pfa: float
    modified_pfa: float
    mean_add: float         # target layer; nan when nothing was detected after a change


def frontier(budgets: Sequence[float], runs: Sequence[tuple], detect: Callable,
             horizon: int | None = None) -> list[FrontierPoint]:
    """FA-vs-delay trade-off over a sweep of uniform PFA parameters.

    ``runs`` holds ``(truth, state)`` pairs and ``detect(state, x)`` returns
    the final declarations for parameter ``x``; passing stored curves as
    ``state`` lets every budget reuse a single engine pass.
    """
    if not runs:
        raise ValueError("need at least one run")
    points = []
    for x in budgets:
        cards = [score(detect(state, x), truth, horizon=horizon) for truth, state in runs]
        agg = aggregate(cards)
        i = cards[0].n_targets
        points.append(FrontierPoint(float(x), float(agg.fa_rate[:i].mean()), agg.ml_pfa,
                                    agg.modified_pfa, agg.target_add))
    return points


def write_frontier_csv(points: Sequence[FrontierPoint], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["budget", "fa_rate", "ml_pfa", "modified_pfa", "mean_add"])
        for p in points:
            w.writerow([p.budget, p.fa_rate, p.ml_pfa, p.modified_pfa,
                        "" if np.isnan(p.mean_add) else p.mean_add])


def write_scorecard_csv(card: ScoreCard, path):
    rows = card.rows()
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


# --------------------------------------------------------------------------
# influence

@dataclass
class InfluenceMatrix:
    """Percent change of each weight component across a target's change.

    ``values[i, d]`` compares the mean regime-0 weight on input ``d``
    before target ``i`` changed with the mean regime-1 weight after. Rows
    of targets without a change inside the trace are zero and masked.
    """

    values: np.ndarray          # (I, I+J)
    row_names: list[str]
    col_names: list[str]
    mask: np.ndarray            # True where the row has no usable change

    @property
    def sentinel(self) -> np.ndarray:
        return np.abs(self.values) >= INFLUENCE_SENTINEL

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["target", *self.col_names])
            for name, row in zip(self.row_names, self.values):
                w.writerow([name, *(repr(float(v)) for v in row)])

    def to_svg(self, path, title: str = "changepoint influence (%)"):
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        shown = np.ma.masked_where(self.sentinel | self.mask[:, None], self.values)
        finite = shown.compressed()
        vmax = float(np.abs(finite).max()) if finite.size and np.abs(finite).max() > 0 else 1.0
        fig, ax = plt.subplots(figsize=(0.5 * len(self.col_names) + 2, 0.5 * len(self.row_names) + 1.5))
        im = ax.imshow(shown, cmap="RdBu_r", vmin=-vmax, vmax=vmax, aspect="auto")
        ax.set_xticks(range(len(self.col_names)), self.col_names, rotation=90)
        ax.set_yticks(range(len(self.row_names)), self.row_names)
        for r, c in zip(*np.nonzero(self.sentinel & ~self.mask[:, None])):
            ax.text(c, r, "+inf" if self.values[r, c] > 0 else "-inf", ha="center", va="center",
                    fontsize=6)
        ax.set_title(title)
        fig.colorbar(im, ax=ax)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def influence(weight_trace, changepoints, row_names=None, col_names=None) -> InfluenceMatrix:
    """Influence matrix from per-tick weight estimates.

    Parameters
    ----------
    weight_trace : array (T, I, 2, I+J)
        Weight vectors per tick for both regimes, e.g. the engine's
        posterior means of the normalized weights.
    changepoints : sequence of int or None, length I
        Change tick per target (declared or true). Ticks ``<= gamma`` use
        regime 0, later ticks regime 1.
    """
    trace = np.asarray(weight_trace, dtype=float)
    if trace.ndim != 4 or trace.shape[2] != 2:
        raise ValueError("weight trace must be shaped (T, I, 2, D)")
    horizon, i, _, d = trace.shape
    cps = _as_ticks(changepoints)
    if cps.size != i:
        raise ValueError(f"need {i} target changepoints, got {cps.size}")
    values = np.zeros((i, d))
    mask = np.zeros(i, dtype=bool)
    for r, g in enumerate(cps):
        if g < 1 or g >= horizon:
            mask[r] = True
            continue
        # centre on a reference so equal weights give an exactly zero difference
        ref = trace[0, r, 0]
        d0 = (trace[:g, r, 0] - ref).mean(axis=0)
        d1 = (trace[g:, r, 1] - ref).mean(axis=0)
        h0 = ref + d0
        diff = d1 - d0
        with np.errstate(divide="ignore", invalid="ignore"):
            cell = 100.0 * diff / np.abs(h0)
        zero = h0 == 0
        cell[zero] = np.sign(diff[zero]) * INFLUENCE_SENTINEL
        values[r] = cell
    row_names = row_names or [f"S{k + 1}" for k in range(i)]
    col_names = col_names or row_names + [f"K{k + 1}" for k in range(d - i)]
    return InfluenceMatrix(values, list(row_names), list(col_names), mask)
