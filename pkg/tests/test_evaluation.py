import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hqcd.evaluation import (
    INFLUENCE_SENTINEL,
    aggregate,
    estimate_eadd,
    frontier,
    influence,
    score,
    write_frontier_csv,
    write_scorecard_csv,
)
from hqcd.model import NEVER, ChangepointVector
from hqcd.smc2 import PosteriorSnapshot

REPLAY_TRUTH = (29, 6, 24, 26, 47)
REPLAY_DECLARED = (33, 8, 22, 27, 50)


def cpv(values, i, j):
    v = np.asarray(values, dtype=np.int64)
    return ChangepointVector(surrogates=v[i:i + j], targets=v[:i], top=int(v[-1]))


def test_replay_scorecard():
    card = score(REPLAY_DECLARED, cpv(REPLAY_TRUTH, 2, 2))
    assert card.false_alarm.tolist() == [False, False, True, False, False]
    d = card.delay
    assert np.isnan(d[2])
    assert d[[0, 1, 3, 4]].tolist() == [4, 2, 1, 3]
    assert not card.ml_false_alarm and not card.missed.any()


def test_one_step_late_everywhere():
    truth = np.array([5, 9, 3, 12, 7, 20])
    card = score(truth + 1, cpv(truth, 3, 2))
    assert not card.false_alarm.any()
    e = card.eadd()
    assert e["total"] == 3 + 2 + 1
    assert (e["target"], e["surrogate"], e["top"]) == (3, 2, 1)


def test_identity_decisions_are_all_false_alarms():
    truth = np.array([5, 9, 3, 12, 7])
    card = score(truth, cpv(truth, 2, 2))
    assert card.false_alarm.all() and card.ml_false_alarm
    assert card.eadd()["total"] == 0
    assert np.isnan(card.delay).all()


def test_one_late_coordinate_blocks_ml_false_alarm():
    truth = np.array([10, 10, 10, 10])
    card = score([1, 2, 11, 3], cpv(truth, 2, 1))
    assert card.false_alarm.sum() == 3 and not card.ml_false_alarm


def test_undeclared_is_missed_not_false_alarm():
    truth = cpv([10, NEVER, 4], 1, 1)
    card = score([None, None, 6], truth, horizon=20)
    assert not card.false_alarm.any()
    assert card.missed.tolist() == [True, False, False]
    assert card.censored_add("target") == 11
    assert card.eadd()["total"] == 11 + 0 + 2
    with pytest.raises(ValueError):
        score([None, None, 6], truth).eadd()


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        score([1, 2], cpv([1, 2, 3], 1, 1))


@settings(max_examples=50)
@given(st.integers(1, 40), st.data())
def test_ml_pfa_below_per_coordinate_rate(n_runs, data):
    cards = []
    for _ in range(n_runs):
        truth = data.draw(st.lists(st.integers(1, 20), min_size=4, max_size=4))
        dec = data.draw(st.lists(st.one_of(st.none(), st.integers(1, 25)), min_size=4, max_size=4))
        cards.append(score(dec, cpv(truth, 2, 1), horizon=25))
    agg = aggregate(cards)
    assert agg.ml_pfa <= agg.fa_rate.max() + 1e-15
    assert agg.ml_pfa <= agg.modified_pfa + 1e-15


def test_aggregate_modified_pfa():
    truth = cpv([5, 5, 5, 5, 5], 2, 2)
    cards = [score([1, 9, 1, 9, 9], truth), score([9, 9, 9, 1, 1], truth)]
    agg = aggregate(cards)
    np.testing.assert_allclose(agg.fa_rate, [0.5, 0, 0.5, 0.5, 0.5])
    assert agg.modified_pfa == pytest.approx(2 * 0.5 + 0.5 + 0.5)
    assert agg.ml_pfa == 0.0


def snapshot(atoms, weights, tick, i=1, j=1):
    names = [f"S{k+1}" for k in range(i)] + [f"K{k+1}" for k in range(j)] + ["E"]
    return PosteriorSnapshot.from_atoms(tick, names, i, j, np.asarray(atoms), np.asarray(weights, float))


def test_eadd_point_mass():
    snap = snapshot([[4, 3, 6]], [1.0], 10)
    assert estimate_eadd(snap, [4, 3, 6])["total"] == 0.0


def test_eadd_symmetric_pair():
    snap = snapshot([[3, 5, 9], [5, 5, 9]], [0.5, 0.5], 10)
    out = estimate_eadd(snap, [4, 5, 9])
    assert out["target"] == 1.0 and out["total"] == 1.0


def test_eadd_caps_beyond_tick():
    snap = snapshot([[NEVER, 2, NEVER]], [1.0], 8)
    out = estimate_eadd(snap, [None, 2, 5])
    assert out == {"target": 0.0, "surrogate": 0.0, "top": 4.0, "total": 4.0}


@settings(max_examples=60)
@given(st.integers(1, 3), st.integers(0, 3), st.integers(1, 12), st.integers(1, 30), st.data())
def test_eadd_matches_direct_sum(i, j, tick, n_atoms, data):
    d = i + j + 1
    atoms = np.array(data.draw(st.lists(
        st.lists(st.one_of(st.integers(1, tick + 3), st.just(NEVER)), min_size=d, max_size=d),
        min_size=n_atoms, max_size=n_atoms)))
    w = np.array(data.draw(st.lists(st.floats(1e-3, 1.0), min_size=n_atoms, max_size=n_atoms)))
    dec = data.draw(st.lists(st.one_of(st.none(), st.integers(1, tick)), min_size=d, max_size=d))
    snap = snapshot(atoms, w, tick, i, j)
    out = estimate_eadd(snap, dec)

    # plain loop over atoms and sources
    cap = tick + 1
    wn = w / w.sum()
    layer_of = ["target"] * i + ["surrogate"] * j + ["top"]
    ref = {"target": 0.0, "surrogate": 0.0, "top": 0.0}
    for a, wa in zip(atoms, wn):
        for x in range(d):
            g = cap if dec[x] is None else min(dec[x], cap)
            ref[layer_of[x]] += wa * abs(min(int(a[x]), cap) - g)
    for k in ref:
        assert abs(out[k] - ref[k]) <= 1e-12
    assert abs(out["total"] - sum(ref.values())) <= 1e-12


def test_frontier_single_point_matches_score(tmp_path):
    truth = cpv(REPLAY_TRUTH, 2, 2)
    pts = frontier([9.0], [(truth, REPLAY_DECLARED)], lambda state, x: state, horizon=60)
    card = score(REPLAY_DECLARED, truth, horizon=60)
    agg = aggregate([card])
    assert len(pts) == 1
    p = pts[0]
    assert p.ml_pfa == agg.ml_pfa and p.modified_pfa == agg.modified_pfa
    assert p.mean_add == card.mean_add("target") == 3.0
    write_frontier_csv(pts, tmp_path / "f.csv")
    rows = list(csv.DictReader(open(tmp_path / "f.csv")))
    assert rows[0]["budget"] == "9.0"


def test_frontier_null_corpus_has_no_delay():
    truth = cpv([NEVER] * 3, 1, 1)
    pts = frontier([1.0, 9.0], [(truth, [None, 3, None])], lambda s, x: s, horizon=20)
    assert all(np.isnan(p.mean_add) for p in pts)
    assert pts[0].fa_rate == 0.0


def test_scorecard_csv(tmp_path):
    card = score(REPLAY_DECLARED, cpv(REPLAY_TRUTH, 2, 2))
    write_scorecard_csv(card, tmp_path / "s.csv")
    rows = list(csv.DictReader(open(tmp_path / "s.csv")))
    assert [r["false_alarm"] for r in rows] == ["0", "0", "1", "0", "0"]
    assert [r["delay"] for r in rows] == ["4", "2", "", "1", "3"]


def planted_trace(horizon=20, i=2, d=5, cp=8):
    tr = np.full((horizon, i, 2, d), 0.2)
    tr[cp:, 0, 1, 0] = 0.3
    return tr


def test_influence_arithmetic():
    m = influence(planted_trace(), [8, 8])
    assert m.values[0, 0] == pytest.approx(50.0)
    assert np.all(m.values[0, 1:] == 0) and np.all(m.values[1] == 0)
    assert m.values.shape == (2, 5)


def test_influence_constant_weights_zero():
    w = np.random.default_rng(0).dirichlet(np.ones(6), size=(3, 1))
    tr = np.broadcast_to(w[None], (30, 3, 2, 6))
    m = influence(tr, [5, 12, 20])
    assert np.array_equal(m.values, np.zeros((3, 6)))


def test_influence_sentinel_and_mask(tmp_path):
    tr = np.zeros((10, 2, 2, 3))
    tr[:, :, 1, 1] = 0.5
    m = influence(tr, [4, None])
    assert m.values[0, 1] == INFLUENCE_SENTINEL and m.sentinel[0, 1]
    assert m.values[0, 0] == 0
    assert m.mask.tolist() == [False, True]
    m.to_csv(tmp_path / "i.csv")
    m.to_svg(tmp_path / "i.svg")
    assert (tmp_path / "i.svg").read_text().lstrip().startswith("<?xml")


def test_influence_ignores_observations():
    # the matrix is a function of weights and changepoints only
    from hqcd.synth import make_spec, simulate
    c = simulate(make_spec(2, 2, 25, seed=3, sigma_a=0.01))
    m1 = influence(c.weights, c.truth.targets)
    c.series.targets += 7
    c.series.surrogates += 3.0
    m2 = influence(c.weights, c.truth.targets)
    assert np.array_equal(m1.values, m2.values)


def test_influence_shape_checked():
    with pytest.raises(ValueError):
        influence(np.zeros((5, 2, 3)), [1, 2])
    with pytest.raises(ValueError):
        influence(np.zeros((5, 2, 2, 3)), [1])
