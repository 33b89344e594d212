import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hqcd.model import NEVER
from hqcd.smc2 import (
    DegenerateCloudError,
    EngineConfig,
    Hyperpriors,
    PosteriorSnapshot,
    SMC2Engine,
    ess,
    latin_hypercube,
    normalize_log,
    resample_indices,
)
from hqcd.synth import make_spec, simulate
from oracle import enumerate_posterior

TOY = dict(pre_rate=3.0, post_rate=8.0, post_loc=1.5, rho_k=0.15, rho_s=0.1, rho_e=0.1,
           mu1=0.5, mu2=0.5)


def toy_hyperpriors(p=TOY, scale=0.5):
    """Hyperpriors that pin every parameter to the generating values."""
    return Hyperpriors(
        sigma_s=(0.0, 0.0), rho_s=(p["rho_s"],) * 2, rho_e=(p["rho_e"],) * 2,
        mu1=(p["mu1"],) * 2, mu2=(p["mu2"],) * 2,
        rate_mean=(p["pre_rate"], p["post_rate"]), rate_std=0.0,
        loc_mean=(0.0, p["post_loc"]), loc_std=0.0, scale_mean=scale, scale_std=0.0,
        rho_k_mean=p["rho_k"], rho_k_std=0.0)


def toy_oracle(series, p=TOY, scale=0.5):
    return enumerate_posterior(
        series.targets, series.surrogates, rates=[(p["pre_rate"], p["post_rate"])],
        loc=[(0.0, p["post_loc"])], scale=[(scale, scale)], rho_k=[p["rho_k"]],
        rho_s=[p["rho_s"]], rho_e=p["rho_e"], mu1=[p["mu1"]], mu2=[p["mu2"]])


def run(engine, series, upto=None):
    snap = None
    for t in range(engine.tick + 1, (upto or series.horizon) + 1):
        snap = engine.step(*series.observation(t))
    return snap


@pytest.fixture(scope="module")
def small_corpus():
    return simulate(make_spec(2, 2, 20, seed=3))


# --------------------------------------------------------------------------
# helpers

def test_ess_examples():
    assert ess(np.full(8, 1 / 8)) == pytest.approx(8)
    assert ess([1.0, 0, 0, 0]) == pytest.approx(1)
    assert ess([0.5, 0.5, 0, 0]) == pytest.approx(2)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=50).filter(lambda w: sum(w) > 1e-6))
def test_ess_bounds(w):
    assert 1 - 1e-9 <= ess(w) <= len(w) + 1e-9


def test_normalize_log_dead_row_is_uniform():
    out = normalize_log(np.array([[-np.inf, -np.inf], [0.0, np.log(3.0)]]), axis=1)
    np.testing.assert_allclose(np.exp(out), [[0.5, 0.5], [0.25, 0.75]])


@pytest.mark.parametrize("scheme", ["multinomial", "systematic"])
def test_resampling_frequencies(scheme):
    w = np.array([[0.1, 0.6, 0.3], [1.0, 0.0, 0.0]])
    rng = np.random.default_rng(0)
    idx = np.concatenate([resample_indices(w, rng, scheme) for _ in range(2000)], axis=1)
    freq = np.array([np.bincount(r, minlength=3) / r.size for r in idx])
    np.testing.assert_allclose(freq[0], w[0], atol=0.02)
    np.testing.assert_array_equal(freq[1], [1.0, 0.0, 0.0])


def test_latin_hypercube_strata():
    rng = np.random.default_rng(1)
    pts = latin_hypercube(100, [2.0, -1.0], [4.0, 1.0], rng)
    for d, (lo, hi) in enumerate([(2.0, 4.0), (-1.0, 1.0)]):
        strata = np.floor((pts[:, d] - lo) / (hi - lo) * 100).astype(int)
        assert sorted(strata) == list(range(100))


def test_inverse_wishart_draws_are_spd():
    eng = SMC2Engine(2, 1, Hyperpriors(sigma_a_scale=0.05), EngineConfig(n_theta=2, n_x=2))
    theta = eng.sample_theta(1000, np.random.default_rng(0))
    assert theta.sigma_a.shape == (1000, 3, 3)
    np.testing.assert_allclose(theta.sigma_a, np.swapaxes(theta.sigma_a, 1, 2))
    np.linalg.cholesky(theta.sigma_a)


def test_hyperprior_validation():
    with pytest.raises(ValueError):
        Hyperpriors(rho_s=(0.3, 0.1))
    with pytest.raises(ValueError):
        Hyperpriors(mu2=(0.0, 1.0))
    with pytest.raises(ValueError):
        Hyperpriors.from_json({"rho": (0.1, 0.2)})
    hp = Hyperpriors(rate_mean=[[4.0, 6.0], [5.0, 9.0]])
    assert Hyperpriors.from_json(hp.to_json()).to_json() == hp.to_json()


def test_engine_config_validation():
    with pytest.raises(ValueError):
        EngineConfig(n_theta=0)
    with pytest.raises(ValueError):
        EngineConfig(resampling="stratified")
    cfg = EngineConfig(n_x=7, curve_cap=5)
    assert EngineConfig.from_json(cfg.to_json()) == cfg


# --------------------------------------------------------------------------
# filtering

def test_minimal_cloud_is_legal(small_corpus):
    eng = SMC2Engine(2, 2, config=EngineConfig(n_theta=1, n_x=1, seed=0))
    snap = run(eng, small_corpus.series)
    assert snap.tick == 20 and snap.atoms.shape == (1, 5)


def test_zero_hazards_give_zero_curves():
    hp = Hyperpriors(sigma_s=(0, 0), rho_s=(0, 0), rho_e=(0, 0), mu1=(0, 0),
                     rho_k_mean=0.0, rho_k_std=0.0)
    c = simulate(make_spec(1, 1, 8, seed=0))
    snap = run(SMC2Engine(1, 1, hp, EngineConfig(n_theta=10, n_x=10)), c.series)
    np.testing.assert_array_equal(snap.curves, 0.0)


def test_weights_stay_normalized(small_corpus):
    eng = SMC2Engine(2, 2, config=EngineConfig(n_theta=20, n_x=30, seed=1))
    for t in range(1, 21):
        eng.step(*small_corpus.series.observation(t))
        assert np.exp(eng.log_w).sum() == pytest.approx(1.0, abs=1e-9)
        np.testing.assert_allclose(np.exp(eng.states.log_w).sum(axis=1), 1.0, atol=1e-9)
        assert 1 - 1e-9 <= eng.ess() <= 20 + 1e-9
        assert eng.particle_weights().sum() == pytest.approx(1.0, abs=1e-9)


def test_exact_oracle_on_three_tick_toy():
    c = simulate(make_spec(1, 1, 3, seed=0, **TOY))
    exact = toy_oracle(c.series)
    errs = []
    for seed in range(5):
        snap = run(SMC2Engine(1, 1, toy_hyperpriors(), EngineConfig(n_theta=200, n_x=200, seed=seed)),
                   c.series)
        errs.append(np.abs(snap.curves - exact).max())
    assert np.median(errs) <= 0.05


def test_degenerate_cloud_raises():
    eng = SMC2Engine(1, 1, config=EngineConfig(n_theta=3, n_x=3))
    with pytest.raises(DegenerateCloudError):
        eng.step([1], [-1.0])


def test_step_rejects_bad_observation():
    eng = SMC2Engine(2, 1, config=EngineConfig(n_theta=2, n_x=2))
    with pytest.raises(ValueError):
        eng.step([1], [1.0])
    with pytest.raises(ValueError):
        eng.step([1, -2], [1.0])


def test_no_nan_on_benchmark_corpus():
    c = simulate(make_spec(5, 10, 60, seed=0))
    eng = SMC2Engine(5, 10, config=EngineConfig(n_theta=20, n_x=40, seed=0))
    snap = run(eng, c.series)
    assert np.isfinite(snap.curves).all() and np.isfinite(eng.log_z).all()
    assert np.isfinite(np.asarray(eng.weight_trace)).all()


def test_determinism(small_corpus):
    cfg = EngineConfig(n_theta=15, n_x=20, seed=9)
    a = run(SMC2Engine(2, 2, config=cfg), small_corpus.series)
    b = run(SMC2Engine(2, 2, config=cfg), small_corpus.series)
    assert a.curves.tobytes() == b.curves.tobytes()
    c = run(SMC2Engine(2, 2, config=EngineConfig(n_theta=15, n_x=20, seed=10)), small_corpus.series)
    assert not np.array_equal(a.curves, c.curves)


def test_checkpoint_round_trip(small_corpus, tmp_path):
    cfg = EngineConfig(n_theta=15, n_x=20, seed=4)
    full = SMC2Engine(2, 2, config=cfg)
    run(full, small_corpus.series)
    part = SMC2Engine(2, 2, config=cfg)
    run(part, small_corpus.series, upto=11)
    part.save(tmp_path / "ck.npz")
    resumed = SMC2Engine.load(tmp_path / "ck.npz")
    assert resumed.fingerprint() == part.fingerprint() and resumed.tick == 11
    snap = run(resumed, small_corpus.series)
    assert snap.curves.tobytes() == full.snapshot().curves.tobytes()
    assert resumed.rejuvenations == full.rejuvenations


# --------------------------------------------------------------------------
# rejuvenation

def test_zero_covariance_move_is_identity(small_corpus):
    eng = SMC2Engine(2, 2, config=EngineConfig(n_theta=12, n_x=10, seed=2, ess_threshold=0.0))
    run(eng, small_corpus.series, upto=8)
    eng.log_w = normalize_log(np.arange(12.0))
    idx = resample_indices(np.exp(eng.log_w), eng._rng(8, 1), "multinomial")[0]
    expected = eng.theta.vector()[idx]
    eng.rejuvenate(cov=np.zeros((eng.theta.vector().shape[1],) * 2))
    np.testing.assert_array_equal(eng.theta.vector(), expected)
    np.testing.assert_allclose(np.exp(eng.log_w), 1 / 12)
    assert eng.ess() == pytest.approx(12)


def test_rejuvenation_preserves_posterior_mean():
    # the MH kernel targets the current posterior, so the mean of rho_s
    # must not drift beyond Monte Carlo error when moves are applied
    c = simulate(make_spec(1, 1, 12, seed=0, **TOY))
    hp = Hyperpriors(sigma_s=(0.0, 0.0), rho_s=(0.01, 0.3), rho_e=(0.1, 0.1), mu1=(0.5, 0.5),
                     mu2=(0.5, 0.5), rate_mean=(3.0, 8.0), rate_std=0.0, loc_mean=(0.0, 1.5),
                     loc_std=0.0, scale_mean=0.5, scale_std=0.0, rho_k_mean=0.15, rho_k_std=0.0)
    diffs = []
    for rep in range(50):
        eng = SMC2Engine(1, 1, hp, EngineConfig(n_theta=40, n_x=30, seed=rep, ess_threshold=0.0))
        run(eng, c.series)
        before = eng.posterior_mean_theta()[1]
        eng.rejuvenate()
        diffs.append(eng.posterior_mean_theta()[1] - before)
    diffs = np.array(diffs)
    assert abs(diffs.mean()) < 3 * diffs.std(ddof=1) / np.sqrt(len(diffs)) + 1e-12


def test_rejuvenation_triggers_and_resets(small_corpus):
    eng = SMC2Engine(2, 2, config=EngineConfig(n_theta=20, n_x=20, seed=0))
    run(eng, small_corpus.series)
    assert eng.rejuvenations, "benchmark data should degrade the outer ESS at least once"
    for t in eng.rejuvenations:
        assert eng.ess_trace[t - 1] < 0.5 * 20


# --------------------------------------------------------------------------
# snapshots

@settings(max_examples=60)
@given(st.integers(1, 12), st.integers(1, 3), st.integers(0, 2), st.integers(0, 2**31),
       st.one_of(st.none(), st.integers(1, 12)))
def test_curves_monotone_and_marginally_consistent(tick, i, j, seed, cap):
    rng = np.random.default_rng(seed)
    m, n_src = 40, i + j + 1
    atoms = rng.integers(1, tick + 3, size=(m, n_src))
    atoms[rng.random((m, n_src)) < 0.2] = NEVER
    w = rng.random(m)
    w /= w.sum()
    names = [f"x{k}" for k in range(n_src)]
    snap = PosteriorSnapshot.from_atoms(tick, names, i, j, atoms, w, cap)
    assert np.all(np.diff(snap.curves, axis=1) >= -1e-12)
    assert np.all((snap.curves >= 0) & (snap.curves <= 1))
    uniq, mass = snap.joint()
    assert mass.sum() == pytest.approx(1.0)
    for x in range(n_src):
        for k, n in enumerate(range(snap.start, tick + 1)):
            assert snap.curves[x, k] == pytest.approx(mass[uniq[:, x] <= n].sum(), abs=1e-12)


def test_snapshot_layers_and_lookup():
    atoms = np.array([[1, 2, 3, NEVER]])
    snap = PosteriorSnapshot.from_atoms(4, ["S1", "S2", "K1", "E"], 2, 1, atoms, np.ones(1))
    assert snap.layers == {"target": slice(0, 2), "surrogate": slice(2, 3), "top": slice(3, 4)}
    assert snap.cdf("K1", 2) == 0.0 and snap.cdf("K1", 3) == 1.0 and snap.cdf("E", 4) == 0.0
    np.testing.assert_array_equal(snap.curve("S2"), [0, 1, 1, 1])


def test_posterior_mean_weights_are_normalized():
    hp = Hyperpriors(weight_mean=0.5, weight_std=0.2)
    c = simulate(make_spec(2, 1, 6, seed=1))
    eng = SMC2Engine(2, 1, hp, EngineConfig(n_theta=5, n_x=8))
    run(eng, c.series)
    pm = eng.posterior_mean_weights()
    assert pm.shape == (2, 2, 3)
    assert np.all(np.abs(pm).sum(axis=-1) <= 1 + 1e-9)


def test_ablation_masks_surrogate_columns():
    hp = Hyperpriors(weight_mean=1.0, weight_std=0.0)
    eng = SMC2Engine(1, 2, hp, EngineConfig(n_theta=2, n_x=2, surrogate_coupling=False))
    eng.step([3], [1.0, 1.0])
    pm = eng.posterior_mean_weights()
    np.testing.assert_allclose(pm[..., 1:], 0.0)
    np.testing.assert_allclose(pm[..., 0], 1.0)
