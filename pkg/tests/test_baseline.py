import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hermitefilter.baseline import (
    STREAMS,
    ParticleCloud,
    Path,
    SimConfig,
    discrete_kalman,
    init_cloud,
    kalman_bucy,
    pf_step,
    resample_if_needed,
    rmse,
    run_pf,
    simulate_ensemble,
    simulate_path,
    streams,
    weight_step,
)
from hermitefilter.errors import DegenerateWeights, SolverBlowUp
from hermitefilter.kernels import systematic_resample
from hermitefilter.nlf import ObservationModel, additive_noise_model


def zero(x, t):
    return 0 * np.asarray(x, dtype=float)


def one(x, t):
    return 1 + 0 * np.asarray(x, dtype=float)


LINEAR = additive_noise_model(lambda x, t: x, lambda x: np.exp(-0.5 * x * x))


# -- simulation -------------------------------------------------------------

def test_noiseless_path():
    model = ObservationModel(zero, zero, zero, lambda x: np.exp(-x * x), S=0.0)
    p = simulate_path(SimConfig(model, dt=0.01, horizon=1.0, seed=3, x0=0.7))
    assert np.all(p.x == 0.7)
    assert np.all(p.y == 0.0)
    assert p.times.shape == p.x.shape == p.y.shape == (101,)


def test_brownian_variance():
    model = additive_noise_model(zero, lambda x: np.exp(-x * x))
    cfg = SimConfig(model, dt=0.01, horizon=1.0, x0=0.0)
    _, x, _ = simulate_ensemble(cfg, range(10_000))
    var = np.var(x[:, -1], ddof=1)
    se = math.sqrt(2.0 / (x.shape[0] - 1))
    assert abs(var - 1.0) <= 3 * se


def test_ensemble_matches_single_paths():
    cfg = SimConfig(LINEAR, dt=0.01, horizon=0.5, x0="sigma0")
    _, x, y = simulate_ensemble(cfg, [4, 9])
    for row, s in enumerate([4, 9]):
        p = simulate_path(SimConfig(LINEAR, dt=0.01, horizon=0.5, seed=s, x0="sigma0"))
        np.testing.assert_allclose(x[row], p.x, rtol=0, atol=1e-14)
        np.testing.assert_allclose(y[row], p.y, rtol=0, atol=1e-14)


def test_path_determinism():
    cfg = SimConfig(LINEAR, dt=0.001, horizon=0.5, seed=11, x0="sigma0")
    a, b = simulate_path(cfg), simulate_path(cfg)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)
    c = simulate_path(SimConfig(LINEAR, dt=0.001, horizon=0.5, seed=12, x0="sigma0"))
    assert not np.array_equal(a.x, c.x)


def test_streams_are_independent_and_named():
    assert STREAMS == ("x0", "signal", "observation", "pf_init", "pf_propagate", "pf_resample")
    g = streams(5)
    draws = [g[name].standard_normal(4) for name in STREAMS]
    assert len({d.tobytes() for d in draws}) == len(STREAMS)


def test_path_helpers():
    cfg = SimConfig(LINEAR, dt=0.001, horizon=0.1, seed=1, x0="sigma0")
    p = simulate_path(cfg)
    q = p.every(10)
    assert q.dt == pytest.approx(0.01)
    assert np.array_equal(q.x, p.x[::10]) and q.y[0] == 0.0
    assert np.array_equal(p.at_interval(0.01).y, q.y)
    with pytest.raises(ValueError):
        Path(np.arange(3.0), np.zeros(3), np.ones(3))


def test_reflecting_channel():
    cfg = SimConfig(additive_noise_model(zero, lambda x: np.exp(-x * x)), dt=0.01, horizon=20.0, seed=2, x0=0.0, reflect=(-1.0, 1.0))
    p = simulate_path(cfg)
    assert np.all(np.abs(p.x) <= 1.0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blowup_reported():
    model = additive_noise_model(zero, lambda x: np.exp(-x * x), f=lambda x, t: x**3)
    with pytest.raises(SolverBlowUp, match="step"):
        simulate_path(SimConfig(model, dt=0.5, horizon=50.0, seed=0, x0=3.0))


def test_simconfig_validation():
    with pytest.raises(ValueError):
        SimConfig(LINEAR, dt=0.0, horizon=1.0)
    with pytest.raises(ValueError):
        SimConfig(LINEAR, dt=0.3, horizon=1.0)


# -- particle cloud and resampling ------------------------------------------

def test_cloud_validation():
    with pytest.raises(ValueError):
        ParticleCloud(np.zeros(3), np.array([0.5, 0.5, 0.5]))
    with pytest.raises(ValueError):
        ParticleCloud(np.zeros(2), np.array([1.5, -0.5]))


def test_uniform_weights_not_resampled():
    cloud = ParticleCloud(np.arange(8.0), np.full(8, 1 / 8))
    out = resample_if_needed(cloud, np.random.default_rng(0))
    assert out is cloud and cloud.ess == pytest.approx(8.0)


def test_degenerate_weights_resample():
    w = np.zeros(10)
    w[0] = 1.0
    cloud = ParticleCloud(np.arange(10.0), w)
    assert cloud.ess == pytest.approx(1.0)
    out = resample_if_needed(cloud, np.random.default_rng(0))
    assert np.all(out.positions == 0.0) and out.resampled
    np.testing.assert_allclose(out.weights, 0.1)


def test_systematic_pointer_rule():
    w = np.array([0.1, 0.4, 0.2, 0.3])
    # pointers (u + i) / n with u = 0.5: 0.125, 0.375, 0.625, 0.875
    assert systematic_resample(w, 0.5).tolist() == [1, 1, 2, 3]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=60), st.floats(0.0, 0.999999))
def test_systematic_counts(raw, u):
    w = np.array(raw)
    if w.sum() <= 0:
        w = np.ones_like(w)
    w = w / w.sum()
    idx = systematic_resample(w, u)
    n = w.size
    assert idx.size == n and np.all(np.diff(idx) >= 0)
    counts = np.bincount(idx, minlength=n)
    # each particle is copied floor(n w) or ceil(n w) times
    assert np.all(counts >= np.floor(n * w - 1e-9)) and np.all(counts <= np.ceil(n * w + 1e-9))


def test_resampling_preserves_mean_in_expectation():
    rng = np.random.default_rng(7)
    pos = rng.standard_normal(200)
    w = rng.exponential(size=200)
    w /= w.sum()
    cloud = ParticleCloud(pos, w)
    target = cloud.mean
    means = np.array([resample_if_needed(cloud, rng, threshold=2.0).mean for _ in range(2000)])
    assert abs(means.mean() - target) <= 3 * means.std(ddof=1) / math.sqrt(means.size)


def test_weight_step_normalized_and_ess_bounds():
    rng = np.random.default_rng(1)
    cloud = init_cloud(LINEAR, 500, rng)
    y = 0.0
    for k in range(50):
        y_new = y + 0.05 * rng.standard_normal()
        cloud = pf_step(cloud, y_new, y, LINEAR, 0.01, rng)
        y = y_new
        assert abs(cloud.weights.sum() - 1.0) <= 1e-12
        assert 1.0 - 1e-12 <= cloud.ess <= cloud.size + 1e-9


def test_weight_step_likelihood():
    # f = g = 0: particles stay put and weights follow the likelihood exactly
    model = ObservationModel(zero, zero, lambda x, t: x, lambda x: np.exp(-x * x))
    cloud = ParticleCloud(np.array([-1.0, 0.0, 2.0]), np.full(3, 1 / 3))
    out = weight_step(cloud, 0.3, 0.1, model, 0.01, np.random.default_rng(0))
    logw = np.array([-1.0, 0.0, 2.0]) * 0.2 - 0.005 * np.array([1.0, 0.0, 4.0])
    ref = np.exp(logw) / np.exp(logw).sum()
    np.testing.assert_allclose(out.weights, ref, rtol=1e-14)


def test_all_zero_weights():
    cloud = ParticleCloud(np.zeros(2), np.array([1.0, 0.0]))
    model = ObservationModel(zero, zero, lambda x, t: np.full_like(x, -np.inf), lambda x: np.exp(-x * x))
    with pytest.raises(DegenerateWeights):
        weight_step(cloud, 1.0, 0.0, model, 0.01, np.random.default_rng(0))


# -- full runs --------------------------------------------------------------

def _linear_path(seed=3, horizon=1.0):
    return simulate_path(SimConfig(LINEAR, dt=0.001, horizon=horizon, seed=seed, x0="sigma0")).every(10)


def test_single_particle_is_pure_prediction():
    path = _linear_path()
    res = run_pf(LINEAR, path, 1, 0.01, seed=5)
    g = streams(5)
    x = init_cloud(LINEAR, 1, g["pf_init"]).positions[0]
    traj = []
    for _ in range(len(path.y) - 1):
        x = x + math.sqrt(0.01) * g["pf_propagate"].standard_normal(1)[0]
        traj.append(x)
    np.testing.assert_allclose(res.mean, traj, rtol=0, atol=1e-12)
    assert not res.resampled.any()


def test_run_pf_determinism():
    path = _linear_path()
    a = run_pf(LINEAR, path, 50, 0.01, seed=8)
    b = run_pf(LINEAR, path, 50, 0.01, seed=8)
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.resampled, b.resampled)
    with pytest.raises(ValueError):
        run_pf(LINEAR, path, 50, 0.02, seed=8)


def test_pf_matches_kalman_bucy():
    path = _linear_path(seed=21)
    kb, _ = kalman_bucy(path.y, 0.01)
    runs = np.array([run_pf(LINEAR, path, 10_000, 0.01, seed=100 + r).mean for r in range(10)])
    checkpoints = np.linspace(9, 99, 10).astype(int)
    se = runs.std(axis=0, ddof=1)[checkpoints] / math.sqrt(runs.shape[0])
    z = (runs.mean(axis=0)[checkpoints] - kb[checkpoints]) / se
    assert np.all(np.abs(z) <= 3.0), z
    # single-run check at the per-run Monte-Carlo error
    one = runs[0, checkpoints]
    assert np.all(np.abs(one - kb[checkpoints]) <= 3 * runs.std(axis=0, ddof=1)[checkpoints])


def test_kalman_bucy_closed_form():
    # P' = 1 - P^2 with P(0) = 1 stays at 1; with y = 0 the mean stays 0
    m, P = kalman_bucy(np.zeros(11), 0.1)
    np.testing.assert_allclose(P, 1.0, atol=1e-14)
    np.testing.assert_allclose(m, 0.0, atol=0)
    # P(0) = 0: P(t) = tanh(t)
    _, P = kalman_bucy(np.zeros(11), 0.1, P0=0.0)
    np.testing.assert_allclose(P, np.tanh(0.1 * np.arange(1, 11)), atol=1e-12)


def test_discrete_kalman_converges_to_kalman_bucy():
    path = _linear_path(seed=2)
    kb, _ = kalman_bucy(path.y, 0.01)
    dk, _ = discrete_kalman(path.y, 0.01)
    assert np.abs(kb - dk).max() <= 0.02


def test_rmse():
    assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert rmse([0.0, 0.0], [3.0, 4.0]) == pytest.approx(math.sqrt(12.5))
