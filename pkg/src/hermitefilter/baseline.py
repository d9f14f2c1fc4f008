"""Path simulation and the bootstrap particle filter used as a baseline.

Random numbers come from NumPy's PCG64 bit generator. A run seed is fed
to ``SeedSequence`` and spawned into independent child streams in a fixed
order (see ``STREAMS``), so each component draws from its own stream and
results depend only on the seed.
"""

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .errors import DegenerateWeights, SolverBlowUp
from .fke import _values
from .kernels import systematic_resample

# Child stream order for SeedSequence(seed).spawn(len(STREAMS)).
STREAMS = ("x0", "signal", "observation", "pf_init", "pf_propagate", "pf_resample")
RNG_NAME = "numpy.random.PCG64 via SeedSequence.spawn"


def streams(seed):
    """Independent generators for every component, keyed by ``STREAMS``."""
    children = np.random.SeedSequence(int(seed)).spawn(len(STREAMS))
    return {name: np.random.Generator(np.random.PCG64(ss)) for name, ss in zip(STREAMS, children)}


def sample_density(density, n, rng, lo=-20.0, hi=20.0, n_grid=40001):
    """Draw ``n`` samples from an unnormalized density by inverse CDF on a grid."""
    x = np.linspace(lo, hi, n_grid)
    pdf = np.asarray(density(x), dtype=float)
    if np.any(pdf < 0) or not np.all(np.isfinite(pdf)):
        raise ValueError("density must be finite and non-negative")
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * np.diff(x))])
    if not cdf[-1] > 0:
        raise ValueError("density has zero mass on the sampling grid")
    return np.interp(rng.uniform(size=n) * cdf[-1], cdf, x)


def _reflect(x, bounds):
    lo, hi = bounds
    width = hi - lo
    z = np.mod(x - lo, 2.0 * width)
    return lo + np.where(z > width, 2.0 * width - z, z)


@dataclass(frozen=True)
class SimConfig:
    """Euler-Maruyama simulation setup.

    ``x0`` is a number, a callable ``rng -> float``, or ``"sigma0"`` to
    draw from the model's initial density. ``reflect`` optionally confines
    the state to an interval by mirror reflection (a channel).
    """

    model: object
    dt: float
    horizon: float
    seed: int = 0
    x0: Union[float, str, Callable] = 0.0
    reflect: Optional[tuple] = None

    def __post_init__(self):
        if not self.dt > 0 or not self.horizon > 0:
            raise ValueError("dt and horizon must be positive")
        n = self.horizon / self.dt
        if abs(n - round(n)) > 1e-6 * max(n, 1.0):
            raise ValueError(f"dt={self.dt} does not divide horizon={self.horizon}")

    @property
    def n_steps(self):
        return int(round(self.horizon / self.dt))


@dataclass(frozen=True, eq=False)
class Path:
    times: np.ndarray
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if not (len(self.times) == len(self.x) == len(self.y)):
            raise ValueError("times, x and y must have equal lengths")
        if len(self.y) and self.y[0] != 0.0:
            raise ValueError("observations must start at y_0 = 0")

    @property
    def dt(self):
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def every(self, stride):
        """Subsample every ``stride``-th point (y stays cumulative)."""
        return Path(self.times[::stride], self.x[::stride], self.y[::stride])

    def at_interval(self, dt_obs):
        stride = dt_obs / self.dt
        if abs(stride - round(stride)) > 1e-9 * stride:
            raise ValueError(f"dt_obs={dt_obs} is not a multiple of the path step {self.dt}")
        return self.every(int(round(stride)))


def _sim_noise(model, t):
    """Observation noise intensity for simulation; S = 0 (noiseless) is allowed here."""
    s = float(model.S(t)) if callable(model.S) else float(model.S)
    if not s >= 0:
        raise ValueError(f"observation noise S must be non-negative, got {s} at t={t}")
    return s


def _initial_state(cfg, rng, size=None):
    x0 = cfg.x0
    if isinstance(x0, str):
        if x0 != "sigma0":
            raise ValueError(f"unknown x0 spec {x0!r}")
        return sample_density(cfg.model.sigma0, 1 if size is None else size, rng)
    if callable(x0):
        return np.asarray(x0(rng), dtype=float)
    return np.full(1 if size is None else size, float(x0))


def simulate_path(cfg):
    """x_{k+1} = x_k + f dt + g sqrt(Q dt) xi_k, y_{k+1} = y_k + h(x_k) dt + sqrt(S dt) eta_k."""
    rng = streams(cfg.seed)
    n = cfg.n_steps
    dt = cfg.dt
    model = cfg.model
    x = np.empty(n + 1)
    y = np.empty(n + 1)
    x[0] = float(np.ravel(_initial_state(cfg, rng["x0"]))[0])
    y[0] = 0.0
    xi = rng["signal"].standard_normal(n)
    eta = rng["observation"].standard_normal(n)
    times = np.arange(n + 1) * dt
    for k in range(n):
        t = times[k]
        xk = x[k : k + 1]
        sq = np.sqrt(model.Qt(t) * dt)
        nxt = xk + _values(model.f, xk, t) * dt + _values(model.g, xk, t) * sq * xi[k]
        if cfg.reflect is not None:
            nxt = _reflect(nxt, cfg.reflect)
        x[k + 1] = nxt[0]
        y[k + 1] = y[k] + _values(model.h, xk, t)[0] * dt + np.sqrt(_sim_noise(model, t) * dt) * eta[k]
        if not (np.isfinite(x[k + 1]) and np.isfinite(y[k + 1])):
            raise SolverBlowUp(f"simulated path blew up at step {k + 1}", time=times[k + 1])
    return Path(times, x, y)


def simulate_ensemble(cfg, seeds):
    """Vectorized simulation of one path per seed; returns (times, x, y) with shape (len(seeds), n+1)."""
    n = cfg.n_steps
    dt = cfg.dt
    model = cfg.model
    m = len(seeds)
    x = np.empty((m, n + 1))
    y = np.zeros((m, n + 1))
    xi = np.empty((m, n))
    eta = np.empty((m, n))
    for i, s in enumerate(seeds):
        rng = streams(s)
        x[i, 0] = float(np.ravel(_initial_state(cfg, rng["x0"]))[0])
        xi[i] = rng["signal"].standard_normal(n)
        eta[i] = rng["observation"].standard_normal(n)
    times = np.arange(n + 1) * dt
    for k in range(n):
        t = times[k]
        xk = x[:, k]
        nxt = xk + _values(model.f, xk, t) * dt + _values(model.g, xk, t) * np.sqrt(model.Qt(t) * dt) * xi[:, k]
        if cfg.reflect is not None:
            nxt = _reflect(nxt, cfg.reflect)
        x[:, k + 1] = nxt
        y[:, k + 1] = y[:, k] + _values(model.h, xk, t) * dt + np.sqrt(_sim_noise(model, t) * dt) * eta[:, k]
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise SolverBlowUp("simulated ensemble has non-finite values")
    return times, x, y


@dataclass(frozen=True, eq=False)
class ParticleCloud:
    positions: np.ndarray
    weights: np.ndarray
    time: float = 0.0
    resampled: bool = False

    def __post_init__(self):
        w = self.weights
        if w.shape != self.positions.shape:
            raise ValueError("positions and weights must have the same shape")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be non-negative and sum to 1")

    @property
    def size(self):
        return self.positions.shape[0]

    @property
    def ess(self):
        return float(1.0 / np.dot(self.weights, self.weights))

    @property
    def mean(self):
        return float(np.dot(self.weights, self.positions))


def init_cloud(model, n_particles, rng):
    pos = sample_density(model.sigma0, n_particles, rng)
    return ParticleCloud(pos, np.full(n_particles, 1.0 / n_particles))


def resample_if_needed(cloud, rng, threshold=0.5):
    """Systematic resampling when ESS < threshold * n."""
    n = cloud.size
    if not cloud.ess < threshold * n:
        return cloud
    idx = systematic_resample(cloud.weights, rng.uniform())
    return ParticleCloud(cloud.positions[idx], np.full(n, 1.0 / n), cloud.time, True)


def weight_step(cloud, y_new, y_prev, model, dt_obs, rng, substeps=1):
    """Propagate by Euler-Maruyama and reweight by exp(h dy / S - h^2 dt / (2S)).

    h is evaluated at the propagated positions; weights are handled in the
    log domain and renormalized.
    """
    x = cloud.positions
    n = cloud.size
    t = cloud.time
    h = dt_obs / substeps
    for _ in range(substeps):
        noise = rng.standard_normal(n)
        x = x + _values(model.f, x, t) * h + _values(model.g, x, t) * np.sqrt(model.Qt(t) * h) * noise
        t = t + h
    s = model.St(t)
    hv = _values(model.h, x, t)
    with np.errstate(divide="ignore"):
        logw = np.log(cloud.weights) + hv * ((y_new - y_prev) / s) - (0.5 * dt_obs / s) * hv * hv
    top = np.max(logw)
    if not np.isfinite(top):
        raise DegenerateWeights(f"all particle weights vanished at t={t:.6g}")
    w = np.exp(logw - top)
    w /= w.sum()
    return ParticleCloud(x, w, t)


def pf_step(cloud, y_new, y_prev, model, dt_obs, rng, resample_rng=None, substeps=1):
    """One bootstrap step: propagate, reweight, resample if ESS < n/2."""
    weighted = weight_step(cloud, y_new, y_prev, model, dt_obs, rng, substeps)
    return resample_if_needed(weighted, resample_rng or rng)


@dataclass(frozen=True, eq=False)
class PFResult:
    times: np.ndarray
    mean: np.ndarray
    ess: np.ndarray
    resampled: np.ndarray

    @property
    def n_resamples(self):
        return int(self.resampled.sum())


def run_pf(model, path, n_particles, dt_obs, seed, substeps=1):
    """Full particle-filter run over a path whose spacing equals ``dt_obs``.

    The estimate recorded at each step is the weighted mean before any
    resampling triggered at that step.
    """
    if abs(path.dt - dt_obs) > 1e-9 * dt_obs:
        raise ValueError(f"path spacing {path.dt} differs from dt_obs={dt_obs}")
    rng = streams(seed)
    cloud = init_cloud(model, n_particles, rng["pf_init"])
    k = len(path.y) - 1
    mean = np.empty(k)
    ess = np.empty(k)
    flag = np.zeros(k, dtype=bool)
    for i in range(1, k + 1):
        weighted = weight_step(cloud, path.y[i], path.y[i - 1], model, dt_obs, rng["pf_propagate"], substeps)
        mean[i - 1] = weighted.mean
        ess[i - 1] = weighted.ess
        cloud = resample_if_needed(weighted, rng["pf_resample"])
        flag[i - 1] = cloud.resampled
    return PFResult(path.times[1:], mean, ess, flag)


def rmse(estimates, truth):
    e = np.asarray(estimates, dtype=float) - np.asarray(truth, dtype=float)
    return float(np.sqrt(np.mean(e * e)))


def kalman_bucy(y, dt, a=0.0, c=1.0, Q=1.0, S=1.0, m0=0.0, P0=1.0, substeps=50):
    """Kalman-Bucy filter for dx = a x dt + dv, dy = c x dt + dw on sampled y.

    Within each interval dy/dt is taken constant (= dy / dt), and the
    mean/variance ODEs are integrated with classical RK4.
    """
    y = np.asarray(y, dtype=float)
    k = len(y) - 1
    m, P = float(m0), float(P0)
    means = np.empty(k)
    var = np.empty(k)
    h = dt / substeps

    def rhs(m, P, ydot):
        return a * m + P * c / S * (ydot - c * m), 2 * a * P + Q - (c * P) ** 2 / S

    for i in range(k):
        ydot = (y[i + 1] - y[i]) / dt
        for _ in range(substeps):
            k1 = rhs(m, P, ydot)
            k2 = rhs(m + 0.5 * h * k1[0], P + 0.5 * h * k1[1], ydot)
            k3 = rhs(m + 0.5 * h * k2[0], P + 0.5 * h * k2[1], ydot)
            k4 = rhs(m + h * k3[0], P + h * k3[1], ydot)
            m += h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            P += h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        means[i] = m
        var[i] = P
    return means, var


def discrete_kalman(y, dt, a=0.0, c=1.0, Q=1.0, S=1.0, m0=0.0, P0=1.0):
    """Exact Bayes filter for the particle filter's own discretization.

    x_{k+1} = (1 + a dt) x_k + sqrt(Q dt) xi, and the weight
    exp(c x dy / S - c^2 x^2 dt / (2S)) is a Gaussian likelihood for the
    pseudo-measurement z = dy / dt = c x + noise of variance S / dt.
    """
    y = np.asarray(y, dtype=float)
    k = len(y) - 1
    F = 1.0 + a * dt
    R = S / dt
    m, P = float(m0), float(P0)
    means = np.empty(k)
    var = np.empty(k)
    for i in range(k):
        m, P = F * m, F * F * P + Q * dt
        z = (y[i + 1] - y[i]) / dt
        gain = P * c / (c * c * P + R)
        m, P = m + gain * (z - c * m), (1.0 - gain * c) * P
        means[i] = m
        var[i] = P
    return means, var
