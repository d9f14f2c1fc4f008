"""Real-time nonlinear filter: offline propagators, online predict/correct.

Between observation times the unnormalized density solves the filtering
FKE u_t = (L - h^2/(2S)) u. Its solution operator over one observation
interval is a fixed matrix on the truncated Hermite space, computed once
per window (offline). Online, each step is one matrix-vector product
(predict) followed by the pointwise factor exp(h (y_new - y_old) / S)
(correct), so only the latest observation increment is needed.

Where the killing term -h^2/(2S) is applied is a bank setting. With
``killing="correction"`` (default) the propagator solves u_t = L u and the
correction multiplies by exp(h dy / S - h^2 dt / (2S)), a factor bounded by
exp(dy^2 / (2 S dt)) at every node. With ``killing="propagator"`` the
propagator includes the killing term and the correction is exp(h dy / S)
alone; that factor is unbounded in x and amplifies the expansion's tail
error, so node values are clipped at zero before multiplying.

A window is a translated basis H_n^{alpha, beta_j}. When the state
estimate drifts more than ``shift_threshold`` from the current center,
the expansion is re-projected onto the nearest window.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .basis import (
    AsymptoticProfile,
    BasisSpec,
    CoeffVector,
    Translated,
    choose_scaling,
    default_rule,
    gauss_hermite_rule,
    l2_error,
    moment_vectors,
    node_tables,
    project,
    rebase,
    rebase_loss,
    truncation_error,
)
from .errors import (
    DomainExhausted,
    FilterDivergence,
    HermiteFilterError,
    ObservationOutlier,
    SolverBlowUp,
    ToleranceUnreachable,
)
from .fke import (
    CanonicalFke,
    Scheme,
    StepperConfig,
    _CrankNicolson,
    _n_steps,
    _values,
    assemble_generator,
    nlf_coefficients,
)

log = logging.getLogger(__name__)

# Largest exponent exp() can take in double precision, with margin.
MAX_EXPONENT = 700.0

KILLING_MODES = ("correction", "propagator")


def _const(value):
    if callable(value):
        return value
    return lambda t, _v=float(value): _v


@dataclass(frozen=True)
class ObservationModel:
    """dx = f dt + g dv, dy = h dt + dw with E[dv^2] = Q dt, E[dw^2] = S dt.

    ``f``, ``g``, ``h`` take (x, t) with array x; ``Q`` and ``S`` are
    constants or functions of t. ``sigma0`` is the (unnormalized) initial
    density. Derivatives of f and g may be supplied; otherwise they are
    taken by central differences.
    """

    f: Callable
    g: Callable
    h: Callable
    sigma0: Callable
    Q: object = 1.0
    S: object = 1.0
    f_x: Optional[Callable] = None
    g_x: Optional[Callable] = None
    g_xx: Optional[Callable] = None
    time_dependent: bool = False

    def Qt(self, t):
        return float(_const(self.Q)(t))

    def St(self, t):
        s = float(_const(self.S)(t))
        if not s > 0:
            raise ValueError(f"observation noise S must be positive, got {s} at t={t}")
        return s

    def fke(self, killing=True):
        """The filtering FKE in general form (``killing=False``: without -h^2/(2S))."""
        g = nlf_coefficients(
            self.f, self.g, self.h, self.Q, self.S,
            f_x=self.f_x, g_x=self.g_x, g_xx=self.g_xx, killing=killing,
        )
        return replace(g, time_dependent=self.time_dependent)


def _zero(x, t):
    return np.zeros_like(np.asarray(x, dtype=float))


def _one(x, t):
    return np.ones_like(np.asarray(x, dtype=float))


def additive_noise_model(h, sigma0, f=None, Q=1.0, S=1.0, f_x=None):
    """Model with g = 1, the setting of all the built-in experiments."""
    return ObservationModel(
        f=f or _zero, g=_one, h=h, sigma0=sigma0, Q=Q, S=S,
        f_x=f_x or (None if f else _zero), g_x=_zero, g_xx=_zero,
    )


def _window_fke(model, spec, rule, killing=True, t=0.0):
    """Canonical form when diffusion is constant and drift vanishes, else general form."""
    g = model.fke(killing)
    x = spec.to_physical(rule.nodes)
    p = _values(g.p, x, t)
    q = _values(g.q, x, t)
    if not model.time_dependent and np.ptp(p) <= 1e-14 * abs(p[0]) and np.all(np.abs(q) <= 1e-14):
        return CanonicalFke(nu=float(p[0]), potential=g.r)
    return g


@dataclass(frozen=True, eq=False)
class Window:
    spec: BasisSpec
    propagator: np.ndarray
    rule: object

    def __post_init__(self):
        if not np.all(np.isfinite(self.propagator)):
            raise SolverBlowUp(f"propagator for window beta={self.spec.beta} has non-finite entries")

    @property
    def beta(self):
        return self.spec.beta

    def propagator_at(self, step):
        """Matrix for observation interval ``step`` (0-based)."""
        if self.propagator.ndim == 2:
            return self.propagator
        return self.propagator[min(step, self.propagator.shape[0] - 1)]


@dataclass(frozen=True, eq=False)
class WindowBank:
    windows: tuple
    half_width: float
    overlap: float
    shift_threshold: float
    dt_obs: float
    stepper: StepperConfig = StepperConfig()
    tolerance: float = 1e-5
    killing: str = "correction"
    domain: Optional[tuple] = None

    def __post_init__(self):
        if self.killing not in KILLING_MODES:
            raise ValueError(f"killing must be one of {KILLING_MODES}, got {self.killing!r}")
        if not self.windows:
            raise ValueError("a window bank needs at least one window")
        sizes = {w.spec.size for w in self.windows}
        if len(sizes) != 1:
            raise ValueError("all windows must share n_modes")

    @property
    def spec(self):
        return self.windows[0].spec

    @property
    def betas(self):
        return np.array([w.beta for w in self.windows])

    @property
    def n_windows(self):
        return len(self.windows)

    @property
    def storage(self):
        """Number of stored floating-point propagator entries."""
        return sum(w.propagator.size for w in self.windows)

    @property
    def covered(self):
        """Union of the windows and the declared state domain."""
        b = self.betas
        lo, hi = float(b.min() - self.half_width), float(b.max() + self.half_width)
        if self.domain is not None:
            lo, hi = min(lo, float(self.domain[0])), max(hi, float(self.domain[1]))
        return lo, hi

    def nearest(self, x):
        return int(np.argmin(np.abs(self.betas - x)))


@dataclass(frozen=True, eq=False)
class FilterState:
    """Online filter state; operations return new states."""

    window_index: int
    coeffs: CoeffVector
    last_y: float = 0.0
    time: float = 0.0
    step: int = 0
    shift_count: int = 0
    log_normalizers: tuple = ()

    @property
    def log_scale(self):
        """Sum of removed log-normalizers: sigma = exp(log_scale) * u."""
        return float(np.sum(self.log_normalizers))


class StateEstimate(tuple):
    """(mean, mass) pair."""

    def __new__(cls, mean, mass):
        return super().__new__(cls, (mean, mass))

    mean = property(lambda self: self[0])
    mass = property(lambda self: self[1])


def _propagate_identity(A_of_t, size, t0, t1, stepper):
    """Matrix solution operator of a' = A(t) a from t0 to t1."""
    n, dt = _n_steps(t0, t1, stepper.dt)
    eye = np.eye(size)
    A0 = A_of_t(t0)
    varying = A_of_t is not None and getattr(A_of_t, "varying", False)
    if stepper.scheme is Scheme.CRANK_NICOLSON:
        if not varying:
            R = _CrankNicolson(A0, dt).solve(eye + 0.5 * dt * A0)
            return np.linalg.matrix_power(R, n)
        Phi = eye
        for k in range(n):
            Phi = _CrankNicolson(A_of_t(t0 + (k + 0.5) * dt), dt).step(Phi, 0.0)
        return Phi
    prev, cur = None, eye
    for k in range(n):
        A = A_of_t(t0 + k * dt) if varying else A0
        nxt = cur + dt * (A @ cur) if prev is None else prev + 2.0 * dt * (A @ cur)
        prev, cur = cur, nxt
    return cur


def precompute_propagator(spec, fke, dt_obs, stepper=StepperConfig(), rule=None, t0=0.0):
    """Matrix of the FKE solution operator over ``dt_obs`` on span{H_0..H_N}.

    Column l holds the coefficients at t0 + dt_obs of the solution started
    from H_l. Time-dependent equations are integrated with the generator
    reassembled at every substep.
    """
    if dt_obs < 0:
        raise ValueError(f"dt_obs must be non-negative, got {dt_obs}")
    if dt_obs == 0:
        return np.eye(spec.size)
    rule = rule or default_rule(spec)

    def A_of_t(t):
        return assemble_generator(spec, fke, rule, t)

    A_of_t.varying = bool(fke.time_dependent)
    Phi = _propagate_identity(A_of_t, spec.size, t0, t0 + dt_obs, stepper)
    bad = ~np.all(np.isfinite(Phi), axis=0)
    if bad.any():
        col = int(np.argmax(bad))
        raise SolverBlowUp(f"propagator column {col} blew up", column=col)
    return Phi


def precompute_propagator_table(spec, fke, dt_obs, n_intervals, stepper=StepperConfig(), rule=None):
    """One propagator per observation interval, for time-varying equations."""
    return np.stack(
        [precompute_propagator(spec, fke, dt_obs, stepper, rule, t0=k * dt_obs) for k in range(n_intervals)]
    )


def window_half_width(profile, spec, tolerance, offset_step=0.5, max_offset=None):
    """Largest peak offset p0 (on a grid of ``offset_step``) whose truncation
    error of exp(-p|x - p0|^k) in the untranslated basis stays below ``tolerance``."""
    shape = AsymptoticProfile(profile.p, profile.k)
    base = spec.with_beta(0.0)
    if truncation_error(shape, base) >= tolerance:
        raise ToleranceUnreachable(
            f"truncation error at offset 0 already exceeds tolerance {tolerance:g}; increase n_modes"
        )
    max_offset = max_offset if max_offset is not None else 10.0 * spec.n_modes / spec.alpha + 10.0
    width = 0.0
    p0 = offset_step
    while p0 <= max_offset and truncation_error(Translated(shape, p0), base) < tolerance:
        width = p0
        p0 += offset_step
    return width


def window_centers(domain, half_width, overlap):
    """Centers symmetric about 0, spaced 2 L_w - overlap, covering ``domain``."""
    lo, hi = domain
    spacing = 2.0 * half_width - overlap
    if not spacing > 0:
        raise ValueError("overlap must be smaller than the window width")
    reach = max(abs(lo), abs(hi))
    j = 0
    while j * spacing + half_width <= reach:
        j += 1
    return [k * spacing for k in range(-j, j + 1)]


def build_window_bank(
    model,
    profile,
    domain,
    tolerance,
    dt_obs,
    stepper=StepperConfig(),
    overlap=0.5,
    offset_step=0.5,
    n_modes=None,
    alpha=None,
    shift_threshold=None,
    n_intervals=None,
    workers=None,
    betas=None,
    killing="correction",
    correction_nodes=None,
):
    """Offline stage: choose the basis, lay out windows, precompute propagators.

    Parameters
    ----------
    model : ObservationModel
    profile : AsymptoticProfile
        Tail behaviour of the conditional density; drives alpha and N.
    domain : (float, float)
        State range the windows must cover.
    tolerance : float
        Truncation-error budget that fixes the window half-width.
    dt_obs : float
        Observation interval.
    n_modes, alpha : optional overrides of the guideline values.
    shift_threshold : float, optional
        Defaults to the half-width.
    n_intervals : int, optional
        Required for time-varying models: number of propagators per window.
    betas : sequence of float, optional
        Explicit window centers (e.g. ``[0.0]`` when the state is known to
        stay in one window). The half-width is still computed and reported;
        with a single explicit window the shift threshold defaults to inf.
    killing : {"correction", "propagator"}
        Where -h^2/(2S) is applied (see module docstring).
    correction_nodes : int, optional
        Size of the Gauss-Hermite rule used by the correction step;
        defaults to 2(N+1).
    workers : int, optional
        Build windows concurrently (results do not depend on it).
    """
    choice = choose_scaling(profile)
    spec0 = BasisSpec(alpha or choice.alpha, 0.0, choice.n_modes if n_modes is None else n_modes)
    half_width = window_half_width(profile, spec0, tolerance, offset_step)
    if half_width <= 0:
        raise ToleranceUnreachable(f"no positive window half-width meets tolerance {tolerance:g}")
    if killing not in KILLING_MODES:
        raise ValueError(f"killing must be one of {KILLING_MODES}, got {killing!r}")
    if shift_threshold is None:
        shift_threshold = np.inf if betas is not None and len(betas) == 1 else half_width
    if betas is None:
        betas = window_centers(domain, half_width, overlap)
    betas = [float(b) for b in betas]
    if model.time_dependent and not n_intervals:
        raise ValueError("time-varying models need n_intervals")

    def build(beta):
        spec = spec0.with_beta(beta)
        rule = default_rule(spec)
        fke = _window_fke(model, spec, rule, killing == "propagator")
        if model.time_dependent:
            Phi = precompute_propagator_table(spec, fke, dt_obs, n_intervals, stepper, rule)
        else:
            Phi = precompute_propagator(spec, fke, dt_obs, stepper, rule)
        crule = gauss_hermite_rule(correction_nodes) if correction_nodes else rule
        return Window(spec, Phi, crule)

    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            windows = tuple(pool.map(build, betas))
    else:
        windows = tuple(build(b) for b in betas)
    return WindowBank(
        windows=windows,
        half_width=half_width,
        overlap=overlap,
        shift_threshold=float(shift_threshold),
        dt_obs=dt_obs,
        stepper=stepper,
        tolerance=tolerance,
        killing=killing,
        domain=(float(domain[0]), float(domain[1])),
    )


def _density_mean(fun, lo, hi, n=20001):
    x = np.linspace(lo, hi, n)
    v = np.asarray(fun(x), dtype=float)
    mass = np.trapezoid(v, x)
    if not mass > 0:
        raise FilterDivergence("initial density has non-positive mass on the covered domain")
    return float(np.trapezoid(x * v, x) / mass)


def init_filter(bank, model):
    """Project sigma0 onto the window nearest its mean; y_0 = 0, t = 0."""
    lo, hi = bank.covered
    pad = 2.0 * bank.half_width
    mean = _density_mean(model.sigma0, lo - pad, hi + pad)
    j = bank.nearest(mean)
    w = bank.windows[j]
    coeffs = project(model.sigma0, w.spec, w.rule)
    err = l2_error(model.sigma0, coeffs)
    scale = _l2(model.sigma0, w.spec)
    if scale > 0 and err / scale > bank.tolerance:
        raise ToleranceUnreachable(
            f"initial density loses {err / scale:.3g} (relative L2) in window beta={w.beta}, "
            f"above tolerance {bank.tolerance:g}"
        )
    mass_vec, _ = moment_vectors(w.spec)
    mass = float(mass_vec @ coeffs.values)
    if not mass > 0:
        raise FilterDivergence("initial density projects to non-positive mass")
    return FilterState(window_index=j, coeffs=CoeffVector(w.spec, coeffs.values / mass),
                       log_normalizers=(float(np.log(mass)),))


def _l2(f, spec):
    rule = default_rule(spec, factor=4)
    vals = np.asarray(f(spec.to_physical(rule.nodes)), dtype=float)
    scaled = np.exp(0.5 * rule.log_modified_weights) * vals
    return float(np.sqrt(np.dot(scaled, scaled) / spec.alpha))


def predict(state, bank):
    """coeffs <- Phi coeffs over one observation interval."""
    w = bank.windows[state.window_index]
    out = w.propagator_at(state.step) @ state.coeffs.values
    if not np.all(np.isfinite(out)):
        raise SolverBlowUp(f"non-finite prediction at t={state.time + bank.dt_obs:.6g}; bank is corrupted")
    return replace(
        state,
        coeffs=CoeffVector(w.spec, out),
        time=state.time + bank.dt_obs,
        step=state.step + 1,
    )


def likelihood_exponent(x, t, dy, dt, model, killing="correction"):
    """log of the pointwise correction factor at physical points ``x``."""
    hv = _values(model.h, x, t)
    s = model.St(t)
    out = hv * (dy / s)
    if killing == "correction":
        out = out - (0.5 * dt / s) * hv * hv
    return out


def correct(state, y_new, bank, model):
    """Multiply by the likelihood factor at the quadrature nodes and re-project.

    The factor is exp(h dy / S) times exp(-h^2 dt / (2S)) when the bank
    applies the killing term here, with dy = y_new - last_y and h, S taken
    at the current time. The result is rescaled to unit mass; the log of the
    removed factor is appended to ``log_normalizers``.
    """
    w = bank.windows[state.window_index]
    spec = w.spec
    x = spec.to_physical(w.rule.nodes)
    t = state.time
    expo = likelihood_exponent(x, t, y_new - state.last_y, bank.dt_obs, model, bank.killing)
    worst = float(np.max(np.abs(expo)))
    if not worst <= MAX_EXPONENT:
        raise ObservationOutlier(
            f"likelihood exponent {worst:.3g} exceeds {MAX_EXPONENT:g} at t={t:.6g}"
        )
    psi, weighted = node_tables(spec, w.rule)
    u = psi @ state.coeffs.values
    if bank.killing == "propagator":
        u = np.maximum(u, 0.0)
    values = weighted.T @ (u * np.exp(expo)) / np.sqrt(np.pi)
    mass_vec, _ = moment_vectors(spec)
    mass = float(mass_vec @ values)
    if not mass > 0:
        raise FilterDivergence(f"non-positive mass {mass:.3g} after correction at t={t:.6g}")
    return replace(
        state,
        coeffs=CoeffVector(spec, values / mass),
        last_y=float(y_new),
        log_normalizers=state.log_normalizers + (float(np.log(mass)),),
    )


def estimate_state(state, bank=None):
    """Conditional mean and mass of the current expansion (exact integrals)."""
    mass_vec, first_vec = moment_vectors(state.coeffs.spec)
    mass = float(mass_vec @ state.coeffs.values)
    if not mass > 0:
        raise FilterDivergence(f"non-positive mass {mass:.3g} at t={state.time:.6g}")
    return StateEstimate(float(first_vec @ state.coeffs.values) / mass, mass)


def maybe_shift_window(state, bank):
    """Move to the window nearest the mean once it is farther than the threshold."""
    mean, _ = estimate_state(state)
    current = bank.windows[state.window_index]
    if abs(mean - current.beta) <= bank.shift_threshold:
        return state
    lo, hi = bank.covered
    if not lo <= mean <= hi:
        raise DomainExhausted(f"state estimate {mean:.4g} left the covered domain [{lo:.4g}, {hi:.4g}]")
    j = bank.nearest(mean)
    if j == state.window_index:
        return state
    target = bank.windows[j]
    coeffs = rebase(state.coeffs, target.spec, target.rule)
    if log.isEnabledFor(logging.DEBUG):
        log.debug(
            "t=%.4f shift beta %.3g -> %.3g, rebase loss %.3g",
            state.time, current.beta, target.beta, rebase_loss(state.coeffs, target.spec),
        )
    return replace(state, window_index=j, coeffs=coeffs, shift_count=state.shift_count + 1)


@dataclass(frozen=True, eq=False)
class OnlineResult:
    times: np.ndarray
    mean: np.ndarray
    mass: np.ndarray
    window_index: np.ndarray
    shift_count: np.ndarray
    flops: int
    final_state: FilterState
    snapshot_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    snapshot_grid: np.ndarray = field(default_factory=lambda: np.zeros(0))
    snapshots: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    @property
    def shifts(self):
        return int(self.shift_count[-1]) if self.shift_count.size else 0


def run_online(bank, model, observations, recover_density=False, snapshot_every=None, grid=None, state=None):
    """Run predict -> correct -> estimate -> shift over an observation series.

    ``observations`` are cumulative y at t = 0, dt_obs, 2 dt_obs, ... with
    y[0] = 0. The flop count is (steps + shifts) (N+1)^2, one matrix-vector
    product per prediction and one per re-projection. With
    ``recover_density`` the normalized density u / max u is sampled on
    ``grid`` every ``snapshot_every`` steps.
    """
    y = np.asarray(observations, dtype=float)
    if y.ndim != 1 or y.shape[0] < 1:
        raise ValueError("observations must be a 1D series starting at y_0")
    if y[0] != 0.0:
        raise ValueError(f"observation series must start at y_0 = 0, got {y[0]}")
    state = state or init_filter(bank, model)
    k = y.shape[0] - 1
    size = bank.spec.size
    times = np.empty(k)
    means = np.empty(k)
    masses = np.empty(k)
    windows = np.empty(k, dtype=np.int64)
    shifts = np.empty(k, dtype=np.int64)
    snaps, snap_t = [], []
    if recover_density:
        snapshot_every = snapshot_every or max(int(round(1.0 / bank.dt_obs)), 1)
        if grid is None:
            lo, hi = bank.covered
            grid = np.linspace(lo, hi, 601)
    for i in range(1, k + 1):
        try:
            state = predict(state, bank)
            state = correct(state, y[i], bank, model)
            est = estimate_state(state)
            state = maybe_shift_window(state, bank)
        except HermiteFilterError as exc:
            raise exc.at_step(i)
        times[i - 1] = state.time
        means[i - 1] = est.mean
        masses[i - 1] = est.mass
        windows[i - 1] = state.window_index
        shifts[i - 1] = state.shift_count
        if recover_density and i % snapshot_every == 0:
            u = state.coeffs(grid)
            top = np.max(u)
            snaps.append(u / top if top > 0 else u)
            snap_t.append(state.time)
    flops = (k + state.shift_count) * size * size
    extra = {}
    if recover_density:
        extra = dict(
            snapshot_times=np.array(snap_t),
            snapshot_grid=np.asarray(grid, dtype=float),
            snapshots=np.array(snaps).reshape(len(snaps), np.size(grid)),
        )
    return OnlineResult(times, means, masses, windows, shifts, flops, state, **extra)


def kernel_mean_oracle(state, n_grid=20001):
    """Mean by dense trapezoid on the expansion (independent of the moment formulas)."""
    spec = state.coeffs.spec
    x = np.linspace(spec.beta - 40.0 / spec.alpha, spec.beta + 40.0 / spec.alpha, n_grid)
    u = state.coeffs(x)
    return float(np.trapezoid(x * u, x) / np.trapezoid(u, x))
