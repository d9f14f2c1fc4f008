"""Galerkin Hermite discretization of the 1D forward Kolmogorov equation.

The canonical form is

    u_t = nu u_xx + V(x, t) u + F(x, t),

and with u_N = sum a_n(t) H_n the weak form gives a'(t) = A a(t) + f(t),
A = alpha/sqrt(pi) * (-nu S + P(t)), where S is the derivative Gram matrix
and P the potential Gram matrix (the mass matrix is sqrt(pi)/alpha * I).

General equations u_t = p u_xx + q u_x + r u are either reduced to the
canonical form (:func:`canonicalize`) or discretized directly in strong
form (:func:`assemble_general_generator`).
"""

import enum
import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import linalg
from scipy.integrate import cumulative_simpson
from scipy.interpolate import CubicSpline

from .basis import SQRT_PI, CoeffVector, default_rule, node_tables, project
from .errors import LinearSolveError, SolverBlowUp
from .kernels import hermite_table

log = logging.getLogger(__name__)

# Generator entries below this fraction of the largest one count as zero
# when measuring the band.
_BAND_RTOL = 1e-14
_MAX_BANDED = 8


def _as_time_function(value):
    if callable(value):
        return value
    return lambda t, _v=float(value): _v


@dataclass(frozen=True)
class CanonicalFke:
    """u_t = nu u_xx + V(x,t) u + F(x,t).

    ``potential`` and ``source`` take ``(x, t)`` with array ``x``. Set
    ``time_dependent`` when V depends on t so the potential matrix is
    reassembled every step; the source is always re-projected.
    """

    nu: float
    potential: Callable
    source: Optional[Callable] = None
    time_dependent: bool = False
    potential_growth_gamma: Optional[float] = None

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError(f"diffusion coefficient must be positive, got {self.nu}")


def _fd1(fun, x, t, h=1e-5):
    return (fun(x + h, t) - fun(x - h, t)) / (2.0 * h)


def _fd2(fun, x, t, h=1e-4):
    return (fun(x + h, t) - 2.0 * fun(x, t) + fun(x - h, t)) / (h * h)


@dataclass(frozen=True)
class GeneralFke:
    """u_t = p u_xx + q u_x + r u with coefficient functions of (x, t).

    Derivatives that are not supplied are taken by central differences.
    ``S`` is the observation noise intensity when the equation comes from
    a filtering problem; it is only used by diagnostics.
    """

    p: Callable
    q: Callable
    r: Callable
    p_x: Optional[Callable] = None
    p_xx: Optional[Callable] = None
    q_x: Optional[Callable] = None
    time_dependent: bool = False
    S: Optional[Callable] = None

    def dp(self, x, t):
        return self.p_x(x, t) if self.p_x else _fd1(self.p, x, t)

    def dpp(self, x, t):
        return self.p_xx(x, t) if self.p_xx else _fd2(self.p, x, t)

    def dq(self, x, t):
        return self.q_x(x, t) if self.q_x else _fd1(self.q, x, t)


@dataclass(frozen=True, eq=False)
class OperatorMatrices:
    stiffness: np.ndarray
    potential_gram: np.ndarray
    generator: np.ndarray


class Scheme(str, enum.Enum):
    EXPLICIT_CENTRAL = "explicit_central"
    CRANK_NICOLSON = "crank_nicolson"


@dataclass(frozen=True)
class StepperConfig:
    scheme: Scheme = Scheme.CRANK_NICOLSON
    dt: float = 1e-4

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if not self.dt > 0:
            raise ValueError(f"time step must be positive, got {self.dt}")


def _values(fun, x, t):
    return np.broadcast_to(np.asarray(fun(x, t), dtype=float), np.shape(x))


def assemble_stiffness(spec):
    """Gram matrix <H_n', H_m'>: penta-diagonal with bands 0 and +-2."""
    a = spec.alpha
    n = np.arange(spec.size)
    S = np.diag(SQRT_PI * a * (n + 0.5))
    if spec.size > 2:
        l = n[:-2]
        off = -0.5 * a * np.sqrt(np.pi * (l + 1) * (l + 2))
        S += np.diag(off, 2) + np.diag(off, -2)
    return S


class PolynomialPotential:
    """Time-invariant polynomial potential V(x) = sum c_k x^k.

    Callable as ``V(x, t)``; :func:`assemble_potential` assembles it exactly
    from the three-term position operator instead of by quadrature, so
    entries outside the band |n - m| <= degree are exactly zero.
    """

    def __init__(self, coeffs):
        self.poly = np.polynomial.Polynomial(np.asarray(coeffs, dtype=float))

    @property
    def degree(self):
        return self.poly.degree()

    def __call__(self, x, t=0.0):
        return self.poly(np.asarray(x, dtype=float))


def _polynomial_gram(spec, poly):
    d = max(poly.degree(), 0)
    m = spec.size + d
    # (x - beta) H_n in the coefficient basis, on the enlarged space
    k = np.arange(1, m)
    off = np.sqrt(k / 2.0) / spec.alpha
    X = np.diag(off, 1) + np.diag(off, -1)
    local = poly(np.polynomial.Polynomial([spec.beta, 1.0])).coef
    M = np.zeros((m, m))
    for c in local[::-1]:
        M = X @ M
        M[np.diag_indices(m)] += c
    n = spec.size
    P = SQRT_PI / spec.alpha * M[:n, :n]
    return 0.5 * (P + P.T)


def assemble_potential(spec, V, rule=None, t=0.0):
    """Gram matrix <V(., t) H_n, H_m> by quadrature centered at ``spec.beta``.

    A :class:`PolynomialPotential` is assembled exactly instead.
    """
    if isinstance(V, PolynomialPotential):
        return _polynomial_gram(spec, V.poly)
    rule = rule or default_rule(spec)
    x = spec.to_physical(rule.nodes)
    v = _values(V, x, t)
    if not np.all(np.isfinite(v)):
        bad = x[~np.isfinite(v)][0]
        raise ValueError(f"potential is not finite at x={bad} (t={t})")
    psi, weighted = node_tables(spec, rule)
    P = weighted.T @ (v[:, None] * psi) / spec.alpha
    return 0.5 * (P + P.T)


def project_source(spec, F, rule, t):
    if F is None:
        return np.zeros(spec.size)
    return project(lambda x: F(x, t), spec, rule).values


def operator_matrices(spec, fke, rule=None, t=0.0):
    rule = rule or default_rule(spec)
    S = assemble_stiffness(spec)
    P = assemble_potential(spec, fke.potential, rule, t)
    A = spec.alpha / SQRT_PI * (-fke.nu * S + P)
    return OperatorMatrices(S, P, A)


def assemble_generator(spec, fke, rule=None, t=0.0):
    """Mass-inverted generator A with a' = A a + f for the canonical form."""
    if isinstance(fke, GeneralFke):
        return assemble_general_generator(spec, fke, rule, t)
    return operator_matrices(spec, fke, rule, t).generator


def assemble_general_generator(spec, g, rule=None, t=0.0):
    """Strong-form Galerkin generator for u_t = p u_xx + q u_x + r u.

    Entry (m, n) is alpha/sqrt(pi) <p H_n'' + q H_n' + r H_n, H_m>, with
    the derivatives of H_n taken from the three-term relations. Not
    symmetric unless q = p_x.
    """
    rule = rule or default_rule(spec)
    a = spec.alpha
    x = spec.to_physical(rule.nodes)
    ext = hermite_table(rule.nodes, spec.n_modes + 2)
    n = np.arange(spec.size)
    lo = np.zeros((rule.size, spec.size))
    lo[:, 1:] = ext[:, : spec.size - 1]
    hi = ext[:, 1 : spec.size + 1]
    d1 = a * (np.sqrt(n / 2.0) * lo - np.sqrt((n + 1) / 2.0) * hi)
    # H_n'' = alpha^2 (sqrt(n(n-1))/2 H_{n-2} - (n + 1/2) H_n + sqrt((n+1)(n+2))/2 H_{n+2})
    lo2 = np.zeros((rule.size, spec.size))
    if spec.size > 2:
        lo2[:, 2:] = ext[:, : spec.size - 2]
    hi2 = ext[:, 2 : spec.size + 2]
    d2 = a**2 * (
        0.5 * np.sqrt(n * (n - 1.0)) * lo2 - (n + 0.5) * ext[:, : spec.size] + 0.5 * np.sqrt((n + 1.0) * (n + 2.0)) * hi2
    )
    p = _values(g.p, x, t)
    q = _values(g.q, x, t)
    r = _values(g.r, x, t)
    applied = p[:, None] * d2 + q[:, None] * d1 + r[:, None] * ext[:, : spec.size]
    _, weighted = node_tables(spec, rule)
    return weighted.T @ applied / SQRT_PI


def bandwidth(A):
    scale = np.max(np.abs(A)) if A.size else 0.0
    if scale == 0.0:
        return 0
    i, j = np.nonzero(np.abs(A) > _BAND_RTOL * scale)
    return int(np.max(np.abs(i - j)))


def _to_banded(M, bw):
    n = M.shape[0]
    ab = np.zeros((2 * bw + 1, n))
    for k in range(-bw, bw + 1):
        d = np.diagonal(M, k)
        if k >= 0:
            ab[bw - k, k:] = d
        else:
            ab[bw - k, : n + k] = d
    return ab


class _CrankNicolson:
    """Factorized (I - dt/2 A) for repeated solves."""

    def __init__(self, A, dt):
        n = A.shape[0]
        self.lhs = np.eye(n) - 0.5 * dt * A
        self.rhs_op = np.eye(n) + 0.5 * dt * A
        self.bw = bandwidth(A)
        try:
            if self.bw <= _MAX_BANDED:
                self.ab = _to_banded(self.lhs, self.bw)
                self.lu = None
            else:
                self.lu = linalg.lu_factor(self.lhs, check_finite=True)
        except (linalg.LinAlgError, ValueError) as exc:
            raise LinearSolveError(f"Crank-Nicolson matrix is not solvable: {exc}") from exc

    def solve(self, b):
        try:
            if self.lu is None:
                return linalg.solve_banded((self.bw, self.bw), self.ab, b)
            return linalg.lu_solve(self.lu, b)
        except (linalg.LinAlgError, ValueError) as exc:
            raise LinearSolveError(f"Crank-Nicolson solve failed: {exc}") from exc

    def step(self, a, f):
        return self.solve(self.rhs_op @ a + f)


def step(a, a_prev, A, f_hat, cfg):
    """One time step of a' = A a + f.

    ``explicit_central`` is the leapfrog a+ = a- + 2 dt (A a + f) and needs
    ``a_prev`` (pass None on the first step to take a forward-Euler start).
    ``crank_nicolson`` expects ``f_hat`` at the half step.
    """
    a = np.asarray(a, dtype=float)
    f_hat = np.zeros_like(a) if f_hat is None else np.asarray(f_hat, dtype=float)
    if cfg.scheme is Scheme.EXPLICIT_CENTRAL:
        if a_prev is None:
            out = a + cfg.dt * (A @ a + f_hat)
        else:
            out = a_prev + 2.0 * cfg.dt * (A @ a + f_hat)
    else:
        out = _CrankNicolson(A, cfg.dt).step(a, cfg.dt * f_hat)
    if not np.all(np.isfinite(out)):
        raise SolverBlowUp("non-finite coefficients; the explicit time step is probably too large")
    return out


def _n_steps(t0, t1, dt):
    span = t1 - t0
    n = max(int(round(span / dt)), 1)
    return n, span / n


def _integrate(spec, fke, a0, t0, t1, cfg, rule, record_every=None):
    if not t1 > t0:
        raise ValueError(f"need t1 > t0, got ({t0}, {t1})")
    rule = rule or default_rule(spec)
    n, dt = _n_steps(t0, t1, cfg.dt)
    source = getattr(fke, "source", None)
    varying = fke.time_dependent

    def generator(t):
        return assemble_generator(spec, fke, rule, t)

    def forcing(t):
        return project_source(spec, source, rule, t)

    A = generator(t0)
    a = np.array(a0, dtype=float)
    times, traj = [t0], [a.copy()]

    def check(vec, t):
        if not np.all(np.isfinite(vec)):
            raise SolverBlowUp(f"non-finite coefficients at t={t:.6g}", time=t)

    if cfg.scheme is Scheme.CRANK_NICOLSON:
        cn = None if varying else _CrankNicolson(A, dt)
        for k in range(n):
            t = t0 + k * dt
            tm = t + 0.5 * dt
            stepper = _CrankNicolson(generator(tm), dt) if varying else cn
            a = stepper.step(a, dt * forcing(tm))
            check(a, t + dt)
            if record_every and (k + 1) % record_every == 0:
                times.append(t + dt)
                traj.append(a.copy())
    else:
        prev = None
        for k in range(n):
            t = t0 + k * dt
            if varying:
                A = generator(t)
            f = forcing(t)
            if prev is None:
                nxt = a + dt * (A @ a + f)
            else:
                nxt = prev + 2.0 * dt * (A @ a + f)
            prev, a = a, nxt
            check(a, t + dt)
            if record_every and (k + 1) % record_every == 0:
                times.append(t + dt)
                traj.append(a.copy())
    return a, np.array(times), np.array(traj)


def solve(fke, u0, t_span, cfg=StepperConfig(), rule=None):
    """Advance ``u0`` (a CoeffVector) from t_span[0] to t_span[1]."""
    a, _, _ = _integrate(u0.spec, fke, u0.values, t_span[0], t_span[1], cfg, rule)
    return CoeffVector(u0.spec, a)


def solve_trajectory(fke, u0, t_span, cfg=StepperConfig(), rule=None, record_every=1):
    """Like :func:`solve` but also returns (times, coefficient rows) every ``record_every`` steps."""
    a, times, traj = _integrate(u0.spec, fke, u0.values, t_span[0], t_span[1], cfg, rule, record_every)
    return CoeffVector(u0.spec, a), times, traj


@dataclass(frozen=True, eq=False)
class Canonicalization:
    """Result of reducing a general FKE to unit diffusion without drift.

    ``x``/``y`` tabulate the coordinate change y(x) = int_{anchor}^x p^{-1/2};
    ``log_amplitude`` tabulates (1/2) int q~ dy so that
    w(y) = exp(log_amplitude) u(x).
    """

    fke: CanonicalFke
    x: np.ndarray
    y: np.ndarray
    log_amplitude: np.ndarray

    def y_of_x(self, x):
        return self._forward(np.asarray(x, dtype=float))

    def x_of_y(self, y):
        return self._inverse(np.asarray(y, dtype=float))

    def to_canonical(self, u):
        """w as a function of y for a function u of x."""
        def w(y):
            x = self.x_of_y(y)
            return np.exp(self._amp(x)) * u(x)

        return w

    def from_canonical(self, w):
        """u as a function of x for a function w of y."""
        def u(x):
            x = np.asarray(x, dtype=float)
            return np.exp(-self._amp(x)) * w(self.y_of_x(x))

        return u

    def __post_init__(self):
        object.__setattr__(self, "_forward", CubicSpline(self.x, self.y))
        object.__setattr__(self, "_inverse", CubicSpline(self.y, self.x))
        object.__setattr__(self, "_amp", CubicSpline(self.x, self.log_amplitude))


def canonicalize(g, domain_grid, t=0.0, anchor=None):
    """Reduce a time-invariant general FKE to u_t = u_yy + V(y) u.

    With y = int p^{-1/2} dx, q~ = p^{-1/2} (q - p_x / 2) and
    V = -q~^2/4 - (1/2) dq~/dy + r. Integrals are tabulated on ``domain_grid``
    by composite Simpson; ``anchor`` (default the first grid point) is
    where y = 0. Outside the grid the coordinate map is linearly extended.
    """
    if g.time_dependent:
        raise ValueError("canonicalize handles time-invariant coefficients only")
    x = np.asarray(domain_grid, dtype=float)
    if x.ndim != 1 or x.shape[0] < 3 or np.any(np.diff(x) <= 0):
        raise ValueError("domain_grid must be a strictly increasing 1D array with >= 3 points")
    p = _values(g.p, x, t)
    if np.any(p <= 0):
        bad = x[np.argmax(p <= 0)]
        raise ValueError(f"diffusion coefficient p must be positive; p({bad}) = {p[x == bad][0]}")
    anchor = x[0] if anchor is None else float(anchor)

    inv_sqrt_p = p**-0.5
    y = cumulative_simpson(inv_sqrt_p, x=x, initial=0.0)

    def qt(xx):
        return _values(g.p, xx, t) ** -0.5 * (_values(g.q, xx, t) - 0.5 * g.dp(xx, t))

    qtv = qt(x)
    # d/dy = sqrt(p) d/dx
    amp = 0.5 * cumulative_simpson(qtv * inv_sqrt_p, x=x, initial=0.0)
    y_anchor = np.interp(anchor, x, y)
    amp_anchor = np.interp(anchor, x, amp)
    y = y - y_anchor
    amp = amp - amp_anchor
    inverse = CubicSpline(y, x)
    x_lo, x_hi, y_lo, y_hi = x[0], x[-1], y[0], y[-1]
    s_lo, s_hi = np.sqrt(p[0]), np.sqrt(p[-1])

    def x_of_y(yy):
        yy = np.asarray(yy, dtype=float)
        out = inverse(np.clip(yy, y_lo, y_hi))
        out = np.where(yy < y_lo, x_lo + (yy - y_lo) * s_lo, out)
        return np.where(yy > y_hi, x_hi + (yy - y_hi) * s_hi, out)

    def potential(yy, tt, _t=t):
        xx = x_of_y(yy)
        h = 1e-5
        dqt = (qt(xx + h) - qt(xx - h)) / (2.0 * h) * _values(g.p, xx, _t) ** 0.5
        return -0.25 * qt(xx) ** 2 - 0.5 * dqt + _values(g.r, xx, _t)

    fke = CanonicalFke(nu=1.0, potential=potential)
    return Canonicalization(fke, x, y, amp)


def nlf_coefficients(f, g, h, Q=1.0, S=1.0, f_x=None, g_x=None, g_xx=None, killing=True):
    """Coefficients of the filtering FKE u_t = (L - h^2/(2S)) u in general form.

    p = Q g^2 / 2, q = Q (g^2)_x - f, r = -h^2/(2S) + Q (g_x^2 + g g_xx) - f_x.
    All of f, g, h take (x, t); Q and S are constants or functions of t.
    With ``killing=False`` the -h^2/(2S) term is left out (plain L).
    """
    Qf = _as_time_function(Q)
    Sf = _as_time_function(S)
    fx = f_x or (lambda x, t: _fd1(f, x, t))
    gx = g_x or (lambda x, t: _fd1(g, x, t))
    gxx = g_xx or (lambda x, t: _fd2(g, x, t))

    def p(x, t):
        return 0.5 * Qf(t) * _values(g, x, t) ** 2

    def p_x(x, t):
        return Qf(t) * _values(g, x, t) * _values(gx, x, t)

    def p_xx(x, t):
        gv = _values(g, x, t)
        return Qf(t) * (_values(gx, x, t) ** 2 + gv * _values(gxx, x, t))

    def q(x, t):
        return 2.0 * p_x(x, t) - _values(f, x, t)

    def q_x(x, t):
        return 2.0 * p_xx(x, t) - _values(fx, x, t)

    def r(x, t):
        out = p_xx(x, t) - _values(fx, x, t)
        if killing:
            out = out - 0.5 * _values(h, x, t) ** 2 / Sf(t)
        return out

    return GeneralFke(p=p, q=q, r=r, p_x=p_x, p_xx=p_xx, q_x=q_x, S=Sf)


@dataclass(frozen=True)
class ConditionResult:
    name: str
    passed: bool
    value: float
    witness: Optional[float] = None


@dataclass(frozen=True)
class WellPosednessReport:
    conditions: tuple
    gamma: float

    @property
    def passed(self):
        return all(c.passed for c in self.conditions)

    def __getitem__(self, name):
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)


def well_posedness_check(g, grid, t_grid=(0.0,)):
    """Runtime check of the existence/uniqueness hypotheses on sample grids.

    Conditions: ``diffusion`` (min p > 0), ``noise`` (S > 0),
    ``potential_bound`` (r bounded above: its maximum over the outer third
    of the grid must not exceed the maximum over the rest), plus the fitted
    growth exponent gamma with V >~ -(1 + x^2)^gamma, taken as the
    log-log slope of -V against 1 + x^2 over the outer half of the grid.
    """
    x = np.asarray(grid, dtype=float)
    conds = []
    p_min, p_arg, s_min, s_arg = np.inf, None, np.inf, None
    r_max, r_arg = -np.inf, None
    bounded = True
    outer = np.abs(x) > (2.0 / 3.0) * np.max(np.abs(x))
    for t in t_grid:
        pv = _values(g.p, x, t)
        j = int(np.argmin(pv))
        if pv[j] < p_min:
            p_min, p_arg = float(pv[j]), float(x[j])
        if g.S is not None:
            sv = float(g.S(t))
            if sv < s_min:
                s_min, s_arg = sv, float(t)
        rv = _values(g.r, x, t)
        j = int(np.argmax(rv))
        if rv[j] > r_max:
            r_max, r_arg = float(rv[j]), float(x[j])
        if outer.any() and (~outer).any() and rv[outer].max() > rv[~outer].max():
            bounded = False
    conds.append(ConditionResult("diffusion", p_min > 0, p_min, p_arg))
    if g.S is not None:
        conds.append(ConditionResult("noise", s_min > 0, s_min, s_arg))
    conds.append(ConditionResult("potential_bound", bounded, r_max, r_arg))
    gamma = _fit_gamma(g, x, t_grid[0]) if p_min > 0 else float("nan")
    return WellPosednessReport(tuple(conds), gamma)


def _fit_gamma(g, x, t):
    pv = _values(g.p, x, t)
    qv = _values(g.q, x, t)
    if np.allclose(pv, pv[0]) and np.allclose(qv, 0.0):
        # unit diffusion after y = x / sqrt(p); V(y) = r(x)
        y = x / np.sqrt(pv[0])
        V = _values(g.r, x, t)
    else:
        can = canonicalize(g, x, t, anchor=0.0 if x[0] < 0 < x[-1] else None)
        y = can.y
        V = can.fke.potential(y, t)
    far = np.abs(y) >= 0.5 * np.max(np.abs(y))
    neg = far & (V < 0)
    if neg.sum() < 2:
        return 0.0
    slope = np.polyfit(np.log1p(y[neg] ** 2), np.log(-V[neg]), 1)[0]
    return float(max(slope, 0.0))
