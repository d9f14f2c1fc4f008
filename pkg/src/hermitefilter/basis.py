"""Generalized Hermite functions and the spectral operations built on them.

The basis is

    H_n^{alpha,beta}(x) = psi_n(alpha (x - beta)),
    psi_n(t) = H_n(t) exp(-t^2 / 2) / sqrt(2^n n!),

with H_n the physicists' Hermite polynomial. The functions are orthogonal
with <H_n, H_m> = sqrt(pi)/alpha * delta_nm, so a function u is represented
by the coefficients u_n = alpha/sqrt(pi) * <u, H_n>.

All integrals are done in the local variable t = alpha (x - beta) with
Gauss-Hermite quadrature, so every rule is automatically centered on the
basis it serves.
"""

from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Callable, NamedTuple

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .kernels import hermite_table

SQRT_PI = float(np.sqrt(np.pi))
LN10 = float(np.log(10.0))


@dataclass(frozen=True)
class BasisSpec:
    """Scaling ``alpha``, translation ``beta`` and highest retained mode ``n_modes``."""

    alpha: float
    beta: float = 0.0
    n_modes: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not np.isfinite(self.beta):
            raise ValueError(f"beta must be finite, got {self.beta}")
        if int(self.n_modes) != self.n_modes or self.n_modes < 0:
            raise ValueError(f"n_modes must be a non-negative integer, got {self.n_modes}")
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "n_modes", int(self.n_modes))

    @property
    def size(self):
        return self.n_modes + 1

    def eigenvalues(self):
        """Sturm-Liouville eigenvalues 2 alpha^2 n, n = 0..N."""
        return 2.0 * self.alpha**2 * np.arange(self.size)

    def to_local(self, x):
        return self.alpha * (np.asarray(x, dtype=float) - self.beta)

    def to_physical(self, t):
        return self.beta + np.asarray(t, dtype=float) / self.alpha

    def with_beta(self, beta):
        return replace(self, beta=beta)


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Gauss-Hermite rule for the weight exp(-t^2).

    ``modified_weights`` are ``weights * exp(nodes**2)``; use them to
    integrate functions that are not premultiplied by the Gaussian. They
    are built from ``log_modified_weights`` and overflow to inf only for
    rules far larger than any used here.
    """

    nodes: np.ndarray
    weights: np.ndarray
    modified_weights: np.ndarray
    log_modified_weights: np.ndarray

    @property
    def size(self):
        return self.nodes.shape[0]


@dataclass(frozen=True, eq=False)
class CoeffVector:
    """Fourier-Hermite coefficients u_0..u_N attached to a basis."""

    spec: BasisSpec
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        if values.shape[0] != self.spec.size:
            raise ValueError(
                f"expected {self.spec.size} coefficients for n_modes={self.spec.n_modes}, "
                f"got {values.shape[0]}"
            )
        object.__setattr__(self, "values", values)

    def __call__(self, x):
        return evaluate(self, x)

    @classmethod
    def zeros(cls, spec):
        return cls(spec, np.zeros(spec.size))

    @classmethod
    def unit(cls, spec, index):
        values = np.zeros(spec.size)
        values[index] = 1.0
        return cls(spec, values)


@dataclass(frozen=True)
class AsymptoticProfile:
    """Tail shape exp(-p |x|^k) of a density, with p > 0 and k >= 2."""

    p: float
    k: float = 2.0

    def __post_init__(self):
        if not self.p > 0:
            raise ValueError(f"p must be positive, got {self.p}")
        if not self.k >= 2:
            raise ValueError(f"k must be >= 2, got {self.k}")

    def __call__(self, x):
        return np.exp(-self.p * np.abs(np.asarray(x, dtype=float)) ** self.k)


@dataclass(frozen=True)
class Translated:
    """``shape(x - center)``.

    Sampling routines evaluate the shape at ``t/alpha + (beta - center)``
    instead of forming ``x`` first, which makes results exactly invariant
    when the basis and the function are shifted by the same amount.
    """

    shape: Callable
    center: float

    def __call__(self, x):
        return self.shape(np.asarray(x, dtype=float) - self.center)


class ScalingChoice(NamedTuple):
    alpha: float
    half_width: float
    n_modes: int


@lru_cache(maxsize=128)
def gauss_hermite_rule(m):
    """The ``m``-point Gauss-Hermite rule.

    Nodes come from the Golub-Welsch eigenvalue problem and are polished
    with Newton steps on psi_m. Weights use the closed form
    w_j exp(t_j^2) = sqrt(pi) / (m psi_{m-1}(t_j)^2), evaluated in log space.
    """
    m = int(m)
    if m < 1:
        raise ValueError(f"quadrature needs at least one node, got m={m}")
    if m == 1:
        nodes = np.zeros(1)
    else:
        offdiag = np.sqrt(np.arange(1, m) / 2.0)
        nodes = eigh_tridiagonal(np.zeros(m), offdiag, eigvals_only=True)
        for _ in range(2):
            table = hermite_table(nodes, m)
            slope = np.sqrt(2.0 * m) * table[:, m - 1] - nodes * table[:, m]
            nodes = nodes - table[:, m] / slope
        nodes = 0.5 * (nodes - nodes[::-1])
    last = hermite_table(nodes, m - 1)[:, m - 1]
    log_mw = 0.5 * np.log(np.pi) - np.log(m) - 2.0 * np.log(np.abs(last))
    with np.errstate(over="ignore"):
        mw = np.exp(log_mw)
    weights = np.exp(log_mw - nodes**2)
    for arr in (nodes, weights, mw, log_mw):
        arr.setflags(write=False)
    return QuadratureRule(nodes, weights, mw, log_mw)


def default_rule(spec, factor=2):
    return gauss_hermite_rule(factor * spec.size)


@lru_cache(maxsize=256)
def _node_tables(n_modes, m):
    rule = gauss_hermite_rule(m)
    psi = hermite_table(rule.nodes, n_modes)
    weighted = hermite_table(rule.nodes, n_modes, rule.log_modified_weights)
    psi.setflags(write=False)
    weighted.setflags(write=False)
    return psi, weighted


def node_tables(spec, rule):
    """(psi, weighted) tables at the rule's nodes, shape (M, N+1).

    ``weighted[j, n] = modified_weights[j] * psi_n(t_j)`` is formed without
    overflow. Both depend only on N and M, so they are cached.
    """
    return _node_tables(spec.n_modes, rule.size)


def sample(f, spec, t):
    """Values of ``f`` at the physical points of local coordinates ``t``."""
    t = np.asarray(t, dtype=float)
    if isinstance(f, Translated):
        vals = f.shape(t / spec.alpha + (spec.beta - f.center))
    else:
        vals = f(spec.beta + t / spec.alpha)
    return np.broadcast_to(np.asarray(vals, dtype=float), t.shape)


def eval_functions(spec, x):
    """[H_0(x), ..., H_N(x)]; for array ``x`` the result has shape x.shape + (N+1,)."""
    x = np.asarray(x, dtype=float)
    table = hermite_table(spec.to_local(x).reshape(-1), spec.n_modes)
    return table.reshape(x.shape + (spec.size,))


def project(f, spec, rule=None):
    """Fourier-Hermite coefficients of ``f`` by Gauss-Hermite quadrature.

    Parameters
    ----------
    f : callable
        Vectorized function of x (or a :class:`Translated`).
    spec : BasisSpec
    rule : QuadratureRule, optional
        Defaults to 2(N+1) nodes. Must have at least N+1 nodes.
    """
    rule = rule or default_rule(spec)
    if rule.size < spec.size:
        raise ValueError(
            f"quadrature with {rule.size} nodes cannot resolve {spec.size} modes"
        )
    _, weighted = node_tables(spec, rule)
    vals = sample(f, spec, rule.nodes)
    return CoeffVector(spec, weighted.T @ vals / SQRT_PI)


def evaluate(coeffs, x):
    """sum_n u_n H_n(x), scalar in gives scalar out."""
    x = np.asarray(x, dtype=float)
    out = eval_functions(coeffs.spec, x) @ coeffs.values
    return float(out) if out.ndim == 0 else out


def differentiate(coeffs):
    """Coefficients of d/dx u, truncated at the same N.

    Uses H_n' = alpha (sqrt(n/2) H_{n-1} - sqrt((n+1)/2) H_{n+1}). The
    contribution of u_N to mode N+1 is dropped (Galerkin truncation).
    """
    u = coeffs.values
    a = coeffs.spec.alpha
    n = np.arange(u.shape[0])
    out = np.zeros_like(u)
    out[:-1] += a * np.sqrt((n[:-1] + 1) / 2.0) * u[1:]
    out[1:] -= a * np.sqrt(n[1:] / 2.0) * u[:-1]
    return CoeffVector(coeffs.spec, out)


def multiply_by_shifted_x(coeffs):
    """Coefficients of (x - beta) u, truncated at the same N."""
    u = coeffs.values
    a = coeffs.spec.alpha
    n = np.arange(u.shape[0])
    out = np.zeros_like(u)
    out[:-1] += np.sqrt(2.0 * (n[:-1] + 1)) * u[1:]
    out[1:] += np.sqrt(2.0 * n[1:]) * u[:-1]
    return CoeffVector(coeffs.spec, out / (2.0 * a))


def l2_norm(coeffs):
    return float(np.sqrt(SQRT_PI / coeffs.spec.alpha * np.dot(coeffs.values, coeffs.values)))


def sobolev_norm(coeffs, r):
    """Weighted norm with weights lambda_{n+1}^r, lambda_k = 2 alpha^2 k."""
    if int(r) != r or r < 0:
        raise ValueError(f"r must be a non-negative integer, got {r}")
    lam = 2.0 * coeffs.spec.alpha**2 * np.arange(1, coeffs.spec.size + 1)
    return float(np.sqrt(np.sum(lam**r * coeffs.values**2)))


def l2_error(f, coeffs, ref_rule=None):
    """||f - u|| in L^2 for the expansion ``coeffs``, by quadrature on ``ref_rule``.

    The rule defaults to 4(N+1) nodes centered at ``coeffs.spec.beta``.
    """
    spec = coeffs.spec
    rule = ref_rule or default_rule(spec, factor=4)
    psi = _node_tables(spec.n_modes, rule.size)[0]
    resid = sample(f, spec, rule.nodes) - psi @ coeffs.values
    scaled = np.exp(0.5 * rule.log_modified_weights) * resid
    return float(np.sqrt(np.dot(scaled, scaled) / spec.alpha))


def truncation_error(f, spec, ref_rule=None):
    """||f - P_N f||, with the projection and the norm both taken on ``ref_rule``."""
    rule = ref_rule or default_rule(spec, factor=4)
    return l2_error(f, project(f, spec, rule), rule)


def choose_scaling(profile):
    """Scaling factor, domain half-width and truncation for a tail exp(-p|x|^k).

    Gaussian tails (k = 2) match exp(-alpha^2 x^2 / 2) directly; heavier
    decay (k > 2) matches the Gaussian envelope at the edge of the domain
    where it reaches 1e-16. N is the smallest value for which the largest
    zero of H_{N+1} reaches alpha * L.
    """
    p, k = float(profile.p), float(profile.k)
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if k == 2:
        alpha = np.sqrt(2.0 * p)
        half_width = np.sqrt(8.0 * LN10 / p)
    else:
        half_width = (16.0 * LN10 / p) ** (1.0 / k)
        alpha = 2.0 ** (2.5 - 4.0 / k) * p ** (1.0 / k) * LN10 ** (0.5 - 1.0 / k)
    target = alpha * half_width
    n_modes = 0
    while gauss_hermite_rule(n_modes + 1).nodes[-1] < target:
        n_modes += 1
    return ScalingChoice(float(alpha), float(half_width), n_modes)


def rebase(coeffs, new_spec, rule=None):
    """Re-expand the function held by ``coeffs`` in another basis (lossy)."""
    return project(coeffs, new_spec, rule)


def rebase_loss(coeffs, new_spec, ref_rule=None):
    """L^2 norm of the part of ``coeffs`` that ``new_spec`` cannot represent."""
    return truncation_error(coeffs, new_spec, ref_rule)


def moment_vectors(spec):
    """Exact integrals of the basis: (int H_n dx, int x H_n dx), n = 0..N.

    From int psi_n' = 0: m_{n+1} = sqrt(n/(n+1)) m_{n-1}, m_0 = sqrt(2 pi),
    m_1 = 0; first moments follow from the three-term recurrence.
    """
    size = spec.size + 1
    m = np.zeros(size)
    m[0] = np.sqrt(2.0 * np.pi)
    for n in range(1, size - 1):
        m[n + 1] = np.sqrt(n / (n + 1.0)) * m[n - 1]
    n = np.arange(spec.size)
    first = np.sqrt(n / 2.0) * np.concatenate(([0.0], m[: spec.size - 1])) + np.sqrt(
        (n + 1) / 2.0
    ) * m[1 : spec.size + 1]
    a = spec.alpha
    mass = m[: spec.size] / a
    return mass, spec.beta * mass + first / a**2
