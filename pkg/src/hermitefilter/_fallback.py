"""Pure NumPy versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np

# Rescale the running recurrence whenever a value leaves [1/BIG, BIG].
_BIG = 1e100
_LOG_BIG = np.log(_BIG)


def hermite_table(t, n_modes, log_offset=None):
    """Normalized Hermite functions psi_0..psi_N at points ``t``.

    psi_n(t) = H_n(t) exp(-t^2/2) / sqrt(2^n n!), multiplied by
    ``exp(log_offset)`` when given. The Gaussian factor is carried as a
    log-scale next to the recurrence mantissa, so nothing overflows or
    underflows before the final product.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    m = t.shape[0]
    out = np.empty((m, n_modes + 1))
    scale = -0.5 * t * t
    if log_offset is not None:
        scale = scale + np.asarray(log_offset, dtype=float)
    prev = np.zeros(m)
    cur = np.ones(m)
    with np.errstate(divide="ignore", under="ignore", over="ignore"):
        out[:, 0] = np.exp(scale)
        for n in range(n_modes):
            nxt = np.sqrt(2.0 / (n + 1)) * t * cur - np.sqrt(n / (n + 1.0)) * prev
            prev, cur = cur, nxt
            big = np.abs(cur) > _BIG
            if big.any():
                cur[big] /= _BIG
                prev[big] /= _BIG
                scale[big] += _LOG_BIG
            out[:, n + 1] = np.sign(cur) * np.exp(scale + np.log(np.abs(cur)))
    return out


def systematic_resample(weights, offset):
    """Indices chosen by systematic resampling with one uniform ``offset`` in [0, 1)."""
    weights = np.asarray(weights, dtype=float)
    n = weights.shape[0]
    positions = (offset + np.arange(n)) / n
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    idx = np.searchsorted(cumulative, positions, side="right")
    return np.minimum(idx, n - 1).astype(np.int64)
