import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hermitefilter import _fallback, kernels

try:
    from hermitefilter import _kernels
except ImportError:
    _kernels = None

needs_ext = pytest.mark.skipif(_kernels is None, reason="compiled extension not built")


@needs_ext
@pytest.mark.parametrize("n", [0, 1, 5, 45, 200])
def test_hermite_table_parity(n):
    t = np.linspace(-np.sqrt(2 * n + 1) - 3, np.sqrt(2 * n + 1) + 3, 301)
    a = _fallback.hermite_table(t, n)
    b = _kernels.hermite_table(t, n)
    assert a.shape == b.shape == (301, n + 1)
    np.testing.assert_allclose(b, a, rtol=1e-12, atol=1e-300)


@needs_ext
def test_hermite_table_parity_with_offset():
    t = np.linspace(-30, 30, 121)
    off = np.linspace(-5, 5, 121)
    np.testing.assert_allclose(
        _kernels.hermite_table(t, 60, off), _fallback.hermite_table(t, 60, off), rtol=1e-12, atol=1e-300
    )


@needs_ext
@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=200), st.floats(0.0, 0.999999))
def test_systematic_resample_parity(raw, u):
    w = np.array(raw)
    if w.sum() <= 0:
        w = np.ones_like(w)
    w = w / w.sum()
    assert np.array_equal(_kernels.systematic_resample(w, u), _fallback.systematic_resample(w, u))


def test_backend_reported():
    assert kernels.BACKEND in ("python", "cython")
    if _kernels is not None and os.environ.get("HERMITEFILTER_PURE", "") not in ("1", "true", "yes"):
        assert kernels.BACKEND == "cython"


def test_pure_env_forces_fallback():
    code = "from hermitefilter import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, HERMITEFILTER_PURE="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_fallback_values():
    # without the pi^(-1/4) factor: H_0(0) = 1, H_2(0) / sqrt(8) = -1 / sqrt(2)
    row = _fallback.hermite_table(0.0, 2)[0]
    np.testing.assert_allclose(row, [1.0, 0.0, -1 / np.sqrt(2)], rtol=1e-15, atol=1e-300)
