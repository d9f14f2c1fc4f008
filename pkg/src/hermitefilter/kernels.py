"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the NumPy
fallback is. Set ``HERMITEFILTER_PURE=1`` to force the fallback.
"""

import os

from . import _fallback

BACKEND = "python"
hermite_table = _fallback.hermite_table
systematic_resample = _fallback.systematic_resample

if os.environ.get("HERMITEFILTER_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels
    except ImportError:  # extension not built
        pass
    else:
        BACKEND = "cython"
        hermite_table = _kernels.hermite_table
        systematic_resample = _kernels.systematic_resample

__all__ = ["BACKEND", "hermite_table", "systematic_resample"]
