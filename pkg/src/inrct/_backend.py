"""Select the projector kernel implementation at import time.

The compiled Cython module is preferred; the NumPy fallback is used when it
is missing or when the environment variable ``INRCT_PURE_PYTHON`` is set to
a non-empty value other than ``0``.
"""
import os
import warnings

from . import _joseph_py

_force_py = os.environ.get("INRCT_PURE_PYTHON", "") not in ("", "0")

if _force_py:
    kernels = _joseph_py
    BACKEND = "python"
else:
    try:
        from . import _joseph as kernels
        BACKEND = "cython"
    except ImportError:  # extension not built
        warnings.warn("inrct: compiled projector not available, using the NumPy fallback",
                      RuntimeWarning, stacklevel=2)
        kernels = _joseph_py
        BACKEND = "python"

python_kernels = _joseph_py
