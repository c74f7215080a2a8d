"""Kernel backend selection.

The compiled extension is used when importable; set
``MFGMAJOR_PURE_PYTHON=1`` to force the numpy fallback.
"""

import os

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

if _compiled is not None and not os.environ.get("MFGMAJOR_PURE_PYTHON"):
    kernels = _compiled
else:
    kernels = _kernels_py

BACKEND = kernels.BACKEND


def get_kernels(name=None):
    """Return the kernel module ``"compiled"``, ``"python"`` or the active one."""
    if name is None:
        return kernels
    if name == "python":
        return _kernels_py
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not available")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def compiled_available():
    return _compiled is not None
