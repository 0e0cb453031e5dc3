"""Backend selection for the MLP kernels.

The compiled extension is preferred when importable; otherwise the NumPy
implementation takes over transparently. ``VOLCRAFT_BACKEND=python`` or
``VOLCRAFT_BACKEND=compiled`` forces the choice (forcing an unavailable
compiled backend raises at import).
"""

import os

from volcraft._backends import numpy_backend

_requested = os.environ.get("VOLCRAFT_BACKEND", "").strip().lower()

if _requested == "python":
    kernels = numpy_backend
elif _requested == "compiled":
    from volcraft import _kernels as kernels  # noqa: F401  (ImportError is the contract)
else:
    try:
        from volcraft import _kernels as kernels
    except ImportError:
        kernels = numpy_backend


def active_backend():
    """Name of the kernel backend in use: "compiled" or "python"."""
    return kernels.BACKEND_NAME
