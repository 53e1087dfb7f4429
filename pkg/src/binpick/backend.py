"""Kernel backend selection.

The compiled extension is used when available; set BINPICK_BACKEND=pure to
force the numpy fallback (or =native to require the extension).
"""

import os

from . import _kernels_py

_choice = os.environ.get("BINPICK_BACKEND", "auto").lower()

if _choice == "pure":
    kernels = _kernels_py
    BACKEND = "pure"
else:
    try:
        from . import _native as kernels  # type: ignore[no-redef]
        BACKEND = "native"
    except ImportError:
        if _choice == "native":
            raise
        kernels = _kernels_py
        BACKEND = "pure"


def get_kernels(backend=None):
    """Kernel module by name; None returns the import-time selection."""
    if backend in (None, "auto"):
        return kernels
    if backend == "pure":
        return _kernels_py
    if backend == "native":
        from . import _native
        return _native
    raise ValueError(f"unknown backend {backend!r}")
