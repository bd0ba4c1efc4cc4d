"""Backend selection for the solver inner loops.

The compiled extension is used when it imports; set
``MADBAYES_PURE_PYTHON=1`` to force the NumPy fallback.
"""

import importlib
import os

from . import _pykernels

_NAMES = (
    "kfeatures_rows",
    "bp_row_update",
    "projection_fits",
    "dp_means_sweep",
    "collapsed_dp_sweep",
    "collapsed_row_search",
)


def load_backend(name: str):
    """Return the kernel module for ``"cython"`` or ``"python"``."""
    if name == "python":
        return _pykernels
    if name == "cython":
        return importlib.import_module("madbayes._ckernels")
    raise ValueError(f"unknown kernel backend {name!r}")


def available_backends() -> list:
    out = ["python"]
    try:
        load_backend("cython")
    except ImportError:
        pass
    else:
        out.insert(0, "cython")
    return out


def use_backend(name: str) -> None:
    """Rebind the module-level kernels to ``name`` for subsequent solver calls."""
    global BACKEND
    impl = load_backend(name)
    for fn in _NAMES:
        globals()[fn] = getattr(impl, fn)
    BACKEND = name


if os.environ.get("MADBAYES_PURE_PYTHON", "") not in ("", "0"):
    use_backend("python")
else:
    try:
        use_backend("cython")
    except ImportError:
        use_backend("python")
