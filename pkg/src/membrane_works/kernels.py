"""Backend selection for the hot loops.

The compiled extension is preferred; set ``MEMBRANE_WORKS_PURE=1`` to force the
pure-Python fallback.
"""

import os

from . import _pykernels

if os.environ.get("MEMBRANE_WORKS_PURE", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND = _impl.BACKEND
rk4_linear = _impl.rk4_linear
allan_sigma = _impl.allan_sigma


def available_backends():
    """Return ``{name: module}`` for every importable backend."""
    found = {"python": _pykernels}
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        found["cython"] = _ckernels
    return found
