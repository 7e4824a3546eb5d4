"""Select the compiled march kernel when available.

Set ``HEATNULL_PURE_PYTHON=1`` to force the pure-Python fallback.
"""

import os

from heatnull import _march_py

BACKEND = "python"
march_forward = _march_py.march_forward
march_adjoint = _march_py.march_adjoint

if os.environ.get("HEATNULL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from heatnull import _march
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        march_forward = _march.march_forward
        march_adjoint = _march.march_adjoint


def backends() -> dict:
    """All importable kernel implementations by name."""
    out = {"python": _march_py}
    try:
        from heatnull import _march
    except ImportError:
        return out
    out["cython"] = _march
    return out
