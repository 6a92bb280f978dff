"""Backend selection for the component-wise Metropolis kernels.

The compiled extension is used when it imports; setting ``STCP_PURE_PYTHON=1``
forces the NumPy fallback.
"""

import os
from types import ModuleType

from . import _mh_kernels_py

try:
    from . import _mh_kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = ("cython", "python")


def get(name: str) -> ModuleType:
    if name == "python":
        return _mh_kernels_py
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not built; run `pip install -e .`")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def available() -> list[str]:
    return [b for b in BACKENDS if b == "python" or _compiled is not None]


if _compiled is not None and not os.environ.get("STCP_PURE_PYTHON"):
    BACKEND = "cython"
else:
    BACKEND = "python"

active = get(BACKEND)
