"""Kernel selection: the compiled extension when it imports, the numpy version otherwise.

Set ``MNSL_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
torus_heun = _kernels_py.torus_heun

if os.environ.get("MNSL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels  # type: ignore[attr-defined]
    except ImportError:  # pragma: no cover - depends on the build
        pass
    else:
        torus_heun = _kernels.torus_heun
        BACKEND = "compiled"


def implementations() -> dict:
    """All importable implementations, keyed by backend name."""
    out = {"python": _kernels_py.torus_heun}
    try:
        from . import _kernels  # type: ignore[attr-defined]
    except ImportError:  # pragma: no cover
        return out
    out["compiled"] = _kernels.torus_heun
    return out
