"""Stochastic Lagrangian representation of incompressible flow on T^n and S^n.

Submodules: ``geometry``, ``families``, ``structure``, ``flow``, ``spectral``,
``solver``, ``quadrature``, ``rng``, ``kernels`` and the ``cli`` front end.
"""
from importlib.metadata import PackageNotFoundError, version as _version

try:
    __version__ = _version("artifact")
except PackageNotFoundError:  # pragma: no cover - running from a source tree
    __version__ = "0.1.0"

__all__ = ["__version__"]
