"""Bubble analysis for large constant-mean-curvature spheres in Riemannian 3-manifolds.

Submodules are imported lazily so that the command-line entry point can set
thread-count environment variables before numpy is loaded.
"""

from importlib import import_module

__version__ = "0.1.0"

_SUBMODULES = (
    "grid",
    "bubble",
    "curvature",
    "corrected",
    "linearized",
    "estimates",
    "decompose",
    "balancing",
    "solver",
    "plotting",
    "cli",
)


def __getattr__(name):
    if name in _SUBMODULES:
        return import_module(f"{__name__}.{name}")
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


__all__ = list(_SUBMODULES) + ["__version__"]
