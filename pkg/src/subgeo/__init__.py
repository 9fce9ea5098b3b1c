"""Numerical checks of sub-geometric ergodicity for SDEs.

Radial drift functionals and the integral test, explicit Lyapunov
functions, rate calculus (``Phi``, ``Psi_kappa`` and their inverses), coupled
path simulation, empirical transport distances and subordinated rates.

The compiled simulation kernel is used when it was built; set
``SUBGEO_PURE_PYTHON=1`` before import to force the numpy fallback.
"""
__version__ = "0.1.0"

from .simulate import BACKEND  # noqa: E402

__all__ = ["__version__", "BACKEND"]
