"""Numerical companion for a planar one-hole domain whose second Neumann
eigenfunction has interior extrema: domain construction, P1 finite elements,
reflected Brownian motion and its couplings, and verification studies."""

__version__ = "0.1.0"

from .kernels import BACKEND  # noqa: E402

__all__ = ["BACKEND", "__version__"]
