"""Riemannian accelerated proximal gradient methods on spheres and oblique manifolds."""

__version__ = "0.1.0"
