"""Exact geometry of the unit sphere, the oblique manifold and flat space.

Points and tangent vectors are plain numpy arrays. A sphere point has shape
``(n,)``, an oblique point has shape ``(n, p)`` with unit-norm columns and a
Euclidean point has shape ``(n,)``. Every manifold exposes the same methods so
the solvers never branch on the geometry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import null_space

from .errors import AntipodalPoints, DomainError, NotOrthonormal, ShapeMismatch

SMALL_ANGLE = 1e-8
ANTIPODAL_TOL = 1e-8


def _coldot(a, b):
    return np.sum(a * b, axis=0)


def _colnorm(a):
    return np.sqrt(np.sum(a * a, axis=0))


def _sinc_cos(t):
    """sin(t)/t and cos(t) with a second-order series near zero."""
    small = t < SMALL_ANGLE
    safe = np.where(small, 1.0, t)
    sinc = np.where(small, 1.0 - t * t / 6.0, np.sin(safe) / safe)
    cos = np.where(small, 1.0 - t * t / 2.0, np.cos(t))
    return sinc, cos


class Manifold:
    """Common interface. Subclasses implement the column-wise kernels."""

    name = "manifold"
    shape: tuple

    def _check_shape(self, *arrays):
        for a in arrays:
            if np.shape(a) != self.shape:
                raise ShapeMismatch(f"expected shape {self.shape}, got {np.shape(a)}")

    @property
    def dim(self) -> int:
        """Dimension of each tangent space."""
        raise NotImplementedError

    @property
    def ambient_size(self) -> int:
        return int(np.prod(self.shape))

    def inner(self, x, u, v) -> float:
        return float(np.sum(u * v))

    def norm(self, x, v) -> float:
        return float(np.sqrt(np.sum(v * v)))

    def zero(self, x):
        return np.zeros(self.shape)


class _ColumnSpheres(Manifold):
    """Product of ``p`` unit spheres in R^n, stored as an ``(n, p)`` array."""

    n: int
    p: int

    def _2d(self, a):
        return np.reshape(a, (self.n, self.p))

    def _out(self, a):
        return np.reshape(a, self.shape)

    @property
    def dim(self) -> int:
        return (self.n - 1) * self.p

    def check_point(self, x, tol=1e-12):
        self._check_shape(x)
        err = np.max(np.abs(_colnorm(self._2d(x)) - 1.0))
        if err > tol:
            raise DomainError(f"point off the manifold by {err:.3e}")

    def check_tangent(self, x, v, tol=1e-10):
        self._check_shape(x, v)
        err = np.max(np.abs(_coldot(self._2d(x), self._2d(v))))
        if err > tol:
            raise DomainError(f"vector not tangent, normal component {err:.3e}")

    def project_tangent(self, x, v):
        self._check_shape(x, v)
        X, V = self._2d(x), self._2d(v)
        return self._out(V - X * _coldot(X, V))

    def normalize(self, y):
        Y = self._2d(y)
        return self._out(Y / _colnorm(Y))

    def exp(self, x, eta):
        X, E = self._2d(x), self._2d(eta)
        sinc, cos = _sinc_cos(_colnorm(E))
        Y = cos * X + sinc * E
        return self._out(Y / _colnorm(Y))

    def _check_antipodal(self, c):
        if np.any(c <= -1.0 + ANTIPODAL_TOL):
            raise AntipodalPoints("points are (nearly) antipodal; geodesic is not unique")

    def _angles(self, X, Y):
        c = _coldot(X, Y)
        self._check_antipodal(c)
        W = Y - c * X
        nw = _colnorm(W)
        return c, W, nw, np.arctan2(nw, c)

    def log(self, x, y):
        X, Y = self._2d(x), self._2d(y)
        c, W, nw, theta = self._angles(X, Y)
        # theta/nw tends to 1/c as the points merge
        scale = np.where(nw > 0.0, theta / np.where(nw > 0.0, nw, 1.0), 1.0 / np.where(c != 0.0, c, 1.0))
        W = scale * W
        return self._out(W - X * _coldot(X, W))

    def dist(self, x, y) -> float:
        _, _, _, theta = self._angles(self._2d(x), self._2d(y))
        return float(np.sqrt(np.sum(theta**2)))

    def column_dists(self, x, y):
        _, _, _, theta = self._angles(self._2d(x), self._2d(y))
        return theta

    def transport(self, x, y, v):
        """Parallel transport of ``v`` from ``x`` to ``y`` along the geodesic."""
        X, Y, V = self._2d(x), self._2d(y), self._2d(v)
        c = _coldot(X, Y)
        self._check_antipodal(c)
        out = V - (_coldot(Y, V) / (1.0 + c)) * (X + Y)
        return self._out(out)

    def _frame(self, X, E):
        t = _colnorm(E)
        nz = t > 0.0
        U = E / np.where(nz, t, 1.0)
        sinc, cos = _sinc_cos(t)
        Up = -np.sin(t) * X + cos * U
        return t, nz, U, Up, sinc

    def d_exp(self, x, eta, v):
        """Differential of ``exp(x, .)`` at ``eta`` applied to ``v``.

        The component of ``v`` along ``eta`` is rotated onto the geodesic
        velocity; the remaining part is scaled by ``sin(t)/t``.
        """
        X, E, V = self._2d(x), self._2d(eta), self._2d(v)
        t, nz, U, Up, sinc = self._frame(X, E)
        a = np.where(nz, _coldot(V, U), 0.0)
        out = a * Up + sinc * (V - a * U)
        return self._out(np.where(nz, out, V))

    def d_exp_adjoint(self, x, eta, w):
        """Adjoint of :meth:`d_exp`, mapping tangents at ``exp(x, eta)`` back to ``x``.

        ``w`` is first projected onto the tangent space at ``exp(x, eta)``.
        """
        X, E = self._2d(x), self._2d(eta)
        Z = self._2d(self.exp(x, eta))
        W = self._2d(w)
        W = W - Z * _coldot(Z, W)
        t, nz, U, Up, sinc = self._frame(X, E)
        a = np.where(nz, _coldot(W, Up), 0.0)
        out = a * U + sinc * (W - a * Up)
        return self._out(np.where(nz, out, W))

    def random_point(self, rng):
        return self.normalize(rng.standard_normal(self.shape))

    def random_tangent(self, rng, x, scale=1.0):
        v = self.project_tangent(x, rng.standard_normal(self.shape))
        return scale * v / self.norm(x, v)

    def tangent_basis(self, x):
        """Orthonormal basis of the tangent space, shape ``(dim,) + shape``."""
        X = self._2d(x)
        basis = []
        for j in range(self.p):
            B = null_space(X[:, j][None, :])
            for i in range(B.shape[1]):
                e = np.zeros((self.n, self.p))
                e[:, j] = B[:, i]
                basis.append(self._out(e))
        return np.array(basis)


class Sphere(_ColumnSpheres):
    """Unit sphere S^{n-1} in R^n."""

    name = "sphere"

    def __init__(self, n: int):
        if n < 2:
            raise ValueError("sphere needs n >= 2")
        self.n, self.p = n, 1
        self.shape = (n,)

    def __repr__(self):
        return f"Sphere({self.n})"


class Oblique(_ColumnSpheres):
    """Oblique manifold OB(p, n): n-by-p matrices with unit-norm columns."""

    name = "oblique"

    def __init__(self, n: int, p: int):
        if n < 2 or p < 1:
            raise ValueError("oblique needs n >= 2 and p >= 1")
        self.n, self.p = n, p
        self.shape = (n, p)

    def __repr__(self):
        return f"Oblique({self.n}, {self.p})"


class Euclidean(Manifold):
    """Flat R^n; exp and log are vector addition and subtraction."""

    name = "euclidean"

    def __init__(self, n: int):
        if n < 1:
            raise ValueError("euclidean space needs n >= 1")
        self.n, self.p = n, 1
        self.shape = (n,)

    def __repr__(self):
        return f"Euclidean({self.n})"

    @property
    def dim(self) -> int:
        return self.n

    def check_point(self, x, tol=0.0):
        self._check_shape(x)

    def check_tangent(self, x, v, tol=0.0):
        self._check_shape(x, v)

    def project_tangent(self, x, v):
        self._check_shape(x, v)
        return np.array(v, dtype=float)

    def normalize(self, y):
        return y

    def exp(self, x, eta):
        return x + eta

    def log(self, x, y):
        return y - x

    def dist(self, x, y) -> float:
        return float(np.linalg.norm(y - x))

    def transport(self, x, y, v):
        return v

    def d_exp(self, x, eta, v):
        return v

    def d_exp_adjoint(self, x, eta, w):
        return w

    def random_point(self, rng):
        return rng.standard_normal(self.shape)

    def random_tangent(self, rng, x, scale=1.0):
        v = rng.standard_normal(self.shape)
        return scale * v / np.linalg.norm(v)

    def tangent_basis(self, x):
        return np.eye(self.n)


@dataclass(frozen=True)
class CurvatureProfile:
    kappa_min: float
    kappa_max: float
    diameter_D: float
    zeta: float
    delta: float


def curvature_constants(kappa_min: float, kappa_max: float, D: float) -> CurvatureProfile:
    """Distortion constants of the half squared distance on a ball of diameter ``D``."""
    if D <= 0:
        raise DomainError("diameter must be positive")
    if kappa_max > 0 and D >= np.pi / np.sqrt(kappa_max):
        raise DomainError("diameter must be below pi/sqrt(kappa_max)")
    if kappa_min < 0:
        s = np.sqrt(-kappa_min) * D
        zeta = s / np.tanh(s)
    else:
        zeta = 1.0
    if kappa_max > 0:
        s = np.sqrt(kappa_max) * D
        delta = s / np.tan(s)
    else:
        delta = 1.0
    return CurvatureProfile(kappa_min, kappa_max, D, float(zeta), float(delta))


def sectional_curvature_oblique(u, v, tol=1e-8) -> float:
    """Sectional curvature of OB(p, n) on the plane spanned by orthonormal ``u``, ``v``.

    The oblique manifold is a product of unit spheres, so the curvature is the
    sum over columns of the squared area of the projected parallelogram.
    """
    u = np.atleast_2d(np.asarray(u, dtype=float).T).T
    v = np.atleast_2d(np.asarray(v, dtype=float).T).T
    if abs(np.sum(u * u) - 1) > tol or abs(np.sum(v * v) - 1) > tol or abs(np.sum(u * v)) > tol:
        raise NotOrthonormal("u and v must be orthonormal")
    uu, vv, uv = _coldot(u, u), _coldot(v, v), _coldot(u, v)
    return float(np.sum(uu * vv - uv**2))
