"""Composite objectives F = f + h, the sparse PCA models and convexity probes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NotSameOrthant, ShapeMismatch
from .geometry import Euclidean, Manifold, Oblique, Sphere


class SmoothOracle:
    """Smooth part ``f``. Subclasses provide ``value`` and ``grad`` (Riemannian)."""

    manifold: Manifold
    L: float | None = None
    mu: float | None = None

    def value(self, x) -> float:
        raise NotImplementedError

    def grad(self, x):
        raise NotImplementedError

    def value_and_grad(self, x):
        return self.value(x), self.grad(x)


class L1Norm:
    """``h(x) = lam * sum(|x_ij|)`` with retraction-convexity constant ``rho``."""

    def __init__(self, lam: float, rho: float = 0.0):
        if lam < 0:
            raise ValueError("lam must be nonnegative")
        self.lam = float(lam)
        self.rho = float(rho)

    def value(self, x) -> float:
        return self.lam * float(np.sum(np.abs(x)))

    def euclid_subgrad(self, x):
        """Minimal-norm Euclidean subgradient: ``lam * sign(x)``, zero on zero entries."""
        return self.lam * np.sign(x)

    def subgrad_box(self, x):
        """Per-entry interval ``[lo, hi]`` describing the full subdifferential."""
        s = np.sign(x)
        lo = np.where(s == 0, -self.lam, self.lam * s)
        hi = np.where(s == 0, self.lam, self.lam * s)
        return lo, hi

    def __repr__(self):
        return f"L1Norm(lam={self.lam}, rho={self.rho})"


def h_l1_value(lam: float, x) -> float:
    return L1Norm(lam).value(x)


@dataclass
class CompositeObjective:
    manifold: Manifold
    f: SmoothOracle
    h: L1Norm

    def value(self, x) -> float:
        return self.f.value(x) + self.h.value(x)

    __call__ = value


class SpcaSphere(SmoothOracle):
    """Rayleigh-quotient part ``f1(x) = -x^T A^T A x`` on the unit sphere."""

    def __init__(self, A, lam: float = 0.0):
        self.A = np.asarray(A, dtype=float)
        self.lam = float(lam)
        m, n = self.A.shape
        self.manifold = Sphere(n)
        self.AtA = self.A.T @ self.A

    def _check(self, x):
        if np.shape(x) != self.manifold.shape:
            raise ShapeMismatch(f"expected {self.manifold.shape}, got {np.shape(x)}")

    def value(self, x) -> float:
        self._check(x)
        Ax = self.A @ x
        return -float(Ax @ Ax)

    def egrad(self, x):
        return -2.0 * (self.A.T @ (self.A @ x))

    def grad(self, x):
        self._check(x)
        return self.manifold.project_tangent(x, self.egrad(x))

    def value_and_grad(self, x):
        self._check(x)
        Ax = self.A @ x
        eg = -2.0 * (self.A.T @ Ax)
        return -float(Ax @ Ax), eg - x * float(x @ eg)

    def composite(self, rho: float = 0.0) -> CompositeObjective:
        return CompositeObjective(self.manifold, self, L1Norm(self.lam, rho))


def f1_value(inst: SpcaSphere, x) -> float:
    return inst.value(x)


def f1_grad(inst: SpcaSphere, x):
    return inst.grad(x)


class SpcaOblique(SmoothOracle):
    """Covariance-fitting part ``f2(X) = ||X^T A^T A X - D2||_F^2`` on OB(p, n)."""

    def __init__(self, A, D2, lam: float = 0.0):
        self.A = np.asarray(A, dtype=float)
        D2 = np.asarray(D2, dtype=float)
        self.D2 = np.diag(D2) if D2.ndim == 1 else D2
        self.lam = float(lam)
        m, n = self.A.shape
        p = self.D2.shape[0]
        self.manifold = Oblique(n, p)

    def _residual(self, X):
        if np.shape(X) != self.manifold.shape:
            raise ShapeMismatch(f"expected {self.manifold.shape}, got {np.shape(X)}")
        AX = self.A @ X
        return AX, AX.T @ AX - self.D2

    def value(self, X) -> float:
        _, M = self._residual(X)
        return float(np.sum(M * M))

    def egrad(self, X):
        AX, M = self._residual(X)
        return 4.0 * (self.A.T @ (AX @ M))

    def grad(self, X):
        return self.manifold.project_tangent(X, self.egrad(X))

    def value_and_grad(self, X):
        AX, M = self._residual(X)
        eg = 4.0 * (self.A.T @ (AX @ M))
        return float(np.sum(M * M)), eg - X * np.sum(X * eg, axis=0)

    def composite(self, rho: float = 0.0) -> CompositeObjective:
        return CompositeObjective(self.manifold, self, L1Norm(self.lam, rho))


def f2_value(inst: SpcaOblique, X) -> float:
    return inst.value(X)


def f2_grad(inst: SpcaOblique, X):
    return inst.grad(X)


class SquaredDistance(SmoothOracle):
    """``f(x) = dist(x, target)^2 / 2``; its gradient is ``-log(x, target)``."""

    def __init__(self, manifold: Manifold, target, L: float | None = None, mu: float | None = None):
        self.manifold = manifold
        self.target = np.asarray(target, dtype=float)
        self.L, self.mu = L, mu

    def value(self, x) -> float:
        return 0.5 * self.manifold.dist(x, self.target) ** 2

    def grad(self, x):
        return -self.manifold.log(x, self.target)


class LeastSquares(SmoothOracle):
    """``f(x) = ||B x - b||^2 / 2`` on flat space."""

    def __init__(self, B, b):
        self.B = np.asarray(B, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.manifold = Euclidean(self.B.shape[1])
        eig = np.linalg.eigvalsh(self.B.T @ self.B)
        self.L, self.mu = float(eig[-1]), float(max(eig[0], 0.0))

    def value(self, x) -> float:
        r = self.B @ x - self.b
        return 0.5 * float(r @ r)

    def grad(self, x):
        return self.B.T @ (self.B @ x - self.b)


def check_gradient(f: SmoothOracle, x, rng, n_dirs: int = 10, h: float = 1e-6) -> float:
    """Largest relative mismatch between ``<grad, v>`` and a central difference along geodesics."""
    M = f.manifold
    g = f.grad(x)
    worst = 0.0
    for _ in range(n_dirs):
        v = M.random_tangent(rng, x)
        fd = (f.value(M.exp(x, h * v)) - f.value(M.exp(x, -h * v))) / (2 * h)
        slope = M.inner(x, g, v)
        worst = max(worst, abs(fd - slope) / (1.0 + abs(slope)))
    return worst


def riemannian_hessian_fd(f: SmoothOracle, x, h: float = 1e-5):
    """Riemannian Hessian in an orthonormal tangent basis by differencing transported gradients."""
    M = f.manifold
    basis = M.tangent_basis(x)
    d = len(basis)
    cols = np.empty((d, d))
    for j, b in enumerate(basis):
        xp, xm = M.exp(x, h * b), M.exp(x, -h * b)
        gp = M.transport(xp, x, f.grad(xp))
        gm = M.transport(xm, x, f.grad(xm))
        diff = (gp - gm) / (2 * h)
        cols[:, j] = np.tensordot(basis, diff, axes=diff.ndim)
    return 0.5 * (cols + cols.T)


@dataclass
class ConvexityReport:
    max_violation: float
    n_violations: int
    n_checks: int
    rho_hat: float


def check_retraction_convexity(
    h,
    manifold: Manifold,
    x,
    radius: float,
    rho: float,
    rng=None,
    n_dirs: int = 64,
    n_radii: int = 16,
    n_seg: int = 9,
    atol: float = 1e-13,
) -> ConvexityReport:
    """Sample segments in the tangent ball and test convexity of ``h(exp(x, .)) + rho/2 |.|^2``.

    For each of ``n_dirs`` random direction pairs and ``n_radii`` radii the
    segment between the two tangent vectors is probed at ``n_seg`` interior
    points. ``rho_hat`` is the smallest ``rho`` removing every sampled
    violation, obtained in closed form from the quadratic's own gap.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    hv = h.value if hasattr(h, "value") else h
    radii = radius * np.arange(1, n_radii + 1) / n_radii
    s = np.arange(1, n_seg + 1) / (n_seg + 1)
    worst, count, total, rho_hat = -np.inf, 0, 0, 0.0
    for _ in range(n_dirs):
        da = manifold.random_tangent(rng, x)
        db = manifold.random_tangent(rng, x)
        for r in radii:
            eta, omega = r * da, r * rng.uniform(0.0, 1.0) * db
            he = hv(manifold.exp(x, eta))
            ho = hv(manifold.exp(x, omega))
            gap2 = float(np.sum((eta - omega) ** 2))
            for si in s:
                mid = (1 - si) * eta + si * omega
                lhs = hv(manifold.exp(x, mid))
                raw = lhs - ((1 - si) * he + si * ho)
                viol = raw - 0.5 * rho * si * (1 - si) * gap2
                total += 1
                worst = max(worst, viol)
                tol = atol * (1.0 + abs(lhs))
                if viol > tol:
                    count += 1
                if raw > tol and gap2 > 0:
                    rho_hat = max(rho_hat, 2 * raw / (si * (1 - si) * gap2))
    return ConvexityReport(float(worst), count, total, float(rho_hat))


def midpoint_concavity_check(lam: float, x, y) -> bool:
    """Whether ``h`` at the geodesic midpoint exceeds the average of ``h(x)`` and ``h(y)``."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if np.allclose(x, y):
        raise NotSameOrthant("x and y must be distinct")
    sx, sy = np.sign(x), np.sign(y)
    if np.any(sx * sy < 0):
        raise NotSameOrthant("x and y lie in different orthants")
    mid = (x + y) / np.linalg.norm(x + y)
    h = L1Norm(lam)
    return bool(h.value(mid) > 0.5 * h.value(x) + 0.5 * h.value(y))
