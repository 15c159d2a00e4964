"""Riemannian proximal subproblem.

For a point ``y``, a gradient ``g`` at ``y`` and a coefficient ``c`` the model

    ell(eta) = <g, eta> + c/2 |eta|^2 + h(exp(y, eta))

is minimized over the tangent space at ``y`` (restricted to a ball of radius
pi/2 on curved manifolds). ``solve`` returns a stationary point with
``ell(eta) <= ell(0)``.

On spheres the default solver works in the variable ``z = exp(y, eta)``. In
that variable the nonsmooth term is a plain l1 norm, and the proximal map of
``l1 + sphere indicator`` has a closed form (soft-threshold, then normalize),
so a proximal gradient iteration on ``z`` identifies the zero pattern exactly
and converges linearly. The subgradient scheme is kept as an alternative.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DimensionTooLarge, NonConvexBall
from .geometry import Euclidean, Manifold
from .objective import L1Norm

BALL_RADIUS = np.pi / 2
# entries this small count as zero when judging stationarity of eta = 0
ZERO_TOL = 1e-10


@dataclass
class ProxProblem:
    manifold: Manifold
    y: np.ndarray
    g: np.ndarray
    coeff: float
    h: L1Norm
    rho: float | None = None

    def __post_init__(self):
        if self.rho is None:
            self.rho = self.h.rho
        if not self.coeff > self.rho:
            raise ValueError("coeff must exceed rho")


@dataclass
class ProxSolution:
    eta: np.ndarray
    ell_at_eta: float
    ell_at_zero: float
    residual: float
    inner_iters: int
    converged: bool = True
    method: str = ""
    z: np.ndarray | None = field(default=None, repr=False)


def ell_value(p: ProxProblem, eta) -> float:
    M = p.manifold
    return float(np.sum(p.g * eta)) + 0.5 * p.coeff * float(np.sum(eta * eta)) + p.h.value(M.exp(p.y, eta))


def ell_gain(p: ProxProblem, eta, z=None) -> tuple[float, float]:
    """``ell(eta) - ell(0)`` in difference form, and a bound on its rounding error."""
    z = p.manifold.exp(p.y, eta) if z is None else z
    lin = float(np.sum(p.g * eta))
    quad = 0.5 * p.coeff * float(np.sum(eta * eta))
    dh = p.h.lam * float(np.sum(np.abs(z) - np.abs(p.y)))
    slack = 64 * np.finfo(float).eps * (abs(lin) + quad + p.h.lam * float(np.sum(np.abs(z)) + np.sum(np.abs(p.y))))
    return lin + quad + dh, slack


def default_tol(p: ProxProblem) -> float:
    return 1e-10 * np.sqrt(p.manifold.ambient_size)


# ---------------------------------------------------------------------------
# column helpers, everything below works on (n, p) arrays


def _cols(p: ProxProblem, a):
    return np.reshape(a, (p.manifold.n, p.manifold.p))


def _z_terms(Y, G, Z):
    """Log of ``Z`` seen from ``Y`` plus the frame used by gradients and adjoints."""
    c = np.sum(Y * Z, axis=0)
    W = Z - c * Y
    nw = np.sqrt(np.sum(W * W, axis=0))
    t = np.arctan2(nw, c)
    nz = nw > 0.0
    U = W / np.where(nz, nw, 1.0)
    return t, nz, U


def _phi(Y, G, Z, coeff, lam):
    """Per-column ``ell`` expressed through ``z``."""
    smooth, _ = _phi_smooth(Y, G, Z, coeff)
    return smooth + lam * np.sum(np.abs(Z), axis=0)


def _phi_smooth(Y, G, Z, coeff):
    """Smooth part of ``_phi`` and the magnitude of its (often cancelling) terms."""
    t, nz, U = _z_terms(Y, G, Z)
    lin = t * np.sum(G * U, axis=0)
    quad = 0.5 * coeff * t * t
    return lin + quad, np.abs(lin) + quad


def _smooth_grad(Y, G, Z, coeff):
    """Riemannian gradient at ``Z`` of ``<G, log_Y Z> + coeff/2 dist(Y, Z)^2``."""
    t, nz, U = _z_terms(Y, G, Z)
    Up = np.where(nz, -np.sin(t) * Y + np.cos(t) * U, U)
    b = np.sum(G * U, axis=0)
    ratio = np.where(t > 1e-8, t / np.where(t > 1e-8, np.sin(t), 1.0), 1.0 + t * t / 6.0)
    out = np.where(nz, b * Up + ratio * (G - b * U) + coeff * t * Up, G)
    return out - Z * np.sum(Z * out, axis=0)


def _sphere_l1_prox(V, tau):
    """argmin over unit columns of ``|x - v|^2/2 + tau |x|_1``."""
    S = np.sign(V) * np.maximum(np.abs(V) - tau, 0.0)
    ns = np.sqrt(np.sum(S * S, axis=0))
    out = S / np.where(ns > 0, ns, 1.0)
    dead = ns == 0
    if np.any(dead):
        for j in np.flatnonzero(dead):
            i = np.argmax(np.abs(V[:, j]))
            out[:, j] = 0.0
            out[i, j] = 1.0 if V[i, j] >= 0 else -1.0
    return out


def _min_norm_element(Z, Gs, lam, zero_tol):
    """Shortest tangent vector of the form ``P_T(Gs + lam * s)``, ``s`` in the l1 subdifferential at Z."""
    zero = np.abs(Z) <= zero_tol
    a = np.where(zero, 0.0, Gs + lam * np.sign(Z))
    Zs = np.where(zero, 0.0, Z)
    nu = np.sum(Zs * a, axis=0) / np.maximum(np.sum(Zs * Zs, axis=0), 1e-300)
    W = np.where(zero, Gs - np.clip(Gs, -lam, lam), a - nu * Zs)
    return W


def _pullback(Y, Z, W):
    """Apply the adjoint differential of ``exp(Y, .)`` at ``log_Y Z`` to ``W`` (tangent at Z)."""
    t, nz, U = _z_terms(Y, None, Z)
    Up = -np.sin(t) * Y + np.cos(t) * U
    a = np.where(nz, np.sum(W * Up, axis=0), 0.0)
    ratio = np.where(t > 1e-8, np.sin(t) / np.where(t > 1e-8, t, 1.0), 1.0 - t * t / 6.0)
    return np.where(nz, a * U + ratio * (W - a * Up), W)


def _residual_from_z(Y, G, Z, coeff, lam, zero_tol):
    Gs = _smooth_grad(Y, G, Z, coeff)
    W = _min_norm_element(Z, Gs, lam, zero_tol)
    R = _pullback(Y, Z, W)
    # on the ball boundary an inward-pointing residual is absorbed by the normal cone
    t, nz, U = _z_terms(Y, None, Z)
    a = np.sum(R * U, axis=0)
    R = R - np.where((t >= BALL_RADIUS - 1e-9) & (a < 0), a, 0.0) * U
    return float(np.sqrt(np.sum(R * R)))


def _boundary_minimizer(Y, G, lam):
    """Per-column minimizer of ``ell`` on the ball boundary ``|eta| = pi/2``.

    There ``z`` is a unit vector orthogonal to ``y`` and ``ell`` reduces to
    ``<a, z> + lam |z|_1`` plus a constant, with ``a = (pi/2) g``. For a
    multiplier ``nu`` the minimizer over the whole sphere is
    ``-soft(a + nu y, lam)`` normalized, and ``y . soft(a + nu y, lam)`` is
    nondecreasing in ``nu``, so bisection finds the feasible one. Columns where
    the soft-threshold vanishes at the root are returned as NaN.
    """
    a = BALL_RADIUS * G

    def psi(nu):
        v = a + nu * Y
        return np.sum(Y * np.sign(v) * np.maximum(np.abs(v) - lam, 0.0), axis=0)

    span = np.max(np.abs(a), axis=0) + lam + 1.0
    lo, hi = -span, span
    while np.any(psi(lo) > 0):
        lo = np.where(psi(lo) > 0, 2 * lo, lo)
    while np.any(psi(hi) < 0):
        hi = np.where(psi(hi) < 0, 2 * hi, hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        up = psi(mid) > 0
        hi, lo = np.where(up, mid, hi), np.where(up, lo, mid)
    v = a + 0.5 * (lo + hi) * Y
    S = -np.sign(v) * np.maximum(np.abs(v) - lam, 0.0)
    S = S - np.sum(S * Y, axis=0) * Y
    ns = np.sqrt(np.sum(S * S, axis=0))
    return np.where(ns > 1e-12, S / np.where(ns > 0, ns, 1.0), np.nan)


def stationarity_residual(p: ProxProblem, eta, zero_tol: float = 0.0) -> float:
    """Length of a short element of the subdifferential of ``ell`` at ``eta``.

    The l1 subgradient is chosen to minimize the norm before the pullback, which
    is exact at ``eta = 0`` and an upper bound elsewhere. Entries of
    ``exp(y, eta)`` with magnitude at most ``zero_tol`` are treated as zeros.
    """
    M = p.manifold
    if isinstance(M, Euclidean):
        z = p.y + eta
        Gs = p.g + p.coeff * eta
        zero = np.abs(z) <= zero_tol
        lam = p.h.lam
        W = np.where(zero, Gs - np.clip(Gs, -lam, lam), Gs + lam * np.sign(z))
        return float(np.linalg.norm(W))
    Y, G = _cols(p, p.y), _cols(p, p.g)
    Z = _cols(p, M.exp(p.y, eta))
    return _residual_from_z(Y, G, Z, p.coeff, p.h.lam, zero_tol)


# ---------------------------------------------------------------------------
# solvers


def _finish(p: ProxProblem, eta, iters, converged, method, tol, z=None):
    M = p.manifold
    ell0 = p.h.value(p.y)
    ell = ell_value(p, eta)
    if ell > ell0:
        gain, slack = ell_gain(p, eta, z)
        res0 = stationarity_residual(p, M.zero(p.y), zero_tol=ZERO_TOL)
        if gain > slack and res0 > max(tol, 1e-6):
            raise NonConvexBall(
                f"ell({ell:.17g}) above ell(0)={ell0:.17g} with residual at zero {res0:.3e}"
            )
        # no decrease of the model is representable; zero meets the contract exactly
        zero = M.zero(p.y)
        return ProxSolution(zero, ell0, ell0, res0, iters, converged and res0 <= tol, method, p.y.copy())
    if z is None:
        z = M.exp(p.y, eta)
        res = stationarity_residual(p, eta)
    else:
        res = _residual_from_z(_cols(p, p.y), _cols(p, p.g), _cols(p, z), p.coeff, p.h.lam, 0.0)
    return ProxSolution(eta, ell, ell0, res, iters, converged and res <= tol, method, z)


def _solve_euclidean(p: ProxProblem, tol, max_iters):
    lam = p.h.lam
    v = p.y - p.g / p.coeff
    x = np.sign(v) * np.maximum(np.abs(v) - lam / p.coeff, 0.0)
    return _finish(p, x - p.y, 1, True, "closed_form", tol)


def _solve_sphere_pg(p: ProxProblem, tol, max_iters):
    """Proximal gradient in the variable ``z = exp(y, eta)`` with per-column backtracking."""
    M = p.manifold
    Y, G = _cols(p, p.y), _cols(p, p.g)
    c, lam = p.coeff, p.h.lam
    alpha_max = 1.0 / c
    alpha = np.full(Y.shape[1], alpha_max)
    # start from the projected closed-form step where it already improves on y
    Z = Y.copy()
    phi = _phi(Y, G, Z, c, lam)
    Z0 = _sphere_l1_prox(Y - G / c, lam / c)
    phi0 = _phi(Y, G, Z0, c, lam)
    better = (phi0 < phi) & (np.sum(Y * Z0, axis=0) > np.cos(BALL_RADIUS))
    Z = np.where(better, Z0, Z)
    phi = np.where(better, phi0, phi)
    # residual floor set by rounding in the gradient and the l1 term
    floor = 1e-13 * (1.0 + np.sqrt(np.sum(G * G)) + lam * np.sqrt(Y.size))
    converged, it, stale = False, 0, 0
    for it in range(1, max_iters + 1):
        Gs = _smooth_grad(Y, G, Z, c)
        smooth, _ = _phi_smooth(Y, G, Z, c)
        for _ in range(60):
            Zn = _sphere_l1_prox(Z - alpha * Gs, alpha * lam)
            D = Zn - Z
            smooth_n, scale = _phi_smooth(Y, G, Zn, c)
            # majorization test for the smooth part along the chord, up to rounding
            lin = np.sum(Gs * D, axis=0)
            upper = smooth + lin + np.sum(D * D, axis=0) / (2 * alpha)
            slack = 16 * np.finfo(float).eps * (scale + np.abs(smooth) + np.abs(lin)) + 1e-300
            ok = smooth_n <= upper + slack
            # below the rounding floor the test is noise; the 1/c step is safe there
            ok |= (alpha == alpha_max) & (np.sum(D * D, axis=0) / (2 * alpha) <= 64 * slack)
            ok &= np.sum(Y * Zn, axis=0) >= np.cos(BALL_RADIUS) - 1e-15
            if np.all(ok):
                break
            alpha = np.where(ok, alpha, 0.5 * alpha)
        phin = smooth_n + lam * np.sum(np.abs(Zn), axis=0)
        moved = ok & np.any(D != 0, axis=0)
        gain = np.sum(np.where(moved, phi - phin, 0.0))
        Z = np.where(moved, Zn, Z)
        phi = np.where(moved, phin, phi)
        alpha = np.minimum(2.0 * alpha, alpha_max)
        res = _residual_from_z(Y, G, Z, c, lam, 0.0)
        if res <= tol:
            converged = True
            break
        # slow but steady decrease keeps going; rounding-level gains count as stalled
        stale = stale + 1 if gain <= 1e-14 * (1.0 + np.sum(np.abs(phi))) else 0
        if not np.any(moved) or stale >= 8:
            converged = res <= max(tol, floor)
            break
    # the minimum may sit on the ball boundary, where the iteration above stalls
    near = (np.sum(Y * Z, axis=0) < np.cos(BALL_RADIUS - 0.05)) | (np.sum(Y * Z0, axis=0) < 0.0)
    if np.any(near):
        Zb = Z.copy()
        Zb[:, near] = _boundary_minimizer(Y[:, near], G[:, near], lam)
        ok = near & np.all(np.isfinite(Zb), axis=0)
        phib = _phi(Y, G, np.where(ok, Zb, Y), c, lam)
        take = ok & (phib < phi)
    else:
        take = near
    if np.any(take):
        Z = np.where(take, Zb, Z)
        converged = _residual_from_z(Y, G, Z, c, lam, 0.0) <= max(tol, floor)
    z = np.reshape(Z, M.shape)
    tol_eff = max(tol, floor)
    return _finish(p, M.log(p.y, z), it, converged, "sphere_pg", tol_eff, z)


def _solve_subgradient(p: ProxProblem, tol, max_iters):
    """Projected subgradient descent with steps ``1/(coeff (j+1))`` and iterate averaging."""
    M = p.manifold
    step0 = 1.0 / p.coeff
    eta = M.zero(p.y)
    avg = eta.copy()
    best, best_ell = eta.copy(), ell_value(p, eta)
    converged, j = False, 0
    for j in range(max_iters):
        z = M.exp(p.y, eta)
        ws = M.project_tangent(z, p.h.euclid_subgrad(z))
        sub = p.g + p.coeff * eta + M.d_exp_adjoint(p.y, eta, ws)
        eta = eta - step0 / (j + 1) * sub
        r = M.norm(p.y, eta)
        if r > BALL_RADIUS:
            eta = eta * (BALL_RADIUS / r)
        avg = avg + (eta - avg) / (j + 2)
        for cand in (eta, avg):
            e = ell_value(p, cand)
            if e < best_ell:
                best, best_ell = cand.copy(), e
        if stationarity_residual(p, best) <= tol:
            converged = True
            break
    return _finish(p, best, j + 1, converged, "subgradient", tol)


SOLVERS: dict[str, Callable] = {
    "sphere_pg": _solve_sphere_pg,
    "subgradient": _solve_subgradient,
}


def register_solver(name: str, fn: Callable) -> None:
    """Plug in an alternative inner solver ``fn(problem, tol, max_iters) -> ProxSolution``."""
    SOLVERS[name] = fn


def solve(p: ProxProblem, tol: float | None = None, max_iters: int = 500, method: str = "auto") -> ProxSolution:
    """Stationary point of ``ell`` with ``ell(eta) <= ell(0)``.

    Parameters
    ----------
    p : ProxProblem
    tol : float, optional
        Target for :func:`stationarity_residual`; defaults to
        ``1e-10 * sqrt(ambient size)``.
    max_iters : int
        Inner iteration cap. On exhaustion the best iterate is returned with
        ``converged=False``.
    method : str
        ``"auto"`` picks the closed form on flat space and ``"sphere_pg"``
        otherwise; any name registered in :data:`SOLVERS` is accepted.
    """
    tol = default_tol(p) if tol is None else tol
    M = p.manifold
    if isinstance(M, Euclidean):
        return _solve_euclidean(p, tol, max_iters)
    if p.h.lam == 0.0:
        return _finish(p, -p.g / p.coeff, 1, True, "closed_form", tol)
    if method == "auto":
        method = "sphere_pg"
    return SOLVERS[method](p, tol, max_iters)


def _zoom(fn, C, vals, spacing, n_seeds, wrap=None):
    """Pattern-search refinement of the best ``n_seeds`` grid points of ``fn``."""
    d = C.shape[1]
    local = np.linspace(-1.0, 1.0, 21)
    lg = np.stack([g.ravel() for g in np.meshgrid(*([local] * d), indexing="ij")], axis=1)
    best_c, best_v, evals = None, np.inf, 0
    for i in np.argsort(vals)[:n_seeds]:
        if not np.isfinite(vals[i]):
            continue
        c0, v0, h = C[i].copy(), vals[i], 2.0 * spacing
        for _ in range(800):
            cand = c0 + h * lg
            if wrap is not None:
                cand = wrap(cand)
            cv = fn(cand)
            evals += len(cand)
            k = int(np.argmin(cv))
            if cv[k] < v0:
                c0, v0 = cand[k], cv[k]
                if np.max(np.abs(lg[k])) < 1.0:
                    h *= 0.2
            else:
                h *= 0.2
            if h < 1e-15:
                break
        if v0 < best_v:
            best_c, best_v = c0, v0
    return best_c, best_v, evals


def _unit_from_angles(A):
    k = A.shape[1]
    if k == 1:
        return np.stack([np.cos(A[:, 0]), np.sin(A[:, 0])], axis=1)
    a, b = A[:, 0], A[:, 1]
    return np.stack([np.sin(a) * np.cos(b), np.sin(a) * np.sin(b), np.cos(a)], axis=1)


def solve_grid_oracle(
    p: ProxProblem,
    radius: float = BALL_RADIUS,
    resolution: int = 201,
    n_seeds: int = 8,
) -> ProxSolution:
    """Brute-force minimizer of ``ell`` on the tangent ball (tangent dimension at most 3).

    An exhaustive grid over the ball is refined by pattern search around the
    best grid points. Grid search stalls on the kinks of the l1 term, so on
    spheres every stratum where a subset of the coordinates of
    ``z = exp(y, eta)`` vanishes is also searched on its own (a lower
    dimensional sphere, parameterized by angles), together with the signed
    coordinate vectors. The overall minimum is returned.
    """
    M = p.manifold
    d = M.dim
    if d > 3:
        raise DimensionTooLarge(f"grid oracle needs tangent dimension <= 3, got {d}")
    B = np.reshape(M.tangent_basis(p.y), (d, -1))
    y = np.ravel(p.y)
    g = np.ravel(p.g)
    gb = B @ g
    flat = isinstance(M, Euclidean)
    lam, c = p.h.lam, p.coeff

    def ell_tangent(C):
        eta = C @ B
        t = np.sqrt(np.sum(C * C, axis=1))
        if flat:
            z = y + eta
        else:
            safe = np.where(t > 0, t, 1.0)
            z = np.cos(t)[:, None] * y + np.where(t > 0, np.sin(safe) / safe, 1.0)[:, None] * eta
        val = C @ gb + 0.5 * c * t * t + lam * np.sum(np.abs(z), axis=1)
        return np.where(t <= radius, val, np.inf)

    def ell_z(Z):
        cth = Z @ y
        W = Z - cth[:, None] * y
        nw = np.sqrt(np.sum(W * W, axis=1))
        th = np.arctan2(nw, cth)
        lin = np.where(nw > 0, th * (W @ g) / np.where(nw > 0, nw, 1.0), 0.0)
        val = lin + 0.5 * c * th * th + lam * np.sum(np.abs(Z), axis=1)
        return np.where(th <= radius + 1e-12, val, np.inf)

    axis = np.linspace(-radius, radius, resolution)
    C = np.stack([q.ravel() for q in np.meshgrid(*([axis] * d), indexing="ij")], axis=1)
    C = C[np.sum(C * C, axis=1) <= radius * radius]
    vals = ell_tangent(C)
    best_c, best_v, evals = _zoom(ell_tangent, C, vals, axis[1] - axis[0], n_seeds)
    evals += len(C)
    best_z = None
    zero_v = float(ell_tangent(np.zeros((1, d)))[0])
    if zero_v <= best_v:
        best_c, best_v = np.zeros(d), zero_v

    if not flat and lam > 0:
        n = y.size
        for size in range(1, n):
            for S in itertools.combinations(range(n), size):
                free = [i for i in range(n) if i not in S]
                k = len(free) - 1

                def embed(U, free=free):
                    Z = np.zeros((len(U), n))
                    Z[:, free] = U
                    return Z

                if k == 0:
                    Zc = embed(np.array([[1.0], [-1.0]]))
                    v = ell_z(Zc)
                    j = int(np.argmin(v))
                    evals += 2
                    if v[j] < best_v:
                        best_v, best_z = float(v[j]), Zc[j]
                    continue
                if k == 1:
                    A = np.linspace(0.0, 2 * np.pi, 4 * resolution, endpoint=False)[:, None]
                    step = A[1, 0] - A[0, 0]
                else:
                    a = np.linspace(0.0, np.pi, resolution)
                    b = np.linspace(0.0, 2 * np.pi, 2 * resolution, endpoint=False)
                    A = np.stack([q.ravel() for q in np.meshgrid(a, b, indexing="ij")], axis=1)
                    step = a[1] - a[0]

                def fz(Ang, embed=embed):
                    return ell_z(embed(_unit_from_angles(Ang)))

                av = fz(A)
                evals += len(A)
                ang, v, e = _zoom(fz, A, av, step, n_seeds)
                evals += e
                if ang is not None and v < best_v:
                    best_v, best_z = float(v), embed(_unit_from_angles(ang[None, :]))[0]

    if not flat and M.p == 1 and radius >= BALL_RADIUS and y.size >= 3:
        # the great sphere orthogonal to y, where the ball constraint binds
        Q = np.reshape(B, (d, -1))
        k = d - 1
        if k == 1:
            A = np.linspace(0.0, 2 * np.pi, 4 * resolution, endpoint=False)[:, None]
            step = A[1, 0] - A[0, 0]
        else:
            a = np.linspace(0.0, np.pi, resolution)
            b = np.linspace(0.0, 2 * np.pi, 2 * resolution, endpoint=False)
            A = np.stack([q.ravel() for q in np.meshgrid(a, b, indexing="ij")], axis=1)
            step = a[1] - a[0]

        def fb(Ang):
            return ell_z(_unit_from_angles(Ang) @ Q)

        av = fb(A)
        ang, v, e = _zoom(fb, A, av, step, n_seeds)
        evals += len(A) + e
        if ang is not None and v < best_v:
            best_v, best_z = float(v), (_unit_from_angles(ang[None, :]) @ Q)[0]

    if best_z is not None:
        z = np.reshape(best_z, M.shape)
        eta = M.log(p.y, z)
    else:
        eta = np.reshape(best_c @ B, M.shape)
        z = M.exp(p.y, eta)
    ell0 = p.h.value(p.y)
    res = stationarity_residual(p, eta, zero_tol=1e-9)
    return ProxSolution(eta, ell_value(p, eta), ell0, res, evals, True, "grid", z)
