"""Synthetic sparse PCA data and initial points."""

from __future__ import annotations

import numpy as np

# N(0, v) is read as variance v; the standard deviations below follow from that
NOISE_VARIANCE = 1e-10
INIT_VARIANCE = 1e-4
V1_DENSITY = 0.9


def _orthogonal(rng, n, first=None):
    """Random orthogonal matrix; its first column is ``first`` when given."""
    G = rng.standard_normal((n, n))
    if first is not None:
        G[:, 0] = first
    Q, R = np.linalg.qr(G)
    Q = Q * np.sign(np.diag(R))
    return Q


def sparse_unit_vector(rng, n, density=V1_DENSITY):
    k = max(1, int(round(density * n)))
    v = np.zeros(n)
    idx = rng.choice(n, size=k, replace=False)
    v[idx] = rng.standard_normal(k)
    return v / np.linalg.norm(v)


def spectrum_sphere(m: int, c: float) -> np.ndarray:
    """Singular values ``(m + c, m, m - 1, ..., 2)``."""
    return np.concatenate([[m + c], np.arange(m, 1, -1, dtype=float)])


def gen_spca_sphere_data(
    m: int, n: int, c: float, seed: int, noise_var: float = NOISE_VARIANCE, density: float = V1_DENSITY
):
    """``A = U S V^T + e`` with a sparse leading right singular vector.

    Returns ``(A, V, clean)`` where ``V`` is the full orthogonal factor and
    ``clean`` is ``U S V^T`` before noise.
    """
    if not m < n:
        raise ValueError("need m < n")
    rng = np.random.default_rng(seed)
    v1 = sparse_unit_vector(rng, n, density)
    V = _orthogonal(rng, n, first=v1)
    U = _orthogonal(rng, m)
    s = spectrum_sphere(m, c)
    clean = (U * s) @ V[:, :m].T
    A = clean + np.sqrt(noise_var) * rng.standard_normal((m, n))
    return A, V, clean


def standardize_columns(A):
    A = A - A.mean(axis=0)
    return A / np.linalg.norm(A, axis=0)


def gen_spca_oblique_data(m: int, n: int, p: int, seed: int):
    """Standard normal data with centered unit-norm columns and ``D2`` = top-``p`` squared singular values."""
    if not m < n:
        raise ValueError("need m < n")
    if not 1 <= p <= m:
        raise ValueError("need 1 <= p <= m")
    rng = np.random.default_rng(seed)
    A = standardize_columns(rng.standard_normal((m, n)))
    s = np.linalg.svd(A, compute_uv=False)
    return A, s[:p] ** 2


def init_point_sphere(A, seed: int, var: float = INIT_VARIANCE):
    """Leading right singular vector of ``A`` plus a small Gaussian kick, normalized."""
    rng = np.random.default_rng(seed)
    _, _, Vt = np.linalg.svd(A, full_matrices=False)
    x = Vt[0] + np.sqrt(var) * rng.standard_normal(A.shape[1])
    return x / np.linalg.norm(x)


def init_point_oblique(A, p: int):
    """First ``p`` right singular vectors: a minimizer of the smooth part."""
    _, _, Vt = np.linalg.svd(A, full_matrices=False)
    return Vt[:p].T.copy()


def init_point(model: str, A, seed: int = 0, p: int = 1):
    if model == "SpcaSphere":
        return init_point_sphere(A, seed)
    if model == "SpcaOblique":
        return init_point_oblique(A, p)
    raise ValueError(f"no initial point rule for {model}")
