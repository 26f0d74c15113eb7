"""Small dense-matrix primitives: normalization, cosine, Gram, Householder."""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, RankDeficient, ZeroNorm

EPS_NORM = 1e-12
RANK_TOL = 1e-10


def _as_vec(v) -> np.ndarray:
    return np.asarray(v, dtype=np.float64).reshape(-1)


def l2_normalize(v) -> np.ndarray:
    v = _as_vec(v)
    n = np.linalg.norm(v)
    if not n > EPS_NORM:
        raise ZeroNorm(f"vector norm {n:g} <= {EPS_NORM:g}")
    return v / n


def l2_normalize_rows(M) -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    n = np.linalg.norm(M, axis=-1, keepdims=True)
    if not np.all(n > EPS_NORM):
        raise ZeroNorm(f"row norm {float(n.min()):g} <= {EPS_NORM:g}")
    return M / n


def cosine_similarity(a, b) -> float:
    a, b = _as_vec(a), _as_vec(b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"lengths {a.size} and {b.size} differ")
    return float(np.dot(l2_normalize(a), l2_normalize(b)))


def gram_matrix(E) -> np.ndarray:
    """Return ``E @ E.T``, symmetrized so that G == G.T holds bit-exactly."""
    E = np.asarray(E, dtype=np.float64)
    G = E @ E.T
    return 0.5 * (G + G.T)


def mean_pairwise_cosine(E) -> float:
    """Mean of cos(e_i, e_j) over i < j."""
    En = l2_normalize_rows(E)
    C = En.shape[0]
    if C < 2:
        return 0.0
    iu = np.triu_indices(C, k=1)
    return float(np.mean(gram_matrix(En)[iu]))


def householder_reflector(v) -> np.ndarray:
    v = _as_vec(v)
    nn = float(np.dot(v, v))
    if not np.sqrt(nn) > EPS_NORM:
        raise ZeroNorm("cannot reflect about a zero vector")
    return np.eye(v.size) - (2.0 / nn) * np.outer(v, v)


def householder_qr(A) -> tuple[np.ndarray, np.ndarray]:
    """Thin QR of an m x n matrix (m >= n) by Householder reflections.

    Returns Q (m x n, orthonormal columns) and R (n x n, upper triangular
    with a non-negative diagonal).
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim == 1:
        A = A[:, None]
    m, n = A.shape
    if m < n:
        raise DimensionMismatch(f"need rows >= cols, got {m}x{n}")
    R = A.copy()
    vs = []
    for k in range(n):
        x = R[k:, k]
        alpha = np.linalg.norm(x)
        if alpha <= RANK_TOL:
            raise RankDeficient(f"column {k} has residual norm {alpha:g}")
        # reflect toward -sign(x0)*|x|*e1 so that v0 never cancels
        sign = 1.0 if x[0] >= 0 else -1.0
        v = x.copy()
        v[0] += sign * alpha
        v /= np.linalg.norm(v)
        R[k:, k:] -= 2.0 * np.outer(v, v @ R[k:, k:])
        vs.append(v)
    Q = np.eye(m, n)
    for k in reversed(range(n)):
        v = vs[k]
        Q[k:, :] -= 2.0 * np.outer(v, v @ Q[k:, :])
    R = np.triu(R[:n, :])
    signs = np.where(np.diag(R) < 0, -1.0, 1.0)
    return Q * signs, R * signs[:, None]
