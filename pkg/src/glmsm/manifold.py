"""Grassmann manifold primitives.

Points are represented by d x p matrices with orthonormal columns (Stiefel
representatives); two representatives related by a p x p rotation are the
same point.  Tangent vectors live in the horizontal space ``V.T @ H == 0``.
"""
import numpy as np

from .errors import DomainError, ShapeError, TangencyError
from .linalg import as_matrix, orthonormalize

ORTHO_TOL = 1e-10
TANGENCY_TOL = 1e-6
ZERO_GRAD_TOL = 1e-15
COSINE_NOISE = 1e-9


def orthonormality_error(V):
    """Frobenius norm of ``V.T V - I``."""
    V = np.asarray(V, dtype=np.float64)
    return float(np.linalg.norm(V.T @ V - np.eye(V.shape[1])))


def check_basis(V, tol=ORTHO_TOL, name="V"):
    """Validate and return ``V`` as an orthonormal basis matrix."""
    V = as_matrix(V, name)
    d, p = V.shape
    if p > d:
        raise ShapeError(f"{name} has more columns ({p}) than rows ({d})")
    err = orthonormality_error(V)
    if err > tol:
        raise DomainError(f"{name} is not orthonormal (|V'V - I|_F = {err:.3e})")
    return V


def random_basis(d, p, rng):
    """Uniformly distributed point of G(d, p), as an orthonormal basis."""
    return orthonormalize(rng.standard_normal((d, p)))


def horizontal_project(V, G):
    """Project ``G`` onto the horizontal space at ``V``: ``(I - V V') G``."""
    V = as_matrix(V, "V")
    G = as_matrix(G, "G")
    if V.shape != G.shape:
        raise ShapeError(f"V has shape {V.shape} but G has shape {G.shape}")
    return G - V @ (V.T @ G)


def grassmann_exp(V, H, step):
    """Follow the geodesic from ``V`` in direction ``H`` for time ``step``.

    With the thin SVD ``H = J diag(theta) Q'`` the endpoint is
    ``orth(V Q cos(theta*step) Q' + J sin(theta*step) Q')``.
    """
    V = as_matrix(V, "V")
    H = as_matrix(H, "H")
    if V.shape != H.shape:
        raise ShapeError(f"V has shape {V.shape} but H has shape {H.shape}")
    if not np.isfinite(step):
        raise DomainError(f"step must be finite, got {step}")
    residual = np.linalg.norm(V.T @ H)
    if residual > TANGENCY_TOL:
        raise TangencyError(f"H is not horizontal at V (|V'H|_F = {residual:.3e})")
    if step == 0 or np.linalg.norm(H) < ZERO_GRAD_TOL:
        return V.copy()
    J, theta, Qt = np.linalg.svd(H, full_matrices=False)
    Q = Qt.T
    moved = (V @ Q) * np.cos(theta * step) @ Qt + J * np.sin(theta * step) @ Qt
    return orthonormalize(moved)


def rsgd_step(V, euclid_grad, rate):
    """One Riemannian SGD step: project the descent direction, then exponentiate."""
    return grassmann_exp(V, horizontal_project(V, -np.asarray(euclid_grad, dtype=np.float64)), rate)


def canonical_cosines(X, V):
    """Singular values of ``X' V``, descending (cosines of canonical angles)."""
    X = as_matrix(X, "X")
    V = as_matrix(V, "V")
    if X.shape[0] != V.shape[0]:
        raise ShapeError(f"ambient dimensions differ: {X.shape[0]} vs {V.shape[0]}")
    return np.linalg.svd(X.T @ V, compute_uv=False)


def canonical_angles(X, V):
    """Canonical angles between span(X) and span(V), ascending.

    Angles come from the cosines ``sigma(X'V)``; where a cosine exceeds
    ``sqrt(1/2)`` the sine-based value from ``(I - XX')V`` is used instead,
    since arccos loses about half the digits near zero.
    """
    cos = canonical_cosines(X, V)
    if cos[0] > 1.0 + COSINE_NOISE:
        raise DomainError(f"cosine {cos[0]!r} exceeds 1; bases are not orthonormal")
    cos = np.clip(cos, 0.0, 1.0)
    small, big = (V, X) if V.shape[1] <= X.shape[1] else (X, V)
    resid = small - big @ (big.T @ small)
    sin = np.sort(np.linalg.svd(resid, compute_uv=False))[: cos.size]
    sin = np.clip(sin, 0.0, 1.0)
    return np.where(cos**2 > 0.5, np.arcsin(sin), np.arccos(cos))


def canonical_similarity(X, V):
    """Sum of squared canonical cosines, ``|X'V|_F^2`` for orthonormal bases."""
    return float(np.sum(canonical_cosines(X, V) ** 2))
