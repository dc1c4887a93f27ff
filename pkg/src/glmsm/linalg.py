"""Dense linear algebra used by every other module.

Thin contracts over LAPACK (via numpy): eigen- and singular value
decompositions with descending ordering, and QR-based orthonormalization
with a deterministic sign convention.
"""
from typing import NamedTuple

import numpy as np

from .errors import DomainError, RankError, ShapeError

SYMMETRY_TOL = 1e-10
RANK_RTOL = 1e-12


class SymEig(NamedTuple):
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


class CompactSvd(NamedTuple):
    left: np.ndarray
    singulars: np.ndarray
    right: np.ndarray


def as_matrix(M, name="matrix"):
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {M.shape}")
    if M.size == 0:
        raise ShapeError(f"{name} is empty")
    if not np.all(np.isfinite(M)):
        raise DomainError(f"{name} contains NaN or Inf")
    return M


def sym_eig_desc(A):
    """Eigendecomposition of a symmetric matrix, eigenvalues descending."""
    A = as_matrix(A, "A")
    if A.shape[0] != A.shape[1]:
        raise ShapeError(f"A must be square, got {A.shape}")
    scale = max(1.0, float(np.max(np.abs(A))))
    if np.max(np.abs(A - A.T)) > SYMMETRY_TOL * scale:
        raise ShapeError("A is not symmetric")
    w, U = np.linalg.eigh(A)
    return SymEig(w[::-1].copy(), U[:, ::-1].copy())


def compact_svd(M):
    """Thin SVD ``M = left @ diag(singulars) @ right.T`` with k = min(rows, cols)."""
    M = as_matrix(M, "M")
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    return CompactSvd(U, s, Vt.T.copy())


def orthonormalize(M):
    """Orthonormal basis of span(M) via Householder QR.

    Columns are sign-normalized so that diag(R) > 0; an input that is
    already orthonormal is therefore returned (up to rounding) unchanged.
    """
    M = as_matrix(M, "M")
    rows, cols = M.shape
    if cols > rows:
        raise ShapeError(f"cannot orthonormalize {cols} columns in dimension {rows}")
    Q, R = np.linalg.qr(M)
    sv = np.linalg.svd(R, compute_uv=False)
    if sv[-1] <= RANK_RTOL * sv[0]:
        raise RankError(
            f"matrix is rank deficient (smallest singular value {sv[-1]:.3e}, "
            f"largest {sv[0]:.3e})",
            singular_value=float(sv[-1]),
        )
    signs = np.where(np.diag(R) < 0, -1.0, 1.0)
    return Q * signs


# independent random streams derived from one user seed
STREAM_DATA, STREAM_INIT, STREAM_SHUFFLE, STREAM_AUDIT = range(4)


def rng_for(seed, stream):
    """Generator for ``stream`` of ``seed``; distinct streams never share draws."""
    return np.random.default_rng([int(seed), stream])
