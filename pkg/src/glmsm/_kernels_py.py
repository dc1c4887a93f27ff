"""Pure numpy batch kernels for the subspace matching layer.

Shapes: inputs ``Z`` (B, d, k), references ``V`` and ``W`` (K, d, p).
``W`` is ``V`` for orthonormal references and ``V (V'V + eps I)^-1``
otherwise, so one pair of kernels covers both similarity forms.
"""
import numpy as np

NAME = "python"


def similarity_forward(Z, V, W):
    """Return ``S[b, j] = <Z_b' V_j, Z_b' W_j>_F`` and ``C[b, j] = Z_b' W_j``."""
    A = np.einsum("bdk,jdp->bjkp", Z, V)
    C = A if W is V else np.einsum("bdk,jdp->bjkp", Z, W)
    S = np.einsum("bjkp,bjkp->bj", A, C)
    return S, C


def similarity_backward(Z, V, C, sdot, need_gram):
    """Upstream-weighted reductions over the batch.

    ``G1[j] = sum_b sdot[b,j] Z_b C_bj``, ``G2[j] = sum_b sdot[b,j] C_bj' C_bj``
    (only if ``need_gram``) and ``GZ[b] = sum_j sdot[b,j] V_j C_bj'``.
    """
    G1 = np.einsum("bj,bdk,bjkp->jdp", sdot, Z, C, optimize=True)
    G2 = np.einsum("bj,bjkp,bjkq->jpq", sdot, C, C, optimize=True) if need_gram else None
    GZ = np.einsum("bj,jdp,bjkp->bdk", sdot, V, C, optimize=True)
    return G1, G2, GZ
