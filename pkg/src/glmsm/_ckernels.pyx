# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled batch kernels; same contract as ``_kernels_py``."""
import numpy as np

NAME = "cython"


def similarity_forward(Z, V, W):
    cdef bint same = W is V
    Z = np.ascontiguousarray(Z, dtype=np.float64)
    V = np.ascontiguousarray(V, dtype=np.float64)
    W = V if same else np.ascontiguousarray(W, dtype=np.float64)
    cdef double[:, :, ::1] z = Z
    cdef double[:, :, ::1] v = V
    cdef double[:, :, ::1] w = W
    cdef Py_ssize_t B = z.shape[0], d = z.shape[1], k = z.shape[2]
    cdef Py_ssize_t K = v.shape[0], p = v.shape[2]
    S_arr = np.zeros((B, K), dtype=np.float64)
    C_arr = np.empty((B, K, k, p), dtype=np.float64)
    cdef double[:, ::1] S = S_arr
    cdef double[:, :, :, ::1] C = C_arr
    cdef Py_ssize_t b, j, a, c, t
    cdef double acc_v, acc_w, s
    with nogil:
        for b in range(B):
            for j in range(K):
                s = 0.0
                for a in range(k):
                    for c in range(p):
                        acc_v = 0.0
                        acc_w = 0.0
                        for t in range(d):
                            acc_v = acc_v + z[b, t, a] * v[j, t, c]
                            if not same:
                                acc_w = acc_w + z[b, t, a] * w[j, t, c]
                        if same:
                            acc_w = acc_v
                        C[b, j, a, c] = acc_w
                        s = s + acc_v * acc_w
                S[b, j] = s
    return S_arr, C_arr


def similarity_backward(Z, V, C, sdot, bint need_gram):
    Z = np.ascontiguousarray(Z, dtype=np.float64)
    V = np.ascontiguousarray(V, dtype=np.float64)
    C = np.ascontiguousarray(C, dtype=np.float64)
    sdot = np.ascontiguousarray(sdot, dtype=np.float64)
    cdef double[:, :, ::1] z = Z
    cdef double[:, :, ::1] v = V
    cdef double[:, :, :, ::1] cc = C
    cdef double[:, ::1] sd = sdot
    cdef Py_ssize_t B = z.shape[0], d = z.shape[1], k = z.shape[2]
    cdef Py_ssize_t K = v.shape[0], p = v.shape[2]
    G1_arr = np.zeros((K, d, p), dtype=np.float64)
    G2_arr = np.zeros((K, p, p), dtype=np.float64)
    GZ_arr = np.zeros((B, d, k), dtype=np.float64)
    cdef double[:, :, ::1] G1 = G1_arr
    cdef double[:, :, ::1] G2 = G2_arr
    cdef double[:, :, ::1] GZ = GZ_arr
    cdef Py_ssize_t b, j, a, c, e, t
    cdef double g, acc
    with nogil:
        for j in range(K):
            for b in range(B):
                g = sd[b, j]
                if g == 0.0:
                    continue
                for t in range(d):
                    for c in range(p):
                        acc = 0.0
                        for a in range(k):
                            acc = acc + z[b, t, a] * cc[b, j, a, c]
                        G1[j, t, c] += g * acc
                if need_gram:
                    for c in range(p):
                        for e in range(p):
                            acc = 0.0
                            for a in range(k):
                                acc = acc + cc[b, j, a, c] * cc[b, j, a, e]
                            G2[j, c, e] += g * acc
        for b in range(B):
            for j in range(K):
                g = sd[b, j]
                if g == 0.0:
                    continue
                for t in range(d):
                    for a in range(k):
                        acc = 0.0
                        for c in range(p):
                            acc = acc + v[j, t, c] * cc[b, j, a, c]
                        GZ[b, t, a] += g * acc
    return G1_arr, (G2_arr if need_gram else None), GZ_arr
