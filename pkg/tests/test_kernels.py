import os
import subprocess
import sys

import numpy as np
import pytest

from glmsm import kernels

BACKENDS = kernels.available_backends()


def problem(seed, same=True, B=4, d=9, k=3, K=5, p=2):
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((B, d, k))
    V = rng.standard_normal((K, d, p))
    W = V if same else rng.standard_normal((K, d, p))
    sdot = rng.standard_normal((B, K))
    return Z, V, W, sdot


def reference(Z, V, W, sdot):
    A = np.einsum("bdk,jdp->bjkp", Z, V)
    C = np.einsum("bdk,jdp->bjkp", Z, W)
    S = np.einsum("bjkp,bjkp->bj", A, C)
    G1 = np.einsum("bj,bdk,bjkp->jdp", sdot, Z, C)
    G2 = np.einsum("bj,bjkp,bjkq->jpq", sdot, C, C)
    GZ = np.einsum("bj,jdp,bjkp->bdk", sdot, V, C)
    return S, C, G1, G2, GZ


@pytest.mark.parametrize("name", sorted(BACKENDS))
@pytest.mark.parametrize("same", [True, False])
def test_backend_matches_einsum_oracle(name, same):
    impl = BACKENDS[name]
    Z, V, W, sdot = problem(3, same)
    S, C, G1, G2, GZ = reference(Z, V, W, sdot)
    S_, C_ = impl.similarity_forward(Z, V, W)
    np.testing.assert_allclose(S_, S, atol=1e-12)
    np.testing.assert_allclose(C_, C, atol=1e-12)
    G1_, G2_, GZ_ = impl.similarity_backward(Z, V, C_, sdot, True)
    np.testing.assert_allclose(G1_, G1, atol=1e-12)
    np.testing.assert_allclose(G2_, G2, atol=1e-12)
    np.testing.assert_allclose(GZ_, GZ, atol=1e-12)
    assert impl.similarity_backward(Z, V, C_, sdot, False)[1] is None


@pytest.mark.skipif("cython" not in BACKENDS, reason="compiled extension not built")
@pytest.mark.parametrize("seed", range(5))
def test_backends_agree(seed):
    py, cy = BACKENDS["python"], BACKENDS["cython"]
    Z, V, W, sdot = problem(seed, same=bool(seed % 2), B=3 + seed, d=6 + seed)
    for a, b in zip(py.similarity_forward(Z, V, W), cy.similarity_forward(Z, V, W)):
        np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-13)
    C = py.similarity_forward(Z, V, W)[1]
    for a, b in zip(py.similarity_backward(Z, V, C, sdot, True), cy.similarity_backward(Z, V, C, sdot, True)):
        np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-13)


def test_env_forces_pure_python():
    env = dict(os.environ, GLMSM_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import glmsm; print(glmsm.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
