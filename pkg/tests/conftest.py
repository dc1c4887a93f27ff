import numpy as np
import pytest

from glmsm.manifold import canonical_similarity, random_basis


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def same_span(A, B, tol=1e-10):
    """True when the orthonormal bases ``A`` and ``B`` span the same subspace."""
    return A.shape == B.shape and abs(canonical_similarity(A, B) - A.shape[1]) < tol


def central_diff(f, x, h=1e-5):
    """Independent finite-difference oracle over every entry of ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def rel_err(a, n, floor=1e-6):
    a = np.asarray(a)
    n = np.asarray(n)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def basis(d, p, seed):
    return random_basis(d, p, np.random.default_rng(seed))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
