"""Vector-input learning subspace classifiers.

Covers the subspace method (SM: per-class uncentered PCA), Kohonen's
learning subspace method (LSM: per-sample reinforce/punish rotations), the
averaged variant (ALSM) driven by an indicator function, and the CapPro
projection-length score.  Classes are 0-based.
"""
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateError, RankError, ShapeError
from .linalg import orthonormalize, sym_eig_desc

RANK_RTOL = 1e-12


@dataclass
class ClassSubspaces:
    """One orthonormal d x m basis per class, stacked as ``bases[c]``."""

    bases: np.ndarray

    def __post_init__(self):
        self.bases = np.asarray(self.bases, dtype=np.float64)
        if self.bases.ndim != 3:
            raise ShapeError(f"bases must have shape (C, d, m), got {self.bases.shape}")
        if self.bases.shape[0] < 2:
            raise ShapeError("need at least two classes")

    @property
    def class_count(self):
        return self.bases.shape[0]

    @property
    def sub_dim(self):
        return self.bases.shape[2]

    def copy(self):
        return ClassSubspaces(self.bases.copy())


@dataclass(frozen=True)
class LsmRates:
    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and non-negative, got {v}")


def _autocorrelation(X):
    return X.T @ X


def fit_sm(X, y, m, class_count=None):
    """Fit class subspaces by uncentered PCA.

    ``X`` holds one sample per row.  Each class basis is the top-m
    eigenvectors of ``sum x x'`` over the class samples.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    C = int(y.max()) + 1 if class_count is None else class_count
    bases = []
    for c in range(C):
        Xc = X[y == c]
        if len(Xc) == 0:
            raise RankError(f"class {c} has no samples")
        eig = sym_eig_desc(_autocorrelation(Xc))
        lam = eig.eigenvalues
        rank = int(np.sum(lam > RANK_RTOL * max(lam[0], 0.0))) if lam[0] > 0 else 0
        if rank < m:
            raise RankError(f"class {c}: autocorrelation rank {rank} < m={m}")
        bases.append(eig.eigenvectors[:, :m])
    return ClassSubspaces(np.stack(bases))


def scores(model, x):
    """Projection lengths ``|V_c' x|`` for every class."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.bases.shape[1],):
        raise ShapeError(f"x has shape {x.shape}, expected ({model.bases.shape[1]},)")
    return np.linalg.norm(np.einsum("cdm,d->cm", model.bases, x), axis=1)


def lsm_predict(model, x):
    """Class whose subspace captures the longest projection of ``x``.

    Ties go to the lowest class index.
    """
    s = scores(model, x)
    if not np.any(s):
        warnings.warn("zero input vector: all class scores are 0", RuntimeWarning, stacklevel=2)
    return int(np.argmax(s))


def predict_many(model, X):
    P = np.einsum("cdm,nd->ncm", model.bases, np.asarray(X, dtype=np.float64))
    return np.argmax(np.linalg.norm(P, axis=2), axis=1)


def _rotate(V, x, rate):
    return orthonormalize(V + rate * np.outer(x, x @ V))


def lsm_update(model, x, y, rates):
    """Kohonen update for one labelled sample; returns a new model."""
    x = np.asarray(x, dtype=np.float64)
    q = lsm_predict(model, x)
    out = model.copy()
    if q == y:
        if rates.alpha:
            out.bases[y] = _rotate(model.bases[y], x, rates.alpha)
    else:
        if rates.beta:
            out.bases[y] = _rotate(model.bases[y], x, rates.beta)
        if rates.gamma:
            out.bases[q] = _rotate(model.bases[q], x, -rates.gamma)
    return out


def indicator(c, q, y):
    """ALSM indicator: +1 reinforce (c == y), -1 punish false positive, else 0."""
    if c == y:
        return 1
    if c == q:
        return -1
    return 0


def indicator_closed_form(c, q, y):
    """``y_c - q_c + y_c q_c`` with one-hot ``y`` and ``q``."""
    yc = int(c == y)
    qc = int(c == q)
    return yc - qc + yc * qc


def alsm_batch_update(model, X, y, rate):
    """Averaged (Oja) update with equal rates over a batch.

    Predictions for every sample come from the model *before* the update.
    For each class, ``V_c <- orth(V_c + rate * sum_i iota(c, q_i, y_i) x_i x_i' V_c)``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y))
    if len(X) == 0:
        raise ValueError("empty batch")
    q = predict_many(model, X)
    out = model.copy()
    for c in range(model.class_count):
        iota = np.array([indicator(c, qi, yi) for qi, yi in zip(q, y)], dtype=np.float64)
        if not np.any(iota):
            continue
        V = model.bases[c]
        A = (X.T * iota) @ X
        out.bases[c] = orthonormalize(V + rate * (A @ V))
    return out


def train_lsm(model, X, y, rates, epochs=1, rng=None):
    """Sequential LSM over the samples, optionally reshuffled each epoch."""
    X = np.asarray(X, dtype=np.float64)
    for _ in range(epochs):
        order = np.arange(len(X)) if rng is None else rng.permutation(len(X))
        for i in order:
            model = lsm_update(model, X[i], int(y[i]), rates)
    return model


def train_alsm(model, X, y, rate, epochs=1):
    """Full-batch ALSM iterations starting from ``model``."""
    for _ in range(epochs):
        model = alsm_batch_update(model, X, y, rate)
    return model


def cappro_score(V, x):
    """Length of the projection ``|V' x|_2``."""
    return float(np.linalg.norm(np.asarray(V).T @ np.asarray(x)))


def cappro_grad(V, x, upstream=1.0):
    """Gradient of ``upstream * |V'x|`` w.r.t. ``V``: ``upstream * w x x' V``, ``w = 1/|V'x|``."""
    V = np.asarray(V, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    proj = V.T @ x
    norm = np.linalg.norm(proj)
    if norm <= 1e-12:
        raise DegenerateError("projection length is zero; CapPro gradient undefined")
    return upstream / norm * np.outer(x, proj)
