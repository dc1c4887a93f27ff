"""Learning mutual subspace layer: matching, heads, losses and their gradients.

An input subspace is given by a d x k matrix ``Z`` whose Gram form ``Z Z'``
stands in for the projector: an orthonormal PCA basis (k = m) or, for the
autocorrelation approximation, the set matrix itself with unit columns.
Reference subspaces are stacked as ``refs[j]`` with shape (d, p).

Similarity per reference:

* grassmann mode (orthonormal refs): ``s_j = |Z' V_j|_F^2``
* euclidean mode (free refs): ``s_j = tr Z' V_j (V_j'V_j + eps I)^-1 V_j' Z``

Batched tensors carry a leading batch axis; the heavy reductions run in
:mod:`glmsm.kernels`.
"""
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import ModeError, RankError, ShapeError
from .manifold import ORTHO_TOL

MODES = ("grassmann", "euclidean")
ACTIVATIONS = ("identity", "sqrt")
HEADS = ("softmax", "linear")
SQRT_FLOOR = 1e-12
LOG_FLOOR = 1e-300


@dataclass
class ReferenceBank:
    refs: np.ndarray
    mode: str = "grassmann"
    epsilon: float = 1e-6

    def __post_init__(self):
        self.refs = np.asarray(self.refs, dtype=np.float64)
        if self.refs.ndim != 3:
            raise ShapeError(f"refs must have shape (K, d, p), got {self.refs.shape}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        K, d, p = self.refs.shape
        if p > d:
            raise ShapeError(f"reference dimension p={p} exceeds ambient d={d}")
        if self.mode == "grassmann":
            eye = np.eye(p)
            for j, V in enumerate(self.refs):
                err = np.linalg.norm(V.T @ V - eye)
                if err > ORTHO_TOL:
                    raise ModeError(f"reference {j} is not orthonormal (|V'V - I|_F = {err:.3e})")

    @property
    def K(self):
        return self.refs.shape[0]

    @property
    def d(self):
        return self.refs.shape[1]

    @property
    def p(self):
        return self.refs.shape[2]

    def copy(self):
        return replace(self, refs=self.refs.copy())

    def weights(self):
        """Matrices ``W_j`` with ``s_j = <Z'V_j, Z'W_j>``: ``V_j`` or ``V_j (V_j'V_j + eps I)^-1``."""
        if self.mode == "grassmann":
            return self.refs
        gram = np.einsum("jdp,jdq->jpq", self.refs, self.refs)
        smin = np.sqrt(max(np.linalg.eigvalsh(gram).min(), 0.0))
        if smin <= 1e-10:
            raise RankError(f"euclidean reference is rank deficient (sigma_min = {smin:.3e})",
                            singular_value=smin)
        inv = np.linalg.inv(gram + self.epsilon * np.eye(self.p))
        return np.einsum("jdp,jpq->jdq", self.refs, inv)


@dataclass
class HeadConfig:
    """Everything between the similarity vector and the loss.

    ``W`` (K x C) and ``b`` (C,) exist only for the linear head.  The
    inverse temperature is learned through ``log tau`` when ``learn_tau``.
    """

    activation: str = "identity"
    tau: float = 1.0
    learn_tau: bool = False
    head: str = "softmax"
    W: np.ndarray = None
    b: np.ndarray = None
    repulsion: float = 0.0
    reinforcement: bool = False

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}")
        if not (np.isfinite(self.tau) and self.tau > 0):
            raise ValueError(f"tau must be finite and positive, got {self.tau}")
        if self.repulsion < 0:
            raise ValueError("repulsion weight must be non-negative")
        if self.head == "linear":
            if self.W is None or self.b is None:
                raise ValueError("linear head requires W and b")
            self.W = np.asarray(self.W, dtype=np.float64)
            self.b = np.asarray(self.b, dtype=np.float64)
            if self.W.ndim != 2 or self.b.shape != (self.W.shape[1],):
                raise ShapeError(f"W {self.W.shape} and b {self.b.shape} do not agree")
        elif self.W is not None or self.b is not None:
            raise ValueError("W and b are only allowed with the linear head")

    def copy(self):
        return replace(
            self,
            W=None if self.W is None else self.W.copy(),
            b=None if self.b is None else self.b.copy(),
        )

    def class_count(self, K):
        return K if self.head == "softmax" else self.W.shape[1]


def _as_batch(Z):
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim == 2:
        return Z[None], True
    if Z.ndim != 3:
        raise ShapeError(f"input must be (d, k) or (B, d, k), got {Z.shape}")
    return Z, False


def _check_dims(Z, bank):
    if Z.shape[1] != bank.d:
        raise ShapeError(f"input dimension {Z.shape[1]} does not match reference dimension {bank.d}")


def match(Z, bank):
    """Batched similarities ``S`` (B, K) plus the cached ``Z'W`` products."""
    _check_dims(Z, bank)
    V = bank.refs
    W = bank.weights()
    return kernels.similarity_forward(Z, V, W)


def match_backward(Z, bank, C, sdot):
    """Gradients of ``sum_bj sdot[b,j] S[b,j]`` w.r.t. the refs and the inputs."""
    euclid = bank.mode == "euclidean"
    G1, G2, GZ = kernels.similarity_backward(Z, bank.refs, C, np.ascontiguousarray(sdot), euclid)
    if euclid:
        gV = 2.0 * (G1 - np.einsum("jdp,jpq->jdq", bank.refs, G2))
    else:
        gV = 2.0 * G1
    return gV, 2.0 * GZ


def similarity(X, bank):
    """Similarity vector (K,) of one input subspace against every reference."""
    Z, _ = _as_batch(X)
    S, _ = match(Z, bank)
    return S[0]


def similarity_grad(X, bank, sdot):
    """Return ``(ref_grads (K, d, p), input_grad (d, k))`` for upstream ``sdot`` (K,).

    Grassmann mode: ``2 sdot_j X X' V_j`` and ``sum_j 2 sdot_j V_j V_j' X``.
    Euclidean mode differentiates through ``(V'V + eps I)^-1`` exactly.
    """
    Z, _ = _as_batch(X)
    sdot = np.asarray(sdot, dtype=np.float64)
    if sdot.shape != (bank.K,):
        raise ShapeError(f"upstream has shape {sdot.shape}, expected ({bank.K},)")
    _, C = match(Z, bank)
    gV, gZ = match_backward(Z, bank, C, sdot[None])
    return gV, gZ[0]


def activate(s, kind):
    s = np.asarray(s, dtype=np.float64)
    if kind == "identity":
        return s
    if kind == "sqrt":
        return np.sqrt(np.maximum(s, 0.0))
    raise ValueError(f"unknown activation {kind!r}")


def activate_grad(s, kind):
    """Elementwise derivative and a mask of entries clamped at ``SQRT_FLOOR``."""
    s = np.asarray(s, dtype=np.float64)
    if kind == "identity":
        return np.ones_like(s), np.zeros(s.shape, dtype=bool)
    clamped = s < SQRT_FLOOR
    return 0.5 / np.sqrt(np.maximum(s, SQRT_FLOOR)), clamped


def _logsumexp(x):
    m = np.max(x, axis=-1, keepdims=True)
    return (m + np.log(np.sum(np.exp(x - m), axis=-1, keepdims=True)))[..., 0]


def temp_softmax(s, tau):
    """``softmax(tau * s)`` along the last axis, max-shifted."""
    x = tau * np.asarray(s, dtype=np.float64)
    e = np.exp(x - np.max(x, axis=-1, keepdims=True))
    return e / np.sum(e, axis=-1, keepdims=True)


def one_hot(y, C):
    y = np.atleast_1d(np.asarray(y))
    out = np.zeros((y.size, C))
    out[np.arange(y.size), y] = 1.0
    return out


def ce_loss(q, y, tau):
    """Cross-entropy ``-(1/tau) log q_y`` and its gradient ``q - onehot(y)`` w.r.t. the logits.

    The ``1/tau`` prefactor cancels the ``tau`` inside the softmax, so the
    gradient w.r.t. the unscaled logits carries no temperature.
    """
    q = np.asarray(q, dtype=np.float64)
    qy = q[y]
    if qy < LOG_FLOOR:
        warnings.warn(f"q_y = {qy:.3e} below floor; log clamped", RuntimeWarning, stacklevel=2)
        qy = LOG_FLOOR
    return -np.log(qy) / tau, q - one_hot(y, q.size)[0]


def reinforcement_loss(s, y, tau):
    """``-(1/tau) logsumexp(tau s)`` and its gradient ``-softmax(tau s)``.

    ``y`` enters only through ``sum_c y_c = 1``.
    """
    s = np.asarray(s, dtype=np.float64)
    if not 0 <= y < s.size:
        raise ValueError(f"label {y} out of range for {s.size} classes")
    return -_logsumexp(tau * s) / tau, -temp_softmax(s, tau)


def repulsion_terms(refs):
    """Repulsion loss and gradient for stacked refs, valid off-manifold too.

    ``L = K^-2 sum_ij (|V_i'V_j|_F^2 / p - delta_ij)^2``;
    ``dL/dV_i = 8/(K^2 p) sum_j a_ij V_j V_j' V_i`` with ``a`` the bracket.
    """
    K, _, p = refs.shape
    cross = np.einsum("idp,jdq->ijpq", refs, refs)
    a = np.sum(cross**2, axis=(2, 3)) / p - np.eye(K)
    loss = float(np.sum(a**2)) / K**2
    # V_j V_j' V_i = V_j (V_i' V_j)'
    grad = 8.0 / (K**2 * p) * np.einsum("ij,jdq,ijpq->idp", a, refs, cross)
    return loss, grad


def repulsion_loss(bank):
    """Repulsion loss of an orthonormal bank and its gradient per reference."""
    if bank.mode != "grassmann":
        raise ModeError("repulsion loss requires orthonormal (grassmann) references")
    return repulsion_terms(bank.refs)


def linear_head(s, W, b):
    """Affine map ``W' s + b`` (row-batched as ``s @ W + b``)."""
    s = np.asarray(s, dtype=np.float64)
    if s.shape[-1] != W.shape[0]:
        raise ShapeError(f"similarity length {s.shape[-1]} does not match W rows {W.shape[0]}")
    return s @ W + b


def linear_head_grad(s, W, dz):
    """Return ``(ds, dW, db)`` given the logit gradient ``dz`` (B, C)."""
    s = np.atleast_2d(s)
    dz = np.atleast_2d(dz)
    return dz @ W.T, s.T @ dz, dz.sum(axis=0)


@dataclass
class Gradients:
    refs: np.ndarray
    inputs: np.ndarray
    log_tau: float = 0.0
    W: np.ndarray = None
    b: np.ndarray = None


@dataclass
class Forward:
    probs: np.ndarray
    logits: np.ndarray
    similarity: np.ndarray
    activated: np.ndarray
    loss: float = None
    sample_losses: np.ndarray = None
    clamped: int = 0
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def predictions(self):
        return np.argmax(self.probs, axis=1)


def forward(Z, bank, head, y=None):
    """Similarity -> activation -> (linear) -> temperature softmax -> loss.

    ``Z`` is one input (d, k) or a batch (B, d, k).  With labels, ``loss``
    is the batch-mean cross-entropy (plus the reinforcement term when
    enabled) plus ``head.repulsion`` times the repulsion loss.
    """
    Z, _ = _as_batch(Z)
    S, C = match(Z, bank)
    A = activate(S, head.activation)
    if head.head == "linear":
        if head.W.shape[0] != bank.K:
            raise ShapeError(f"W has {head.W.shape[0]} rows but the bank has {bank.K} refs")
        logits = linear_head(A, head.W, head.b)
    else:
        logits = A
    tau = head.tau
    probs = temp_softmax(logits, tau)
    out = Forward(probs, logits, S, A, _cache={"Z": Z, "C": C})
    if y is None:
        return out
    y = np.atleast_1d(np.asarray(y))
    if y.shape != (Z.shape[0],):
        raise ShapeError(f"{y.size} labels for a batch of {Z.shape[0]}")
    n_cls = logits.shape[1]
    if np.any((y < 0) | (y >= n_cls)):
        raise ValueError(f"labels must lie in [0, {n_cls})")
    lse = _logsumexp(tau * logits)
    zy = logits[np.arange(len(y)), y]
    per = lse / tau - zy
    if head.reinforcement:
        per = per - lse / tau
    loss = float(np.mean(per))
    if head.repulsion:
        rp, rp_grad = repulsion_loss(bank)
        loss += head.repulsion * rp
        out._cache["rp_grad"] = rp_grad
    out.loss = loss
    out.sample_losses = per
    out._cache.update(y=y, lse=lse)
    return out


def backward(fwd, bank, head):
    """Gradients of ``fwd.loss`` w.r.t. refs, inputs, log tau and the linear head."""
    cache = fwd._cache
    if "y" not in cache:
        raise ValueError("forward pass was run without labels")
    Z, C, y, lse = cache["Z"], cache["C"], cache["y"], cache["lse"]
    B = Z.shape[0]
    tau = head.tau
    q = fwd.probs
    Y = one_hot(y, q.shape[1])
    dz = q - Y
    qz = np.sum(q * fwd.logits, axis=1)
    dtau = -lse / tau**2 + qz / tau
    if head.reinforcement:
        dz = dz - q
        dtau = dtau + lse / tau**2 - qz / tau
    dz /= B
    grads = Gradients(refs=None, inputs=None, log_tau=float(tau * np.mean(dtau)))
    if head.head == "linear":
        dA, grads.W, grads.b = linear_head_grad(fwd.activated, head.W, dz)
    else:
        dA = dz
    dact, clamped = activate_grad(fwd.similarity, head.activation)
    fwd.clamped = int(np.count_nonzero(clamped))
    dS = dA * dact
    gV, gZ = match_backward(Z, bank, C, dS)
    if head.repulsion:
        gV = gV + head.repulsion * cache["rp_grad"]
    grads.refs = gV
    grads.inputs = gZ
    return grads
