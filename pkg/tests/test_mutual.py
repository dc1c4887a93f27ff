import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import basis, central_diff, rel_err, same_span
from glmsm.classic import ClassSubspaces, alsm_batch_update, cappro_grad, cappro_score, indicator_closed_form
from glmsm.errors import ModeError, RankError, ShapeError
from glmsm.linalg import orthonormalize
from glmsm.manifold import canonical_similarity
from glmsm.mutual import (HeadConfig, ReferenceBank, activate, activate_grad, backward, ce_loss, forward,
                          linear_head, linear_head_grad, one_hot, reinforcement_loss, repulsion_loss,
                          repulsion_terms, similarity, similarity_grad, temp_softmax)

seeds = st.integers(0, 2**31 - 1)


def bank_of(refs, mode="grassmann", eps=1e-6):
    return ReferenceBank(np.stack(refs), mode, eps)


# -- reference bank --------------------------------------------------------


def test_grassmann_bank_rejects_non_orthonormal():
    with pytest.raises(ModeError):
        ReferenceBank(2.0 * basis(4, 2, 0)[None])


def test_euclidean_bank_rank_check():
    V = np.zeros((1, 4, 2))
    V[0, 0, 0] = V[0, 0, 1] = 1.0
    with pytest.raises(RankError):
        ReferenceBank(V, "euclidean").weights()


def test_bank_shape_errors():
    with pytest.raises(ShapeError):
        ReferenceBank(np.eye(3))
    with pytest.raises(ShapeError):
        ReferenceBank(np.ones((1, 2, 3)), "euclidean")


# -- similarity ------------------------------------------------------------


def test_similarity_identical_and_orthogonal():
    E = np.eye(6)
    bank = bank_of([E[:, :3], E[:, 3:]])
    np.testing.assert_allclose(similarity(E[:, :3], bank), [3.0, 0.0], atol=1e-14)


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(1, 4), st.integers(1, 4))
def test_similarity_matches_svd_and_bounds(seed, m, p):
    d = 8
    X = basis(d, m, seed)
    refs = [basis(d, p, seed + j + 1) for j in range(3)]
    s = similarity(X, bank_of(refs))
    oracle = [np.sum(np.linalg.svd(X.T @ V, compute_uv=False) ** 2) for V in refs]
    np.testing.assert_allclose(s, oracle, atol=1e-10)
    assert np.all(s >= -1e-12) and np.all(s <= min(m, p) + 1e-10)
    assert np.all(activate(s, "sqrt") <= np.sqrt(p) + 1e-10)


def test_euclidean_similarity_basis_invariance(rng):
    X = basis(7, 3, 1)
    V = rng.standard_normal((7, 2))
    R = rng.standard_normal((2, 2)) + 2 * np.eye(2)
    a = similarity(X, bank_of([V], "euclidean", 1e-12))
    b = similarity(X, bank_of([V @ R], "euclidean", 1e-12))
    np.testing.assert_allclose(a, b, atol=1e-6)
    # orthonormal refs: euclidean and grassmann agree up to eps
    Q = orthonormalize(V)
    np.testing.assert_allclose(similarity(X, bank_of([Q], "euclidean", 1e-12)), similarity(X, bank_of([Q])),
                               atol=1e-10)


def test_similarity_grad_zero_upstream():
    bank = bank_of([basis(5, 2, 0), basis(5, 2, 1)])
    gV, gX = similarity_grad(basis(5, 2, 2), bank, np.zeros(2))
    assert not gV.any() and not gX.any()


def test_similarity_grad_orthogonal_annihilation():
    E = np.eye(5)
    bank = bank_of([E[:, :2], E[:, 2:4]])
    gV, _ = similarity_grad(E[:, 2:4], bank, np.array([1.0, 1.0]))
    assert np.linalg.norm(gV[0]) == 0.0
    assert np.linalg.norm(gV[1]) > 0


def test_similarity_grad_closed_form(rng):
    X = basis(9, 3, 3)
    refs = [basis(9, 4, 4), basis(9, 4, 5)]
    sdot = rng.standard_normal(2)
    gV, gX = similarity_grad(X, bank_of(refs), sdot)
    for j, V in enumerate(refs):
        np.testing.assert_allclose(gV[j], 2 * sdot[j] * X @ X.T @ V, atol=1e-13)
    np.testing.assert_allclose(gX, sum(2 * sdot[j] * V @ V.T @ X for j, V in enumerate(refs)), atol=1e-13)


@pytest.mark.parametrize("mode", ["grassmann", "euclidean"])
def test_similarity_grad_fd(rng, mode):
    X = basis(9, 3, 6)
    refs = np.stack([basis(9, 4, 7), basis(9, 4, 8)])
    if mode == "euclidean":
        refs = refs @ (rng.standard_normal((4, 4)) + 2 * np.eye(4))
    sdot = rng.standard_normal(2)
    bank = ReferenceBank(refs, mode)
    gV, gX = similarity_grad(X, bank, sdot)

    def f_refs(R):
        return sdot @ similarity(X, ReferenceBank(R, "euclidean", bank.epsilon)) if mode == "euclidean" \
            else sdot @ np.array([np.sum((X.T @ V) ** 2) for V in R])

    # the pseudoinverse path has larger finite-difference truncation error
    assert rel_err(gV, central_diff(f_refs, refs)) < (1e-6 if mode == "grassmann" else 1e-5)
    assert rel_err(gX, central_diff(lambda Z: sdot @ similarity(Z, bank), X)) < 1e-6


# -- activation, softmax, losses --------------------------------------------


def test_activation_values():
    s = np.array([4.0, 0.25])
    np.testing.assert_array_equal(activate(s, "identity"), s)
    np.testing.assert_array_equal(activate(s, "sqrt"), [2.0, 0.5])


def test_sqrt_grad_fd(rng):
    s = rng.uniform(0.1, 3.0, 5)
    g, clamped = activate_grad(s, "sqrt")
    num = (np.sqrt(s + 1e-6) - np.sqrt(s - 1e-6)) / 2e-6
    assert rel_err(g, num) < 1e-7
    assert not clamped.any()


def test_sqrt_grad_clamped():
    g, clamped = activate_grad(np.array([0.0, 1.0]), "sqrt")
    assert clamped.tolist() == [True, False]
    assert np.isfinite(g).all()


def test_softmax_examples():
    np.testing.assert_allclose(temp_softmax(np.zeros(2), 1.0), [0.5, 0.5])
    assert temp_softmax(np.array([1.0, 0.0]), 1000.0)[0] > 1 - 1e-9


def test_softmax_direct_oracle(rng):
    s = rng.standard_normal(6)
    e = np.exp(0.37 * s)
    np.testing.assert_allclose(temp_softmax(s, 0.37), e / e.sum(), rtol=1e-12, atol=0)


@settings(max_examples=60, deadline=None)
@given(seeds, st.floats(1e-3, 1e3))
def test_softmax_properties(seed, tau):
    s = np.random.default_rng(seed).standard_normal(5)
    q = temp_softmax(s, tau)
    assert abs(q.sum() - 1) < 1e-12
    assert np.argmax(q) == np.argmax(s)


def test_ce_examples():
    assert ce_loss(one_hot(2, 4)[0], 2, 1.0)[0] == 0.0
    assert ce_loss(np.full(4, 0.25), 1, 1.0)[0] == pytest.approx(np.log(4))


def test_ce_grad_fd(rng):
    s = rng.standard_normal(4)
    tau = 1.7
    _, g = ce_loss(temp_softmax(s, tau), 1, tau)
    num = central_diff(lambda t: ce_loss(temp_softmax(t, tau), 1, tau)[0], s)
    assert rel_err(g, num) < 1e-6


def test_ce_floor_warning():
    with pytest.warns(RuntimeWarning):
        loss, _ = ce_loss(np.array([1.0, 0.0]), 1, 1.0)
    assert np.isfinite(loss)


def test_reinforcement_values():
    assert reinforcement_loss(np.zeros(5), 0, 2.0)[0] == pytest.approx(-np.log(5) / 2)
    assert reinforcement_loss(np.array([1.0, 0.0]), 0, 1.0)[0] == pytest.approx(-np.log(np.e + 1))


def test_reinforcement_grad_fd(rng):
    s = rng.standard_normal(3)
    num = central_diff(lambda t: reinforcement_loss(t, 0, 0.8)[0], s)
    assert rel_err(reinforcement_loss(s, 0, 0.8)[1], num) < 1e-6


@settings(max_examples=60, deadline=None)
@given(seeds, st.integers(0, 2), st.floats(0.1, 10))
def test_combined_gradient_identity(seed, y, tau):
    # L_CE + L_RE = -s_y, so the combined gradient is exactly -onehot(y);
    # on the label component that equals -iota with the soft prediction q.
    s = np.random.default_rng(seed).standard_normal(3)
    q = temp_softmax(s, tau)
    Y = one_hot(y, 3)[0]
    combined = ce_loss(q, y, tau)[1] + reinforcement_loss(s, y, tau)[1]
    np.testing.assert_allclose(combined, -Y, atol=1e-12)
    iota = Y - q + Y * q
    assert abs(combined[y] + iota[y]) < 1e-12


def test_repulsion_examples():
    E = np.eye(4)
    assert repulsion_loss(bank_of([E[:, :2], E[:, 2:]]))[0] == 0.0
    V = basis(4, 2, 0)
    assert repulsion_loss(bank_of([V, V]))[0] == pytest.approx(0.5)


def test_repulsion_grad_fd():
    refs = np.stack([basis(6, 2, s) for s in range(3)])
    loss, g = repulsion_loss(ReferenceBank(refs))
    assert loss >= 0
    assert rel_err(g, central_diff(lambda R: repulsion_terms(R)[0], refs)) < 1e-6


def test_repulsion_requires_grassmann():
    with pytest.raises(ModeError):
        repulsion_loss(ReferenceBank(basis(4, 2, 0)[None], "euclidean"))


def test_linear_head_examples(rng):
    s = rng.standard_normal(3)
    np.testing.assert_array_equal(linear_head(s, np.eye(3), np.zeros(3)), s)
    b = rng.standard_normal(2)
    np.testing.assert_array_equal(linear_head(np.zeros(3), rng.standard_normal((3, 2)), b), b)


def test_linear_head_grad_fd(rng):
    s, W, b, dz = rng.standard_normal(3), rng.standard_normal((3, 2)), rng.standard_normal(2), rng.standard_normal(2)
    ds, dW, db = linear_head_grad(s, W, dz)
    assert rel_err(ds[0], central_diff(lambda t: dz @ linear_head(t, W, b), s)) < 1e-6
    assert rel_err(dW, central_diff(lambda t: dz @ linear_head(s, t, b), W)) < 1e-6
    assert rel_err(db, central_diff(lambda t: dz @ linear_head(s, W, t), b)) < 1e-6


# -- composed layer --------------------------------------------------------


def test_forward_reduces_to_softmax_of_similarities():
    refs = [basis(6, 2, s) for s in range(3)]
    bank = bank_of(refs)
    X = basis(6, 2, 9)
    fwd = forward(X, bank, HeadConfig(), y=[1])
    s = similarity(X, bank)
    np.testing.assert_allclose(fwd.probs[0], np.exp(s) / np.exp(s).sum(), rtol=1e-12)
    assert fwd.loss == pytest.approx(-np.log(fwd.probs[0, 1]))


def test_forward_single_vector_is_cappro(rng):
    refs = [basis(5, 1, s) for s in range(3)]
    x = rng.standard_normal(5)
    x /= np.linalg.norm(x)
    fwd = forward(x[:, None], bank_of(refs), HeadConfig(activation="sqrt"))
    np.testing.assert_allclose(fwd.activated[0], [cappro_score(V, x) for V in refs], atol=1e-14)


def full_loss_fd(Z, bank, head, y):
    """Independent numeric gradients of the forward loss."""
    refs = bank.refs

    def by_refs(R):
        # perturbed grassmann refs leave the manifold, so skip validation
        b = bank.copy()
        b.refs = R
        return forward(Z, b, head, y).loss

    out = {"refs": central_diff(by_refs, refs), "inputs": central_diff(lambda t: forward(t, bank, head, y).loss, Z)}
    if head.head == "linear":
        def with_head(**kw):
            h = head.copy()
            for k, v in kw.items():
                setattr(h, k, v)
            return h
        out["W"] = central_diff(lambda t: forward(Z, bank, with_head(W=t), y).loss, head.W)
        out["b"] = central_diff(lambda t: forward(Z, bank, with_head(b=t), y).loss, head.b)
    lt = np.array([np.log(head.tau)])

    def by_log_tau(t):
        h = head.copy()
        h.tau = float(np.exp(t[0]))
        return forward(Z, bank, h, y).loss

    out["log_tau"] = central_diff(by_log_tau, lt)[0]
    return out


@pytest.mark.parametrize("mode", ["grassmann", "euclidean"])
@pytest.mark.parametrize("kind", ["softmax", "linear"])
@pytest.mark.parametrize("activation", ["identity", "sqrt"])
@pytest.mark.parametrize("reinforce", [False, True])
def test_full_pipeline_fd(rng, mode, kind, activation, reinforce):
    d, m, p, K, C = 8, 2, 3, 3, 3
    refs = np.stack([basis(d, p, 40 + j) for j in range(K)])
    if mode == "euclidean":
        refs = refs @ (rng.standard_normal((K, p, p)) + 2 * np.eye(p))
    bank = ReferenceBank(refs, mode)
    W = b = None
    if kind == "linear":
        W, b = rng.standard_normal((K, C)), rng.standard_normal(C)
    head = HeadConfig(activation=activation, tau=1.3, learn_tau=True, head=kind, W=W, b=b,
                      repulsion=0.3 if mode == "grassmann" else 0.0, reinforcement=reinforce)
    Z = np.stack([basis(d, m, 50 + i) for i in range(3)])
    y = np.array([0, 2, 1])
    grads = backward(forward(Z, bank, head, y), bank, head)
    num = full_loss_fd(Z, bank, head, y)
    tol = 1e-5 if mode == "grassmann" else 1e-4
    for name, n in num.items():
        assert rel_err(getattr(grads, name), n) < tol, name


def test_learned_tau_gradient_nonpositive(rng):
    bank = bank_of([basis(6, 2, s) for s in range(3)])
    Z = np.stack([basis(6, 2, 10 + i) for i in range(4)])
    head = HeadConfig(tau=0.7, learn_tau=True)
    grads = backward(forward(Z, bank, head, [0, 1, 2, 0]), bank, head)
    assert grads.log_tau <= 0


def test_forward_label_validation():
    bank = bank_of([basis(4, 1, 0), basis(4, 1, 1)])
    with pytest.raises(ValueError):
        forward(basis(4, 1, 2), bank, HeadConfig(), y=[2])
    with pytest.raises(ShapeError):
        forward(basis(5, 1, 2), bank, HeadConfig())


def test_cappro_alsm_bridge(rng):
    # p = 1 refs, sqrt activation, near-infinite tau and loss gradient -iota:
    # one gradient step with w forced to 1 reproduces the ALSM span.
    d, C = 5, 3
    refs = [basis(d, 1, 60 + c) for c in range(C)]
    x = rng.standard_normal(d)
    s = np.array([cappro_score(V, x) for V in refs])
    q_soft = temp_softmax(s, 1e6)
    q = int(np.argmax(q_soft))
    y = (q + 1) % C
    iota = one_hot(y, C)[0] - q_soft + one_hot(y, C)[0] * q_soft
    np.testing.assert_allclose(iota, [indicator_closed_form(c, q, y) for c in range(C)], atol=1e-12)
    rate = 0.1
    stepped = []
    for c, V in enumerate(refs):
        g = cappro_grad(V, x, -iota[c]) * cappro_score(V, x)  # w forced to 1
        stepped.append(orthonormalize(V - rate * g))
    alsm = alsm_batch_update(ClassSubspaces(np.stack(refs)), x[None], [y], rate)
    for c in range(C):
        assert same_span(stepped[c], alsm.bases[c], tol=1e-10)
    assert canonical_similarity(stepped[y], alsm.bases[y]) == pytest.approx(1.0, abs=1e-10)
