"""Mini-batch training (SGD / Riemannian SGD), evaluation and gradient auditing."""
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import stack_inputs
from .errors import TrainingDiverged
from .linalg import STREAM_AUDIT, STREAM_SHUFFLE, rng_for
from .manifold import rsgd_step
from .model import ARCHITECTURES
from .mutual import ReferenceBank, backward, forward, repulsion_loss

log = logging.getLogger(__name__)

OPTIMIZERS = ("sgd", "rsgd")


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    rate: float = 0.05
    rate_decay: float = 0.95
    seed: int = 42
    optimizer: str = None  # defaults to the architecture's optimizer
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not (np.isfinite(self.rate) and self.rate >= 0):
            raise ValueError(f"rate must be finite and non-negative, got {self.rate}")
        if not 0 < self.rate_decay <= 1:
            raise ValueError(f"rate_decay must lie in (0, 1], got {self.rate_decay}")
        if self.optimizer is not None and self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    train_acc: float


@dataclass
class TrainResult:
    model: object
    history: list = field(default_factory=list)


@dataclass
class EvalReport:
    accuracy: float
    confusion: np.ndarray
    mean_loss: float

    @property
    def total(self):
        return int(self.confusion.sum())


def format_history(history):
    """History as ``epoch<TAB>mean_loss<TAB>train_acc`` lines with a header row."""
    lines = ["epoch\tmean_loss\ttrain_acc"]
    lines += [f"{h.epoch}\t{h.mean_loss!r}\t{h.train_acc!r}" for h in history]
    return "\n".join(lines) + "\n"


def resolve_optimizer(model, config):
    expected = ARCHITECTURES[model.arch][2]
    opt = config.optimizer or expected
    if opt != expected:
        raise ValueError(f"{model.arch} keeps {model.bank.mode} references and needs "
                         f"optimizer {expected!r}, got {opt!r}")
    return opt


def apply_update(model, grads, rate, optimizer):
    """Take one descent step on every parameter of ``model`` in place."""
    bank = model.bank
    if optimizer == "rsgd":
        refs = np.stack([rsgd_step(V, G, rate) for V, G in zip(bank.refs, grads.refs)])
    else:
        refs = bank.refs - rate * grads.refs
    model.bank = ReferenceBank(refs, bank.mode, bank.epsilon)
    head = model.head
    if head.head == "linear":
        head.W = head.W - rate * grads.W
        head.b = head.b - rate * grads.b
    if head.learn_tau:
        head.tau = float(head.tau * np.exp(-rate * grads.log_tau))


def _full_pass(Z, y, model, batch=256):
    """Objective and accuracy over all samples, in fixed order."""
    total = 0.0
    preds = np.empty(len(y), dtype=np.int64)
    for start in range(0, len(y), batch):
        sl = slice(start, start + batch)
        fwd = forward(Z[sl], model.bank, model.head, y[sl])
        total += float(np.sum(fwd.sample_losses))
        preds[sl] = fwd.predictions
    mean_loss = total / len(y)
    if model.head.repulsion:
        mean_loss += model.head.repulsion * repulsion_loss(model.bank)[0]
    return mean_loss, float(np.mean(preds == y)), preds


def train(dataset, model, config, inputs=None):
    """Train a copy of ``model`` on ``dataset``; returns the model and per-epoch history.

    Gradients are batch means.  The learning rate for epoch ``e`` (0-based)
    is ``rate * rate_decay**e``.  History entries are measured on the whole
    training set after each epoch.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if dataset.d != model.bank.d:
        raise ValueError(f"dataset dimension {dataset.d} does not match model dimension {model.bank.d}")
    if dataset.class_count != model.class_count:
        raise ValueError(f"dataset has {dataset.class_count} classes, model predicts {model.class_count}")
    optimizer = resolve_optimizer(model, config)
    if config.rate == 0:
        warnings.warn("learning rate is 0; parameters will not change", RuntimeWarning, stacklevel=2)
    model = model.copy()
    Z = stack_inputs(dataset, model.input_mode, model.m) if inputs is None else inputs
    y = dataset.labels
    rng = rng_for(config.seed, STREAM_SHUFFLE)
    N = len(y)
    result = TrainResult(model)
    for epoch in range(config.epochs):
        rate = config.rate * config.rate_decay**epoch
        order = rng.permutation(N) if config.shuffle else np.arange(N)
        for bi, start in enumerate(range(0, N, config.batch_size)):
            idx = order[start:start + config.batch_size]
            fwd = forward(Z[idx], model.bank, model.head, y[idx])
            if not np.isfinite(fwd.loss):
                raise TrainingDiverged(epoch + 1, bi, fwd.loss)
            if rate == 0:
                continue
            grads = backward(fwd, model.bank, model.head)
            apply_update(model, grads, rate, optimizer)
        loss, acc, _ = _full_pass(Z, y, model)
        if not np.isfinite(loss):
            raise TrainingDiverged(epoch + 1, None, loss)
        result.history.append(EpochStats(epoch + 1, loss, acc))
        log.debug("epoch %d loss %.6f acc %.4f", epoch + 1, loss, acc)
    result.model = model
    return result


def evaluate(dataset, model, inputs=None):
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    if dataset.d != model.bank.d:
        raise ValueError(f"dataset dimension d={dataset.d} does not match model dimension d={model.bank.d}")
    C = model.class_count
    if dataset.class_count > C:
        raise ValueError(f"dataset has {dataset.class_count} classes, model predicts {C}")
    Z = stack_inputs(dataset, model.input_mode, model.m) if inputs is None else inputs
    y = dataset.labels
    mean_loss, acc, preds = _full_pass(Z, y, model)
    confusion = np.zeros((C, C), dtype=np.int64)
    np.add.at(confusion, (y, preds), 1)
    return EvalReport(float(acc), confusion, mean_loss)


# -- gradient audit --------------------------------------------------------


@dataclass
class ParamError:
    max_rel: float
    mean_rel: float
    worst: tuple
    count: int


@dataclass
class GradCheckReport:
    params: dict
    step: float

    @property
    def max_rel(self):
        return max(p.max_rel for p in self.params.values())

    @property
    def worst(self):
        name = max(self.params, key=lambda k: self.params[k].max_rel)
        return name, self.params[name].worst

    def passed(self, threshold):
        return self.max_rel < threshold

    def lines(self):
        out = []
        for name, p in self.params.items():
            out.append(f"{name:8s} n={p.count:<5d} max_rel={p.max_rel:.3e} "
                       f"mean_rel={p.mean_rel:.3e} worst={p.worst}")
        return out


REL_FLOOR = 1e-6


def relative_error(analytic, numeric, floor=REL_FLOOR):
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps near-zero entries absolute."""
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def _central(f, x, h):
    """Central differences of scalar ``f`` over every entry of array ``x`` (perturbed in place)."""
    g = np.empty_like(x)
    flat = x.reshape(-1)
    out = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        out[i] = (fp - fm) / (2 * h)
    return g


def grad_check(Z, model, y, step=1e-5, floor=REL_FLOOR):
    """Compare every analytic gradient of the batch loss with central differences.

    Parameters are perturbed in Euclidean coordinates (references off the
    manifold included); the temperature is checked through ``log tau``.
    """
    Z = np.array(Z, dtype=np.float64)
    batch = Z if Z.ndim == 3 else Z[None]
    y = np.atleast_1d(y)
    model = model.copy()
    bank, head = model.bank, model.head
    fwd = forward(batch, bank, head, y)
    grads = backward(fwd, bank, head)

    def loss():
        return forward(batch, bank, head, y).loss

    checks = {
        "refs": (bank.refs, grads.refs),
        "inputs": (batch, grads.inputs),
    }
    if head.head == "linear":
        checks["W"] = (head.W, grads.W)
        checks["b"] = (head.b, grads.b)
    numeric = {name: _central(loss, arr, step) for name, (arr, _) in checks.items()}
    if head.learn_tau:
        log_tau = np.array([np.log(head.tau)])

        def loss_tau():
            head.tau = float(np.exp(log_tau[0]))
            return loss()

        numeric["log_tau"] = _central(loss_tau, log_tau, step)
        head.tau = float(np.exp(log_tau[0]))
        checks["log_tau"] = (log_tau, np.array([grads.log_tau]))
    params = {}
    for name, (_, analytic) in checks.items():
        err = relative_error(np.asarray(analytic), numeric[name], floor)
        worst = np.unravel_index(int(np.argmax(err)), err.shape)
        params[name] = ParamError(float(err.max()), float(err.mean()),
                                  tuple(int(i) for i in worst), err.size)
    return GradCheckReport(params, step)


def random_instance(arch, d=10, m=3, p=3, K=4, classes=None, *, seed=0, batch=3,
                    activation="sqrt", learn_tau=True, repulsion=None, reinforcement=False):
    """Random ``(Z, model, y)`` for gradient audits.

    Euclidean references get a random invertible right factor so they are
    not orthonormal; grassmann banks get a repulsion weight unless given.
    """
    from .model import build_model
    from .manifold import random_basis

    rng = rng_for(seed, STREAM_AUDIT)
    mode = ARCHITECTURES[arch][0]
    classes = K if classes is None else classes
    if repulsion is None:
        repulsion = 0.25 if mode == "grassmann" else 0.0
    model = build_model(arch, d, classes, m, p, K, seed=seed, activation=activation,
                        tau=float(rng.uniform(0.5, 3.0)), learn_tau=learn_tau,
                        repulsion=repulsion, reinforcement=reinforcement)
    if mode == "euclidean":
        mix = rng.standard_normal((K, p, p)) + 2.0 * np.eye(p)
        model.bank = ReferenceBank(np.einsum("jdp,jpq->jdq", model.bank.refs, mix), mode)
    if model.head.head == "linear":
        model.head.b = rng.standard_normal(classes) * 0.1
    Z = np.stack([random_basis(d, m, rng) for _ in range(batch)])
    y = rng.integers(0, classes, size=batch)
    return Z, model, y
