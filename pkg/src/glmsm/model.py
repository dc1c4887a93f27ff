"""Model bundle, architecture presets and the versioned text model format."""
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import stack_inputs
from .linalg import STREAM_INIT, rng_for, sym_eig_desc
from .manifold import random_basis
from .mutual import HeadConfig, ReferenceBank

FORMAT_VERSION = 1

# arch -> (reference mode, head kind, optimizer)
ARCHITECTURES = {
    "glmsm-softmax": ("grassmann", "softmax", "rsgd"),
    "glmsm-fc": ("grassmann", "linear", "rsgd"),
    "lmsm-softmax": ("euclidean", "softmax", "sgd"),
    "lmsm-fc": ("euclidean", "linear", "sgd"),
}


@dataclass
class SubspaceModel:
    arch: str
    bank: ReferenceBank
    head: HeadConfig
    input_mode: str = "pca"
    m: int = 3
    meta: dict = field(default_factory=dict)

    @property
    def class_count(self):
        return self.head.class_count(self.bank.K)

    def copy(self):
        return SubspaceModel(self.arch, self.bank.copy(), self.head.copy(),
                             self.input_mode, self.m, dict(self.meta))


def class_autocorr_bases(dataset, input_mode, m, p):
    """Top-p eigenvectors of each class's summed input autocorrelation."""
    Z = stack_inputs(dataset, input_mode, m)
    labels = dataset.labels
    bases = []
    for c in range(dataset.class_count):
        Zc = Z[labels == c]
        A = np.einsum("ndk,nek->de", Zc, Zc)
        bases.append(sym_eig_desc(A).eigenvectors[:, :p])
    return np.stack(bases)


def build_model(arch, d, classes, m=3, p=3, K=None, *, seed=0, activation="identity",
                tau=1.0, learn_tau=False, repulsion=0.0, reinforcement=False,
                input_mode="pca", epsilon=1e-6, init="random", dataset=None):
    """Initialise a model for one of the ``ARCHITECTURES``.

    Softmax heads need ``K == classes``.  ``init="sm"`` seeds each reference
    with its class's dominant input directions (softmax heads only).
    """
    if arch not in ARCHITECTURES:
        raise ValueError(f"unknown architecture {arch!r}; choose from {sorted(ARCHITECTURES)}")
    mode, head_kind, _ = ARCHITECTURES[arch]
    K = classes if K is None else K
    if head_kind == "softmax" and K != classes:
        raise ValueError(f"{arch} uses one reference per class: K={K} but classes={classes}")
    if p > d or m > d:
        raise ValueError(f"subspace dimensions m={m}, p={p} exceed d={d}")
    rng = rng_for(seed, STREAM_INIT)
    if init == "sm":
        if dataset is None or head_kind != "softmax":
            raise ValueError("sm initialisation needs a dataset and a softmax head")
        refs = class_autocorr_bases(dataset, input_mode, m, p)
    elif init == "random":
        refs = np.stack([random_basis(d, p, rng) for _ in range(K)])
    else:
        raise ValueError(f"unknown init {init!r}")
    bank = ReferenceBank(refs, mode, epsilon)
    W = b = None
    if head_kind == "linear":
        W = rng.standard_normal((K, classes)) / np.sqrt(K)
        b = np.zeros(classes)
    head = HeadConfig(activation=activation, tau=tau, learn_tau=learn_tau, head=head_kind,
                      W=W, b=b, repulsion=repulsion, reinforcement=reinforcement)
    return SubspaceModel(arch, bank, head, input_mode, m)


# -- persistence -----------------------------------------------------------


class ModelFormatError(ValueError):
    pass


def _f(x):
    return "%.17g" % x


def _matrix_lines(tag, M):
    M = np.atleast_2d(M)
    out = [f"{tag} {M.shape[0]} {M.shape[1]}"]
    out += [" ".join(_f(v) for v in row) for row in M]
    return out


def dumps_model(model):
    h = model.head
    lines = [
        f"format-version {FORMAT_VERSION}",
        f"arch {model.arch}",
        f"input {model.input_mode}",
        f"m {model.m}",
        f"mode {model.bank.mode}",
        f"epsilon {_f(model.bank.epsilon)}",
        f"activation {h.activation}",
        f"tau {_f(h.tau)}",
        f"learn-tau {int(h.learn_tau)}",
        f"head {h.head}",
        f"repulsion {_f(h.repulsion)}",
        f"reinforcement {int(h.reinforcement)}",
    ]
    for key in sorted(model.meta):
        lines.append(f"config {key} {model.meta[key]}")
    lines.append(f"refs {model.bank.K}")
    for V in model.bank.refs:
        lines += _matrix_lines("matrix", V)
    if h.head == "linear":
        lines += _matrix_lines("W", h.W)
        lines += _matrix_lines("b", h.b[None])
    lines.append("end")
    return "\n".join(lines) + "\n"


def save_model(model, path):
    Path(path).write_text(dumps_model(model), encoding="utf-8")


def loads_model(text, source="<model>"):
    lines = text.split("\n")
    pos = 0

    def fail(msg):
        raise ModelFormatError(f"{source}:{pos + 1}: {msg}")

    def next_line():
        nonlocal pos
        if pos >= len(lines):
            fail("unexpected end of file")
        line = lines[pos]
        pos += 1
        return line

    def read_matrix(tag):
        toks = next_line().split()
        if len(toks) != 3 or toks[0] != tag:
            fail(f"expected '{tag} rows cols'")
        r, c = int(toks[1]), int(toks[2])
        M = np.empty((r, c))
        for i in range(r):
            row = next_line().split()
            if len(row) != c:
                fail(f"expected {c} values")
            M[i] = [float(t) for t in row]
        return M

    header = next_line().split()
    if header != ["format-version", str(FORMAT_VERSION)]:
        fail(f"unsupported header {' '.join(header)!r}")
    fields, meta = {}, {}
    while True:
        toks = next_line().split(" ", 1)
        if toks[0] == "refs":
            K = int(toks[1])
            break
        if toks[0] == "config":
            k, _, v = toks[1].partition(" ")
            meta[k] = v
        elif len(toks) == 2:
            fields[toks[0]] = toks[1]
        else:
            fail(f"malformed line {' '.join(toks)!r}")
    try:
        refs = np.stack([read_matrix("matrix") for _ in range(K)])
        W = b = None
        if fields["head"] == "linear":
            W = read_matrix("W")
            b = read_matrix("b")[0]
        if next_line() != "end":
            fail("expected 'end'")
        bank = ReferenceBank(refs, fields["mode"], float(fields["epsilon"]))
        head = HeadConfig(
            activation=fields["activation"], tau=float(fields["tau"]),
            learn_tau=bool(int(fields["learn-tau"])), head=fields["head"], W=W, b=b,
            repulsion=float(fields["repulsion"]), reinforcement=bool(int(fields["reinforcement"])),
        )
        return SubspaceModel(fields["arch"], bank, head, fields["input"], int(fields["m"]), meta)
    except KeyError as e:
        raise ModelFormatError(f"{source}: missing field {e.args[0]!r}") from None


def load_model(path):
    path = Path(path)
    return loads_model(path.read_text(encoding="utf-8"), source=str(path))
