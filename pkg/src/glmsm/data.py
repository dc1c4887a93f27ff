"""Image-set datasets, the set -> subspace front end, and synthetic data.

On-disk layout: a manifest (``manifest.tsv``) lists one set per line as
``<relative-path>\\t<label>``; an optional first line ``# classes C`` fixes
the class count.  Each set file starts with ``d n`` followed by ``n`` lines
of ``d`` floats, one feature vector (column of the set matrix) per line.
Floats are written with 17 significant digits so reloading is bit-exact.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateError, RankError, ShapeError
from .linalg import STREAM_DATA, rng_for, sym_eig_desc
from .manifold import random_basis

MANIFEST_NAME = "manifest.tsv"
RANK_RTOL = 1e-12


@dataclass(frozen=True)
class ImageSet:
    features: np.ndarray  # (d, n), columns are feature vectors
    label: int

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        if f.ndim != 2 or f.shape[1] < 1:
            raise ShapeError(f"set features must be (d, n) with n >= 1, got {f.shape}")
        if not np.all(np.isfinite(f)):
            raise ValueError("set features contain NaN or Inf")
        object.__setattr__(self, "features", f)

    @property
    def d(self):
        return self.features.shape[0]


@dataclass(frozen=True)
class Dataset:
    sets: tuple
    class_count: int

    def __post_init__(self):
        object.__setattr__(self, "sets", tuple(self.sets))
        if self.class_count < 2:
            raise ValueError(f"need at least 2 classes, got {self.class_count}")
        if self.sets:
            d = self.sets[0].d
            for i, s in enumerate(self.sets):
                if s.d != d:
                    raise ShapeError(f"set {i} has dimension {s.d}, expected {d}")
                if not 0 <= s.label < self.class_count:
                    raise ValueError(f"set {i} label {s.label} outside [0, {self.class_count})")

    def __len__(self):
        return len(self.sets)

    @property
    def d(self):
        return self.sets[0].d

    @property
    def labels(self):
        return np.array([s.label for s in self.sets], dtype=np.int64)

    def subset(self, idx):
        return Dataset([self.sets[i] for i in idx], self.class_count)


@dataclass(frozen=True)
class SynthSpec:
    d: int
    classes: int
    sets_per_class: int
    n: int
    true_dim: int
    sigma: float
    seed: int

    def __post_init__(self):
        for name in ("d", "classes", "sets_per_class", "n", "true_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.classes < 2:
            raise ValueError("classes must be at least 2")
        if self.true_dim > self.d:
            raise ValueError(f"true_dim {self.true_dim} exceeds d {self.d}")
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")


def set_to_subspace(H, m):
    """Top-m eigenvectors of ``H H'`` (noncentered PCA), descending eigenvalue order."""
    H = np.asarray(H, dtype=np.float64)
    eig = sym_eig_desc(H @ H.T)
    lam = eig.eigenvalues
    rank = int(np.sum(lam > RANK_RTOL * lam[0])) if lam[0] > 0 else 0
    if rank < m:
        raise RankError(f"set autocorrelation has rank {rank} < m={m}")
    return eig.eigenvectors[:, :m]


def normalize_columns(H):
    H = np.asarray(H, dtype=np.float64)
    norms = np.linalg.norm(H, axis=0)
    if np.any(norms == 0):
        raise DegenerateError(f"set contains a zero column (index {int(np.argmin(norms))})")
    return H / norms


def set_to_autocorr(H, normalize=True):
    """Autocorrelation ``H H'``, columns unit-normalized first when ``normalize``."""
    if normalize:
        H = normalize_columns(H)
    return H @ H.T


def input_matrix(H, mode, m):
    """Matrix ``Z`` whose ``Z Z'`` feeds the matching layer for one set.

    ``pca``: orthonormal top-m basis.  ``ac``: the column-normalized set
    itself, so ``Z Z'`` is the autocorrelation and no eigensolve is needed.
    """
    if mode == "pca":
        return set_to_subspace(H, m)
    if mode == "ac":
        return normalize_columns(H)
    raise ValueError(f"unknown input mode {mode!r}")


def stack_inputs(dataset, mode, m):
    """Inputs of every set stacked as (N, d, k); ``ac`` inputs are zero-padded to a common k."""
    Zs = [input_matrix(s.features, mode, m) for s in dataset.sets]
    k = max(Z.shape[1] for Z in Zs)
    out = np.zeros((len(Zs), dataset.d, k))
    for i, Z in enumerate(Zs):
        out[i, :, : Z.shape[1]] = Z
    return out


def generate_synthetic(spec):
    """Sets drawn around one random true subspace per class; 80/20 split by whole sets."""
    rng = rng_for(spec.seed, STREAM_DATA)
    bases = [random_basis(spec.d, spec.true_dim, rng) for _ in range(spec.classes)]
    train, test = [], []
    n_train = int(round(0.8 * spec.sets_per_class))
    for c, B in enumerate(bases):
        for i in range(spec.sets_per_class):
            coeffs = rng.standard_normal((spec.true_dim, spec.n))
            H = B @ coeffs + spec.sigma * rng.standard_normal((spec.d, spec.n))
            (train if i < n_train else test).append(ImageSet(H, c))
    return Dataset(train, spec.classes), Dataset(test, spec.classes)


def true_bases(spec):
    """The class subspaces ``generate_synthetic`` draws for ``spec``."""
    rng = rng_for(spec.seed, STREAM_DATA)
    return [random_basis(spec.d, spec.true_dim, rng) for _ in range(spec.classes)]


def generate_vectors(d, classes, true_dim, per_class, sigma, seed, shared_dim=0,
                     shared_scale=3.0, test_fraction=0.5):
    """Labelled vectors for the vector-input classifiers.

    Each class draws a random ``true_dim``-dimensional subspace; samples are
    Gaussian inside it plus isotropic noise ``sigma``.  With ``shared_dim``
    > 0 every class also carries a common high-variance component (standard
    deviation ``shared_scale``) along one shared random subspace, so the
    classes overlap along their dominant directions.
    Returns ``(X_train, y_train, X_test, y_test)`` with samples as rows.
    """
    rng = rng_for(seed, STREAM_DATA)
    bases = [random_basis(d, true_dim, rng) for _ in range(classes)]
    shared = random_basis(d, shared_dim, rng) if shared_dim else None
    X, y = [], []
    for c, B in enumerate(bases):
        Xc = (B @ rng.standard_normal((true_dim, per_class))).T
        if shared is not None:
            Xc += shared_scale * (shared @ rng.standard_normal((shared_dim, per_class))).T
        X.append(Xc + sigma * rng.standard_normal((per_class, d)))
        y.append(np.full(per_class, c))
    X = np.concatenate(X)
    y = np.concatenate(y)
    perm = rng.permutation(len(X))
    X, y = X[perm], y[perm]
    n_test = int(round(test_fraction * len(X)))
    return X[n_test:], y[n_test:], X[:n_test], y[:n_test]


# -- file format -----------------------------------------------------------


class DatasetError(ValueError):
    """Base class for dataset parse errors; carries the file and 1-based line."""

    def __init__(self, message, path, line=None):
        where = f"{path}" if line is None else f"{path}:{line}"
        super().__init__(f"{where}: {message}")
        self.path = str(path)
        self.line = line


class MissingSetFile(DatasetError):
    pass


class MalformedHeader(DatasetError):
    pass


class MalformedRow(DatasetError):
    pass


class LabelOutOfRange(DatasetError):
    pass


class InconsistentDimension(DatasetError):
    pass


def _fmt(x):
    return "%.17g" % x


def write_set(path, H):
    H = np.asarray(H, dtype=np.float64)
    d, n = H.shape
    lines = [f"{d} {n}"]
    lines += [" ".join(_fmt(v) for v in col) for col in H.T]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_set(path):
    path = Path(path)
    if not path.is_file():
        raise MissingSetFile("set file not found", path)
    lines = path.read_text(encoding="utf-8").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise MalformedHeader("empty set file", path, 1)
    head = lines[0].split()
    try:
        d, n = (int(t) for t in head)
    except ValueError:
        raise MalformedHeader(f"expected 'd n', got {lines[0]!r}", path, 1) from None
    if d < 1 or n < 1:
        raise MalformedHeader(f"dimensions must be positive, got {d} {n}", path, 1)
    if len(lines) - 1 != n:
        raise MalformedRow(f"header declares {n} vectors, found {len(lines) - 1}", path, len(lines))
    H = np.empty((d, n))
    for i, line in enumerate(lines[1:]):
        toks = line.split()
        if len(toks) != d:
            raise InconsistentDimension(f"expected {d} values, found {len(toks)}", path, i + 2)
        try:
            H[:, i] = [float(t) for t in toks]
        except ValueError:
            raise MalformedRow(f"unparseable value in {line!r}", path, i + 2) from None
    return H


def save_dataset(dataset, directory):
    """Write ``manifest.tsv`` plus one file per set; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = [f"# classes {dataset.class_count}"]
    for i, s in enumerate(dataset.sets):
        name = f"set_{i:05d}.txt"
        write_set(directory / name, s.features)
        rows.append(f"{name}\t{s.label}")
    manifest = directory / MANIFEST_NAME
    manifest.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return manifest


def resolve_manifest(path):
    path = Path(path)
    return path / MANIFEST_NAME if path.is_dir() else path


def load_dataset(path, workers=4):
    """Load a dataset from a manifest file (or a directory holding ``manifest.tsv``)."""
    manifest = resolve_manifest(path)
    if not manifest.is_file():
        raise MissingSetFile("manifest not found", manifest)
    root = manifest.parent
    class_count = None
    entries = []
    for lineno, line in enumerate(manifest.read_text(encoding="utf-8").split("\n"), start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            toks = line[1:].split()
            if len(toks) == 2 and toks[0] == "classes":
                try:
                    class_count = int(toks[1])
                except ValueError:
                    raise MalformedHeader(f"bad class count {toks[1]!r}", manifest, lineno) from None
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise MalformedRow("expected '<path>\\t<label>'", manifest, lineno)
        try:
            label = int(parts[1])
        except ValueError:
            raise MalformedRow(f"label {parts[1]!r} is not an integer", manifest, lineno) from None
        entries.append((root / parts[0], label, lineno))
    if not entries:
        raise ValueError(f"{manifest}: manifest lists no sets")
    if class_count is None:
        class_count = max(label for _, label, _ in entries) + 1
    for _, label, lineno in entries:
        if not 0 <= label < class_count:
            raise LabelOutOfRange(f"label {label} outside [0, {class_count})", manifest, lineno)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        mats = list(pool.map(read_set, [p for p, _, _ in entries]))
    d = mats[0].shape[0]
    for (p, _, lineno), H in zip(entries, mats):
        if H.shape[0] != d:
            raise InconsistentDimension(f"set {p.name} has d={H.shape[0]}, expected {d}", manifest, lineno)
    return Dataset([ImageSet(H, label) for H, (_, label, _) in zip(mats, entries)], class_count)
