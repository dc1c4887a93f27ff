"""Backend selection for the batch similarity kernels.

The compiled extension is used when it was built; otherwise, or when
``GLMSM_PURE_PYTHON`` is set, the numpy implementation is used.  Both
expose ``similarity_forward`` and ``similarity_backward``.
"""
import os

from . import _kernels_py


def _load_compiled():
    try:
        from . import _ckernels
    except ImportError:
        return None
    return _ckernels


_compiled = _load_compiled()
_impl = _kernels_py if (_compiled is None or os.environ.get("GLMSM_PURE_PYTHON")) else _compiled

BACKEND = _impl.NAME
similarity_forward = _impl.similarity_forward
similarity_backward = _impl.similarity_backward


def available_backends():
    out = {"python": _kernels_py}
    if _compiled is not None:
        out["cython"] = _compiled
    return out
