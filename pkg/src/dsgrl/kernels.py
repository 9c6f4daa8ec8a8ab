"""Backend selection for the hot sparse/graph kernels.

The compiled extension ``dsgrl._ckernels`` is used when it was built;
otherwise the numpy fallback in ``dsgrl._kernels_py`` is used. Setting
``DSGRL_PURE_PYTHON=1`` forces the fallback.

All entry points take and return plain numpy arrays (int64 index arrays,
C-contiguous float64 values).
"""

import os

import numpy as np

from . import _kernels_py
from .errors import ConfigError

_backends = {"python": _kernels_py}
try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None
else:
    _backends["cython"] = _ckernels

if _ckernels is not None and os.environ.get("DSGRL_PURE_PYTHON", "") in ("", "0"):
    _impl = _ckernels
else:
    _impl = _kernels_py

BACKEND = _impl.NAME


def available_backends():
    return sorted(_backends)


def get_backend(name=None):
    """Return the kernel module named ``name`` (default: the active one)."""
    if name is None:
        return _impl
    try:
        return _backends[name]
    except KeyError:
        raise ConfigError(f"kernel backend {name!r} is not available") from None


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def spmm(indptr, indices, data, x):
    return _impl.spmm(_i64(indptr), _i64(indices), _f64(data), _f64(x))


def spmm_t(indptr, indices, data, g, n_cols):
    return _impl.spmm_t(_i64(indptr), _i64(indices), _f64(data), _f64(g), int(n_cols))


def sddmm(indptr, indices, a, b):
    return _impl.sddmm(_i64(indptr), _i64(indices), _f64(a), _f64(b))


def threshold_support(h):
    return _impl.threshold_support(_f64(h))


def degree_profile(indptr, indices):
    return _impl.degree_profile(_i64(indptr), _i64(indices))
