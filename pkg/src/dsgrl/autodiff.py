"""Dense 2-D tensors with a reverse-mode tape.

Every operation that has at least one grad-requiring input appends a node
to the active :class:`Tape`. :func:`backward` walks that tape once in
reverse recording order, writes ``grad`` on every grad-requiring leaf seen
on the tape, and then consumes the tape. A consumed tape cannot be
differentiated again.

Non-differentiable points use a zero subgradient: ``relu``/``maximum`` at
the threshold, ``sqrt`` at 0 and ``frobenius_norm`` at the origin.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DegenerateBatchError, DegenerateRowError, LifecycleError, ShapeError
from .sparse import CSR

__all__ = [
    "Tensor", "Tape", "SparseTensor", "backward", "no_grad", "recording", "active_tape",
    "matmul", "add", "sub", "neg", "scale", "add_scalar", "hadamard", "transpose",
    "sum", "row_sum", "mean_center_columns", "row_l2_normalize", "sqrt", "square",
    "maximum", "relu", "frobenius_norm", "column_variance", "concat_cols", "vstack",
    "gather_rows", "segment_sum", "segment_mean", "spmm", "sddmm", "sym_normalize",
]


class Tape:
    """Ordered record of differentiable operations."""

    def __init__(self):
        self.nodes = []
        self.consumed = False

    def __len__(self):
        return len(self.nodes)


class _Node:
    __slots__ = ("out", "parents", "backward", "tape", "index")

    def __init__(self, out, parents, backward, tape):
        self.out = out
        self.parents = parents
        self.backward = backward
        self.tape = tape
        self.index = len(tape.nodes)


class _State(threading.local):
    def __init__(self):
        self.tape = Tape()
        self.enabled = True


_state = _State()


def active_tape() -> Tape:
    return _state.tape


@contextmanager
def no_grad():
    """Evaluate without recording anything."""
    prev = _state.enabled
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


@contextmanager
def recording():
    """Install a fresh tape for the duration of the block."""
    prev = _state.tape
    tape = Tape()
    _state.tape = tape
    try:
        yield tape
    finally:
        _state.tape = prev


class Tensor:
    """Row-major float64 matrix, optionally tracked for gradients."""

    __array_priority__ = 100
    __slots__ = ("data", "requires_grad", "grad", "_node", "__weakref__")

    def __init__(self, data, requires_grad=False):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got {arr.ndim}-D input")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if self.requires_grad else None
        self._node = None

    @classmethod
    def _wrap(cls, arr, requires_grad=False):
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t._node = None
        return t

    @classmethod
    def zeros(cls, rows, cols, requires_grad=False):
        return cls(np.zeros((rows, cols)), requires_grad)

    @classmethod
    def eye(cls, n):
        return cls(np.eye(n))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    @property
    def tape(self):
        return None if self._node is None else self._node.tape

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data.tolist()}{flag})"

    def __add__(self, other):
        if np.isscalar(other):
            return add_scalar(self, other)
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if np.isscalar(other):
            return add_scalar(self, -other)
        return sub(self, other)

    def __rsub__(self, other):
        if np.isscalar(other):
            return add_scalar(neg(self), other)
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return hadamard(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not np.isscalar(other):
            raise TypeError("only division by a scalar is supported")
        return scale(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __neg__(self):
        return neg(self)

    @property
    def T(self):
        return transpose(self)


@dataclass(frozen=True, eq=False)
class SparseTensor:
    """Fixed sparsity pattern with differentiable stored values (``1 x nnz``)."""

    pattern: CSR
    values: Tensor

    def __post_init__(self):
        if self.values.shape != (1, self.pattern.nnz):
            raise ShapeError(f"values shape {self.values.shape} != (1, {self.pattern.nnz})")

    @property
    def shape(self):
        return self.pattern.shape

    def detach(self) -> CSR:
        return self.pattern.with_data(self.values.data[0])

    def to_dense(self) -> np.ndarray:
        return self.detach().to_dense()


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _record(out_data, parents, backward_fn) -> Tensor:
    needs = _state.enabled and any(p.requires_grad for p in parents)
    out = Tensor._wrap(out_data, needs)
    if needs:
        tape = _state.tape
        if tape.consumed:
            tape = _state.tape = Tape()
        node = _Node(out, parents, backward_fn, tape)
        tape.nodes.append(node)
        out._node = node
    return out


def backward(loss: Tensor):
    """Populate ``grad`` on every grad-requiring leaf recorded before ``loss``."""
    if loss.shape != (1, 1):
        raise ShapeError(f"backward() needs a scalar (1x1) loss, got {loss.shape}")
    node = loss._node
    if node is None:
        raise LifecycleError("loss is not recorded on a tape (no input requires grad)")
    tape = node.tape
    if tape.consumed:
        raise LifecycleError("tape already consumed by an earlier backward()")

    grads = {id(loss): np.ones((1, 1))}
    leaves = {}
    for nd in reversed(tape.nodes[: node.index + 1]):
        for p in nd.parents:
            if p.requires_grad and p._node is None:
                leaves[id(p)] = p
        g = grads.pop(id(nd.out), None)
        if g is None:
            continue
        nd.out.grad = g
        for p, pg in zip(nd.parents, nd.backward(g)):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            prev = grads.get(key)
            grads[key] = pg if prev is None else prev + pg
    for key, leaf in leaves.items():
        g = grads.get(key)
        leaf.grad = np.zeros_like(leaf.data) if g is None else g

    tape.consumed = True
    tape.nodes = []
    if _state.tape is tape:
        _state.tape = Tape()


def _check_same(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.cols != b.rows:
        raise ShapeError(f"matmul: inner dimensions differ ({a.shape} x {b.shape})")
    A, B = a.data, b.data
    return _record(A @ B, (a, b), lambda g: (g @ B.T, A.T @ g))


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same(a, b, "add")
    return _record(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same(a, b, "sub")
    return _record(a.data - b.data, (a, b), lambda g: (g, -g))


def neg(x) -> Tensor:
    return _record(-x.data, (x,), lambda g: (-g,))


def scale(x, c: float) -> Tensor:
    c = float(c)
    return _record(x.data * c, (x,), lambda g: (g * c,))


def add_scalar(x, c: float) -> Tensor:
    return _record(x.data + float(c), (x,), lambda g: (g,))


def hadamard(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same(a, b, "hadamard")
    A, B = a.data, b.data
    return _record(A * B, (a, b), lambda g: (g * B, g * A))


def transpose(x) -> Tensor:
    return _record(np.ascontiguousarray(x.data.T), (x,), lambda g: (np.ascontiguousarray(g.T),))


def sum(x) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = x.shape
    return _record(np.array([[x.data.sum()]]), (x,), lambda g: (np.full(shape, g[0, 0]),))


def row_sum(x) -> Tensor:
    """Sum across columns: ``N x F -> N x 1``."""
    cols = x.cols
    return _record(x.data.sum(axis=1, keepdims=True), (x,), lambda g: (np.repeat(g, cols, axis=1),))


def mean_center_columns(x) -> Tensor:
    out = x.data - x.data.mean(axis=0, keepdims=True)
    return _record(out, (x,), lambda g: (g - g.mean(axis=0, keepdims=True),))


def row_l2_normalize(x) -> Tensor:
    norms = np.sqrt((x.data * x.data).sum(axis=1, keepdims=True))
    if np.any(norms == 0):
        bad = int(np.flatnonzero(norms[:, 0] == 0)[0])
        raise DegenerateRowError(f"row {bad} has zero norm and cannot be unit-normalized")
    y = x.data / norms

    def back(g):
        return ((g - y * (g * y).sum(axis=1, keepdims=True)) / norms,)

    return _record(y, (x,), back)


def sqrt(x) -> Tensor:
    y = np.sqrt(x.data)

    def back(g):
        pos = y > 0
        return (np.divide(g, 2.0 * y, out=np.zeros_like(y), where=pos),)

    return _record(y, (x,), back)


def square(x) -> Tensor:
    X = x.data
    return _record(X * X, (x,), lambda g: (2.0 * X * g,))


def maximum(x, c: float) -> Tensor:
    """Elementwise ``max(x, c)`` for a constant ``c``."""
    mask = x.data > c
    return _record(np.where(mask, x.data, float(c)), (x,), lambda g: (g * mask,))


def relu(x) -> Tensor:
    return maximum(x, 0.0)


def frobenius_norm(x) -> Tensor:
    X = x.data
    # scale by the largest entry so tiny or huge values neither underflow nor overflow
    m = float(np.abs(X).max()) if X.size else 0.0
    n = m * float(np.sqrt(((X / m) ** 2).sum())) if m > 0 else 0.0

    def back(g):
        if n == 0.0:
            return (np.zeros_like(X),)
        return (X * (g[0, 0] / n),)

    return _record(np.array([[n]]), (x,), back)


def column_variance(z) -> Tensor:
    """Unbiased per-column variance, ``B x D -> 1 x D``."""
    b = z.rows
    if b < 2:
        raise DegenerateBatchError(f"column variance needs at least 2 rows, got {b}")
    centered = z.data - z.data.mean(axis=0, keepdims=True)
    var = (centered * centered).sum(axis=0, keepdims=True) / (b - 1)
    return _record(var, (z,), lambda g: (g * centered * (2.0 / (b - 1)),))


def concat_cols(a, b) -> Tensor:
    if a.rows != b.rows:
        raise ShapeError(f"concat: row counts differ ({a.rows} vs {b.rows})")
    k = a.cols
    return _record(np.hstack([a.data, b.data]), (a, b), lambda g: (g[:, :k], g[:, k:]))


def vstack(a, b) -> Tensor:
    if a.cols != b.cols:
        raise ShapeError(f"vstack: column counts differ ({a.cols} vs {b.cols})")
    k = a.rows
    return _record(np.vstack([a.data, b.data]), (a, b), lambda g: (g[:k], g[k:]))


def gather_rows(x, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    shape = x.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _record(x.data[idx], (x,), back)


def segment_sum(x, ids, n_segments: int) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.shape != (x.rows,):
        raise ShapeError(f"segment ids length {ids.shape[0]} != rows {x.rows}")
    out = np.zeros((n_segments, x.cols))
    np.add.at(out, ids, x.data)
    return _record(out, (x,), lambda g: (g[ids],))


def segment_mean(x, ids, n_segments: int) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.shape != (x.rows,):
        raise ShapeError(f"segment ids length {ids.shape[0]} != rows {x.rows}")
    counts = np.bincount(ids, minlength=n_segments).astype(np.float64)
    if np.any(counts == 0):
        raise ShapeError("segment_mean: empty segment")
    out = np.zeros((n_segments, x.cols))
    np.add.at(out, ids, x.data)
    out /= counts[:, None]
    return _record(out, (x,), lambda g: ((g / counts[:, None])[ids],))


def spmm(adj, x) -> Tensor:
    """Sparse-dense product ``adj @ x``; ``adj`` is a constant CSR or a SparseTensor."""
    x = _as_tensor(x)
    if adj.shape[1] != x.rows:
        raise ShapeError(f"spmm: adjacency {adj.shape} vs features {x.shape}")
    if isinstance(adj, SparseTensor):
        pat, vals = adj.pattern, adj.values
        data = vals.data[0]
        parents = (vals, x)
    else:
        pat, vals, data = adj, None, adj.data
        parents = (x,)
    X = x.data
    out = kernels.spmm(pat.indptr, pat.indices, data, X)

    def back(g):
        gx = kernels.spmm_t(pat.indptr, pat.indices, data, g, pat.shape[1]) if x.requires_grad else None
        if vals is None:
            return (gx,)
        gv = kernels.sddmm(pat.indptr, pat.indices, g, X)[None, :] if vals.requires_grad else None
        return (gv, gx)

    return _record(out, parents, back)


def sddmm(pattern: CSR, a, b) -> Tensor:
    """Values ``a[i] . b[j]`` at every stored ``(i, j)``; returns ``1 x nnz``."""
    if a.cols != b.cols or a.rows != pattern.shape[0] or b.rows != pattern.shape[1]:
        raise ShapeError(f"sddmm: pattern {pattern.shape} with {a.shape}, {b.shape}")
    A, B = a.data, b.data
    vals = kernels.sddmm(pattern.indptr, pattern.indices, A, B)

    def back(g):
        gv = g[0]
        ga = kernels.spmm(pattern.indptr, pattern.indices, gv, B) if a.requires_grad else None
        gb = kernels.spmm_t(pattern.indptr, pattern.indices, gv, A, pattern.shape[1]) if b.requires_grad else None
        return (ga, gb)

    return _record(vals[None, :], (a, b), back)


def sym_normalize(pattern: CSR, values) -> Tensor:
    """``w_ij = s_ij / sqrt(d_i d_j)`` with ``d_i = sum_j |s_ij|``, over ``pattern``.

    Rows with zero degree keep zero weights.
    """
    values = _as_tensor(values)
    if values.shape != (1, pattern.nnz):
        raise ShapeError(f"sym_normalize: values {values.shape} vs nnz {pattern.nnz}")
    s = values.data[0]
    rows, cols = pattern.row_ids(), pattern.indices
    n = pattern.shape[0]
    deg = np.bincount(rows, weights=np.abs(s), minlength=n)
    q = np.divide(1.0, np.sqrt(deg), out=np.zeros(n), where=deg > 0)
    w = s * q[rows] * q[cols]

    def back(g):
        ge = g[0]
        direct = ge * q[rows] * q[cols]
        dq = np.bincount(rows, weights=ge * s * q[cols], minlength=n)
        dq += np.bincount(cols, weights=ge * s * q[rows], minlength=n)
        dd = -0.5 * dq * q ** 3
        return ((direct + np.sign(s) * dd[rows])[None, :],)

    return _record(w[None, :], (values,), back)
