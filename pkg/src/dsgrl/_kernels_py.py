"""Pure numpy implementations of the sparse/graph kernels.

These mirror ``_ckernels.pyx`` one-for-one. ``sddmm`` and ``threshold_support``
accumulate dot products in the same left-to-right order as the compiled
versions so both backends produce bit-identical similarity values.
"""

import numpy as np

NAME = "python"

# rows per block when forming all-pairs similarities
_BLOCK_ELEMS = 1 << 22


def _row_ids(indptr):
    n = indptr.shape[0] - 1
    return np.repeat(np.arange(n, dtype=np.int64), np.diff(indptr))


def spmm(indptr, indices, data, x):
    """``A @ x`` for CSR ``A``."""
    n_rows = indptr.shape[0] - 1
    out = np.zeros((n_rows, x.shape[1]))
    if indices.shape[0] == 0:
        return out
    contrib = data[:, None] * x[indices]
    counts = np.diff(indptr)
    nonempty = counts > 0
    out[nonempty] = np.add.reduceat(contrib, indptr[:-1][nonempty], axis=0)
    return out


def spmm_t(indptr, indices, data, g, n_cols):
    """``A.T @ g`` for CSR ``A`` with ``n_cols`` columns."""
    out = np.zeros((n_cols, g.shape[1]))
    if indices.shape[0] == 0:
        return out
    np.add.at(out, indices, data[:, None] * g[_row_ids(indptr)])
    return out


def sddmm(indptr, indices, a, b):
    """``vals[e] = a[row(e)] . b[col(e)]`` over the stored pattern."""
    rows = _row_ids(indptr)
    vals = np.zeros(indices.shape[0])
    for d in range(a.shape[1]):
        vals += a[rows, d] * b[indices, d]
    return vals


def threshold_support(h):
    """Keep ``h_i.h_j`` wherever it strictly exceeds the row mean over all ``k``."""
    n, dim = h.shape
    block = max(1, min(n, _BLOCK_ELEMS // max(n, 1)))
    counts = np.zeros(n, dtype=np.int64)
    cols_parts, vals_parts = [], []
    for start in range(0, n, block):
        stop = min(n, start + block)
        sims = np.zeros((stop - start, n))
        for d in range(dim):
            sims += np.outer(h[start:stop, d], h[:, d])
        if n:
            means = np.add.accumulate(sims, axis=1)[:, -1] / n
            # a rounded mean can fall outside [min, max]; clamp so constant rows stay empty
            means = np.minimum(np.maximum(means, sims.min(axis=1)), sims.max(axis=1))
        else:
            means = np.zeros(0)
        keep = sims > means[:, None]
        counts[start:stop] = keep.sum(axis=1)
        r, c = np.nonzero(keep)
        cols_parts.append(c.astype(np.int64))
        vals_parts.append(sims[r, c])
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    if cols_parts:
        indices = np.concatenate(cols_parts)
        data = np.concatenate(vals_parts)
    else:
        indices = np.zeros(0, dtype=np.int64)
        data = np.zeros(0)
    return indptr, indices, data


def degree_profile(indptr, indices):
    """Per node: degree, then min/max/mean/std of neighbour degrees."""
    n = indptr.shape[0] - 1
    rows = _row_ids(indptr)
    off = rows != indices
    rows, cols = rows[off], indices[off]
    deg = np.bincount(rows, minlength=n).astype(np.float64)
    out = np.zeros((n, 5))
    out[:, 0] = deg
    has = deg > 0
    if not has.any():
        return out
    nd = deg[cols]
    mins = np.full(n, np.inf)
    maxs = np.full(n, -np.inf)
    np.minimum.at(mins, rows, nd)
    np.maximum.at(maxs, rows, nd)
    sums = np.bincount(rows, weights=nd, minlength=n)
    means = np.divide(sums, deg, out=np.zeros(n), where=has)
    sq = np.bincount(rows, weights=(nd - means[rows]) ** 2, minlength=n)
    stds = np.sqrt(np.divide(sq, deg, out=np.zeros(n), where=has))
    out[has, 1] = mins[has]
    out[has, 2] = maxs[has]
    out[has, 3] = means[has]
    out[has, 4] = stds[has]
    return out
