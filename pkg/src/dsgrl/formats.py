"""On-disk formats: DSGF matrices, CSV matrices, edge/label lists, split JSON."""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, ParseError, RangeError

DSGF_MAGIC = b"DSGF"
_DSGF_HEADER = struct.Struct("<4sQQ")


def write_dsgf(path, matrix) -> None:
    """Write a float matrix as ``DSGF`` + N, F (u64 LE) + f32 LE row-major payload."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise FormatError(f"DSGF stores 2-D matrices, got {m.ndim}-D")
    with open(path, "wb") as fh:
        fh.write(_DSGF_HEADER.pack(DSGF_MAGIC, m.shape[0], m.shape[1]))
        fh.write(np.ascontiguousarray(m, dtype="<f4").tobytes())


def read_dsgf(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _DSGF_HEADER.size:
        raise FormatError(f"{path}: truncated DSGF header")
    magic, n, f = _DSGF_HEADER.unpack_from(raw)
    if magic != DSGF_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {DSGF_MAGIC!r}")
    expected = _DSGF_HEADER.size + 4 * n * f
    if len(raw) != expected:
        raise FormatError(f"{path}: payload is {len(raw)} bytes, expected {expected} for {n}x{f}")
    payload = np.frombuffer(raw, dtype="<f4", offset=_DSGF_HEADER.size, count=n * f)
    return payload.astype(np.float64).reshape(n, f)


def is_dsgf(path) -> bool:
    with open(path, "rb") as fh:
        return fh.read(4) == DSGF_MAGIC


def read_csv_matrix(path, header=False) -> np.ndarray:
    rows = []
    width = None
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if header and lineno == 1:
                continue
            if not rec or all(not c.strip() for c in rec):
                continue
            try:
                vals = [float(c) for c in rec]
            except ValueError:
                raise ParseError(f"non-numeric field in {rec!r}", path, lineno) from None
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise ParseError(f"expected {width} columns, found {len(vals)}", path, lineno)
            rows.append(vals)
    if not rows:
        return np.zeros((0, 0))
    return np.array(rows, dtype=np.float64)


def write_csv_matrix(path, matrix) -> None:
    m = np.asarray(matrix, dtype=np.float64)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        for row in m:
            w.writerow([repr(float(v)) for v in row])


def read_matrix(path, header=False) -> np.ndarray:
    """Read a DSGF or CSV matrix, detected by magic bytes."""
    if is_dsgf(path):
        return read_dsgf(path)
    return read_csv_matrix(path, header=header)


def _int_field(tok, path, lineno, what):
    try:
        return int(tok)
    except ValueError:
        raise ParseError(f"{what} {tok!r} is not an integer", path, lineno) from None


def read_edge_list(path, n_nodes=None):
    """Parse ``src<TAB>dst`` lines; returns (src, dst) int64 arrays."""
    src, dst = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t") if "\t" in line else line.split()
            if len(parts) < 2 or len(parts) > 3:
                raise ParseError(f"expected 'src<TAB>dst', got {line!r}", path, lineno)
            u = _int_field(parts[0].strip(), path, lineno, "source id")
            v = _int_field(parts[1].strip(), path, lineno, "target id")
            if u < 0 or v < 0:
                raise ParseError("node ids must be non-negative", path, lineno)
            if n_nodes is not None and (u >= n_nodes or v >= n_nodes):
                raise RangeError(f"{path}:{lineno}: endpoint {max(u, v)} outside [0, {n_nodes})")
            src.append(u)
            dst.append(v)
    return np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64)


def write_edge_list(path, rows, cols, weights=None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if weights is None:
            for u, v in zip(rows, cols):
                fh.write(f"{int(u)}\t{int(v)}\n")
        else:
            for u, v, w in zip(rows, cols, weights):
                fh.write(f"{int(u)}\t{int(v)}\t{float(w)!r}\n")


def read_labels(path, n_nodes) -> np.ndarray:
    """``node_id<TAB>label`` lines; unlisted nodes get -1."""
    labels = np.full(n_nodes, -1, dtype=np.int64)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t") if "\t" in line else line.split()
            if len(parts) != 2:
                raise ParseError(f"expected 'node_id<TAB>label', got {line!r}", path, lineno)
            node = _int_field(parts[0], path, lineno, "node id")
            lab = _int_field(parts[1], path, lineno, "label")
            if node < 0 or node >= n_nodes:
                raise RangeError(f"{path}:{lineno}: node {node} outside [0, {n_nodes})")
            if lab < 0:
                raise ParseError(f"label {lab} is negative", path, lineno)
            labels[node] = lab
    return labels


def write_labels(path, labels) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, lab in enumerate(labels):
            if lab >= 0:
                fh.write(f"{i}\t{int(lab)}\n")


def read_split_json(path):
    """Return a list of ``{"train", "val", "test"}`` index dicts (object or array of objects)."""
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON ({exc.msg})", path, exc.lineno) from None
    items = obj if isinstance(obj, list) else [obj]
    out = []
    for item in items:
        if not isinstance(item, dict) or set(item) != {"train", "val", "test"}:
            raise FormatError(f"{path}: split objects need exactly the keys train, val, test")
        parts = {}
        for key in ("train", "val", "test"):
            vals = item[key]
            if not isinstance(vals, list) or not all(isinstance(v, int) for v in vals):
                raise FormatError(f"{path}: '{key}' must be an array of integer node ids")
            parts[key] = np.array(vals, dtype=np.int64)
        out.append(parts)
    return out


def write_split_json(path, splits) -> None:
    objs = [{k: [int(i) for i in getattr(s, k)] for k in ("train", "val", "test")} for s in splits]
    Path(path).write_text(json.dumps(objs[0] if len(objs) == 1 else objs), encoding="utf-8")
