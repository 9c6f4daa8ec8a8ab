"""Graph data model, ingestion, normalization, splits and synthetic graphs."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import formats, kernels
from .autodiff import Tensor, no_grad, sym_normalize
from .errors import ConfigError, ConsistencyError, FormatError, ParseError, ProtocolError, RangeError
from .sparse import CSR


@dataclass(frozen=True, eq=False)
class Graph:
    """Sparse adjacency plus dense node features.

    ``labels`` holds one integer per node (``-1`` = unlabeled); graphs that
    belong to a collection carry ``graph_label`` instead.
    """

    adjacency: CSR
    features: Tensor
    labels: Optional[np.ndarray] = None
    graph_label: Optional[int] = None

    def __post_init__(self):
        n = self.adjacency.shape[0]
        if self.adjacency.shape != (n, n):
            raise ConsistencyError(f"adjacency must be square, got {self.adjacency.shape}")
        if self.features.rows != n:
            raise ConsistencyError(f"feature rows {self.features.rows} != node count {n}")
        if self.labels is not None and np.shape(self.labels) != (n,):
            raise ConsistencyError(f"labels length {np.shape(self.labels)} != node count {n}")

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def num_arcs(self) -> int:
        return self.adjacency.nnz

    @property
    def num_features(self) -> int:
        return self.features.cols

    def edges(self):
        return self.adjacency.row_ids(), self.adjacency.indices

    def permuted(self, perm) -> "Graph":
        """Relabel nodes so that new node ``k`` is old node ``perm[k]``."""
        perm = np.asarray(perm, dtype=np.int64)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(perm.size)
        r, c = self.edges()
        adj = CSR.from_coo(inv[r], inv[c], self.adjacency.data, self.adjacency.shape)
        labels = None if self.labels is None else self.labels[perm]
        return Graph(adj, Tensor(self.features.data[perm]), labels, self.graph_label)


@dataclass(frozen=True, eq=False)
class GraphBatch:
    """Disjoint union of graphs with a block-diagonal adjacency."""

    graphs: tuple
    graph_ids: np.ndarray
    adjacency: CSR
    features: Tensor
    labels: Optional[np.ndarray] = field(default=None)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_graphs(self) -> int:
        return len(self.graphs)

    @property
    def num_features(self) -> int:
        return self.features.cols


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def sizes(self):
        return len(self.train), len(self.val), len(self.test)


def _symmetrize(src, dst):
    return np.concatenate([src, dst]), np.concatenate([dst, src])


def build_graph(n, src, dst, features, labels=None, directed=False, weights=None) -> Graph:
    """Assemble a Graph from an arc list; duplicate arcs collapse to one."""
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    if src.size and (max(src.max(), dst.max()) >= n or min(src.min(), dst.min()) < 0):
        raise RangeError(f"edge endpoint outside [0, {n})")
    w = np.ones(src.size) if weights is None else np.asarray(weights, dtype=np.float64)
    if not directed:
        src, dst = _symmetrize(src, dst)
        w = np.concatenate([w, w])
    adj = CSR.from_coo(src, dst, w, (n, n), sum_duplicates=False)
    feats = features if isinstance(features, Tensor) else Tensor(features)
    return Graph(adj, feats, None if labels is None else np.asarray(labels, dtype=np.int64))


def row_l2_normalize_features(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)


def load_graph(edge_path, feature_path, label_path=None, directed=False, header=False,
               row_normalize=False) -> Graph:
    """Read an edge list, a feature matrix (CSV or DSGF) and optional labels."""
    x = formats.read_matrix(feature_path, header=header)
    n = x.shape[0]
    src, dst = formats.read_edge_list(edge_path, n_nodes=n)
    labels = formats.read_labels(label_path, n) if label_path is not None else None
    if row_normalize:
        x = row_l2_normalize_features(x)
    return build_graph(n, src, dst, x, labels, directed=directed)


def add_self_loops(adj: CSR) -> CSR:
    n = adj.shape[0]
    idx = np.arange(n, dtype=np.int64)
    return CSR.from_coo(
        np.concatenate([adj.row_ids(), idx]),
        np.concatenate([adj.indices, idx]),
        np.concatenate([adj.data, np.ones(n)]),
        adj.shape,
    )


def normalize_adjacency(g) -> CSR:
    """Kipf-style ``D^-1/2 (A + I) D^-1/2`` with (absolute) weighted degrees."""
    adj = g.adjacency if hasattr(g, "adjacency") else g
    looped = add_self_loops(adj)
    with no_grad():
        w = sym_normalize(looped, Tensor(looped.data[None, :]))
    return looped.with_data(w.data[0])


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5 + 1e-9))


def split_sizes(n: int, ratios=(0.05, 0.15, 0.80)):
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ConfigError(f"split ratios must be three positive numbers, got {ratios}")
    total = float(sum(ratios))
    if total > 1 + 1e-9:
        raise ConfigError(f"split ratios sum to {total} > 1")
    n_train = _round_half_up(ratios[0] * n)
    n_val = _round_half_up(ratios[1] * n)
    if abs(total - 1.0) <= 1e-9:
        n_test = n - n_train - n_val
    else:
        n_test = min(_round_half_up(ratios[2] * n), n - n_train - n_val)
    sizes = (n_train, n_val, n_test)
    if min(sizes) <= 0:
        raise ConfigError(f"split of {n} nodes with ratios {ratios} leaves an empty part {sizes}")
    return sizes


def make_splits(n: int, ratios=(0.05, 0.15, 0.80), seed=0, labels=None, max_draws=1000) -> Split:
    """Random train/val/test partition of ``range(n)``, deterministic per seed.

    With ``labels`` given, permutations are redrawn (from the same seeded
    stream) until every labelled class appears in the training part.
    """
    n_train, n_val, n_test = split_sizes(n, ratios)
    rng = np.random.default_rng(seed)
    classes = None
    if labels is not None:
        labels = np.asarray(labels)
        classes = np.unique(labels[labels >= 0])
        if classes.size > n_train:
            raise ProtocolError(f"{classes.size} classes cannot all fit in {n_train} training nodes")
    for _ in range(max_draws):
        perm = rng.permutation(n)
        train = np.sort(perm[:n_train])
        if classes is not None and not np.all(np.isin(classes, labels[train])):
            continue
        val = np.sort(perm[n_train:n_train + n_val])
        test = np.sort(perm[n_train + n_val:n_train + n_val + n_test])
        return Split(train, val, test)
    raise ProtocolError(f"no split with every class in train after {max_draws} draws")


def generate_sbm(block_sizes: Sequence[int], p_in: float, p_out: float, feature_noise: float = 0.0,
                 seed=0) -> Graph:
    """Undirected stochastic block model with one-hot-plus-Gaussian features."""
    sizes = [int(b) for b in block_sizes]
    if not sizes or min(sizes) <= 0:
        raise ConfigError(f"every block needs at least one node, got {sizes}")
    if not (0.0 <= p_out < p_in <= 1.0):
        raise ConfigError(f"need 0 <= p_out < p_in <= 1, got p_in={p_in}, p_out={p_out}")
    if feature_noise < 0:
        raise ConfigError("feature_noise must be non-negative")
    rng = np.random.default_rng(seed)
    blocks = np.repeat(np.arange(len(sizes)), sizes)
    n = blocks.size
    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(blocks[iu] == blocks[ju], p_in, p_out)
    hit = rng.random(iu.size) < prob
    src, dst = iu[hit], ju[hit]
    x = np.eye(len(sizes))[blocks] + feature_noise * rng.standard_normal((n, len(sizes)))
    return build_graph(n, src, dst, x, blocks)


def degree_profile_features(g) -> Tensor:
    """Per node: (degree, min, max, mean, std of neighbour degrees)."""
    adj = g.adjacency if hasattr(g, "adjacency") else g
    return Tensor(kernels.degree_profile(adj.indptr, adj.indices))


def batch_graphs(graphs: Sequence[Graph]) -> GraphBatch:
    graphs = tuple(graphs)
    if not graphs:
        raise ConsistencyError("cannot batch an empty list of graphs")
    widths = {g.num_features for g in graphs}
    if len(widths) != 1:
        raise ConsistencyError(f"graphs have mixed feature widths {sorted(widths)}")
    sizes = np.array([g.n for g in graphs], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    indptr = [np.zeros(1, dtype=np.int64)]
    indices, data = [], []
    base_nnz = 0
    for g, off in zip(graphs, offsets[:-1]):
        indptr.append(g.adjacency.indptr[1:] + base_nnz)
        indices.append(g.adjacency.indices + off)
        data.append(g.adjacency.data)
        base_nnz += g.adjacency.nnz
    adj = CSR(np.concatenate(indptr), np.concatenate(indices), np.concatenate(data), (total, total))
    graph_ids = np.repeat(np.arange(len(graphs), dtype=np.int64), sizes)
    feats = Tensor(np.vstack([g.features.data for g in graphs]))
    labels = None
    if all(g.graph_label is not None for g in graphs):
        labels = np.array([g.graph_label for g in graphs], dtype=np.int64)
    return GraphBatch(graphs, graph_ids, adj, feats, labels)


def load_collection(manifest_path, directed=False, header=False) -> GraphBatch:
    """Load a JSON manifest ``[{edges, features | "degree_profile", label, [num_nodes]}]``."""
    manifest_path = Path(manifest_path)
    try:
        entries = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON ({exc.msg})", manifest_path, exc.lineno) from None
    if not isinstance(entries, list) or not entries:
        raise FormatError(f"{manifest_path}: manifest must be a non-empty JSON array")
    base = manifest_path.parent
    graphs = []
    for k, entry in enumerate(entries):
        allowed = {"edges", "features", "label", "num_nodes"}
        if not isinstance(entry, dict) or not {"edges", "features"} <= set(entry) or set(entry) - allowed:
            raise FormatError(f"{manifest_path}: entry {k} needs keys edges, features[, label, num_nodes]")
        edge_path = base / entry["edges"]
        if entry["features"] == "degree_profile":
            src, dst = formats.read_edge_list(edge_path, entry.get("num_nodes"))
            n = entry.get("num_nodes")
            if n is None:
                n = int(max(src.max(), dst.max())) + 1 if src.size else 1
            g = build_graph(n, src, dst, np.zeros((n, 5)), directed=directed)
            g = Graph(g.adjacency, degree_profile_features(g))
        else:
            g = load_graph(edge_path, base / entry["features"], directed=directed, header=header)
        label = entry.get("label")
        graphs.append(Graph(g.adjacency, g.features, None, None if label is None else int(label)))
    return batch_graphs(graphs)
