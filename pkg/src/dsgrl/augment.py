"""Learnable feature and topology augmenters and two-view construction."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import SparseTensor, Tensor
from .encoder import FFNStack, GCNStack, ffn_forward, gcn_forward
from .errors import ConfigError, ShapeError
from .graph import normalize_adjacency
from .sparse import CSR

MODES = ("feature", "topology", "combined")


@dataclass(eq=False)
class FeatureAugmenter:
    f1: FFNStack
    f2: FFNStack

    def __post_init__(self):
        if self.f1.layer_shapes != self.f2.layer_shapes:
            raise ShapeError(f"augmenter stacks differ: {self.f1.layer_shapes} vs {self.f2.layer_shapes}")

    @property
    def out_dim(self) -> int:
        return self.f1.out_dim

    def parameters(self):
        return self.f1.parameters() + self.f2.parameters()


@dataclass(eq=False)
class TopologyAugmenter:
    gnn: GCNStack

    @property
    def out_dim(self) -> int:
        return self.gnn.out_dim

    @property
    def depth(self) -> int:
        return len(self.gnn.weights)

    def parameters(self):
        return self.gnn.parameters()


@dataclass(eq=False)
class ViewPair:
    view1: Tuple[object, Tensor]
    view2: Tuple[object, Tensor]
    high_order: Optional[CSR] = None


def augment_features(x: Tensor, aug: FeatureAugmenter):
    return ffn_forward(x, aug.f1), ffn_forward(x, aug.f2)


def high_order_features(a_hat, x: Tensor, aug: TopologyAugmenter) -> Tensor:
    return gcn_forward(a_hat, x, aug.gnn)


def similarity(h_i, h_j) -> float:
    h_i = np.asarray(h_i.data if isinstance(h_i, Tensor) else h_i, dtype=np.float64).ravel()
    h_j = np.asarray(h_j.data if isinstance(h_j, Tensor) else h_j, dtype=np.float64).ravel()
    if h_i.shape != h_j.shape:
        raise ShapeError(f"similarity: lengths {h_i.size} and {h_j.size} differ")
    return float(h_i @ h_j)


def build_high_order_network(h) -> CSR:
    """Directed weighted A′: ``a'_ij = h_i.h_j`` where it beats the row mean over all k.

    The row mean is clamped into the row's [min, max] so that rounding cannot
    admit every entry of a constant row.
    """
    arr = h.data if isinstance(h, Tensor) else np.asarray(h, dtype=np.float64)
    n = arr.shape[0]
    indptr, indices, data = kernels.threshold_support(arr)
    return CSR(indptr, indices, data, (n, n))


def high_order_adjacency(h: Tensor, support: Optional[CSR] = None) -> SparseTensor:
    """Normalized, differentiable message-passing operator for the high-order view.

    The kept set ``support`` is held fixed; the stored values are recomputed
    from ``h`` so gradients reach whatever produced it. The directed A′ is
    symmetrized as ``(A′ + A′ᵀ)/2``, given unit self-loops and normalized
    with absolute weighted degrees.
    """
    if support is None:
        support = build_high_order_network(h)
    n = h.rows
    if support.shape != (n, n):
        raise ShapeError(f"support {support.shape} does not match {n} nodes")
    r, c = support.row_ids(), support.indices
    diag = np.arange(n, dtype=np.int64)
    pattern = CSR.from_coo(
        np.concatenate([r, c, diag]),
        np.concatenate([c, r, diag]),
        np.concatenate([np.full(r.size, 0.5), np.full(r.size, 0.5), np.zeros(n)]),
        (n, n),
    )
    coef = pattern.data
    self_loop = (pattern.row_ids() == pattern.indices).astype(np.float64)
    sims = ad.sddmm(pattern, h, h)
    values = ad.add(ad.hadamard(sims, coef[None, :]), self_loop[None, :])
    weights = ad.sym_normalize(pattern, values)
    return SparseTensor(pattern.with_data(np.ones(pattern.nnz)), weights)


def make_views(g, mode: str, feature_aug: Optional[FeatureAugmenter] = None,
               topology_aug: Optional[TopologyAugmenter] = None, a_hat: Optional[CSR] = None,
               support: Optional[CSR] = None) -> ViewPair:
    """Build the two augmented views for ``mode`` in {feature, topology, combined}."""
    if mode not in MODES:
        raise ConfigError(f"unknown augmentation mode {mode!r}; expected one of {MODES}")
    if mode in ("feature", "combined") and feature_aug is None:
        raise ConfigError(f"mode {mode!r} needs a feature augmenter")
    if mode in ("topology", "combined") and topology_aug is None:
        raise ConfigError(f"mode {mode!r} needs a topology augmenter")
    if a_hat is None:
        a_hat = normalize_adjacency(g)
    x = g.features

    if mode == "feature":
        x1, x2 = augment_features(x, feature_aug)
        return ViewPair((a_hat, x1), (a_hat, x2))

    h = high_order_features(a_hat, x, topology_aug)
    if support is None:
        support = build_high_order_network(h)
    a_prime = high_order_adjacency(h, support)
    if mode == "topology":
        return ViewPair((a_hat, x), (a_prime, x), support)
    x1, x2 = augment_features(x, feature_aug)
    return ViewPair((a_hat, x1), (a_prime, x2), support)
