"""Shared GCN encoder, feed-forward stacks, view aggregation and readout.

Layers carry no bias. ReLU sits between layers; the last layer is linear.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ConsistencyError, ShapeError


def glorot(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _check_chain(weights, kind):
    if not weights:
        raise ShapeError(f"{kind} needs at least one layer")
    for k in range(1, len(weights)):
        if weights[k - 1].cols != weights[k].rows:
            raise ShapeError(
                f"{kind} layer {k} expects width {weights[k].rows}, previous layer emits {weights[k - 1].cols}"
            )


@dataclass(eq=False)
class FFNStack:
    weights: List[Tensor]

    def __post_init__(self):
        _check_chain(self.weights, "FFNStack")

    @classmethod
    def init(cls, widths, rng, requires_grad=True) -> "FFNStack":
        """``widths`` = (in, hidden..., out)."""
        return cls([Tensor(glorot(a, b, rng), requires_grad) for a, b in zip(widths[:-1], widths[1:])])

    @property
    def in_dim(self) -> int:
        return self.weights[0].rows

    @property
    def out_dim(self) -> int:
        return self.weights[-1].cols

    @property
    def layer_shapes(self):
        return [w.shape for w in self.weights]

    def parameters(self):
        return list(self.weights)


class GCNStack(FFNStack):
    def __post_init__(self):
        _check_chain(self.weights, "GCNStack")


def ffn_forward(x: Tensor, stack: FFNStack) -> Tensor:
    if x.cols != stack.in_dim:
        raise ShapeError(f"input width {x.cols} != first layer width {stack.in_dim}")
    h = x
    last = len(stack.weights) - 1
    for k, w in enumerate(stack.weights):
        h = ad.matmul(h, w)
        if k < last:
            h = ad.relu(h)
    return h


def gcn_forward(a_hat, x: Tensor, stack: GCNStack) -> Tensor:
    """Propagate-transform per layer: ``Â H W``; ``a_hat`` is a CSR or SparseTensor."""
    if x.cols != stack.in_dim:
        raise ShapeError(f"input width {x.cols} != first layer width {stack.in_dim}")
    if a_hat.shape != (x.rows, x.rows):
        raise ShapeError(f"adjacency {a_hat.shape} does not match {x.rows} nodes")
    h = x
    last = len(stack.weights) - 1
    for k, w in enumerate(stack.weights):
        # transform first when it shrinks the width, cheaper sparse product
        if w.cols < w.rows:
            h = ad.spmm(a_hat, ad.matmul(h, w))
        else:
            h = ad.matmul(ad.spmm(a_hat, h), w)
        if k < last:
            h = ad.relu(h)
    return h


def aggregate(z1: Tensor, z2: Tensor) -> Tensor:
    """Column-wise concatenation ``[Z1 | Z2]``."""
    return ad.concat_cols(z1, z2)


def readout(z: Tensor, graph_ids, mode: str = "mean", n_graphs=None) -> Tensor:
    graph_ids = np.asarray(graph_ids, dtype=np.int64)
    if graph_ids.shape != (z.rows,):
        raise ShapeError(f"graph_ids length {graph_ids.shape} != rows {z.rows}")
    if n_graphs is None:
        n_graphs = int(graph_ids.max()) + 1 if graph_ids.size else 0
    counts = np.bincount(graph_ids, minlength=n_graphs)
    if np.any(counts == 0):
        raise ConsistencyError(f"graph {int(np.flatnonzero(counts == 0)[0])} has no nodes")
    if mode == "mean":
        return ad.segment_mean(z, graph_ids, n_graphs)
    if mode == "sum":
        return ad.segment_sum(z, graph_ids, n_graphs)
    raise ConfigError(f"unknown readout mode {mode!r}")
