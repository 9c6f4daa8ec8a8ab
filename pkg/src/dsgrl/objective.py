"""Invariance / variance / covariance objective and its regularizers."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import FFNStack
from .errors import ConfigError, DegenerateBatchError, ShapeError

CSV_FIELDS = ("inv", "var1", "var2", "cov1", "cov2", "model_reg", "total")


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    lam: float = 1.0
    epsilon: float = 1e-4

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "lam"):
            if getattr(self, name) < 0:
                raise ConfigError(f"loss weight {name} must be non-negative")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")


@dataclass
class LossBreakdown:
    """Per-term values of one objective evaluation.

    Under the orthonormality regularizer the two Gram penalties are stored
    in ``cov1``/``cov2`` and ``var1``/``var2`` stay zero.
    """

    inv: float
    var1: float
    var2: float
    cov1: float
    cov2: float
    model_reg: float
    total: float
    loss: Optional[Tensor] = field(default=None, repr=False, compare=False)

    def as_dict(self):
        d = asdict(self)
        d.pop("loss")
        return d

    def recompose(self, w: LossWeights) -> float:
        return (w.alpha * self.inv + w.beta * (self.var1 + self.var2)
                + w.gamma * (self.cov1 + self.cov2) + w.lam * self.model_reg)


def invariance(z1: Tensor, z2: Tensor, mode: str = "frobenius") -> Tensor:
    """``||Z1 - Z2||_F``; ``mode="mse"`` gives the mean squared difference instead."""
    if z1.shape != z2.shape:
        raise ShapeError(f"invariance: {z1.shape} vs {z2.shape}")
    diff = ad.sub(z1, z2)
    if mode == "frobenius":
        return ad.frobenius_norm(diff)
    if mode == "mse":
        return ad.scale(ad.sum(ad.square(diff)), 1.0 / z1.rows)
    raise ConfigError(f"unknown invariance mode {mode!r}")


def variance_reg(z: Tensor, epsilon: float = 1e-4) -> Tensor:
    std = ad.sqrt(ad.add_scalar(ad.column_variance(z), epsilon))
    hinge = ad.relu(ad.add_scalar(ad.neg(std), 1.0))
    return ad.scale(ad.sum(hinge), 1.0 / z.cols)


def covariance_reg(z: Tensor) -> Tensor:
    b, d = z.shape
    if b < 2:
        raise DegenerateBatchError(f"covariance needs at least 2 rows, got {b}")
    zc = ad.mean_center_columns(z)
    cov = ad.scale(ad.matmul(ad.transpose(zc), zc), 1.0 / (b - 1))
    off = 1.0 - np.eye(d)
    return ad.scale(ad.sum(ad.square(ad.hadamard(cov, off))), 1.0 / d)


def latent_reg(z1: Tensor, z2: Tensor, beta: float, gamma: float, epsilon: float = 1e-4) -> Tensor:
    v = ad.add(variance_reg(z1, epsilon), variance_reg(z2, epsilon))
    c = ad.add(covariance_reg(z1), covariance_reg(z2))
    return ad.add(ad.scale(v, beta), ad.scale(c, gamma))


def _gram_penalty(w: Tensor) -> Tensor:
    gram = ad.matmul(w, ad.transpose(w))
    return ad.frobenius_norm(ad.sub(gram, np.eye(w.rows)))


def model_reg(theta1: FFNStack, theta2: FFNStack) -> Tensor:
    """Sum over layers of ``||W W^T - I||_F`` for the vertically stacked weights."""
    if theta1.layer_shapes != theta2.layer_shapes:
        raise ShapeError(f"model_reg: {theta1.layer_shapes} vs {theta2.layer_shapes}")
    # weights are stored (in x out), as used in x @ W
    terms = [_gram_penalty(ad.vstack(w1, w2)) for w1, w2 in zip(theta1.weights, theta2.weights)]
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return total


def orthonormality_reg(z1: Tensor, z2: Tensor, gamma: float) -> Tensor:
    t1 = _gram_penalty(ad.row_l2_normalize(z1))
    t2 = _gram_penalty(ad.row_l2_normalize(z2))
    return ad.scale(ad.add(t1, t2), gamma)


def total_loss(z1: Tensor, z2: Tensor, theta1: Optional[FFNStack] = None,
               theta2: Optional[FFNStack] = None, weights: LossWeights = LossWeights(),
               latent: str = "vic", mode: str = "feature", inv_mode: str = "frobenius") -> LossBreakdown:
    """Weighted objective; ``breakdown.loss`` is the differentiable total."""
    if mode in ("feature", "combined") and (theta1 is None or theta2 is None):
        raise ConfigError(f"mode {mode!r} needs both feature-augmenter stacks for model_reg")
    w = weights
    inv = invariance(z1, z2, inv_mode)
    if latent == "vic":
        v1, v2 = variance_reg(z1, w.epsilon), variance_reg(z2, w.epsilon)
        c1, c2 = covariance_reg(z1), covariance_reg(z2)
        reg = ad.add(ad.scale(ad.add(v1, v2), w.beta), ad.scale(ad.add(c1, c2), w.gamma))
    elif latent == "ortho":
        v1 = v2 = None
        c1 = _gram_penalty(ad.row_l2_normalize(z1))
        c2 = _gram_penalty(ad.row_l2_normalize(z2))
        reg = ad.scale(ad.add(c1, c2), w.gamma)
    else:
        raise ConfigError(f"unknown latent regularizer {latent!r}; expected 'vic' or 'ortho'")
    loss = ad.add(ad.scale(inv, w.alpha), reg)
    mreg = None
    if theta1 is not None and theta2 is not None:
        mreg = model_reg(theta1, theta2)
        loss = ad.add(loss, ad.scale(mreg, w.lam))

    def val(t):
        return 0.0 if t is None else t.item()

    return LossBreakdown(
        inv=val(inv), var1=val(v1), var2=val(v2), cov1=val(c1), cov2=val(c2),
        model_reg=val(mreg), total=loss.item(), loss=loss,
    )
