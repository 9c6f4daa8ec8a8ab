"""Joint training of augmenters and encoder, embedding, and checkpoints."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import autodiff as ad
from .augment import MODES, FeatureAugmenter, TopologyAugmenter, build_high_order_network, \
    high_order_features, make_views
from .autodiff import Tensor
from .encoder import FFNStack, GCNStack, aggregate, gcn_forward, readout
from .errors import ConfigError, FormatError, NumericError, ShapeError
from .graph import GraphBatch, normalize_adjacency
from .objective import CSV_FIELDS, LossBreakdown, LossWeights, total_loss

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"DSGC"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "feature"
    aug_dim: int = 64
    out_dim: int = 64
    hidden_dim: Optional[int] = None
    encoder_layers: int = 2
    aug_layers: int = 1
    topo_layers: int = 2
    weights: LossWeights = field(default_factory=LossWeights)
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8
    epochs: int = 200
    seed: int = 0
    batch_size: Optional[int] = None
    latent_reg: str = "vic"
    invariance: str = "frobenius"
    untrained: bool = False
    topology_refresh: int = 1
    readout: str = "mean"
    in_dim: Optional[int] = None

    def __post_init__(self):
        if isinstance(self.weights, dict):
            object.__setattr__(self, "weights", LossWeights(**self.weights))
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        for name in ("aug_dim", "out_dim", "encoder_layers", "aug_layers", "topo_layers", "topology_refresh"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.hidden_dim is not None and self.hidden_dim < 1:
            raise ConfigError("hidden_dim must be >= 1")
        if self.latent_reg not in ("vic", "ortho"):
            raise ConfigError(f"latent_reg must be 'vic' or 'ortho', got {self.latent_reg!r}")
        if self.invariance not in ("frobenius", "mse"):
            raise ConfigError(f"invariance must be 'frobenius' or 'mse', got {self.invariance!r}")
        if self.readout not in ("mean", "sum"):
            raise ConfigError(f"readout must be 'mean' or 'sum', got {self.readout!r}")
        if self.batch_size is not None:
            if self.batch_size < 2:
                raise ConfigError("batch_size must be >= 2")
            if self.mode != "feature":
                raise ConfigError("mini-batch training is only supported in feature mode")

    @property
    def hidden(self) -> int:
        return self.hidden_dim if self.hidden_dim is not None else 2 * self.out_dim

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["weights"] = dataclasses.asdict(self.weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        d = dict(d)
        if "weights" in d:
            w = d["weights"]
            if not isinstance(w, dict):
                raise ConfigError("'weights' must be an object")
            wk = {f.name for f in dataclasses.fields(LossWeights)}
            if set(w) - wk:
                raise ConfigError(f"unknown config keys: {', '.join('weights.' + k for k in sorted(set(w) - wk))}")
            d["weights"] = LossWeights(**w)
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


@dataclass(eq=False)
class Model:
    """All trainable stacks for one configuration."""

    encoder: GCNStack
    feature_aug: Optional[FeatureAugmenter] = None
    topology_aug: Optional[TopologyAugmenter] = None

    def named_parameters(self) -> Dict[str, Tensor]:
        out = {f"encoder.{k}": w for k, w in enumerate(self.encoder.weights)}
        if self.feature_aug is not None:
            out.update({f"f1.{k}": w for k, w in enumerate(self.feature_aug.f1.weights)})
            out.update({f"f2.{k}": w for k, w in enumerate(self.feature_aug.f2.weights)})
        if self.topology_aug is not None:
            out.update({f"topo.{k}": w for k, w in enumerate(self.topology_aug.gnn.weights)})
        return out

    @classmethod
    def init(cls, cfg: TrainConfig, in_dim: int, requires_grad=True) -> "Model":
        rng = np.random.default_rng(cfg.seed)
        uses_feat = cfg.mode in ("feature", "combined")
        uses_topo = cfg.mode in ("topology", "combined")
        enc_in = cfg.aug_dim if uses_feat else in_dim
        enc_widths = [enc_in] + [cfg.hidden] * (cfg.encoder_layers - 1) + [cfg.out_dim]
        encoder = GCNStack.init(enc_widths, rng, requires_grad)
        feat = topo = None
        if uses_feat:
            widths = [in_dim] + [cfg.aug_dim] * cfg.aug_layers
            feat = FeatureAugmenter(FFNStack.init(widths, rng, requires_grad), FFNStack.init(widths, rng, requires_grad))
        if uses_topo:
            widths = [in_dim] + [cfg.aug_dim] * cfg.topo_layers
            topo = TopologyAugmenter(GCNStack.init(widths, rng, requires_grad))
        return cls(encoder, feat, topo)

    @classmethod
    def from_params(cls, params: Dict[str, np.ndarray], requires_grad=False) -> "Model":
        def stack(prefix, kind):
            keys = sorted((k for k in params if k.startswith(prefix + ".")), key=lambda k: int(k.split(".")[1]))
            if not keys:
                return None
            return kind([Tensor(params[k], requires_grad) for k in keys])

        encoder = stack("encoder", GCNStack)
        if encoder is None:
            raise FormatError("checkpoint has no encoder tensors")
        f1, f2, topo = stack("f1", FFNStack), stack("f2", FFNStack), stack("topo", GCNStack)
        feat = FeatureAugmenter(f1, f2) if f1 is not None and f2 is not None else None
        return cls(encoder, feat, None if topo is None else TopologyAugmenter(topo))


@dataclass(eq=False)
class Checkpoint:
    config: TrainConfig
    params: Dict[str, np.ndarray]
    epoch: int = 0
    loss: Optional[dict] = None
    history: List[LossBreakdown] = field(default_factory=list, repr=False)

    def model(self, requires_grad=False) -> Model:
        return Model.from_params(self.params, requires_grad)


@dataclass
class AdamState:
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state: AdamState, lr=1e-3, beta1=0.9, beta2=0.999, eps_opt=1e-8):
    """Bias-corrected Adam update; ``params`` (numpy arrays) are modified in place."""
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"adam: parameter {p.shape}, gradient {g.shape}, state {m.shape}")
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps_opt)
    return params, state


def _encode_views(model: Model, views):
    z1 = gcn_forward(views.view1[0], views.view1[1], model.encoder)
    z2 = gcn_forward(views.view2[0], views.view2[1], model.encoder)
    return z1, z2


def _current_support(g, a_hat, model: Model):
    with ad.no_grad():
        h = high_order_features(a_hat, g.features, model.topology_aug)
    return build_high_order_network(h)


def _check_finite(br: LossBreakdown, epoch: int):
    for name in CSV_FIELDS:
        val = getattr(br, name)
        if not np.isfinite(val):
            raise NumericError(f"non-finite loss term '{name}' ({val}) at epoch {epoch}")


def _batches(n, batch_size, rng):
    if batch_size is None or batch_size >= n:
        return [None]
    perm = rng.permutation(n)
    chunks = [np.sort(perm[k:k + batch_size]) for k in range(0, n, batch_size)]
    return [c for c in chunks if c.size >= 2]


def train(g, cfg: TrainConfig, log_path=None):
    """Optimize all parameters jointly; returns ``(checkpoint, Z)``.

    ``Z`` is ``[Z1 | Z2]`` per node, or its readout per graph for a GraphBatch.
    """
    in_dim = g.num_features
    if cfg.in_dim is not None and cfg.in_dim != in_dim:
        raise ConfigError(f"config expects {cfg.in_dim} input features, graph has {in_dim}")
    cfg = dataclasses.replace(cfg, in_dim=in_dim)
    model = Model.init(cfg, in_dim)
    named = model.named_parameters()
    params = list(named.values())
    a_hat = normalize_adjacency(g)
    epochs = 0 if cfg.untrained else cfg.epochs
    state = AdamState()
    batch_rng = np.random.default_rng([cfg.seed, 1])
    feat = model.feature_aug
    theta1 = feat.f1 if feat is not None else None
    theta2 = feat.f2 if feat is not None else None

    history: List[LossBreakdown] = []
    writer = fh = None
    if log_path is not None:
        fh = open(log_path, "w", newline="", encoding="utf-8")
        writer = csv.writer(fh)
        writer.writerow(("epoch",) + CSV_FIELDS)
    try:
        support = None
        for epoch in range(epochs):
            if model.topology_aug is not None and (support is None or epoch % cfg.topology_refresh == 0):
                support = _current_support(g, a_hat, model)
            rows = []
            for idx in _batches(g.n, cfg.batch_size, batch_rng):
                with ad.recording():
                    views = make_views(g, cfg.mode, feat, model.topology_aug, a_hat, support)
                    z1, z2 = _encode_views(model, views)
                    if idx is not None:
                        z1, z2 = ad.gather_rows(z1, idx), ad.gather_rows(z2, idx)
                    br = total_loss(z1, z2, theta1, theta2, cfg.weights, cfg.latent_reg, cfg.mode, cfg.invariance)
                    _check_finite(br, epoch)
                    ad.backward(br.loss)
                adam_step([p.data for p in params], [p.grad for p in params], state,
                          cfg.lr, cfg.beta1, cfg.beta2, cfg.eps_opt)
                br.loss = None
                rows.append(br)
            if len(rows) == 1:
                br = rows[0]
            else:
                br = LossBreakdown(**{k: float(np.mean([getattr(r, k) for r in rows])) for k in CSV_FIELDS})
            history.append(br)
            if writer is not None:
                writer.writerow([epoch] + [repr(getattr(br, k)) for k in CSV_FIELDS])
            if epoch % 50 == 0 or epoch == epochs - 1:
                log.debug("epoch %d total %.6f", epoch, br.total)
    finally:
        if fh is not None:
            fh.close()

    ckpt = Checkpoint(
        cfg,
        {k: t.data.copy() for k, t in named.items()},
        epoch=epochs,
        loss=history[-1].as_dict() if history else None,
        history=history,
    )
    return ckpt, embed(g, ckpt)


def embed_views(g, ckpt: Checkpoint):
    """Forward-only ``(Z1, Z2)`` node embeddings under the checkpoint's parameters."""
    cfg = ckpt.config
    if cfg.in_dim is not None and cfg.in_dim != g.num_features:
        raise ConfigError(f"checkpoint expects {cfg.in_dim} input features, graph has {g.num_features}")
    model = ckpt.model()
    with ad.no_grad():
        a_hat = normalize_adjacency(g)
        views = make_views(g, cfg.mode, model.feature_aug, model.topology_aug, a_hat)
        return _encode_views(model, views)


def embed(g, ckpt: Checkpoint) -> Tensor:
    z1, z2 = embed_views(g, ckpt)
    with ad.no_grad():
        z = aggregate(z1, z2)
        if isinstance(g, GraphBatch):
            z = readout(z, g.graph_ids, ckpt.config.readout, g.n_graphs)
    return z


_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    header = json.dumps(
        {"config": ckpt.config.to_dict(), "epoch": ckpt.epoch, "loss": ckpt.loss}, sort_keys=True
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(_U32.pack(CHECKPOINT_VERSION))
        fh.write(_U64.pack(len(header)))
        fh.write(header)
        for name, arr in ckpt.params.items():
            arr = np.asarray(arr, dtype=np.float64)
            if arr.ndim != 2:
                raise FormatError(f"tensor {name!r} is not 2-D")
            raw = name.encode("utf-8")
            fh.write(_U32.pack(len(raw)))
            fh.write(raw)
            fh.write(_U64.pack(arr.shape[0]))
            fh.write(_U64.pack(arr.shape[1]))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(raw):
            raise FormatError(f"{path}: truncated checkpoint while reading {what}")
        chunk = raw[pos:pos + n]
        pos += n
        return chunk

    magic = take(4, "magic")
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    (version,) = _U32.unpack(take(4, "version"))
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})")
    (hlen,) = _U64.unpack(take(8, "header length"))
    try:
        header = json.loads(take(hlen, "header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header ({exc})") from None
    params = {}
    while pos < len(raw):
        (nlen,) = _U32.unpack(take(4, "tensor name length"))
        name = take(nlen, "tensor name").decode("utf-8")
        (rows,) = _U64.unpack(take(8, f"rows of {name}"))
        (cols,) = _U64.unpack(take(8, f"cols of {name}"))
        payload = take(8 * rows * cols, f"payload of {name}")
        params[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(rows, cols)
    cfg = TrainConfig.from_dict(header["config"])
    return Checkpoint(cfg, params, epoch=int(header.get("epoch", 0)), loss=header.get("loss"))
