"""Linear-probe evaluation of frozen embeddings."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from .autodiff import Tensor
from .errors import DegenerateBatchError, ProtocolError, ShapeError

L2_GRID = (1e-4, 1e-2, 1.0)


def _arr(z):
    return z.data if isinstance(z, Tensor) else np.asarray(z, dtype=np.float64)


@dataclass
class LinearProbe:
    weight: np.ndarray
    bias: np.ndarray

    @property
    def classes(self) -> int:
        return self.bias.shape[0]

    def logits(self, z) -> np.ndarray:
        return _arr(z) @ self.weight + self.bias

    def predict(self, z) -> np.ndarray:
        return np.argmax(self.logits(z), axis=1)


@dataclass
class ProbeConfig:
    l2_grid: Sequence[float] = L2_GRID
    iters: int = 500
    lr: float = 0.1
    standardize: bool = True


@dataclass
class EvalReport:
    accuracy: float
    macro_f1: float
    micro_f1: float
    per_class_f1: Dict[int, float]
    n_test: int
    collapse: Dict[str, float] = field(default_factory=dict)

    def as_dict(self):
        d = asdict(self)
        d["per_class_f1"] = {str(k): v for k, v in self.per_class_f1.items()}
        return d


@dataclass
class ProtocolReport:
    mean: Dict[str, float]
    std: Dict[str, float]
    splits: List[EvalReport]
    l2: List[float]
    collapse: Dict[str, float]

    def as_dict(self):
        return {
            "mean": self.mean,
            "std": self.std,
            "n_splits": len(self.splits),
            "selected_l2": self.l2,
            "collapse": self.collapse,
            "splits": [s.as_dict() for s in self.splits],
        }


def _softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def fit_linear_probe(z_train, y_train, l2: float = 1e-4, iters: int = 500, lr: float = 0.1,
                     n_classes=None) -> LinearProbe:
    """Multinomial logistic regression by full-batch gradient descent from zero."""
    x = _arr(z_train)
    y = np.asarray(y_train, dtype=np.int64)
    if x.shape[0] != y.shape[0]:
        raise ShapeError(f"{x.shape[0]} embeddings but {y.shape[0]} labels")
    if y.size == 0:
        raise ProtocolError("empty training set")
    if y.min() < 0:
        raise ProtocolError("training labels must be non-negative")
    c = int(n_classes) if n_classes is not None else int(y.max()) + 1
    if y.max() >= c:
        raise ProtocolError(f"label {int(y.max())} outside [0, {c})")
    missing = np.setdiff1d(np.arange(c), y)
    if missing.size:
        raise ProtocolError(f"class {int(missing[0])} has no training example")
    if c < 2:
        raise ProtocolError("a probe needs at least two classes")
    n, d = x.shape
    onehot = np.eye(c)[y]
    w = np.zeros((d, c))
    b = np.zeros(c)
    for _ in range(iters):
        err = _softmax(x @ w + b) - onehot
        w -= lr * (x.T @ err / n + l2 * w)
        b -= lr * err.mean(axis=0)
    return LinearProbe(w, b)


def classification_report(y_true, y_pred) -> EvalReport:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.size == 0:
        raise ProtocolError("empty test set")
    if y_true.shape != y_pred.shape:
        raise ShapeError(f"{y_true.size} labels vs {y_pred.size} predictions")
    per_class = {}
    tp_all = fp_all = fn_all = 0
    for k in np.union1d(y_true, y_pred):
        tp = int(np.sum((y_pred == k) & (y_true == k)))
        fp = int(np.sum((y_pred == k) & (y_true != k)))
        fn = int(np.sum((y_pred != k) & (y_true == k)))
        tp_all, fp_all, fn_all = tp_all + tp, fp_all + fp, fn_all + fn
        per_class[int(k)] = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
    micro = 2 * tp_all / (2 * tp_all + fp_all + fn_all) if tp_all else 0.0
    return EvalReport(
        accuracy=float(np.mean(y_true == y_pred)),
        macro_f1=float(np.mean(list(per_class.values()))),
        micro_f1=float(micro),
        per_class_f1=per_class,
        n_test=int(y_true.size),
    )


def evaluate(probe: LinearProbe, z_test, y_test) -> EvalReport:
    z = _arr(z_test)
    if z.shape[1] != probe.weight.shape[0]:
        raise ShapeError(f"embedding width {z.shape[1]} != probe width {probe.weight.shape[0]}")
    report = classification_report(y_test, probe.predict(z))
    if z.shape[0] >= 2:
        report.collapse = collapse_metrics(z)
    return report


def collapse_metrics(z) -> Dict[str, float]:
    """Mean per-dimension std and mean |off-diagonal correlation|."""
    z = _arr(z)
    b, d = z.shape
    if b < 2:
        raise DegenerateBatchError(f"collapse metrics need at least 2 rows, got {b}")
    std = z.std(axis=0, ddof=1)
    if d < 2:
        return {"mean_dim_std": float(std.mean()), "mean_abs_offdiag_corr": 0.0}
    centered = z - z.mean(axis=0)
    cov = centered.T @ centered / (b - 1)
    live = std > 0
    corr = np.zeros((d, d))
    corr[np.ix_(live, live)] = cov[np.ix_(live, live)] / np.outer(std[live], std[live])
    off = corr[~np.eye(d, dtype=bool)]
    return {"mean_dim_std": float(std.mean()), "mean_abs_offdiag_corr": float(np.abs(off).mean())}


def standardize(z) -> np.ndarray:
    """Column z-scores from label-free statistics of the whole matrix."""
    z = _arr(z)
    mu = z.mean(axis=0)
    sd = z.std(axis=0)
    return (z - mu) / np.where(sd > 0, sd, 1.0)


def run_protocol(z, labels, splits, probe_cfg: ProbeConfig = ProbeConfig()) -> ProtocolReport:
    """Per split: pick L2 on validation accuracy, report the test metrics; aggregate."""
    if not splits:
        raise ProtocolError("run_protocol needs at least one split")
    raw = _arr(z)
    x = standardize(raw) if probe_cfg.standardize else raw
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (x.shape[0],):
        raise ShapeError(f"{y.shape[0]} labels for {x.shape[0]} embeddings")
    labelled = y[y >= 0]
    n_classes = int(labelled.max()) + 1 if labelled.size else 0

    def part(idx):
        idx = np.asarray(idx, dtype=np.int64)
        return idx[y[idx] >= 0]

    reports, chosen = [], []
    for split in splits:
        tr, va, te = part(split.train), part(split.val), part(split.test)
        best = None
        for l2 in probe_cfg.l2_grid:
            probe = fit_linear_probe(x[tr], y[tr], l2, probe_cfg.iters, probe_cfg.lr, n_classes)
            score = float(np.mean(probe.predict(x[va]) == y[va])) if va.size else 0.0
            if best is None or score > best[0]:
                best = (score, l2, probe)
        rep = evaluate(best[2], x[te], y[te])
        rep.collapse = {}
        reports.append(rep)
        chosen.append(best[1])
    keys = ("accuracy", "macro_f1", "micro_f1")
    mean = {k: float(np.mean([getattr(r, k) for r in reports])) for k in keys}
    std = {k: float(np.std([getattr(r, k) for r in reports])) for k in keys}
    collapse = collapse_metrics(raw) if raw.shape[0] >= 2 else {}
    return ProtocolReport(mean, std, reports, chosen, collapse)


def format_table(report: ProtocolReport) -> str:
    lines = [f"{'metric':<10} {'mean':>8} {'std':>8}"]
    for k in ("accuracy", "macro_f1", "micro_f1"):
        lines.append(f"{k:<10} {report.mean[k]:>8.4f} {report.std[k]:>8.4f}")
    for k, v in report.collapse.items():
        lines.append(f"{k:<22} {v:>8.4f}")
    lines.append(f"splits: {len(report.splits)}")
    return "\n".join(lines)
