"""Command-line entry point: ``dsgrl {train,embed,eval,gen-sbm,inspect}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import formats
from .errors import ConfigError, DSGRLError, ParseError
from .evaluation import L2_GRID, ProbeConfig, format_table, run_protocol
from .graph import Split, generate_sbm, load_collection, load_graph, make_splits
from .trainer import TrainConfig, embed, load_checkpoint, save_checkpoint, train

log = logging.getLogger("dsgrl")

CHECKPOINT_NAME = "checkpoint.dsgc"
LOG_NAME = "train_log.csv"
METRICS_NAME = "metrics.json"


@dataclass
class ProbeSettings:
    l2_grid: List[float] = field(default_factory=lambda: list(L2_GRID))
    iters: int = 500
    lr: float = 0.1
    standardize: bool = True
    n_splits: int = 10
    ratios: List[float] = field(default_factory=lambda: [0.05, 0.15, 0.80])

    def probe_config(self) -> ProbeConfig:
        return ProbeConfig(tuple(self.l2_grid), self.iters, self.lr, self.standardize)


_PATH_KEYS = ("edges", "features", "labels", "splits", "collection", "out_dir")
_JOB_KEYS = _PATH_KEYS + ("directed", "header", "row_normalize", "csv", "probe")


@dataclass
class JobConfig:
    """Training settings plus file locations and probe settings, loaded from JSON."""

    train: TrainConfig = field(default_factory=TrainConfig)
    edges: Optional[str] = None
    features: Optional[str] = None
    labels: Optional[str] = None
    splits: Optional[str] = None
    collection: Optional[str] = None
    out_dir: str = "out"
    directed: bool = False
    header: bool = False
    row_normalize: bool = False
    csv: bool = False
    probe: ProbeSettings = field(default_factory=ProbeSettings)

    @classmethod
    def from_dict(cls, d: dict, base: Path = Path(".")) -> "JobConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        train_keys = {f.name for f in dataclasses.fields(TrainConfig)}
        unknown = set(d) - train_keys - set(_JOB_KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        job = {k: d[k] for k in _JOB_KEYS if k in d}
        probe = job.pop("probe", {})
        if not isinstance(probe, dict):
            raise ConfigError("'probe' must be an object")
        probe_keys = {f.name for f in dataclasses.fields(ProbeSettings)}
        if set(probe) - probe_keys:
            bad = ", ".join("probe." + k for k in sorted(set(probe) - probe_keys))
            raise ConfigError(f"unknown config keys: {bad}")
        for k in _PATH_KEYS:
            if job.get(k) is not None:
                job[k] = str(base / job[k])
        cfg = TrainConfig.from_dict({k: v for k, v in d.items() if k in train_keys})
        return cls(train=cfg, probe=ProbeSettings(**probe), **job)

    @classmethod
    def load(cls, path) -> "JobConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        try:
            obj = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON ({exc.msg})", path, exc.lineno) from None
        return cls.from_dict(obj, path.parent)

    def require(self, *keys):
        for k in keys:
            val = getattr(self, k)
            if val is None:
                raise ConfigError(f"'{k}' is required for this command")
            if not Path(val).exists():
                raise ConfigError(f"{k} path {val} does not exist")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON job config")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--directed", action="store_true", default=None, help="keep arcs one-directional")
    p.add_argument("--header", action="store_true", default=None, help="CSV inputs have a header row")
    p.add_argument("--csv", action="store_true", default=None, help="write embeddings as CSV instead of DSGF")
    p.add_argument("-v", "--verbose", action="store_true")


def _graph_flags(p: argparse.ArgumentParser):
    p.add_argument("--edges")
    p.add_argument("--features")
    p.add_argument("--labels")
    p.add_argument("--collection", help="JSON manifest of a graph collection")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dsgrl", description="Self-supervised graph representation learning.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train and write checkpoint, embeddings and log")
    _common(p)
    _graph_flags(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--mode", choices=("feature", "topology", "combined"))
    p.add_argument("--untrained", action="store_true", default=None)

    p = sub.add_parser("embed", help="embed a graph with a saved checkpoint")
    _common(p)
    _graph_flags(p)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("eval", help="linear-probe evaluation of embeddings")
    _common(p)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--labels")
    p.add_argument("--splits", help="split JSON; generated from --seed when absent")
    p.add_argument("--n-splits", type=int)

    p = sub.add_parser("gen-sbm", help="write a synthetic stochastic block model graph")
    _common(p)
    p.add_argument("--blocks", type=int, nargs="+", default=[50, 50, 50])
    p.add_argument("--p-in", type=float, default=0.1)
    p.add_argument("--p-out", type=float, default=0.01)
    p.add_argument("--noise", type=float, default=0.5)

    p = sub.add_parser("inspect", help="print a checkpoint's config and tensor shapes")
    _common(p)
    p.add_argument("checkpoint")
    return parser


def _job(args) -> JobConfig:
    job = JobConfig.load(args.config) if args.config else JobConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    for name in ("epochs", "mode", "untrained"):
        val = getattr(args, name, None)
        if val is not None:
            overrides[name] = val
    if overrides:
        try:
            job.train = dataclasses.replace(job.train, **overrides)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
    if args.out is not None:
        job.out_dir = args.out
    for name in ("directed", "header", "csv"):
        if getattr(args, name) is not None:
            setattr(job, name, True)
    for name in ("edges", "features", "labels", "collection", "splits"):
        val = getattr(args, name, None)
        if val is not None:
            setattr(job, name, val)
    return job


def _load_input(job: JobConfig):
    if job.collection is not None:
        job.require("collection")
        return load_collection(job.collection, directed=job.directed, header=job.header)
    job.require("edges", "features")
    if job.labels is not None:
        job.require("labels")
    return load_graph(job.edges, job.features, job.labels, directed=job.directed,
                      header=job.header, row_normalize=job.row_normalize)


def _write_embeddings(job: JobConfig, z: np.ndarray) -> Path:
    out = Path(job.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if job.csv:
        path = out / "embeddings.csv"
        formats.write_csv_matrix(path, z)
    else:
        path = out / "embeddings.dsgf"
        formats.write_dsgf(path, z)
    return path


def cmd_train(args) -> int:
    job = _job(args)
    g = _load_input(job)
    out = Path(job.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt, z = train(g, job.train, log_path=out / LOG_NAME)
    save_checkpoint(ckpt, out / CHECKPOINT_NAME)
    path = _write_embeddings(job, z.data)
    print(f"trained {ckpt.epoch} epochs; embeddings {z.rows}x{z.cols} -> {path}")
    if ckpt.loss:
        print(f"final total loss {ckpt.loss['total']:.6f}")
    return 0


def cmd_embed(args) -> int:
    job = _job(args)
    ckpt = load_checkpoint(args.checkpoint)
    job.train = ckpt.config
    g = _load_input(job)
    z = embed(g, ckpt)
    path = _write_embeddings(job, z.data)
    print(f"embeddings {z.rows}x{z.cols} -> {path}")
    return 0


def _splits(job: JobConfig, n: int, labels: np.ndarray, n_splits: Optional[int]) -> List[Split]:
    if job.splits is not None:
        job.require("splits")
        parts = formats.read_split_json(job.splits)
        return [Split(p["train"], p["val"], p["test"]) for p in parts]
    count = n_splits if n_splits is not None else job.probe.n_splits
    if count < 1:
        raise ConfigError("n_splits must be >= 1")
    seed = job.train.seed
    known = labels >= 0
    idx = np.flatnonzero(known)
    out = []
    for k in range(count):
        s = make_splits(idx.size, tuple(job.probe.ratios), seed=[seed, k], labels=labels[idx])
        out.append(Split(idx[s.train], idx[s.val], idx[s.test]))
    return out


def cmd_eval(args) -> int:
    job = _job(args)
    z = formats.read_matrix(args.embeddings, header=job.header)
    job.require("labels")
    labels = formats.read_labels(job.labels, z.shape[0])
    splits = _splits(job, z.shape[0], labels, args.n_splits)
    report = run_protocol(z, labels, splits, job.probe.probe_config())
    out = Path(job.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / METRICS_NAME).write_text(json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(format_table(report))
    return 0


def cmd_gen_sbm(args) -> int:
    seed = args.seed if args.seed is not None else 0
    g = generate_sbm(args.blocks, args.p_in, args.p_out, args.noise, seed=seed)
    out = Path(args.out or "sbm")
    out.mkdir(parents=True, exist_ok=True)
    r, c = g.edges()
    keep = r < c
    formats.write_edge_list(out / "edges.tsv", r[keep], c[keep])
    formats.write_csv_matrix(out / "features.csv", g.features.data)
    formats.write_labels(out / "labels.tsv", g.labels)
    job = {"edges": "edges.tsv", "features": "features.csv", "labels": "labels.tsv", "seed": seed}
    (out / "job.json").write_text(json.dumps(job, indent=2) + "\n", encoding="utf-8")
    print(f"sbm: {g.n} nodes, {int(keep.sum())} edges -> {out}")
    return 0


def cmd_inspect(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    print(json.dumps({"config": ckpt.config.to_dict(), "epoch": ckpt.epoch, "loss": ckpt.loss},
                     indent=2, sort_keys=True))
    for name, arr in ckpt.params.items():
        print(f"{name}\t{arr.shape[0]}x{arr.shape[1]}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "embed": cmd_embed,
    "eval": cmd_eval,
    "gen-sbm": cmd_gen_sbm,
    "inspect": cmd_inspect,
}


def _one_line(msg: str) -> str:
    return " ".join(str(msg).split())


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except DSGRLError as exc:
        print(f"ERROR {exc.category}: {_one_line(exc)}", file=sys.stderr)
    except FileNotFoundError as exc:
        print(f"ERROR config: {_one_line(exc)}", file=sys.stderr)
    except OSError as exc:
        print(f"ERROR io: {_one_line(exc)}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
