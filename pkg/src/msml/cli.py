"""Command-line entry point: ``msml {train,eval,gradcheck,compare}``.

Exit codes: 0 success, 1 gradient check failed, 2 invalid configuration,
3 runtime failure (bad checkpoint, unreadable data, divergence, ...).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .data import SyntheticSpec, gen_synthetic, load_features, save_features, split
from .errors import ConfigError, MsmlError
from .evaluation import Protocol, evaluate_model, write_histogram_csv, write_report
from .gradcheck import run_gradchecks
from .losses import LOSS_KINDS, MarginConfig
from .model import LrSchedule, load_checkpoint, save_checkpoint
from .train import TrainConfig, train

log = logging.getLogger("msml")

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3

SCHEMA_VERSION = 1
OUTPUT_ENV = "MSML_OUTPUT_DIR"
HISTORY_HEADER = ["epoch", "mean_loss", "mean_demarcation", "lr"]
SUMMARY_HEADER = ["loss", "mAP", "rank_1", "rank_5", "rank_10", "demarcation", "n_seeds"]


@dataclass
class RunConfig:
    loss: str = "msml"
    alpha: float = 0.3
    beta: Optional[float] = None
    w_cls: float = 1.0
    p: int = 8
    k: int = 4
    epochs: int = 200
    lr: float = 1e-3
    lr_steps: tuple = ((50, 1e-4), (200, 1e-5))
    hidden: tuple = (64, 64)
    emb_dim: int = 32
    normalize: bool = True
    seed: Optional[int] = None
    synthetic: Optional[dict] = None
    data: Optional[str] = None
    train_frac: float = 0.5
    out: Optional[str] = None
    losses: tuple = ("tri", "trihard", "msml")
    seeds: tuple = ()
    jobs: int = 1

    @property
    def data_seed(self) -> int:
        if self.synthetic and "seed" in self.synthetic:
            return int(self.synthetic["seed"])
        return int(self.seed)

    def margins(self) -> MarginConfig:
        beta = 0.2 if self.beta is None else self.beta
        return MarginConfig(self.alpha, beta, normalize_inputs=self.normalize)

    def train_config(self, loss: Optional[str] = None) -> TrainConfig:
        return TrainConfig(
            loss=loss or self.loss,
            margins=self.margins(),
            w_cls=self.w_cls,
            p=self.p,
            k=self.k,
            epochs=self.epochs,
            schedule=LrSchedule(self.lr, tuple(self.lr_steps)),
            hidden=tuple(self.hidden),
            emb_dim=self.emb_dim,
            normalize=self.normalize,
        )

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["lr_steps"] = [list(s) for s in self.lr_steps]
        doc["hidden"] = list(self.hidden)
        doc["losses"] = list(self.losses)
        doc["seeds"] = list(self.seeds)
        doc.pop("out")
        doc.pop("jobs")
        return doc


# -- parsing helpers ---------------------------------------------------------

def parse_synthetic(text: str) -> dict:
    """``ids=32,per-id=8,dim=16[,scale=1,spread=0.1,seed=3]`` -> spec kwargs."""
    keys = {
        "ids": ("num_ids", int),
        "per-id": ("samples_per_id", int),
        "dim": ("input_dim", int),
        "scale": ("centroid_scale", float),
        "spread": ("within_spread", float),
        "seed": ("seed", int),
    }
    out = {}
    for part in filter(None, text.split(",")):
        name, sep, value = part.partition("=")
        if not sep or name.strip() not in keys:
            raise ConfigError(f"bad --synthetic item {part!r}; expected one of {', '.join(keys)} as key=value")
        attr, kind = keys[name.strip()]
        try:
            out[attr] = kind(value)
        except ValueError:
            raise ConfigError(f"--synthetic {name} expects a {kind.__name__}, got {value!r}") from None
    return out


def parse_lr_steps(text: str) -> tuple:
    """``50:1e-4,200:1e-5`` -> ((50, 1e-4), (200, 1e-5)); empty string -> ()."""
    steps = []
    for part in filter(None, text.split(",")):
        epoch, sep, lr = part.partition(":")
        try:
            steps.append((int(epoch), float(lr)))
        except ValueError:
            raise ConfigError(f"bad --lr-steps item {part!r}; expected EPOCH:LR") from None
        if not sep:
            raise ConfigError(f"bad --lr-steps item {part!r}; expected EPOCH:LR")
    return tuple(steps)


def _int_list(text: str, flag: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(",") if v)
    except ValueError:
        raise ConfigError(f"{flag} expects comma-separated integers, got {text!r}") from None


def _convert(key, value):
    """Coerce config-file / flag values to ``RunConfig`` field types."""
    if key == "synthetic" and isinstance(value, str):
        return parse_synthetic(value)
    if key == "lr_steps":
        return parse_lr_steps(value) if isinstance(value, str) else tuple(tuple(s) for s in value)
    if key in ("hidden", "seeds"):
        return _int_list(value, f"--{key}") if isinstance(value, str) else tuple(int(v) for v in value)
    if key == "losses":
        return tuple(v for v in value.split(",") if v) if isinstance(value, str) else tuple(value)
    return value


def build_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the optional JSON config file, then explicit flags."""
    fields = {f.name for f in dataclasses.fields(RunConfig)}
    values = {}
    if getattr(args, "config", None):
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc}") from exc
        for key, value in doc.items():
            key = key.replace("-", "_")
            if key not in fields:
                raise ConfigError(f"unknown config key {key!r} in {args.config}")
            values[key] = _convert(key, value)
    for key in fields:
        value = getattr(args, key, None)
        if value is not None:
            values[key] = _convert(key, value)
    if "out" not in values and os.environ.get(OUTPUT_ENV):
        values["out"] = os.environ[OUTPUT_ENV]
    cfg = RunConfig(**values)
    validate(cfg, args.command, explicit_beta="beta" in values)
    return cfg


def validate(cfg: RunConfig, command: str, explicit_beta: bool = False) -> None:
    if cfg.seed is None and command == "compare" and cfg.seeds:
        # the first training seed doubles as the run (and default data) seed
        cfg.seed = cfg.seeds[0]
    if cfg.seed is None:
        raise ConfigError("--seed is required so that every run is reproducible")
    kinds = cfg.losses if command == "compare" else (cfg.loss,)
    for kind in kinds:
        if kind not in LOSS_KINDS:
            raise ConfigError(f"unknown loss {kind!r}; choose from {', '.join(LOSS_KINDS)}")
    if explicit_beta and "quad" not in kinds:
        raise ConfigError("--beta only applies to --loss quad")
    if cfg.alpha < 0 or (cfg.beta is not None and cfg.beta < 0):
        raise ConfigError("margins must be non-negative")
    if cfg.k < 2:
        raise ConfigError("--k must be at least 2 so every anchor has a positive")
    if cfg.p < 2:
        raise ConfigError("--p must be at least 2 so negatives exist")
    if "quad" in kinds and cfg.p < 3:
        raise ConfigError("--loss quad needs --p >= 3 (quadruplets span three identities)")
    if cfg.epochs < 0 or cfg.w_cls < 0 or cfg.emb_dim < 1 or cfg.lr < 0:
        raise ConfigError("epochs, w_cls and lr must be >= 0 and emb_dim >= 1")
    if not 0 < cfg.train_frac < 1:
        raise ConfigError("--train-frac must lie strictly between 0 and 1")
    if cfg.synthetic is not None and cfg.data is not None:
        raise ConfigError("give either --synthetic or --data, not both")
    if cfg.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    try:
        LrSchedule(cfg.lr, tuple(cfg.lr_steps))
        if cfg.data is None:
            SyntheticSpec(**{**(cfg.synthetic or {}), "seed": cfg.data_seed})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if "quad" in kinds:
        beta = 0.2 if cfg.beta is None else cfg.beta
        if beta >= cfg.alpha:
            log.warning(
                "beta=%g is not smaller than alpha=%g; the quadruplet absolute-distance "
                "term is meant to be the weaker constraint", beta, cfg.alpha,
            )


def output_dir(cfg: RunConfig, default: str) -> Path:
    path = Path(cfg.out or default)
    path.mkdir(parents=True, exist_ok=True)
    return path


def load_data(cfg: RunConfig):
    if cfg.data is not None:
        return load_features(cfg.data)
    return gen_synthetic(SyntheticSpec(**{**(cfg.synthetic or {}), "seed": cfg.data_seed}))


def _fmt(v: float) -> str:
    return repr(float(v))


# -- commands ----------------------------------------------------------------

def cmd_train(cfg: RunConfig) -> int:
    out = output_dir(cfg, "runs/train")
    ds = load_data(cfg)
    parts = split(ds, cfg.train_frac, np.random.default_rng(cfg.data_seed))
    with warnings.catch_warnings():
        # validate() already reported the margin convention
        warnings.filterwarnings("ignore", message="quadruplet margin")
        model, history = train(parts.train, cfg.train_config(), np.random.default_rng(cfg.seed))

    meta = {"schema_version": SCHEMA_VERSION, "seed": cfg.seed, "loss": cfg.loss, "version": __version__}
    save_checkpoint(model, out / "checkpoint.json", {**meta, "config": cfg.to_dict()})
    save_features(parts.query, out / "query.csv")
    save_features(parts.gallery, out / "gallery.csv")
    with open(out / "history.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# schema_version={SCHEMA_VERSION} seed={cfg.seed} loss={cfg.loss}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_HEADER)
        for epoch, loss, dem, lr in history.epoch_rows():
            w.writerow([epoch, _fmt(loss), _fmt(dem), _fmt(lr)])
    with open(out / "batches.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# schema_version={SCHEMA_VERSION} seed={cfg.seed} loss={cfg.loss}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "batch", "lr", "loss", "metric_loss", "cls_loss", "max_pos", "min_neg", "demarcation"])
        for r in history.batches:
            w.writerow([r.epoch, r.batch, _fmt(r.lr), _fmt(r.loss), _fmt(r.metric_loss),
                        _fmt(r.cls_loss), _fmt(r.max_pos), _fmt(r.min_neg), _fmt(r.demarcation)])
    (out / "run.json").write_text(json.dumps({**meta, "config": cfg.to_dict()}, indent=2, sort_keys=True) + "\n")
    rows = history.epoch_rows()
    if rows:
        print(f"trained {cfg.loss} for {cfg.epochs} epochs: final mean loss {rows[-1][1]:.4f}, "
              f"mean demarcation {rows[-1][2]:.4f}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    model = load_checkpoint(args.checkpoint)
    query = load_features(args.query)
    gallery = load_features(args.gallery)
    protocol = Protocol(camera_exclusion=not args.no_camera_exclusion, max_rank=args.max_rank, bins=args.bins)
    report = evaluate_model(model, query, gallery, protocol)
    out = Path(args.out or os.environ.get(OUTPUT_ENV) or "runs/eval")
    out.mkdir(parents=True, exist_ok=True)
    ck_meta = {}
    try:
        ck_meta = json.loads(Path(args.checkpoint).read_text()).get("meta", {})
    except (OSError, json.JSONDecodeError):
        pass
    meta = {"checkpoint_seed": ck_meta.get("seed"), "protocol": dataclasses.asdict(protocol)}
    write_report(report, out / "report.json", meta)
    write_histogram_csv(report, out / "histogram.csv")
    print(f"rank_1={report.rank(1):.4f} rank_5={report.rank(5):.4f} rank_10={report.rank(10):.4f} "
          f"mAP={report.map:.4f} demarcation={report.demarcation:.4f}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    results = run_gradchecks(seed=args.seed, trials=args.trials, corrupt=args.corrupt)
    width = max(len(r.name) for r in results)
    print(f"{'check':<{width}}  max_rel_err  status")
    for r in results:
        print(f"{r.name:<{width}}  {r.max_rel_err:11.3e}  {'pass' if r.passed else 'FAIL'}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} check(s) failed: {', '.join(failed)}")
        return EXIT_CHECK_FAILED
    print(f"all {len(results)} checks passed (tolerance {results[0].tolerance:g})")
    return EXIT_OK


def _compare_one(job):
    cfg, loss, seed, parts = job
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="quadruplet margin")
        model, _ = train(parts.train, cfg.train_config(loss), np.random.default_rng(seed))
    rep = evaluate_model(model, parts.query, parts.gallery)
    return loss, seed, rep.map, rep.rank(1), rep.rank(5), rep.rank(10), rep.demarcation


def cmd_compare(cfg: RunConfig) -> int:
    out = output_dir(cfg, "runs/compare")
    ds = load_data(cfg)
    parts = split(ds, cfg.train_frac, np.random.default_rng(cfg.data_seed))
    seeds = cfg.seeds or (cfg.seed,)
    jobs = [(cfg, loss, seed, parts) for loss in cfg.losses for seed in seeds]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            runs = list(pool.map(_compare_one, jobs))
    else:
        runs = [_compare_one(j) for j in jobs]

    header = f"# schema_version={SCHEMA_VERSION} seed={cfg.seed} data_seed={cfg.data_seed} seeds={','.join(map(str, seeds))}\n"
    with open(out / "runs.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write(header)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["loss", "seed", "mAP", "rank_1", "rank_5", "rank_10", "demarcation"])
        for loss, seed, *vals in runs:
            w.writerow([loss, seed, *map(_fmt, vals)])
    with open(out / "summary.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write(header)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for loss in cfg.losses:
            vals = np.array([r[2:] for r in runs if r[0] == loss])
            med = np.median(vals, axis=0)
            w.writerow([loss, *map(_fmt, med), len(vals)])
            print(f"{loss:<11} mAP={med[0]:.4f} rank_1={med[1]:.4f} rank_5={med[2]:.4f} demarcation={med[4]:.4f}")
    print(f"wrote {out}")
    return EXIT_OK


# -- argument parser -----------------------------------------------------------

def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with RunConfig keys; flags override it")
    p.add_argument("--loss", choices=LOSS_KINDS)
    p.add_argument("--alpha", type=float, help="margin (default 0.3)")
    p.add_argument("--beta", type=float, help="quadruplet absolute-distance margin (default 0.2)")
    p.add_argument("--w-cls", dest="w_cls", type=float, help="classification loss weight (default 1.0)")
    p.add_argument("--p", type=int, help="identities per batch (default 8)")
    p.add_argument("--k", type=int, help="samples per identity (default 4)")
    p.add_argument("--epochs", type=int, help="epoch budget (default 200)")
    p.add_argument("--lr", type=float, help="initial learning rate (default 1e-3)")
    p.add_argument("--lr-steps", dest="lr_steps", help="EPOCH:LR,... (default 50:1e-4,200:1e-5)")
    p.add_argument("--hidden", help="hidden widths, e.g. 64,64")
    p.add_argument("--emb-dim", dest="emb_dim", type=int, help="embedding dimension (default 32)")
    p.add_argument("--normalize", dest="normalize", action="store_true", default=None)
    p.add_argument("--no-normalize", dest="normalize", action="store_false")
    p.add_argument("--seed", type=int, help="random seed (required)")
    p.add_argument("--synthetic", help="ids=32,per-id=8,dim=16[,scale=1,spread=0.1,seed=S]")
    p.add_argument("--data", help="feature file (id,camera,f0,...)")
    p.add_argument("--train-frac", dest="train_frac", type=float, help="fraction of identities used for training")
    p.add_argument("--out", help=f"output directory (or set {OUTPUT_ENV})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msml", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an embedding model")
    _add_run_options(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on query/gallery feature files")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--gallery", required=True)
    p.add_argument("--no-camera-exclusion", action="store_true")
    p.add_argument("--max-rank", type=int, default=50)
    p.add_argument("--bins", type=int, default=50)
    p.add_argument("--out")

    p = sub.add_parser("gradcheck", help="finite-difference check of every gradient")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=3)
    p.add_argument("--corrupt", help=argparse.SUPPRESS)

    p = sub.add_parser("compare", help="train several losses on the same data and tabulate")
    _add_run_options(p)
    p.add_argument("--losses", help="comma-separated loss kinds (default tri,trihard,msml)")
    p.add_argument("--seeds", help="comma-separated training seeds; medians are reported")
    p.add_argument("--jobs", type=int, help="parallel worker processes")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    warnings.formatwarning = lambda msg, *_a, **_k: f"warning: {msg}\n"
    try:
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "gradcheck":
            return cmd_gradcheck(args)
        cfg = build_config(args)
        return cmd_train(cfg) if args.command == "train" else cmd_compare(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (MsmlError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
