"""Command-line front end: ``train``, ``eval``, ``bench`` and ``augment-preview``.

Every command takes an optional ``--config`` file of ``key = value`` lines
(``#`` starts a comment). Keys are the long flag names with underscores;
flags given on the command line override the file. Exit codes: 0 success,
1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from PIL import Image
from threadpoolctl import threadpool_limits

from . import dataio, evaluation
from .augment import augment_pipeline
from .nn_core import make_rng
from .pipeline import SystemConfig, train_system

log = logging.getLogger("vprmerger")

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG = 0, 1, 2
MODEL_NAME = "model.bmvr"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # system
    neurons: int = 192
    baseline_dropout: float = 0.75
    baseline_epochs: int = 30
    baseline_lr: float = 1e-3
    q: int = 2
    width: int = 4
    merger_dropout: float = 0.30
    merger_epochs: int = 100
    merger_lr: float = 1e-3
    copies_per_frame: int = 5
    clean_copies: int = 1
    seed: int = 0
    # data and outputs
    ref: str | None = None
    query: str | None = None
    dataset: str | None = None
    model: str | None = None
    out: str = "."
    # evaluation and benchmarking
    profile: str | None = None
    tolerance: int | None = None
    iters: int = 1000
    warmup: int = 100
    count: int = 8
    include_latent: bool = False
    threads: int | None = None

    def system_config(self) -> SystemConfig:
        return SystemConfig(
            neurons=self.neurons, baseline_dropout=self.baseline_dropout,
            baseline_epochs=self.baseline_epochs, baseline_lr=self.baseline_lr, q=self.q,
            width=self.width, merger_dropout=self.merger_dropout, merger_epochs=self.merger_epochs,
            merger_lr=self.merger_lr, copies_per_frame=self.copies_per_frame,
            clean_copies=self.clean_copies, base_seed=self.seed,
        )

    def resolved_tolerance(self) -> int:
        if self.tolerance is not None:
            return self.tolerance
        if self.profile is not None:
            return evaluation.TOLERANCE_PROFILES[self.profile]
        return 0

    def require(self, *keys: str) -> None:
        for key in keys:
            if getattr(self, key) in (None, ""):
                raise ConfigError(f"missing required key '{key}' (flag --{key.replace('_', '-')})")


_FIELD_TYPES = {
    "neurons": int, "baseline_dropout": float, "baseline_epochs": int, "baseline_lr": float,
    "q": int, "width": int, "merger_dropout": float, "merger_epochs": int, "merger_lr": float,
    "copies_per_frame": int, "clean_copies": int, "seed": int, "ref": str, "query": str, "dataset": str, "model": str,
    "out": str, "profile": str, "tolerance": int, "iters": int, "warmup": int, "count": int,
    "include_latent": bool, "threads": int,
}


def _convert(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    if kind is bool:
        lowered = raw.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"key '{key}': expected a boolean, got {raw!r}")
    try:
        return kind(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"key '{key}': cannot parse {raw!r} as {kind.__name__}") from exc


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, _, raw = line.partition("=")
        key = key.strip().replace("-", "_")
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown key '{key}'")
        values[key] = _convert(key, raw)
    return values


def build_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        values.update(parse_config_text(path.read_text(), str(path)))
    for f in fields(RunConfig):
        flag_value = getattr(args, f.name, None)
        if flag_value is not None:
            values[f.name] = flag_value
    cfg = RunConfig(**values)
    if cfg.profile is not None and cfg.profile not in evaluation.TOLERANCE_PROFILES:
        raise ConfigError(
            f"key 'profile': unknown profile {cfg.profile!r}, choose from {sorted(evaluation.TOLERANCE_PROFILES)}"
        )
    try:
        cfg.system_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


# commands


def cmd_train(cfg: RunConfig) -> int:
    cfg.require("ref")
    out = Path(cfg.out)
    traversal = dataio.load_traversal(cfg.ref)
    log.info("loaded %d frames from %s", len(traversal), cfg.ref)
    system, report = train_system(traversal.frames, cfg.system_config(), keep_latent=cfg.include_latent)
    model_path = Path(cfg.model) if cfg.model else out / MODEL_NAME
    size = dataio.save_system(system, model_path, include_latent=cfg.include_latent)
    kv = report.to_kv()
    kv["model_bytes"] = str(size)
    evaluation.write_kv(out / "report.kv", kv)
    table = report.to_table()
    (out / "report.txt").write_text(table + "\n")
    print(table)
    print(f"model written to {model_path} ({size} bytes)")
    return EXIT_OK


def cmd_eval(cfg: RunConfig) -> int:
    cfg.require("model", "ref", "query")
    out = Path(cfg.out)
    system = dataio.load_system(cfg.model)
    ref = dataio.load_traversal(cfg.ref)
    query = dataio.load_traversal(cfg.query)
    tolerance = cfg.resolved_tolerance()
    curve, acc, _ = evaluation.evaluate(system, ref.frames, query.frames, tolerance)
    out.mkdir(parents=True, exist_ok=True)
    (out / "pr.csv").write_text(curve.to_csv())
    summary = {
        "auc": repr(curve.auc),
        "accuracy": repr(acc),
        "tolerance": str(tolerance),
        "n_queries": str(len(query)),
        "degenerate": str(curve.degenerate).lower(),
    }
    evaluation.write_kv(out / "summary.kv", summary)
    print(f"auc {curve.auc:.4f}  accuracy {acc:.4f}  tolerance {tolerance}")
    return EXIT_OK


def cmd_bench(cfg: RunConfig) -> int:
    cfg.require("model", "dataset")
    out = Path(cfg.out)
    system = dataio.load_system(cfg.model)
    images = dataio.load_traversal(cfg.dataset).frames
    report = evaluation.bench_inference(system, images, cfg.warmup, cfg.iters, model_path=cfg.model)
    evaluation.write_kv(out / "bench.kv", report.to_kv())
    (out / "bench.txt").write_text(report.to_text() + "\n")
    print(report.to_text())
    return EXIT_OK


def _to_png(img: np.ndarray, scale: int = 4) -> Image.Image:
    levels = np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    pil = Image.fromarray(levels, mode="L")
    return pil.resize((pil.width * scale, pil.height * scale), Image.NEAREST)


def cmd_augment_preview(cfg: RunConfig) -> int:
    cfg.require("dataset")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    traversal = dataio.load_traversal(cfg.dataset)
    rng = make_rng(cfg.seed)
    picks = rng.choice(len(traversal), size=min(cfg.count, len(traversal)), replace=False)
    for idx in sorted(picks):
        before = traversal.frames[idx]
        after = augment_pipeline(before, rng)
        pair = np.concatenate([before, np.full((before.shape[0], 2), 1.0), after], axis=1)
        _to_png(pair).save(out / f"preview_{idx:06d}.png")
    print(f"wrote {len(picks)} before/after pairs to {out}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "augment-preview": cmd_augment_preview,
}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--seed", type=int, help="seed for all randomness")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, help="cap on BLAS worker threads")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vprmerger", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train baselines and merger on one traversal")
    _add_common(train)
    train.add_argument("--ref", help="reference traversal directory")
    train.add_argument("--model", help=f"model file to write (default OUT/{MODEL_NAME})")
    for name, kind in [("neurons", int), ("baseline_dropout", float), ("baseline_epochs", int),
                       ("baseline_lr", float), ("q", int), ("width", int), ("merger_dropout", float),
                       ("merger_epochs", int), ("merger_lr", float), ("copies_per_frame", int),
                       ("clean_copies", int)]:
        train.add_argument(f"--{name.replace('_', '-')}", dest=name, type=kind)
    train.add_argument("--include-latent", dest="include_latent", action="store_const", const=True,
                       help="also store latent weights so training can resume")

    ev = sub.add_parser("eval", help="precision-recall evaluation of a query traversal")
    _add_common(ev)
    ev.add_argument("--model")
    ev.add_argument("--ref", help="reference traversal directory")
    ev.add_argument("--query", help="query traversal directory, aligned frame-by-frame")
    ev.add_argument("--tolerance", type=int, help="frames of ground-truth slack")
    ev.add_argument("--profile", help="dataset profile setting the default tolerance: "
                    + ", ".join(f"{k}={v}" for k, v in evaluation.TOLERANCE_PROFILES.items()))

    bench = sub.add_parser("bench", help="single-query latency and model size")
    _add_common(bench)
    bench.add_argument("--model")
    bench.add_argument("--dataset", help="directory of query images")
    bench.add_argument("--iters", type=int)
    bench.add_argument("--warmup", type=int)

    prev = sub.add_parser("augment-preview", help="write before/after augmentation pairs")
    _add_common(prev)
    prev.add_argument("--dataset", help="directory of images")
    prev.add_argument("--count", type=int)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with threadpool_limits(limits=cfg.threads):
            return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
