"""Command-line toolchain: synth, ingest, bag, train, eval, localize.

Every command is fully determined by (config file, flags); flags override the
config. Exit codes: 0 success, 2 bad configuration or usage, 3 missing or
unreadable artifact, 4 numeric failure (non-finite loss, degenerate metric).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import torch

from . import bagging, evaluation, ingest, synthgen, training
from .config import RunConfig, dump_config, load_config, override
from .errors import (
    CacheError,
    ConfigError,
    DegenerateVector,
    EmptyInput,
    InvalidDimension,
    InvalidSpec,
    InvalidWindow,
    MissingArtifact,
    NonFiniteLoss,
    NoPositiveBags,
    SingleClass,
    TooFewBags,
)
from .model import LogMilpModel, load_checkpoint, save_checkpoint

_CONFIG_ERRORS = (ConfigError, InvalidSpec, InvalidDimension, InvalidWindow, TooFewBags, EmptyInput)
_ARTIFACT_ERRORS = (MissingArtifact, CacheError)
_NUMERIC_ERRORS = (NonFiniteLoss, DegenerateVector, SingleClass, NoPositiveBags)


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    updates: dict[str, str] = {}
    for pair in getattr(args, "set", None) or []:
        key, sep, value = pair.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {pair!r}")
        updates[key.strip()] = value.strip()
    if getattr(args, "seed", None) is not None:
        updates["seed"] = str(args.seed)
    if getattr(args, "input", None):
        updates["input"] = args.input
    if getattr(args, "no_consistency", False):
        updates["use_consistency"] = "false"
    return override(cfg, updates) if updates else cfg


def _build_bags(cfg: RunConfig) -> tuple[bagging.BagDataset, ingest.IngestResult]:
    if not cfg.input:
        raise ConfigError("no input corpus: set `input` in the config or pass --input")
    result = ingest.ingest_file(cfg.input, fmt=cfg.fmt, d=cfg.d, seed=cfg.seed)
    if result.embeddings.shape[0] == 0:
        raise EmptyInput(f"no usable lines in {cfg.input}")
    line_nos = np.asarray([r.line_no for r in result.records], dtype=np.int64)
    if cfg.bag_mode == "sliding":
        ds = bagging.sliding_bags(result.embeddings, result.labels, cfg.W, cfg.s, line_nos)
    else:
        ds = bagging.block_bags(
            result.embeddings, result.labels, cfg.block, cfg.per_bag, line_nos
        )
    return ds, result


def _splits(cfg: RunConfig, ds: bagging.BagDataset):
    return bagging.split_dataset(ds, cfg.ratios(), seed=cfg.seed, shuffled=cfg.shuffled)


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    spec = synthgen.SynthSpec(
        seed=cfg.seed,
        n_lines=args.lines,
        vocab_normal=args.vocab_normal,
        vocab_anom=args.vocab_anom,
        anomaly_rate=args.anomaly_rate,
        distractor_rate=args.distractor_rate,
    )
    labels = synthgen.generate(spec, args.out)
    print(f"wrote {len(labels)} lines ({sum(labels)} anomalous) to {args.out}")
    return 0


def cmd_ingest(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    if not cfg.input:
        raise ConfigError("no input corpus: set `input` in the config or pass --input")
    result = ingest.ingest_file(cfg.input, fmt=cfg.fmt, d=cfg.d, seed=cfg.seed)
    ingest.write_embedding_cache(args.out, result.embeddings, result.labels)
    print(
        f"ingested {len(result.records)} lines ({result.skipped} skipped), "
        f"{len(result.table)} templates -> {args.out}.{{meta,f32,labels}}"
    )
    return 0


def cmd_bag(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    torch.set_num_threads(cfg.threads)
    ds, _ = _build_bags(cfg)
    bagging.write_bag_cache(args.out, ds)
    n_pos = int(ds.labels().sum())
    print(f"wrote {len(ds)} bags (W={ds.W}, {n_pos} positive) to {args.out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    torch.set_num_threads(cfg.threads)
    out = args.out or cfg.checkpoint
    if not out:
        raise ConfigError("no checkpoint path: set `checkpoint` in the config or pass --out")
    ds, _ = _build_bags(cfg)
    train_set, val_set, _ = _splits(cfg, ds)
    model = LogMilpModel(cfg.model_config())
    result = training.fit(model, train_set, val_set, cfg.train_config())
    save_checkpoint(out, model)
    log_path = Path(str(out) + ".log")
    log_path.write_text(
        "".join(line + "\n" for line in result.log_lines()), encoding="ascii"
    )
    Path(str(out) + ".cfg").write_text(dump_config(cfg), encoding="ascii")
    if cfg.figures and result.history:
        from .report import save_training_curves

        save_training_curves(result.history, result.val_f1, str(out) + ".png")
    best = f"{result.best_val_f1:.6f}" if result.history else "n/a"
    print(
        f"trained {len(result.history)} epochs; best val F1 {best} "
        f"(epoch {result.best_epoch}); checkpoint -> {out}"
    )
    return 0


def _load_eval_inputs(args: argparse.Namespace):
    cfg = _resolve_config(args)
    torch.set_num_threads(cfg.threads)
    ckpt = args.checkpoint or cfg.checkpoint
    if not ckpt:
        raise ConfigError("no checkpoint path: set `checkpoint` in the config or pass --checkpoint")
    model = load_checkpoint(ckpt)
    ds, _ = _build_bags(cfg)
    _, val_set, test_set = _splits(cfg, ds)
    return cfg, model, val_set, test_set


def cmd_eval(args: argparse.Namespace) -> int:
    cfg, model, val_set, test_set = _load_eval_inputs(args)
    report, results = evaluation.evaluate(
        model, val_set, test_set, k=cfg.k, delta_sr=cfg.delta_sr,
        dataset_id=cfg.dataset_id, seed=cfg.seed,
    )
    out = args.out or cfg.metrics
    print(evaluation.METRICS_HEADER)
    print(report.csv_row())
    if out:
        evaluation.write_metrics_row(out, report)
        Path(str(out) + ".cfg").write_text(dump_config(cfg), encoding="ascii")
        if cfg.figures:
            from .report import save_score_histogram

            scores = training.score_dataset(model, test_set)
            save_score_histogram(scores, test_set.labels(), report.tau, str(out) + ".png")
    return 0


def cmd_localize(args: argparse.Namespace) -> int:
    cfg, model, _, test_set = _load_eval_inputs(args)
    results = evaluation.localize(model, test_set, cfg.k)
    from .report import LOCALIZE_HEADER, localization_rows, write_localization_tsv

    print(LOCALIZE_HEADER)
    for row in localization_rows(results):
        print(row)
    if args.out:
        write_localization_tsv(results, args.out)
        Path(str(args.out) + ".cfg").write_text(dump_config(cfg), encoding="ascii")
        if cfg.figures and results:
            from .report import save_drop_bars

            save_drop_bars(results, str(args.out) + ".png")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="logmilp",
        description="Weakly supervised multi-instance log anomaly detection and localization",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int, help="override the run seed")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override any config key (repeatable)")

    p = sub.add_parser("synth", help="generate a labeled synthetic corpus")
    common(p)
    p.add_argument("--lines", type=int, default=10000)
    p.add_argument("--out", required=True, help="corpus path (labels sidecar: <out>.labels)")
    p.add_argument("--anomaly-rate", type=float, default=0.02)
    p.add_argument("--vocab-normal", type=int, default=50)
    p.add_argument("--vocab-anom", type=int, default=5)
    p.add_argument("--distractor-rate", type=float, default=0.5)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="parse + embed a corpus into an embedding cache")
    common(p)
    p.add_argument("--input", help="labeled log file")
    p.add_argument("--out", required=True, help="cache base path (writes .meta/.f32/.labels)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("bag", help="assemble bags and write a bag cache")
    common(p)
    p.add_argument("--input", help="labeled log file")
    p.add_argument("--out", required=True, help="bag cache path")
    p.set_defaults(func=cmd_bag)

    p = sub.add_parser("train", help="train on a corpus (ingest -> bag -> split -> fit)")
    common(p)
    p.add_argument("--input", help="labeled log file")
    p.add_argument("--out", help="checkpoint path (also writes <out>.log/.cfg/.png)")
    p.add_argument("--no-consistency", action="store_true",
                   help="disable the perturbation consistency loss")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint (appends one metrics CSV row)")
    common(p)
    p.add_argument("--input", help="labeled log file")
    p.add_argument("--checkpoint", help="trained checkpoint path")
    p.add_argument("--out", help="metrics CSV path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("localize", help="report key instances for positive test bags")
    common(p)
    p.add_argument("--input", help="labeled log file")
    p.add_argument("--checkpoint", help="trained checkpoint path")
    p.add_argument("--out", help="TSV report path")
    p.set_defaults(func=cmd_localize)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except _ARTIFACT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except _NUMERIC_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


def entry() -> None:
    raise SystemExit(main(sys.argv[1:]))
