"""Command-line interface: synth, train, ablate, eval, predict, gradcheck, inspect.

Every command is deterministic given its flags and input files. Outputs embed
the effective configuration and a format version. Exit codes: 0 success,
1 verification failure, 2 config/usage error, 3 I/O error. Set F2IND_LOG to a
logging level name (DEBUG, INFO, ...) for diagnostics on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .anfis import rule_report, rule_report_tsv
from .data_model import generate_synthetic, read_embeddings, write_embeddings
from .errors import (
    ConfigError,
    CorruptError,
    F2IndError,
    FormatError,
    IoError,
    TruncatedError,
)
from .fusion import fusion_forward
from .losses import LossConfig
from .metrics import MetricsReport
from .trainer import (
    CVReport,
    TrainConfig,
    cross_validate,
    evaluate,
    gradcheck,
    load_checkpoint,
    model_forward,
    save_checkpoint,
)

FORMAT_VERSION = 1
log = logging.getLogger("f2ind")

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_CONFIG = 2
EXIT_IO = 3


# ---------------------------------------------------------------------------
# Config file handling
# ---------------------------------------------------------------------------

_LOSS_KEYS = {f.name for f in dataclasses.fields(LossConfig)}
_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}
_PATH_KEYS = {"data", "out"}


def load_config_file(path) -> dict:
    """Parse a JSON config mirroring TrainConfig (+ data/out paths); unknown
    keys are rejected so typos cannot silently fall back to defaults."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    unknown = set(raw) - _TRAIN_KEYS - _PATH_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "loss" in raw:
        if not isinstance(raw["loss"], dict):
            raise ConfigError("config key 'loss' must be an object")
        bad = set(raw["loss"]) - _LOSS_KEYS
        if bad:
            raise ConfigError(f"unknown loss config keys: {sorted(bad)}")
    if "lr_scales" in raw and not isinstance(raw["lr_scales"], dict):
        raise ConfigError("config key 'lr_scales' must be an object")
    return raw


def build_train_config(args) -> TrainConfig:
    """Defaults <- config file <- explicit flags, in increasing precedence."""
    file_cfg = load_config_file(args.config) if args.config else {}
    cfg = TrainConfig()
    for key, value in file_cfg.items():
        if key in _PATH_KEYS:
            continue
        if key == "loss":
            cfg.loss = LossConfig(**value)
        elif key == "lr_scales":
            cfg.lr_scales = dict(cfg.lr_scales, **value)
        else:
            setattr(cfg, key, value)

    overrides = {
        "seed": args.seed,
        "k_folds": args.folds,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "n_anfis_inputs": args.n_anfis_inputs,
        "mf_per_input": args.mf_per_input,
        "hidden_a": args.hidden_a,
        "dropout_rate": args.dropout_rate,
        "base_max_lr": args.max_lr,
        "parallel_folds": args.parallel_folds,
        "threshold": args.threshold,
    }
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    if args.no_anfis:
        cfg.use_anfis = False
    if args.pool_folds:
        cfg.pool_folds = True
    if args.loss_weights is not None:
        parts = args.loss_weights.split(",")
        if len(parts) != 3:
            raise ConfigError("--loss-weights expects three comma-separated numbers: bce,huber,focal")
        try:
            w = [float(p) for p in parts]
        except ValueError as exc:
            raise ConfigError(f"--loss-weights: {exc}") from exc
        cfg.loss = dataclasses.replace(cfg.loss, w_bce=w[0], w_huber=w[1], w_focal=w[2])
    cfg.validate()
    return cfg


def _paths_from(args) -> tuple[str | None, str | None]:
    file_cfg = load_config_file(args.config) if args.config else {}
    data = args.data if getattr(args, "data", None) else file_cfg.get("data")
    out = args.out if getattr(args, "out", None) else file_cfg.get("out")
    return data, out


# ---------------------------------------------------------------------------
# Report serialization
# ---------------------------------------------------------------------------


def cv_report_payload(report: CVReport, variant: str, checkpoints: list[str]) -> dict:
    folds = []
    for fold, ckpt in zip(report.folds, checkpoints):
        folds.append(
            {
                "fold_index": fold.fold_index,
                "metrics": fold.metrics.to_dict(),
                "degenerate": list(fold.metrics.degenerate),
                "loss_trajectory": fold.loss_trajectory,
                "best_epoch": fold.best_epoch,
                "used_final_epoch": fold.used_final_epoch,
                "wall_seconds": fold.wall_seconds,
                "total_steps": fold.total_steps,
                "val_indices": [int(i) for i in fold.val_indices],
                "checkpoint": ckpt,
            }
        )
    return {
        "format_version": FORMAT_VERSION,
        "tool_version": __version__,
        "variant": variant,
        "config": report.config,
        "param_count": report.param_count,
        "folds": folds,
        "aggregate": {"mean": report.mean, "std": report.std},
        "pooled": report.pooled.to_dict() if report.pooled else None,
    }


def cv_report_table(report: CVReport, variant: str) -> str:
    keys = MetricsReport.METRIC_KEYS
    lines = [f"variant: {variant}    trainable parameters: {report.param_count}"]
    header = "fold  " + "  ".join(f"{k:>9}" for k in keys)
    lines.append(header)
    for fold in report.folds:
        row = f"{fold.fold_index:>4}  " + "  ".join(f"{getattr(fold.metrics, k):9.4f}" for k in keys)
        lines.append(row)
    lines.append("mean  " + "  ".join(f"{report.mean[k]:9.4f}" for k in keys))
    lines.append(" std  " + "  ".join(f"{report.std[k]:9.4f}" for k in keys))
    return "\n".join(lines) + "\n"


def write_cv_outputs(report: CVReport, out_dir: Path, variant: str) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoints = []
    for fold in report.folds:
        ckpt = out_dir / f"fold_{fold.fold_index}.f2ckpt"
        save_checkpoint(fold.model, ckpt)
        checkpoints.append(str(ckpt))
    payload = cv_report_payload(report, variant, checkpoints)
    (out_dir / "cv_report.json").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    (out_dir / "cv_report.txt").write_text(cv_report_table(report, variant), encoding="utf-8")
    return payload


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    if not 0.0 < args.fake_fraction < 1.0:
        raise ConfigError(f"--fake-fraction must lie in (0,1), got {args.fake_fraction}")
    if not 0.0 <= args.missing_image_fraction <= 1.0:
        raise ConfigError(f"--missing-image-fraction must lie in [0,1], got {args.missing_image_fraction}")
    if args.separation < 0.0:
        raise ConfigError(f"--separation must be >= 0, got {args.separation}")
    ds = generate_synthetic(
        args.n,
        args.fake_fraction,
        args.missing_image_fraction,
        args.separation,
        seed=args.seed if args.seed is not None else 0,
        text_dim=args.text_dim,
        image_dim=args.image_dim,
    )
    write_embeddings(ds, args.out)
    n_fake = int(ds.labels().sum())
    n_missing = sum(1 for s in ds.samples if not s.has_image)
    log.info("synth: %d samples (%d fake, %d without image) -> %s", len(ds), n_fake, n_missing, args.out)
    print(f"wrote {args.out}: {len(ds)} samples, {n_fake} fake, {n_missing} without image")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = build_train_config(args)
    data, out = _paths_from(args)
    if not data or not out:
        raise ConfigError("train needs --data and --out (flags or config file)")
    dataset = read_embeddings(data)
    t0 = time.perf_counter()
    report = cross_validate(dataset, cfg)
    variant = "with_anfis" if cfg.use_anfis else "without_anfis"
    write_cv_outputs(report, Path(out), variant)
    print(cv_report_table(report, variant), end="")
    print(f"total wall time: {time.perf_counter() - t0:.1f}s; report in {out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = build_train_config(args)
    data, out = _paths_from(args)
    if not data or not out:
        raise ConfigError("ablate needs --data and --out (flags or config file)")
    dataset = read_embeddings(data)
    out_dir = Path(out)
    with_report = cross_validate(dataset, dataclasses.replace(cfg, use_anfis=True))
    with_payload = write_cv_outputs(with_report, out_dir / "with_anfis", "with_anfis")
    without_report = cross_validate(dataset, dataclasses.replace(cfg, use_anfis=False))
    without_payload = write_cv_outputs(without_report, out_dir / "without_anfis", "without_anfis")
    paired = {
        "format_version": FORMAT_VERSION,
        "tool_version": __version__,
        "config": cfg.echo(),
        "with_anfis": {
            "aggregate": with_payload["aggregate"],
            "param_count": with_payload["param_count"],
            "report": str(out_dir / "with_anfis" / "cv_report.json"),
        },
        "without_anfis": {
            "aggregate": without_payload["aggregate"],
            "param_count": without_payload["param_count"],
            "report": str(out_dir / "without_anfis" / "cv_report.json"),
        },
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "ablation_report.json").write_text(json.dumps(paired, indent=2) + "\n", encoding="utf-8")
    print(cv_report_table(with_report, "with_anfis"), end="")
    print(cv_report_table(without_report, "without_anfis"), end="")
    print(f"paired report in {out_dir / 'ablation_report.json'}")
    return EXIT_OK


def _parse_indices(spec: str | None, n: int) -> np.ndarray:
    if spec is None:
        return np.arange(n, dtype=np.int64)
    if spec.startswith("@"):
        try:
            with open(spec[1:], "r", encoding="utf-8") as fh:
                values = json.load(fh)
        except OSError as exc:
            raise IoError(f"cannot read indices file {spec[1:]}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"indices file {spec[1:]} is not a JSON list: {exc}") from exc
    else:
        try:
            values = [int(p) for p in spec.split(",") if p]
        except ValueError as exc:
            raise ConfigError(f"--indices: {exc}") from exc
    idx = np.asarray(values, dtype=np.int64)
    if idx.size == 0 or idx.min() < 0 or idx.max() >= n:
        raise ConfigError(f"--indices out of range for {n} samples")
    return idx


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    dataset = read_embeddings(args.data)
    indices = _parse_indices(args.indices, len(dataset))
    threshold = args.threshold if args.threshold is not None else 0.5
    report, _, _ = evaluate(model, dataset, indices, batch_size=args.batch_size or 64, threshold=threshold)
    payload = {
        "format_version": FORMAT_VERSION,
        "tool_version": __version__,
        "config": {
            "checkpoint": str(args.checkpoint),
            "data": str(args.data),
            "threshold": threshold,
            "n_evaluated": int(indices.size),
        },
        "metrics": report.to_dict(),
        "degenerate": list(report.degenerate),
    }
    print(report.to_kv_text(), end="")
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
        log.info("eval report -> %s", args.out)
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_checkpoint(args.checkpoint)
    dataset = read_embeddings(args.data)
    indices = _parse_indices(args.indices, len(dataset))
    lines = [
        f"# f2ind predict format_version={FORMAT_VERSION} checkpoint={args.checkpoint} data={args.data}",
        "sample_id\tprob\tattn_image\tattn_text",
    ]
    batch = args.batch_size or 64
    for start in range(0, indices.size, batch):
        chunk = indices[start : start + batch]
        text, image, mask, _ = dataset.gather(chunk)
        prob, attn, _ = model_forward(model, text, image, mask, train_mode=False)
        for row, i in enumerate(chunk):
            sid = dataset.samples[i].sample_id
            lines.append(
                f"{sid}\t{float(prob[row])!r}\t{float(attn[row, 0])!r}\t{float(attn[row, 1])!r}"
            )
    text_out = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text_out, encoding="utf-8")
        log.info("predictions -> %s", args.out)
    else:
        print(text_out, end="")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = build_train_config(args)
    seeds = range(args.seed or 0, (args.seed or 0) + args.seeds)
    worst = 0.0
    failed = False
    for seed in seeds:
        report = gradcheck(
            cfg,
            seed,
            text_dim=args.text_dim,
            image_dim=args.image_dim,
            coords_per_block=args.coords_per_block,
            inject_fault=args.inject_fault,
        )
        status = "pass" if report.passed else "FAIL"
        print(
            f"seed {seed}: {status}  max_rel_error={report.max_rel_error:.3e} "
            f"worst_block={report.worst_block} tolerance={report.tolerance:g}"
        )
        worst = max(worst, report.max_rel_error)
        failed = failed or not report.passed
    print(f"overall: {'FAIL' if failed else 'pass'} (worst {worst:.3e} over {args.seeds} seeds)")
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_inspect(args) -> int:
    model = load_checkpoint(args.checkpoint)
    if not model.use_anfis:
        raise ConfigError("checkpoint holds the ablation head; no rules to inspect")
    dataset = read_embeddings(args.data)
    indices = _parse_indices(args.indices, len(dataset))
    text, image, mask, _ = dataset.gather(indices)
    head_in, _, _ = fusion_forward(model.fusion, text, image, mask, train_mode=False)
    rows = rule_report(model.anfis, head_in)
    tsv = f"# f2ind inspect format_version={FORMAT_VERSION} checkpoint={args.checkpoint} data={args.data}\n"
    tsv += rule_report_tsv(rows)
    if args.out:
        Path(args.out).write_text(tsv, encoding="utf-8")
        log.info("rule report -> %s", args.out)
    else:
        print(tsv, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config mirroring the training configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--n-anfis-inputs", type=int, dest="n_anfis_inputs")
    p.add_argument("--mf-per-input", type=int, dest="mf_per_input")
    p.add_argument("--hidden-a", type=int, dest="hidden_a")
    p.add_argument("--dropout-rate", type=float, dest="dropout_rate")
    p.add_argument("--no-anfis", action="store_true", dest="no_anfis")
    p.add_argument("--loss-weights", dest="loss_weights", metavar="BCE,HUBER,FOCAL")
    p.add_argument("--max-lr", type=float, dest="max_lr")
    p.add_argument("--parallel-folds", type=int, dest="parallel_folds")
    p.add_argument("--pool-folds", action="store_true", dest="pool_folds")
    p.add_argument("--threshold", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="f2ind", description=__doc__)
    parser.add_argument("--version", action="version", version=f"f2ind {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic embedding file")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--fake-fraction", type=float, default=0.05, dest="fake_fraction")
    p.add_argument("--missing-image-fraction", type=float, default=0.1, dest="missing_image_fraction")
    p.add_argument("--separation", type=float, default=6.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--text-dim", type=int, default=768, dest="text_dim")
    p.add_argument("--image-dim", type=int, default=2048, dest="image_dim")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="stratified k-fold training run")
    _add_train_flags(p)
    p.add_argument("--data")
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="paired runs with and without the fuzzy head")
    _add_train_flags(p)
    p.add_argument("--data")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("eval", help="metrics of a checkpoint on an embedding file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--indices", help="comma-separated list or @file.json")
    p.add_argument("--threshold", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="per-sample probabilities and attention weights")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--indices", help="comma-separated list or @file.json")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference check of the composed gradients")
    _add_train_flags(p)
    p.add_argument("--seeds", type=int, default=3, help="number of consecutive seeds to check")
    p.add_argument("--text-dim", type=int, default=768, dest="text_dim")
    p.add_argument("--image-dim", type=int, default=2048, dest="image_dim")
    p.add_argument("--coords-per-block", type=int, default=24, dest="coords_per_block")
    p.add_argument("--inject-fault", dest="inject_fault", help="gradient block name to corrupt (testing)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("inspect", help="rule-level firing and contribution table")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--indices", help="comma-separated list or @file.json")
    p.add_argument("--out")
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("F2IND_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IoError, FormatError, TruncatedError, CorruptError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except F2IndError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERIFY


def entry() -> None:
    sys.exit(main())
