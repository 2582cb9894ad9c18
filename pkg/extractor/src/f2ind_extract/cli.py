"""CLI: `f2ind-extract --manifest rows.csv --out data.f2e --batch-size 16`."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .manifest import ManifestError, read_manifest
from .pipeline import build_dataset


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="f2ind-extract", description=__doc__)
    parser.add_argument("--manifest", required=True, help="CSV with columns id,text,image_path,label")
    parser.add_argument("--out", required=True, help="output embedding file (F2EMB1)")
    parser.add_argument("--batch-size", type=int, default=16, dest="batch_size")
    parser.add_argument(
        "--weights",
        choices=("pretrained", "random"),
        default="pretrained",
        help="'pretrained' needs model-hub access or a local cache; 'random' builds the same "
        "architectures with seeded random weights (offline, deterministic)",
    )
    parser.add_argument("--weights-seed", type=int, default=0, dest="weights_seed")
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
        rows = read_manifest(args.manifest)
    except FileNotFoundError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except ManifestError as exc:
        print(f"manifest error: {exc}", file=sys.stderr)
        return 2
    if not rows:
        print("manifest error: no usable rows", file=sys.stderr)
        return 2
    if args.batch_size < 1:
        print("config error: --batch-size must be >= 1", file=sys.stderr)
        return 2
    try:
        summary = build_dataset(
            rows, args.out, batch_size=args.batch_size, weights=args.weights, seed=args.weights_seed
        )
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    print(
        f"wrote {args.out}: {summary.n_samples} samples "
        f"({summary.n_fake} fake / {summary.n_true} true), "
        f"{summary.n_missing_image} without image, {summary.n_upscaled_images} upscaled"
    )
    return 0


def entry() -> None:
    sys.exit(main())
