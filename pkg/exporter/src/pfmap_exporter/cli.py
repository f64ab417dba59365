"""CLI: pfmap-export --in DIR --out DIR --size 1224x400 --patch 14 --model ID"""

from __future__ import annotations

import argparse
import logging
import sys

from .export import ExportJob, export


def parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"size must look like 1224x400: {text}") from e


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pfmap-export", description=__doc__)
    parser.add_argument("--in", dest="input_dir", required=True,
                        help="directory of input images")
    parser.add_argument("--out", dest="output_dir", required=True,
                        help="directory for PFMAP1 files")
    parser.add_argument("--size", type=parse_size, default=(1224, 400),
                        help="analysis size WxH (default 1224x400)")
    parser.add_argument("--patch", type=int, default=14,
                        help="patch size in pixels (default 14)")
    parser.add_argument("--model", default="dinov2-vitg14",
                        help="model identifier ('patchstats' or 'dinov2*')")
    parser.add_argument("--device", default="cpu")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    width, height = args.size
    job = ExportJob(args.input_dir, args.output_dir, width, height,
                    args.patch, args.model, args.device)
    try:
        count = export(job)
    except RuntimeError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(f"wrote {count} feature files to {args.output_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
