"""Command-line interface: synth, fit, label, eval, ablate, all.

Every parameter flows through one YAML config file; ``--set key=value``
applies dotted-path overrides on top. The default config path can come
from the ROADLABEL_CONFIG environment variable.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .config import SequenceConfig, load_config

CONFIG_ENV_VAR = "ROADLABEL_CONFIG"

logger = logging.getLogger(__name__)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=os.environ.get(CONFIG_ENV_VAR),
                        help=f"config YAML (default: ${CONFIG_ENV_VAR})")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="dotted-path config override")
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--output", required=True, help="output directory")
    parser.add_argument("--dump-debug", action="store_true")


def _resolve_config(args: argparse.Namespace) -> SequenceConfig:
    cfg = load_config(args.config) if args.config else SequenceConfig()
    for item in getattr(args, "overrides", []):
        if "=" not in item:
            raise ValueError(f"override '{item}' is not KEY=VALUE")
        key, value = item.split("=", 1)
        cfg.apply_override(key.strip(), value.strip())
    cfg.validate()
    return cfg


def _load_gt_masks(gt_dir: Path) -> dict:
    from . import ingest
    return {p.stem: ingest.load_mask_png(p) for p in sorted(gt_dir.glob("*.png"))}


def cmd_synth(args: argparse.Namespace) -> int:
    from .synth import SceneParams, write_sequence
    params = SceneParams(noise_seed=args.seed)
    ids = write_sequence(args.output, params, args.frames, args.seed,
                         frame_spacing=args.spacing)
    print(f"wrote {len(ids)} synthetic frames to {args.output}")
    return 0


def cmd_fit(args: argparse.Namespace) -> int:
    from . import ingest
    from .pipeline import _dump_debug, build_geometry_context
    cfg = _resolve_config(args)
    frames = ingest.load_sequence(args.input, cfg)
    if not frames:
        raise RuntimeError(f"no synchronized frames in {args.input}")
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    for frame in frames:
        ctx = build_geometry_context(frame, cfg)
        _dump_debug(ctx, out, frame.frame_id)
    print(f"trajectory dumps for {len(frames)} frames in {out / 'debug'}")
    return 0


def _load_frames(args: argparse.Namespace, cfg: SequenceConfig, sample: bool):
    from . import ingest
    frames = ingest.load_sequence(args.input, cfg)
    if sample:
        frames = ingest.sample_by_distance(frames, cfg.sample_spacing_m)
    if not frames:
        raise RuntimeError(f"no synchronized frames in {args.input}")
    return frames


def cmd_label(args: argparse.Namespace) -> int:
    from .pipeline import process_sequence
    cfg = _resolve_config(args)
    frames = _load_frames(args, cfg, sample=False)
    manifest = process_sequence(frames, cfg, args.output, input_dir=args.input,
                                workers=args.workers, dump_debug=args.dump_debug)
    ok = sum(1 for f in manifest.frames if f.status == "ok")
    print(f"labeled {ok}/{len(manifest.frames)} frames into {args.output}")
    return 0


def cmd_all(args: argparse.Namespace) -> int:
    from .pipeline import process_sequence
    cfg = _resolve_config(args)
    frames = _load_frames(args, cfg, sample=True)
    manifest = process_sequence(frames, cfg, args.output, input_dir=args.input,
                                workers=args.workers, dump_debug=args.dump_debug)
    ok = sum(1 for f in manifest.frames if f.status == "ok")
    print(f"processed {ok}/{len(manifest.frames)} sampled frames into {args.output}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    from . import ingest
    from .metrics import MetricsReport, format_table, reports_to_json
    gt = _load_gt_masks(Path(args.gt))
    report = MetricsReport("eval")
    pred_dir = Path(args.pred)
    matched = 0
    for fid, gt_mask in gt.items():
        pred_path = pred_dir / f"{fid}.png"
        if not pred_path.exists():
            logger.warning("no prediction for frame %s", fid)
            continue
        report.add(fid, ingest.load_mask_png(pred_path), gt_mask)
        matched += 1
    if matched == 0:
        raise RuntimeError(f"no prediction/ground-truth pairs between "
                           f"{args.pred} and {args.gt}")
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval.json").write_text(reports_to_json([report]))
    (out / "eval.txt").write_text(format_table([report]) + "\n")
    print(format_table([report]))
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    from .metrics import format_table, reports_to_json
    from .pipeline import run_ablation
    cfg = _resolve_config(args)
    frames = _load_frames(args, cfg, sample=False)
    gt = _load_gt_masks(Path(args.input) / "gt")
    if not gt:
        raise RuntimeError(f"no ground-truth masks in {Path(args.input) / 'gt'}")
    reports = run_ablation(frames, cfg, gt, workers=args.workers,
                           input_dir=args.input)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.json").write_text(reports_to_json(reports))
    (out / "ablation.txt").write_text(format_table(reports) + "\n")
    print(format_table(reports))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="roadlabel",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="emit a synthetic sequence")
    p.add_argument("--frames", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--spacing", type=float, default=2.0,
                   help="distance between frames, meters")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="trajectory debug dump")
    p.add_argument("--input", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("label", help="label images for every synchronized frame")
    p.add_argument("--input", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("eval", help="metrics of predicted masks vs ground truth")
    p.add_argument("--pred", required=True, help="directory of predicted mask PNGs")
    p.add_argument("--gt", required=True, help="directory of ground-truth mask PNGs")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="label-quality ablation table")
    p.add_argument("--input", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("all", help="ingest, sample, label, mask, manifest")
    p.add_argument("--input", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_all)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:  # one-line cause, nonzero exit
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
