"""CLI: batch feature extraction and per-segment crop descriptors."""

import argparse
import json
import sys
from pathlib import Path

from .extract import ExtractorConfig, crops_to_files, extract_to_file
from .vit import FEATURE_SOURCES, PRESETS, build_model


def _config_from(args) -> ExtractorConfig:
    return ExtractorConfig(model=args.model, source=args.source, block=args.block,
                           weights=args.weights, seed=args.seed, device=args.device,
                           pool=getattr(args, "pool", "mean"))


def cmd_extract(args) -> int:
    config = _config_from(args)
    if args.patch_size is not None and args.patch_size != config.patch_size:
        print(f"error: model {args.model} has patch size {config.patch_size}, "
              f"not {args.patch_size}", file=sys.stderr)
        return 2
    images = sorted(Path(args.images).glob("*.png"))
    if not images:
        print(f"error: no PNG images under {args.images}", file=sys.stderr)
        return 2
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = build_model(config.model, config.weights, config.seed, config.device)
    failures = 0
    for path in images:
        try:
            out = extract_to_file(path, out_dir, config, model=model)
            print(f"{path.stem}: wrote {out}")
        except (RuntimeError, MemoryError, ValueError) as exc:
            failures += 1
            print(f"error: {path.stem}: {exc}", file=sys.stderr)
    return 1 if failures else 0


def cmd_extract_crops(args) -> int:
    config = _config_from(args)
    boxes_raw = json.loads(Path(args.boxes).read_text())
    boxes = [(entry["segment_label"], entry["box"]) for entry in boxes_raw]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    dsft_path, index_path = crops_to_files(args.image, boxes, out_dir, config)
    print(f"wrote {dsft_path} and {index_path}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dsft-extract",
        description="Serialize dense ViT patch features into DSFT files")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_model_flags(p):
        p.add_argument("--model", default="vit-base-8", choices=sorted(PRESETS))
        p.add_argument("--patch-size", type=int, default=None,
                       help="sanity check against the model's patch size")
        p.add_argument("--source", default="keys", choices=FEATURE_SOURCES)
        p.add_argument("--block", type=int, default=-1,
                       help="transformer block index (-1 = last)")
        p.add_argument("--weights", default=None,
                       help="checkpoint path; omitted = seeded random init")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--device", default="cpu")

    p = sub.add_parser("extract", help="dense features for a directory of images")
    add_model_flags(p)
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("extract-crops", help="per-segment crop descriptors")
    add_model_flags(p)
    p.add_argument("--image", required=True)
    p.add_argument("--boxes", required=True,
                   help='JSON list of {"segment_label": int, "box": [x1,y1,x2,y2]}')
    p.add_argument("--pool", default="mean", choices=["mean", "cls"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract_crops)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
