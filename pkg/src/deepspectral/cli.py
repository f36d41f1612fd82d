"""Command-line entry point wiring all pipelines.

Subcommands: localize, segment, semseg, matte, eval-corloc, eval-miou,
convert-gt. Configuration comes from a TOML file overridden by flags; the
effective configuration is echoed into every report for provenance. Exit
codes: 0 success, 1 evaluation or convergence failure, 2 I/O error.
"""

import argparse
import dataclasses
import json
import sys
import xml.etree.ElementTree as ET
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import segment as seg
from . import semseg
from .localize import CORLOC_IOU_THRESHOLD, BoundingBox, iou as box_iou
from .matting import composite
from .pipeline import (PipelineConfig, check_features_match, image_seed, localize_image,
                       matte_image, prepare_image, segment_image, semantic_segments_image)
from .segment import CrfParams
from .spectral import ConvergenceError
from .tensor_io import (DsftError, FeatureMap, load_image, load_label_map, load_mask,
                        nearest_resize, read_feature_map, replicate_pad, save_image,
                        save_label_map, save_mask, save_matte, write_feature_map)

EXIT_OK = 0
EXIT_EVAL = 1
EXIT_IO = 2


class EvaluationFailure(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

_CONFIG_FLAGS = {
    "lambda_knn": float,
    "knn_k": int,
    "intermediate_divisor": int,
    "n_eigenvectors": int,
    "per_image_k": int,
    "dataset_k": int,
    "seed": int,
    "sample_rate": float,
    "descriptor_mode": str,
}


def build_config(args) -> PipelineConfig:
    values = {}
    crf_values = {}
    if getattr(args, "config", None):
        raw = tomllib.loads(Path(args.config).read_text())
        crf_values.update(raw.pop("crf", {}))
        for key, val in raw.items():
            if key not in _CONFIG_FLAGS:
                raise ValueError(f"unknown config key {key!r} in {args.config}")
            values[key] = _CONFIG_FLAGS[key](val)
    for key in _CONFIG_FLAGS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    crf = CrfParams(**crf_values) if crf_values else CrfParams()
    return PipelineConfig(crf=crf, **values)


def config_dict(config: PipelineConfig) -> dict:
    return dataclasses.asdict(config)


# ---------------------------------------------------------------------------
# Shared I/O helpers
# ---------------------------------------------------------------------------

def discover_images(images_dir) -> list:
    images_dir = Path(images_dir)
    if not images_dir.is_dir():
        raise FileNotFoundError(f"image directory not found: {images_dir}")
    stems = sorted(p.stem for p in images_dir.glob("*.png"))
    return stems


def feature_path(features_dir, image_id) -> Path:
    return Path(features_dir) / f"{image_id}.dsft"


def load_pair(images_dir, features_dir, image_id):
    fpath = feature_path(features_dir, image_id)
    if not fpath.exists():
        raise FileNotFoundError(f"feature file not found: {fpath}")
    fm = read_feature_map(fpath)
    img = load_image(Path(images_dir) / f"{image_id}.png")
    cropped = prepare_image(img, fm.patch_size)
    check_features_match(cropped, fm)
    return img, cropped, fm


def write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def run_parallel(jobs, fn, items):
    if jobs <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def make_eig_dump_writer(out_dir, image_id, divisor):
    def write(eig):
        rows, cols = eig.grid
        tensor = eig.eigenvectors.reshape(-1, rows, cols).astype(np.float32)
        write_feature_map(FeatureMap(tensor, divisor),
                          Path(out_dir) / f"{image_id}.eigs.dsft")
    return write


# ---------------------------------------------------------------------------
# localize
# ---------------------------------------------------------------------------

def load_gt_boxes(path) -> dict:
    raw = json.loads(Path(path).read_text())
    return {
        image_id: [BoundingBox(*[int(v) for v in box]) for box in boxes]
        for image_id, boxes in raw.items()
    }


def cmd_localize(args) -> int:
    config = build_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    image_ids = discover_images(args.images)

    skipped = []
    predictions = {}

    def process(image_id):
        try:
            _, cropped, fm = load_pair(args.images, args.features, image_id)
        except FileNotFoundError as exc:
            return image_id, None, str(exc)
        sink = make_eig_dump_writer(out_dir, image_id, config.intermediate_divisor) \
            if args.dump_eigs else None
        box = localize_image(cropped, fm, config, seed=image_seed(config.seed, image_id),
                             eig_sink=sink)
        return image_id, box, None

    for image_id, box, err in run_parallel(args.jobs, process, image_ids):
        if err is not None:
            print(f"warning: skipping {image_id}: {err}", file=sys.stderr)
            skipped.append(image_id)
        else:
            predictions[image_id] = box

    pred_path = out_dir / "predictions.jsonl"
    with open(pred_path, "w") as fh:
        for image_id in sorted(predictions):
            b = predictions[image_id]
            fh.write(json.dumps({"image_id": image_id, "x1": b.x1, "y1": b.y1,
                                 "x2": b.x2, "y2": b.y2}) + "\n")
    print(f"wrote {len(predictions)} predictions to {pred_path}")

    if args.gt:
        gt = load_gt_boxes(args.gt)
        report = corloc_report(predictions, gt, config)
        report["skipped"] = skipped
        report["inputs"] = {"images": str(args.images), "features": str(args.features),
                            "gt": str(args.gt)}
        write_json(out_dir / "corloc_report.json", report)
        print(f"CorLoc: {report['corloc']}")
    return EXIT_OK


def corloc_report(predictions: dict, gt: dict, config: PipelineConfig) -> dict:
    per_image = {}
    scored = []
    for image_id in sorted(predictions):
        boxes = gt.get(image_id)
        if not boxes:
            continue
        pred = predictions[image_id]
        best = max(box_iou(pred, b) for b in boxes)
        hit = best > CORLOC_IOU_THRESHOLD
        per_image[image_id] = {"iou": best, "hit": hit}
        scored.append(hit)
    score = (100.0 * sum(scored) / len(scored)) if scored else None
    return {
        "config": config_dict(config),
        "num_predictions": len(predictions),
        "num_scored": len(scored),
        "corloc": score,
        "per_image": per_image,
    }


def cmd_eval_corloc(args) -> int:
    predictions = {}
    with open(args.pred) as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                predictions[rec["image_id"]] = BoundingBox(
                    rec["x1"], rec["y1"], rec["x2"], rec["y2"])
    gt = load_gt_boxes(args.gt)
    report = corloc_report(predictions, gt, build_config(args))
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        write_json(Path(args.out) / "corloc_report.json", report)
    print(json.dumps({"corloc": report["corloc"], "num_scored": report["num_scored"]}))
    return EXIT_OK


# ---------------------------------------------------------------------------
# segment / matte
# ---------------------------------------------------------------------------

def cmd_segment(args) -> int:
    config = build_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    image_id = Path(args.image).stem
    images_dir = Path(args.image).parent
    img, cropped, fm = load_pair(images_dir, args.features, image_id)

    sink = make_eig_dump_writer(out_dir, image_id, config.intermediate_divisor) \
        if args.dump_eigs else None
    mask = segment_image(cropped, fm, config, seed=image_seed(config.seed, image_id),
                         eig_sink=sink)
    full = replicate_pad(mask, img.shape[0], img.shape[1])
    mask_path = out_dir / f"{image_id}.mask.png"
    save_mask(full, mask_path)
    print(f"wrote {mask_path}")

    if args.gt:
        gt = load_mask(args.gt)
        if gt.shape != full.shape:
            raise EvaluationFailure(
                f"ground-truth mask {gt.shape} does not match image {full.shape}")
        score = seg.miou(full.astype(np.int64), gt.astype(np.int64), num_classes=2)
        write_json(out_dir / f"{image_id}.segment_report.json",
                   {"config": config_dict(config), "image_id": image_id, "miou": score})
        print(f"mIoU: {score:.4f}")
    return EXIT_OK


def cmd_matte(args) -> int:
    config = build_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    image_id = Path(args.image).stem
    img, cropped, fm = load_pair(Path(args.image).parent, args.features, image_id)

    alpha = matte_image(cropped, fm, config, index=args.index,
                        seed=image_seed(config.seed, image_id))
    alpha = replicate_pad(alpha, img.shape[0], img.shape[1])
    matte_path = out_dir / f"{image_id}.matte.png"
    save_matte(alpha, matte_path)
    print(f"wrote {matte_path}")

    if args.bg:
        bg = load_image(args.bg)
        if bg.shape != img.shape:
            raise EvaluationFailure(f"background {bg.shape} does not match image {img.shape}")
        comp_path = out_dir / f"{image_id}.composite.png"
        save_image(composite(img, alpha, bg), comp_path)
        print(f"wrote {comp_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# semseg
# ---------------------------------------------------------------------------

def cmd_semseg(args) -> int:
    config = build_config(args)
    out_dir = Path(args.out)
    labels_dir = out_dir / "labels"
    labels_dir.mkdir(parents=True, exist_ok=True)
    image_ids = discover_images(args.images)
    if not image_ids:
        raise FileNotFoundError(f"no PNG images under {args.images}")

    def process(image_id):
        img, cropped, fm = load_pair(args.images, args.features, image_id)
        segmap = semantic_segments_image(cropped, fm, config,
                                         seed=image_seed(config.seed, image_id))
        if config.descriptor_mode == "external":
            sidecar = (Path(args.descriptors) / f"{image_id}.desc.dsft",
                       Path(args.descriptors) / f"{image_id}.desc.json")
            descs = semseg.segment_descriptor(segmap, mode="external",
                                              image_id=image_id, sidecar=sidecar)
        else:
            descs = semseg.segment_descriptor(segmap, fm, mode="mean-pool",
                                              image_id=image_id)
        return image_id, img.shape[:2], cropped.shape[:2], segmap, descs

    results = {r[0]: r[1:] for r in run_parallel(args.jobs, process, image_ids)}

    all_descs = []
    for image_id in sorted(results):
        all_descs.extend(results[image_id][3])
    semantic_ids = semseg.cluster_dataset(all_descs, k=config.dataset_k, seed=config.seed)

    by_image = {}
    for desc, sem in zip(all_descs, semantic_ids):
        by_image.setdefault(desc.image_id, {})[desc.segment_label] = int(sem)

    manifest = []
    pred_maps = {}
    for image_id in sorted(results):
        (orig_h, orig_w), (crop_h, crop_w), segmap, _ = results[image_id]
        semantic = semseg.apply_semantic_labels(segmap, by_image.get(image_id, {}))
        full = nearest_resize(semantic, crop_h, crop_w)
        full = replicate_pad(full, orig_h, orig_w)
        pred_maps[image_id] = full
        label_path = labels_dir / f"{image_id}.png"
        save_label_map(full, label_path)
        hist = {str(int(c)): int(n) for c, n in
                zip(*np.unique(full, return_counts=True))}
        manifest.append({"image_id": image_id, "label_png": str(label_path),
                         "class_histogram": hist})
    write_json(out_dir / "manifest.json", manifest)
    print(f"wrote {len(manifest)} pseudo-label maps under {labels_dir}")

    if args.gt_dir:
        num_classes = args.gt_classes if args.gt_classes else config.dataset_k + 1
        preds, gts = [], []
        for image_id in sorted(pred_maps):
            gt_path = Path(args.gt_dir) / f"{image_id}.png"
            if not gt_path.exists():
                print(f"warning: no ground truth for {image_id}", file=sys.stderr)
                continue
            preds.append(pred_maps[image_id])
            gts.append(load_label_map(gt_path))
        if not preds:
            raise EvaluationFailure("no images had ground-truth label maps")
        score = semseg.evaluate_semseg(preds, gts, num_classes,
                                       num_pred_ids=config.dataset_k + 1)
        write_json(out_dir / "semseg_report.json",
                   {"config": config_dict(config), "num_images": len(preds),
                    "matched_miou": score,
                    "inputs": {"images": str(args.images),
                               "features": str(args.features),
                               "gt_dir": str(args.gt_dir)}})
        print(f"matched mIoU: {score:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval-miou / convert-gt
# ---------------------------------------------------------------------------

def cmd_eval_miou(args) -> int:
    pred_dir, gt_dir = Path(args.pred_dir), Path(args.gt_dir)
    stems = sorted(p.stem for p in gt_dir.glob("*.png"))
    if not stems:
        raise FileNotFoundError(f"no ground-truth PNGs under {gt_dir}")
    inter = np.zeros(args.classes, dtype=np.int64)
    union = np.zeros(args.classes, dtype=np.int64)
    seen = np.zeros(args.classes, dtype=bool)
    for stem in stems:
        pred_path = pred_dir / f"{stem}.png"
        if not pred_path.exists():
            raise FileNotFoundError(f"missing prediction: {pred_path}")
        pred = load_label_map(pred_path)
        gt = load_label_map(gt_dir / f"{stem}.png")
        if pred.shape != gt.shape:
            raise EvaluationFailure(f"{stem}: prediction {pred.shape} vs gt {gt.shape}")
        valid = gt != args.ignore_label
        for c in range(args.classes):
            gt_c = (gt == c) & valid
            pred_c = (pred == c) & valid
            inter[c] += np.count_nonzero(gt_c & pred_c)
            union[c] += np.count_nonzero(gt_c | pred_c)
            seen[c] |= bool(gt_c.any())
    per_class = {str(c): (inter[c] / union[c]) for c in range(args.classes)
                 if seen[c] and union[c] > 0}
    if not per_class:
        raise EvaluationFailure("no scoreable classes present in ground truth")
    score = float(np.mean(list(per_class.values())))
    report = {"miou": score, "per_class": per_class, "num_images": len(stems)}
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        write_json(Path(args.out) / "miou_report.json", report)
    print(json.dumps({"miou": score}))
    return EXIT_OK


def cmd_convert_gt(args) -> int:
    xml_dir = Path(args.xml_dir)
    files = sorted(xml_dir.glob("*.xml"))
    if not files:
        raise FileNotFoundError(f"no XML annotations under {xml_dir}")
    out = {}
    for path in files:
        root = ET.parse(path).getroot()
        boxes = []
        for obj in root.iter("object"):
            bnd = obj.find("bndbox")
            if bnd is None:
                continue
            # 1-based inclusive corners to 0-based exclusive.
            xmin = int(float(bnd.findtext("xmin"))) - 1
            ymin = int(float(bnd.findtext("ymin"))) - 1
            xmax = int(float(bnd.findtext("xmax")))
            ymax = int(float(bnd.findtext("ymax")))
            boxes.append([xmin, ymin, xmax, ymax])
        out[path.stem] = boxes
    write_json(args.out_file, out)
    print(f"wrote {len(out)} annotations to {args.out_file}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _add_config_flags(p):
    p.add_argument("--lambda-knn", dest="lambda_knn", type=float, default=None,
                   help="weight of the color affinity in the fusion (default 10)")
    p.add_argument("--knn-k", dest="knn_k", type=int, default=None,
                   help="color-graph neighbor count (default 20)")
    p.add_argument("--eigs", dest="n_eigenvectors", type=int, default=None,
                   help="eigenvectors used for per-image clustering (default 15)")
    p.add_argument("--per-image-k", dest="per_image_k", type=int, default=None,
                   help="per-image k-means cluster count (default 15)")
    p.add_argument("--dataset-k", dest="dataset_k", type=int, default=None,
                   help="dataset-level cluster count (default 20)")
    p.add_argument("--divisor", dest="intermediate_divisor", type=int, default=None,
                   help="intermediate-resolution divisor (default 8)")
    p.add_argument("--sample-rate", dest="sample_rate", type=float, default=None,
                   help="feature Gram subsampling rate for matting (default 1/256)")
    p.add_argument("--descriptor-mode", dest="descriptor_mode",
                   choices=["mean-pool", "external"], default=None)
    p.add_argument("--seed", type=int, default=None, help="base PRNG seed (default 0)")
    p.add_argument("--config", default=None, help="TOML config file; flags override it")
    p.add_argument("--jobs", type=int, default=1, help="parallel image workers")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deepspectral",
        description="Spectral image decomposition from deep feature and color affinities",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("localize", help="predict one object box per image")
    p.add_argument("--images", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--gt", default=None, help="ground-truth boxes JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--dump-eigs", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("segment", help="foreground mask for a single image")
    p.add_argument("--image", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--gt", default=None, help="ground-truth mask PNG")
    p.add_argument("--out", required=True)
    p.add_argument("--dump-eigs", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("semseg", help="dataset-level pseudo-label maps")
    p.add_argument("--images", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--descriptors", default=None,
                   help="sidecar directory for external descriptor mode")
    p.add_argument("--gt-dir", default=None, help="ground-truth label PNG directory")
    p.add_argument("--gt-classes", type=int, default=None)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_semseg)

    p = sub.add_parser("matte", help="soft alpha matte for a single image")
    p.add_argument("--image", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--index", type=int, default=1, help="eigenvector index (>= 1)")
    p.add_argument("--bg", default=None, help="background image for compositing")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_matte)

    p = sub.add_parser("eval-corloc", help="score a predictions file against gt boxes")
    p.add_argument("--pred", required=True, help="predictions JSONL")
    p.add_argument("--gt", required=True)
    p.add_argument("--out", default=None)
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval_corloc)

    p = sub.add_parser("eval-miou", help="mean IoU between label map directories")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--ignore-label", type=int, default=255)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval_miou)

    p = sub.add_parser("convert-gt", help="detection annotation XML to gt boxes JSON")
    p.add_argument("--xml-dir", required=True)
    p.add_argument("--out-file", required=True)
    p.set_defaults(func=cmd_convert_gt)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DsftError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (EvaluationFailure, ConvergenceError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EVAL


if __name__ == "__main__":
    sys.exit(main())
