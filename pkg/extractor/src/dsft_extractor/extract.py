"""Dense patch-feature and segment-crop extraction."""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
from PIL import Image

from .dsft import write_dsft
from .vit import PRESETS, build_model

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
CROP_EXPAND_PATCHES = 2


@dataclass
class ExtractorConfig:
    model: str = "vit-base-8"
    source: str = "keys"
    block: int = -1
    weights: Optional[str] = None
    seed: int = 0
    device: str = "cpu"
    pool: str = "mean"  # crop descriptor pooling: mean over patch tokens, or cls

    @property
    def patch_size(self) -> int:
        return PRESETS[self.model][3]


def load_rgb(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def crop_to_patch_multiple(img: np.ndarray, patch: int) -> np.ndarray:
    h, w = img.shape[:2]
    if h < patch or w < patch:
        raise ValueError(f"image {h}x{w} smaller than one {patch}px patch")
    return img[: (h // patch) * patch, : (w // patch) * patch]


def _to_tensor(img: np.ndarray, device) -> torch.Tensor:
    x = torch.from_numpy(img.astype(np.float32) / 255.0).permute(2, 0, 1)
    mean = torch.tensor(IMAGENET_MEAN).view(3, 1, 1)
    std = torch.tensor(IMAGENET_STD).view(3, 1, 1)
    return ((x - mean) / std).unsqueeze(0).to(device)


def extract(image_path, config: ExtractorConfig, model=None) -> Tuple[np.ndarray, int]:
    """Dense features of one image: (C, h, w) float32 plus the patch size.

    The image is cropped to a patch multiple (right/bottom edges dropped) and
    the global token is excluded from the spatial grid.
    """
    if model is None:
        model = build_model(config.model, config.weights, config.seed, config.device)
    patch = config.patch_size
    img = crop_to_patch_multiple(load_rgb(image_path), patch)
    h, w = img.shape[0] // patch, img.shape[1] // patch
    with torch.no_grad():
        tokens = model.tokens(_to_tensor(img, config.device), config.source, config.block)
    spatial = tokens[0, 1:]  # drop the global token
    data = spatial.T.reshape(-1, h, w).cpu().numpy().astype(np.float32)
    return data, patch


def extract_to_file(image_path, out_dir, config: ExtractorConfig, model=None) -> Path:
    data, patch = extract(image_path, config, model=model)
    out = Path(out_dir) / f"{Path(image_path).stem}.dsft"
    write_dsft(data, patch, out)
    return out


def _clamp_box(box, width, height, expand):
    x1, y1, x2, y2 = box
    x1 = max(0, int(x1) - expand)
    y1 = max(0, int(y1) - expand)
    x2 = min(width, int(x2) + expand)
    y2 = min(height, int(y2) + expand)
    return x1, y1, x2, y2


def extract_segment_crops(image_path, boxes: Sequence[Tuple[int, Sequence[int]]],
                          config: ExtractorConfig, model=None) -> Tuple[np.ndarray, List[dict]]:
    """One descriptor per (segment_label, box) pair from expanded crops.

    Each box is grown by two patches per side, clamped to the image, cropped,
    and run through the backbone; the descriptor pools the crop's tokens
    (mean over patch tokens by default, the global token with pool="cls").
    Returns the (num_segments, C) matrix and the JSON-ready index.
    """
    if model is None:
        model = build_model(config.model, config.weights, config.seed, config.device)
    patch = config.patch_size
    img = load_rgb(image_path)
    height, width = img.shape[:2]
    expand = CROP_EXPAND_PATCHES * patch
    image_id = Path(image_path).stem

    vectors = []
    index = []
    for row, (label, box) in enumerate(boxes):
        x1, y1, x2, y2 = _clamp_box(box, width, height, expand)
        crop = img[y1:y2, x1:x2]
        if crop.shape[0] < patch or crop.shape[1] < patch:
            raise ValueError(
                f"segment {label}: box {tuple(box)} has no patch-sized area after clamping")
        crop = crop_to_patch_multiple(crop, patch)
        with torch.no_grad():
            tokens = model.tokens(_to_tensor(crop, config.device), config.source,
                                  config.block)
        if config.pool == "cls":
            vec = tokens[0, 0]
        else:
            vec = tokens[0, 1:].mean(dim=0)
        vectors.append(vec.cpu().numpy().astype(np.float32))
        index.append({"image_id": image_id, "segment_label": int(label), "row": row})
    return np.stack(vectors), index


def crops_to_files(image_path, boxes, out_dir, config: ExtractorConfig, model=None):
    vectors, index = extract_segment_crops(image_path, boxes, config, model=model)
    stem = Path(image_path).stem
    dsft_path = Path(out_dir) / f"{stem}.desc.dsft"
    index_path = Path(out_dir) / f"{stem}.desc.json"
    write_dsft(vectors[:, :, None], config.patch_size, dsft_path)
    index_path.write_text(json.dumps(index, indent=2))
    return dsft_path, index_path
