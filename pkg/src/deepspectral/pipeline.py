"""Shared orchestration: image + features -> fused affinity -> eigenvectors.

Images are cropped to a patch-size multiple (right/bottom edges dropped),
the color graph is built on the image downsampled to the intermediate
grid (dims / 8 by default), and the feature Gram is computed at that same
grid, bilinearly upsampling and renormalizing the features when the patch
grid is coarser.
"""

import zlib
from dataclasses import dataclass, field

import numpy as np

from .affinity import (AffinityMatrix, feature_affinity, fuse_affinities,
                       knn_color_affinity, normalize_features)
from .localize import BoundingBox, DegenerateSpectrumError, largest_connected_component, \
    mask_to_bbox, select_foreground, fiedler_bisect
from .segment import CrfParams, crf_refine
from .semseg import SegmentMap, per_image_segments
from .matting import DEFAULT_SAMPLE_RATE, build_fullres_affinity, soft_matte
from .spectral import EigenDecomposition, build_normalized_laplacian, smallest_eigenpairs
from .tensor_io import FeatureMap, bilinear_resize, crop_to_patch_multiple, resize_image


@dataclass
class PipelineConfig:
    """Knobs shared by every pipeline; mirrors the CLI flags."""

    lambda_knn: float = 10.0
    knn_k: int = 20
    intermediate_divisor: int = 8
    n_eigenvectors: int = 15
    per_image_k: int = 15
    dataset_k: int = 20
    seed: int = 0
    sample_rate: float = DEFAULT_SAMPLE_RATE
    descriptor_mode: str = "mean-pool"
    crf: CrfParams = field(default_factory=CrfParams)

    def __post_init__(self):
        for name in ("knn_k", "intermediate_divisor", "n_eigenvectors",
                     "per_image_k", "dataset_k"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lambda_knn < 0:
            raise ValueError(f"lambda_knn must be >= 0, got {self.lambda_knn}")


def image_seed(base_seed: int, image_id: str) -> int:
    """Stable per-image seed so dataset order cannot affect outputs."""
    return (base_seed + zlib.crc32(image_id.encode("utf-8"))) % (2**31)


def check_features_match(img: np.ndarray, fm: FeatureMap) -> None:
    h, w = img.shape[:2]
    expect = (h // fm.patch_size, w // fm.patch_size)
    if (fm.height, fm.width) != expect:
        raise ValueError(
            f"feature grid {fm.height}x{fm.width} does not match image {h}x{w} "
            f"at patch size {fm.patch_size} (expected {expect[0]}x{expect[1]})"
        )


def features_at_grid(fm: FeatureMap, rows: int, cols: int) -> FeatureMap:
    """Normalized features resampled onto the target grid (renormalized after)."""
    fm = normalize_features(fm)
    if (fm.height, fm.width) == (rows, cols):
        return fm
    data = bilinear_resize(fm.data.astype(np.float64), rows, cols)
    return normalize_features(FeatureMap(data.astype(np.float32), fm.patch_size))


def build_image_affinity(img: np.ndarray, fm: FeatureMap, config: PipelineConfig) -> AffinityMatrix:
    """Fused affinity at the intermediate resolution for one cropped image."""
    h, w = img.shape[:2]
    rows = max(1, h // config.intermediate_divisor)
    cols = max(1, w // config.intermediate_divisor)
    w_feat = feature_affinity(features_at_grid(fm, rows, cols))
    if config.lambda_knn == 0:
        return w_feat
    small = resize_image(img, rows, cols)
    w_knn = knn_color_affinity(small, k=min(config.knn_k, rows * cols - 1))
    return fuse_affinities(w_feat, w_knn, config.lambda_knn)


def decompose(affinity: AffinityMatrix, m: int, seed: int = 0,
              tol: float = 1e-8) -> EigenDecomposition:
    """Eigendecomposition of the normalized Laplacian, grid attached."""
    lap = build_normalized_laplacian(affinity)
    eig = smallest_eigenpairs(lap, min(m, lap.n), tol=tol, seed=seed)
    eig.grid = (affinity.rows, affinity.cols)
    return eig


def decompose_image(img: np.ndarray, fm: FeatureMap, config: PipelineConfig, m: int,
                    seed: int = 0) -> EigenDecomposition:
    return decompose(build_image_affinity(img, fm, config), m, seed=seed)


def _with_retry(affinity: AffinityMatrix, seed: int, m0: int, fn):
    """Run fn(eig), growing the eigenpair count when extra zero modes from
    disconnected graphs exhaust the requested spectrum."""
    m = min(m0, affinity.n)
    while True:
        eig = decompose(affinity, m, seed=seed)
        try:
            return fn(eig)
        except DegenerateSpectrumError:
            if m >= affinity.n:
                raise
            m = min(affinity.n, 2 * m + 4)


def localize_image(img: np.ndarray, fm: FeatureMap, config: PipelineConfig,
                   seed: int = 0, eig_sink=None) -> BoundingBox:
    """Predicted box for the cropped image, in pixel coordinates."""
    affinity = build_image_affinity(img, fm, config)

    def run(eig):
        if eig_sink is not None:
            eig_sink(eig)
        mask = select_foreground(fiedler_bisect(eig))
        box = mask_to_bbox(largest_connected_component(mask), config.intermediate_divisor)
        h, w = img.shape[:2]
        return BoundingBox(box.x1, box.y1, min(box.x2, w), min(box.y2, h))

    return _with_retry(affinity, seed, 6, run)


def segment_image(img: np.ndarray, fm: FeatureMap, config: PipelineConfig,
                  seed: int = 0, eig_sink=None) -> np.ndarray:
    """Foreground mask at the cropped image's full resolution."""
    affinity = build_image_affinity(img, fm, config)

    def run(eig):
        if eig_sink is not None:
            eig_sink(eig)
        coarse = select_foreground(fiedler_bisect(eig))
        return crf_refine(img, coarse, config.crf)

    return _with_retry(affinity, seed, 6, run)


def semantic_segments_image(img: np.ndarray, fm: FeatureMap, config: PipelineConfig,
                            seed: int = 0) -> SegmentMap:
    """Per-image discrete segments used by the dataset-level pipeline."""
    affinity = build_image_affinity(img, fm, config)
    k = min(config.per_image_k, affinity.n)

    def run(eig):
        return per_image_segments(eig, n_eig=config.n_eigenvectors, k=k, seed=seed)

    return _with_retry(affinity, seed, config.n_eigenvectors + 4, run)


def matte_image(img: np.ndarray, fm: FeatureMap, config: PipelineConfig, index: int,
                seed: int = 0) -> np.ndarray:
    """Soft alpha matte from eigenvector ``index`` at full resolution."""
    n = img.shape[0] * img.shape[1]
    affinity = build_fullres_affinity(
        img, fm, lambda_knn=config.lambda_knn, knn_k=min(config.knn_k, n - 1),
        sample_rate=config.sample_rate, seed=seed,
    )
    eig = decompose(affinity, min(index + 3, affinity.n), seed=seed)
    return soft_matte(eig, index)


def prepare_image(img: np.ndarray, patch_size: int) -> np.ndarray:
    return crop_to_patch_multiple(img, patch_size)
