"""Affinity construction: semantic feature Gram, sparse KNN color graph, fusion.

The semantic affinity is the thresholded Gram matrix of L2-normalized
feature vectors. The color affinity links each pixel to its k nearest
neighbors in a 6-D descriptor space combining hue (as a point on the unit
circle), saturation, value, and normalized position; edge weight is
1 - descriptor distance, clamped at zero. The fused graph is their
weighted sum on a shared grid.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .spectral import SparseMatrix
from .tensor_io import FeatureMap, rgb_to_hsv

DEFAULT_KNN_K = 20
GRAM_DROP_TOL = 1e-6
_GRAM_BLOCK_ROWS = 512


@dataclass
class AffinityMatrix:
    """Symmetric nonnegative affinity over the nodes of a rows x cols grid."""

    matrix: SparseMatrix
    rows: int
    cols: int

    def __post_init__(self):
        if self.matrix.n != self.rows * self.cols:
            raise ValueError(
                f"matrix order {self.matrix.n} does not match grid {self.rows}x{self.cols}"
            )

    @property
    def n(self) -> int:
        return self.matrix.n


def normalize_features(fm: FeatureMap) -> FeatureMap:
    """Scale each spatial location's channel vector to unit L2 norm.

    All-zero vectors pass through unchanged; downstream degree
    regularization absorbs them.
    """
    data = fm.data.astype(np.float64)
    norms = np.sqrt(np.sum(data * data, axis=0, keepdims=True))
    scaled = data / np.where(norms > 0, norms, 1.0)
    return FeatureMap(data=scaled.astype(np.float32), patch_size=fm.patch_size)


def _location_vectors(fm: FeatureMap) -> np.ndarray:
    # (n, C) with node order matching row-major grid order.
    return fm.data.reshape(fm.channels, -1).T.astype(np.float64)


def feature_affinity(fm: FeatureMap, drop_tol: float = GRAM_DROP_TOL) -> AffinityMatrix:
    """Gram matrix of location vectors with negative entries zeroed.

    Entries below ``drop_tol`` are not stored; at intermediate resolution
    this bounds memory without measurably moving the spectrum.
    """
    vecs = _location_vectors(fm)
    n = vecs.shape[0]
    rows_out, cols_out, vals_out = [], [], []
    for start in range(0, n, _GRAM_BLOCK_ROWS):
        stop = min(start + _GRAM_BLOCK_ROWS, n)
        block = vecs[start:stop] @ vecs.T
        r, c = np.nonzero(block >= drop_tol)
        rows_out.append(r + start)
        cols_out.append(c)
        vals_out.append(block[r, c])
    mat = SparseMatrix.from_coo(
        n,
        np.concatenate(rows_out) if rows_out else [],
        np.concatenate(cols_out) if cols_out else [],
        np.concatenate(vals_out) if vals_out else [],
        symmetric=True,
    )
    return AffinityMatrix(matrix=mat, rows=fm.height, cols=fm.width)


def pixel_descriptors(img: np.ndarray) -> np.ndarray:
    """6-D descriptor per pixel: (cos h, sin h, s, v, x/(W-1), y/(H-1)).

    Position is normalized to [0, 1] so color and spatial terms share scale;
    single-row or single-column images use 0 for the degenerate coordinate.
    """
    h, w = img.shape[:2]
    hsv = rgb_to_hsv(img.reshape(-1, 3))
    xs = np.tile(np.arange(w, dtype=np.float64), h)
    ys = np.repeat(np.arange(h, dtype=np.float64), w)
    px = xs / (w - 1) if w > 1 else np.zeros_like(xs)
    py = ys / (h - 1) if h > 1 else np.zeros_like(ys)
    return np.column_stack([np.cos(hsv[:, 0]), np.sin(hsv[:, 0]), hsv[:, 1], hsv[:, 2], px, py])


def knn_color_affinity(img: np.ndarray, k: int = DEFAULT_KNN_K) -> AffinityMatrix:
    """Sparse KNN graph over pixel descriptors with weights 1 - distance.

    Each pixel contributes directed edges to its k exact nearest neighbors
    (self excluded); weights are clamped at zero, zero-weight edges are
    dropped, and the result is symmetrized as (W + W') / 2.
    """
    h, w = img.shape[:2]
    n = h * w
    if not 1 <= k < n:
        raise ValueError(f"k must be in 1..{n - 1}, got {k}")
    desc = pixel_descriptors(img)
    dists, nbrs = cKDTree(desc).query(desc, k=k + 1)

    # Drop one self match per row; under duplicate descriptors the self index
    # may appear anywhere among the zero-distance ties (or not at all, in
    # which case the farthest neighbor is dropped instead).
    ids = np.arange(n)
    self_col = np.argmax(nbrs == ids[:, None], axis=1)
    has_self = nbrs[ids, self_col] == ids
    self_col = np.where(has_self, self_col, k)
    keep = np.ones((n, k + 1), dtype=bool)
    keep[ids, self_col] = False
    keep_d = dists[keep].reshape(n, k)
    keep_j = nbrs[keep].reshape(n, k)

    weights = np.maximum(0.0, 1.0 - keep_d).ravel()
    src = np.repeat(np.arange(n), k)
    dst = keep_j.ravel()
    pos = weights > 0
    src, dst, weights = src[pos], dst[pos], weights[pos]
    mat = SparseMatrix.from_coo(
        n,
        np.concatenate([src, dst]),
        np.concatenate([dst, src]),
        np.concatenate([weights, weights]) * 0.5,
        symmetric=True,
    )
    return AffinityMatrix(matrix=mat, rows=h, cols=w)


def fuse_affinities(w_feat: AffinityMatrix, w_knn: AffinityMatrix,
                    lambda_knn: float) -> AffinityMatrix:
    """W = W_feat + lambda_knn * W_knn on a shared grid."""
    if lambda_knn < 0:
        raise ValueError(f"lambda_knn must be >= 0, got {lambda_knn}")
    if (w_feat.rows, w_feat.cols) != (w_knn.rows, w_knn.cols):
        raise ValueError(
            f"grid mismatch: {w_feat.rows}x{w_feat.cols} vs {w_knn.rows}x{w_knn.cols}"
        )
    if lambda_knn == 0:
        return AffinityMatrix(matrix=w_feat.matrix, rows=w_feat.rows, cols=w_feat.cols)
    fused = w_feat.matrix.add(w_knn.matrix.scaled(lambda_knn))
    return AffinityMatrix(matrix=fused, rows=w_feat.rows, cols=w_feat.cols)
