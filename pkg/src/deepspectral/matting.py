"""Full-resolution spectral decomposition for soft mattes and compositing.

At full resolution the feature Gram matrix is too dense to materialize, so
its entries are subsampled: unordered pixel pairs are drawn uniformly at a
configurable rate (default 1/256) from a seeded generator, evaluated, and
stored symmetrically. The KNN color affinity is built at full resolution
and fused in with the usual lambda weight.
"""

import numpy as np

from .affinity import (AffinityMatrix, DEFAULT_KNN_K, GRAM_DROP_TOL, feature_affinity,
                       knn_color_affinity, normalize_features)
from .spectral import EigenDecomposition, SparseMatrix
from .tensor_io import FeatureMap, bilinear_resize

DEFAULT_SAMPLE_RATE = 1.0 / 256.0
MAX_FULLRES_NODES = 1_000_000
_PAIR_BATCH = 1 << 20


def _row_start(r, n):
    return r * n - r * (r + 1) // 2


def _pair_from_linear(t: np.ndarray, n: int):
    """Decode linear indices over the strictly-upper-triangular pair space.

    Pairs are ordered (0,1), (0,2), ..., (0,n-1), (1,2), ...; row r covers
    linear indices [r*n - r(r+1)/2, ...). The float inversion is followed
    by an integer fix-up so the decode stays exact for large n.
    """
    t = np.asarray(t, dtype=np.int64)
    disc = np.maximum((n - 0.5) ** 2 - 2.0 * t, 0.0)
    r = np.floor(n - 0.5 - np.sqrt(disc)).astype(np.int64)
    r = np.clip(r, 0, n - 2)
    while True:
        dec = _row_start(r, n) > t
        if not dec.any():
            break
        r[dec] -= 1
    while True:
        inc = (r < n - 2) & (_row_start(r + 1, n) <= t)
        if not inc.any():
            break
        r[inc] += 1
    c = t - _row_start(r, n) + r + 1
    return r, c


def _sample_pairs(n: int, rate: float, rng: np.random.Generator):
    """Uniform sample of unordered index pairs; the pair count is exactly
    binomial in the pair-space size, matching per-pair Bernoulli draws."""
    total = n * (n - 1) // 2
    target = int(rng.binomial(total, rate))
    if target == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    found = np.empty(0, dtype=np.int64)
    while found.size < target:
        need = target - found.size
        batch = rng.integers(0, total, size=min(_PAIR_BATCH, 2 * need + 16))
        found = np.unique(np.concatenate([found, batch]))
    if found.size > target:
        found = np.sort(rng.choice(found, size=target, replace=False))
    return _pair_from_linear(found, n)


def build_fullres_affinity(img: np.ndarray, fm: FeatureMap, lambda_knn: float,
                           knn_k: int = DEFAULT_KNN_K,
                           sample_rate: float = DEFAULT_SAMPLE_RATE, seed: int = 0,
                           max_nodes: int = MAX_FULLRES_NODES) -> AffinityMatrix:
    """Fused affinity on all M*N pixels with a subsampled feature Gram.

    With sample_rate=1 the feature part equals the dense construction on
    the bilinearly upsampled features. The diagonal is always stored, and
    every sampled entry is stored symmetrically so the result is a valid
    Laplacian input. Bit-identical for a fixed seed.
    """
    if not 0.0 < sample_rate <= 1.0:
        raise ValueError(f"sample_rate must be in (0, 1], got {sample_rate}")
    h, w = img.shape[:2]
    n = h * w
    if n > max_nodes:
        raise ValueError(
            f"full-resolution graph has {n} nodes, above the {max_nodes} guard; "
            "downscale the image or raise max_nodes explicitly"
        )

    feats = normalize_features(
        FeatureMap(
            bilinear_resize(fm.data.astype(np.float64), h, w).astype(np.float32),
            fm.patch_size,
        )
    )
    if sample_rate == 1.0:
        w_feat = feature_affinity(feats)
    else:
        vecs = feats.data.astype(np.float64).reshape(feats.channels, -1).T
        rng = np.random.default_rng(seed)
        rows, cols = _sample_pairs(n, sample_rate, rng)
        vals = np.einsum("ij,ij->i", vecs[rows], vecs[cols])
        keep = vals >= GRAM_DROP_TOL
        rows, cols, vals = rows[keep], cols[keep], vals[keep]
        diag = np.einsum("ij,ij->i", vecs, vecs)
        diag_idx = np.arange(n)
        keep_d = diag >= GRAM_DROP_TOL
        mat = SparseMatrix.from_coo(
            n,
            np.concatenate([rows, cols, diag_idx[keep_d]]),
            np.concatenate([cols, rows, diag_idx[keep_d]]),
            np.concatenate([vals, vals, diag[keep_d]]),
            symmetric=True,
        )
        w_feat = AffinityMatrix(matrix=mat, rows=h, cols=w)

    if lambda_knn == 0:
        return w_feat
    w_knn = knn_color_affinity(img, k=knn_k)
    fused = w_feat.matrix.add(w_knn.matrix.scaled(lambda_knn))
    return AffinityMatrix(matrix=fused, rows=h, cols=w)


def soft_matte(eig: EigenDecomposition, index: int) -> np.ndarray:
    """Eigenvector ``index`` rescaled affinely onto [0, 1] as an alpha map."""
    if index < 1:
        raise ValueError(f"matte index must be >= 1 (0 is the constant mode), got {index}")
    if eig.grid is None:
        raise ValueError("decomposition has no grid shape attached")
    if index >= eig.eigenvectors.shape[0]:
        raise ValueError(
            f"matte index {index} out of range; decomposition holds "
            f"{eig.eigenvectors.shape[0]} eigenvectors")
    y = eig.eigenvectors[index]
    lo, hi = float(y.min()), float(y.max())
    if hi - lo < 1e-12:
        raise ValueError(f"eigenvector {index} is constant; no matte contrast available")
    return ((y - lo) / (hi - lo)).reshape(eig.grid)


def composite(fg: np.ndarray, matte: np.ndarray, bg: np.ndarray) -> np.ndarray:
    """Alpha-blend fg over bg: out = a*fg + (1-a)*bg, rounded to uint8."""
    if fg.shape != bg.shape or fg.shape[:2] != matte.shape:
        raise ValueError(
            f"dimension mismatch: fg {fg.shape}, bg {bg.shape}, matte {matte.shape}"
        )
    alpha = np.clip(np.asarray(matte, dtype=np.float64), 0.0, 1.0)[..., None]
    out = alpha * fg.astype(np.float64) + (1.0 - alpha) * bg.astype(np.float64)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)
