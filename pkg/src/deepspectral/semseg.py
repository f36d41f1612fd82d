"""Dataset-level semantic segmentation from per-image eigenvector clusters.

Per image: cells embedded by their smallest nonzero eigenvectors are
k-means clustered into segments and the largest segment is designated
background. Per dataset: one descriptor per non-background segment is
clustered with K-means, giving each segment a semantic id shared across
images. Evaluation matches predicted ids to ground-truth classes with the
Hungarian algorithm (background pinned to background) and reports mean IoU
over the matched classes.
"""

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .localize import DegenerateSpectrumError
from .spectral import EigenDecomposition
from .tensor_io import FeatureMap, bilinear_resize, read_feature_map

DEFAULT_EIGENVECTORS = 15
DEFAULT_PER_IMAGE_K = 15
DEFAULT_DATASET_K = 20
_ZERO_EIGENVALUE_TOL = 1e-6
_TIE_TOL = 1e-9


# ---------------------------------------------------------------------------
# K-means
# ---------------------------------------------------------------------------

@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray
    seed: int
    inertia: float
    labels: np.ndarray = field(repr=False)

    def assign(self, points: np.ndarray) -> np.ndarray:
        return np.argmin(_sq_dists(np.asarray(points, dtype=np.float64), self.centroids), axis=1)


def _sq_dists(points, centroids):
    d2 = (
        np.sum(points * points, axis=1)[:, None]
        - 2.0 * points @ centroids.T
        + np.sum(centroids * centroids, axis=1)[None, :]
    )
    return np.maximum(d2, 0.0)


def _kmeans_pp_init(points, k, rng):
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[rng.integers(n)]
    closest = _sq_dists(points, centroids[:1]).ravel()
    for i in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = rng.choice(n, p=closest / total)
        else:
            idx = rng.integers(n)
        centroids[i] = points[idx]
        closest = np.minimum(closest, _sq_dists(points, centroids[i : i + 1]).ravel())
    return centroids


def _lloyd(points, centroids, max_iter):
    k = centroids.shape[0]
    labels = np.argmin(_sq_dists(points, centroids), axis=1)
    for _ in range(max_iter):
        for c in range(k):
            members = labels == c
            if members.any():
                centroids[c] = points[members].mean(axis=0)
        d2 = _sq_dists(points, centroids)
        new_labels = np.argmin(d2, axis=1)
        # Re-seed empty clusters from the points farthest from their centroid.
        empties = np.flatnonzero(np.bincount(new_labels, minlength=k) == 0)
        if empties.size:
            assigned = d2[np.arange(points.shape[0]), new_labels]
            farthest = np.argsort(-assigned, kind="stable")
            for c, idx in zip(empties, farthest):
                centroids[c] = points[idx]
            new_labels = np.argmin(_sq_dists(points, centroids), axis=1)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    for c in range(k):
        members = labels == c
        if members.any():
            centroids[c] = points[members].mean(axis=0)
    inertia = float(np.sum(_sq_dists(points, centroids)[np.arange(points.shape[0]), labels]))
    return centroids, labels, inertia


def kmeans(points: np.ndarray, k: int, seed: int, n_restarts: int = 20,
           max_iter: int = 300) -> ClusterModel:
    """K-means with k-means++ seeding and Lloyd iterations to a fixed point.

    Runs ``n_restarts`` independent seeded initializations and keeps the
    lowest-inertia result, which makes the small-instance optimum reliable.
    Fully deterministic for a fixed seed.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError(f"points must be 2-D, got shape {points.shape}")
    if not 1 <= k <= points.shape[0]:
        raise ValueError(f"k must be in 1..{points.shape[0]}, got {k}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_restarts):
        centroids = _kmeans_pp_init(points, k, rng)
        centroids, labels, inertia = _lloyd(points, centroids, max_iter)
        if best is None or inertia < best[2] - _TIE_TOL:
            best = (centroids, labels, inertia)
    centroids, labels, inertia = best
    return ClusterModel(k=k, centroids=centroids, seed=seed, inertia=inertia, labels=labels)


# ---------------------------------------------------------------------------
# Per-image segments and descriptors
# ---------------------------------------------------------------------------

@dataclass
class SegmentMap:
    """Integer label grid with contiguous ids 0..max and a background id."""

    labels: np.ndarray
    background_label: int

    @property
    def rows(self) -> int:
        return self.labels.shape[0]

    @property
    def cols(self) -> int:
        return self.labels.shape[1]

    def segment_ids(self) -> np.ndarray:
        return np.unique(self.labels)


@dataclass
class SegmentDescriptor:
    image_id: str
    segment_label: int
    vector: np.ndarray
    pixel_count: int


def per_image_segments(eig: EigenDecomposition, n_eig: int = DEFAULT_EIGENVECTORS,
                       k: int = DEFAULT_PER_IMAGE_K, seed: int = 0) -> SegmentMap:
    """Cluster grid cells by their eigenvector coordinates into k segments.

    Cells are embedded with the first ``n_eig`` eigenvectors of nonzero
    eigenvalue (fewer if the decomposition has fewer); the raw coordinates
    are used without whitening. The largest resulting segment becomes the
    background region.
    """
    if eig.grid is None:
        raise ValueError("decomposition has no grid shape attached")
    usable = [i for i, lam in enumerate(eig.eigenvalues) if lam > _ZERO_EIGENVALUE_TOL]
    if len(usable) < 2:
        raise DegenerateSpectrumError(
            f"need at least 2 eigenvectors with nonzero eigenvalue, found {len(usable)}"
        )
    embedding = eig.eigenvectors[usable[:n_eig]].T
    model = kmeans(embedding, k, seed)
    raw = model.labels.reshape(eig.grid)

    # Relabel contiguously in order of first row-major appearance.
    first_seen, inverse = np.unique(raw.ravel(), return_inverse=True)
    order = np.argsort([int(np.argmax(raw.ravel() == v)) for v in first_seen], kind="stable")
    remap = np.empty(first_seen.size, dtype=np.int32)
    remap[order] = np.arange(first_seen.size, dtype=np.int32)
    labels = remap[inverse].reshape(raw.shape)
    background = int(np.argmax(np.bincount(labels.ravel())))
    return SegmentMap(labels=labels, background_label=background)


def _features_on_grid(fm: FeatureMap, rows: int, cols: int) -> np.ndarray:
    data = fm.data.astype(np.float64)
    if (fm.height, fm.width) != (rows, cols):
        data = bilinear_resize(data, rows, cols)
    norms = np.sqrt(np.sum(data * data, axis=0, keepdims=True))
    return data / np.where(norms > 0, norms, 1.0)


def segment_descriptor(segmap: SegmentMap, fm: Optional[FeatureMap] = None,
                       mode: str = "mean-pool", image_id: str = "",
                       sidecar: Optional[Tuple] = None) -> List[SegmentDescriptor]:
    """One feature vector per non-background segment.

    mode "mean-pool" averages the (unit-normalized) feature vectors over the
    segment's cells, resampling the feature grid onto the segment grid when
    they differ. mode "external" loads descriptors computed by the crop
    extractor from a DSFT sidecar plus its JSON index (see
    ``read_descriptor_sidecar``).
    """
    if mode == "external":
        if sidecar is None:
            raise ValueError("external mode requires a (dsft_path, index_path) sidecar")
        table = read_descriptor_sidecar(*sidecar)
        counts = np.bincount(segmap.labels.ravel())
        out = []
        for label in segmap.segment_ids():
            if label == segmap.background_label:
                continue
            key = (image_id, int(label))
            if key not in table:
                raise KeyError(f"sidecar holds no descriptor for image={image_id!r} segment={label}")
            out.append(SegmentDescriptor(image_id, int(label), table[key], int(counts[label])))
        return out
    if mode != "mean-pool":
        raise ValueError(f"unknown descriptor mode {mode!r}")
    if fm is None:
        raise ValueError("mean-pool mode requires a feature map")

    feats = _features_on_grid(fm, segmap.rows, segmap.cols)
    flat = feats.reshape(feats.shape[0], -1)
    labels = segmap.labels.ravel()
    out = []
    for label in segmap.segment_ids():
        if label == segmap.background_label:
            continue
        members = labels == label
        out.append(
            SegmentDescriptor(
                image_id=image_id,
                segment_label=int(label),
                vector=flat[:, members].mean(axis=1),
                pixel_count=int(members.sum()),
            )
        )
    return out


def read_descriptor_sidecar(dsft_path, index_path) -> Dict[Tuple[str, int], np.ndarray]:
    """Load crop descriptors: DSFT of shape (num_segments, C, 1) + JSON index.

    The index is a list of {"image_id", "segment_label", "row"} entries
    mapping each (image, segment) pair to a row of the tensor.
    """
    fm = read_feature_map(dsft_path)
    vectors = fm.data[:, :, 0].astype(np.float64)
    entries = json.loads(open(index_path).read())
    table = {}
    for e in entries:
        table[(e["image_id"], int(e["segment_label"]))] = vectors[int(e["row"])]
    return table


def cluster_dataset(descs: Sequence[SegmentDescriptor], k: int = DEFAULT_DATASET_K,
                    seed: int = 0) -> np.ndarray:
    """Cluster all segment descriptors; returns semantic ids 1..k per descriptor.

    Id 0 is reserved for background cells and never produced here.
    """
    if len(descs) < k:
        raise ValueError(f"need at least k={k} descriptors, got {len(descs)}")
    vectors = np.stack([d.vector for d in descs])
    model = kmeans(vectors, k, seed)
    return model.labels.astype(np.int32) + 1


def apply_semantic_labels(segmap: SegmentMap, semantic_for_segment: Dict[int, int]) -> np.ndarray:
    """Map per-image segment labels onto dataset-level semantic ids.

    Background cells get id 0. Adjacent segments that received the same
    semantic id merge implicitly in the returned grid.
    """
    out = np.zeros_like(segmap.labels, dtype=np.int32)
    for label in segmap.segment_ids():
        if label == segmap.background_label:
            continue
        out[segmap.labels == label] = semantic_for_segment[int(label)]
    return out


# ---------------------------------------------------------------------------
# Hungarian matching and matched evaluation
# ---------------------------------------------------------------------------

def _solve_assignment(cost: np.ndarray) -> Tuple[np.ndarray, float]:
    """Minimum-cost perfect matching via shortest augmenting paths, O(n^3)."""
    n = cost.shape[0]
    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=np.int64)  # column -> row, 1-based, 0 = free
    for i in range(1, n + 1):
        links = np.zeros(n + 1, dtype=np.int64)
        mins = np.full(n + 1, inf)
        visited = np.zeros(n + 1, dtype=bool)
        j0 = 0
        match[0] = i
        while True:
            visited[j0] = True
            i0 = match[j0]
            delta = inf
            j1 = -1
            for j in range(1, n + 1):
                if visited[j]:
                    continue
                cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < mins[j]:
                    mins[j] = cur
                    links[j] = j0
                if mins[j] < delta:
                    delta = mins[j]
                    j1 = j
            for j in range(n + 1):
                if visited[j]:
                    u[match[j]] += delta
                    v[j] -= delta
                else:
                    mins[j] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = links[j0]
            match[j0] = match[j1]
            j0 = j1
    row_to_col = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        row_to_col[match[j] - 1] = j - 1
    total = float(cost[np.arange(n), row_to_col].sum())
    return row_to_col, total


def hungarian(cost: np.ndarray) -> List[Tuple[int, int]]:
    """Minimum-total-cost assignment on a square matrix.

    Among cost-equal optima (up to a 1e-9 tolerance on the total) the
    lexicographically smallest assignment is returned, fixed row by row.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost matrix must be square, got shape {cost.shape}")
    if cost.size and not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix contains non-finite entries")
    n = cost.shape[0]
    if n == 0:
        return []
    _, optimum = _solve_assignment(cost)
    tol = _TIE_TOL * (1.0 + abs(optimum))

    fixed_cols: List[int] = []
    free_cols = list(range(n))
    for row in range(n):
        for candidate in free_cols:
            prefix = sum(cost[r, c] for r, c in enumerate(fixed_cols)) + cost[row, candidate]
            rest_cols = [c for c in free_cols if c != candidate]
            if rest_cols:
                sub = cost[np.ix_(range(row + 1, n), rest_cols)]
                _, sub_total = _solve_assignment(sub)
            else:
                sub_total = 0.0
            if prefix + sub_total <= optimum + tol:
                fixed_cols.append(candidate)
                free_cols.remove(candidate)
                break
        else:
            raise RuntimeError("assignment refinement failed to extend a partial optimum")
    return [(r, c) for r, c in enumerate(fixed_cols)]


def _confusion(preds, gts, num_pred_ids, num_classes):
    inter = np.zeros((num_pred_ids, num_classes), dtype=np.int64)
    for pred, gt in zip(preds, gts):
        pred = np.asarray(pred).ravel()
        gt = np.asarray(gt).ravel()
        if pred.shape != gt.shape:
            raise ValueError("prediction/ground-truth shape mismatch")
        joint = np.bincount(pred * num_classes + gt, minlength=num_pred_ids * num_classes)
        inter += joint.reshape(num_pred_ids, num_classes)
    return inter


def _mean_iou_from_confusion(inter):
    pred_tot = inter.sum(axis=1)
    gt_tot = inter.sum(axis=0)
    n = inter.shape[0]
    ious = []
    for c in range(n):
        union = pred_tot[c] + gt_tot[c] - inter[c, c]
        if union > 0:
            ious.append(inter[c, c] / union)
    return float(np.mean(ious)) if ious else 0.0


def evaluate_semseg(preds: Sequence[np.ndarray], gts: Sequence[np.ndarray],
                    num_classes: int, num_pred_ids: Optional[int] = None) -> float:
    """Matched mean IoU between predicted cluster ids and ground-truth classes.

    Background (id 0) is pinned to background; object ids are matched to
    object classes by Hungarian assignment on negated IoU. When the
    prediction uses more ids than there are classes (over-clustering), a
    greedy many-to-one mapping by best IoU is used instead. Classes absent
    from both prediction and ground truth are excluded from the mean.
    """
    if len(preds) != len(gts):
        raise ValueError(f"got {len(preds)} predictions for {len(gts)} ground-truth maps")
    if num_pred_ids is None:
        num_pred_ids = num_classes
    inter = _confusion(preds, gts, num_pred_ids, num_classes)
    pred_tot = inter.sum(axis=1)
    gt_tot = inter.sum(axis=0)
    union = pred_tot[:, None] + gt_tot[None, :] - inter
    with np.errstate(invalid="ignore"):
        iou_matrix = np.where(union > 0, inter / np.maximum(union, 1), 0.0)

    mapping = np.zeros(num_pred_ids, dtype=np.int64)
    if num_pred_ids > num_classes:
        mapping[1:] = np.argmax(iou_matrix[1:], axis=1)
    else:
        pairs = hungarian(-iou_matrix[1:, 1:])
        for p, g in pairs:
            mapping[p + 1] = g + 1

    merged = np.zeros((num_classes, num_classes), dtype=np.int64)
    for p in range(num_pred_ids):
        merged[mapping[p]] += inter[p]
    return _mean_iou_from_confusion(merged)
