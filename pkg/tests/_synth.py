"""Synthetic planted instances shared by unit, CLI, and acceptance tests."""

import numpy as np

from deepspectral.affinity import AffinityMatrix
from deepspectral.localize import BoundingBox
from deepspectral.spectral import SparseMatrix
from deepspectral.tensor_io import FeatureMap, save_image, save_label_map, write_feature_map


def complete_graph_coo(node_ids, weight):
    node_ids = np.asarray(node_ids, dtype=np.int64)
    i, j = np.triu_indices(node_ids.size, k=1)
    rows = np.concatenate([node_ids[i], node_ids[j]])
    cols = np.concatenate([node_ids[j], node_ids[i]])
    vals = np.full(rows.size, float(weight))
    return rows, cols, vals


def planted_affinity_from_labels(label_grid, rng, intra=1.0, bridge_max=0.01,
                                 bridges_per_pair=2):
    """Complete graph within each labeled region, weak bridges between regions."""
    labels = np.asarray(label_grid)
    rows, cols = labels.shape
    n = rows * cols
    flat = labels.ravel()
    coo_r, coo_c, coo_v = [], [], []
    values = np.unique(flat)
    for v in values:
        r, c, w = complete_graph_coo(np.flatnonzero(flat == v), intra)
        coo_r.append(r)
        coo_c.append(c)
        coo_v.append(w)
    for a in values:
        for b in values:
            if a >= b:
                continue
            ia = rng.choice(np.flatnonzero(flat == a), size=bridges_per_pair)
            ib = rng.choice(np.flatnonzero(flat == b), size=bridges_per_pair)
            bw = rng.uniform(bridge_max / 2, bridge_max, size=bridges_per_pair)
            coo_r += [ia, ib]
            coo_c += [ib, ia]
            coo_v += [bw, bw]
    mat = SparseMatrix.from_coo(n, np.concatenate(coo_r), np.concatenate(coo_c),
                                np.concatenate(coo_v), symmetric=True)
    return AffinityMatrix(matrix=mat, rows=rows, cols=cols)


def planted_two_block_affinity(rows, cols, rect, rng, intra=1.0, bridge_max=0.01,
                               n_bridges=None):
    """Two complete blocks (a rectangle of grid cells vs the rest) joined by a
    few weak bridge edges. Returns (affinity, minority_mask, grid_box)."""
    r0, c0, r1, c1 = rect
    n = rows * cols
    grid = np.arange(n).reshape(rows, cols)
    block = grid[r0:r1, c0:c1].ravel()
    rest = np.setdiff1d(np.arange(n), block)
    assert 0 < block.size < rest.size, "planted block must be the strict minority"

    coo_r, coo_c, coo_v = [], [], []
    for ids in (block, rest):
        r, c, v = complete_graph_coo(ids, intra)
        coo_r.append(r)
        coo_c.append(c)
        coo_v.append(v)

    if n_bridges is None:
        n_bridges = max(1, n // 32)
    bu = rng.choice(block, size=n_bridges, replace=True)
    bv = rng.choice(rest, size=n_bridges, replace=True)
    bw = rng.uniform(bridge_max / 2, bridge_max, size=n_bridges)
    coo_r += [bu, bv]
    coo_c += [bv, bu]
    coo_v += [bw, bw]

    mat = SparseMatrix.from_coo(n, np.concatenate(coo_r), np.concatenate(coo_c),
                                np.concatenate(coo_v), symmetric=True)
    mask = np.zeros((rows, cols), dtype=bool)
    mask[r0:r1, c0:c1] = True
    return AffinityMatrix(matrix=mat, rows=rows, cols=cols), mask, BoundingBox(c0, r0, c1, r1)


def class_prototypes(n_classes, channels, mixing=0.05):
    """Near-orthogonal positive unit vectors; the shared component keeps all
    pairwise affinities slightly positive so planted graphs stay connected."""
    protos = np.zeros((n_classes, channels))
    common = np.ones(channels) / np.sqrt(channels)
    for c in range(n_classes):
        v = np.zeros(channels)
        v[c] = 1.0
        v = v + mixing * common
        protos[c] = v / np.linalg.norm(v)
    return protos


def planted_feature_map(label_grid, channels=6, patch_size=8, mixing=0.05,
                        jitter=1e-3, seed=0):
    """Feature map whose per-cell vectors follow the planted label grid."""
    rng = np.random.default_rng(seed)
    labels = np.asarray(label_grid)
    protos = class_prototypes(int(labels.max()) + 1, channels, mixing)
    data = protos[labels].astype(np.float64)
    data = data + jitter * rng.standard_normal(data.shape)
    data = np.moveaxis(data, -1, 0)
    norms = np.linalg.norm(data, axis=0, keepdims=True)
    return FeatureMap((data / norms).astype(np.float32), patch_size)


_CLASS_COLORS = np.array([
    [40, 40, 40],
    [200, 40, 40],
    [40, 200, 40],
    [40, 40, 200],
    [200, 200, 40],
], dtype=np.uint8)


def planted_image(label_grid, patch_size=8):
    """RGB image whose colors follow the planted label grid, patch-aligned."""
    labels = np.asarray(label_grid)
    return np.repeat(np.repeat(_CLASS_COLORS[labels], patch_size, axis=0),
                     patch_size, axis=1)


def single_object_grid(rows, cols, rect):
    labels = np.zeros((rows, cols), dtype=np.int64)
    r0, c0, r1, c1 = rect
    labels[r0:r1, c0:c1] = 1
    return labels


def write_localization_dataset(root, rects, grid=(8, 8), patch_size=8, seed=0):
    """Synthetic images + features + gt boxes for the localize CLI."""
    images_dir = root / "images"
    features_dir = root / "features"
    images_dir.mkdir(parents=True, exist_ok=True)
    features_dir.mkdir(parents=True, exist_ok=True)
    gt = {}
    for i, rect in enumerate(rects):
        image_id = f"img{i:03d}"
        labels = single_object_grid(grid[0], grid[1], rect)
        save_image(planted_image(labels, patch_size), images_dir / f"{image_id}.png")
        fm = planted_feature_map(labels, patch_size=patch_size, seed=seed + i)
        write_feature_map(fm, features_dir / f"{image_id}.dsft")
        r0, c0, r1, c1 = rect
        gt[image_id] = [[c0 * patch_size, r0 * patch_size, c1 * patch_size, r1 * patch_size]]
    return images_dir, features_dir, gt


def two_object_grid(rows, cols, rect_a, class_a, rect_b, class_b):
    labels = np.zeros((rows, cols), dtype=np.int64)
    for rect, cls in ((rect_a, class_a), (rect_b, class_b)):
        r0, c0, r1, c1 = rect
        labels[r0:r1, c0:c1] = cls
    return labels


def write_semseg_dataset(root, n_images=10, n_classes=3, grid=(8, 8), patch_size=8,
                         seed=0):
    """Synthetic multi-class dataset: images, features, and gt label maps."""
    images_dir = root / "images"
    features_dir = root / "features"
    gt_dir = root / "gt"
    for d in (images_dir, features_dir, gt_dir):
        d.mkdir(parents=True, exist_ok=True)
    rows, cols = grid
    rects = [(1, 1, 3, 3), (5, 4, 7, 7)]
    for i in range(n_images):
        image_id = f"img{i:03d}"
        cls_a = 1 + (i % n_classes)
        cls_b = 1 + ((i + 1) % n_classes)
        labels = two_object_grid(rows, cols, rects[0], cls_a, rects[1], cls_b)
        save_image(planted_image(labels, patch_size), images_dir / f"{image_id}.png")
        fm = planted_feature_map(labels, channels=8, patch_size=patch_size, seed=seed + i)
        write_feature_map(fm, features_dir / f"{image_id}.dsft")
        full = np.repeat(np.repeat(labels, patch_size, axis=0), patch_size, axis=1)
        save_label_map(full, gt_dir / f"{image_id}.png")
    return images_dir, features_dir, gt_dir
